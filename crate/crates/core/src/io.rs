//! Run outputs: CSV tables, binary checkpoints and the run manifest.
//!
//! All floats in CSV files are written with 17 significant digits, which is
//! enough to read every `f64` back bit-exactly. Checkpoints use the `PFSI1`
//! layout described on [`write_checkpoint`].

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::render_config;
use crate::diagnostics::{contact_tolerance, DiagnosticsRecord};
use crate::driver::{Checkpoint, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{BeamState, FluidState, GridSpec};
use crate::lemmas::{LemmaReport, LemmaTrial};

/// Environment variable that overrides the output root.
pub const OUTPUT_DIR_ENV: &str = "PFSI_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PFSI1";
const FLAG_FLUID: u8 = 1;

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, msg: String) -> Error {
    Error::Io { path: path.to_path_buf(), source: io::Error::new(io::ErrorKind::InvalidData, msg) }
}

#[inline]
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let mut first = true;
    for c in cells {
        if !first {
            out.push(',');
        }
        out.push_str(&c);
        first = false;
    }
    out.push('\n');
}

/// Diagnostics table: a header row, then one row per record.
pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::new();
    push_row(&mut out, DiagnosticsRecord::COLUMNS.iter().map(|c| c.to_string()));
    for r in records {
        push_row(&mut out, r.values().iter().map(|v| num(*v)));
    }
    out
}

/// Reads a table written by [`diagnostics_csv`]. Columns are matched by name,
/// so reordered files are accepted; a missing column is an error.
pub fn parse_diagnostics_csv(text: &str) -> std::result::Result<Vec<DiagnosticsRecord>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("missing header row")?.split(',').map(str::trim).collect();
    let mut pos = [0usize; 18];
    for (k, name) in DiagnosticsRecord::COLUMNS.iter().enumerate() {
        pos[k] = header.iter().position(|h| h == name).ok_or_else(|| format!("missing column `{name}`"))?;
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != header.len() {
                return Err(format!("row {}: expected {} cells, found {}", n + 1, header.len(), cells.len()));
            }
            let mut v = [0.0; 18];
            for k in 0..18 {
                let c = cells[pos[k]];
                v[k] = c.parse().map_err(|_| format!("row {}: `{c}` is not a number", n + 1))?;
            }
            Ok(DiagnosticsRecord::from_values(&v))
        })
        .collect()
}

pub const CONTACT_COLUMNS: [&str; 25] = [
    "t",
    "lhs_force",
    "lhs_penalty",
    "lhs_pressure",
    "lhs_vert_kin",
    "lhs_ln",
    "g_conv_1",
    "g_conv_2",
    "g_conv_3",
    "g_shear_1",
    "g_shear_2",
    "g_compress",
    "g_ln_initial",
    "g_boundary_time",
    "cap_conv_1",
    "cap_conv_2",
    "cap_conv_3",
    "cap_shear_1",
    "cap_shear_2",
    "cap_compress",
    "cap_ln_initial",
    "cap_boundary_time",
    "residual",
    "tolerance",
    "floor_hits",
];

/// Term-by-term contact inequality (ψ ≡ 1) at every recorded time.
pub fn contact_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    push_row(&mut out, CONTACT_COLUMNS.iter().map(|c| c.to_string()));
    for r in &traj.records {
        let Some(b) = traj.contact_residual(r.t) else { continue };
        let tol = contact_tolerance(traj.config.contact_tol_c, &traj.config.scheme, &traj.config.grid, r.t);
        let mut row = vec![b.t, b.lhs_force, b.lhs_penalty, b.lhs_pressure, b.lhs_vert_kin, b.lhs_ln];
        row.extend(b.groups);
        row.extend(b.caps);
        row.extend([b.residual, tol]);
        let mut cells: Vec<String> = row.into_iter().map(num).collect();
        cells.push(b.floor_hits.to_string());
        push_row(&mut out, cells);
    }
    out
}

pub const WINDOW_COLUMNS: [&str; 10] = [
    "n",
    "t0",
    "t1",
    "ssp_residual",
    "fsp_residual",
    "numerical_dissipation",
    "penalty_impulse",
    "min_eta_inner",
    "max_cfl",
    "cg_iterations",
];

/// Per-window energy ledgers.
pub fn windows_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    push_row(&mut out, WINDOW_COLUMNS.iter().map(|c| c.to_string()));
    for w in &traj.windows {
        push_row(
            &mut out,
            [w.n.to_string()]
                .into_iter()
                .chain(
                    [
                        w.t0,
                        w.t1,
                        w.ssp_residual(),
                        w.fsp_residual(),
                        w.ssp.numerical_dissipation,
                        w.ssp.penalty_impulse,
                        w.ssp.min_eta,
                        w.fsp.max_cfl,
                    ]
                    .map(num),
                )
                .chain([w.fsp.cg_iterations.to_string()]),
        );
    }
    out
}

/// `η(t, x_i)` at every window boundary: columns `t, eta_0, ..., eta_{nx-1}`.
pub fn eta_csv(traj: &Trajectory) -> String {
    let nx = traj.config.grid.nx;
    let mut out = String::new();
    push_row(&mut out, std::iter::once("t".to_string()).chain((0..nx).map(|i| format!("eta_{i}"))));
    for c in &traj.checkpoints {
        push_row(&mut out, std::iter::once(num(c.t)).chain(c.beam.eta.iter().map(|v| num(*v))));
    }
    out
}

pub const LEMMA_COLUMNS: [&str; 10] =
    ["lemma", "trial", "lhs", "rhs", "constant", "tol", "pass", "margin", "aux", "descriptors"];

/// One row per lemma trial. Descriptors are `;`-separated.
pub fn lemma_csv(trials: &[LemmaTrial]) -> String {
    let mut out = String::new();
    push_row(&mut out, LEMMA_COLUMNS.iter().map(|c| c.to_string()));
    for t in trials {
        push_row(
            &mut out,
            [
                t.lemma.name().to_string(),
                t.trial.to_string(),
                num(t.lhs),
                num(t.rhs),
                num(t.constant),
                num(t.tol),
                t.pass.to_string(),
                num(t.margin()),
                t.aux.map(num).unwrap_or_default(),
                t.descriptors.iter().map(|d| num(*d)).collect::<Vec<_>>().join(";"),
            ],
        );
    }
    out
}

/// Per-lemma pass counts and constants.
pub fn lemma_summary_csv(report: &LemmaReport) -> String {
    let mut out = String::new();
    push_row(&mut out, ["lemma", "trials", "passed", "constant", "max_ratio", "min_margin"].map(String::from));
    for s in &report.summaries {
        push_row(
            &mut out,
            [
                s.lemma.name().to_string(),
                s.trials.to_string(),
                s.passed.to_string(),
                num(s.constant),
                num(s.max_ratio),
                num(s.min_margin),
            ],
        );
    }
    out
}

/// Checkpoint file contents.
///
/// Layout, all integers and floats little-endian:
///
/// | bytes | content |
/// |---|---|
/// | 5 | magic `PFSI1` |
/// | 1 | flags, bit 0 set when the fluid fields follow |
/// | 3 × u64 | `nx`, `nz`, window index |
/// | 3 × f64 | `t`, `L`, `M` |
/// | nx × f64 | `η` |
/// | nx × f64 | `∂tη` |
/// | 3 × nx(nz+1) × f64 | `ρ`, `u1`, `u3`, row-major (row `j`, column `i`), when flagged |
pub fn encode_checkpoint(grid: &GridSpec, ckpt: &Checkpoint) -> Vec<u8> {
    let nn = grid.nx * (grid.nz + 1);
    let mut buf = Vec::with_capacity(54 + 16 * grid.nx + if ckpt.fluid.is_some() { 24 * nn } else { 0 });
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(if ckpt.fluid.is_some() { FLAG_FLUID } else { 0 });
    for n in [grid.nx, grid.nz, ckpt.window] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    let mut put = |xs: &[f64]| {
        for x in xs {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    };
    put(&[ckpt.t, grid.length_l, grid.height_m]);
    put(&ckpt.beam.eta);
    put(&ckpt.beam.eta_t);
    if let Some(f) = &ckpt.fluid {
        put(&f.rho);
        put(&f.u1);
        put(&f.u3);
    }
    buf
}

/// Decodes [`encode_checkpoint`] output into the grid and checkpoint.
pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<(GridSpec, Checkpoint), String> {
    let mut r = bytes;
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| "file too short")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err("bad magic, not a PFSI1 checkpoint".into());
    }
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags).map_err(|_| "file too short")?;
    if flags[0] & !FLAG_FLUID != 0 {
        return Err(format!("unknown flags {:#04x}", flags[0]));
    }
    let mut u64s = [0usize; 3];
    for v in &mut u64s {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| "truncated header")?;
        *v = usize::try_from(u64::from_le_bytes(b)).map_err(|_| "dimension overflows usize")?;
    }
    let [nx, nz, window] = u64s;
    let nn = nx.checked_mul(nz + 1).ok_or("dimension overflow")?;
    let has_fluid = flags[0] & FLAG_FLUID != 0;
    let expected = 3 + 2 * nx + if has_fluid { 3 * nn } else { 0 };
    if r.len() != 8 * expected {
        return Err(format!("expected {} payload bytes, found {}", 8 * expected, r.len()));
    }
    let mut vals = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
    let head = take(3);
    let grid = GridSpec { length_l: head[1], height_m: head[2], nx, nz };
    let beam = BeamState { eta: take(nx), eta_t: take(nx) };
    let fluid = has_fluid.then(|| FluidState { rho: take(nn), u1: take(nn), u3: take(nn) });
    Ok((grid, Checkpoint { window, t: head[0], beam, fluid }))
}

pub fn read_checkpoint(path: &Path) -> Result<(GridSpec, Checkpoint)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes).map_err(|m| parse_err(path, m))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration in config-file syntax.
    pub config: String,
    pub version: String,
    pub platform: String,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub exit_status: i32,
    pub message: Option<String>,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn platform() -> String {
    format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

impl RunManifest {
    pub fn new(command: &str, config: String, started: f64) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            platform: platform(),
            started,
            finished: started,
            exit_status: 0,
            message: None,
            files: Vec::new(),
        }
    }

    /// Stamps the end time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, exit_status: i32, message: Option<String>) -> Result<RunManifest> {
        self.finished = unix_now();
        self.exit_status = exit_status;
        self.message = message;
        let path = dir.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_atomic(&path, json.as_bytes())?;
        Ok(self)
    }
}

/// Collects output files and writes each one atomically.
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(RunWriter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        write_atomic(&path, bytes)?;
        self.files.push(FileEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn into_files(self) -> Vec<FileEntry> {
        self.files
    }
}

/// Writes every artifact of a trajectory: resolved config, diagnostics,
/// contact terms, window ledger, `η` history and checkpoints at the output
/// times (those that carry the fluid).
pub fn write_trajectory(w: &mut RunWriter, traj: &Trajectory) -> Result<()> {
    w.write("config.cfg", render_config(&traj.config).as_bytes())?;
    w.write("diagnostics.csv", diagnostics_csv(&traj.records).as_bytes())?;
    w.write("contact_terms.csv", contact_csv(traj).as_bytes())?;
    w.write("windows.csv", windows_csv(traj).as_bytes())?;
    w.write("eta.csv", eta_csv(traj).as_bytes())?;
    for c in traj.checkpoints.iter().filter(|c| c.fluid.is_some()) {
        w.write(&format!("checkpoints/ckpt_{:06}.pfsi", c.window), &encode_checkpoint(&traj.config.grid, c))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(&path, e.to_string()))
}

/// Recomputes every checksum listed in the manifest of `dir`.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let m = read_manifest(dir)?;
    for f in &m.files {
        let path = dir.join(&f.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() as u64 != f.bytes || sha256_hex(&bytes) != f.sha256 {
            return Err(parse_err(&path, "checksum mismatch with manifest".into()));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: f64) -> DiagnosticsRecord {
        let mut v = [0.0; 18];
        for (k, x) in v.iter_mut().enumerate() {
            *x = (seed + k as f64).sin() * 10f64.powi(k as i32 - 9) + 1.0 / 3.0;
        }
        DiagnosticsRecord::from_values(&v)
    }

    #[test]
    fn empty_diagnostics_is_header_only() {
        let csv = diagnostics_csv(&[]);
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("t,mass,fluid_kinetic,internal,beam_kinetic,bending,"));
        assert!(csv.trim_end().ends_with("energy_residual,contact_residual"));
        assert!(parse_diagnostics_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn diagnostics_round_trip_bit_exact() {
        let recs: Vec<_> = (0..5).map(|k| record(k as f64 * 0.7)).collect();
        let back = parse_diagnostics_csv(&diagnostics_csv(&recs)).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn missing_column_is_named() {
        let csv = diagnostics_csv(&[record(1.0)]).replacen("min_eta", "min_height", 1);
        assert_eq!(parse_diagnostics_csv(&csv).unwrap_err(), "missing column `min_eta`");
    }

    #[test]
    fn checkpoint_round_trip() {
        let grid = GridSpec::new(1.0, 1.0, 8, 8).unwrap();
        let nn = grid.nx * (grid.nz + 1);
        let f = |s: f64, n: usize| (0..n).map(|k| (k as f64 * s).cos()).collect::<Vec<_>>();
        let ckpt = Checkpoint {
            window: 17,
            t: 0.068,
            beam: BeamState { eta: f(0.3, 8), eta_t: f(0.7, 8) },
            fluid: Some(FluidState { rho: f(0.1, nn), u1: f(0.2, nn), u3: f(0.4, nn) }),
        };
        let bytes = encode_checkpoint(&grid, &ckpt);
        assert_eq!(&bytes[..5], b"PFSI1");
        assert_eq!(bytes.len(), 6 + 24 + 8 * (3 + 16 + 3 * nn));
        let (g, c) = decode_checkpoint(&bytes).unwrap();
        assert_eq!((g, c), (grid.clone(), ckpt.clone()));

        let beam_only = Checkpoint { fluid: None, ..ckpt };
        let (_, c) = decode_checkpoint(&encode_checkpoint(&grid, &beam_only)).unwrap();
        assert_eq!(c, beam_only);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"PFSI2").is_err());
    }

    #[test]
    fn manifest_checksums_validate() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        w.write("a.csv", b"x\n1\n").unwrap();
        w.write("sub/b.bin", &[1, 2, 3]).unwrap();
        let mut m = RunManifest::new("test", String::new(), unix_now());
        m.files = w.into_files();
        m.finish(dir.path(), 0, None).unwrap();
        let back = verify_manifest(dir.path()).unwrap();
        assert_eq!(back.files.len(), 2);
        assert!(!dir.path().join("manifest.json.tmp").exists());
        fs::write(dir.path().join("a.csv"), b"tampered").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }
}
