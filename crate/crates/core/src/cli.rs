//! The `pfsi` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical abort,
//! 3 failed inequality check under `--strict` or a failed lemma battery.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{render_config, ConfigDoc};
use crate::diagnostics::{
    contact_tolerance, detachment_bound, detect_detachment, mass_below, pressure_lower_bound_check,
};
use crate::driver::{run_simulation, SimulationConfig, Trajectory};
use crate::error::{Error, Result};
use crate::io::{self, RunManifest, RunWriter};
use crate::lemmas::{run_suite, LemmaReport, Resolution, DEFAULT_TRIALS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// Relative energy tolerance for `--strict`: residual ≤ 10⁻² E(0).
pub const ENERGY_TOL_REL: f64 = 1e-2;
/// Relative mass drift allowed on top of the logged clipping.
pub const MASS_TOL_REL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "pfsi", version, about = "Compressible fluid under an elastic beam with contact")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its outputs.
    Run {
        config: PathBuf,
        /// Exit with status 3 when an inequality check fails.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the randomized functional-inequality battery.
    CheckLemmas {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one simulation per value of a config key.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...` where key is `section.key` or an unambiguous key.
        #[arg(long)]
        vary: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate the detachment lower bound on max |η|.
    Bound {
        #[arg(long = "T")]
        t: f64,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long = "L")]
        l: f64,
        #[arg(long = "C")]
        c: f64,
        #[arg(long = "F-total", allow_hyphen_values = true)]
        f_total: f64,
    },
    /// Parse a config and print it fully resolved.
    Validate { config: PathBuf },
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory (default: `$PFSI_OUTPUT_DIR/<name>` or `runs/<name>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutArgs {
    fn resolve(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| io::output_root().join(name))
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Instability(_) | Error::Cfl(..) | Error::EtaExceedsHeadroom { .. } => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            print!("{}", render_config(&cfg));
            Ok(EXIT_OK)
        }
        Command::Bound { t, m, gamma, l, c, f_total } => {
            let b = detachment_bound(t, m, gamma, l, c, f_total)?;
            println!("{}", significant(b, 6));
            Ok(EXIT_OK)
        }
        Command::Run { config, strict, out } => {
            let cfg = load_config(&config)?;
            let dir = out.resolve(&stem(&config));
            let (code, traj) = run_to_dir(&cfg, &dir, "run")?;
            print_run_summary(&traj, &dir);
            if code != EXIT_OK {
                return Ok(code);
            }
            let checks = strict_checks(&traj);
            for c in &checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if strict && checks.iter().any(|c| !c.pass) { EXIT_CHECK_FAILED } else { EXIT_OK })
        }
        Command::CheckLemmas { seed, trials, out } => {
            if trials == 0 {
                return Err(Error::param("trials", "must be at least 1"));
            }
            let started = io::unix_now();
            let report = run_suite(seed, trials, Resolution::default());
            let dir = out.resolve(&format!("lemmas_seed{seed}"));
            let mut w = RunWriter::create(&dir)?;
            w.write("lemma_trials.csv", io::lemma_csv(&report.trials).as_bytes())?;
            w.write("lemma_summary.csv", io::lemma_summary_csv(&report).as_bytes())?;
            let pass = lemma_report_passes(&report);
            print_lemma_report(&report);
            let code = if pass { EXIT_OK } else { EXIT_CHECK_FAILED };
            let mut m = RunManifest::new(&format!("check-lemmas --seed {seed} --trials {trials}"), String::new(), started);
            m.files = w.into_files();
            m.finish(&dir, code, (!pass).then(|| "lemma battery failed".to_string()))?;
            Ok(code)
        }
        Command::Sweep { config, vary, out } => {
            let text = read_text(&config)?;
            let doc = ConfigDoc::parse(&text)?;
            let (key, values) = parse_vary(&vary)?;
            let mut variants = Vec::new();
            for v in &values {
                let mut d = doc.clone();
                d.set(&key, v)?;
                variants.push((v.clone(), d.resolve()?));
            }
            let dir = out.resolve(&format!("{}_sweep", stem(&config)));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let rows: Vec<Result<SweepRow>> = variants
                .par_iter()
                .map(|(v, cfg)| {
                    let sub = dir.join(format!("{}={}", key.replace('.', "_"), v));
                    let (code, traj) = run_to_dir(cfg, &sub, &format!("sweep {key}={v}"))?;
                    Ok(SweepRow::new(v, code, &traj))
                })
                .collect();
            let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
            let summary = sweep_summary_csv(&key, &rows);
            io::write_atomic(&dir.join("sweep_summary.csv"), summary.as_bytes())?;
            print!("{summary}");
            Ok(rows.iter().map(|r| r.exit_status).max().unwrap_or(EXIT_OK))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    crate::config::parse_config(&read_text(path)?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn parse_vary(spec: &str) -> Result<(String, Vec<String>)> {
    let bad = |msg: &str| Error::Config { section: "sweep".into(), key: spec.into(), msg: msg.into() };
    let (key, vals) = spec.split_once('=').ok_or_else(|| bad("expected key=v1,v2,..."))?;
    let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(bad("expected key=v1,v2,..."));
    }
    Ok((key.trim().to_string(), values))
}

/// Runs `cfg` and writes every artifact plus the manifest into `dir`.
/// Returns the exit status (0 or 2) and the trajectory.
pub fn run_to_dir(cfg: &SimulationConfig, dir: &Path, command: &str) -> Result<(i32, Trajectory)> {
    let started = io::unix_now();
    let traj = run_simulation(cfg)?;
    let code = write_run_dir(&traj, dir, command, started)?;
    Ok((code, traj))
}

/// Writes a finished trajectory and its manifest into `dir`; returns the
/// exit status recorded in the manifest.
pub fn write_run_dir(traj: &Trajectory, dir: &Path, command: &str, started: f64) -> Result<i32> {
    let mut w = RunWriter::create(dir)?;
    io::write_trajectory(&mut w, traj)?;
    let code = match &traj.abort {
        Some(a) if a.numerical => EXIT_NUMERICAL,
        Some(_) => EXIT_USAGE,
        None => EXIT_OK,
    };
    let mut m = RunManifest::new(command, render_config(&traj.config), started);
    m.files = w.into_files();
    m.finish(dir, code, traj.abort.as_ref().map(|a| a.message.clone()))?;
    Ok(code)
}

fn print_run_summary(traj: &Trajectory, dir: &Path) {
    let last = traj.records.last();
    println!("scenario {} -> {}", traj.scenario_id, dir.display());
    if let crate::scenarios::Guarantee::NoGuarantee(why) = &traj.guarantee {
        println!("note: outside the covered parameter range ({why})");
    }
    if let Some(r) = last {
        println!(
            "t = {:.6} min_eta = {:.6e} max_eta = {:.6e} energy_residual = {:+.3e} contact_residual = {:+.3e}",
            r.t, r.min_eta, r.max_eta, r.energy_residual, r.contact_residual
        );
    }
    let delta = traj.config.scheme.delta;
    match detect_detachment(&traj.min_eta_series(), 2.0 * delta) {
        Some(t) => println!("detached (min eta > 2 delta) at t = {t:.6}"),
        None => println!("no detachment (min eta > 2 delta) observed"),
    }
    if let Some(a) = &traj.abort {
        eprintln!("aborted at t = {:.6} (window {}): {}", a.t, a.window, a.message);
    }
}

/// One check of `run --strict`.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Mass, energy, contact and pressure checks over a finished trajectory.
///
/// The contact inequality is not checked for the equilibrium scenario: with
/// fluid filling the whole rectangle its one-sided defect grows linearly in
/// time and is not a discretization error.
pub fn strict_checks(traj: &Trajectory) -> Vec<Check> {
    let cfg = &traj.config;
    let mut out = Vec::new();
    let Some(r0) = traj.records.first() else { return out };

    let mut worst_mass = 0.0f64;
    for r in &traj.records {
        let drift = (r.mass - r0.mass).abs() - r.clipped_mass_cum;
        worst_mass = worst_mass.max(drift / r0.mass);
    }
    out.push(Check {
        name: "mass",
        pass: worst_mass <= MASS_TOL_REL,
        detail: format!("max |m(t)-m(0)|/m(0) beyond clipping = {worst_mass:.3e} (tol {MASS_TOL_REL:e})"),
    });

    let e0 = r0.energy();
    let worst_energy = traj.records.iter().map(|r| r.energy_residual).fold(f64::NEG_INFINITY, f64::max);
    out.push(Check {
        name: "energy",
        pass: worst_energy <= ENERGY_TOL_REL * e0,
        detail: format!("max residual = {worst_energy:+.3e} (tol {:.3e})", ENERGY_TOL_REL * e0),
    });

    if traj.scenario_id != "equilibrium" {
        let mut worst = f64::NEG_INFINITY;
        let mut pass = true;
        for r in &traj.records {
            if let Some(b) = traj.contact_residual(r.t) {
                let tol = contact_tolerance(cfg.contact_tol_c, &cfg.scheme, &cfg.grid, r.t);
                pass &= b.residual <= tol;
                worst = worst.max(b.residual - tol);
            }
        }
        out.push(Check {
            name: "contact",
            pass,
            detail: format!("max (residual - tol) = {worst:+.3e}"),
        });
    }

    let mut worst_margin = f64::INFINITY;
    let mut pass = true;
    for c in &traj.checkpoints {
        if let Some(f) = &c.fluid {
            let m = mass_below(f, &c.beam, &cfg.grid);
            let pb = pressure_lower_bound_check(f, &c.beam, m, &cfg.grid, &cfg.phys);
            pass &= pb.pass;
            worst_margin = worst_margin.min(pb.margin);
        }
    }
    out.push(Check { name: "pressure", pass, detail: format!("min margin = {worst_margin:+.3e}") });
    out
}

/// Every lemma trial passes and the discrete Korn identity holds at round-off
/// with a converging dissipation integral.
pub fn lemma_report_passes(report: &LemmaReport) -> bool {
    report.all_pass() && report.korn_identity.max_defect() < 1e-12 && report.korn_identity.order() > 1.8
}

fn print_lemma_report(report: &LemmaReport) {
    println!("seed {}", report.seed);
    for s in &report.summaries {
        println!(
            "{} {:<22} {}/{} constant {:.6e} max ratio {:.6e} min margin {:+.3e}",
            if s.all_pass() { "PASS" } else { "FAIL" },
            s.lemma.name(),
            s.passed,
            s.trials,
            s.constant,
            s.max_ratio,
            s.min_margin
        );
    }
    let k = &report.korn_identity;
    println!("korn identity: max defect {:.3e}, dissipation order {:.3}", k.max_defect(), k.order());
}

/// One line of `sweep_summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub exit_status: i32,
    pub t_reached: f64,
    /// First boundary time with `min η > 2δ`.
    pub detachment_time: Option<f64>,
    /// First boundary time with `η > 2δ` at the mid node (where the
    /// localized force acts in the hat scenarios).
    pub node_detachment_time: Option<f64>,
    pub min_eta_inner: f64,
    /// `max(δ - min η, 0)` over all inner steps.
    pub undershoot: f64,
    pub penalty_impulse: f64,
}

impl SweepRow {
    pub fn new(value: &str, exit_status: i32, traj: &Trajectory) -> Self {
        let cfg = &traj.config;
        let thr = 2.0 * cfg.scheme.delta;
        let min_inner = traj.min_eta_inner();
        SweepRow {
            value: value.to_string(),
            exit_status,
            t_reached: traj.final_checkpoint().t,
            detachment_time: detect_detachment(&traj.min_eta_series(), thr),
            node_detachment_time: detect_detachment(&traj.node_series(cfg.grid.nx / 2), thr),
            min_eta_inner: min_inner,
            undershoot: (cfg.scheme.delta - min_inner).max(0.0),
            penalty_impulse: traj.records.last().map_or(0.0, |r| r.penalty_impulse_cum),
        }
    }
}

pub fn sweep_summary_csv(key: &str, rows: &[SweepRow]) -> String {
    let opt = |t: Option<f64>| t.map(|t| format!("{t:.16e}")).unwrap_or_default();
    let mut out = format!(
        "{key},exit_status,t_reached,detachment_time,node_detachment_time,min_eta_inner,undershoot,penalty_impulse\n"
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.16e},{},{},{:.16e},{:.16e},{:.16e}\n",
            r.value,
            r.exit_status,
            r.t_reached,
            opt(r.detachment_time),
            opt(r.node_detachment_time),
            r.min_eta_inner,
            r.undershoot,
            r.penalty_impulse
        ));
    }
    out
}
