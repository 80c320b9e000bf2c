//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! [section]
//! key = value   # trailing comment
//! ```
//!
//! Sections are `grid`, `physics`, `scheme`, `scenario` and `output`. Every
//! key except `scenario.id` has a default (see [`DEFAULTS`]); unknown keys,
//! repeated keys and keys that do not apply to the chosen scenario are
//! errors. The full grammar and the table of defaults live in
//! `docs/config.md`.

use std::collections::BTreeMap;

use crate::driver::SimulationConfig;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, PhysParams, SchemeParams};
use crate::scenarios::{ContactSpec, ScenarioSpec, Theorem2Variant};

pub const SECTIONS: [&str; 5] = ["grid", "physics", "scheme", "scenario", "output"];

/// Contact-tolerance constant, calibrated on the contact scenarios at the
/// default resolution (largest normalized residual 2.56, times 1.5).
pub const DEFAULT_CONTACT_TOL_C: f64 = 3.84;

/// `(section, key, default)` for every key shared by all scenarios.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("grid", "length_L", "1"),
    ("grid", "height_M", "1"),
    ("grid", "nx", "256"),
    ("grid", "nz", "64"),
    ("physics", "mu", "0.05"),
    ("physics", "lambda", "0"),
    ("physics", "gamma", "3"),
    ("scheme", "eps", "0.1"),
    ("scheme", "delta", "0.01"),
    ("scheme", "dt_window", "0.004"),
    ("scheme", "dt_inner", "0.001"),
    ("scheme", "kappa_contact", "0.001"),
    ("scheme", "a_diff", "0.0001"),
    ("scheme", "b_reg", "0"),
    ("scheme", "beta_reg", "4"),
    ("scheme", "eta_floor", "1e-12"),
    ("scheme", "T", "5"),
    ("output", "output_every", "25"),
    ("output", "seed", "42"),
    ("output", "contact_tol_c", "3.84"),
];

/// Scenario keys and their defaults, per scenario id.
pub const SCENARIO_DEFAULTS: &[(&str, &[(&str, &str)])] = &[
    ("equilibrium", &[("height", "0.3"), ("rho", "0.5")]),
    (
        "theorem2",
        &[
            ("force", "decaying"),
            ("amplitude", "0"),
            ("rate", "1"),
            ("total_f", "0"),
            ("a_height", "0.25"),
            ("h_max", "0.2"),
            ("x0", "0.5"),
            ("m_target", "0.02"),
        ],
    ),
    (
        "theorem3",
        &[
            ("kappa", "0.1"),
            ("alpha", "0.25"),
            ("c_holder", "1"),
            ("h_max", "0.2"),
            ("x0", "0.5"),
            ("m_target", "0.02"),
        ],
    ),
];

/// One `key = value` entry with its source line (0 for overrides).
#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed but untyped configuration: section → key → value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigDoc {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

fn cfg_err(section: &str, key: &str, msg: impl Into<String>) -> Error {
    Error::Config { section: section.into(), key: key.into(), msg: msg.into() }
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<ConfigDoc> {
        let mut doc = ConfigDoc::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err("", "", format!("line {line_no}: unterminated section header")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(cfg_err(name, "", format!("line {line_no}: unknown section")));
                }
                section = Some(name.to_string());
                doc.sections.entry(name.to_string()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err("", "", format!("line {line_no}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| cfg_err("", key, format!("line {line_no}: key outside any [section]")))?;
            if key.is_empty() || value.is_empty() {
                return Err(cfg_err(sec, key, format!("line {line_no}: empty key or value")));
            }
            let map = doc.sections.entry(sec.to_string()).or_default();
            if map.contains_key(key) {
                return Err(cfg_err(sec, key, format!("line {line_no}: repeated key")));
            }
            map.insert(key.to_string(), Entry { value: value.to_string(), line: line_no });
        }
        Ok(doc)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|e| e.value.as_str())
    }

    /// Sets `section.key`, or the unique key of that name when no section is
    /// given. Used by parameter sweeps.
    pub fn set(&mut self, path: &str, value: &str) -> Result<()> {
        let (section, key) = match path.split_once('.') {
            Some((s, k)) => (s.to_string(), k.to_string()),
            None => (self.section_of(path)?.to_string(), path.to_string()),
        };
        if !SECTIONS.contains(&section.as_str()) {
            return Err(cfg_err(&section, &key, "unknown section"));
        }
        self.sections.entry(section).or_default().insert(key, Entry { value: value.to_string(), line: 0 });
        Ok(())
    }

    fn section_of(&self, key: &str) -> Result<&'static str> {
        let mut hits: Vec<&'static str> = DEFAULTS.iter().filter(|(_, k, _)| *k == key).map(|(s, _, _)| *s).collect();
        if key == "id" || SCENARIO_DEFAULTS.iter().any(|(_, keys)| keys.iter().any(|(k, _)| *k == key)) {
            hits.push("scenario");
        }
        hits.dedup();
        match hits.as_slice() {
            [s] => Ok(s),
            [] => Err(cfg_err("", key, "unknown key")),
            _ => Err(cfg_err("", key, "ambiguous key, write section.key")),
        }
    }

    /// Typed, validated configuration.
    pub fn resolve(&self) -> Result<SimulationConfig> {
        let id = self.get("scenario", "id").ok_or_else(|| cfg_err("scenario", "id", "missing required key"))?;
        let scenario_keys = SCENARIO_DEFAULTS
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, k)| *k)
            .ok_or_else(|| cfg_err("scenario", "id", format!("unknown scenario `{id}` (equilibrium, theorem2, theorem3)")))?;
        // reject unknown keys before reading any value
        for (sec, keys) in &self.sections {
            for (key, e) in keys {
                let known = if sec == "scenario" {
                    key == "id" || scenario_keys.iter().any(|(k, _)| k == key)
                } else {
                    DEFAULTS.iter().any(|(s, k, _)| s == sec && k == key)
                };
                if !known {
                    let at = if e.line > 0 { format!(" (line {})", e.line) } else { String::new() };
                    return Err(cfg_err(sec, key, format!("unknown key{at}")));
                }
            }
        }
        let r = Reader { doc: self, scenario: scenario_keys };
        let grid = GridSpec {
            length_l: r.f64("grid", "length_L")?,
            height_m: r.f64("grid", "height_M")?,
            nx: r.usize("grid", "nx")?,
            nz: r.usize("grid", "nz")?,
        };
        let phys = PhysParams {
            mu: r.f64("physics", "mu")?,
            lambda: r.f64("physics", "lambda")?,
            gamma: r.f64("physics", "gamma")?,
        };
        let scheme = SchemeParams {
            eps: r.f64("scheme", "eps")?,
            delta: r.f64("scheme", "delta")?,
            dt_window: r.f64("scheme", "dt_window")?,
            dt_inner: r.f64("scheme", "dt_inner")?,
            kappa_contact: r.f64("scheme", "kappa_contact")?,
            a_diff: r.f64("scheme", "a_diff")?,
            b_reg: r.f64("scheme", "b_reg")?,
            beta_reg: r.f64("scheme", "beta_reg")?,
            eta_floor: r.f64("scheme", "eta_floor")?,
        };
        let contact = || -> Result<ContactSpec> {
            Ok(ContactSpec {
                h_max: r.f64("scenario", "h_max")?,
                x0: r.f64("scenario", "x0")?,
                m_target: r.f64("scenario", "m_target")?,
            })
        };
        let scenario = match id {
            "equilibrium" => ScenarioSpec::Equilibrium { height: r.f64("scenario", "height")?, rho: r.f64("scenario", "rho")? },
            "theorem2" => {
                let force = r.str("scenario", "force")?;
                let variant = match force {
                    "decaying" => {
                        if self.get("scenario", "total_f").is_some() {
                            return Err(cfg_err("scenario", "total_f", "only used with force = constant"));
                        }
                        Theorem2Variant::DecayingForce {
                            amplitude: r.f64("scenario", "amplitude")?,
                            rate: r.f64("scenario", "rate")?,
                        }
                    }
                    "constant" => {
                        for k in ["amplitude", "rate"] {
                            if self.get("scenario", k).is_some() {
                                return Err(cfg_err("scenario", k, "only used with force = decaying"));
                            }
                        }
                        Theorem2Variant::ConstantForce { total_f: r.f64("scenario", "total_f")? }
                    }
                    other => {
                        return Err(cfg_err("scenario", "force", format!("expected `decaying` or `constant`, got `{other}`")))
                    }
                };
                ScenarioSpec::Theorem2 { variant, contact: contact()?, a_height: r.f64("scenario", "a_height")? }
            }
            _ => ScenarioSpec::Theorem3 {
                kappa: r.f64("scenario", "kappa")?,
                alpha: r.f64("scenario", "alpha")?,
                c_holder: r.f64("scenario", "c_holder")?,
                contact: contact()?,
            },
        };
        let cfg = SimulationConfig {
            grid,
            phys,
            scheme,
            scenario,
            t_final: r.f64("scheme", "T")?,
            output_every: r.usize("output", "output_every")?,
            seed: r.u64("output", "seed")?,
            contact_tol_c: r.f64("output", "contact_tol_c")?,
        };
        cfg.validate().map_err(|e| match e {
            Error::InvalidParam { name, msg } => {
                let section = section_for(name);
                cfg_err(section, name, msg)
            }
            other => other,
        })?;
        // scenario parameters are validated by building the initial data
        cfg.scenario.build(&cfg.grid, &cfg.phys, &cfg.scheme).map_err(|e| match e {
            Error::InvalidParam { name, msg } => cfg_err("scenario", name, msg),
            other => other,
        })?;
        Ok(cfg)
    }
}

fn section_for(name: &str) -> &'static str {
    match name {
        "T" => "scheme",
        _ => DEFAULTS.iter().find(|(_, k, _)| *k == name).map(|(s, _, _)| *s).unwrap_or("scenario"),
    }
}

struct Reader<'a> {
    doc: &'a ConfigDoc,
    scenario: &'static [(&'static str, &'static str)],
}

impl Reader<'_> {
    fn str(&self, section: &str, key: &str) -> Result<&str> {
        if let Some(v) = self.doc.get(section, key) {
            return Ok(v);
        }
        let default = if section == "scenario" {
            self.scenario.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
        } else {
            DEFAULTS.iter().find(|(s, k, _)| *s == section && *k == key).map(|(_, _, v)| *v)
        };
        default.ok_or_else(|| cfg_err(section, key, "missing required key"))
    }

    fn f64(&self, section: &str, key: &str) -> Result<f64> {
        let v = self.str(section, key)?;
        let x: f64 = v.parse().map_err(|_| cfg_err(section, key, format!("expected a number, got `{v}`")))?;
        if !x.is_finite() {
            return Err(cfg_err(section, key, format!("expected a finite number, got `{v}`")));
        }
        Ok(x)
    }

    fn usize(&self, section: &str, key: &str) -> Result<usize> {
        let v = self.str(section, key)?;
        v.parse().map_err(|_| cfg_err(section, key, format!("expected a non-negative integer, got `{v}`")))
    }

    fn u64(&self, section: &str, key: &str) -> Result<u64> {
        let v = self.str(section, key)?;
        v.parse().map_err(|_| cfg_err(section, key, format!("expected a non-negative integer, got `{v}`")))
    }
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    ConfigDoc::parse(text)?.resolve()
}

/// Renders a fully resolved configuration in the same grammar; parsing the
/// output gives back an equal configuration.
pub fn render_config(cfg: &SimulationConfig) -> String {
    let g = &cfg.grid;
    let p = &cfg.phys;
    let s = &cfg.scheme;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("[grid]\nlength_L", fmt(g.length_l));
    kv("height_M", fmt(g.height_m));
    kv("nx", g.nx.to_string());
    kv("nz", g.nz.to_string());
    kv("\n[physics]\nmu", fmt(p.mu));
    kv("lambda", fmt(p.lambda));
    kv("gamma", fmt(p.gamma));
    kv("\n[scheme]\neps", fmt(s.eps));
    kv("delta", fmt(s.delta));
    kv("dt_window", fmt(s.dt_window));
    kv("dt_inner", fmt(s.dt_inner));
    kv("kappa_contact", fmt(s.kappa_contact));
    kv("a_diff", fmt(s.a_diff));
    kv("b_reg", fmt(s.b_reg));
    kv("beta_reg", fmt(s.beta_reg));
    kv("eta_floor", fmt(s.eta_floor));
    kv("T", fmt(cfg.t_final));
    kv("\n[scenario]\nid", cfg.scenario.id().to_string());
    let contact = |kv: &mut dyn FnMut(&str, String), c: &ContactSpec| {
        kv("h_max", fmt(c.h_max));
        kv("x0", fmt(c.x0));
        kv("m_target", fmt(c.m_target));
    };
    match &cfg.scenario {
        ScenarioSpec::Equilibrium { height, rho } => {
            kv("height", fmt(height));
            kv("rho", fmt(rho));
        }
        ScenarioSpec::Theorem2 { variant, contact: c, a_height } => {
            match variant {
                Theorem2Variant::DecayingForce { amplitude, rate } => {
                    kv("force", "decaying".into());
                    kv("amplitude", fmt(amplitude));
                    kv("rate", fmt(rate));
                }
                Theorem2Variant::ConstantForce { total_f } => {
                    kv("force", "constant".into());
                    kv("total_f", fmt(total_f));
                }
            }
            kv("a_height", fmt(a_height));
            contact(&mut kv, c);
        }
        ScenarioSpec::Theorem3 { kappa, alpha, c_holder, contact: c } => {
            kv("kappa", fmt(kappa));
            kv("alpha", fmt(alpha));
            kv("c_holder", fmt(c_holder));
            contact(&mut kv, c);
        }
    }
    kv("\n[output]\noutput_every", cfg.output_every.to_string());
    kv("seed", cfg.seed.to_string());
    kv("contact_tol_c", fmt(cfg.contact_tol_c));
    out
}

/// Shortest round-tripping form, in exponent notation for tiny values.
fn fmt(x: impl std::borrow::Borrow<f64>) -> String {
    format!("{:?}", x.borrow())
}
