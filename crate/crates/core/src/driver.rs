//! Lie splitting in time. Window `n` first advances the beam with the fluid
//! trace of window `n-1` (the initial velocity `v₀` for the first window),
//! then advances the fluid against the new beam motion. Energies, dissipation
//! and the contact-inequality integrands are accumulated along the way.

use crate::beam::{BeamForcing, BeamSolver, SspWindowReport};
use crate::diagnostics::{
    contact_breakdown, contact_sample, ColumnIntegrals, ContactEndpoint, DiagnosticsRecord, TermBreakdown,
};
use crate::error::{Error, Result};
use crate::fluid::{fluid_energy, total_mass, BeamPath, FluidSolver, FspWindowReport};
use crate::grid::{integer_ratio, integrate_1d, BeamState, FluidState, GridSpec, PhysParams, SchemeParams};
use crate::scenarios::{ForceSpec, Guarantee, Scenario, ScenarioSpec};

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub grid: GridSpec,
    pub phys: PhysParams,
    pub scheme: SchemeParams,
    pub scenario: ScenarioSpec,
    /// Final time T.
    pub t_final: f64,
    /// A diagnostics record is written every `output_every` windows.
    pub output_every: usize,
    /// Seed for the lemma-suite sampling; the solvers are deterministic.
    pub seed: u64,
    /// Constant C of `tol_contact = C (dt + dx + dz)(1 + T)`.
    pub contact_tol_c: f64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.phys.validate()?;
        self.scheme.validate()?;
        self.windows()?;
        if self.output_every == 0 {
            return Err(Error::param("output_every", "must be at least 1"));
        }
        if !(self.contact_tol_c >= 0.0) {
            return Err(Error::param("contact_tol_c", "must be non-negative"));
        }
        Ok(())
    }

    /// Number of windows `N = T/Δt`.
    pub fn windows(&self) -> Result<usize> {
        if self.t_final == 0.0 {
            return Ok(0);
        }
        if !(self.t_final > 0.0) {
            return Err(Error::param("T", format!("must be non-negative, got {}", self.t_final)));
        }
        integer_ratio(self.t_final, self.scheme.dt_window)
            .ok_or_else(|| Error::param("T", "T must be an integer multiple of dt_window"))
    }
}

/// State at a window boundary. The fluid is kept only at output times.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub window: usize,
    pub t: f64,
    pub beam: BeamState,
    pub fluid: Option<FluidState>,
}

/// Scalar ledgers of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowReport {
    pub n: usize,
    pub t0: f64,
    pub t1: f64,
    pub ssp: SspWindowReport,
    pub fsp: FspWindowReport,
}

impl WindowReport {
    /// End energy + dissipation − start energy − sources of the beam step.
    pub fn ssp_residual(&self) -> f64 {
        let s = &self.ssp;
        s.end_energy() + s.dissipation() - (s.start_energy() + s.trace_source + s.work)
    }

    pub fn fsp_residual(&self) -> f64 {
        let f = &self.fsp;
        f.end_energy() + f.dissipation() - (f.start_energy() + f.beam_source + f.work)
    }
}

/// Contact-inequality data at one recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactSnapshot {
    pub end: ContactEndpoint,
    pub acc: ColumnIntegrals,
}

/// Why a run stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct AbortInfo {
    pub t: f64,
    pub window: usize,
    pub message: String,
    /// Numerical failure (as opposed to a configuration problem).
    pub numerical: bool,
}

/// Result of a run, possibly partial.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub config: SimulationConfig,
    pub scenario_id: String,
    pub guarantee: Guarantee,
    /// One per window boundary reached, starting at t = 0.
    pub checkpoints: Vec<Checkpoint>,
    pub windows: Vec<WindowReport>,
    pub records: Vec<DiagnosticsRecord>,
    /// Aligned with `records`.
    pub contact: Vec<ContactSnapshot>,
    pub contact_start: ContactEndpoint,
    /// `(ε/2)∫|v₀|²`, injected by the first window's lagged trace.
    pub source0: f64,
    /// Running sums of the per-window energy residuals, aligned with `records`.
    pub window_residual_sums: Vec<f64>,
    pub abort: Option<AbortInfo>,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.abort.is_none()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    fn record_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.config.scheme.dt_window;
        self.records.iter().position(|r| (r.t - t).abs() <= tol)
    }

    /// Energy residual at a recorded time.
    pub fn energy_residual(&self, t: f64) -> Option<f64> {
        self.record_index(t).map(|k| self.records[k].energy_residual)
    }

    /// Contact inequality with ψ ≡ 1 at a recorded time.
    pub fn contact_residual(&self, t: f64) -> Option<TermBreakdown> {
        let psi = vec![1.0; self.config.grid.nx];
        self.contact_residual_weighted(t, &psi).ok().flatten()
    }

    /// Localized contact inequality with a time-constant weight ψ ≥ 0.
    pub fn contact_residual_weighted(&self, t: f64, psi: &[f64]) -> Result<Option<TermBreakdown>> {
        if psi.len() != self.config.grid.nx {
            return Err(Error::param("psi", "weight must have one value per beam node"));
        }
        if psi.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::param("psi", "weight must be non-negative"));
        }
        Ok(self.record_index(t).map(|k| {
            let s = &self.contact[k];
            contact_breakdown(&self.contact_start, &s.end, &s.acc, psi, &self.config.grid, &self.config.phys)
        }))
    }

    /// `(t, min_x η)` at every window boundary.
    pub fn min_eta_series(&self) -> Vec<(f64, f64)> {
        self.checkpoints.iter().map(|c| (c.t, c.beam.min_eta())).collect()
    }

    /// `(t, η(x_node))` at every window boundary.
    pub fn node_series(&self, node: usize) -> Vec<(f64, f64)> {
        self.checkpoints.iter().map(|c| (c.t, c.beam.eta[node])).collect()
    }

    /// Largest `|η|` over the recorded boundaries.
    pub fn max_eta(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.beam.max_eta()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest η seen at any inner step.
    pub fn min_eta_inner(&self) -> f64 {
        self.windows
            .iter()
            .map(|w| w.ssp.min_eta)
            .chain(self.checkpoints.first().map(|c| c.beam.min_eta()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trajectory always holds the initial state")
    }
}

/// Solvers assembled once for a parameter set.
#[derive(Clone, Debug)]
pub struct Stepper {
    grid: GridSpec,
    scheme: SchemeParams,
    beam: BeamSolver,
    fluid: FluidSolver,
    steps: usize,
}

impl Stepper {
    pub fn new(grid: &GridSpec, phys: &PhysParams, scheme: &SchemeParams) -> Result<Self> {
        grid.validate()?;
        phys.validate()?;
        scheme.validate()?;
        Ok(Stepper {
            grid: grid.clone(),
            scheme: scheme.clone(),
            beam: BeamSolver::new(grid, scheme),
            fluid: FluidSolver::new(grid, phys, scheme),
            steps: scheme.window_steps(),
        })
    }

    /// One window: beam with the lagged trace, then fluid along the new beam
    /// path. Returns the new states, the ledgers and the next lagged trace.
    pub fn window(
        &self,
        n: usize,
        fluid: &FluidState,
        beam: &BeamState,
        lagged_trace: &[Vec<f64>],
        force: &ForceSpec,
    ) -> Result<(FluidState, BeamState, WindowReport, Vec<Vec<f64>>)> {
        let dtw = self.scheme.dt_window;
        let (t0, t1) = (n as f64 * dtw, (n + 1) as f64 * dtw);
        let forcing = BeamForcing { outer_f: force.window_average(t0, t1), lagged_trace_v3: lagged_trace.to_vec() };
        let (beam1, mut ssp) = self.beam.step(beam, &forcing, self.steps)?;
        if ssp.min_penalty < 0.0 || ssp.max_penalty_power > 0.0 {
            return Err(Error::Instability(format!(
                "contact penalty not dissipative in window {n}: min P = {:e}, max P w = {:e}",
                ssp.min_penalty, ssp.max_penalty_power
            )));
        }
        let half = 0.5 * self.grid.height_m;
        if ssp.max_eta > half {
            return Err(Error::EtaExceedsHeadroom { max_eta: ssp.max_eta, half, t: t1 });
        }
        let path = BeamPath { eta: std::mem::take(&mut ssp.eta_steps), eta_t: std::mem::take(&mut ssp.eta_t_steps) };
        let (fluid1, mut fsp) = self.fluid.step(fluid, &beam1, &path, self.steps)?;
        let next = std::mem::take(&mut fsp.trace_u3_steps);
        fsp.trace_u1_steps.clear();
        Ok((fluid1, beam1, WindowReport { n, t0, t1, ssp, fsp }, next))
    }
}

/// Runs window `n` with freshly assembled solvers.
pub fn run_window(
    n: usize,
    fluid: &FluidState,
    beam: &BeamState,
    lagged_trace: &[Vec<f64>],
    force: &ForceSpec,
    config: &SimulationConfig,
) -> Result<(FluidState, BeamState, WindowReport, Vec<Vec<f64>>)> {
    Stepper::new(&config.grid, &config.phys, &config.scheme)?.window(n, fluid, beam, lagged_trace, force)
}

/// Running totals of the coupled energy balance.
#[derive(Clone, Debug, Default)]
struct Ledger {
    e0: f64,
    dissipation: f64,
    work: f64,
    coupling: f64,
    clipped: f64,
    penalty: f64,
    window_residuals: f64,
    /// Trace dissipation of the latest window, not yet matched by a source.
    pending_trace: f64,
}

impl Ledger {
    fn absorb(&mut self, w: &WindowReport) {
        let (s, f) = (&w.ssp, &w.fsp);
        // (ε/2Δt)∫∫|∂tη|² leaves the beam and enters the fluid unchanged.
        let inner = s.coupling_dissipation + s.viscoelastic_dissipation + s.contact_dissipation
            + f.viscous_dissipation
            + f.coupling_dissipation;
        // (ε/2Δt)∫∫|v|² of the previous window minus its re-injection as |Tv|².
        let carried = if w.n == 0 { 0.0 } else { self.pending_trace - s.trace_source };
        self.dissipation += inner + carried;
        self.pending_trace = f.trace_dissipation;
        self.work += s.work;
        self.coupling += f.coupling_residual;
        self.clipped += f.clipped_mass;
        self.penalty += s.penalty_impulse;
        self.window_residuals += w.ssp_residual() + w.fsp_residual();
    }

    fn dissipation_now(&self) -> f64 {
        self.dissipation + self.pending_trace
    }
}

/// Simulation in progress; exposes window-by-window stepping.
pub struct Simulation {
    stepper: Stepper,
    traj: Trajectory,
    scenario: Scenario,
    fluid: FluidState,
    beam: BeamState,
    lagged: Vec<Vec<f64>>,
    ledger: Ledger,
    sample: ColumnIntegrals,
    acc: ColumnIntegrals,
    n: usize,
    total: usize,
}

impl Simulation {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let scenario = config.scenario.build(&config.grid, &config.phys, &config.scheme)?;
        Self::with_scenario(config, scenario)
    }

    /// Starts from explicitly supplied initial data and forcing.
    pub fn with_scenario(config: &SimulationConfig, scenario: Scenario) -> Result<Self> {
        config.validate()?;
        let (g, p, s) = (&config.grid, &config.phys, &config.scheme);
        scenario.fluid0.validate(g)?;
        g.check_graph(&scenario.beam0.eta)?;
        let stepper = Stepper::new(g, p, s)?;
        let (sample, start) = contact_sample(&scenario.fluid0, &scenario.beam0, g, p, s);
        let mut acc = ColumnIntegrals::zeros(g.nx);
        acc.floor_hits = sample.floor_hits;
        let source0 = 0.5 * s.eps * integrate_1d(&scenario.v0.iter().map(|v| v * v).collect::<Vec<_>>(), g.dx());
        let traj = Trajectory {
            config: config.clone(),
            scenario_id: scenario.id.clone(),
            guarantee: scenario.guarantee.clone(),
            checkpoints: Vec::new(),
            windows: Vec::new(),
            records: Vec::new(),
            contact: Vec::new(),
            contact_start: start,
            source0,
            window_residual_sums: Vec::new(),
            abort: None,
        };
        let mut sim = Simulation {
            stepper,
            fluid: scenario.fluid0.clone(),
            beam: scenario.beam0.clone(),
            lagged: vec![scenario.v0.clone()],
            scenario,
            traj,
            ledger: Ledger::default(),
            sample,
            acc,
            n: 0,
            total: config.windows()?,
        };
        let rec = sim.record(0.0);
        sim.ledger.e0 = rec.energy();
        sim.push_record(rec);
        sim.traj.checkpoints.push(Checkpoint {
            window: 0,
            t: 0.0,
            beam: sim.beam.clone(),
            fluid: Some(sim.fluid.clone()),
        });
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn fluid(&self) -> &FluidState {
        &self.fluid
    }

    pub fn beam(&self) -> &BeamState {
        &self.beam
    }

    pub fn windows_done(&self) -> usize {
        self.n
    }

    pub fn is_finished(&self) -> bool {
        self.n >= self.total || self.traj.abort.is_some()
    }

    fn record(&self, t: f64) -> DiagnosticsRecord {
        let c = &self.traj.config;
        let (g, p, s) = (&c.grid, &c.phys, &c.scheme);
        let (fk, fi) = fluid_energy(&self.fluid, g, p, s);
        let (bk, bb) = crate::beam::beam_energy(&self.beam, s.eps, g.dx());
        let psi = vec![1.0; g.nx];
        let mut end = self.sample_endpoint();
        end.t = t;
        let tb = contact_breakdown(&self.traj.contact_start, &end, &self.acc, &psi, g, p);
        let mut rec = DiagnosticsRecord {
            t,
            mass: total_mass(&self.fluid, g),
            fluid_kinetic: fk,
            internal: fi,
            beam_kinetic: bk,
            bending: bb,
            dissipation_cum: self.ledger.dissipation_now(),
            work_cum: self.ledger.work,
            ln_eta: end.ln_eta.iter().sum(),
            press_over_eta_cum: self.acc.press.iter().sum(),
            vert_kin_over_eta_cum: self.acc.vert_kin.iter().sum(),
            min_eta: self.beam.min_eta(),
            max_eta: self.beam.max_eta(),
            coupling_residual: self.ledger.coupling,
            clipped_mass_cum: self.ledger.clipped,
            penalty_impulse_cum: self.ledger.penalty,
            energy_residual: 0.0,
            contact_residual: tb.residual,
        };
        let e0 = if t == 0.0 { rec.energy() } else { self.ledger.e0 };
        rec.energy_residual = crate::diagnostics::energy_residual_of(&rec, e0, self.traj.source0);
        rec
    }

    fn sample_endpoint(&self) -> ContactEndpoint {
        let c = &self.traj.config;
        contact_sample(&self.fluid, &self.beam, &c.grid, &c.phys, &c.scheme).1
    }

    fn push_record(&mut self, rec: DiagnosticsRecord) {
        let mut end = self.sample_endpoint();
        end.t = rec.t;
        self.traj.contact.push(ContactSnapshot { end, acc: self.acc.clone() });
        self.traj.window_residual_sums.push(self.ledger.window_residuals);
        self.traj.records.push(rec);
    }

    /// Advances one window. Numerical failures end the run and are recorded
    /// in the trajectory rather than returned.
    pub fn step(&mut self) -> bool {
        if self.is_finished() {
            return false;
        }
        let n = self.n;
        let c = self.traj.config.clone();
        let res = self.stepper.window(n, &self.fluid, &self.beam, &self.lagged, &self.scenario.force);
        let (fluid1, beam1, rep, next) = match res {
            Ok(v) => v,
            Err(e) => {
                self.traj.abort = Some(AbortInfo {
                    t: n as f64 * c.scheme.dt_window,
                    window: n,
                    message: e.to_string(),
                    numerical: true,
                });
                return false;
            }
        };
        self.fluid = fluid1;
        self.beam = beam1;
        self.lagged = next;
        self.ledger.absorb(&rep);

        let (sample, _) = contact_sample(&self.fluid, &self.beam, &c.grid, &c.phys, &c.scheme);
        self.acc.add_trapezoid(c.scheme.dt_window, &self.sample, &sample);
        let force_dt: Vec<f64> =
            self.scenario.force.window_average(rep.t0, rep.t1).iter().map(|f| f * c.scheme.dt_window).collect();
        self.acc.add_forces(c.grid.dx(), &force_dt, &rep.ssp.penalty_impulse_cols);
        self.sample = sample;

        self.n += 1;
        let t = rep.t1;
        let output = self.n.is_multiple_of(c.output_every) || self.n == self.total;
        self.traj.windows.push(rep);
        self.traj.checkpoints.push(Checkpoint {
            window: self.n,
            t,
            beam: self.beam.clone(),
            fluid: output.then(|| self.fluid.clone()),
        });
        if output {
            let rec = self.record(t);
            self.push_record(rec);
        }
        true
    }

    /// Runs to the end (or the first failure) and hands back the trajectory.
    pub fn finish(mut self) -> Trajectory {
        while self.step() {}
        if self.traj.abort.is_some() {
            // keep the last state reached so the dump is usable
            if let Some(last) = self.traj.checkpoints.last_mut() {
                last.fluid = Some(self.fluid.clone());
            }
            let t = self.traj.checkpoints.last().map_or(0.0, |c| c.t);
            if self.traj.records.last().is_none_or(|r| r.t < t) {
                let rec = self.record(t);
                self.push_record(rec);
            }
        }
        self.traj
    }
}

/// Runs a full simulation. Configuration errors are returned; numerical
/// failures produce a partial trajectory with `abort` set.
pub fn run_simulation(config: &SimulationConfig) -> Result<Trajectory> {
    Ok(Simulation::new(config)?.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{ContactSpec, Theorem2Variant};

    fn config(scenario: ScenarioSpec, t_final: f64) -> SimulationConfig {
        SimulationConfig {
            grid: GridSpec::new(1.0, 1.0, 32, 16).unwrap(),
            phys: PhysParams { mu: 0.05, lambda: 0.0, gamma: 3.0 },
            scheme: SchemeParams {
                eps: 0.1,
                delta: 0.01,
                dt_window: 4e-3,
                dt_inner: 1e-3,
                kappa_contact: 1e-3,
                a_diff: 1e-4,
                b_reg: 0.0,
                beta_reg: 4.0,
                eta_floor: 1e-12,
            },
            scenario,
            t_final,
            output_every: 5,
            seed: 1,
            contact_tol_c: 1.0,
        }
    }

    fn contact(total_f: f64) -> ScenarioSpec {
        ScenarioSpec::Theorem2 {
            variant: Theorem2Variant::ConstantForce { total_f },
            contact: ContactSpec::default(),
            a_height: 0.25,
        }
    }

    #[test]
    fn empty_run() {
        let tr = run_simulation(&config(contact(0.0), 0.0)).unwrap();
        assert_eq!(tr.checkpoints.len(), 1);
        assert_eq!(tr.records.len(), 1);
        assert!(tr.windows.is_empty());
        assert_eq!(tr.records[0].energy_residual, 0.0);
    }

    #[test]
    fn rejects_fractional_window_count() {
        assert!(run_simulation(&config(contact(0.0), 0.01)).is_err());
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let cfg = config(ScenarioSpec::Equilibrium { height: 0.3, rho: 0.5 }, 0.04);
        let tr = run_simulation(&cfg).unwrap();
        assert!(tr.is_complete());
        let first = &tr.checkpoints[0];
        let last = tr.final_checkpoint();
        assert_eq!(tr.checkpoints.len(), 11);
        for (a, b) in first.beam.eta.iter().zip(&last.beam.eta) {
            assert!((a - b).abs() < 1e-12);
        }
        let (f0, f1) = (first.fluid.as_ref().unwrap(), last.fluid.as_ref().unwrap());
        for k in 0..f0.rho.len() {
            assert!((f0.rho[k] - f1.rho[k]).abs() < 1e-12);
            assert!(f1.u1[k].abs() < 1e-12 && f1.u3[k].abs() < 1e-12);
        }
        for r in &tr.records {
            assert!(r.energy_residual.abs() <= 1e-10 * r.energy());
        }
    }

    #[test]
    fn first_window_uses_initial_velocity() {
        let cfg = config(contact(0.0), 0.004);
        let mut sc = cfg.scenario.build(&cfg.grid, &cfg.phys, &cfg.scheme).unwrap();
        sc.v0 = vec![0.3; cfg.grid.nx];
        let tr = Simulation::with_scenario(&cfg, sc).unwrap().finish();
        let w = &tr.windows[0];
        let expect = cfg.scheme.eps / (2.0 * cfg.scheme.dt_window) * cfg.scheme.dt_window * 0.09;
        assert!((w.ssp.trace_source - expect).abs() < 1e-12);
        assert!((tr.source0 - 0.5 * cfg.scheme.eps * 0.09).abs() < 1e-15);
    }

    #[test]
    fn cumulative_residual_telescopes() {
        let tr = run_simulation(&config(contact(0.0), 0.08)).unwrap();
        assert!(tr.is_complete());
        for (r, s) in tr.records.iter().zip(&tr.window_residual_sums) {
            assert!((r.energy_residual - s).abs() <= 1e-12 * (1.0 + r.energy()), "{} vs {}", r.energy_residual, s);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = config(contact(-0.01), 0.04);
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.checkpoints, b.checkpoints);
    }

    #[test]
    fn headroom_abort_keeps_partial_trajectory() {
        // strong upward pull drives the beam past M/2
        let mut cfg = config(contact(40.0), 1.0);
        cfg.output_every = 1000;
        let tr = run_simulation(&cfg).unwrap();
        let ab = tr.abort.as_ref().expect("run should abort");
        assert!(ab.message.contains("height_M"), "{}", ab.message);
        assert!(tr.checkpoints.len() > 1);
        assert!(tr.final_checkpoint().fluid.is_some());
        assert!(tr.records.last().unwrap().t > 0.0);
    }
}
