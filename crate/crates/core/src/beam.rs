//! Structure sub-step: the periodic beam with bending, ε-viscoelasticity, the
//! lagged kinematic-coupling penalty, the contact penalty and the outer force.
//!
//! Each inner step solves, for the new velocity `w'` with `η' = η + dt w'`,
//!
//! ```text
//! (1-ε)(w'-w)/dt + (ε/Δt)(w' - Tv) - ε D2 w' + D4 η' = P(w') + F
//! ```
//!
//! The bending and viscoelastic operators are constant and circulant, so their
//! inverse is precomputed once. The contact penalty `P = (1/κ) χ_{η<δ} (w')⁻`
//! is implicit in `w'` through a small active-set loop (Woodbury correction on
//! the active nodes); the indicator uses η at the start of the step.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{forward_difference, norm2_1d, periodic_derivative, BeamState, DerivOrder, GridSpec, SchemeParams};

/// Forcing frozen over one window.
#[derive(Clone, Debug)]
pub struct BeamForcing {
    /// Outer force per unit length (positive pushes up).
    pub outer_f: Vec<f64>,
    /// Vertical fluid trace of the previous window, one field per inner step.
    /// A single entry is reused for every step.
    pub lagged_trace_v3: Vec<Vec<f64>>,
}

impl BeamForcing {
    pub fn steady(outer_f: Vec<f64>, lagged_trace_v3: Vec<f64>) -> Self {
        BeamForcing { outer_f, lagged_trace_v3: vec![lagged_trace_v3] }
    }

    fn trace(&self, k: usize) -> &[f64] {
        &self.lagged_trace_v3[k.min(self.lagged_trace_v3.len() - 1)]
    }
}

/// `(1/κ) χ_{η<δ} (∂tη)⁻`: upward, and only against downward motion.
pub fn contact_penalty(eta: &[f64], eta_t: &[f64], delta: f64, kappa: f64) -> Vec<f64> {
    eta.iter()
        .zip(eta_t)
        .map(|(&e, &w)| if e < delta { (-w).max(0.0) / kappa } else { 0.0 })
        .collect()
}

/// Energy ledger of one structure window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SspWindowReport {
    /// `(1-ε)/2 ∫|∂tη|²` at window start.
    pub start_kinetic: f64,
    /// `½ ∫|∂x²η|²` at window start.
    pub start_bending: f64,
    pub end_kinetic: f64,
    pub end_bending: f64,
    /// `(ε/2Δt) ∫∫|∂tη - Tv|²`.
    pub coupling_dissipation: f64,
    /// `(ε/2Δt) ∫∫|∂tη|²`.
    pub velocity_dissipation: f64,
    /// `ε ∫∫|∂x∂tη|²`.
    pub viscoelastic_dissipation: f64,
    /// `-∫∫ P ∂tη`, non-negative.
    pub contact_dissipation: f64,
    /// `(ε/2Δt) ∫∫|Tv|²`.
    pub trace_source: f64,
    /// `∫∫ F ∂tη`.
    pub work: f64,
    /// `∫∫ F`.
    pub force_integral: f64,
    /// `∫∫ P`, the discrete contact-force mass.
    pub penalty_impulse: f64,
    /// `∫ P dt` per beam node.
    pub penalty_impulse_cols: Vec<f64>,
    /// Backward-Euler increments `(1-ε)/2 ∫|Δw|² + ½ ∫|D2 Δη|²`.
    pub numerical_dissipation: f64,
    /// Smallest η seen at any inner step.
    pub min_eta: f64,
    pub max_eta: f64,
    /// Largest penalty value over the window.
    pub max_penalty: f64,
    /// Smallest penalty value (must be ≥ 0).
    pub min_penalty: f64,
    /// Largest pointwise `P ∂tη` (must be ≤ 0).
    pub max_penalty_power: f64,
    /// η after each inner step.
    pub eta_steps: Vec<Vec<f64>>,
    /// ∂tη after each inner step.
    pub eta_t_steps: Vec<Vec<f64>>,
}

impl SspWindowReport {
    pub fn start_energy(&self) -> f64 {
        self.start_kinetic + self.start_bending
    }

    pub fn end_energy(&self) -> f64 {
        self.end_kinetic + self.end_bending
    }

    pub fn dissipation(&self) -> f64 {
        self.coupling_dissipation
            + self.velocity_dissipation
            + self.viscoelastic_dissipation
            + self.contact_dissipation
    }
}

/// Outcome of a one-sided energy check; `residual = LHS - RHS`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyCheck {
    pub pass: bool,
    pub residual: f64,
}

/// End energy + dissipation ≤ start energy + trace source + work + tol, with
/// every dissipation entry non-negative.
pub fn check_ssp_energy(report: &SspWindowReport, tol: f64) -> EnergyCheck {
    let residual = report.end_energy() + report.dissipation()
        - (report.start_energy() + report.trace_source + report.work);
    let signs = report.coupling_dissipation >= 0.0
        && report.velocity_dissipation >= 0.0
        && report.viscoelastic_dissipation >= 0.0
        && report.contact_dissipation >= 0.0;
    EnergyCheck { pass: signs && residual <= tol, residual }
}

/// `(1-ε)/2 ∫|∂tη|²` and `½ ∫|∂x²η|²`.
pub fn beam_energy(beam: &BeamState, eps: f64, dx: f64) -> (f64, f64) {
    let d2 = periodic_derivative(&beam.eta, dx, DerivOrder::Second);
    (0.5 * (1.0 - eps) * norm2_1d(&beam.eta_t, dx), 0.5 * norm2_1d(&d2, dx))
}

/// Inverse of the circulant operator `c0 I - c2 D2 + c4 D4`.
#[derive(Clone, Debug)]
struct CirculantInverse {
    /// First column of the inverse.
    col: Vec<f64>,
}

impl CirculantInverse {
    fn new(n: usize, dx: f64, c0: f64, c2: f64, c4: f64) -> Self {
        let lam: Vec<f64> = (0..n)
            .map(|k| {
                let s = 2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos();
                c0 + c2 * s / (dx * dx) + c4 * s * s / (dx * dx * dx * dx)
            })
            .collect();
        let col = (0..n)
            .map(|j| {
                let s: f64 = lam
                    .iter()
                    .enumerate()
                    .map(|(k, l)| (2.0 * PI * ((k * j) % n) as f64 / n as f64).cos() / l)
                    .sum();
                s / n as f64
            })
            .collect();
        CirculantInverse { col }
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        let n = self.col.len();
        self.col[(i + n - j) % n]
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for (j, rj) in r.iter().enumerate() {
                    s += self.col[(i + n - j) % n] * rj;
                }
                s
            })
            .collect()
    }
}

/// Cholesky solve of a small dense SPD system, in place.
fn solve_spd(a: &mut [f64], n: usize, b: &mut [f64]) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::Instability("contact active-set system not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

const MAX_ACTIVE_SET_ITERS: usize = 50;

/// Reusable structure stepper for a fixed grid and scheme.
#[derive(Clone, Debug)]
pub struct BeamSolver {
    nx: usize,
    dx: f64,
    eps: f64,
    delta: f64,
    kappa: f64,
    dt: f64,
    dt_window: f64,
    inv: CirculantInverse,
}

impl BeamSolver {
    pub fn new(grid: &GridSpec, scheme: &SchemeParams) -> Self {
        let (eps, dt) = (scheme.eps, scheme.dt_inner);
        let c0 = (1.0 - eps) / dt + eps / scheme.dt_window;
        BeamSolver {
            nx: grid.nx,
            dx: grid.dx(),
            eps,
            delta: scheme.delta,
            kappa: scheme.kappa_contact,
            dt,
            dt_window: scheme.dt_window,
            inv: CirculantInverse::new(grid.nx, grid.dx(), c0, eps, dt),
        }
    }

    /// Solves `(A + (1/κ) P_S) w = r`; returns `w` and the active set used.
    fn solve_with_contact(&self, r: &[f64], eta: &[f64], w_old: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
        let base = self.inv.apply(r);
        let candidates: Vec<usize> = (0..self.nx).filter(|&i| eta[i] < self.delta).collect();
        if candidates.is_empty() {
            return Ok((base, Vec::new()));
        }
        let mut active: Vec<usize> = candidates.iter().copied().filter(|&i| w_old[i] < 0.0).collect();
        let mut w = base.clone();
        for _ in 0..MAX_ACTIVE_SET_ITERS {
            w = base.clone();
            let m = active.len();
            if m > 0 {
                let mut g = vec![0.0; m * m];
                for (p, &a) in active.iter().enumerate() {
                    for (q, &b) in active.iter().enumerate() {
                        g[p * m + q] = self.inv.entry(a, b);
                    }
                    g[p * m + p] += self.kappa;
                }
                let mut y: Vec<f64> = active.iter().map(|&a| base[a]).collect();
                solve_spd(&mut g, m, &mut y)?;
                for (i, wi) in w.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (q, &b) in active.iter().enumerate() {
                        s += self.inv.entry(i, b) * y[q];
                    }
                    *wi -= s;
                }
            }
            let next: Vec<usize> = candidates.iter().copied().filter(|&i| w[i] < 0.0).collect();
            if next == active {
                break;
            }
            active = next;
        }
        Ok((w, active))
    }

    /// Advances one window of `window_steps` inner steps.
    pub fn step(
        &self,
        beam: &BeamState,
        forcing: &BeamForcing,
        window_steps: usize,
    ) -> Result<(BeamState, SspWindowReport)> {
        let (dx, dt, eps) = (self.dx, self.dt, self.eps);
        let c_pen = eps / (2.0 * self.dt_window);
        let (k0, b0) = beam_energy(beam, eps, dx);
        let mut rep = SspWindowReport {
            start_kinetic: k0,
            start_bending: b0,
            min_eta: beam.min_eta(),
            max_eta: beam.max_eta(),
            min_penalty: 0.0,
            max_penalty_power: 0.0,
            penalty_impulse_cols: vec![0.0; self.nx],
            ..Default::default()
        };
        let mut eta = beam.eta.clone();
        let mut w = beam.eta_t.clone();
        let f = &forcing.outer_f;
        for k in 0..window_steps {
            let tv = forcing.trace(k);
            let d4 = periodic_derivative(&eta, dx, DerivOrder::Fourth);
            let r: Vec<f64> = (0..self.nx)
                .map(|i| (1.0 - eps) * w[i] / dt + eps / self.dt_window * tv[i] - d4[i] + f[i])
                .collect();
            let (w_new, active) = self.solve_with_contact(&r, &eta, &w)?;
            let mut pen = vec![0.0; self.nx];
            for &a in &active {
                pen[a] = -w_new[a] / self.kappa;
            }
            let eta_new: Vec<f64> = eta.iter().zip(&w_new).map(|(e, v)| e + dt * v).collect();
            if eta_new.iter().chain(&w_new).any(|v| !v.is_finite()) {
                return Err(Error::Instability(format!(
                    "non-finite beam state at inner step {k}; reduce dt_inner (CFL)"
                )));
            }

            let dxw = forward_difference(&w_new, dx);
            let dw: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
            let deta: Vec<f64> = eta_new.iter().zip(&eta).map(|(a, b)| a - b).collect();
            let d2deta = periodic_derivative(&deta, dx, DerivOrder::Second);
            let mut coup = 0.0;
            let mut vel = 0.0;
            let mut src = 0.0;
            let mut work = 0.0;
            let mut force = 0.0;
            let mut cdiss = 0.0;
            let mut imp = 0.0;
            for i in 0..self.nx {
                coup += (w_new[i] - tv[i]).powi(2);
                vel += w_new[i] * w_new[i];
                src += tv[i] * tv[i];
                work += f[i] * w_new[i];
                force += f[i];
                let power = pen[i] * w_new[i];
                cdiss -= power;
                imp += pen[i];
                rep.penalty_impulse_cols[i] += dt * pen[i];
                rep.max_penalty = rep.max_penalty.max(pen[i]);
                rep.min_penalty = rep.min_penalty.min(pen[i]);
                rep.max_penalty_power = rep.max_penalty_power.max(power);
            }
            let s = dt * dx;
            rep.coupling_dissipation += c_pen * s * coup;
            rep.velocity_dissipation += c_pen * s * vel;
            rep.trace_source += c_pen * s * src;
            rep.work += s * work;
            rep.force_integral += s * force;
            rep.contact_dissipation += s * cdiss;
            rep.penalty_impulse += s * imp;
            rep.viscoelastic_dissipation += eps * dt * norm2_1d(&dxw, dx);
            rep.numerical_dissipation +=
                0.5 * (1.0 - eps) * norm2_1d(&dw, dx) + 0.5 * norm2_1d(&d2deta, dx);

            eta = eta_new;
            w = w_new;
            rep.min_eta = rep.min_eta.min(eta.iter().copied().fold(f64::INFINITY, f64::min));
            rep.max_eta = rep.max_eta.max(eta.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            rep.eta_steps.push(eta.clone());
            rep.eta_t_steps.push(w.clone());
        }
        let out = BeamState { eta, eta_t: w };
        let (k1, b1) = beam_energy(&out, eps, dx);
        rep.end_kinetic = k1;
        rep.end_bending = b1;
        Ok((out, rep))
    }
}

/// One structure window with a freshly assembled solver.
pub fn step_ssp(
    beam: &BeamState,
    forcing: &BeamForcing,
    grid: &GridSpec,
    scheme: &SchemeParams,
    window_steps: usize,
) -> Result<(BeamState, SspWindowReport)> {
    BeamSolver::new(grid, scheme).step(beam, forcing, window_steps)
}
