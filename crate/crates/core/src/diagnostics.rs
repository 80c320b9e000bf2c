//! Functionals evaluated on states and trajectories: the coupled energy
//! balance, the contact inequality term by term, the Hölder lower bound on the
//! pressure, the closed-form detachment bound and detachment detection.
//!
//! The contact inequality is tested against `φ = (0, zψ(x)/η)`. Every
//! space-time integrand is accumulated per beam column, so the localized form
//! with any time-constant weight ψ is available after the run; the global form
//! is the case ψ ≡ 1.

use crate::error::{Error, Result};
use crate::fluid::pressure;
use crate::grid::{periodic_derivative, BeamState, DerivOrder, FluidState, GridSpec, PhysParams, SchemeParams};

/// One row of the diagnostics time series.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    /// `½ ∫ρ|u|²`.
    pub fluid_kinetic: f64,
    /// `∫ρ^γ/(γ-1)` plus the regularization part.
    pub internal: f64,
    /// `(1-ε)/2 ∫|∂tη|²`, the scheme's structure inertia.
    pub beam_kinetic: f64,
    pub bending: f64,
    /// All physical dissipation of the coupled balance since t = 0.
    pub dissipation_cum: f64,
    /// `∫∫ F ∂tη`.
    pub work_cum: f64,
    /// `∫ ln η`, floored.
    pub ln_eta: f64,
    pub press_over_eta_cum: f64,
    pub vert_kin_over_eta_cum: f64,
    pub min_eta: f64,
    pub max_eta: f64,
    /// `∫∫|v - ∂tη e_z|²` since t = 0.
    pub coupling_residual: f64,
    pub clipped_mass_cum: f64,
    pub penalty_impulse_cum: f64,
    pub energy_residual: f64,
    pub contact_residual: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 18] = [
        "t",
        "mass",
        "fluid_kinetic",
        "internal",
        "beam_kinetic",
        "bending",
        "dissipation_cum",
        "work_cum",
        "ln_eta",
        "press_over_eta_cum",
        "vert_kin_over_eta_cum",
        "min_eta",
        "max_eta",
        "coupling_residual",
        "clipped_mass_cum",
        "penalty_impulse_cum",
        "energy_residual",
        "contact_residual",
    ];

    pub fn values(&self) -> [f64; 18] {
        [
            self.t,
            self.mass,
            self.fluid_kinetic,
            self.internal,
            self.beam_kinetic,
            self.bending,
            self.dissipation_cum,
            self.work_cum,
            self.ln_eta,
            self.press_over_eta_cum,
            self.vert_kin_over_eta_cum,
            self.min_eta,
            self.max_eta,
            self.coupling_residual,
            self.clipped_mass_cum,
            self.penalty_impulse_cum,
            self.energy_residual,
            self.contact_residual,
        ]
    }

    pub fn from_values(v: &[f64; 18]) -> Self {
        DiagnosticsRecord {
            t: v[0],
            mass: v[1],
            fluid_kinetic: v[2],
            internal: v[3],
            beam_kinetic: v[4],
            bending: v[5],
            dissipation_cum: v[6],
            work_cum: v[7],
            ln_eta: v[8],
            press_over_eta_cum: v[9],
            vert_kin_over_eta_cum: v[10],
            min_eta: v[11],
            max_eta: v[12],
            coupling_residual: v[13],
            clipped_mass_cum: v[14],
            penalty_impulse_cum: v[15],
            energy_residual: v[16],
            contact_residual: v[17],
        }
    }

    /// Total energy of the coupled system.
    pub fn energy(&self) -> f64 {
        self.fluid_kinetic + self.internal + self.beam_kinetic + self.bending
    }
}

/// `[E(t) + D(0,t)] - [E(0) + W(0,t) + S₀]`, where `S₀ = (ε/2)∫|v₀|²` is the
/// energy the first window's lagged trace injects.
pub fn energy_residual_of(rec: &DiagnosticsRecord, e0: f64, source0: f64) -> f64 {
    rec.energy() + rec.dissipation_cum - (e0 + rec.work_cum + source0)
}

/// Per-column integrands of the contact inequality at one instant. Every entry
/// already carries its `dx` weight, so sums over columns are integrals over Γ.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColumnIntegrals {
    /// `p/η`.
    pub press: Vec<f64>,
    /// `ρ u3²/η`.
    pub vert_kin: Vec<f64>,
    /// `ρ u3 z ∂tη/η²`.
    pub g1: Vec<f64>,
    /// `ρ u1 u3 z ∂xη/η²`.
    pub g2: Vec<f64>,
    /// `(∂z u1 + ∂x u3) z ∂xη/η²`.
    pub g4: Vec<f64>,
    /// `u1 ∂xη/η²`.
    pub g6: Vec<f64>,
    /// `ρ u1 u3 z/η`, paired with ∂xψ.
    pub a_conv: Vec<f64>,
    /// `(∂z u1 + ∂x u3) z/η`, paired with ∂xψ.
    pub a_shear: Vec<f64>,
    /// `u1/η`, paired with ∂xψ.
    pub a_horiz: Vec<f64>,
    /// `∂x²η`, paired with ∂x²ψ.
    pub bend: Vec<f64>,
    /// Outer force.
    pub force: Vec<f64>,
    /// Contact penalty force.
    pub penalty: Vec<f64>,
    /// Global integrands of the Cauchy–Schwarz caps, in the order
    /// `ρu3²/η, ρz²(∂tη)²/η³, ρu1²z²(∂xη)²/η³, |∂zu1+∂xu3|², z²(∂xη)²/η⁴, u1²/η², (∂xη)²/η²`.
    pub caps: [f64; 7],
    /// Number of column evaluations where η fell below the floor.
    pub floor_hits: u64,
}

impl ColumnIntegrals {
    pub fn zeros(nx: usize) -> Self {
        let z = vec![0.0; nx];
        ColumnIntegrals {
            press: z.clone(),
            vert_kin: z.clone(),
            g1: z.clone(),
            g2: z.clone(),
            g4: z.clone(),
            g6: z.clone(),
            a_conv: z.clone(),
            a_shear: z.clone(),
            a_horiz: z.clone(),
            bend: z.clone(),
            force: z.clone(),
            penalty: z,
            caps: [0.0; 7],
            floor_hits: 0,
        }
    }

    fn sampled_fields(&self) -> [&Vec<f64>; 10] {
        [
            &self.press,
            &self.vert_kin,
            &self.g1,
            &self.g2,
            &self.g4,
            &self.g6,
            &self.a_conv,
            &self.a_shear,
            &self.a_horiz,
            &self.bend,
        ]
    }

    fn sampled_fields_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.press,
            &mut self.vert_kin,
            &mut self.g1,
            &mut self.g2,
            &mut self.g4,
            &mut self.g6,
            &mut self.a_conv,
            &mut self.a_shear,
            &mut self.a_horiz,
            &mut self.bend,
        ]
    }

    /// Trapezoid step: adds `h/2 (a + b)` for the sampled integrands.
    pub fn add_trapezoid(&mut self, h: f64, a: &ColumnIntegrals, b: &ColumnIntegrals) {
        let fa = a.sampled_fields();
        let fb = b.sampled_fields();
        for (k, dst) in self.sampled_fields_mut().into_iter().enumerate() {
            for ((d, x), y) in dst.iter_mut().zip(fa[k]).zip(fb[k]) {
                *d += 0.5 * h * (x + y);
            }
        }
        for k in 0..7 {
            self.caps[k] += 0.5 * h * (a.caps[k] + b.caps[k]);
        }
        self.floor_hits += b.floor_hits;
    }

    /// Adds space-time integrals of the beam forces computed exactly per window.
    pub fn add_forces(&mut self, dx: f64, force_dt: &[f64], penalty_dt: &[f64]) {
        for i in 0..self.force.len() {
            self.force[i] += dx * force_dt[i];
            self.penalty[i] += dx * penalty_dt[i];
        }
    }
}

/// Quantities of the contact inequality taken at a single time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactEndpoint {
    pub t: f64,
    /// `ln η` (floored), times dx.
    pub ln_eta: Vec<f64>,
    /// `∫ ρ u3 z/η dz`, times dx.
    pub momentum: Vec<f64>,
    /// `∂tη`, times dx.
    pub eta_t: Vec<f64>,
}

#[inline]
fn floored(e: f64, floor: f64, hits: &mut u64) -> f64 {
    if e < floor {
        *hits += 1;
        floor
    } else {
        e
    }
}

/// Instantaneous integrands below the graph, cut-cell weighted.
pub fn contact_sample(
    fluid: &FluidState,
    beam: &BeamState,
    grid: &GridSpec,
    phys: &PhysParams,
    scheme: &SchemeParams,
) -> (ColumnIntegrals, ContactEndpoint) {
    let (nx, nz) = (grid.nx, grid.nz);
    let (dx, dz) = (grid.dx(), grid.dz());
    let mut s = ColumnIntegrals::zeros(nx);
    let mut end = ContactEndpoint {
        t: 0.0,
        ln_eta: vec![0.0; nx],
        momentum: vec![0.0; nx],
        eta_t: beam.eta_t.iter().map(|w| w * dx).collect(),
    };
    let eta_x = periodic_derivative(&beam.eta, dx, DerivOrder::First);
    let eta_xx = periodic_derivative(&beam.eta, dx, DerivOrder::Second);
    let shear = |i: usize, j: usize| -> f64 {
        let u1 = &fluid.u1;
        let dzu1 = if j == 0 {
            (u1[grid.idx(i, 1)] - u1[grid.idx(i, 0)]) / dz
        } else if j == nz {
            (u1[grid.idx(i, nz)] - u1[grid.idx(i, nz - 1)]) / dz
        } else {
            (u1[grid.idx(i, j + 1)] - u1[grid.idx(i, j - 1)]) / (2.0 * dz)
        };
        let dxu3 = (fluid.u3[grid.idx((i + 1) % nx, j)] - fluid.u3[grid.idx((i + nx - 1) % nx, j)]) / (2.0 * dx);
        dzu1 + dxu3
    };
    let mut hits = 0u64;
    for i in 0..nx {
        let e = floored(beam.eta[i], scheme.eta_floor, &mut hits);
        let (ex, et) = (eta_x[i], beam.eta_t[i]);
        end.ln_eta[i] = dx * e.ln();
        s.bend[i] = dx * eta_xx[i];
        let inv = 1.0 / e;
        for j in 0..grid.rows() {
            let w = grid.overlap_below(j, beam.eta[i].max(0.0));
            if w <= 0.0 {
                break;
            }
            let w = w * dx;
            let k = grid.idx(i, j);
            let (r, u1, u3) = (fluid.rho[k], fluid.u1[k], fluid.u3[k]);
            let z = grid.z(j);
            let sh = shear(i, j);
            s.press[i] += w * pressure(r, phys, scheme) * inv;
            s.vert_kin[i] += w * r * u3 * u3 * inv;
            s.g1[i] += w * r * u3 * z * et * inv * inv;
            s.g2[i] += w * r * u1 * u3 * z * ex * inv * inv;
            s.g4[i] += w * sh * z * ex * inv * inv;
            s.g6[i] += w * u1 * ex * inv * inv;
            s.a_conv[i] += w * r * u1 * u3 * z * inv;
            s.a_shear[i] += w * sh * z * inv;
            s.a_horiz[i] += w * u1 * inv;
            end.momentum[i] += w * r * u3 * z * inv;
            s.caps[0] += w * r * u3 * u3 * inv;
            s.caps[1] += w * r * z * z * et * et * inv * inv * inv;
            s.caps[2] += w * r * u1 * u1 * z * z * ex * ex * inv * inv * inv;
            s.caps[3] += w * sh * sh;
            s.caps[4] += w * z * z * ex * ex * inv * inv * inv * inv;
            s.caps[5] += w * u1 * u1 * inv * inv;
            s.caps[6] += w * ex * ex * inv * inv;
        }
    }
    s.floor_hits = hits;
    (s, end)
}

/// Term-by-term evaluation of the contact inequality on `[0, t]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TermBreakdown {
    pub t: f64,
    /// `∫∫ F ψ`.
    pub lhs_force: f64,
    /// `∫∫ F_con ψ`.
    pub lhs_penalty: f64,
    /// `∫∫ p ψ/η`.
    pub lhs_pressure: f64,
    /// `∫∫ ρ u3² ψ/η`.
    pub lhs_vert_kin: f64,
    /// `-(4μ/3+λ) ∫ ψ ln η(t)`.
    pub lhs_ln: f64,
    /// The eight right-hand-side groups: three convective, two shear, the
    /// horizontal compressive term, the initial logarithm and the
    /// boundary-in-time terms. The two y-groups vanish in 2D.
    pub groups: [f64; 8],
    /// Cauchy–Schwarz caps of each group.
    pub caps: [f64; 8],
    /// Terms carrying derivatives of ψ (zero for ψ ≡ 1).
    pub psi_terms: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub floor_hits: u64,
}

impl TermBreakdown {
    /// `|G_k| ≤ factor · cap_k` for every group, up to round-off.
    pub fn groups_within_caps(&self, factor: f64) -> bool {
        self.groups
            .iter()
            .zip(&self.caps)
            .all(|(g, c)| g.abs() <= factor * c + 1e-13 * (1.0 + c))
    }
}

/// Evaluates LHS − RHS of the contact inequality with weight ψ.
///
/// `start` and `end` are the endpoint quantities at 0 and t; `acc` holds the
/// space-time integrals over `[0, t]`.
pub fn contact_breakdown(
    start: &ContactEndpoint,
    end: &ContactEndpoint,
    acc: &ColumnIntegrals,
    psi: &[f64],
    grid: &GridSpec,
    phys: &PhysParams,
) -> TermBreakdown {
    let dx = grid.dx();
    let mu = phys.mu;
    let c_ln = phys.log_coeff();
    let c_h = phys.lambda - 2.0 * mu / 3.0;
    let psi_x = periodic_derivative(psi, dx, DerivOrder::First);
    let psi_xx = periodic_derivative(psi, dx, DerivOrder::Second);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let psi_max = psi.iter().fold(0.0f64, |m, p| m.max(p.abs()));

    let mut tb = TermBreakdown {
        t: end.t,
        lhs_force: dot(&acc.force, psi),
        lhs_penalty: dot(&acc.penalty, psi),
        lhs_pressure: dot(&acc.press, psi),
        lhs_vert_kin: dot(&acc.vert_kin, psi),
        lhs_ln: -c_ln * dot(&end.ln_eta, psi),
        floor_hits: acc.floor_hits,
        ..Default::default()
    };
    tb.groups[0] = dot(&acc.g1, psi);
    tb.groups[1] = dot(&acc.g2, psi);
    tb.groups[3] = -mu * dot(&acc.g4, psi);
    tb.groups[5] = c_h * dot(&acc.g6, psi);
    tb.groups[6] = -c_ln * dot(&start.ln_eta, psi);
    let b = [
        dot(&end.momentum, psi),
        -dot(&start.momentum, psi),
        dot(&end.eta_t, psi),
        -dot(&start.eta_t, psi),
    ];
    tb.groups[7] = b.iter().sum();
    tb.psi_terms = -dot(&acc.a_conv, &psi_x) + mu * dot(&acc.a_shear, &psi_x) - c_h * dot(&acc.a_horiz, &psi_x)
        + dot(&acc.bend, &psi_xx);

    let q = &acc.caps;
    tb.caps[0] = psi_max * (q[0] * q[1]).sqrt();
    tb.caps[1] = psi_max * (q[0] * q[2]).sqrt();
    tb.caps[3] = psi_max * mu * (q[3] * q[4]).sqrt();
    tb.caps[5] = psi_max * c_h.abs() * (q[5] * q[6]).sqrt();
    tb.caps[6] = c_ln * start.ln_eta.iter().zip(psi).map(|(l, p)| (l * p).abs()).sum::<f64>();
    tb.caps[7] = b.iter().map(|v| v.abs()).sum();

    tb.lhs = tb.lhs_force + tb.lhs_penalty + tb.lhs_pressure + tb.lhs_vert_kin + tb.lhs_ln;
    tb.rhs = tb.groups.iter().sum::<f64>() + tb.psi_terms;
    tb.residual = tb.lhs - tb.rhs;
    tb
}

/// `tol_contact = C (dt + dx + dz)(1 + T)`.
pub fn contact_tolerance(c: f64, scheme: &SchemeParams, grid: &GridSpec, t: f64) -> f64 {
    c * (scheme.dt_inner + grid.dx() + grid.dz()) * (1.0 + t)
}

/// Result of the Hölder lower bound on the pressure integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PressureBound {
    pub pass: bool,
    /// `∫_{Ω^η} ρ^γ`.
    pub integral: f64,
    /// `m^γ / (L |η|_∞)^{γ-1}`.
    pub bound: f64,
    pub margin: f64,
}

/// Checks `∫ρ^γ ≥ m^γ / (L |η|_∞)^{γ-1}` on the region below the graph.
///
/// `m` is the mass inside `Ω^η` (see [`mass_below`]); the cut-cell weights
/// make the discrete Hölder inequality exact, so only round-off is tolerated.
pub fn pressure_lower_bound_check(
    fluid: &FluidState,
    beam: &BeamState,
    m: f64,
    grid: &GridSpec,
    phys: &PhysParams,
) -> PressureBound {
    let g = phys.gamma;
    let dx = grid.dx();
    let mut integral = 0.0;
    for j in 0..grid.rows() {
        for i in 0..grid.nx {
            let w = grid.overlap_below(j, beam.eta[i].max(0.0));
            if w > 0.0 {
                integral += w * dx * fluid.rho[grid.idx(i, j)].powf(g);
            }
        }
    }
    let eta_inf = beam.eta.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    let bound = m.powf(g) / (grid.length_l * eta_inf).powf(g - 1.0);
    let margin = integral - bound;
    PressureBound { pass: margin >= -1e-12 * bound.max(1e-300), integral, bound, margin }
}

/// `∫_{Ω^η} ρ` with cut-cell weights.
pub fn mass_below(fluid: &FluidState, beam: &BeamState, grid: &GridSpec) -> f64 {
    let dx = grid.dx();
    let mut m = 0.0;
    for j in 0..grid.rows() {
        for i in 0..grid.nx {
            m += grid.overlap_below(j, beam.eta[i].max(0.0)) * dx * fluid.rho[grid.idx(i, j)];
        }
    }
    m
}

/// Lower bound on `max_t |η|_∞`:
/// `(T m^γ / (L^{γ-1} C (1+√T) - L^{γ-1} ∫∫F))^{1/γ}`.
pub fn detachment_bound(t: f64, m: f64, gamma: f64, l: f64, c_est: f64, force_integral: f64) -> Result<f64> {
    if !(c_est > 0.0) {
        return Err(Error::param("C", format!("C_est must be positive, got {c_est}")));
    }
    if !(t > 0.0 && m > 0.0 && gamma > 1.0 && l > 0.0) {
        return Err(Error::param("T", "T, m, L must be positive and gamma > 1"));
    }
    let lg = l.powf(gamma - 1.0);
    let den = lg * c_est * (1.0 + t.sqrt()) - lg * force_integral;
    if !(den > 0.0) {
        return Err(Error::BoundVacuous(den));
    }
    Ok((t * m.powf(gamma) / den).powf(1.0 / gamma))
}

/// Back-solves `C_est` so that `∫∫ρ^γ/η ≤ C(1+√T) - ∫∫F` is tight on a
/// measured run.
pub fn c_est_from_run(press_over_eta: f64, force_integral: f64, t: f64) -> Result<f64> {
    let c = (press_over_eta + force_integral) / (1.0 + t.max(0.0).sqrt());
    if c > 0.0 {
        Ok(c)
    } else {
        Err(Error::BoundVacuous(c))
    }
}

/// First time in `(t, min_eta)` samples with `min_eta > threshold`.
pub fn detect_detachment(series: &[(f64, f64)], threshold: f64) -> Option<f64> {
    series.iter().find(|(_, m)| *m > threshold).map(|(t, _)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> GridSpec {
        GridSpec::new(1.0, 1.0, 32, 32).unwrap()
    }

    fn phys() -> PhysParams {
        PhysParams { mu: 0.05, lambda: 0.0, gamma: 3.0 }
    }

    fn scheme() -> SchemeParams {
        SchemeParams {
            eps: 0.1,
            delta: 0.01,
            dt_window: 4e-3,
            dt_inner: 1e-3,
            kappa_contact: 1e-3,
            a_diff: 0.0,
            b_reg: 0.0,
            beta_reg: 4.0,
            eta_floor: 1e-12,
        }
    }

    #[test]
    fn bound_reference_value() {
        let b = detachment_bound(4.0, 1.0, 3.0, 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(b, (4.0f64 / 3.0).powf(1.0 / 3.0), epsilon = 1e-14);
        assert!((b - 1.10064).abs() < 5e-6);
    }

    #[test]
    fn bound_vacuous() {
        assert!(matches!(detachment_bound(4.0, 1.0, 3.0, 1.0, 1.0, 3.0), Err(Error::BoundVacuous(_))));
        assert!(detachment_bound(4.0, 1.0, 3.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn bound_monotonicity() {
        let f = |t, c, fi| detachment_bound(t, 1.0, 3.0, 1.0, c, fi).unwrap();
        assert!(f(8.0, 1.0, 0.0) > f(4.0, 1.0, 0.0));
        assert!(f(4.0, 2.0, 0.0) < f(4.0, 1.0, 0.0));
        assert!(f(4.0, 1.0, -5.0) < f(4.0, 1.0, -1.0));
        assert!(f(4.0, 1.0, -1e12) < 1e-3);
        // large T with a steady downward force
        let t = 1e12;
        let fl = -0.5;
        assert_relative_eq!(f(t, 1.0, fl * t), 1.0 / (0.5f64).powf(1.0 / 3.0), max_relative = 1e-5);
    }

    #[test]
    fn c_est_round_trip() {
        let c = c_est_from_run(3.0, -0.5, 4.0).unwrap();
        assert_relative_eq!(c * 3.0 - (-0.5), 3.0, epsilon = 1e-14);
        assert!(c_est_from_run(0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn pressure_bound_uniform_equality() {
        let g = grid();
        let p = phys();
        for &h in &[0.25, 0.3, 0.4321] {
            let f = FluidState::uniform(&g, 0.7);
            let b = BeamState::flat(&g, h);
            let m = mass_below(&f, &b, &g);
            let r = pressure_lower_bound_check(&f, &b, m, &g, &p);
            assert!(r.pass);
            assert!(r.margin.abs() <= 1e-10 * r.bound, "{r:?}");
        }
    }

    #[test]
    fn pressure_bound_concentration_monotone() {
        let g = grid();
        let p = phys();
        let b = BeamState::flat(&g, 0.5);
        let mut last = -1.0;
        for &s in &[0.0, 0.3, 0.6, 0.9] {
            // density tilted toward x < 1/2 as s grows
            let f = FluidState::at_rest(&g, g.sample(|x, _| 1.0 + s * if x < 0.5 { 1.0 } else { -1.0 }));
            let m = mass_below(&f, &b, &g);
            let r = pressure_lower_bound_check(&f, &b, m, &g, &p);
            assert!(r.pass);
            if s > 0.0 {
                assert!(r.margin > last);
            }
            last = r.margin;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn detect_examples() {
        let s = vec![(0.0, 0.3), (0.1, 0.3)];
        assert_eq!(detect_detachment(&s, 0.02), Some(0.0));
        let s = vec![(0.0, 0.0), (0.1, 0.0)];
        assert_eq!(detect_detachment(&s, 0.02), None);
    }

    #[test]
    fn contact_equilibrium_defect() {
        // uniform state held for time t: LHS = t L ρ^γ, RHS = 0
        let g = grid();
        let (p, s) = (phys(), scheme());
        let h = 0.3;
        let rho: f64 = 0.8;
        let f = FluidState::uniform(&g, rho);
        let b = BeamState::flat(&g, h);
        let (a, start) = contact_sample(&f, &b, &g, &p, &s);
        let t = 0.05;
        let mut acc = ColumnIntegrals::zeros(g.nx);
        acc.add_trapezoid(t, &a, &a);
        let end = ContactEndpoint { t, ..start.clone() };
        let tb = contact_breakdown(&start, &end, &acc, &vec![1.0; g.nx], &g, &p);
        assert_relative_eq!(tb.residual, t * rho.powi(3), max_relative = 1e-12);
        assert!(tb.groups.iter().enumerate().all(|(k, v)| k == 6 || v.abs() < 1e-14));
        // ln terms cancel when η(t) = η₀
        assert_relative_eq!(tb.lhs_ln - tb.groups[6], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn localized_unit_weight_matches_global() {
        let g = grid();
        let (p, s) = (phys(), scheme());
        let f = FluidState {
            rho: g.sample(|x, z| 1.0 + 0.3 * (6.0 * x).sin() * z),
            u1: g.sample(|x, z| z * (0.5 - z) * (std::f64::consts::TAU * x).cos()),
            u3: g.sample(|x, z| z * (0.2 + 0.1 * (std::f64::consts::TAU * x).sin())),
        };
        let b = BeamState {
            eta: g.sample_1d(|x| 0.3 + 0.1 * (std::f64::consts::TAU * x).sin()),
            eta_t: g.sample_1d(|x| 0.2 * (std::f64::consts::TAU * x).cos()),
        };
        let (a, start) = contact_sample(&f, &b, &g, &p, &s);
        let mut acc = ColumnIntegrals::zeros(g.nx);
        acc.add_trapezoid(0.1, &a, &a);
        let end = ContactEndpoint { t: 0.1, ..start.clone() };
        let one = contact_breakdown(&start, &end, &acc, &vec![1.0; g.nx], &g, &p);
        assert_eq!(one.psi_terms, 0.0);
        assert!(one.groups_within_caps(1.0));
        let psi: Vec<f64> = g.sample_1d(|x| 1.0 + 0.5 * (std::f64::consts::TAU * x).cos());
        let loc = contact_breakdown(&start, &end, &acc, &psi, &g, &p);
        assert!(loc.psi_terms != 0.0);
        assert!(loc.groups_within_caps(1.0));
    }
}
