//! Initial data and forcing for the standard settings: the fluid at rest in
//! equilibrium, a beam touching the floor with pressure and a (possibly
//! negative) outer force acting on it, and a localized hat force pulling the
//! contact point up.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fluid::total_mass;
use crate::grid::{integrate_1d, BeamState, FluidState, GridSpec, PhysParams, SchemeParams};

/// Separable outer force `F(t, x) = profile(x) e^{-rate t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceSpec {
    pub profile: Vec<f64>,
    pub decay_rate: f64,
}

impl ForceSpec {
    pub fn zero(grid: &GridSpec) -> Self {
        ForceSpec { profile: grid.zeros_1d(), decay_rate: 0.0 }
    }

    pub fn steady(profile: Vec<f64>) -> Self {
        ForceSpec { profile, decay_rate: 0.0 }
    }

    /// Time average of F over `[t0, t1]`, the value frozen on one window.
    pub fn window_average(&self, t0: f64, t1: f64) -> Vec<f64> {
        let r = self.decay_rate;
        let factor = if r == 0.0 || t1 <= t0 {
            (-r * t0).exp()
        } else {
            ((-r * t0).exp() - (-r * t1).exp()) / (r * (t1 - t0))
        };
        self.profile.iter().map(|f| f * factor).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.profile.iter().all(|&f| f >= 0.0)
    }
}

/// Whether the analytic detachment guarantee covers the chosen parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Guarantee {
    Covered,
    NoGuarantee(String),
}

/// What a scenario run is meant to show.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// Fixed point; nothing should move.
    Equilibrium,
    /// First time with `min_x η > threshold`.
    Detachment { threshold: f64 },
    /// First time with `η(x_i) > threshold` at the contact node.
    ContactPoint { node: usize, threshold: f64 },
}

/// Fully built initial data plus forcing.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub id: String,
    pub beam0: BeamState,
    pub fluid0: FluidState,
    /// Initial structure velocity, the lagged trace of the first window.
    pub v0: Vec<f64>,
    pub force: ForceSpec,
    pub guarantee: Guarantee,
    pub target: Target,
}

/// Geometry and mass of the contact initial data.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactSpec {
    pub h_max: f64,
    pub x0: f64,
    pub m_target: f64,
}

impl Default for ContactSpec {
    fn default() -> Self {
        ContactSpec { h_max: 0.2, x0: 0.5, m_target: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Theorem2Variant {
    /// Uniform `F = amplitude e^{-rate t}`; `rate > 0` or `amplitude = 0`.
    DecayingForce { amplitude: f64, rate: f64 },
    /// Uniform steady force with `∫F = total_f`.
    ConstantForce { total_f: f64 },
}

/// Scenario selection as read from a config file.
#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioSpec {
    Equilibrium { height: f64, rho: f64 },
    Theorem2 { variant: Theorem2Variant, contact: ContactSpec, a_height: f64 },
    Theorem3 { kappa: f64, alpha: f64, c_holder: f64, contact: ContactSpec },
}

impl ScenarioSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ScenarioSpec::Equilibrium { .. } => "equilibrium",
            ScenarioSpec::Theorem2 { .. } => "theorem2",
            ScenarioSpec::Theorem3 { .. } => "theorem3",
        }
    }

    pub fn build(&self, grid: &GridSpec, phys: &PhysParams, scheme: &SchemeParams) -> Result<Scenario> {
        match self {
            ScenarioSpec::Equilibrium { height, rho } => equilibrium_scenario(grid, scheme, *height, *rho),
            ScenarioSpec::Theorem2 { variant, contact, a_height } => {
                theorem2_scenario(grid, phys, scheme, variant, contact, *a_height)
            }
            ScenarioSpec::Theorem3 { kappa, alpha, c_holder, contact } => {
                theorem3_scenario(grid, scheme, *kappa, *alpha, *c_holder, contact)
            }
        }
    }
}

fn periodic_distance(x: f64, x0: f64, l: f64) -> f64 {
    let d = (x - x0).rem_euclid(l);
    d.min(l - d)
}

/// `σ f_κ(x - x0)` with the unit-mass triangle `f_κ(r) = (κ - |r|)₊ / κ²`.
pub fn hat_force(grid: &GridSpec, x0: f64, kappa: f64, sigma: f64) -> Result<Vec<f64>> {
    let l = grid.length_l;
    if !(kappa > 0.0 && kappa < 0.5 * l) {
        return Err(Error::param("kappa", format!("hat width must lie in (0, L/2), got {kappa}")));
    }
    Ok(grid.sample_1d(|x| sigma * (kappa - periodic_distance(x, x0, l)).max(0.0) / (kappa * kappa)))
}

/// Amplitude making the hat force's injected work bounded:
/// `σ² = (α+1)²(α+2)² / (2 C² κ^α)`.
pub fn sigma_for_kappa(kappa: f64, alpha: f64, c_holder: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::param("kappa", format!("must lie in (0, 1), got {kappa}")));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::param("alpha", format!("must lie in (0, 1/2), got {alpha}")));
    }
    if !(c_holder > 0.0) {
        return Err(Error::param("c_holder", format!("must be positive, got {c_holder}")));
    }
    let s2 = (alpha + 1.0).powi(2) * (alpha + 2.0).powi(2) / (2.0 * c_holder * c_holder * kappa.powf(alpha));
    Ok(s2.sqrt())
}

/// Cosine profile touching down at `x0` lifted by δ, with uniform density of
/// total mass `m_target` below it and everything at rest.
///
/// Nodes whose control volume is cut by the graph get the filled fraction of
/// the density, so the discrete mass equals `ρ̄ · |Ω^η|` exactly.
pub fn build_contact_initial_data(
    grid: &GridSpec,
    h_max: f64,
    x0: f64,
    m_target: f64,
    delta: f64,
) -> Result<(BeamState, FluidState)> {
    if !(h_max > 0.0) {
        return Err(Error::param("h_max", "must be positive"));
    }
    if !(m_target > 0.0) {
        return Err(Error::param("m_target", "must be positive"));
    }
    let half = 0.5 * grid.height_m;
    if h_max + delta > half {
        return Err(Error::param(
            "h_max",
            format!("h_max + delta = {} exceeds M/2 = {half}; no headroom for the mask", h_max + delta),
        ));
    }
    let l = grid.length_l;
    let eta = grid.sample_1d(|x| h_max * (1.0 - (2.0 * PI * (x - x0) / l).cos()) / 2.0 + delta);
    let mut fill = grid.zeros();
    for j in 0..grid.rows() {
        let h = grid.cv_height(j);
        for (i, &e) in eta.iter().enumerate() {
            fill[grid.idx(i, j)] = grid.overlap_below(j, e) / h;
        }
    }
    let probe = FluidState::at_rest(grid, fill);
    let area = total_mass(&probe, grid);
    let rho: Vec<f64> = probe.rho.iter().map(|f| f * m_target / area).collect();
    Ok((BeamState::at_rest(eta), FluidState::at_rest(grid, rho)))
}

/// Uniform density filling the whole rectangle under a flat beam.
pub fn equilibrium_scenario(grid: &GridSpec, scheme: &SchemeParams, height: f64, rho: f64) -> Result<Scenario> {
    if !(height > scheme.delta && height <= 0.5 * grid.height_m) {
        return Err(Error::param("height", format!("must lie in (delta, M/2], got {height}")));
    }
    if !(rho > 0.0) {
        return Err(Error::param("rho", "must be positive"));
    }
    Ok(Scenario {
        id: "equilibrium".into(),
        beam0: BeamState::flat(grid, height),
        fluid0: FluidState::uniform(grid, rho),
        v0: grid.zeros_1d(),
        force: ForceSpec::zero(grid),
        guarantee: Guarantee::Covered,
        target: Target::Equilibrium,
    })
}

/// Threshold `A = m^γ / (L^{γ-1} H^γ)`: a steady total force above `-A` keeps
/// the long-time mean height above `H`.
pub fn force_threshold(m: f64, gamma: f64, l: f64, h: f64) -> f64 {
    m.powf(gamma) / (l.powf(gamma - 1.0) * h.powf(gamma))
}

/// Contact data under pressure with a uniform outer force.
pub fn theorem2_scenario(
    grid: &GridSpec,
    phys: &PhysParams,
    scheme: &SchemeParams,
    variant: &Theorem2Variant,
    contact: &ContactSpec,
    a_height: f64,
) -> Result<Scenario> {
    let (beam0, fluid0) = build_contact_initial_data(grid, contact.h_max, contact.x0, contact.m_target, scheme.delta)?;
    let l = grid.length_l;
    let (force, guarantee) = match *variant {
        Theorem2Variant::DecayingForce { amplitude, rate } => {
            if rate < 0.0 || (rate == 0.0 && amplitude != 0.0) {
                return Err(Error::param("rate", "a decaying force needs rate > 0 (or zero amplitude)"));
            }
            let f = ForceSpec { profile: vec![amplitude; grid.nx], decay_rate: rate };
            (f, Guarantee::Covered)
        }
        Theorem2Variant::ConstantForce { total_f } => {
            if !(a_height > 0.0) {
                return Err(Error::param("a_height", "must be positive"));
            }
            let a = force_threshold(contact.m_target, phys.gamma, l, a_height);
            let g = if total_f > -a {
                Guarantee::Covered
            } else {
                Guarantee::NoGuarantee(format!("total force {total_f} <= -A = {:.6e}", -a))
            };
            (ForceSpec::steady(vec![total_f / l; grid.nx]), g)
        }
    };
    Ok(Scenario {
        id: "theorem2".into(),
        beam0,
        fluid0,
        v0: grid.zeros_1d(),
        force,
        guarantee,
        target: Target::Detachment { threshold: 2.0 * scheme.delta },
    })
}

/// Contact data with the hat force `σ(κ) f_κ` centered on the touch-down point.
pub fn theorem3_scenario(
    grid: &GridSpec,
    scheme: &SchemeParams,
    kappa: f64,
    alpha: f64,
    c_holder: f64,
    contact: &ContactSpec,
) -> Result<Scenario> {
    let sigma = sigma_for_kappa(kappa, alpha, c_holder)?;
    let profile = hat_force(grid, contact.x0, kappa, sigma)?;
    let (beam0, fluid0) = build_contact_initial_data(grid, contact.h_max, contact.x0, contact.m_target, scheme.delta)?;
    let node = (contact.x0 / grid.dx()).round() as usize % grid.nx;
    Ok(Scenario {
        id: "theorem3".into(),
        beam0,
        fluid0,
        v0: grid.zeros_1d(),
        force: ForceSpec::steady(profile),
        guarantee: Guarantee::Covered,
        target: Target::ContactPoint { node, threshold: 2.0 * scheme.delta },
    })
}

/// Outcome of the initial-data admissibility checklist.
#[derive(Clone, Debug, PartialEq)]
pub struct Checklist {
    pub min_eta: f64,
    pub min_rho: f64,
    pub mass: f64,
    /// `∫ ln η₀`.
    pub ln_eta: f64,
    /// Largest `|ρu|` on nodes with zero density.
    pub dry_momentum: f64,
    pub pass: bool,
}

/// η₀ ≥ δ, ρ₀ ≥ 0, m > 0, `∫ ln η₀` finite and no momentum without density.
pub fn initial_data_checklist(scenario: &Scenario, grid: &GridSpec, scheme: &SchemeParams) -> Checklist {
    let b = &scenario.beam0;
    let f = &scenario.fluid0;
    let min_eta = b.min_eta();
    let min_rho = f.rho.iter().copied().fold(f64::INFINITY, f64::min);
    let mass = total_mass(f, grid);
    let ln: Vec<f64> = b.eta.iter().map(|e| e.max(scheme.eta_floor).ln()).collect();
    let ln_eta = integrate_1d(&ln, grid.dx());
    let mut dry_momentum: f64 = 0.0;
    for k in 0..grid.len() {
        if f.rho[k] == 0.0 {
            dry_momentum = dry_momentum.max(f.u1[k].abs()).max(f.u3[k].abs());
        }
    }
    let pass = min_eta >= scheme.delta * (1.0 - 1e-12)
        && min_rho >= 0.0
        && mass > 0.0
        && ln_eta.is_finite()
        && dry_momentum == 0.0;
    Checklist { min_eta, min_rho, mass, ln_eta, dry_momentum, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(nx: usize, nz: usize) -> GridSpec {
        GridSpec::new(1.0, 1.0, nx, nz).unwrap()
    }

    fn scheme() -> SchemeParams {
        SchemeParams {
            eps: 0.1,
            delta: 0.01,
            dt_window: 4e-3,
            dt_inner: 1e-3,
            kappa_contact: 1e-3,
            a_diff: 1e-4,
            b_reg: 0.0,
            beta_reg: 4.0,
            eta_floor: 1e-12,
        }
    }

    #[test]
    fn hat_force_shape() {
        let g = grid(200, 8);
        for &k in &[0.2, 0.1, 0.05] {
            let f = hat_force(&g, 0.5, k, 1.0).unwrap();
            assert_relative_eq!(integrate_1d(&f, g.dx()), 1.0, epsilon = 1e-9);
            assert_relative_eq!(f[100], 1.0 / k, epsilon = 1e-9);
            assert!(f.iter().all(|&v| v >= 0.0));
            for (i, &v) in f.iter().enumerate() {
                if (g.x(i) - 0.5).abs() >= k + 1e-9 {
                    assert_eq!(v, 0.0);
                } else if (g.x(i) - 0.5).abs() >= k - 1e-9 {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
        let g = grid(64, 8);
        let f = hat_force(&g, 0.0, 0.1, 2.5).unwrap();
        assert_relative_eq!(f[0], 25.0, epsilon = 1e-12);
        assert_relative_eq!(f[1] , f[63], epsilon = 1e-12);
        assert!(hat_force(&g, 0.5, 0.6, 1.0).is_err());
    }

    #[test]
    fn hat_force_integral_off_grid() {
        // kinks off the nodes: the rectangle rule converges at second order
        let errs: Vec<f64> = [101, 203, 407]
            .iter()
            .map(|&n| {
                let g = grid(n, 8);
                let f = hat_force(&g, 0.4321, 0.13, 1.0).unwrap();
                (integrate_1d(&f, g.dx()) - 1.0).abs()
            })
            .collect();
        assert!(errs.iter().all(|&e| e < 2e-3), "{errs:?}");
    }

    #[test]
    fn sigma_examples() {
        let s = sigma_for_kappa(1.0 - 1e-15, 0.25, 1.0).unwrap();
        assert_relative_eq!(s * s, 3.955078125, epsilon = 1e-12);
        let a = sigma_for_kappa(0.2, 0.25, 1.0).unwrap();
        let b = sigma_for_kappa(0.1, 0.25, 1.0).unwrap();
        assert_relative_eq!((b * b) / (a * a), 2f64.powf(0.25), epsilon = 1e-12);
        let seq: Vec<f64> = (1..12).map(|k| sigma_for_kappa(0.5f64.powi(k), 0.25, 1.0).unwrap()).collect();
        assert!(seq.windows(2).all(|w| w[1] > w[0]));
        assert!(sigma_for_kappa(1.0, 0.25, 1.0).is_err());
        assert!(sigma_for_kappa(0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn contact_data_examples() {
        let g = grid(64, 32);
        let (b, f) = build_contact_initial_data(&g, 0.2, 0.5, 0.02, 0.01).unwrap();
        assert_relative_eq!(b.min_eta(), 0.01, epsilon = 1e-15);
        assert_relative_eq!(b.eta[32], 0.01, epsilon = 1e-15);
        assert_relative_eq!(total_mass(&f, &g), 0.02, max_relative = 1e-12);
        assert!(f.u1.iter().chain(&f.u3).all(|&v| v == 0.0));
        assert!(build_contact_initial_data(&g, 0.495, 0.5, 0.02, 0.01).is_err());
    }

    #[test]
    fn ln_eta_finite_under_refinement() {
        // ∫ ln((1 - cos 2πx)/2) dx = -2 ln 2 on the unit torus
        let exact = -2.0 * 2f64.ln();
        let mut errs = Vec::new();
        for &n in &[64usize, 128, 256] {
            let g = grid(n, 8);
            let (b, _) = build_contact_initial_data(&g, 1.0 / 2.0 - 1e-9, 0.5 + 0.5 / n as f64, 0.1, 0.0).unwrap();
            let ln: Vec<f64> = b.eta.iter().map(|e| (2.0 * e).max(1e-12).ln()).collect();
            let v = integrate_1d(&ln, g.dx());
            assert!(v.is_finite());
            errs.push((v - exact).abs());
        }
        assert!(errs[2] < errs[0], "{errs:?}");
        assert!(errs[2] < 0.05);
    }

    #[test]
    fn theorem2_variants() {
        let g = grid(32, 32);
        let p = PhysParams { mu: 0.05, lambda: 0.0, gamma: 3.0 };
        let s = scheme();
        let c = ContactSpec::default();
        let zero = theorem2_scenario(&g, &p, &s, &Theorem2Variant::DecayingForce { amplitude: 0.0, rate: 0.0 }, &c, 0.25)
            .unwrap();
        assert!(zero.force.profile.iter().all(|&f| f == 0.0));
        assert_eq!(zero.guarantee, Guarantee::Covered);
        let a = force_threshold(c.m_target, 3.0, 1.0, 0.25);
        let ok = theorem2_scenario(&g, &p, &s, &Theorem2Variant::ConstantForce { total_f: 0.0 }, &c, 0.25).unwrap();
        assert_eq!(ok.guarantee, Guarantee::Covered);
        let bad =
            theorem2_scenario(&g, &p, &s, &Theorem2Variant::ConstantForce { total_f: -2.0 * a }, &c, 0.25).unwrap();
        assert!(matches!(bad.guarantee, Guarantee::NoGuarantee(_)));
        assert!(initial_data_checklist(&ok, &g, &s).pass);
    }

    #[test]
    fn theorem3_force_support() {
        let g = grid(128, 32);
        let s = scheme();
        let sc = theorem3_scenario(&g, &s, 0.1, 0.25, 1.0, &ContactSpec::default()).unwrap();
        assert!(sc.force.is_nonnegative());
        for (i, &f) in sc.force.profile.iter().enumerate() {
            if (g.x(i) - 0.5).abs() > 0.1 {
                assert_eq!(f, 0.0);
            }
        }
        assert_eq!(sc.target, Target::ContactPoint { node: 64, threshold: 0.02 });
        assert!(initial_data_checklist(&sc, &g, &s).pass);
    }

    #[test]
    fn window_average_of_decaying_force() {
        let f = ForceSpec { profile: vec![2.0], decay_rate: 3.0 };
        let avg = f.window_average(0.1, 0.3)[0];
        let exact = 2.0 * ((-0.3f64).exp() - (-0.9f64).exp()) / 0.6;
        assert_relative_eq!(avg, exact, epsilon = 1e-14);
        assert_eq!(ForceSpec::steady(vec![1.5]).window_average(0.0, 1.0), vec![1.5]);
    }
}
