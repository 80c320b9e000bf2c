//! Grid, field containers, parameter bundles and the elementary field calculus
//! (periodic beam stencils, cut-cell quadrature, graph traces).
//!
//! Layout: the extended rectangle `[0,L) x [0,M]` is periodic in x. Unknowns sit
//! at the nodes `x_i = i dx` (`i < nx`) and `z_j = j dz` (`j <= nz`), so the
//! bottom row lies on the wall `z = 0` and the top row on `z = M`. Each node
//! owns the control volume `[x_i - dx/2, x_i + dx/2] x ([z_j - dz/2, z_j + dz/2] ∩ [0, M])`,
//! which is a half cell on the two horizontal walls. Beam nodes coincide with
//! the fluid columns. Fields are stored row-major with rows along z:
//! `idx(i, j) = j * nx + i`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    /// Torus circumference L.
    pub length_l: f64,
    /// Height M of the extended rectangle.
    pub height_m: f64,
    pub nx: usize,
    pub nz: usize,
}

impl GridSpec {
    pub fn new(length_l: f64, height_m: f64, nx: usize, nz: usize) -> Result<Self> {
        let g = GridSpec { length_l, height_m, nx, nz };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_l > 0.0 && self.length_l.is_finite()) {
            return Err(Error::param("length_L", "must be positive and finite"));
        }
        if !(self.height_m > 0.0 && self.height_m.is_finite()) {
            return Err(Error::param("height_M", "must be positive and finite"));
        }
        if self.nx < 8 {
            return Err(Error::param("nx", format!("need nx >= 8, got {}", self.nx)));
        }
        if self.nz < 8 {
            return Err(Error::param("nz", format!("need nz >= 8, got {}", self.nz)));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length_l / self.nx as f64
    }

    #[inline]
    pub fn dz(&self) -> f64 {
        self.height_m / self.nz as f64
    }

    /// Number of node rows (`nz + 1`).
    #[inline]
    pub fn rows(&self) -> usize {
        self.nz + 1
    }

    /// Number of nodes in a 2D field.
    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    #[inline]
    pub fn z(&self, j: usize) -> f64 {
        j as f64 * self.dz()
    }

    /// Vertical extent `[lo, hi]` of the control volume of row `j`.
    #[inline]
    pub fn cv_bounds(&self, j: usize) -> (f64, f64) {
        let dz = self.dz();
        let lo = if j == 0 { 0.0 } else { (j as f64 - 0.5) * dz };
        let hi = if j == self.nz { self.height_m } else { (j as f64 + 0.5) * dz };
        (lo, hi)
    }

    /// Height of the control volume of row `j` (dz, or dz/2 on the walls).
    #[inline]
    pub fn cv_height(&self, j: usize) -> f64 {
        if j == 0 || j == self.nz {
            0.5 * self.dz()
        } else {
            self.dz()
        }
    }

    /// Area of the control volume of any node in row `j`.
    #[inline]
    pub fn volume(&self, j: usize) -> f64 {
        self.dx() * self.cv_height(j)
    }

    /// Length of the part of row `j`'s control volume lying below `eta`.
    #[inline]
    pub fn overlap_below(&self, j: usize, eta: f64) -> f64 {
        let (lo, hi) = self.cv_bounds(j);
        (eta.min(hi) - lo).max(0.0)
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.len()]
    }

    pub fn zeros_1d(&self) -> Vec<f64> {
        vec![0.0; self.nx]
    }

    /// Samples `f(x, z)` on the nodes.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = self.zeros();
        for j in 0..self.rows() {
            for i in 0..self.nx {
                out[self.idx(i, j)] = f(self.x(i), self.z(j));
            }
        }
        out
    }

    /// Samples `f(x)` on the beam nodes.
    pub fn sample_1d(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.nx).map(|i| f(self.x(i))).collect()
    }

    /// Rejects graphs leaving `[0, M]` or carrying non-finite values.
    pub fn check_graph(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.nx {
            return Err(Error::OutOfDomain(format!(
                "graph has {} samples, grid has nx = {}",
                eta.len(),
                self.nx
            )));
        }
        for (i, &e) in eta.iter().enumerate() {
            if !e.is_finite() || e > self.height_m {
                return Err(Error::OutOfDomain(format!(
                    "eta[{i}] = {e} outside [0, M = {}]",
                    self.height_m
                )));
            }
        }
        Ok(())
    }
}

/// Density and velocity on the extended rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub rho: Vec<f64>,
    pub u1: Vec<f64>,
    pub u3: Vec<f64>,
}

impl FluidState {
    pub fn at_rest(grid: &GridSpec, rho: Vec<f64>) -> Self {
        FluidState { rho, u1: grid.zeros(), u3: grid.zeros() }
    }

    pub fn uniform(grid: &GridSpec, rho: f64) -> Self {
        Self::at_rest(grid, vec![rho; grid.len()])
    }

    /// Checks ρ ≥ 0, finiteness and no-slip on the bottom row.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let n = grid.len();
        if self.rho.len() != n || self.u1.len() != n || self.u3.len() != n {
            return Err(Error::Format(format!("fluid field length mismatch, expected {n}")));
        }
        for k in 0..n {
            if !(self.rho[k].is_finite() && self.u1[k].is_finite() && self.u3[k].is_finite()) {
                return Err(Error::Instability(format!("non-finite fluid value at node {k}")));
            }
            if self.rho[k] < 0.0 {
                return Err(Error::param("rho", format!("negative density {} at node {k}", self.rho[k])));
            }
        }
        for i in 0..grid.nx {
            let k = grid.idx(i, 0);
            if self.u1[k] != 0.0 || self.u3[k] != 0.0 {
                return Err(Error::param("u", format!("no-slip violated at bottom node {i}")));
            }
        }
        Ok(())
    }
}

/// Beam displacement and velocity on the periodic 1D mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamState {
    pub eta: Vec<f64>,
    pub eta_t: Vec<f64>,
}

impl BeamState {
    pub fn at_rest(eta: Vec<f64>) -> Self {
        let n = eta.len();
        BeamState { eta, eta_t: vec![0.0; n] }
    }

    pub fn flat(grid: &GridSpec, h: f64) -> Self {
        Self::at_rest(vec![h; grid.nx])
    }

    pub fn min_eta(&self) -> f64 {
        self.eta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eta(&self) -> f64 {
        self.eta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `eta >= -tol_penalty` and finiteness.
    pub fn validate(&self, tol_penalty: f64) -> Result<()> {
        for (i, (&e, &w)) in self.eta.iter().zip(&self.eta_t).enumerate() {
            if !(e.is_finite() && w.is_finite()) {
                return Err(Error::Instability(format!("non-finite beam value at node {i}")));
            }
            if e < -tol_penalty {
                return Err(Error::param("eta", format!("eta[{i}] = {e} below -tol_penalty")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysParams {
    /// Shear viscosity μ > 0.
    pub mu: f64,
    /// Bulk viscosity λ ≥ 0.
    pub lambda: f64,
    /// Adiabatic exponent γ > 2.
    pub gamma: f64,
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param("mu", "mu must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", "lambda must be non-negative"));
        }
        if !(self.gamma > 2.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", "gamma must exceed 2 (2D/1D regime)"));
        }
        Ok(())
    }

    /// Coefficient `4μ/3 + λ` of the logarithmic term.
    pub fn log_coeff(&self) -> f64 {
        4.0 * self.mu / 3.0 + self.lambda
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeParams {
    /// Coupling / mask parameter ε ∈ (0, 1/2).
    pub eps: f64,
    /// Contact floor δ ∈ (0, 1/2).
    pub delta: f64,
    /// Splitting window Δt.
    pub dt_window: f64,
    pub dt_inner: f64,
    /// Contact penalty stiffness κ: the force is `(1/κ) χ_{η<δ} (∂tη)⁻`.
    pub kappa_contact: f64,
    /// Density diffusion a ≥ 0.
    pub a_diff: f64,
    /// Pressure regularization amplitude b ≥ 0.
    pub b_reg: f64,
    /// Pressure regularization exponent β (≥ 4 when b > 0).
    pub beta_reg: f64,
    /// Floor applied to η inside 1/η, 1/η² and ln η in diagnostics.
    pub eta_floor: f64,
}

impl SchemeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::param("eps", "eps must lie in (0, 1/2)"));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::param("delta", "delta must lie in (0, 1/2)"));
        }
        if !(self.dt_inner > 0.0 && self.dt_inner.is_finite()) {
            return Err(Error::param("dt_inner", "dt_inner must be positive"));
        }
        if !(self.dt_window > 0.0 && self.dt_window.is_finite()) {
            return Err(Error::param("dt_window", "dt_window must be positive"));
        }
        if integer_ratio(self.dt_window, self.dt_inner).is_none() {
            return Err(Error::param(
                "dt_window",
                "dt_window must be an integer multiple of dt_inner",
            ));
        }
        if !(self.kappa_contact > 0.0 && self.kappa_contact.is_finite()) {
            return Err(Error::param("kappa_contact", "kappa_contact must be positive"));
        }
        if !(self.a_diff >= 0.0 && self.a_diff.is_finite()) {
            return Err(Error::param("a_diff", "a_diff must be non-negative"));
        }
        if !(self.b_reg >= 0.0 && self.b_reg.is_finite()) {
            return Err(Error::param("b_reg", "b_reg must be non-negative"));
        }
        if self.b_reg > 0.0 && !(self.beta_reg >= 4.0) {
            return Err(Error::param("beta_reg", "beta_reg must be >= 4 when b_reg > 0"));
        }
        if !(self.eta_floor > 0.0) {
            return Err(Error::param("eta_floor", "eta_floor must be positive"));
        }
        Ok(())
    }

    /// Inner steps per window. Assumes `validate` passed.
    pub fn window_steps(&self) -> usize {
        integer_ratio(self.dt_window, self.dt_inner).unwrap_or(1)
    }
}

/// `Some(n)` when `a = n b` for an integer `n >= 1`, up to round-off.
pub fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    if !(a > 0.0 && b > 0.0) {
        return None;
    }
    let r = a / b;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= 1e-9 * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

/// Integration region for [`integrate_field`].
#[derive(Clone, Copy, Debug)]
pub enum Region<'a> {
    Full,
    BelowGraph(&'a [f64]),
    AboveGraph(&'a [f64]),
}

/// Midpoint quadrature with fractional weights in cells cut by the graph.
pub fn integrate_field(grid: &GridSpec, field: &[f64], region: Region<'_>) -> Result<f64> {
    let dx = grid.dx();
    let mut acc = 0.0;
    match region {
        Region::Full => {
            for j in 0..grid.rows() {
                let h = grid.cv_height(j);
                let row = &field[j * grid.nx..(j + 1) * grid.nx];
                acc += h * row.iter().sum::<f64>();
            }
        }
        Region::BelowGraph(eta) | Region::AboveGraph(eta) => {
            grid.check_graph(eta)?;
            let below = matches!(region, Region::BelowGraph(_));
            for j in 0..grid.rows() {
                let h = grid.cv_height(j);
                for (i, &e) in eta.iter().enumerate() {
                    let w = grid.overlap_below(j, e);
                    let w = if below { w } else { h - w };
                    acc += w * field[grid.idx(i, j)];
                }
            }
        }
    }
    Ok(acc * dx)
}

/// Order of a periodic centered beam derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivOrder {
    First,
    Second,
    Fourth,
}

/// Centered periodic finite differences (3-point for orders 1 and 2, 5-point for order 4).
pub fn periodic_derivative(f: &[f64], dx: f64, order: DerivOrder) -> Vec<f64> {
    let n = f.len();
    let at = |i: usize, s: isize| f[(i as isize + s).rem_euclid(n as isize) as usize];
    (0..n)
        .map(|i| match order {
            DerivOrder::First => (at(i, 1) - at(i, -1)) / (2.0 * dx),
            DerivOrder::Second => (at(i, 1) - 2.0 * f[i] + at(i, -1)) / (dx * dx),
            DerivOrder::Fourth => {
                (at(i, 2) - 4.0 * at(i, 1) + 6.0 * f[i] - 4.0 * at(i, -1) + at(i, -2))
                    / (dx * dx * dx * dx)
            }
        })
        .collect()
}

/// Forward difference `(f[i+1] - f[i]) / dx`, the factor of the 3-point Laplacian.
pub fn forward_difference(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    (0..n).map(|i| (f[(i + 1) % n] - f[i]) / dx).collect()
}

/// Derivative of the beam displacement.
pub fn beam_derivatives(beam: &BeamState, grid: &GridSpec, order: DerivOrder) -> Vec<f64> {
    periodic_derivative(&beam.eta, grid.dx(), order)
}

/// Lower node row and weight of the linear interpolation at height `eta`.
#[inline]
pub fn trace_stencil(grid: &GridSpec, eta: f64) -> (usize, f64) {
    let s = (eta / grid.dz()).max(0.0);
    let j0 = (s.floor() as usize).min(grid.nz - 1);
    let theta = (s - j0 as f64).clamp(0.0, 1.0);
    (j0, theta)
}

/// Velocity sampled on the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub u1: Vec<f64>,
    pub u3: Vec<f64>,
}

/// Interpolates `(u1, u3)` at `(x_i, η_i)`. Beam nodes coincide with fluid
/// columns, so the bilinear interpolant reduces to a vertical linear one; the
/// wall row enters with its no-slip value 0.
pub fn trace_velocity(fluid: &FluidState, beam: &BeamState, grid: &GridSpec) -> Result<Trace> {
    trace_at(fluid, &beam.eta, grid)
}

pub fn trace_at(fluid: &FluidState, eta: &[f64], grid: &GridSpec) -> Result<Trace> {
    grid.check_graph(eta)?;
    let mut u1 = grid.zeros_1d();
    let mut u3 = grid.zeros_1d();
    for (i, &e) in eta.iter().enumerate() {
        let (j0, th) = trace_stencil(grid, e);
        let (a, b) = (grid.idx(i, j0), grid.idx(i, j0 + 1));
        let (a1, a3) = if j0 == 0 { (0.0, 0.0) } else { (fluid.u1[a], fluid.u3[a]) };
        u1[i] = (1.0 - th) * a1 + th * fluid.u1[b];
        u3[i] = (1.0 - th) * a3 + th * fluid.u3[b];
    }
    Ok(Trace { u1, u3 })
}

/// `∫_Γ f dx` by the periodic rectangle rule.
pub fn integrate_1d(f: &[f64], dx: f64) -> f64 {
    f.iter().sum::<f64>() * dx
}

/// `∫_Γ f² dx`.
pub fn norm2_1d(f: &[f64], dx: f64) -> f64 {
    f.iter().map(|v| v * v).sum::<f64>() * dx
}
