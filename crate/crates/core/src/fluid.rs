//! Fluid sub-step on the fixed extended rectangle: regularized compressible
//! Navier-Stokes with the masked viscosity and the interface coupling penalty.
//!
//! One inner step is a continuity update followed by a momentum update:
//!
//! 1. mass fluxes: first-order upwind advection plus `a∇ρ` diffusion, conservative,
//!    periodic in x, no flux through the walls;
//! 2. momentum is carried by the same total mass flux (donor-cell velocity);
//!    this stands in for the `a∇ρ·∇u` correction, since it keeps the kinetic
//!    energy balanced against the diffusive part of the flux;
//! 3. pressure through the enthalpy gradient `ρ∇h(ρ) = ∇p(ρ)`, evaluated on the
//!    updated density (bounded near vacuum since γ > 2);
//! 4. viscosity from bilinear elements with the mask χ frozen per element,
//!    backward Euler solved by preconditioned conjugate gradients, so the
//!    step is stable at any density and dissipates exactly what it books;
//! 5. interface penalty `-(ε/Δt)(v - ∂tη e_z)` on the graph, implicit per column,
//!    deposited with the interpolation weights of the trace.

use crate::beam::EnergyCheck;
use crate::error::{Error, Result};
use crate::grid::{trace_stencil, BeamState, FluidState, GridSpec, PhysParams, SchemeParams};

/// Density below which a node counts as vacuum and carries no velocity.
pub const RHO_VACUUM: f64 = 1e-12;

/// Viscosity mask on nodes and its per-element average.
#[derive(Clone, Debug, PartialEq)]
pub struct ViscosityMask {
    pub chi: Vec<f64>,
    /// Element values, element `(i, j)` spanning nodes `i..=i+1`, `j..=j+1`.
    pub chi_elem: Vec<f64>,
}

/// `χ = 1` below the graph, linear ramp to ε on `[η, η+ε]`, `ε` above.
pub fn mask_value(z: f64, eta: f64, eps: f64) -> f64 {
    if z <= eta {
        1.0
    } else if z >= eta + eps {
        eps
    } else {
        1.0 - (1.0 - eps) * (z - eta) / eps
    }
}

pub fn build_mask(eta: &[f64], eps: f64, grid: &GridSpec) -> ViscosityMask {
    let nx = grid.nx;
    let mut chi = grid.zeros();
    for j in 0..grid.rows() {
        for i in 0..nx {
            chi[grid.idx(i, j)] = mask_value(grid.z(j), eta[i], eps);
        }
    }
    let mut chi_elem = vec![0.0; nx * grid.nz];
    for j in 0..grid.nz {
        for i in 0..nx {
            let ip = (i + 1) % nx;
            chi_elem[j * nx + i] = 0.25
                * (chi[grid.idx(i, j)]
                    + chi[grid.idx(ip, j)]
                    + chi[grid.idx(i, j + 1)]
                    + chi[grid.idx(ip, j + 1)]);
        }
    }
    ViscosityMask { chi, chi_elem }
}

/// Velocity gradient `g[a][b] = ∂_b u_a` with components `(x, z)`.
pub type Tensor2 = [[f64; 2]; 2];

/// `S = μ(∇u + ∇ᵀu - (2/3)(∇·u) I) + λ(∇·u) I`.
pub fn stress_tensor(g: &Tensor2, phys: &PhysParams) -> Tensor2 {
    let div = g[0][0] + g[1][1];
    let mut s = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            s[a][b] = phys.mu * (g[a][b] + g[b][a]);
        }
        s[a][a] += (phys.lambda - 2.0 * phys.mu / 3.0) * div;
    }
    s
}

pub fn double_dot(a: &Tensor2, b: &Tensor2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Bilinear-element viscous operator `K` with `uᵀKu = Σ_e χ_e ∫_e S(∇u):∇u`.
///
/// Local numbering: nodes `(i,j), (i+1,j), (i,j+1), (i+1,j+1)`, dof `2n + c`
/// with `c = 0` for u1 and `c = 1` for u3.
#[derive(Clone, Debug)]
pub struct ViscousOperator {
    ke: [[f64; 8]; 8],
}

impl ViscousOperator {
    pub fn new(grid: &GridSpec, phys: &PhysParams) -> Self {
        let (dx, dz) = (grid.dx(), grid.dz());
        let gp = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let mut ke = [[0.0; 8]; 8];
        for &xi in &gp {
            for &ze in &gp {
                // gradients of the four shape functions
                let dn = [
                    [-(1.0 - ze) / dx, -(1.0 - xi) / dz],
                    [(1.0 - ze) / dx, -xi / dz],
                    [-ze / dx, (1.0 - xi) / dz],
                    [ze / dx, xi / dz],
                ];
                let w = 0.25 * dx * dz;
                let grad = |d: usize| {
                    let (n, c) = (d / 2, d % 2);
                    let mut g = [[0.0; 2]; 2];
                    g[c] = dn[n];
                    g
                };
                for p in 0..8 {
                    let sp = stress_tensor(&grad(p), phys);
                    for q in 0..8 {
                        ke[p][q] += w * double_dot(&sp, &grad(q));
                    }
                }
            }
        }
        ViscousOperator { ke }
    }

    fn dofs(grid: &GridSpec, i: usize, j: usize) -> [usize; 4] {
        let ip = (i + 1) % grid.nx;
        [grid.idx(i, j), grid.idx(ip, j), grid.idx(i, j + 1), grid.idx(ip, j + 1)]
    }

    /// `(K u)` split into its u1 and u3 rows.
    pub fn apply(&self, grid: &GridSpec, chi_elem: &[f64], u1: &[f64], u3: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut r1 = grid.zeros();
        let mut r3 = grid.zeros();
        for j in 0..grid.nz {
            for i in 0..grid.nx {
                let c = chi_elem[j * grid.nx + i];
                let nodes = Self::dofs(grid, i, j);
                let mut ul = [0.0; 8];
                for (n, &k) in nodes.iter().enumerate() {
                    ul[2 * n] = u1[k];
                    ul[2 * n + 1] = u3[k];
                }
                for p in 0..8 {
                    let mut s = 0.0;
                    for q in 0..8 {
                        s += self.ke[p][q] * ul[q];
                    }
                    let k = nodes[p / 2];
                    if p % 2 == 0 {
                        r1[k] += c * s;
                    } else {
                        r3[k] += c * s;
                    }
                }
            }
        }
        (r1, r3)
    }

    /// `Σ_e χ_e ∫_e S(∇u):∇u` for the bilinear interpolant of `u`.
    pub fn dissipation(&self, grid: &GridSpec, chi_elem: &[f64], u1: &[f64], u3: &[f64]) -> f64 {
        let (r1, r3) = self.apply(grid, chi_elem, u1, u3);
        (0..grid.len()).map(|k| r1[k] * u1[k] + r3[k] * u3[k]).sum()
    }

    /// Backward-Euler viscous update `(M + dt K) u' = M u` on the free dofs by
    /// conjugate gradients with an x-line block preconditioner; fixed dofs are set to 0.
    /// `free[2k]` and `free[2k + 1]` flag u1 and u3 of node `k`. Returns the
    /// iteration count.
    #[allow(clippy::too_many_arguments)]
    pub fn solve_implicit(
        &self,
        grid: &GridSpec,
        chi_elem: &[f64],
        mass: &[f64],
        free: &[bool],
        u1: &mut [f64],
        u3: &mut [f64],
        dt: f64,
    ) -> usize {
        let nx = grid.nx;
        // compact numbering of the free dofs
        let mut slot = vec![usize::MAX; free.len()];
        let mut dof = Vec::new();
        for (d, &f) in free.iter().enumerate() {
            if f {
                slot[d] = dof.len();
                dof.push(d);
            }
        }
        for k in 0..grid.len() {
            if !free[2 * k] {
                u1[k] = 0.0;
            }
            if !free[2 * k + 1] {
                u3[k] = 0.0;
            }
        }
        let m = dof.len();
        if m == 0 {
            return 0;
        }
        let mut elems: Vec<(f64, [usize; 8])> = Vec::new();
        for e in 0..grid.nz * nx {
            let nodes = Self::dofs(grid, e % nx, e / nx);
            let mut loc = [usize::MAX; 8];
            for p in 0..8 {
                loc[p] = slot[2 * nodes[p / 2] + p % 2];
            }
            if loc.iter().any(|&l| l != usize::MAX) {
                elems.push((chi_elem[e], loc));
            }
        }
        let mut diag: Vec<f64> = dof.iter().map(|&d| mass[d / 2]).collect();
        // coupling of compact dof `a` to its +x neighbour of the same component
        let mut east = vec![0.0; m];
        for (c, loc) in &elems {
            for p in 0..8 {
                if loc[p] != usize::MAX {
                    diag[loc[p]] += dt * c * self.ke[p][p];
                }
            }
            // local nodes (0,1) and (2,3) are x-neighbours
            for (a, b) in [(0, 1), (2, 3)] {
                for comp in 0..2 {
                    let (p, q) = (2 * a + comp, 2 * b + comp);
                    if loc[p] != usize::MAX && loc[q] != usize::MAX {
                        east[loc[p]] += dt * c * self.ke[p][q];
                    }
                }
            }
        }
        let precond = LinePreconditioner::new(grid, &slot, &diag, &east);
        let apply = |x: &[f64], y: &mut [f64]| {
            y.iter_mut().for_each(|v| *v = 0.0);
            for (c, loc) in &elems {
                let mut xl = [0.0; 8];
                for p in 0..8 {
                    if loc[p] != usize::MAX {
                        xl[p] = x[loc[p]];
                    }
                }
                for p in 0..8 {
                    if loc[p] != usize::MAX {
                        let s: f64 = (0..8).map(|q| self.ke[p][q] * xl[q]).sum();
                        y[loc[p]] += c * s;
                    }
                }
            }
            for (a, (&d, yv)) in dof.iter().zip(y.iter_mut()).enumerate() {
                *yv = mass[d / 2] * x[a] + dt * *yv;
            }
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let get = |d: usize| if d.is_multiple_of(2) { u1[d / 2] } else { u3[d / 2] };
        let mut x: Vec<f64> = dof.iter().map(|&d| get(d)).collect();
        let b: Vec<f64> = dof.iter().zip(&x).map(|(&d, &v)| mass[d / 2] * v).collect();
        let mut ap = vec![0.0; m];
        apply(&x, &mut ap);
        let mut r: Vec<f64> = (0..m).map(|a| b[a] - ap[a]).collect();
        let mut z = vec![0.0; m];
        precond.solve(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let stop = CG_REL_TOL * CG_REL_TOL * dot(&b, &b);
        let mut it = 0;
        while it < CG_MAX_ITER && dot(&r, &r) > stop {
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for a in 0..m {
                x[a] += alpha * p[a];
                r[a] -= alpha * ap[a];
            }
            precond.solve(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for a in 0..m {
                p[a] = z[a] + beta * p[a];
            }
            it += 1;
        }
        for (a, &d) in dof.iter().enumerate() {
            if d % 2 == 0 {
                u1[d / 2] = x[a];
            } else {
                u3[d / 2] = x[a];
            }
        }
        it
    }
}

/// Block Jacobi over grid rows: each row of one velocity component is solved
/// exactly with its x-couplings, the rest of the operator is dropped. The
/// blocks are principal submatrices of an SPD matrix, hence SPD.
struct LinePreconditioner {
    lines: Vec<Line>,
}

/// Tridiagonal block, optionally closed periodically, factored for Thomas
/// sweeps. Cyclic lines use Sherman-Morrison with the corner `u vᵀ`.
struct Line {
    idx: Vec<usize>,
    /// Off-diagonal between `k` and `k + 1`.
    off: Vec<f64>,
    /// Thomas factors: modified super-diagonal and pivots.
    cp: Vec<f64>,
    piv: Vec<f64>,
    /// `(γ, corner, T'^{-1} u, 1 + vᵀ T'^{-1} u)` for a cyclic line.
    cyclic: Option<(f64, f64, Vec<f64>, f64)>,
}

impl Line {
    fn new(idx: Vec<usize>, mut d: Vec<f64>, off: Vec<f64>, corner: Option<f64>) -> Line {
        let n = idx.len();
        let mut cyc = None;
        if let Some(e) = corner {
            let gamma = -d[0];
            d[0] -= gamma;
            d[n - 1] -= e * e / gamma;
            cyc = Some((gamma, e));
        }
        let mut cp = vec![0.0; n];
        let mut piv = vec![0.0; n];
        piv[0] = d[0];
        for k in 1..n {
            cp[k - 1] = off[k - 1] / piv[k - 1];
            piv[k] = d[k] - off[k - 1] * cp[k - 1];
        }
        let mut line = Line { idx, off, cp, piv, cyclic: None };
        if let Some((gamma, e)) = cyc {
            let mut u = vec![0.0; n];
            u[0] = gamma;
            u[n - 1] = e;
            let mut q = vec![0.0; n];
            line.thomas(&u, &mut q);
            let denom = 1.0 + q[0] + e / gamma * q[n - 1];
            line.cyclic = Some((gamma, e, q, denom));
        }
        line
    }

    fn thomas(&self, r: &[f64], y: &mut [f64]) {
        let n = r.len();
        y[0] = r[0] / self.piv[0];
        for k in 1..n {
            y[k] = (r[k] - self.off[k - 1] * y[k - 1]) / self.piv[k];
        }
        for k in (0..n - 1).rev() {
            y[k] -= self.cp[k] * y[k + 1];
        }
    }
}

impl LinePreconditioner {
    fn new(grid: &GridSpec, slot: &[usize], diag: &[f64], east: &[f64]) -> LinePreconditioner {
        let nx = grid.nx;
        let mut lines = Vec::new();
        for j in 0..grid.rows() {
            for comp in 0..2 {
                let at = |i: usize| slot[2 * grid.idx(i % nx, j) + comp];
                let free: Vec<bool> = (0..nx).map(|i| at(i) != usize::MAX).collect();
                if nx >= 3 && free.iter().all(|&f| f) {
                    let idx: Vec<usize> = (0..nx).map(at).collect();
                    let d = idx.iter().map(|&a| diag[a]).collect();
                    let off = idx[..nx - 1].iter().map(|&a| east[a]).collect();
                    let corner = east[idx[nx - 1]];
                    lines.push(Line::new(idx, d, off, Some(corner)));
                    continue;
                }
                // open segments between fixed dofs, walking the period once
                let Some(start) = (0..nx).find(|&i| !free[i]) else {
                    // nx < 3 with every dof free: diagonal blocks
                    for i in 0..nx {
                        lines.push(Line::new(vec![at(i)], vec![diag[at(i)]], vec![], None));
                    }
                    continue;
                };
                let mut seg: Vec<usize> = Vec::new();
                for s in 1..=nx {
                    let i = (start + s) % nx;
                    if free[i] {
                        seg.push(at(i));
                    }
                    if (!free[i] || s == nx) && !seg.is_empty() {
                        let idx = std::mem::take(&mut seg);
                        let d = idx.iter().map(|&a| diag[a]).collect();
                        let off = idx[..idx.len() - 1].iter().map(|&a| east[a]).collect();
                        lines.push(Line::new(idx, d, off, None));
                    }
                }
            }
        }
        LinePreconditioner { lines }
    }

    fn solve(&self, r: &[f64], z: &mut [f64]) {
        let mut rl = Vec::new();
        let mut yl = Vec::new();
        for line in &self.lines {
            let n = line.idx.len();
            rl.clear();
            rl.extend(line.idx.iter().map(|&a| r[a]));
            yl.resize(n, 0.0);
            line.thomas(&rl, &mut yl);
            if let Some((gamma, e, q, denom)) = &line.cyclic {
                let f = (yl[0] + e / gamma * yl[n - 1]) / denom;
                for k in 0..n {
                    yl[k] -= f * q[k];
                }
            }
            for (k, &a) in line.idx.iter().enumerate() {
                z[a] = yl[k];
            }
        }
    }
}

const CG_REL_TOL: f64 = 1e-10;
const CG_MAX_ITER: usize = 1000;

/// Pressure `ρ^γ + b ρ^β`.
#[inline]
pub fn pressure(rho: f64, phys: &PhysParams, scheme: &SchemeParams) -> f64 {
    let mut p = rho.powf(phys.gamma);
    if scheme.b_reg > 0.0 {
        p += scheme.b_reg * rho.powf(scheme.beta_reg);
    }
    p
}

/// Enthalpy `h` with `ρ h'(ρ) = p'(ρ)`.
#[inline]
fn enthalpy(rho: f64, phys: &PhysParams, scheme: &SchemeParams) -> f64 {
    let g = phys.gamma;
    let mut h = g / (g - 1.0) * rho.powf(g - 1.0);
    if scheme.b_reg > 0.0 {
        let b = scheme.beta_reg;
        h += scheme.b_reg * b / (b - 1.0) * rho.powf(b - 1.0);
    }
    h
}

/// Sound speed `sqrt(p'(ρ))`.
fn sound_speed(rho: f64, phys: &PhysParams, scheme: &SchemeParams) -> f64 {
    let g = phys.gamma;
    let mut c2 = g * rho.powf(g - 1.0);
    if scheme.b_reg > 0.0 {
        let b = scheme.beta_reg;
        c2 += scheme.b_reg * b * rho.powf(b - 1.0);
    }
    c2.sqrt()
}

/// Total mass `∫ρ` over the rectangle.
pub fn total_mass(fluid: &FluidState, grid: &GridSpec) -> f64 {
    let mut m = 0.0;
    for j in 0..grid.rows() {
        let v = grid.volume(j);
        m += v * fluid.rho[j * grid.nx..(j + 1) * grid.nx].iter().sum::<f64>();
    }
    m
}

/// `(½∫ρ|u|², ∫ρ^γ/(γ-1) + b/(β-1)∫ρ^β)` over the rectangle.
pub fn fluid_energy(fluid: &FluidState, grid: &GridSpec, phys: &PhysParams, scheme: &SchemeParams) -> (f64, f64) {
    let mut kin = 0.0;
    let mut int = 0.0;
    for j in 0..grid.rows() {
        let v = grid.volume(j);
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            let r = fluid.rho[k];
            kin += 0.5 * v * r * (fluid.u1[k] * fluid.u1[k] + fluid.u3[k] * fluid.u3[k]);
            let mut e = r.powf(phys.gamma) / (phys.gamma - 1.0);
            if scheme.b_reg > 0.0 {
                e += scheme.b_reg / (scheme.beta_reg - 1.0) * r.powf(scheme.beta_reg);
            }
            int += v * e;
        }
    }
    (kin, int)
}

/// Signed total mass fluxes (mass per time) through x-faces and z-faces.
#[derive(Clone, Debug)]
pub struct MassFluxes {
    /// Face between `(i,j)` and `(i+1,j)`, indexed like nodes.
    pub gx: Vec<f64>,
    /// Face between `(i,j)` and `(i,j+1)`, index `j * nx + i`, `j < nz`.
    pub gz: Vec<f64>,
}

/// Result of a continuity update.
#[derive(Clone, Debug)]
pub struct ContinuityOutcome {
    /// Updated density, velocity unchanged.
    pub state: FluidState,
    pub fluxes: MassFluxes,
    /// Mass removed by clipping negative densities.
    pub clipped: f64,
    /// Positivity CFL number (≤ 1 required).
    pub cfl: f64,
}

/// `∂tρ + ∇·(ρu) = aΔρ` with upwind fluxes; negative values clipped and logged.
pub fn continuity_step(fluid: &FluidState, scheme: &SchemeParams, grid: &GridSpec, dt: f64) -> Result<ContinuityOutcome> {
    let (nx, nz) = (grid.nx, grid.nz);
    let (dx, dz) = (grid.dx(), grid.dz());
    let a = scheme.a_diff;
    let rho = &fluid.rho;
    let mut gx = grid.zeros();
    let mut gz = vec![0.0; nx * nz];
    // outflow capacity per node: Σ (|u_f| + a/h) A_f
    let mut cap = grid.zeros();
    for j in 0..grid.rows() {
        let area = grid.cv_height(j);
        for i in 0..nx {
            let (l, r) = (grid.idx(i, j), grid.idx((i + 1) % nx, j));
            let uf = 0.5 * (fluid.u1[l] + fluid.u1[r]);
            let adv = if uf >= 0.0 { uf * rho[l] } else { uf * rho[r] };
            gx[l] = area * (adv - a * (rho[r] - rho[l]) / dx);
            let c = area * (uf.abs() + a / dx);
            cap[l] += c;
            cap[r] += c;
        }
    }
    for j in 0..nz {
        for i in 0..nx {
            let (lo, up) = (grid.idx(i, j), grid.idx(i, j + 1));
            let uf = 0.5 * (fluid.u3[lo] + fluid.u3[up]);
            let adv = if uf >= 0.0 { uf * rho[lo] } else { uf * rho[up] };
            gz[j * nx + i] = dx * (adv - a * (rho[up] - rho[lo]) / dz);
            let c = dx * (uf.abs() + a / dz);
            cap[lo] += c;
            cap[up] += c;
        }
    }
    let mut cfl: f64 = 0.0;
    for j in 0..grid.rows() {
        let v = grid.volume(j);
        for i in 0..nx {
            cfl = cfl.max(dt * cap[grid.idx(i, j)] / v);
        }
    }
    if !cfl.is_finite() || cfl > 1.0 {
        return Err(Error::Cfl(format!(
            "continuity CFL number {cfl:.4} > 1 at dt = {dt:e}; reduce dt_inner"
        )));
    }
    let mut out = fluid.clone();
    let mut div = grid.zeros();
    for j in 0..grid.rows() {
        for i in 0..nx {
            let l = grid.idx(i, j);
            let r = grid.idx((i + 1) % nx, j);
            div[l] += gx[l];
            div[r] -= gx[l];
        }
    }
    for j in 0..nz {
        for i in 0..nx {
            let g = gz[j * nx + i];
            div[grid.idx(i, j)] += g;
            div[grid.idx(i, j + 1)] -= g;
        }
    }
    let mut clipped = 0.0;
    for j in 0..grid.rows() {
        let v = grid.volume(j);
        for i in 0..nx {
            let k = grid.idx(i, j);
            let r = rho[k] - dt * div[k] / v;
            if r < 0.0 {
                clipped += -r * v;
                out.rho[k] = 0.0;
            } else {
                out.rho[k] = r;
            }
        }
    }
    Ok(ContinuityOutcome { state: out, fluxes: MassFluxes { gx, gz }, clipped, cfl })
}

/// Energy pieces of one momentum update.
#[derive(Clone, Debug, Default)]
pub struct MomentumOutcome {
    /// `dt ∫ χ S(∇u):∇u` on the new velocity.
    pub viscous: f64,
    /// `dt (ε/2Δt) ∫_Γ |v|²`.
    pub trace_dissipation: f64,
    /// `dt (ε/2Δt) ∫_Γ |v - ∂tη e_z|²`.
    pub coupling_dissipation: f64,
    /// `dt (ε/2Δt) ∫_Γ |∂tη|²`.
    pub beam_source: f64,
    /// `dt ∫_Γ |v - ∂tη e_z|²`.
    pub coupling_residual: f64,
    /// Trace on the graph after the update.
    pub trace_u1: Vec<f64>,
    pub trace_u3: Vec<f64>,
    /// Conjugate-gradient iterations of the viscous solve.
    pub cg_iterations: usize,
    /// Kinetic-energy change of each stage (transport, pressure, viscosity,
    /// interface) net of the dissipation booked for it.
    pub stage_residuals: [f64; 4],
}

fn kinetic_with(g: &GridSpec, rho: &[f64], u1: &[f64], u3: &[f64]) -> f64 {
    let mut k = 0.0;
    for j in 0..g.rows() {
        let v = g.volume(j);
        for i in 0..g.nx {
            let n = g.idx(i, j);
            k += 0.5 * v * rho[n] * (u1[n] * u1[n] + u3[n] * u3[n]);
        }
    }
    k
}

/// Reusable fluid stepper for a fixed grid and parameter set.
#[derive(Clone, Debug)]
pub struct FluidSolver {
    grid: GridSpec,
    phys: PhysParams,
    scheme: SchemeParams,
    visc: ViscousOperator,
}

impl FluidSolver {
    pub fn new(grid: &GridSpec, phys: &PhysParams, scheme: &SchemeParams) -> Self {
        FluidSolver {
            grid: grid.clone(),
            phys: phys.clone(),
            scheme: scheme.clone(),
            visc: ViscousOperator::new(grid, phys),
        }
    }

    pub fn viscous_operator(&self) -> &ViscousOperator {
        &self.visc
    }

    /// Acoustic and advective CFL number of the current state.
    pub fn acoustic_cfl(&self, fluid: &FluidState, dt: f64) -> f64 {
        let (dx, dz) = (self.grid.dx(), self.grid.dz());
        let mut cfl: f64 = 0.0;
        for k in 0..self.grid.len() {
            let c = sound_speed(fluid.rho[k], &self.phys, &self.scheme);
            cfl = cfl.max(dt * ((fluid.u1[k].abs() + c) / dx + (fluid.u3[k].abs() + c) / dz));
        }
        cfl
    }

    /// Momentum update following a continuity update from `old`.
    pub fn momentum_step(
        &self,
        old: &FluidState,
        cont: &ContinuityOutcome,
        mask: &ViscosityMask,
        beam: &BeamState,
        dt: f64,
    ) -> Result<(FluidState, MomentumOutcome)> {
        let g = &self.grid;
        let (nx, nz) = (g.nx, g.nz);
        let (dx, dz) = (g.dx(), g.dz());
        let rho_new = &cont.state.rho;
        let MassFluxes { gx, gz } = &cont.fluxes;

        // 1. transport by the total mass flux
        let mut m1 = g.zeros();
        let mut m3 = g.zeros();
        for j in 0..g.rows() {
            let v = g.volume(j);
            for i in 0..nx {
                let k = g.idx(i, j);
                m1[k] = old.rho[k] * v * old.u1[k];
                m3[k] = old.rho[k] * v * old.u3[k];
            }
        }
        for j in 0..g.rows() {
            for i in 0..nx {
                let l = g.idx(i, j);
                let r = g.idx((i + 1) % nx, j);
                let f = gx[l];
                let d = if f >= 0.0 { l } else { r };
                let (t1, t3) = (dt * f * old.u1[d], dt * f * old.u3[d]);
                m1[l] -= t1;
                m3[l] -= t3;
                m1[r] += t1;
                m3[r] += t3;
            }
        }
        for j in 0..nz {
            for i in 0..nx {
                let lo = g.idx(i, j);
                let up = g.idx(i, j + 1);
                let f = gz[j * nx + i];
                let d = if f >= 0.0 { lo } else { up };
                let (t1, t3) = (dt * f * old.u1[d], dt * f * old.u3[d]);
                m1[lo] -= t1;
                m3[lo] -= t3;
                m1[up] += t1;
                m3[up] += t3;
            }
        }
        let wet: Vec<bool> = rho_new.iter().map(|&r| r >= RHO_VACUUM).collect();
        // free dofs: wet, off the bottom wall; u3 also off the top wall
        let free1 = |k: usize| wet[k] && k >= nx;
        let free3 = |k: usize| wet[k] && k >= nx && k < nz * nx;
        let mut u1 = g.zeros();
        let mut u3 = g.zeros();
        for j in 0..g.rows() {
            let v = g.volume(j);
            for i in 0..nx {
                let k = g.idx(i, j);
                let mass = rho_new[k] * v;
                if free1(k) {
                    u1[k] = m1[k] / mass;
                }
                if free3(k) {
                    u3[k] = m3[k] / mass;
                }
            }
        }

        let k_old = kinetic_with(g, &old.rho, &old.u1, &old.u3);
        let k_tr = kinetic_with(g, rho_new, &u1, &u3);
        // 2. pressure through the enthalpy gradient
        let h: Vec<f64> = rho_new.iter().map(|&r| enthalpy(r, &self.phys, &self.scheme)).collect();
        for j in 1..g.rows() {
            for i in 0..nx {
                let k = g.idx(i, j);
                if free1(k) {
                    let hx = (h[g.idx((i + 1) % nx, j)] - h[g.idx((i + nx - 1) % nx, j)]) / (2.0 * dx);
                    u1[k] -= dt * hx;
                }
                if free3(k) {
                    let hz = (h[g.idx(i, j + 1)] - h[g.idx(i, j - 1)]) / (2.0 * dz);
                    u3[k] -= dt * hz;
                }
            }
        }

        let k_pr = kinetic_with(g, rho_new, &u1, &u3);
        // 3. viscosity, backward Euler
        let mut free = vec![false; 2 * g.len()];
        let mut mass = g.zeros();
        for k in 0..g.len() {
            free[2 * k] = free1(k);
            free[2 * k + 1] = free3(k);
            mass[k] = rho_new[k] * g.volume(k / nx);
        }
        let iters = self.visc.solve_implicit(g, &mask.chi_elem, &mass, &free, &mut u1, &mut u3, dt);
        let k_vi = kinetic_with(g, rho_new, &u1, &u3);
        let visc_booked = dt * self.visc.dissipation(g, &mask.chi_elem, &u1, &u3);
        // 4. interface penalty, implicit per column
        let kpen = self.scheme.eps / self.scheme.dt_window;
        let mut out = MomentumOutcome {
            trace_u1: g.zeros_1d(),
            trace_u3: g.zeros_1d(),
            ..Default::default()
        };
        let half = 0.5 * kpen * dt * dx;
        for i in 0..nx {
            let e = beam.eta[i];
            let target = beam.eta_t[i];
            let (j0, th_) = trace_stencil(g, e);
            let nodes = [(g.idx(i, j0), 1.0 - th_), (g.idx(i, j0 + 1), th_)];
            let mut s1 = 0.0;
            let mut s3 = 0.0;
            let mut t1 = 0.0;
            let mut t3 = 0.0;
            for &(k, w) in &nodes {
                let mass = rho_new[k] * g.volume(k / nx);
                if free1(k) {
                    s1 += w * w / mass;
                }
                if free3(k) {
                    s3 += w * w / mass;
                }
                t1 += w * u1[k];
                t3 += w * u3[k];
            }
            let r1 = t1 / (1.0 + dt * dx * kpen * s1);
            let r3 = (t3 - target) / (1.0 + dt * dx * kpen * s3);
            for &(k, w) in &nodes {
                let mass = rho_new[k] * g.volume(k / nx);
                if free1(k) {
                    u1[k] -= dt * dx * kpen * w / mass * r1;
                }
                if free3(k) {
                    u3[k] -= dt * dx * kpen * w / mass * r3;
                }
            }
            let v1 = nodes.iter().map(|&(k, w)| w * u1[k]).sum::<f64>();
            let v3 = nodes.iter().map(|&(k, w)| w * u3[k]).sum::<f64>();
            out.trace_u1[i] = v1;
            out.trace_u3[i] = v3;
            let dv3 = v3 - target;
            out.trace_dissipation += half * (v1 * v1 + v3 * v3);
            out.coupling_dissipation += half * (v1 * v1 + dv3 * dv3);
            out.beam_source += half * target * target;
            out.coupling_residual += dt * dx * (v1 * v1 + dv3 * dv3);
        }

        if u1.iter().chain(&u3).any(|v| !v.is_finite()) {
            return Err(Error::Instability(format!(
                "non-finite fluid velocity; acoustic CFL {:.3} at dt = {dt:e}",
                self.acoustic_cfl(old, dt)
            )));
        }
        out.viscous = visc_booked;
        out.cg_iterations = iters;
        let k_pe = kinetic_with(g, rho_new, &u1, &u3);
        out.stage_residuals = [
            k_tr - k_old,
            k_pr - k_tr,
            k_vi - k_pr + visc_booked,
            k_pe - k_vi + out.trace_dissipation + out.coupling_dissipation - out.beam_source,
        ];
        Ok((FluidState { rho: rho_new.clone(), u1, u3 }, out))
    }

    /// One fluid window with the mask frozen on `beam_end` and the graph
    /// position and velocity taken from `path` at each inner step.
    pub fn step(
        &self,
        fluid: &FluidState,
        beam_end: &BeamState,
        path: &BeamPath,
        window_steps: usize,
    ) -> Result<(FluidState, FspWindowReport)> {
        let g = &self.grid;
        let dt = self.scheme.dt_inner;
        g.check_graph(&beam_end.eta)?;
        let mask = build_mask(&beam_end.eta, self.scheme.eps, g);
        let (k0, i0) = fluid_energy(fluid, g, &self.phys, &self.scheme);
        let mut rep = FspWindowReport {
            start_kinetic: k0,
            start_internal: i0,
            start_mass: total_mass(fluid, g),
            ..Default::default()
        };
        let mut state = fluid.clone();
        for k in 0..window_steps {
            let acfl = self.acoustic_cfl(&state, dt);
            rep.max_cfl = rep.max_cfl.max(acfl);
            if !acfl.is_finite() || acfl > 1.0 {
                return Err(Error::Cfl(format!(
                    "acoustic CFL number {acfl:.4} > 1 at dt = {dt:e}; reduce dt_inner"
                )));
            }
            let cont = continuity_step(&state, &self.scheme, g, dt)?;
            rep.clipped_mass += cont.clipped;
            let beam_k = path.at(k);
            g.check_graph(&beam_k.eta)?;
            let (next, m) = self.momentum_step(&state, &cont, &mask, &beam_k, dt)?;
            rep.viscous_dissipation += m.viscous;
            rep.trace_dissipation += m.trace_dissipation;
            rep.coupling_dissipation += m.coupling_dissipation;
            rep.beam_source += m.beam_source;
            rep.coupling_residual += m.coupling_residual;
            rep.cg_iterations += m.cg_iterations;
            for (a, b) in rep.stage_residuals.iter_mut().zip(m.stage_residuals) {
                *a += b;
            }
            rep.trace_u1_steps.push(m.trace_u1);
            rep.trace_u3_steps.push(m.trace_u3);
            state = next;
        }
        let (k1, i1) = fluid_energy(&state, g, &self.phys, &self.scheme);
        rep.end_kinetic = k1;
        rep.end_internal = i1;
        rep.end_mass = total_mass(&state, g);
        Ok((state, rep))
    }
}

/// Graph position and velocity at each inner step of a window.
#[derive(Clone, Debug)]
pub struct BeamPath {
    pub eta: Vec<Vec<f64>>,
    pub eta_t: Vec<Vec<f64>>,
}

impl BeamPath {
    /// The same state at every step.
    pub fn frozen(beam: &BeamState) -> Self {
        BeamPath { eta: vec![beam.eta.clone()], eta_t: vec![beam.eta_t.clone()] }
    }

    fn at(&self, k: usize) -> BeamState {
        let k = k.min(self.eta.len() - 1);
        BeamState { eta: self.eta[k].clone(), eta_t: self.eta_t[k].clone() }
    }
}

/// Energy ledger of one fluid window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FspWindowReport {
    pub start_kinetic: f64,
    pub start_internal: f64,
    pub end_kinetic: f64,
    pub end_internal: f64,
    /// `∫∫ χ S(∇u):∇u`.
    pub viscous_dissipation: f64,
    /// `(ε/2Δt) ∫∫|v|²`.
    pub trace_dissipation: f64,
    /// `(ε/2Δt) ∫∫|v - ∂tη e_z|²`.
    pub coupling_dissipation: f64,
    /// `(ε/2Δt) ∫∫|∂tη|²`.
    pub beam_source: f64,
    /// Outer-force work. The force acts on the beam only, so its work is booked
    /// by the structure step and this entry stays 0.
    pub work: f64,
    pub clipped_mass: f64,
    pub start_mass: f64,
    pub end_mass: f64,
    /// `∫∫|v - ∂tη e_z|²` over the window.
    pub coupling_residual: f64,
    pub max_cfl: f64,
    /// Sums of [`MomentumOutcome::stage_residuals`].
    pub stage_residuals: [f64; 4],
    pub cg_iterations: usize,
    pub trace_u1_steps: Vec<Vec<f64>>,
    pub trace_u3_steps: Vec<Vec<f64>>,
}

impl FspWindowReport {
    pub fn start_energy(&self) -> f64 {
        self.start_kinetic + self.start_internal
    }

    pub fn end_energy(&self) -> f64 {
        self.end_kinetic + self.end_internal
    }

    pub fn dissipation(&self) -> f64 {
        self.viscous_dissipation + self.trace_dissipation + self.coupling_dissipation
    }
}

/// End energy + dissipation ≤ start energy + beam source + work + tol, with
/// every dissipation entry non-negative.
pub fn check_fsp_energy(report: &FspWindowReport, tol: f64) -> EnergyCheck {
    let residual = report.end_energy() + report.dissipation()
        - (report.start_energy() + report.beam_source + report.work);
    let signs = report.viscous_dissipation >= 0.0
        && report.trace_dissipation >= 0.0
        && report.coupling_dissipation >= 0.0;
    EnergyCheck { pass: signs && residual <= tol, residual }
}

/// One fluid window with a freshly assembled solver.
pub fn step_fsp(
    fluid: &FluidState,
    beam_end: &BeamState,
    path: &BeamPath,
    scheme: &SchemeParams,
    phys: &PhysParams,
    grid: &GridSpec,
    window_steps: usize,
) -> Result<(FluidState, FspWindowReport)> {
    FluidSolver::new(grid, phys, scheme).step(fluid, beam_end, path, window_steps)
}
