//! Galerkin assembly of the spectral transition generator.
//!
//! For the advection-diffusion operator
//! `A xi = -v . grad xi + div(D grad xi)` and the weighted basis
//! `xi = sum_j w_j alpha_j phi_j`, projecting onto `phi_i` gives
//!
//! ```text
//! P_ij = w_j / (w_i c_i) * mean(phi_i * A phi_j)
//! ```
//!
//! which reproduces the `2 C1^-1` / `1/2 C2^-1` block prefactors. Grid means
//! stand in for integrals over the unit square.
//!
//! Sign conventions (the "A" entries carry the minus of `-v . grad`):
//!
//! ```text
//! A cos_k = (v.k~) sin_k - k~'D k~ cos_k - (div D).k~ sin_k
//! A sin_k = -(v.k~) cos_k - k~'D k~ sin_k + (div D).k~ cos_k      k~ = 2 pi k
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::spectral::{phase_angle, Branch, Coefficient, ModeOrdering, Wavenumber};

/// Finite-difference treatment at the domain edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Central differences inside, first-order one-sided at the edges.
    #[default]
    OneSided,
    /// Central differences with periodic wrap.
    Periodic,
}

/// `d/dx` of a column-stacked field, in domain units.
pub fn partial_x(g: GridSpec, f: &[f64], b: Boundary) -> Vec<f64> {
    let (n1, n2) = (g.n1(), g.n2());
    let h = 1.0 / n1 as f64;
    let mut out = vec![0.0; g.len()];
    for j in 0..n1 {
        for i in 0..n2 {
            let d = match b {
                Boundary::Periodic => {
                    let jp = (j + 1) % n1;
                    let jm = (j + n1 - 1) % n1;
                    (f[g.index(i, jp)] - f[g.index(i, jm)]) / (2.0 * h)
                }
                Boundary::OneSided if j == 0 => (f[g.index(i, 1)] - f[g.index(i, 0)]) / h,
                Boundary::OneSided if j == n1 - 1 => {
                    (f[g.index(i, j)] - f[g.index(i, j - 1)]) / h
                }
                Boundary::OneSided => (f[g.index(i, j + 1)] - f[g.index(i, j - 1)]) / (2.0 * h),
            };
            out[g.index(i, j)] = d;
        }
    }
    out
}

/// `d/dy` of a column-stacked field, in domain units.
pub fn partial_y(g: GridSpec, f: &[f64], b: Boundary) -> Vec<f64> {
    let (n1, n2) = (g.n1(), g.n2());
    let h = 1.0 / n2 as f64;
    let mut out = vec![0.0; g.len()];
    for j in 0..n1 {
        for i in 0..n2 {
            let d = match b {
                Boundary::Periodic => {
                    let ip = (i + 1) % n2;
                    let im = (i + n2 - 1) % n2;
                    (f[g.index(ip, j)] - f[g.index(im, j)]) / (2.0 * h)
                }
                Boundary::OneSided if i == 0 => (f[g.index(1, j)] - f[g.index(0, j)]) / h,
                Boundary::OneSided if i == n2 - 1 => {
                    (f[g.index(i, j)] - f[g.index(i - 1, j)]) / h
                }
                Boundary::OneSided => (f[g.index(i + 1, j)] - f[g.index(i - 1, j)]) / (2.0 * h),
            };
            out[g.index(i, j)] = d;
        }
    }
    out
}

/// Velocity in domain lengths per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: GridSpec,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl VelocityField {
    pub fn new(grid: GridSpec, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        for v in [&vx, &vy] {
            if v.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: grid.len(),
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("velocity"));
            }
        }
        Ok(Self { grid, vx, vy })
    }

    pub fn constant(grid: GridSpec, vx: f64, vy: f64) -> Self {
        Self {
            grid,
            vx: vec![vx; grid.len()],
            vy: vec![vy; grid.len()],
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0, 0.0)
    }

    pub fn speeds(&self) -> impl Iterator<Item = f64> + '_ {
        self.vx.iter().zip(&self.vy).map(|(a, b)| a.hypot(*b))
    }
}

/// Diffusivity tensor in domain lengths squared per time step, with its
/// divergence `(div D)_j = sum_i d_i D_ij` precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusivityField {
    pub grid: GridSpec,
    pub dxx: Vec<f64>,
    pub dxy: Vec<f64>,
    pub dyx: Vec<f64>,
    pub dyy: Vec<f64>,
    pub div_dx: Vec<f64>,
    pub div_dy: Vec<f64>,
}

impl DiffusivityField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::isotropic_constant(grid, 0.0)
    }

    pub fn isotropic_constant(grid: GridSpec, d: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            dxx: vec![d; n],
            dxy: vec![0.0; n],
            dyx: vec![0.0; n],
            dyy: vec![d; n],
            div_dx: vec![0.0; n],
            div_dy: vec![0.0; n],
        }
    }

    /// Symmetric tensor field; the divergence is taken by finite differences.
    pub fn from_tensor(
        grid: GridSpec,
        dxx: Vec<f64>,
        dxy: Vec<f64>,
        dyy: Vec<f64>,
        boundary: Boundary,
    ) -> Result<Self> {
        for d in [&dxx, &dxy, &dyy] {
            if d.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: grid.len(),
                    actual: d.len(),
                });
            }
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("diffusivity"));
            }
        }
        let ax = partial_x(grid, &dxx, boundary);
        let bx = partial_y(grid, &dxy, boundary);
        let ay = partial_x(grid, &dxy, boundary);
        let by = partial_y(grid, &dyy, boundary);
        let div_dx = ax.iter().zip(&bx).map(|(a, b)| a + b).collect();
        let div_dy = ay.iter().zip(&by).map(|(a, b)| a + b).collect();
        Ok(Self {
            grid,
            dyx: dxy.clone(),
            dxx,
            dxy,
            dyy,
            div_dx,
            div_dy,
        })
    }

    /// Scalar diffusivity promoted to `d I`.
    pub fn from_scalar(grid: GridSpec, d: Vec<f64>, boundary: Boundary) -> Result<Self> {
        let zeros = vec![0.0; grid.len()];
        Self::from_tensor(grid, d.clone(), zeros, d, boundary)
    }

    fn quad(&self, p: usize, kx: f64, ky: f64) -> f64 {
        kx * kx * self.dxx[p] + kx * ky * (self.dxy[p] + self.dyx[p]) + ky * ky * self.dyy[p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiKind {
    A1,
    A2,
    A3,
    A4,
    D1,
    D2,
    D3,
    D4,
}

impl PsiKind {
    /// (branch of the mode `k` acted on, branch of the test function `k'`)
    fn branches(self) -> (Branch, Branch) {
        use PsiKind::*;
        match self {
            A1 | D1 => (Branch::Cos, Branch::Cos),
            A2 | D2 => (Branch::Sin, Branch::Cos),
            A3 | D3 => (Branch::Cos, Branch::Sin),
            A4 | D4 => (Branch::Sin, Branch::Sin),
        }
    }

    fn is_advection(self) -> bool {
        matches!(self, PsiKind::A1 | PsiKind::A2 | PsiKind::A3 | PsiKind::A4)
    }
}

#[inline]
fn trig(b: Branch, angle: f64) -> f64 {
    match b {
        Branch::Cos => angle.cos(),
        Branch::Sin => angle.sin(),
    }
}

/// Value of the advection (`A`) or diffusion (`D`) part of the operator
/// applied to the basis function `(k, branch)` at grid point `p`.
#[inline]
fn apply_operator(
    advection: bool,
    branch: Branch,
    angle: f64,
    kx: f64,
    ky: f64,
    p: usize,
    vel: &VelocityField,
    dif: &DiffusivityField,
) -> f64 {
    let (c, s) = (angle.cos(), angle.sin());
    if advection {
        let vk = vel.vx[p] * kx + vel.vy[p] * ky;
        match branch {
            Branch::Cos => vk * s,
            Branch::Sin => -vk * c,
        }
    } else {
        let q = dif.quad(p, kx, ky);
        let dk = dif.div_dx[p] * kx + dif.div_dy[p] * ky;
        match branch {
            Branch::Cos => -q * c - dk * s,
            Branch::Sin => -q * s + dk * c,
        }
    }
}

/// Grid-mean quadrature of one Galerkin integrand: the operator part `kind`
/// applied to the basis function of `k`, tested against that of `k_test`.
pub fn psi_entry(
    kind: PsiKind,
    k: Wavenumber,
    k_test: Wavenumber,
    vel: &VelocityField,
    dif: &DiffusivityField,
) -> f64 {
    let g = vel.grid;
    let (b_k, b_test) = kind.branches();
    let (kx, ky) = (2.0 * PI * k.0 as f64, 2.0 * PI * k.1 as f64);
    let mut acc = 0.0;
    for j in 0..g.n1() {
        for i in 0..g.n2() {
            let p = g.index(i, j);
            let a = phase_angle(g, k, i, j);
            let t = trig(b_test, phase_angle(g, k_test, i, j));
            acc += apply_operator(kind.is_advection(), b_k, a, kx, ky, p, vel, dif) * t;
        }
    }
    acc / g.len() as f64
}

/// Grid mean of `cos^2(2 pi k.s)`.
pub fn normalization_c(k: Wavenumber, g: GridSpec) -> f64 {
    let mut acc = 0.0;
    for j in 0..g.n1() {
        for i in 0..g.n2() {
            acc += phase_angle(g, k, i, j).cos().powi(2);
        }
    }
    acc / g.len() as f64
}

#[derive(Debug, Clone)]
pub struct TransitionGenerator {
    pub ordering: ModeOrdering,
    pub matrix: DMatrix<f64>,
}

impl TransitionGenerator {
    pub fn zeros(ordering: ModeOrdering) -> Self {
        let k = ordering.len();
        Self {
            ordering,
            matrix: DMatrix::zeros(k, k),
        }
    }
}

/// Assembles `P` over the retained modes only.
pub fn assemble_transition(
    ord: &ModeOrdering,
    vel: &VelocityField,
    dif: &DiffusivityField,
) -> Result<TransitionGenerator> {
    let g = ord.grid();
    if vel.grid != g || dif.grid != g {
        return Err(Error::GridMismatch(
            "velocity/diffusivity grid differs from the ordering grid".into(),
        ));
    }
    let coeffs: Vec<Coefficient> = ord.coefficients().collect();
    let kdim = coeffs.len();
    let n = g.len();
    // test functions and the operator applied to each trial function
    let mut phi = DMatrix::zeros(n, kdim);
    let mut a_phi = DMatrix::zeros(n, kdim);
    for (col, c) in coeffs.iter().enumerate() {
        let (kx, ky) = (2.0 * PI * c.k.0 as f64, 2.0 * PI * c.k.1 as f64);
        for j in 0..g.n1() {
            for i in 0..g.n2() {
                let p = g.index(i, j);
                let angle = phase_angle(g, c.k, i, j);
                phi[(p, col)] = trig(c.branch, angle);
                a_phi[(p, col)] = apply_operator(true, c.branch, angle, kx, ky, p, vel, dif)
                    + apply_operator(false, c.branch, angle, kx, ky, p, vel, dif);
            }
        }
    }
    let psi = phi.tr_mul(&a_phi) / n as f64;
    let mut p = psi;
    for (r, cr) in coeffs.iter().enumerate() {
        let c_k = normalization_c(cr.k, g);
        assert!(c_k > 0.0, "cosine mass vanished for {:?}", cr.k);
        for (col, cc) in coeffs.iter().enumerate() {
            p[(r, col)] *= cc.weight / (cr.weight * c_k);
        }
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("transition generator"));
    }
    Ok(TransitionGenerator {
        ordering: ord.clone(),
        matrix: p,
    })
}
