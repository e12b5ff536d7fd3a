//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use flipst::grid::{Field, FlipVariant, GridSpec, XAnchor, YAnchor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(g: GridSpec, r: &mut ChaCha8Rng) -> Field {
    Field::new(g, (0..g.len()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Mirror by rows: each row gains its reverse, then the row list gains its
/// reverse, on the side the variant's anchors name.
pub fn reflect_rows(f: &Field, v: FlipVariant) -> Field {
    let mut rows: Vec<Vec<f64>> = f
        .to_rows()
        .into_iter()
        .map(|row| {
            let rev: Vec<f64> = row.iter().rev().copied().collect();
            match v.x_anchor {
                XAnchor::Right => [row, rev].concat(),
                XAnchor::Left => [rev, row].concat(),
            }
        })
        .collect();
    let rev: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
    rows = match v.y_anchor {
        YAnchor::Bottom => [rows, rev].concat(),
        YAnchor::Top => [rev, rows].concat(),
    };
    Field::from_rows(&rows).unwrap()
}

/// Sum of a few random plane waves; `eval` gives it anywhere in the plane.
pub struct TrigPoly {
    pub terms: Vec<((i64, i64), f64, f64)>,
}

impl TrigPoly {
    pub fn random(max_k: i64, n: usize, r: &mut ChaCha8Rng) -> Self {
        let terms = (0..n)
            .map(|_| {
                let k = (r.random_range(-max_k..=max_k), r.random_range(-max_k..=max_k));
                (k, r.random_range(0.2..1.0), r.random_range(0.0..2.0 * PI))
            })
            .collect();
        Self { terms }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&((a, b), amp, ph)| amp * (2.0 * PI * (a as f64 * x + b as f64 * y) + ph).cos())
            .sum()
    }

    pub fn field(&self, g: GridSpec, shift: (f64, f64)) -> Field {
        Field::from_fn(g, |x, y| self.eval(x - shift.0, y - shift.1))
    }
}

/// Periodic Catmull-Rom interpolation of `f` at domain point `(x, y)`.
pub fn cubic_periodic(f: &Field, x: f64, y: f64) -> f64 {
    let g = f.grid();
    let (n1, n2) = (g.n1() as i64, g.n2() as i64);
    let (u, v) = (x * n1 as f64, y * n2 as f64);
    let (j0, i0) = (u.floor() as i64, v.floor() as i64);
    let (tx, ty) = (u - j0 as f64, v - i0 as f64);
    let w = |t: f64| {
        [
            0.5 * (-t * t * t + 2.0 * t * t - t),
            0.5 * (3.0 * t * t * t - 5.0 * t * t + 2.0),
            0.5 * (-3.0 * t * t * t + 4.0 * t * t + t),
            0.5 * (t * t * t - t * t),
        ]
    };
    let (wx, wy) = (w(tx), w(ty));
    let mut acc = 0.0;
    for (a, wyv) in wy.iter().enumerate() {
        let i = (i0 - 1 + a as i64).rem_euclid(n2) as usize;
        for (b, wxv) in wx.iter().enumerate() {
            let j = (j0 - 1 + b as i64).rem_euclid(n1) as usize;
            acc += wyv * wxv * f.get(i, j);
        }
    }
    acc
}

/// One semi-Lagrangian step of `d xi / dt = -v . grad xi` with constant `v`.
pub fn semi_lagrangian_step(f: &Field, v: (f64, f64), delta: f64) -> Field {
    Field::from_fn(f.grid(), |x, y| cubic_periodic(f, x - v.0 * delta, y - v.1 * delta))
}

pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// 60-term Taylor series on `A / 2^s` with `||A / 2^s||_1 <= 1/2`, squared back.
pub fn taylor_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for j in 1..=60 {
        term = &term * &b / j as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn random_matrix(n: usize, norm: f64, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let s = norm / one_norm(&m);
    m * s
}

/// Pseudo-inverse through the SVD, dropping singular values below `tol`.
pub fn svd_pinv(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    a.clone().svd(true, true).pseudo_inverse(tol).unwrap()
}

/// Smooth periodic scalar field with values in `[lo, hi]`.
pub fn smooth_positive(g: GridSpec, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    let p = TrigPoly::random(2, 3, r);
    let bound: f64 = p.terms.iter().map(|t| t.1).sum();
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    g.points().map(|(x, y)| mid + half * p.eval(x, y) / bound).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
