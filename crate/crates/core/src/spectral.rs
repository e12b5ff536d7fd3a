//! Real Fourier basis on the grid.
//!
//! A field is expanded as
//!
//! ```text
//! f(s) = sum_{k in K1} a_k cos(2 pi k.s) + 2 sum_{k in K2} (a_k cos(2 pi k.s) + b_k sin(2 pi k.s))
//! ```
//!
//! `K1` holds the four self-conjugate wavenumbers whose cosines are `+-1` on
//! the grid; `K2` holds one representative of every other conjugate pair.
//! The factor 2 on `K2` terms is a synthesis weight only: analysis stores the
//! plain projection `a_k = mean(f cos)`, `b_k = mean(f sin)`, so every
//! coefficient is recovered as the grid mean of the field times its
//! unweighted basis function. [`Coefficient::weight`] carries the factor and
//! is the single place the convention is encoded.
//!
//! Coefficient vectors use the layout `(cos K1, cos K2, sin K2)` restricted
//! to the retained modes. `K2` is stored sorted by `|k|` so that a
//! low-frequency truncation keeps a prefix of each block.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{flip_field, Field, FlipVariant, GridSpec};

pub type Wavenumber = (i64, i64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WavenumberSets {
    grid: GridSpec,
    k1: Vec<Wavenumber>,
    k2: Vec<Wavenumber>,
}

fn mode_key(k: &Wavenumber) -> (i64, i64, i64) {
    (k.0 * k.0 + k.1 * k.1, k.0, k.1)
}

pub fn build_wavenumbers(g: GridSpec) -> WavenumberSets {
    let h1 = (g.n1() / 2) as i64;
    let h2 = (g.n2() / 2) as i64;
    let k1 = vec![(0, 0), (0, h2), (h1, 0), (h1, h2)];
    let mut k2 = Vec::with_capacity(g.len() / 2);
    // 0 < k1 < h1, -h2 < k2 <= 0
    for a in 1..h1 {
        for b in (-h2 + 1)..=0 {
            k2.push((a, b));
        }
    }
    // 0 <= k1 <= h1, 0 < k2 < h2
    for a in 0..=h1 {
        for b in 1..h2 {
            k2.push((a, b));
        }
    }
    // 0 < k1 < h1, k2 = h2
    for a in 1..h1 {
        k2.push((a, h2));
    }
    k2.sort_by_key(mode_key);
    WavenumberSets { grid: g, k1, k2 }
}

impl WavenumberSets {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn k1(&self) -> &[Wavenumber] {
        &self.k1
    }

    pub fn k2(&self) -> &[Wavenumber] {
        &self.k2
    }

    /// Real coefficient count `|K1| + 2|K2|`, always `n1 * n2`.
    pub fn total(&self) -> usize {
        self.k1.len() + 2 * self.k2.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient {
    pub k: Wavenumber,
    pub branch: Branch,
    /// 1 for K1 modes, 2 for K2 modes.
    pub weight: f64,
}

impl Coefficient {
    /// Unweighted basis function at grid point `(i, j)`, with exact integer
    /// phase reduction.
    #[inline]
    pub fn eval(&self, g: GridSpec, i: usize, j: usize) -> f64 {
        let angle = phase_angle(g, self.k, i, j);
        match self.branch {
            Branch::Cos => angle.cos(),
            Branch::Sin => angle.sin(),
        }
    }
}

/// `2 pi (k1 x_j + k2 y_i)` reduced modulo `2 pi` in integer arithmetic.
#[inline]
pub fn phase_angle(g: GridSpec, k: Wavenumber, i: usize, j: usize) -> f64 {
    let n1 = g.n1() as i64;
    let n2 = g.n2() as i64;
    let m = n1 * n2;
    let p = (k.0 * j as i64 * n2 + k.1 * i as i64 * n1).rem_euclid(m);
    2.0 * PI * p as f64 / m as f64
}

/// A (possibly truncated) selection of coefficients in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOrdering {
    sets: Arc<WavenumberSets>,
    retained: Vec<usize>,
}

impl ModeOrdering {
    pub fn full(sets: Arc<WavenumberSets>) -> Self {
        let retained = (0..sets.total()).collect();
        Self { sets, retained }
    }

    pub fn full_for(g: GridSpec) -> Self {
        Self::full(Arc::new(build_wavenumbers(g)))
    }

    /// Keeps the lowest-frequency modes (by `|k|`, ties by `(k1, k2)`) until
    /// at least `k` coefficients are retained. A K2 cosine/sine pair is never
    /// split, so the result may hold `k + 1` coefficients.
    pub fn truncated(sets: Arc<WavenumberSets>, k: usize) -> Result<Self> {
        let total = sets.total();
        if k == 0 || k > total {
            return Err(Error::InvalidArgument(format!(
                "truncation size {k} outside 1..={total}"
            )));
        }
        let n_k1 = sets.k1.len();
        let n_k2 = sets.k2.len();
        let mut modes: Vec<(Wavenumber, bool)> = sets
            .k1
            .iter()
            .map(|&m| (m, true))
            .chain(sets.k2.iter().map(|&m| (m, false)))
            .collect();
        modes.sort_by_key(|(m, _)| mode_key(m));

        let mut keep_k1 = vec![false; n_k1];
        let mut keep_k2 = 0usize;
        let mut count = 0;
        for (m, in_k1) in modes {
            if count >= k {
                break;
            }
            if in_k1 {
                let idx = sets.k1.iter().position(|&x| x == m).unwrap();
                keep_k1[idx] = true;
                count += 1;
            } else {
                // k2 is sorted with the same key, so kept K2 modes form a prefix
                debug_assert_eq!(sets.k2[keep_k2], m);
                keep_k2 += 1;
                count += 2;
            }
        }
        let mut retained: Vec<usize> = (0..n_k1).filter(|&i| keep_k1[i]).collect();
        retained.extend(n_k1..n_k1 + keep_k2);
        retained.extend(n_k1 + n_k2..n_k1 + n_k2 + keep_k2);
        Ok(Self { sets, retained })
    }

    pub fn truncated_for(g: GridSpec, k: usize) -> Result<Self> {
        Self::truncated(Arc::new(build_wavenumbers(g)), k)
    }

    pub fn grid(&self) -> GridSpec {
        self.sets.grid
    }

    pub fn sets(&self) -> &Arc<WavenumberSets> {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.retained.len() == self.sets.total()
    }

    /// Positions in the full layout of the retained coefficients.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    fn coefficient_at(&self, layout_pos: usize) -> Coefficient {
        let n_k1 = self.sets.k1.len();
        let n_k2 = self.sets.k2.len();
        if layout_pos < n_k1 {
            Coefficient {
                k: self.sets.k1[layout_pos],
                branch: Branch::Cos,
                weight: 1.0,
            }
        } else if layout_pos < n_k1 + n_k2 {
            Coefficient {
                k: self.sets.k2[layout_pos - n_k1],
                branch: Branch::Cos,
                weight: 2.0,
            }
        } else {
            Coefficient {
                k: self.sets.k2[layout_pos - n_k1 - n_k2],
                branch: Branch::Sin,
                weight: 2.0,
            }
        }
    }

    pub fn coefficient(&self, idx: usize) -> Coefficient {
        self.coefficient_at(self.retained[idx])
    }

    pub fn coefficients(&self) -> impl Iterator<Item = Coefficient> + '_ {
        self.retained.iter().map(|&p| self.coefficient_at(p))
    }

    pub fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.coefficients().map(|c| c.weight))
    }

    /// Index of `(k, branch)` among the retained coefficients.
    pub fn position(&self, k: Wavenumber, branch: Branch) -> Option<usize> {
        self.coefficients()
            .position(|c| c.k == k && c.branch == branch)
    }

    /// Map from this ordering's coefficients to their index in `other`,
    /// which must be on the same grid and contain every retained mode.
    pub fn embedding_into(&self, other: &ModeOrdering) -> Result<Vec<usize>> {
        if self.grid() != other.grid() {
            return Err(Error::GridMismatch("orderings on different grids".into()));
        }
        let mut lookup = vec![usize::MAX; self.sets.total()];
        for (idx, &p) in other.retained.iter().enumerate() {
            lookup[p] = idx;
        }
        self.retained
            .iter()
            .map(|&p| {
                let idx = lookup[p];
                if idx == usize::MAX {
                    Err(Error::InvalidArgument(
                        "ordering is not contained in the target ordering".into(),
                    ))
                } else {
                    Ok(idx)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub ordering: ModeOrdering,
    pub alpha: DVector<f64>,
}

impl SpectralState {
    pub fn new(ordering: ModeOrdering, alpha: DVector<f64>) -> Result<Self> {
        if alpha.len() != ordering.len() {
            return Err(Error::DimensionMismatch {
                expected: ordering.len(),
                actual: alpha.len(),
            });
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectral coefficients"));
        }
        Ok(Self { ordering, alpha })
    }

    pub fn unit(ordering: ModeOrdering, idx: usize) -> Self {
        let mut alpha = DVector::zeros(ordering.len());
        alpha[idx] = 1.0;
        Self { ordering, alpha }
    }

    /// Weighted energy `sum_K1 a^2 + 2 sum_K2 (a^2 + b^2)`, equal to the
    /// grid mean of `f^2` at full retention.
    pub fn energy(&self) -> f64 {
        self.ordering
            .coefficients()
            .zip(self.alpha.iter())
            .map(|(c, a)| c.weight * a * a)
            .sum()
    }

    /// Restriction to a smaller ordering on the same grid.
    pub fn restrict(&self, target: &ModeOrdering) -> Result<SpectralState> {
        let idx = target.embedding_into(&self.ordering)?;
        let alpha = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.alpha[i]));
        Ok(SpectralState {
            ordering: target.clone(),
            alpha,
        })
    }
}

/// 2-D FFT over storage order (`j` slow along `x`, `i` fast along `y`).
fn fft2(g: GridSpec, data: &mut [Complex64], inverse: bool) {
    let (n1, n2) = (g.n1(), g.n2());
    let mut planner = FftPlanner::new();
    let (f_y, f_x) = if inverse {
        (planner.plan_fft_inverse(n2), planner.plan_fft_inverse(n1))
    } else {
        (planner.plan_fft_forward(n2), planner.plan_fft_forward(n1))
    };
    for col in data.chunks_exact_mut(n2) {
        f_y.process(col);
    }
    let mut line = vec![Complex64::new(0.0, 0.0); n1];
    for i in 0..n2 {
        for j in 0..n1 {
            line[j] = data[j * n2 + i];
        }
        f_x.process(&mut line);
        for j in 0..n1 {
            data[j * n2 + i] = line[j];
        }
    }
}

#[inline]
fn spectrum_index(g: GridSpec, k: Wavenumber) -> usize {
    let a = k.0.rem_euclid(g.n1() as i64) as usize;
    let b = k.1.rem_euclid(g.n2() as i64) as usize;
    a * g.n2() + b
}

/// Projects `f` onto the retained modes of `ord`.
pub fn analyze(f: &Field, ord: &ModeOrdering) -> Result<SpectralState> {
    let g = ord.grid();
    if f.grid() != g {
        return Err(Error::GridMismatch(format!(
            "field {}x{} vs ordering {}x{}",
            f.grid().n1(),
            f.grid().n2(),
            g.n1(),
            g.n2()
        )));
    }
    let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(g, &mut data, false);
    let n = g.len() as f64;
    let alpha = DVector::from_iterator(
        ord.len(),
        ord.coefficients().map(|c| {
            let z = data[spectrum_index(g, c.k)];
            match c.branch {
                Branch::Cos => z.re / n,
                Branch::Sin => -z.im / n,
            }
        }),
    );
    Ok(SpectralState {
        ordering: ord.clone(),
        alpha,
    })
}

pub fn synthesize(a: &SpectralState) -> Field {
    let g = a.ordering.grid();
    let mut data = vec![Complex64::new(0.0, 0.0); g.len()];
    for (c, &v) in a.ordering.coefficients().zip(a.alpha.iter()) {
        let z = &mut data[spectrum_index(g, c.k)];
        match c.branch {
            Branch::Cos => z.re += c.weight * v,
            Branch::Sin => z.im -= c.weight * v,
        }
    }
    fft2(g, &mut data, true);
    Field::new(g, data.into_iter().map(|z| z.re).collect())
        .expect("synthesis of finite coefficients is finite")
}

/// Low-pass reconstruction of `f` keeping the modes of `ord`.
pub fn low_pass(f: &Field, ord: &ModeOrdering) -> Result<Field> {
    Ok(synthesize(&analyze(f, ord)?))
}

#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub ordering: ModeOrdering,
    /// `N x K`; row `p` is the weighted basis at the `p`-th grid point.
    pub matrix: DMatrix<f64>,
}

pub fn basis_matrix(ord: &ModeOrdering) -> BasisMatrix {
    let g = ord.grid();
    let coeffs: Vec<Coefficient> = ord.coefficients().collect();
    let mut m = DMatrix::zeros(g.len(), coeffs.len());
    for (col, c) in coeffs.iter().enumerate() {
        for j in 0..g.n1() {
            for i in 0..g.n2() {
                m[(g.index(i, j), col)] = c.weight * c.eval(g, i, j);
            }
        }
    }
    BasisMatrix {
        ordering: ord.clone(),
        matrix: m,
    }
}

/// Linear map from original-domain coefficients to flipped-domain
/// coefficients: `H = pinv(F*) R F` over the retained columns.
#[derive(Debug, Clone)]
pub struct FlipTransfer {
    pub original: ModeOrdering,
    pub flipped: ModeOrdering,
    pub variant: FlipVariant,
    pub matrix: DMatrix<f64>,
}

pub fn flip_transfer(
    ord: &ModeOrdering,
    ord_star: &ModeOrdering,
    v: FlipVariant,
) -> Result<FlipTransfer> {
    if ord_star.grid() != ord.grid().doubled() {
        return Err(Error::GridMismatch(
            "flipped ordering must live on the doubled grid".into(),
        ));
    }
    if ord.len() > ord_star.len() {
        return Err(Error::InvalidArgument(format!(
            "flip transfer needs K <= K* (got {} > {})",
            ord.len(),
            ord_star.len()
        )));
    }
    // F* has orthogonal columns, so pinv(F*) is exactly the analysis map.
    let mut h = DMatrix::zeros(ord_star.len(), ord.len());
    for col in 0..ord.len() {
        let unit = SpectralState::unit(ord.clone(), col);
        let flipped = flip_field(&synthesize(&unit), v);
        let a = analyze(&flipped, ord_star)?;
        h.set_column(col, &a.alpha);
    }
    Ok(FlipTransfer {
        original: ord.clone(),
        flipped: ord_star.clone(),
        variant: v,
        matrix: h,
    })
}

impl FlipTransfer {
    pub fn apply(&self, a: &SpectralState) -> Result<SpectralState> {
        if a.ordering != self.original {
            return Err(Error::InvalidArgument(
                "state ordering does not match the transfer's original ordering".into(),
            ));
        }
        Ok(SpectralState {
            ordering: self.flipped.clone(),
            alpha: &self.matrix * &a.alpha,
        })
    }

    /// `(H^T H)^{-1} H^T`, valid because `H` has full column rank.
    pub fn pseudo_inverse(&self) -> Result<DMatrix<f64>> {
        let hth = self.matrix.transpose() * &self.matrix;
        let chol = hth.cholesky().ok_or_else(|| {
            Error::Numerical("flip transfer lost full column rank".into())
        })?;
        Ok(chol.solve(&self.matrix.transpose()))
    }
}

/// Phase `pi (k1 / n1 + k2 / n2)` by which a between-sample mirror
/// symmetry rotates mode `k` on grid `g` (the flipped grid).
pub fn mirror_phase(g: GridSpec, k: Wavenumber) -> f64 {
    PI * (k.0 as f64 / g.n1() as f64 + k.1 as f64 / g.n2() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn random_field(g: GridSpec, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Brute-force enumeration of conjugate-pair representatives.
    fn brute_force_count(n1: i64, n2: i64) -> (usize, usize) {
        let mut seen = HashSet::new();
        let (mut self_conj, mut pairs) = (0, 0);
        for a in 0..n1 {
            for b in 0..n2 {
                if seen.contains(&(a, b)) {
                    continue;
                }
                let c = ((n1 - a) % n1, (n2 - b) % n2);
                seen.insert((a, b));
                seen.insert(c);
                if c == (a, b) {
                    self_conj += 1;
                } else {
                    pairs += 1;
                }
            }
        }
        (self_conj, pairs)
    }

    #[test]
    fn wavenumber_counts_match_enumeration() {
        for (n1, n2) in [(2, 2), (4, 4), (6, 4), (8, 2), (10, 6), (100, 100)] {
            let g = GridSpec::new(n1, n2).unwrap();
            let s = build_wavenumbers(g);
            let (sc, pairs) = brute_force_count(n1 as i64, n2 as i64);
            assert_eq!(s.k1().len(), sc);
            assert_eq!(s.k2().len(), pairs);
            assert_eq!(s.total(), g.len());
        }
        let s = build_wavenumbers(GridSpec::new(4, 4).unwrap());
        assert_eq!(s.k1(), &[(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert_eq!(s.k2().len(), 6);
        assert!(build_wavenumbers(GridSpec::new(2, 2).unwrap()).k2().is_empty());
    }

    #[test]
    fn wavenumbers_are_distinct_modulo_conjugation() {
        let g = GridSpec::new(8, 6).unwrap();
        let s = build_wavenumbers(g);
        let mut seen = HashSet::new();
        for &(a, b) in s.k1().iter().chain(s.k2()) {
            assert!(a >= 0 && a <= 4 && b > -3 && b <= 3);
            let m = (a.rem_euclid(8), b.rem_euclid(6));
            let c = ((-a).rem_euclid(8), (-b).rem_euclid(6));
            assert!(seen.insert(m));
            if s.k2().contains(&(a, b)) {
                assert!(seen.insert(c));
            }
        }
        assert_eq!(seen.len(), g.len());
    }

    #[test]
    fn cosine_mode_analysis() {
        let g = GridSpec::new(8, 8).unwrap();
        let f = Field::from_fn(g, |x, _| (2.0 * PI * x).cos());
        let ord = ModeOrdering::full_for(g);
        let a = analyze(&f, &ord).unwrap();
        let p = ord.position((1, 0), Branch::Cos).unwrap();
        for (i, v) in a.alpha.iter().enumerate() {
            let want = if i == p { 0.5 } else { 0.0 };
            assert!((v - want).abs() < 1e-14, "{i}: {v}");
        }
    }

    #[test]
    fn constant_field_is_the_zero_mode() {
        let g = GridSpec::new(6, 4).unwrap();
        let ord = ModeOrdering::full_for(g);
        let a = analyze(&Field::constant(g, 1.0), &ord).unwrap();
        assert!((a.alpha[0] - 1.0).abs() < 1e-15);
        assert!(a.alpha.iter().skip(1).all(|v| v.abs() < 1e-15));
        let unit = synthesize(&SpectralState::unit(ord, 0));
        assert!(unit.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn round_trip_and_parseval() {
        for (n1, n2, seed) in [(6, 4, 1), (8, 8, 2), (16, 10, 3)] {
            let g = GridSpec::new(n1, n2).unwrap();
            let f = random_field(g, seed);
            let a = analyze(&f, &ModeOrdering::full_for(g)).unwrap();
            let back = synthesize(&a);
            for (u, v) in f.values().iter().zip(back.values()) {
                assert!((u - v).abs() < 1e-12);
            }
            let mean_sq = f.values().iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
            assert!((a.energy() - mean_sq).abs() < 1e-12 * mean_sq.max(1.0));
        }
    }

    #[test]
    fn analysis_matches_least_squares() {
        let g = GridSpec::new(6, 4).unwrap();
        let f = random_field(g, 9);
        let ord = ModeOrdering::truncated_for(g, 9).unwrap();
        let fm = basis_matrix(&ord).matrix;
        let y = DVector::from_column_slice(f.values());
        let ls = (fm.transpose() * &fm).lu().solve(&(fm.transpose() * y)).unwrap();
        let a = analyze(&f, &ord).unwrap();
        assert!((ls - a.alpha).amax() < 1e-12);
    }

    #[test]
    fn basis_orthogonality() {
        let g = GridSpec::new(8, 8).unwrap();
        let ord = ModeOrdering::full_for(g);
        let fm = basis_matrix(&ord).matrix;
        let gram = fm.transpose() * &fm / g.len() as f64;
        let w = ord.weights();
        for r in 0..gram.nrows() {
            for c in 0..gram.ncols() {
                // weighted columns: <w phi, w phi> = w^2 c_k = w (since c_k = 1/w)
                let want = if r == c { w[r] } else { 0.0 };
                assert!((gram[(r, c)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_nyquist_column_alternates() {
        let g = GridSpec::new(4, 6).unwrap();
        let ord = ModeOrdering::full_for(g);
        let p = ord.position((0, 3), Branch::Cos).unwrap();
        let fm = basis_matrix(&ord).matrix;
        for i in 0..6 {
            let want = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!((fm[(g.index(i, 1), p)] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn truncation_keeps_pairs_and_prefix() {
        let g = GridSpec::new(10, 10).unwrap();
        let sets = Arc::new(build_wavenumbers(g));
        let mut prev = 0;
        for k in 1..=g.len() {
            let ord = ModeOrdering::truncated(sets.clone(), k).unwrap();
            assert!(ord.len() == k || ord.len() == k + 1);
            assert!(ord.len() >= prev);
            prev = ord.len();
            let cos: Vec<_> = ord
                .coefficients()
                .filter(|c| c.weight == 2.0 && c.branch == Branch::Cos)
                .map(|c| c.k)
                .collect();
            let sin: Vec<_> = ord
                .coefficients()
                .filter(|c| c.branch == Branch::Sin)
                .map(|c| c.k)
                .collect();
            assert_eq!(cos, sin);
        }
        assert!(ModeOrdering::truncated(sets.clone(), 0).is_err());
        assert!(ModeOrdering::truncated(sets, 101).is_err());
    }

    #[test]
    fn truncation_error_is_monotone() {
        let g = GridSpec::new(12, 8).unwrap();
        let f = random_field(g, 4);
        let sets = Arc::new(build_wavenumbers(g));
        let full = analyze(&f, &ModeOrdering::full(sets.clone())).unwrap();
        let mut last = f64::INFINITY;
        for k in (1..=g.len()).step_by(5) {
            let ord = ModeOrdering::truncated(sets.clone(), k).unwrap();
            let rec = synthesize(&full.restrict(&ord).unwrap());
            let err: f64 = f
                .values()
                .iter()
                .zip(rec.values())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            assert!(err <= last + 1e-9);
            last = err;
        }
    }

    #[test]
    fn flip_transfer_full_retention_commutes_with_flip() {
        let g = GridSpec::new(4, 4).unwrap();
        let ord = ModeOrdering::full_for(g);
        let ord_s = ModeOrdering::full_for(g.doubled());
        let t = flip_transfer(&ord, &ord_s, FlipVariant::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let alpha = DVector::from_fn(ord.len(), |_, _| rng.random_range(-1.0..1.0));
            let a = SpectralState::new(ord.clone(), alpha).unwrap();
            let lhs = synthesize(&t.apply(&a).unwrap());
            let rhs = flip_field(&synthesize(&a), FlipVariant::default());
            for (u, v) in lhs.values().iter().zip(rhs.values()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
        let hp = t.pseudo_inverse().unwrap();
        let eye = &hp * &t.matrix;
        assert!((eye - DMatrix::<f64>::identity(16, 16)).amax() < 1e-10);
        // constants map to constants
        let c = t.apply(&SpectralState::unit(ord, 0)).unwrap();
        assert!((c.alpha[0] - 1.0).abs() < 1e-14);
        assert!(c.alpha.iter().skip(1).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn flip_transfer_pinv_matches_svd() {
        let g = GridSpec::new(4, 4).unwrap();
        let ord = ModeOrdering::truncated_for(g, 6).unwrap();
        let ord_s = ModeOrdering::truncated_for(g.doubled(), 40).unwrap();
        let t = flip_transfer(&ord, &ord_s, FlipVariant::default()).unwrap();
        let svd_pinv = t.matrix.clone().pseudo_inverse(1e-12).unwrap();
        assert!((svd_pinv - t.pseudo_inverse().unwrap()).amax() < 1e-10);
    }

    #[test]
    fn flipped_field_sines_vanish_in_mirror_frame() {
        let g = GridSpec::new(6, 4).unwrap();
        let f = random_field(g, 21);
        let fs = flip_field(&f, FlipVariant::default());
        let gs = fs.grid();
        let ord = ModeOrdering::full_for(gs);
        let a = analyze(&fs, &ord).unwrap();
        let sets = ord.sets().clone();
        for &k in sets.k2() {
            let c = a.alpha[ord.position(k, Branch::Cos).unwrap()];
            let s = a.alpha[ord.position(k, Branch::Sin).unwrap()];
            // rotate the pair back by the half-sample phase
            let phi = mirror_phase(gs, k);
            let s_rot = s * phi.cos() + c * phi.sin();
            assert!(s_rot.abs() < 1e-12, "{k:?}: {s_rot}");
        }
    }
}
