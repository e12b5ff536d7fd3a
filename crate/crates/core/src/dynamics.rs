//! Discrete-time transitions: matrix exponential, state augmentation and
//! the conjugation that carries a generator onto the flipped domain.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::galerkin::TransitionGenerator;
use crate::spectral::{FlipTransfer, SpectralState};

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm thresholds for degree 3, 5, 7, 9 and 13 (Higham 2005).
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut u = &eye * b[1];
    let mut v = &eye * b[0];
    let mut pow = eye;
    for j in 1..b.len() / 2 {
        pow = &pow * &a2;
        u += &pow * b[2 * j + 1];
        v += &pow * b[2 * j];
    }
    (a * u, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE13;
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    (u, v)
}

/// `exp(A)` by scaling and squaring around a diagonal Padé approximant.
pub fn matrix_exp(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "matrix_exp needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(a);
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = (norm / THETA[4]).log2().ceil().max(0.0) as i32;
        let scaled = a / 2f64.powi(s);
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };
    let p = &v + &u;
    let q = v - u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(r)
}

/// `H P H^+` on the flipped ordering.
pub fn flipped_generator(p: &TransitionGenerator, h: &FlipTransfer) -> Result<TransitionGenerator> {
    if p.ordering != h.original {
        return Err(Error::InvalidArgument(
            "generator ordering differs from the transfer's original ordering".into(),
        ));
    }
    let h_pinv = h.pseudo_inverse()?;
    Ok(TransitionGenerator {
        ordering: h.flipped.clone(),
        matrix: &h.matrix * &p.matrix * h_pinv,
    })
}

/// One time step of the augmented model `theta = (alpha, beta)`:
/// `alpha' = phi alpha + beta`, `beta' = beta`.
#[derive(Debug, Clone)]
pub struct DiscreteTransition {
    pub delta: f64,
    pub phi: DMatrix<f64>,
}

impl DiscreteTransition {
    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn identity(k: usize) -> Self {
        Self {
            delta: 1.0,
            phi: DMatrix::identity(k, k),
        }
    }

    /// The `2K x 2K` matrix `[[phi, I], [0, I]]`.
    pub fn augmented(&self) -> DMatrix<f64> {
        let k = self.dim();
        let mut g = DMatrix::zeros(2 * k, 2 * k);
        g.view_mut((0, 0), (k, k)).copy_from(&self.phi);
        for i in 0..k {
            g[(i, k + i)] = 1.0;
            g[(k + i, k + i)] = 1.0;
        }
        g
    }

    pub fn step(&self, theta: &AugmentedState) -> AugmentedState {
        let alpha = &self.phi * &theta.alpha.alpha + &theta.beta;
        AugmentedState {
            alpha: SpectralState {
                ordering: theta.alpha.ordering.clone(),
                alpha,
            },
            beta: theta.beta.clone(),
        }
    }
}

pub fn build_transition(gen: &TransitionGenerator, delta: f64) -> Result<DiscreteTransition> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be > 0, got {delta}")));
    }
    Ok(DiscreteTransition {
        delta,
        phi: matrix_exp(&(&gen.matrix * delta))?,
    })
}

/// State coefficients with the forcing coefficients stacked alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub alpha: SpectralState,
    pub beta: DVector<f64>,
}

impl AugmentedState {
    pub fn new(alpha: SpectralState, beta: DVector<f64>) -> Result<Self> {
        if beta.len() != alpha.alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: alpha.alpha.len(),
                actual: beta.len(),
            });
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forcing coefficients"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let k = self.beta.len();
        DVector::from_iterator(2 * k, self.alpha.alpha.iter().chain(self.beta.iter()).copied())
    }

    pub fn from_vector(ordering: crate::spectral::ModeOrdering, theta: &DVector<f64>) -> Self {
        let k = ordering.len();
        assert_eq!(theta.len(), 2 * k);
        Self {
            alpha: SpectralState {
                ordering,
                alpha: theta.rows(0, k).into_owned(),
            },
            beta: theta.rows(k, k).into_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scaled Taylor series, squared back up.
    fn taylor_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
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

    fn random_matrix(n: usize, target_norm: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let scale = target_norm / one_norm(&m);
        m * scale
    }

    #[test]
    fn zero_gives_identity() {
        let e = matrix_exp(&DMatrix::zeros(5, 5)).unwrap();
        assert_eq!(e, DMatrix::identity(5, 5));
    }

    #[test]
    fn rotation_generator() {
        for w in [0.001, 0.3, 1.7, 12.0] {
            let a = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
            let e = matrix_exp(&a).unwrap();
            let want = DMatrix::from_row_slice(2, 2, &[w.cos(), -w.sin(), w.sin(), w.cos()]);
            assert!((e - want).amax() < 1e-13);
        }
    }

    #[test]
    fn matches_taylor_oracle_across_norm_ranges() {
        for (seed, norm) in [(1, 0.01), (2, 0.2), (3, 0.9), (4, 2.0), (5, 1.0), (6, 7.0)] {
            let a = random_matrix(8, norm, seed);
            let e = matrix_exp(&a).unwrap();
            let t = taylor_exp(&a);
            assert!((&e - &t).norm() / t.norm() < 1e-12, "norm {norm}");
        }
    }

    #[test]
    fn semigroup() {
        let a = random_matrix(6, 3.0, 9);
        let lhs = matrix_exp(&(&a * 1.3)).unwrap();
        let rhs = matrix_exp(&(&a * 0.5)).unwrap() * matrix_exp(&(&a * 0.8)).unwrap();
        assert!((&lhs - &rhs).norm() / lhs.norm() < 1e-9);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = f64::INFINITY;
        assert!(matrix_exp(&a).is_err());
        assert!(matrix_exp(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn augmented_structure_and_forcing_accumulation() {
        let ord = crate::spectral::ModeOrdering::full_for(crate::grid::GridSpec::new(2, 2).unwrap());
        let gen = TransitionGenerator::zeros(ord.clone());
        let tr = build_transition(&gen, 0.7).unwrap();
        let g = tr.augmented();
        let k = 4;
        assert_eq!(g.view((0, 0), (k, k)), DMatrix::<f64>::identity(k, k));
        assert_eq!(g.view((0, k), (k, k)), DMatrix::<f64>::identity(k, k));
        assert!(g.view((k, 0), (k, k)).iter().all(|&x| x == 0.0));
        assert_eq!(g.view((k, k), (k, k)), DMatrix::<f64>::identity(k, k));

        let alpha = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let beta = DVector::from_vec(vec![0.5, -1.0, 0.0, 2.0]);
        let theta = AugmentedState::new(SpectralState::new(ord.clone(), alpha.clone()).unwrap(), beta.clone()).unwrap();
        let two = tr.step(&tr.step(&theta));
        assert_eq!(two.alpha.alpha, &alpha + &beta * 2.0);
        assert_eq!(&g * &g * theta.to_vector(), two.to_vector());
        assert!(build_transition(&gen, 0.0).is_err());
    }
}
