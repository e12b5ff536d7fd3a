//! Kalman filtering, forecasting and innovations-likelihood variance
//! estimation for the augmented spectral state `theta = (alpha, beta)`.
//!
//! ```text
//! y(t)     = Z alpha(t) + v(t),                          v ~ N(0, V)
//! theta(t) = [[Phi, I], [0, I]] theta(t - 1) + w(t),     w ~ N(0, W)
//! V = s2_alpha S + s2_obs I,   W = diag(s2_alpha S, s2_beta S)
//! ```
//!
//! `S` is the noise shape: the identity for a model on the original domain
//! and `H H^T` for the flipped model. Covariances are kept as the three
//! blocks `(alpha alpha, alpha beta, beta beta)` so the structure of the
//! transition is exploited in every prediction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{AugmentedState, DiscreteTransition};
use crate::error::{Error, Result};
use crate::spectral::ModeOrdering;

/// Lower bound for every estimated variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub sigma2_alpha: f64,
    pub sigma2_beta: f64,
    #[serde(default)]
    pub sigma2_obs: f64,
}

impl NoiseParams {
    pub fn new(sigma2_alpha: f64, sigma2_beta: f64, sigma2_obs: f64) -> Result<Self> {
        let p = Self {
            sigma2_alpha,
            sigma2_beta,
            sigma2_obs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma2_alpha > 0.0
            && self.sigma2_beta > 0.0
            && self.sigma2_obs >= 0.0
            && [self.sigma2_alpha, self.sigma2_beta, self.sigma2_obs]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid noise parameters {self:?}")))
        }
    }
}

/// How `alpha` is observed.
#[derive(Debug, Clone)]
pub enum Observation {
    /// Coefficients are observed directly (`Z = I_K`).
    Coefficients,
    /// A general map, e.g. the basis matrix for field-space observations.
    /// Its observation noise is `s2_obs I`.
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub ordering: ModeOrdering,
    pub transition: DiscreteTransition,
    pub noise_shape: DMatrix<f64>,
    pub noise: NoiseParams,
    pub observation: Observation,
    /// Replace the noise shape by its diagonal.
    pub diagonal_noise: bool,
}

impl StateSpaceModel {
    pub fn new(
        ordering: ModeOrdering,
        transition: DiscreteTransition,
        noise_shape: DMatrix<f64>,
        noise: NoiseParams,
    ) -> Result<Self> {
        let k = ordering.len();
        if transition.dim() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: transition.dim(),
            });
        }
        if noise_shape.nrows() != k || noise_shape.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: noise_shape.nrows(),
            });
        }
        noise.validate()?;
        Ok(Self {
            ordering,
            transition,
            noise_shape,
            noise,
            observation: Observation::Coefficients,
            diagonal_noise: false,
        })
    }

    pub fn with_observation(mut self, obs: Observation) -> Result<Self> {
        if let Observation::Matrix(z) = &obs {
            if z.ncols() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    actual: z.ncols(),
                });
            }
        }
        self.observation = obs;
        Ok(self)
    }

    pub fn with_noise(&self, noise: NoiseParams) -> Self {
        let mut m = self.clone();
        m.noise = noise;
        m
    }

    /// Number of retained coefficients `K` (the state has `2K`).
    pub fn dim(&self) -> usize {
        self.ordering.len()
    }

    pub fn obs_dim(&self) -> usize {
        match &self.observation {
            Observation::Coefficients => self.dim(),
            Observation::Matrix(z) => z.nrows(),
        }
    }

    fn shape(&self) -> DMatrix<f64> {
        if self.diagonal_noise {
            DMatrix::from_diagonal(&self.noise_shape.diagonal())
        } else {
            self.noise_shape.clone()
        }
    }

    fn noise_blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let s = self.shape();
        let w_alpha = &s * self.noise.sigma2_alpha;
        let w_beta = &s * self.noise.sigma2_beta;
        let m = self.obs_dim();
        let v = match &self.observation {
            Observation::Coefficients => {
                &w_alpha + DMatrix::<f64>::identity(m, m) * self.noise.sigma2_obs
            }
            Observation::Matrix(_) => DMatrix::<f64>::identity(m, m) * self.noise.sigma2_obs,
        };
        (w_alpha, w_beta, v)
    }

    /// Prior at the first time step: `alpha` from the first observed
    /// coefficients, `beta = 0`, diagonal covariance
    /// `scale * max(s2_alpha, s2_beta)`.
    pub fn default_prior(&self, first_alpha: &DVector<f64>, scale: f64) -> Result<Prior> {
        let k = self.dim();
        if first_alpha.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: first_alpha.len(),
            });
        }
        let mut mean = DVector::zeros(2 * k);
        mean.rows_mut(0, k).copy_from(first_alpha);
        let v = scale * self.noise.sigma2_alpha.max(self.noise.sigma2_beta);
        Ok(Prior {
            mean,
            cov: DMatrix::from_diagonal_element(2 * k, 2 * k, v),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Gaussian belief over `theta`, stored by blocks.
#[derive(Debug, Clone)]
struct Belief {
    ma: DVector<f64>,
    mb: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Belief {
    fn from_prior(p: &Prior, k: usize) -> Result<Self> {
        if p.mean.len() != 2 * k || p.cov.nrows() != 2 * k || p.cov.ncols() != 2 * k {
            return Err(Error::DimensionMismatch {
                expected: 2 * k,
                actual: p.mean.len(),
            });
        }
        Ok(Self {
            ma: p.mean.rows(0, k).into_owned(),
            mb: p.mean.rows(k, k).into_owned(),
            a: p.cov.view((0, 0), (k, k)).into_owned(),
            b: p.cov.view((0, k), (k, k)).into_owned(),
            c: p.cov.view((k, k), (k, k)).into_owned(),
        })
    }

    fn predict(&mut self, phi: &DMatrix<f64>, w_alpha: &DMatrix<f64>, w_beta: &DMatrix<f64>) {
        self.ma = phi * &self.ma + &self.mb;
        let phi_b = phi * &self.b;
        let mut a = phi * &self.a * phi.transpose();
        a += &phi_b;
        a += phi_b.transpose();
        a += &self.c;
        a += w_alpha;
        self.b = phi_b + &self.c;
        self.c += w_beta;
        self.a = a;
        self.symmetrize();
    }

    fn symmetrize(&mut self) {
        for m in [&mut self.a, &mut self.c] {
            let t = m.transpose();
            *m += t;
            *m *= 0.5;
        }
    }

    fn state(&self, ord: &ModeOrdering) -> AugmentedState {
        let k = self.ma.len();
        let mut theta = DVector::zeros(2 * k);
        theta.rows_mut(0, k).copy_from(&self.ma);
        theta.rows_mut(k, k).copy_from(&self.mb);
        AugmentedState::from_vector(ord.clone(), &theta)
    }

    fn covariance(&self) -> DMatrix<f64> {
        let k = self.ma.len();
        let mut p = DMatrix::zeros(2 * k, 2 * k);
        p.view_mut((0, 0), (k, k)).copy_from(&self.a);
        p.view_mut((0, k), (k, k)).copy_from(&self.b);
        p.view_mut((k, 0), (k, k)).copy_from(&self.b.transpose());
        p.view_mut((k, k), (k, k)).copy_from(&self.c);
        p
    }
}

/// One term of the innovations decomposition of the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub log_det: f64,
    pub quad: f64,
    pub dim: usize,
}

impl Innovation {
    pub fn log_likelihood(&self) -> f64 {
        -0.5 * (self.log_det + self.quad + self.dim as f64 * (2.0 * PI).ln())
    }
}

fn update(
    bel: &mut Belief,
    y: &DVector<f64>,
    obs: &Observation,
    v: &DMatrix<f64>,
    step: usize,
) -> Result<Innovation> {
    let (za, zb, pred) = match obs {
        Observation::Coefficients => (bel.a.clone(), bel.b.clone(), bel.ma.clone()),
        Observation::Matrix(z) => (z * &bel.a, z * &bel.b, z * &bel.ma),
    };
    if y.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.len(),
            actual: y.len(),
        });
    }
    let mut s = match obs {
        Observation::Coefficients => za.clone(),
        Observation::Matrix(z) => &za * z.transpose(),
    };
    s += v;
    let st = s.transpose();
    s += st;
    s *= 0.5;
    let chol = s.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "innovation covariance is not positive definite at step {step}"
        ))
    })?;
    let l = chol.l();
    let e = y - pred;
    let solve = |m: &DMatrix<f64>| {
        l.solve_lower_triangular(m)
            .expect("cholesky factor has a positive diagonal")
    };
    let x = solve(&za);
    let yb = solve(&zb);
    let z = l
        .solve_lower_triangular(&e)
        .expect("cholesky factor has a positive diagonal");

    bel.ma += x.tr_mul(&z);
    bel.mb += yb.tr_mul(&z);
    bel.a -= x.tr_mul(&x);
    bel.b -= x.tr_mul(&yb);
    bel.c -= yb.tr_mul(&yb);
    bel.symmetrize();

    let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(Innovation {
        log_det,
        quad: z.norm_squared(),
        dim: y.len(),
    })
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub means: Vec<AugmentedState>,
    pub covariances: Vec<DMatrix<f64>>,
    pub innovations: Vec<Innovation>,
    pub loglik: f64,
}

fn check_observations(observations: &[DVector<f64>]) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    if observations.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("observations"));
    }
    Ok(())
}

/// Runs the predict/update recursion; the prior applies at the first
/// observation, which is processed with an update only.
pub fn kf_filter(
    model: &StateSpaceModel,
    observations: &[DVector<f64>],
    prior: &Prior,
) -> Result<FilterResult> {
    check_observations(observations)?;
    let (w_alpha, w_beta, v) = model.noise_blocks();
    let mut bel = Belief::from_prior(prior, model.dim())?;
    let mut out = FilterResult {
        means: Vec::with_capacity(observations.len()),
        covariances: Vec::with_capacity(observations.len()),
        innovations: Vec::with_capacity(observations.len()),
        loglik: 0.0,
    };
    for (t, y) in observations.iter().enumerate() {
        if t > 0 {
            bel.predict(&model.transition.phi, &w_alpha, &w_beta);
        }
        let inn = update(&mut bel, y, &model.observation, &v, t)?;
        out.loglik += inn.log_likelihood();
        out.innovations.push(inn);
        out.means.push(bel.state(&model.ordering));
        out.covariances.push(bel.covariance());
    }
    if !out.loglik.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite".into()));
    }
    Ok(out)
}

/// Innovations log-likelihood only (no per-step storage).
pub fn log_likelihood(
    model: &StateSpaceModel,
    observations: &[DVector<f64>],
    prior: &Prior,
) -> Result<f64> {
    check_observations(observations)?;
    let (w_alpha, w_beta, v) = model.noise_blocks();
    let mut bel = Belief::from_prior(prior, model.dim())?;
    let mut ll = 0.0;
    for (t, y) in observations.iter().enumerate() {
        if t > 0 {
            bel.predict(&model.transition.phi, &w_alpha, &w_beta);
        }
        ll += update(&mut bel, y, &model.observation, &v, t)?.log_likelihood();
    }
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::Numerical("log-likelihood is not finite".into()))
    }
}

/// Propagates a filtered state `h` steps ahead without updates.
pub fn kf_forecast(
    model: &StateSpaceModel,
    last: &AugmentedState,
    last_cov: &DMatrix<f64>,
    h: usize,
) -> Result<Vec<(AugmentedState, DMatrix<f64>)>> {
    if h == 0 {
        return Err(Error::InvalidArgument("forecast horizon must be >= 1".into()));
    }
    let prior = Prior {
        mean: last.to_vector(),
        cov: last_cov.clone(),
    };
    let (w_alpha, w_beta, _) = model.noise_blocks();
    let mut bel = Belief::from_prior(&prior, model.dim())?;
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        bel.predict(&model.transition.phi, &w_alpha, &w_beta);
        out.push((bel.state(&model.ordering), bel.covariance()));
    }
    Ok(out)
}

/// Derivative-free search settings for [`estimate_variances`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleOptions {
    /// log10 variances tried for every parameter before refinement.
    pub grid_log10: Vec<f64>,
    /// Likelihood evaluations allowed in the Nelder-Mead refinement.
    pub max_evals: usize,
    /// Stop when the simplex spread in log-likelihood falls below this.
    pub tol: f64,
    /// Also estimate the independent observation-noise variance.
    pub fit_obs: bool,
    /// Prior covariance scale relative to the largest variance.
    pub prior_scale: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            grid_log10: vec![-4.0, -2.0, 0.0],
            max_evals: 40,
            tol: 1e-3,
            fit_obs: false,
            prior_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub noise: NoiseParams,
    pub loglik: f64,
    /// Best log-likelihood over the starting grid.
    pub grid_loglik: f64,
    pub evaluations: usize,
    /// False when the evaluation budget ran out before the tolerance was met.
    pub converged: bool,
}

const LOG10_FLOOR: f64 = -12.0;
const LOG10_CEIL: f64 = 6.0;

/// Maximises the innovations log-likelihood over `(s2_alpha, s2_beta)` (and
/// `s2_obs` when requested) in log10 space: a coarse grid, then Nelder-Mead
/// from the best grid point.
pub fn estimate_variances(
    template: &StateSpaceModel,
    observations: &[DVector<f64>],
    opts: &MleOptions,
) -> Result<VarianceEstimate> {
    if observations.len() < 3 {
        return Err(Error::InvalidArgument(
            "variance estimation needs at least 3 time steps".into(),
        ));
    }
    if opts.grid_log10.is_empty() {
        return Err(Error::InvalidArgument("empty MLE start grid".into()));
    }
    let dim = if opts.fit_obs { 3 } else { 2 };
    let fixed_obs = template.noise.sigma2_obs;
    let to_noise = |x: &[f64]| {
        let p = |v: f64| 10f64.powf(v.clamp(LOG10_FLOOR, LOG10_CEIL));
        NoiseParams {
            sigma2_alpha: p(x[0]),
            sigma2_beta: p(x[1]),
            sigma2_obs: if opts.fit_obs { p(x[2]) } else { fixed_obs },
        }
    };
    let mut evals = 0usize;
    let mut objective = |x: &[f64]| -> f64 {
        evals += 1;
        let noise = to_noise(x);
        let model = template.with_noise(noise);
        let ll = model
            .default_prior(&observations[0], opts.prior_scale)
            .and_then(|prior| log_likelihood(&model, observations, &prior));
        match ll {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };

    let mut best_x = vec![0.0; dim];
    let mut best_f = f64::INFINITY;
    let g = &opts.grid_log10;
    let mut idx = vec![0usize; dim];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
        let f = objective(&x);
        if f < best_f {
            best_f = f;
            best_x = x;
        }
        let mut d = 0;
        while d < dim {
            idx[d] += 1;
            if idx[d] < g.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dim {
            break;
        }
    }
    if !best_f.is_finite() {
        return Err(Error::Numerical(
            "log-likelihood is not finite anywhere on the start grid".into(),
        ));
    }
    let grid_loglik = -best_f;
    let step = if g.len() > 1 {
        (g[g.len() - 1] - g[0]).abs() / (g.len() - 1) as f64 / 2.0
    } else {
        1.0
    };
    let nm = nelder_mead(&mut objective, &best_x, step, opts.max_evals, opts.tol);
    let (x, f) = if nm.1 <= best_f { (nm.0, nm.1) } else { (best_x, best_f) };
    Ok(VarianceEstimate {
        noise: to_noise(&x),
        loglik: -f,
        grid_loglik,
        evaluations: evals,
        converged: nm.2,
    })
}

/// Minimises `f` from `x0`. Returns `(x, f(x), converged)`.
fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    tol: f64,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for d in 0..n {
        let mut x = x0.to_vec();
        x[d] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut used = n + 1;
    let sort = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    };
    loop {
        sort(&mut simplex);
        let spread = simplex[n].1 - simplex[0].1;
        if spread.is_finite() && spread.abs() < tol {
            return (simplex[0].0.clone(), simplex[0].1, true);
        }
        if used >= max_evals {
            return (simplex[0].0.clone(), simplex[0].1, false);
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|p| p.0[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        used += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            used += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            used += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&p.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    p.1 = f(&x);
                    p.0 = x;
                    used += 1;
                }
            }
        }
    }
}
