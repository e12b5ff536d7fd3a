//! Synthetic datasets: the advection-with-source process and a storm-like
//! reflectivity stack.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{matrix_exp, AugmentedState};
use crate::error::{Error, Result};
use crate::galerkin::{assemble_transition, DiffusivityField, VelocityField};
use crate::grid::{Field, GridSpec};
use crate::spectral::{analyze, synthesize, Branch, ModeOrdering, SpectralState};

/// Which coefficients receive the per-step white noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModes {
    All,
    /// Only the lowest `n` coefficients (in truncation order); all of
    /// them when `n` is at least the grid size.
    Lowest(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub grid: GridSpec,
    pub steps: usize,
    pub delta: f64,
    pub velocity: (f64, f64),
    pub source_center: (f64, f64),
    pub source_scale: f64,
    pub source_amplitude: f64,
    /// Variance of the white noise added to `alpha` each step.
    pub noise_alpha: f64,
    /// Variance of the white noise added to `beta` each step.
    pub noise_beta: f64,
    pub noise_modes: NoiseModes,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::square(100).expect("valid grid"),
            steps: 30,
            delta: 1.0,
            velocity: (0.01, 0.0),
            source_center: (0.1, 0.0),
            source_scale: 0.18,
            source_amplitude: 3.0,
            noise_alpha: 0.005,
            noise_beta: 0.001,
            noise_modes: NoiseModes::Lowest(100),
            seed: 20_240_501,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps < 2 {
            return bad("simulation needs at least 2 steps");
        }
        if !(self.source_scale > 0.0 && self.source_scale.is_finite()) {
            return bad("source_scale must be > 0");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be > 0");
        }
        if !(self.noise_alpha >= 0.0 && self.noise_beta >= 0.0) {
            return bad("noise variances must be >= 0");
        }
        if let NoiseModes::Lowest(n) = self.noise_modes {
            if n == 0 {
                return bad("noise_modes lowest count must be >= 1");
            }
        }
        let finite = [
            self.velocity.0,
            self.velocity.1,
            self.source_center.0,
            self.source_center.1,
            self.source_amplitude,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite simulation parameter");
        }
        Ok(())
    }
}

/// `Q(s) = a / (2 pi r^2) exp(-|c - s|^2 / (2 r^2))`.
pub fn forcing_field(cfg: &SimulationConfig) -> Field {
    let (cx, cy) = cfg.source_center;
    let r2 = cfg.source_scale * cfg.source_scale;
    let peak = cfg.source_amplitude / (2.0 * PI * r2);
    Field::from_fn(cfg.grid, |x, y| {
        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
        peak * (-d2 / (2.0 * r2)).exp()
    })
}

/// Exact `exp(delta P)` for a spatially constant velocity and no diffusion:
/// K2 cosine/sine pairs rotate by `2 pi k.v delta`, K1 modes are fixed.
pub fn advect_constant(state: &mut SpectralState, velocity: (f64, f64), delta: f64) {
    let ord = state.ordering.clone();
    let a = &mut state.alpha;
    for (idx, c) in ord.coefficients().enumerate() {
        if c.branch != Branch::Cos || c.weight == 1.0 {
            continue;
        }
        let Some(s_idx) = ord.position(c.k, Branch::Sin) else {
            continue;
        };
        let w = 2.0 * PI * (c.k.0 as f64 * velocity.0 + c.k.1 as f64 * velocity.1) * delta;
        let (sn, cs) = w.sin_cos();
        let (ac, asn) = (a[idx], a[s_idx]);
        a[idx] = cs * ac - sn * asn;
        a[s_idx] = sn * ac + cs * asn;
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub fields: Vec<Field>,
    /// Ground-truth `(alpha, beta)` at every step, full retention.
    pub states: Vec<AugmentedState>,
}

fn add_noise(v: &mut DVector<f64>, var: f64, targets: &[usize], rng: &mut ChaCha8Rng) {
    if var == 0.0 {
        return;
    }
    let sd = var.sqrt();
    for &p in targets {
        let z: f64 = StandardNormal.sample(rng);
        v[p] += sd * z;
    }
}

/// The advection-with-source process at full retention.
///
/// `alpha(0) = beta(0) = analyze(Q)`; each step applies the exact transition,
/// adds `beta`, then perturbs `alpha` and `beta` with white noise.
pub fn simulate_advection(cfg: &SimulationConfig) -> Result<Simulation> {
    simulate_with(cfg, |state| {
        advect_constant(state, cfg.velocity, cfg.delta);
        Ok(())
    })
}

/// Same process, stepping with a dense `exp(delta P)` from the assembled
/// generator. Only practical on small grids.
pub fn simulate_advection_dense(cfg: &SimulationConfig) -> Result<Simulation> {
    let ord = ModeOrdering::full_for(cfg.grid);
    let vel = VelocityField::constant(cfg.grid, cfg.velocity.0, cfg.velocity.1);
    let gen = assemble_transition(&ord, &vel, &DiffusivityField::zeros(cfg.grid))?;
    let phi = matrix_exp(&(&gen.matrix * cfg.delta))?;
    simulate_with(cfg, |state| {
        state.alpha = &phi * &state.alpha;
        Ok(())
    })
}

fn simulate_with(
    cfg: &SimulationConfig,
    mut evolve: impl FnMut(&mut SpectralState) -> Result<()>,
) -> Result<Simulation> {
    cfg.validate()?;
    let ord = ModeOrdering::full_for(cfg.grid);
    let q = analyze(&forcing_field(cfg), &ord)?;
    let targets: Vec<usize> = match cfg.noise_modes {
        NoiseModes::Lowest(n) if n < ord.len() => {
            ModeOrdering::truncated(ord.sets().clone(), n)?.embedding_into(&ord)?
        }
        _ => (0..ord.len()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut alpha = q.clone();
    let mut beta = q.alpha.clone();
    let mut out = Simulation {
        fields: Vec::with_capacity(cfg.steps),
        states: Vec::with_capacity(cfg.steps),
    };
    for t in 0..cfg.steps {
        if t > 0 {
            evolve(&mut alpha)?;
            alpha.alpha += &beta;
            add_noise(&mut alpha.alpha, cfg.noise_alpha, &targets, &mut rng);
            add_noise(&mut beta, cfg.noise_beta, &targets, &mut rng);
        }
        out.fields.push(synthesize(&alpha));
        out.states.push(AugmentedState::new(alpha.clone(), beta.clone())?);
    }
    Ok(out)
}

/// Storm-like reflectivity stack: Gaussian rain cells entering from the
/// north-west corner and drifting south-east. Synthetic data, not radar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StormConfig {
    pub grid: GridSpec,
    pub steps: usize,
    pub cells: usize,
    /// Mean drift in domain units per step.
    pub velocity: (f64, f64),
    /// Peak rain rate of a cell, mm/hr.
    pub peak_rain: f64,
    pub cell_scale: f64,
    pub seed: u64,
}

impl Default for StormConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::square(64).expect("valid grid"),
            steps: 8,
            cells: 5,
            velocity: (0.02, -0.015),
            peak_rain: 40.0,
            cell_scale: 0.15,
            seed: 7,
        }
    }
}

/// Rain rate (mm/hr) to reflectivity (dBZ), inverse Marshall-Palmer, with
/// rates below `floor` clamped to `floor`.
pub fn rain_to_reflectivity(r: f64, floor: f64) -> f64 {
    10.0 * (200.0 * r.max(floor).powf(1.6)).log10()
}

pub fn synthetic_storm(cfg: &StormConfig) -> Result<Vec<Field>> {
    if cfg.steps < 2 || cfg.cells == 0 || !(cfg.cell_scale > 0.0) || !(cfg.peak_rain > 0.0) {
        return Err(Error::Config("invalid storm configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut u = || -> f64 {
        let z: f64 = rand::Rng::random(&mut rng);
        z
    };
    // cells start around the north-west corner, partly outside the domain
    let cells: Vec<(f64, f64, f64, f64)> = (0..cfg.cells)
        .map(|_| {
            let x = -0.05 + 0.25 * u();
            let y = 0.8 + 0.25 * u();
            let amp = cfg.peak_rain * (0.5 + 0.5 * u());
            let scale = cfg.cell_scale * (0.7 + 0.6 * u());
            (x, y, amp, scale)
        })
        .collect();
    let (vx, vy) = cfg.velocity;
    Ok((0..cfg.steps)
        .map(|t| {
            let t = t as f64;
            Field::from_fn(cfg.grid, |x, y| {
                let r: f64 = cells
                    .iter()
                    .map(|&(cx, cy, a, s)| {
                        let d2 = (x - cx - vx * t).powi(2) + (y - cy - vy * t).powi(2);
                        a * (-d2 / (2.0 * s * s)).exp()
                    })
                    .sum();
                rain_to_reflectivity(r, 1e-3)
            })
        })
        .collect())
}
