//! Error metrics and the flipped/direct/windowed model comparison.

use std::fmt::Write as _;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_transition, flipped_generator, AugmentedState};
use crate::error::{Error, Result};
use crate::galerkin::{assemble_transition, DiffusivityField, VelocityField};
use crate::grid::{flip_field, unflip, Field, FlipVariant, GridSpec};
use crate::kalman::{
    estimate_variances, kf_filter, kf_forecast, MleOptions, NoiseParams, StateSpaceModel,
};
use crate::preprocess::{apply_window, hamming2d, HammingForm};
use crate::spectral::{analyze, flip_transfer, low_pass, synthesize, ModeOrdering, SpectralState};

/// Axis-aligned region with inclusive bounds, in domain units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Region {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        let ok = |r: (f64, f64)| r.0 <= r.1 && r.0 >= 0.0 && r.1 < 1.0;
        if ok(x) && ok(y) {
            Ok(Self { x, y })
        } else {
            Err(Error::InvalidArgument(format!("bad region {x:?} x {y:?}")))
        }
    }

    pub fn whole() -> Self {
        Self {
            x: (0.0, 1.0 - f64::EPSILON),
            y: (0.0, 1.0 - f64::EPSILON),
        }
    }

    /// Grid points inside the region; coordinates are compared with a small
    /// tolerance so that bounds on grid lines are included.
    pub fn indices(&self, g: GridSpec) -> Vec<usize> {
        const EPS: f64 = 1e-9;
        let inside = |v: f64, r: (f64, f64)| v >= r.0 - EPS && v <= r.1 + EPS;
        let mut out = Vec::new();
        for j in 0..g.n1() {
            for i in 0..g.n2() {
                if inside(g.x(j), self.x) && inside(g.y(i), self.y) {
                    out.push(g.index(i, j));
                }
            }
        }
        out
    }
}

/// Mean absolute error over the points of `region`.
pub fn mae(truth: &Field, estimate: &Field, region: &Region) -> Result<f64> {
    truth.ensure_same_grid(estimate)?;
    let idx = region.indices(truth.grid());
    if idx.is_empty() {
        return Err(Error::InvalidArgument("region contains no grid points".into()));
    }
    let (t, e) = (truth.values(), estimate.values());
    Ok(idx.iter().map(|&p| (t[p] - e[p]).abs()).sum::<f64>() / idx.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub label: String,
    pub flip: bool,
    pub window: bool,
    /// Retained coefficients on the domain the model is fitted on.
    pub k: usize,
}

impl ModelSpec {
    pub fn direct(k: usize) -> Self {
        Self {
            label: format!("NF{k}"),
            flip: false,
            window: false,
            k,
        }
    }

    pub fn flipped(k: usize) -> Self {
        Self {
            label: format!("F{k}"),
            flip: true,
            window: false,
            k,
        }
    }

    pub fn windowed(k: usize) -> Self {
        Self {
            label: format!("HWNF{k}"),
            flip: false,
            window: true,
            k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRegion {
    pub name: String,
    pub region: Region,
}

/// How the noise variances are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseChoice {
    /// Maximum likelihood on the training steps.
    Fit(MleOptions),
    Fixed(NoiseParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    /// Steps fed to the filter; later times are forecasts.
    pub train_steps: usize,
    pub eval_times: Vec<usize>,
    pub regions: Vec<NamedRegion>,
    pub variant: FlipVariant,
    /// Flipped models build their physics on `k / budget_ratio` original
    /// modes.
    pub budget_ratio: usize,
    pub hamming: HammingForm,
    pub noise: NoiseChoice,
    /// Variance of the independent observation noise used by flipped
    /// models, whose `H H^T` noise shape is rank deficient. `None` fits it.
    pub flipped_obs_variance: Option<f64>,
    pub prior_scale: f64,
    pub delta: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            train_steps: 20,
            eval_times: (11..=20).collect(),
            regions: vec![
                NamedRegion {
                    name: "top_strip".into(),
                    region: Region {
                        x: (0.0, 0.99),
                        y: (0.95, 0.99),
                    },
                },
                NamedRegion {
                    name: "whole".into(),
                    region: Region::whole(),
                },
            ],
            variant: FlipVariant::default(),
            budget_ratio: 4,
            hamming: HammingForm::Symmetric,
            noise: NoiseChoice::Fit(MleOptions::default()),
            flipped_obs_variance: None,
            prior_scale: 10.0,
            delta: 1.0,
        }
    }
}

/// Physics on the original grid.
#[derive(Debug, Clone)]
pub struct Physics {
    pub velocity: VelocityField,
    pub diffusivity: DiffusivityField,
}

impl Physics {
    pub fn constant_velocity(g: GridSpec, vx: f64, vy: f64) -> Self {
        Self {
            velocity: VelocityField::constant(g, vx, vy),
            diffusivity: DiffusivityField::zeros(g),
        }
    }
}

/// Output of one fitted model.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub spec: ModelSpec,
    pub ordering: ModeOrdering,
    pub noise: NoiseParams,
    pub loglik: f64,
    pub converged: bool,
    /// Filtered states for `t < train_steps`, forecasts after.
    pub states: Vec<AugmentedState>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl ModelRun {
    /// Field estimate at time `t` on the original grid.
    pub fn field_at(&self, t: usize, variant: FlipVariant) -> Result<Field> {
        let s = self.states.get(t).ok_or_else(|| {
            Error::InvalidArgument(format!("no estimate at time {t}"))
        })?;
        let f = synthesize(&s.alpha);
        if self.spec.flip {
            unflip(&f, variant)
        } else {
            Ok(f)
        }
    }
}

fn model_inputs(spec: &ModelSpec, data: &[Field], cfg: &ComparisonConfig) -> Result<Vec<Field>> {
    let mut fields = data.to_vec();
    if spec.window {
        let w = hamming2d(data[0].grid(), cfg.hamming);
        fields = fields.iter().map(|f| apply_window(f, &w)).collect::<Result<_>>()?;
    }
    if spec.flip {
        fields = fields.iter().map(|f| flip_field(f, cfg.variant)).collect();
    }
    Ok(fields)
}

/// Builds the state-space model for `spec`, with placeholder noise.
pub fn build_model(
    spec: &ModelSpec,
    grid: GridSpec,
    physics: &Physics,
    cfg: &ComparisonConfig,
) -> Result<StateSpaceModel> {
    let placeholder = NoiseParams {
        sigma2_alpha: 1.0,
        sigma2_beta: 1.0,
        sigma2_obs: 0.0,
    };
    if !spec.flip {
        let ord = ModeOrdering::truncated_for(grid, spec.k)?;
        let gen = assemble_transition(&ord, &physics.velocity, &physics.diffusivity)?;
        let tr = build_transition(&gen, cfg.delta)?;
        let k = ord.len();
        return StateSpaceModel::new(ord, tr, DMatrix::identity(k, k), placeholder);
    }
    if cfg.budget_ratio == 0 || spec.k < cfg.budget_ratio {
        return Err(Error::Config("flipped budget ratio out of range".into()));
    }
    let ord_star = ModeOrdering::truncated_for(grid.doubled(), spec.k)?;
    let ord = ModeOrdering::truncated_for(grid, spec.k / cfg.budget_ratio)?;
    let gen = assemble_transition(&ord, &physics.velocity, &physics.diffusivity)?;
    let h = flip_transfer(&ord, &ord_star, cfg.variant)?;
    let gen_star = flipped_generator(&gen, &h)?;
    let tr = build_transition(&gen_star, cfg.delta)?;
    let shape = &h.matrix * h.matrix.transpose();
    StateSpaceModel::new(ord_star, tr, shape, placeholder)
}

/// Fits, filters and forecasts one model on `data` (length = total times).
pub fn run_model(
    spec: &ModelSpec,
    data: &[Field],
    physics: &Physics,
    cfg: &ComparisonConfig,
) -> Result<ModelRun> {
    let label = spec.label.clone();
    run_model_inner(spec, data, physics, cfg).map_err(|e| Error::Model {
        label,
        source: Box::new(e),
    })
}

fn run_model_inner(
    spec: &ModelSpec,
    data: &[Field],
    physics: &Physics,
    cfg: &ComparisonConfig,
) -> Result<ModelRun> {
    if cfg.train_steps < 3 || cfg.train_steps > data.len() {
        return Err(Error::Config(format!(
            "train_steps {} out of range for {} frames",
            cfg.train_steps,
            data.len()
        )));
    }
    let grid = data[0].grid();
    if physics.velocity.grid != grid {
        return Err(Error::GridMismatch("physics grid differs from the data grid".into()));
    }
    let template = build_model(spec, grid, physics, cfg)?;
    let inputs = model_inputs(spec, &data[..cfg.train_steps], cfg)?;
    let obs: Vec<DVector<f64>> = inputs
        .iter()
        .map(|f| analyze(f, &template.ordering).map(|s| s.alpha))
        .collect::<Result<_>>()?;

    let obs_choice = if spec.flip { cfg.flipped_obs_variance } else { Some(0.0) };
    let (noise, loglik, converged) = match &cfg.noise {
        NoiseChoice::Fixed(p) => {
            let mut p = *p;
            if let Some(v) = obs_choice {
                p.sigma2_obs = p.sigma2_obs.max(v);
            }
            (p, f64::NAN, true)
        }
        NoiseChoice::Fit(opts) => {
            let mut opts = opts.clone();
            let mut tpl = template.clone();
            match obs_choice {
                Some(v) => tpl.noise.sigma2_obs = v,
                None => opts.fit_obs = true,
            }
            let est = estimate_variances(&tpl, &obs, &opts)?;
            if !est.converged {
                warn!("{}: variance search hit its evaluation budget", spec.label);
            }
            (est.noise, est.loglik, est.converged)
        }
    };
    debug!("{}: K = {}, noise {:?}", spec.label, template.dim(), noise);
    let model = template.with_noise(noise);
    let prior = model.default_prior(&obs[0], cfg.prior_scale)?;
    let filt = kf_filter(&model, &obs, &prior)?;
    let mut states = filt.means;
    let mut covariances = filt.covariances;
    let horizon = data.len() - cfg.train_steps;
    if horizon > 0 {
        let last = states.last().expect("non-empty").clone();
        let cov = covariances.last().expect("non-empty").clone();
        for (s, p) in kf_forecast(&model, &last, &cov, horizon)? {
            states.push(s);
            covariances.push(p);
        }
    }
    Ok(ModelRun {
        spec: spec.clone(),
        ordering: model.ordering.clone(),
        noise,
        loglik,
        converged,
        states,
        covariances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaeRow {
    pub model: String,
    pub region: String,
    pub time: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub label: String,
    pub k: usize,
    pub noise: NoiseParams,
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub models: Vec<ModelSummary>,
    pub rows: Vec<MaeRow>,
}

impl ComparisonReport {
    pub fn get(&self, model: &str, region: &str, time: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.region == region && r.time == time)
            .map(|r| r.mae)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,region,time,mae\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.9}", r.model, r.region, r.time, r.mae);
        }
        s
    }

    /// Wide table per region: one line per model, one column per time.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config {}", self.config_hash);
        for m in &self.models {
            let _ = writeln!(
                out,
                "{:>8}  K={:<4} s2_alpha={:.3e} s2_beta={:.3e} s2_obs={:.3e} loglik={:.3}{}",
                m.label,
                m.k,
                m.noise.sigma2_alpha,
                m.noise.sigma2_beta,
                m.noise.sigma2_obs,
                m.loglik,
                if m.converged { "" } else { " (budget hit)" }
            );
        }
        let mut regions: Vec<&str> = Vec::new();
        let mut times: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !regions.contains(&r.region.as_str()) {
                regions.push(&r.region);
            }
            if !times.contains(&r.time) {
                times.push(r.time);
            }
        }
        for reg in regions {
            let _ = writeln!(out, "\n[{reg}]");
            let _ = write!(out, "{:>8}", "model");
            for t in &times {
                let _ = write!(out, " {:>8}", format!("t{t}"));
            }
            out.push('\n');
            for m in &self.models {
                let _ = write!(out, "{:>8}", m.label);
                for &t in &times {
                    match self.get(&m.label, reg, t) {
                        Some(v) => {
                            let _ = write!(out, " {v:>8.3}");
                        }
                        None => {
                            let _ = write!(out, " {:>8}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Fits every model and scores it against the unwindowed `data`.
pub fn run_comparison(
    data: &[Field],
    specs: &[ModelSpec],
    physics: &Physics,
    cfg: &ComparisonConfig,
    config_hash: &str,
) -> Result<(ComparisonReport, Vec<ModelRun>)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let max_t = cfg.eval_times.iter().copied().max().unwrap_or(0);
    if data.len() < max_t + 1 {
        return Err(Error::Config(format!(
            "dataset has {} frames, evaluation needs {}",
            data.len(),
            max_t + 1
        )));
    }
    let mut report = ComparisonReport {
        config_hash: config_hash.to_string(),
        models: Vec::new(),
        rows: Vec::new(),
    };
    let mut runs = Vec::new();
    for spec in specs {
        let run = run_model(spec, &data[..=max_t.max(cfg.train_steps - 1)], physics, cfg)?;
        for &t in &cfg.eval_times {
            let est = run.field_at(t, cfg.variant)?;
            for nr in &cfg.regions {
                report.rows.push(MaeRow {
                    model: spec.label.clone(),
                    region: nr.name.clone(),
                    time: t,
                    mae: mae(&data[t], &est, &nr.region)?,
                });
            }
        }
        report.models.push(ModelSummary {
            label: spec.label.clone(),
            k: run.ordering.len(),
            noise: run.noise,
            loglik: run.loglik,
            converged: run.converged,
        });
        runs.push(run);
    }
    Ok((report, runs))
}

/// Truncation error over `region` of the direct reconstruction with `k`
/// modes and of the flipped reconstruction with `ratio * k` modes.
pub fn gibbs_energy(
    f: &Field,
    k: usize,
    ratio: usize,
    variant: FlipVariant,
    region: &Region,
) -> Result<(f64, f64)> {
    let g = f.grid();
    let direct = low_pass(f, &ModeOrdering::truncated_for(g, k)?)?;
    let flipped = flip_field(f, variant);
    let ord_star = ModeOrdering::truncated_for(g.doubled(), ratio * k)?;
    let back = unflip(&low_pass(&flipped, &ord_star)?, variant)?;
    Ok((mae(f, &direct, region)?, mae(f, &back, region)?))
}

/// Reconstruction of a spectral state on the original grid.
pub fn reconstruct(state: &SpectralState, flip: Option<FlipVariant>) -> Result<Field> {
    let f = synthesize(state);
    match flip {
        Some(v) => unflip(&f, v),
        None => Ok(f),
    }
}
