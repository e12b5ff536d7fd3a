//! End-to-end runs driven by a [`RunConfig`].

use crate::config::{DataSource, PhysicsSource, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{run_comparison, ComparisonReport, ModelRun, Physics};
use crate::galerkin::VelocityField;
use crate::grid::Field;
use crate::motion::{default_resolution, diffusivity_from_velocity, estimate_velocity, MotionConfig};
use crate::preprocess::reflectivity_to_rain;
use crate::simulate::{simulate_advection, synthetic_storm};

/// Frames as generated, before any unit conversion.
pub fn raw_frames(cfg: &RunConfig) -> Result<(Vec<Field>, &'static str)> {
    match cfg.data {
        DataSource::Advection => Ok((simulate_advection(&cfg.simulation)?.fields, "field")),
        DataSource::Storm => Ok((synthetic_storm(&cfg.storm)?, "dBZ")),
    }
}

/// Frames in the units the models are fitted on (rain rate for storms).
pub fn model_frames(cfg: &RunConfig) -> Result<Vec<Field>> {
    let (frames, units) = raw_frames(cfg)?;
    Ok(if units == "dBZ" {
        frames.iter().map(reflectivity_to_rain).collect()
    } else {
        frames
    })
}

/// Per-pair block-matching velocities averaged over consecutive frames.
pub fn mean_velocity(frames: &[Field], motion: &MotionConfig) -> Result<VelocityField> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument("velocity needs at least two frames".into()));
    }
    let g = frames[0].grid();
    let mut vx = vec![0.0; g.len()];
    let mut vy = vec![0.0; g.len()];
    let pairs = (frames.len() - 1) as f64;
    for w in frames.windows(2) {
        let v = estimate_velocity(&w[0], &w[1], motion)?;
        for p in 0..g.len() {
            vx[p] += v.vx[p] / pairs;
            vy[p] += v.vy[p] / pairs;
        }
    }
    VelocityField::new(g, vx, vy)
}

pub fn physics(cfg: &RunConfig, frames: &[Field]) -> Result<Physics> {
    let g = cfg.grid();
    match cfg.physics {
        PhysicsSource::Known => {
            let (vx, vy) = cfg.simulation.velocity;
            Ok(Physics::constant_velocity(g, vx, vy))
        }
        PhysicsSource::Estimated => {
            let train = &frames[..cfg.comparison.train_steps.min(frames.len())];
            let velocity = mean_velocity(train, &cfg.motion)?;
            let (dx, dy) = cfg
                .resolution
                .unwrap_or_else(|| default_resolution(g, &cfg.motion));
            let diffusivity = diffusivity_from_velocity(&velocity, dx, dy)?;
            Ok(Physics {
                velocity,
                diffusivity,
            })
        }
    }
}

/// Generates the data, derives the physics and runs every configured model.
pub fn evaluate(cfg: &RunConfig) -> Result<(ComparisonReport, Vec<ModelRun>)> {
    cfg.validate()?;
    let frames = model_frames(cfg)?;
    let phys = physics(cfg, &frames)?;
    run_comparison(&frames, &cfg.models, &phys, &cfg.comparison, &cfg.hash())
}
