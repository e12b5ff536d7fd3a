//! Run configuration: one TOML document covering every stage, plus the
//! built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{ComparisonConfig, ModelSpec, NamedRegion, Region};
use crate::grid::GridSpec;
use crate::motion::MotionConfig;
use crate::simulate::{SimulationConfig, StormConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// The advection-with-source process.
    Advection,
    /// Synthetic storm reflectivity, converted to rain rate before modelling.
    Storm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhysicsSource {
    /// The simulation's constant velocity, no diffusion.
    Known,
    /// Block-matching velocity averaged over the training pairs, with the
    /// shear-based diffusivity.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub data: DataSource,
    pub physics: PhysicsSource,
    pub simulation: SimulationConfig,
    pub storm: StormConfig,
    pub motion: MotionConfig,
    /// Velocity-field resolution for the diffusivity; defaults to the
    /// block stride.
    pub resolution: Option<(f64, f64)>,
    /// Plausible speed range, domain lengths per step.
    pub speed_band: (f64, f64),
    pub comparison: ComparisonConfig,
    pub models: Vec<ModelSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::example_one()
    }
}

pub const PRESETS: [&str; 3] = ["exampleI", "table1", "storm"];

impl RunConfig {
    pub fn example_one() -> Self {
        Self {
            name: "exampleI".into(),
            data: DataSource::Advection,
            physics: PhysicsSource::Known,
            simulation: SimulationConfig::default(),
            storm: StormConfig::default(),
            motion: MotionConfig::default(),
            resolution: None,
            speed_band: (0.0, 0.1),
            comparison: ComparisonConfig::default(),
            models: vec![
                ModelSpec::direct(100),
                ModelSpec::direct(196),
                ModelSpec::direct(400),
                ModelSpec::flipped(400),
            ],
        }
    }

    pub fn table_one() -> Self {
        let mut c = Self::example_one();
        c.name = "table1".into();
        c.comparison.eval_times = (15..=20).collect();
        c.comparison.regions = vec![NamedRegion {
            name: "whole".into(),
            region: Region::whole(),
        }];
        c.models = vec![
            ModelSpec::windowed(100),
            ModelSpec::windowed(196),
            ModelSpec::windowed(400),
            ModelSpec::flipped(400),
        ];
        c
    }

    pub fn storm() -> Self {
        let mut c = Self::example_one();
        c.name = "storm".into();
        c.data = DataSource::Storm;
        c.physics = PhysicsSource::Estimated;
        c.storm = StormConfig::default();
        c.comparison.train_steps = 6;
        c.comparison.eval_times = (2..c.storm.steps).collect();
        c.comparison.regions = vec![NamedRegion {
            name: "south_east".into(),
            region: Region {
                x: (0.5, 0.99),
                y: (0.0, 0.49),
            },
        }];
        c.models = vec![ModelSpec::direct(50), ModelSpec::flipped(200)];
        c
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "exampleI" | "examplei" | "example1" => Some(Self::example_one()),
            "table1" => Some(Self::table_one()),
            "storm" => Some(Self::storm()),
            _ => None,
        }
    }

    /// A preset name or a path to a TOML file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(c) = Self::preset(spec) {
            return Ok(c);
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(Error::Config(format!(
                "{spec:?} is neither a preset ({}) nor an existing file",
                PRESETS.join(", ")
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> GridSpec {
        match self.data {
            DataSource::Advection => self.simulation.grid,
            DataSource::Storm => self.storm.grid,
        }
    }

    pub fn steps(&self) -> usize {
        match self.data {
            DataSource::Advection => self.simulation.steps,
            DataSource::Storm => self.storm.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.motion.validate()?;
        let c = &self.comparison;
        if c.train_steps < 3 || c.train_steps > self.steps() {
            return Err(Error::Config(format!(
                "train_steps {} must be in [3, {}]",
                c.train_steps,
                self.steps()
            )));
        }
        if let Some(&t) = c.eval_times.iter().max() {
            if t >= self.steps() {
                return Err(Error::Config(format!("eval time {t} beyond the last frame")));
            }
        }
        if !(c.delta > 0.0) || !(c.prior_scale > 0.0) {
            return Err(Error::Config("delta and prior_scale must be > 0".into()));
        }
        let n = self.grid().len();
        for m in &self.models {
            let cap = if m.flip { 4 * n } else { n };
            if m.k == 0 || m.k > cap {
                return Err(Error::Config(format!("{}: K = {} out of range", m.label, m.k)));
            }
            if m.flip && m.k < c.budget_ratio {
                return Err(Error::Config(format!("{}: K below the budget ratio", m.label)));
            }
        }
        if self.speed_band.0 > self.speed_band.1 {
            return Err(Error::Config("speed_band is inverted".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding; every numeric parameter is
    /// a field of this struct, so the hash covers all of them.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is serialisable");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
