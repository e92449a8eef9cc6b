//! Run configuration files. Every section is optional; flags override
//! whatever the file sets, and presets fill the rest.

use std::path::{Path, PathBuf};

use pulsenet::ingest::{dvs::DvsConfig, kitti::FrontViewConfig, SplitConfig};
use pulsenet::simlidar::SimConfig;
use pulsenet::{Error, ModelSpec, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Simlidar,
    Kitti,
    Dvs,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simlidar => "simlidar",
            Task::Kitti => "kitti",
            Task::Dvs => "dvs",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Task::Simlidar, Task::Kitti, Task::Dvs].into_iter().find(|t| t.name() == s)
    }
}

/// A preset name or a full network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Preset(String),
    Spec(ModelSpec),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self {
            ModelRef::Preset(name) => {
                ModelSpec::preset(name).ok_or_else(|| Error::Config(format!("unknown model preset {name:?}")))
            }
            ModelRef::Spec(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Emitter rate, points per second.
    pub points_per_second: f64,
    /// Energy per spike, joules.
    pub alpha: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    20
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { points_per_second: 2.2e6, alpha: 0.37e-12, bins: default_bins() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KittiSection {
    #[serde(default)]
    pub view: FrontViewConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvsSection {
    #[serde(default)]
    pub events: DvsConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    pub model: Option<ModelRef>,
    pub train: Option<TrainConfig>,
    pub eval: Option<EvalSection>,
    pub simlidar: Option<SimConfig>,
    pub kitti: Option<KittiSection>,
    pub dvs: Option<DvsSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))?;
        cfg.validate().map_err(|e| e.in_file(path))?;
        Ok(cfg)
    }

    /// Checks every section that is present, before any work starts.
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.model {
            m.resolve()?;
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if let Some(e) = &self.eval {
            pulsenet::eval::RateModel::new(e.points_per_second)?;
            pulsenet::eval::EnergyModel::new(e.alpha)?;
            if e.bins == 0 {
                return Err(Error::Config("eval.bins must be at least 1".into()));
            }
        }
        if let Some(s) = &self.simlidar {
            s.validate()?;
        }
        if let Some(k) = &self.kitti {
            k.view.validate()?;
        }
        if let Some(d) = &self.dvs {
            d.events.validate()?;
        }
        for p in [&self.paths.data, &self.paths.checkpoint].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The task's model: the configured one, else the task preset.
    pub fn model_spec(&self, task: Task) -> Result<ModelSpec> {
        match &self.model {
            Some(m) => m.resolve(),
            None => Ok(ModelSpec::preset(task.name()).expect("every task has a preset")),
        }
    }

    pub fn train_config(&self, task: Task) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| TrainConfig::preset(task.name()).expect("every task has a preset"))
    }
}
