use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{BackboneParams, Criterion};
use crate::ingest::SynthSpec;
use crate::panel::{Windowing, DEFAULT_ALERT_THRESHOLD};
use crate::stgnn::{ModelKind, Task, TrainConfig};

/// Largest window or horizon accepted by grid sweeps.
pub const GRID_MAX: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Files {
        edges: PathBuf,
        panel: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        population: Option<PathBuf>,
    },
    Synthetic(SynthSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub enabled: bool,
    pub alpha: f64,
    pub min_keep: usize,
    pub criterion: Criterion,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let p = BackboneParams::default();
        Self {
            enabled: false,
            alpha: p.alpha,
            min_keep: p.min_keep,
            criterion: p.criterion,
        }
    }
}

impl BackboneConfig {
    pub fn params(&self) -> BackboneParams {
        BackboneParams {
            alpha: self.alpha,
            min_keep: self.min_keep,
            criterion: self.criterion,
        }
    }
}

/// One end-to-end run. Stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub task: Task,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub windowing: Windowing,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_threshold")]
    pub alert_threshold: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub data: DataSource,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_window() -> usize {
    7
}
fn default_horizon() -> usize {
    1
}
fn default_fraction() -> f64 {
    0.8
}
fn default_threshold() -> f64 {
    DEFAULT_ALERT_THRESHOLD
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(data: DataSource) -> Self {
        Self {
            name: default_name(),
            model: ModelKind::default(),
            task: Task::default(),
            window: default_window(),
            horizon: default_horizon(),
            windowing: Windowing::default(),
            train_fraction: default_fraction(),
            alert_threshold: default_threshold(),
            output: default_output(),
            data,
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
        }
    }

    /// Parses TOML; relative data and output paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            config.rebase(dir);
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let DataSource::Files {
            edges,
            panel,
            population,
        } = &mut self.data
        {
            fix(edges);
            fix(panel);
            if let Some(p) = population {
                fix(p);
            }
        }
        fix(&mut self.output);
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Seed used to initialise the model: a hash of the base seed and the
    /// window and horizon, so grid cells are independent but reproducible.
    pub fn model_seed(&self) -> u64 {
        cell_seed(self.train.seed, self.window, self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "window and horizon must be at least 1".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !self.alert_threshold.is_finite() {
            return Err(Error::Config("alert_threshold must be finite".into()));
        }
        if self.train.task != self.task {
            return Err(Error::Config(format!(
                "task is {} but train.task is {}",
                self.task, self.train.task
            )));
        }
        self.train.validate()?;
        match &self.data {
            DataSource::Files {
                edges,
                panel,
                population,
            } => {
                for p in [Some(edges), Some(panel), population.as_ref()]
                    .into_iter()
                    .flatten()
                {
                    if !p.exists() {
                        return Err(Error::Config(format!(
                            "input file {} does not exist",
                            p.display()
                        )));
                    }
                }
                if self.task == Task::Classification && population.is_none() {
                    return Err(Error::Config(
                        "classification needs a population file".into(),
                    ));
                }
            }
            DataSource::Synthetic(spec) => spec.validate()?,
        }
        Ok(())
    }

    /// Applies `task` to both the experiment and its training config.
    pub fn set_task(&mut self, task: Task) {
        self.task = task;
        self.train.task = task;
    }
}

pub fn cell_seed(base: u64, window: usize, horizon: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((window as u64).to_le_bytes());
    h.update((horizon as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "exp3"
model = "gclstm"
window = 5
horizon = 2

[data.synthetic]
nodes = 8
days = 60
seed = 3

[backbone]
enabled = true
alpha = 0.05

[train]
epochs = 3
hidden = 4
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.model, ModelKind::Gclstm);
        assert_eq!(c.windowing, Windowing::Sliding);
        assert_eq!(c.backbone.min_keep, 5);
        assert_eq!(c.train.learning_rate, 0.01);
        let DataSource::Synthetic(spec) = &c.data else {
            panic!()
        };
        assert_eq!(spec.nodes, 8);
        c.validate().unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml(&format!("{SAMPLE}\nbogus = 1\n")).is_err());
        let mut c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        c.train_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        c.task = Task::Classification;
        assert!(c.validate().is_err());
        c.set_task(Task::Classification);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn cell_seeds_differ_per_cell() {
        let a = cell_seed(1, 3, 4);
        assert_eq!(a, cell_seed(1, 3, 4));
        assert_ne!(a, cell_seed(1, 4, 3));
        assert_ne!(a, cell_seed(2, 3, 4));
    }

    #[test]
    fn missing_files_fail_validation() {
        let mut c = ExperimentConfig::new(DataSource::Files {
            edges: "/nonexistent/e.csv".into(),
            panel: "/nonexistent/p.csv".into(),
            population: None,
        });
        assert!(c.validate().is_err());
        c.data = DataSource::Synthetic(SynthSpec::default());
        assert!(c.validate().is_ok());
    }
}
