use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::params::ParamBlocks;
use super::train::TrainConfig;
use super::{ModelKind, Task};
use crate::error::{Error, Result};

const FORMAT: &str = "epigraph-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub values: Vec<f64>,
}

/// Self-describing JSON snapshot of a trained model. Floats are written
/// with shortest round-trip formatting, so loading is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub task: Task,
    pub hidden: usize,
    pub output_width: usize,
    pub config: TrainConfig,
    pub blocks: Vec<Block>,
}

impl Checkpoint {
    pub fn new(model: &Model, config: &TrainConfig) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind: model.kind(),
            task: model.task,
            hidden: model.hidden(),
            output_width: model.output_width(),
            config: config.clone(),
            blocks: model
                .blocks()
                .into_iter()
                .map(|(name, values)| Block {
                    name,
                    values: values.to_vec(),
                })
                .collect(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn model(&self) -> Result<Model> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let horizon = match self.task {
            Task::Regression => self.output_width,
            Task::Classification => 1,
        };
        let mut model = Model::zeros(self.kind, self.task, self.hidden, horizon);
        if model.output_width() != self.output_width {
            return Err(Error::shape(
                "checkpoint head width",
                model.output_width(),
                self.output_width,
            ));
        }
        let mut targets = model.blocks_mut();
        if targets.len() != self.blocks.len() {
            return Err(Error::shape(
                "checkpoint block count",
                targets.len(),
                self.blocks.len(),
            ));
        }
        for ((name, dst), src) in targets.iter_mut().zip(&self.blocks) {
            if *name != src.name {
                return Err(Error::Serde(format!(
                    "expected block `{name}`, found `{}`",
                    src.name
                )));
            }
            if dst.len() != src.values.len() {
                return Err(Error::shape(
                    "checkpoint block length",
                    dst.len(),
                    src.values.len(),
                ));
            }
            dst.copy_from_slice(&src.values);
        }
        drop(targets);
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for (kind, task) in [
            (ModelKind::Gcrn, Task::Regression),
            (ModelKind::Gclstm, Task::Classification),
        ] {
            let mut model = Model::new(kind, task, 5, 3, 77);
            model.head.bias[0] = 0.1 + 0.2;
            model.head.bias[1] = -1.0e-310;
            let config = TrainConfig {
                seed: 77,
                task,
                hidden: 5,
                ..TrainConfig::default()
            };
            let ckpt = Checkpoint::new(&model, &config);
            let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            assert_eq!(back, ckpt);
            assert_eq!(back.seed(), 77);
            let restored = back.model().unwrap();
            for ((_, a), (_, b)) in restored.blocks().iter().zip(model.blocks()) {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn rejects_tampered_blocks() {
        let model = Model::new(ModelKind::Gcrn, Task::Regression, 2, 1, 1);
        let mut ckpt = Checkpoint::new(&model, &TrainConfig::default());
        ckpt.blocks[0].values.pop();
        assert!(ckpt.model().is_err());
        let mut ckpt = Checkpoint::new(&model, &TrainConfig::default());
        ckpt.blocks[1].name = "other".into();
        assert!(ckpt.model().is_err());
    }
}
