use serde::{Deserialize, Serialize};

use super::model::{gradients, Model};
use super::params::ParamBlocks;
use super::Task;
use crate::error::{Error, Result};
use crate::graph::PropagationMatrix;
use crate::panel::Snapshot;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

/// Arithmetic width. Only 64-bit is implemented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub task: Task,
    pub hidden: usize,
    pub optimizer: Optimizer,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            seed: 0,
            task: Task::Regression,
            hidden: 32,
            optimizer: Optimizer::Adam,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the model untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, lr: f64, params: &mut Model, grad: &Model) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let grads = grad.blocks();
        let mut offset = 0;
        for ((_, block), (_, g)) in params.blocks_mut().into_iter().zip(grads) {
            for (i, (w, &g)) in block.iter_mut().zip(g).enumerate() {
                let m = &mut self.m[offset + i];
                let v = &mut self.v[offset + i];
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
            }
            offset += block.len();
        }
    }
}

fn sgd_step(lr: f64, params: &mut Model, grad: &Model) {
    for ((_, block), (_, g)) in params.blocks_mut().into_iter().zip(grad.blocks()) {
        for (w, g) in block.iter_mut().zip(g) {
            *w -= lr * g;
        }
    }
}

/// Full-batch training. Returns the model after the last update and the
/// mean training loss seen at the start of every epoch.
pub fn train(
    model: &Model,
    snapshots: &[Snapshot],
    p: &PropagationMatrix,
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    config.validate()?;
    if snapshots.is_empty() {
        return Err(Error::EmptyData("no training snapshots".into()));
    }
    if model.task != config.task {
        return Err(Error::Config(format!(
            "model is a {} model but the config asks for {}",
            model.task, config.task
        )));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(model.parameter_count());
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grad) = gradients(&model, snapshots, p).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence {
                epoch,
                source: Box::new(e),
            },
            other => other,
        })?;
        history.push(loss);
        if config.learning_rate > 0.0 {
            match config.optimizer {
                Optimizer::Adam => adam.step(config.learning_rate, &mut model, &grad),
                Optimizer::Sgd => sgd_step(config.learning_rate, &mut model, &grad),
            }
        }
        if epoch % 50 == 0 || epoch + 1 == config.epochs {
            log::debug!("epoch {epoch}: loss {loss:.6e}");
        }
    }
    if let Some(block) = model.first_non_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            source: Box::new(Error::NonFinite { block }),
        });
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;
    use crate::graph::{propagation_matrix, Edge, MobilityGraph};
    use crate::panel::Target;
    use crate::stgnn::ModelKind;

    fn ring(n: usize) -> PropagationMatrix {
        let ids = (0..n).map(|i| format!("n{i}")).collect();
        let edges = (0..n).map(|i| Edge {
            source: i,
            target: (i + 1) % n,
            weight: 1.0,
        });
        propagation_matrix(&MobilityGraph::undirected(ids, edges).unwrap()).unwrap()
    }

    fn batch(n: usize, count: usize) -> Vec<Snapshot> {
        (0..count)
            .map(|b| Snapshot {
                window: Array2::from_shape_fn((n, 3), |(i, j)| ((i + j + b) as f64 * 0.7).sin()),
                target: Target::Values(Array2::from_shape_fn((n, 1), |(i, _)| {
                    ((i + b + 3) as f64 * 0.7).sin()
                })),
                anchor_day: 2 + b,
                horizon: 1,
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let model = Model::new(ModelKind::Gcrn, Task::Regression, 3, 1, 4);
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 4,
            hidden: 3,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&model, &batch(4, 3), &ring(4), &config).unwrap();
        assert_eq!(trained, model);
        assert_eq!(history.len(), 4);
        assert!(history.iter().all(|&l| l == history[0]));
    }

    #[test]
    fn adam_and_sgd_reduce_loss_deterministically() {
        for optimizer in [Optimizer::Adam, Optimizer::Sgd] {
            let model = Model::new(ModelKind::Gclstm, Task::Regression, 4, 1, 8);
            let config = TrainConfig {
                learning_rate: if optimizer == Optimizer::Adam {
                    0.02
                } else {
                    0.2
                },
                epochs: 60,
                hidden: 4,
                optimizer,
                ..TrainConfig::default()
            };
            let data = batch(5, 4);
            let (_, a) = train(&model, &data, &ring(5), &config).unwrap();
            let (_, b) = train(&model, &data, &ring(5), &config).unwrap();
            assert_eq!(a, b);
            assert!(a[59] < 0.5 * a[0], "{optimizer:?}: {} -> {}", a[0], a[59]);
        }
    }

    #[test]
    fn divergence_reports_epoch() {
        let model = Model::new(ModelKind::Gcrn, Task::Regression, 2, 1, 1);
        let mut data = batch(3, 2);
        if let Target::Values(y) = &mut data[1].target {
            y[[0, 0]] = f64::INFINITY;
        }
        let config = TrainConfig {
            epochs: 3,
            hidden: 2,
            ..TrainConfig::default()
        };
        match train(&model, &data, &ring(3), &config) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let model = Model::new(ModelKind::Gcrn, Task::Regression, 2, 1, 1);
        let data = batch(3, 1);
        for config in [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..TrainConfig::default()
            },
            TrainConfig {
                task: Task::Classification,
                ..TrainConfig::default()
            },
        ] {
            assert!(train(&model, &data, &ring(3), &config).is_err());
        }
        assert!(train(&model, &[], &ring(3), &TrainConfig::default()).is_err());
    }
}
