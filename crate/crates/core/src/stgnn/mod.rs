//! Graph-convolutional recurrent forecasters.
//!
//! Two cells are provided, [`GcrnParameters`] (GRU gating) and
//! [`GclstmParameters`] (LSTM gating with peepholes). Every linear map inside
//! a gate is a graph convolution `P · X · W + b` over the propagation matrix.
//! A [`Model`] runs one cell over the input window and maps the final hidden
//! state through a per-node linear head: `F` values for regression or two
//! log-probabilities (Stable, Alert) for classification.
//!
//! Batches are evaluated row-stacked: `B` snapshots of `N` nodes become one
//! `B·N`-row matrix, so the dense products run as a few large GEMMs.
//! Gradients are exact reverse-mode derivatives computed by hand through
//! every step of the window.

mod checkpoint;
mod conv;
mod gclstm;
mod gcrn;
mod model;
mod params;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use conv::{graph_conv, GraphConvWeights};
pub use gclstm::{gclstm_step, GclstmParameters};
pub use gcrn::{gcrn_step, GcrnParameters};
pub use model::{
    forward, gradients, head_width, loss, predict_batch, Cell, HeadParameters, Model, Prediction,
};
pub use params::ParamBlocks;
pub use train::{train, Optimizer, Precision, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Gcrn,
    Gclstm,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gcrn => "GCRN",
            ModelKind::Gclstm => "GCLSTM",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcrn" => Ok(ModelKind::Gcrn),
            "gclstm" => Ok(ModelKind::Gclstm),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn check_state(
    context: &'static str,
    x: &Array2<f64>,
    state: &Array2<f64>,
    hidden: usize,
) -> Result<()> {
    if state.dim() != (x.nrows(), hidden) {
        return Err(Error::shape(context, (x.nrows(), hidden), state.dim()));
    }
    Ok(())
}
