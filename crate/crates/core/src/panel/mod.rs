//! Node × day case panels and their preprocessing.

mod labels;
mod snapshot;
mod zscore;

use std::collections::HashMap;

use chrono::NaiveDate;
use ndarray::Array2;

use crate::error::{Error, Result};

pub use labels::{
    classification_targets, moving_average, ols_slope, trend_slope, Label, LabelMatrix, ALERT,
    DEFAULT_ALERT_THRESHOLD, MOVING_AVERAGE_WIDTH, STABLE,
};
pub use snapshot::{
    count_snapshots, make_labeled_snapshots, make_snapshots, snapshot_anchors, split_chronological,
    train_count, training_day_range, Snapshot, Target, Windowing,
};
pub use zscore::{apply_zscore, fit_zscore, invert_zscore, DayRange, StandardizationParams};

/// Daily new cases, one row per node and one column per day.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelSeries {
    values: Array2<f64>,
    node_ids: Vec<String>,
    start_day: NaiveDate,
}

impl PanelSeries {
    pub fn new(values: Array2<f64>, node_ids: Vec<String>, start_day: NaiveDate) -> Result<Self> {
        let (n, t) = values.dim();
        if n == 0 || t == 0 {
            return Err(Error::EmptyData(format!(
                "panel must be non-empty, got {n}x{t}"
            )));
        }
        if node_ids.len() != n {
            return Err(Error::shape("panel node ids", n, node_ids.len()));
        }
        Ok(Self {
            values,
            node_ids,
            start_day,
        })
    }

    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn day_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn start_day(&self) -> NaiveDate {
        self.start_day
    }

    pub fn day(&self, index: usize) -> NaiveDate {
        self.start_day + chrono::Days::new(index as u64)
    }

    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self {
            values,
            node_ids: self.node_ids.clone(),
            start_day: self.start_day,
        }
    }

    /// Reorders (and subsets) rows: row `i` of the result is row `order[i]`.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let values = self.values.select(ndarray::Axis(0), order);
        let node_ids = order.iter().map(|&i| self.node_ids[i].clone()).collect();
        Self {
            values,
            node_ids,
            start_day: self.start_day,
        }
    }
}

/// Residents per node, keyed by node identifier.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PopulationTable {
    by_node: HashMap<String, f64>,
}

impl PopulationTable {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut by_node = HashMap::new();
        for (id, pop) in entries {
            if !(pop > 0.0 && pop.is_finite()) {
                return Err(Error::invalid(format!(
                    "population of {id} must be positive, got {pop}"
                )));
            }
            if by_node.insert(id.clone(), pop).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate population entry for {id}"
                )));
            }
        }
        Ok(Self { by_node })
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.by_node.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    /// Populations aligned with `node_ids`; a missing node is a
    /// configuration error.
    pub fn aligned(&self, node_ids: &[String]) -> Result<Vec<f64>> {
        node_ids
            .iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::Config(format!("no population for node {id}")))
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.by_node.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
