use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{DayRange, Label, LabelMatrix, PanelSeries};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Windowing {
    /// Stride-1 overlapping windows.
    #[default]
    Sliding,
    /// Non-overlapping blocks of `window + horizon` days.
    Segmented,
}

impl std::str::FromStr for Windowing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sliding" => Ok(Windowing::Sliding),
            "segmented" => Ok(Windowing::Segmented),
            other => Err(Error::invalid(format!("unknown windowing `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// `N × F` future values.
    Values(Array2<f64>),
    /// One label per node at the last horizon day.
    Labels(Vec<Label>),
}

/// One supervised example: days `[t-l+1, t]` in, days `[t+1, t+F]` out.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub window: Array2<f64>,
    pub target: Target,
    pub anchor_day: usize,
    pub horizon: usize,
}

impl Snapshot {
    pub fn node_count(&self) -> usize {
        self.window.nrows()
    }

    pub fn window_len(&self) -> usize {
        self.window.ncols()
    }

    pub fn window_days(&self) -> DayRange {
        DayRange::new(self.anchor_day + 1 - self.window_len(), self.anchor_day + 1)
    }

    pub fn target_days(&self) -> DayRange {
        DayRange::new(self.anchor_day + 1, self.anchor_day + 1 + self.horizon)
    }
}

fn check_sizes(days: usize, window: usize, horizon: usize) -> Result<()> {
    if window == 0 || horizon == 0 {
        return Err(Error::invalid(format!(
            "window ({window}) and horizon ({horizon}) must be at least 1"
        )));
    }
    if days < window + horizon {
        return Err(Error::EmptyData(format!(
            "{days} days cannot hold a window of {window} plus a horizon of {horizon}"
        )));
    }
    Ok(())
}

/// Number of snapshots `make_snapshots` would produce.
pub fn count_snapshots(
    days: usize,
    window: usize,
    horizon: usize,
    mode: Windowing,
) -> Result<usize> {
    check_sizes(days, window, horizon)?;
    Ok(match mode {
        Windowing::Sliding => days - window - horizon + 1,
        Windowing::Segmented => days / (window + horizon),
    })
}

/// Anchor days (last input day) of every snapshot, in chronological order.
pub fn snapshot_anchors(
    days: usize,
    window: usize,
    horizon: usize,
    mode: Windowing,
) -> Result<Vec<usize>> {
    let count = count_snapshots(days, window, horizon, mode)?;
    Ok(match mode {
        Windowing::Sliding => (0..count).map(|i| i + window - 1).collect(),
        Windowing::Segmented => (0..count)
            .map(|i| i * (window + horizon) + window - 1)
            .collect(),
    })
}

fn build<F>(
    panel: &PanelSeries,
    window: usize,
    horizon: usize,
    mode: Windowing,
    mut target: F,
) -> Result<Vec<Snapshot>>
where
    F: FnMut(usize) -> Target,
{
    let anchors = snapshot_anchors(panel.day_count(), window, horizon, mode)?;
    Ok(anchors
        .into_iter()
        .map(|t| Snapshot {
            window: panel.values().slice(s![.., t + 1 - window..=t]).to_owned(),
            target: target(t),
            anchor_day: t,
            horizon,
        })
        .collect())
}

/// Regression snapshots whose targets are the next `horizon` panel values.
pub fn make_snapshots(
    panel: &PanelSeries,
    window: usize,
    horizon: usize,
    mode: Windowing,
) -> Result<Vec<Snapshot>> {
    build(panel, window, horizon, mode, |t| {
        Target::Values(panel.values().slice(s![.., t + 1..=t + horizon]).to_owned())
    })
}

/// Classification snapshots labelled with the state at day `t + horizon`.
pub fn make_labeled_snapshots(
    panel: &PanelSeries,
    labels: &LabelMatrix,
    window: usize,
    horizon: usize,
    mode: Windowing,
) -> Result<Vec<Snapshot>> {
    if labels.dim() != panel.values().dim() {
        return Err(Error::shape(
            "label matrix",
            panel.values().dim(),
            labels.dim(),
        ));
    }
    build(panel, window, horizon, mode, |t| {
        Target::Labels(labels.column(t + horizon).to_vec())
    })
}

/// `ceil(fraction * count)`, tolerant of round-off in the product.
pub fn train_count(count: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let raw = train_fraction * count as f64;
    Ok(((raw - 1e-9).ceil().max(0.0) as usize).min(count))
}

/// Chronological split: the first `ceil(fraction * len)` items train.
pub fn split_chronological<T>(mut items: Vec<T>, train_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::EmptyData("no snapshots to split".into()));
    }
    let n_train = train_count(items.len(), train_fraction)?;
    let test = items.split_off(n_train);
    Ok((items, test))
}

/// Days seen by a set of training anchors: from day 0 through the last
/// target day.
pub fn training_day_range(train_anchors: &[usize], horizon: usize) -> Result<DayRange> {
    let last = train_anchors
        .iter()
        .max()
        .ok_or_else(|| Error::EmptyData("no training snapshots".into()))?;
    Ok(DayRange::new(0, last + horizon + 1))
}
