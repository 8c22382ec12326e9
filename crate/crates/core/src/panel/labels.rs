//! Stable/Alert targets from per-100k moving averages and their trend.
//!
//! For each node and day the combined metric is the 7-day moving average of
//! cases per 100,000 residents multiplied by the least-squares slope of that
//! same per-100k series over the trailing 7 days. Metrics above the
//! threshold are `ALERT`. The first six days use the shorter prefix windows
//! that are available.

use ndarray::{Array2, Axis};

use super::{PanelSeries, PopulationTable};
use crate::error::Result;

pub type Label = u8;
pub type LabelMatrix = Array2<Label>;

pub const STABLE: Label = 0;
pub const ALERT: Label = 1;
pub const MOVING_AVERAGE_WIDTH: usize = 7;
pub const DEFAULT_ALERT_THRESHOLD: f64 = 10.0;

/// Trailing moving average; day `t` averages days `[t - width + 1, t]`
/// clipped at day 0.
pub fn moving_average(panel: &PanelSeries, width: usize) -> PanelSeries {
    let mut out = Array2::zeros(panel.values().dim());
    for (src, mut dst) in panel
        .values()
        .axis_iter(Axis(0))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let src = src.to_vec();
        for (t, d) in dst.iter_mut().enumerate() {
            let from = (t + 1).saturating_sub(width.max(1));
            let span = &src[from..=t];
            *d = span.iter().sum::<f64>() / span.len() as f64;
        }
    }
    panel.with_values(out)
}

/// Least-squares slope of `values` against `0, 1, ..., n-1`. Zero for fewer
/// than two points.
pub fn ols_slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_mean = values.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Slope of the best-fit line through one week of values.
pub fn trend_slope(week: &[f64; 7]) -> f64 {
    ols_slope(week)
}

/// Combined level × trend metric per node and day.
pub fn alert_metric(panel: &PanelSeries, populations: &PopulationTable) -> Result<Array2<f64>> {
    let pops = populations.aligned(panel.node_ids())?;
    let ma = moving_average(panel, MOVING_AVERAGE_WIDTH);
    let mut metric = Array2::zeros(ma.values().dim());
    for ((row, mut out), pop) in ma
        .values()
        .axis_iter(Axis(0))
        .zip(metric.axis_iter_mut(Axis(0)))
        .zip(pops)
    {
        let per_100k: Vec<f64> = row.iter().map(|v| v / (pop / 100_000.0)).collect();
        for (t, m) in out.iter_mut().enumerate() {
            let from = (t + 1).saturating_sub(MOVING_AVERAGE_WIDTH);
            *m = per_100k[t] * ols_slope(&per_100k[from..=t]);
        }
    }
    Ok(metric)
}

/// `ALERT` where the combined metric exceeds `threshold`, else `STABLE`.
/// Computed on raw case counts.
pub fn classification_targets(
    panel: &PanelSeries,
    populations: &PopulationTable,
    threshold: f64,
) -> Result<LabelMatrix> {
    Ok(alert_metric(panel, populations)?.mapv(|m| if m > threshold { ALERT } else { STABLE }))
}
