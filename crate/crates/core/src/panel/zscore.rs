use ndarray::{Array1, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::PanelSeries;
use crate::error::{Error, Result};

/// Half-open day interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: usize,
    pub end: usize,
}

impl DayRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-node mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub fit_range: DayRange,
}

impl StandardizationParams {
    /// `mu = 0`, `sigma = 1` for every node.
    pub fn identity(n: usize, fit_range: DayRange) -> Self {
        Self {
            mu: vec![0.0; n],
            sigma: vec![1.0; n],
            fit_range,
        }
    }

    pub fn node_count(&self) -> usize {
        self.mu.len()
    }
}

/// Fits per-node mean and population standard deviation over `fit_range`.
/// A node whose series is constant over the range gets `sigma = 1`.
pub fn fit_zscore(panel: &PanelSeries, fit_range: DayRange) -> Result<StandardizationParams> {
    if fit_range.end > panel.day_count() || fit_range.len() < 2 {
        return Err(Error::invalid(format!(
            "fit range {}..{} must hold at least 2 of the {} days",
            fit_range.start,
            fit_range.end,
            panel.day_count()
        )));
    }
    let window = panel
        .values()
        .slice(ndarray::s![.., fit_range.start..fit_range.end]);
    let mut mu = Vec::with_capacity(panel.node_count());
    let mut sigma = Vec::with_capacity(panel.node_count());
    for row in window.axis_iter(Axis(0)) {
        let m = row.mean().expect("non-empty range");
        let var = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / row.len() as f64;
        let s = var.sqrt();
        mu.push(m);
        sigma.push(if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 });
    }
    Ok(StandardizationParams {
        mu,
        sigma,
        fit_range,
    })
}

fn check(
    panel: &PanelSeries,
    params: &StandardizationParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if params.node_count() != panel.node_count() || params.sigma.len() != params.mu.len() {
        return Err(Error::shape(
            "standardization nodes",
            panel.node_count(),
            params.node_count(),
        ));
    }
    Ok((
        Array1::from(params.mu.clone()),
        Array1::from(params.sigma.clone()),
    ))
}

/// Elementwise `(x - mu) / sigma` per node.
pub fn apply_zscore(panel: &PanelSeries, params: &StandardizationParams) -> Result<PanelSeries> {
    let (mu, sigma) = check(panel, params)?;
    let mut out = panel.values().clone();
    Zip::from(out.rows_mut())
        .and(&mu)
        .and(&sigma)
        .for_each(|mut row, &m, &s| row.mapv_inplace(|x| (x - m) / s));
    Ok(panel.with_values(out))
}

/// Elementwise `z * sigma + mu` per node.
pub fn invert_zscore(panel: &PanelSeries, params: &StandardizationParams) -> Result<PanelSeries> {
    let (mu, sigma) = check(panel, params)?;
    let mut out = panel.values().clone();
    Zip::from(out.rows_mut())
        .and(&mu)
        .and(&sigma)
        .for_each(|mut row, &m, &s| row.mapv_inplace(|z| z * s + m));
    Ok(panel.with_values(out))
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    use super::*;

    fn panel(values: Array2<f64>) -> PanelSeries {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        PanelSeries::new(values, ids, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()).unwrap()
    }

    #[test]
    fn fit_population_std() {
        let p = panel(array![[1.0, 2.0, 3.0], [5.0, 5.0, 5.0], [0.0, 0.0, 0.0]]);
        let params = fit_zscore(&p, DayRange::new(0, 3)).unwrap();
        assert_eq!(params.mu, vec![2.0, 5.0, 0.0]);
        assert!((params.sigma[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(params.sigma[1], 1.0);
        assert_eq!(params.sigma[2], 1.0);

        let z = apply_zscore(&p, &params).unwrap();
        let expect = 1.5f64.sqrt();
        assert!((z.values()[[0, 0]] + expect).abs() < 1e-12);
        assert_eq!(z.values()[[0, 1]], 0.0);
        assert!((z.values()[[0, 2]] - expect).abs() < 1e-12);
        assert!(z.values().row(1).iter().all(|&v| v == 0.0));
        assert!(z.values().row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_range_validation() {
        let p = panel(array![[1.0, 2.0, 3.0]]);
        assert!(fit_zscore(&p, DayRange::new(0, 1)).is_err());
        assert!(fit_zscore(&p, DayRange::new(0, 4)).is_err());
        let params = fit_zscore(&p, DayRange::new(1, 3)).unwrap();
        assert_eq!(params.mu, vec![2.5]);
    }

    #[test]
    fn invert_known_value() {
        let p = panel(array![[1.2247]]);
        let params = StandardizationParams {
            mu: vec![2.0],
            sigma: vec![0.8165],
            fit_range: DayRange::new(0, 2),
        };
        let x = invert_zscore(&p, &params).unwrap();
        assert!((x.values()[[0, 0]] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn node_count_mismatch() {
        let p = panel(array![[1.0, 2.0]]);
        let params = StandardizationParams::identity(2, DayRange::new(0, 2));
        assert!(apply_zscore(&p, &params).is_err());
        assert!(invert_zscore(&p, &params).is_err());
    }

    #[test]
    fn params_ignore_days_outside_fit_range() {
        let p = panel(array![[1.0, 4.0, 2.0, 8.0, 9.0]]);
        let mut perturbed = p.values().clone();
        perturbed[[0, 3]] = -100.0;
        perturbed[[0, 4]] = 1e6;
        let range = DayRange::new(0, 3);
        assert_eq!(
            fit_zscore(&p, range).unwrap(),
            fit_zscore(&panel(perturbed), range).unwrap()
        );
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e4f64..1e4, 12)) {
            let p = panel(Array2::from_shape_vec((3, 4), values).unwrap());
            let params = fit_zscore(&p, DayRange::new(0, 4)).unwrap();
            let back = invert_zscore(&apply_zscore(&p, &params).unwrap(), &params).unwrap();
            for (a, b) in back.values().iter().zip(p.values()) {
                prop_assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
