//! Disparity-filter backbone extraction.
//!
//! An edge is significant for one of its endpoints when its weight is
//! unlikely under a uniform random split of that endpoint's strength over its
//! degree. The source judges an edge by its outgoing stats, the target by its
//! incoming stats; the two p-values are combined by [`Criterion`].

use serde::{Deserialize, Serialize};

use super::{Direction, Edge, MobilityGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Keep an edge if either endpoint finds it significant.
    #[default]
    Smallest,
    /// Keep an edge only if both endpoints find it significant.
    Largest,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smallest" => Ok(Criterion::Smallest),
            "largest" => Ok(Criterion::Largest),
            other => Err(Error::invalid(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams {
    pub alpha: f64,
    pub min_keep: usize,
    #[serde(default)]
    pub criterion: Criterion,
}

impl Default for BackboneParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            min_keep: 5,
            criterion: Criterion::Smallest,
        }
    }
}

/// Probability that a uniform split of strength `s` over `k` edges gives
/// one edge at least `weight`: `(1 - weight / s)^(k - 1)`.
pub fn disparity_pvalue(weight: f64, k: usize, s: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("degree must be at least 1"));
    }
    if !(weight > 0.0 && weight <= s && s.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < weight <= strength, got weight={weight}, strength={s}"
        )));
    }
    let exponent = i32::try_from(k - 1).map_err(|_| Error::invalid("degree too large"))?;
    Ok((1.0 - weight / s).powi(exponent).clamp(0.0, 1.0))
}

/// Filters `graph` to edges whose combined p-value is strictly below
/// `alpha`, then restores each node's `min_keep` heaviest outgoing edges
/// (ties go to the lower target index). Kept edges retain their weights
/// and input order.
pub fn extract_backbone(graph: &MobilityGraph, params: &BackboneParams) -> Result<MobilityGraph> {
    if graph.node_count() == 0 {
        return Err(Error::EmptyData("backbone of an empty graph".into()));
    }
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {}",
            params.alpha
        )));
    }

    let keep = backbone_mask(graph, params)?;
    let edges = graph
        .edges()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(e, _)| *e)
        .collect();
    Ok(graph.with_edges(edges))
}

/// Edges surviving the significance test alone, before retention.
pub fn significant_mask(graph: &MobilityGraph, params: &BackboneParams) -> Result<Vec<bool>> {
    let out = graph.all_stats(Direction::Out);
    let inc = graph.all_stats(Direction::In);
    graph
        .edges()
        .iter()
        .map(|e| {
            let p_from = disparity_pvalue(e.weight, out[e.source].degree, out[e.source].strength)?;
            let p_to = disparity_pvalue(e.weight, inc[e.target].degree, inc[e.target].strength)?;
            let p = match params.criterion {
                Criterion::Smallest => p_from.min(p_to),
                Criterion::Largest => p_from.max(p_to),
            };
            Ok(p < params.alpha)
        })
        .collect()
}

fn backbone_mask(graph: &MobilityGraph, params: &BackboneParams) -> Result<Vec<bool>> {
    let mut keep = significant_mask(graph, params)?;
    if params.min_keep == 0 {
        return Ok(keep);
    }

    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); graph.node_count()];
    for (idx, e) in graph.edges().iter().enumerate() {
        outgoing[e.source].push(idx);
    }
    let edges: &[Edge] = graph.edges();
    for list in &mut outgoing {
        list.sort_by(|&a, &b| {
            edges[b]
                .weight
                .total_cmp(&edges[a].weight)
                .then(edges[a].target.cmp(&edges[b].target))
        });
        for &idx in list.iter().take(params.min_keep) {
            keep[idx] = true;
        }
    }
    Ok(keep)
}
