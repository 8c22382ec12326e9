//! Weighted directed mobility graphs.
//!
//! A [`MobilityGraph`] holds an ordered list of location identifiers and a
//! list of weighted edges between their indices. Edges are validated at
//! construction: endpoints must be in range, weights finite and non-negative,
//! no self-loops and no repeated `(source, target)` pair. Zero-weight edges
//! are dropped silently.

mod backbone;
mod propagation;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backbone::{disparity_pvalue, extract_backbone, BackboneParams, Criterion};
pub use propagation::{propagation_matrix, PropagationMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

/// Degree and strength of one node in one direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NodeStats {
    pub degree: usize,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MobilityGraph {
    node_ids: Vec<String>,
    edges: Vec<Edge>,
    directed: bool,
}

impl MobilityGraph {
    /// Builds a directed graph. Edge order is preserved.
    pub fn new(node_ids: Vec<String>, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::build(node_ids, edges.into_iter().collect(), true)
    }

    /// Builds an undirected graph: every input edge is stored in both
    /// orientations, so listing a pair twice is a duplicate.
    pub fn undirected(
        node_ids: Vec<String>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self> {
        let mut both = Vec::new();
        for e in edges {
            both.push(e);
            both.push(Edge {
                source: e.target,
                target: e.source,
                weight: e.weight,
            });
        }
        Self::build(node_ids, both, false)
    }

    pub(crate) fn from_parts(
        node_ids: Vec<String>,
        edges: Vec<Edge>,
        directed: bool,
    ) -> Result<Self> {
        Self::build(node_ids, edges, directed)
    }

    fn build(node_ids: Vec<String>, edges: Vec<Edge>, directed: bool) -> Result<Self> {
        let n = node_ids.len();
        let mut seen = HashSet::with_capacity(edges.len());
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            for idx in [e.source, e.target] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { index: idx, len: n });
                }
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::invalid(format!(
                    "edge {} -> {} has invalid weight {}",
                    node_ids[e.source], node_ids[e.target], e.weight
                )));
            }
            if e.source == e.target {
                return Err(Error::invalid(format!(
                    "self-loop on node {}",
                    node_ids[e.source]
                )));
            }
            if !seen.insert((e.source, e.target)) {
                return Err(Error::invalid(format!(
                    "duplicate edge {} -> {}",
                    node_ids[e.source], node_ids[e.target]
                )));
            }
            if e.weight > 0.0 {
                kept.push(e);
            }
        }
        Ok(Self {
            node_ids,
            edges: kept,
            directed,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    /// Degree and strength of `node` over its outgoing or incoming edges.
    pub fn node_stats(&self, node: usize, direction: Direction) -> Result<NodeStats> {
        if node >= self.node_count() {
            return Err(Error::IndexOutOfRange {
                index: node,
                len: self.node_count(),
            });
        }
        let mut stats = NodeStats::default();
        for e in &self.edges {
            let endpoint = match direction {
                Direction::Out => e.source,
                Direction::In => e.target,
            };
            if endpoint == node {
                stats.degree += 1;
                stats.strength += e.weight;
            }
        }
        Ok(stats)
    }

    /// Stats for every node in one pass.
    pub fn all_stats(&self, direction: Direction) -> Vec<NodeStats> {
        let mut stats = vec![NodeStats::default(); self.node_count()];
        for e in &self.edges {
            let endpoint = match direction {
                Direction::Out => e.source,
                Direction::In => e.target,
            };
            stats[endpoint].degree += 1;
            stats[endpoint].strength += e.weight;
        }
        stats
    }

    /// Same node set, subset of the edges (order preserved).
    pub(crate) fn with_edges(&self, edges: Vec<Edge>) -> Self {
        Self {
            node_ids: self.node_ids.clone(),
            edges,
            directed: self.directed,
        }
    }

    /// Restricts the graph to `keep` (in the given order), dropping edges
    /// that touch removed nodes.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut remap = vec![usize::MAX; self.node_count()];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.node_count() {
                return Err(Error::IndexOutOfRange {
                    index: old,
                    len: self.node_count(),
                });
            }
            remap[old] = new;
        }
        let node_ids = keep.iter().map(|&i| self.node_ids[i].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| remap[e.source] != usize::MAX && remap[e.target] != usize::MAX)
            .map(|e| Edge {
                source: remap[e.source],
                target: remap[e.target],
                weight: e.weight,
            });
        Self::build(node_ids, edges.collect(), self.directed)
    }
}
