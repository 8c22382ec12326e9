//! Seeded synthetic mobility graphs and case panels.
//!
//! All randomness comes from one `ChaCha8Rng` seeded with
//! [`SynthSpec::seed`], consumed in a fixed order, so output is identical
//! on every platform.

use std::f64::consts::TAU;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, MobilityGraph};
use crate::panel::{PanelSeries, PopulationTable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphStyle {
    /// Each node linked to its two nearest neighbours on each side by
    /// light edges.
    Ring,
    /// Dense, heavy links inside communities of about seven nodes and
    /// light links between them.
    #[default]
    Community,
    /// Sparse random links with log-normal weights.
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesStyle {
    /// Sinusoids whose phase follows the graph position.
    #[default]
    Seasonal,
    /// Straight lines with per-node intercept and slope.
    Linear,
    /// Independent per-node waves of rising and falling phases with
    /// random lengths, so the Stable/Alert state is readable from recent
    /// history.
    SeparableTwoClass,
}

impl std::str::FromStr for GraphStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ring" => Ok(GraphStyle::Ring),
            "community" => Ok(GraphStyle::Community),
            "random" => Ok(GraphStyle::Random),
            other => Err(Error::invalid(format!("unknown graph style `{other}`"))),
        }
    }
}

impl std::str::FromStr for SeriesStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seasonal" => Ok(SeriesStyle::Seasonal),
            "linear" => Ok(SeriesStyle::Linear),
            "separable-two-class" => Ok(SeriesStyle::SeparableTwoClass),
            other => Err(Error::invalid(format!("unknown series style `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub nodes: usize,
    pub days: usize,
    pub seed: u64,
    pub graph: GraphStyle,
    pub series: SeriesStyle,
    /// Standard deviation of the additive noise, relative to each node's
    /// base level.
    pub noise: f64,
    /// Period in days of the seasonal style.
    pub period: f64,
    /// Each community (or node, outside the community style) scales the
    /// period by a factor drawn from `1 ± period_spread`.
    pub period_spread: f64,
    pub start: NaiveDate,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            nodes: 20,
            days: 400,
            seed: 0,
            graph: GraphStyle::Community,
            series: SeriesStyle::Seasonal,
            noise: 0.05,
            period: 14.0,
            period_spread: 0.0,
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.days == 0 {
            return Err(Error::Config(
                "synthetic node and day counts must be at least 1".into(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Config(format!(
                "period must be positive, got {}",
                self.period
            )));
        }
        if !(0.0..1.0).contains(&self.period_spread) {
            return Err(Error::Config(format!(
                "period_spread must lie in [0, 1), got {}",
                self.period_spread
            )));
        }
        Ok(())
    }
}

pub const COMMUNITY_SIZE: usize = 7;

/// Community of each node: contiguous blocks of near-equal size.
fn communities(n: usize) -> (usize, Vec<usize>) {
    let count = n.div_ceil(COMMUNITY_SIZE).max(1);
    (count, (0..n).map(|i| i * count / n).collect())
}

fn build_graph(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<MobilityGraph> {
    let n = spec.nodes;
    let ids = (0..n).map(|i| format!("n{i:03}")).collect();
    let mut edges = Vec::new();
    let mut push = |source: usize, target: usize, weight: f64| {
        edges.push(Edge {
            source,
            target,
            weight,
        });
    };
    match spec.graph {
        GraphStyle::Ring => {
            let mut seen = std::collections::HashSet::new();
            for i in 0..n {
                for (offset, scale) in [(1, 0.2), (2, 0.1)] {
                    let j = (i + offset) % n;
                    for (a, b) in [(i, j), (j, i)] {
                        if a != b && seen.insert((a, b)) {
                            push(a, b, rng.random_range(0.5..1.0) * scale);
                        }
                    }
                }
            }
        }
        GraphStyle::Community => {
            let (_, group) = communities(n);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    if group[i] == group[j] {
                        push(i, j, rng.random_range(8.0..12.0));
                    } else if rng.random_bool(0.8) {
                        push(i, j, rng.random_range(0.2..4.0));
                    }
                }
            }
        }
        GraphStyle::Random => {
            let p = (4.0 / n as f64).min(1.0);
            let weights = LogNormal::new(0.0, 1.0).expect("valid parameters");
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(p) {
                        push(i, j, weights.sample(rng));
                    }
                }
            }
        }
    }
    MobilityGraph::new(ids, edges)
}

/// Phase in `[0, 2π)` and period per node, shared by graph neighbours.
fn phases(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = spec.nodes;
    let period = |rng: &mut ChaCha8Rng| {
        let s = spec.period_spread;
        if s > 0.0 {
            spec.period * rng.random_range(1.0 - s..1.0 + s)
        } else {
            spec.period
        }
    };
    match spec.graph {
        GraphStyle::Ring => {
            let periods = (0..n).map(|_| period(rng)).collect();
            ((0..n).map(|i| TAU * i as f64 / n as f64).collect(), periods)
        }
        GraphStyle::Community => {
            let (count, group) = communities(n);
            let offsets: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..TAU)).collect();
            let periods: Vec<f64> = (0..count).map(|_| period(rng)).collect();
            (
                group.iter().map(|&c| offsets[c]).collect(),
                group.iter().map(|&c| periods[c]).collect(),
            )
        }
        GraphStyle::Random => (0..n)
            .map(|_| (rng.random_range(0.0..TAU), period(rng)))
            .unzip(),
    }
}

fn noise(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    z * scale
}

/// Piecewise-linear wave between `low` and `3·low` with segment lengths
/// drawn from 15..=40 days.
fn regime_wave(days: usize, low: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let high = 3.0 * low;
    let mut out = Vec::with_capacity(days);
    let mut level = rng.random_range(low..high);
    let mut rising = rng.random_bool(0.5);
    while out.len() < days {
        let len = rng.random_range(15..=40);
        let goal = if rising { high } else { low };
        let step = (goal - level) / len as f64;
        for _ in 0..len {
            level += step;
            out.push(level);
        }
        rising = !rising;
    }
    out.truncate(days);
    out
}

/// Graph, panel and populations for `spec`.
pub fn generate_synthetic(
    spec: &SynthSpec,
) -> Result<(MobilityGraph, PanelSeries, PopulationTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let graph = build_graph(spec, &mut rng)?;
    let (phase, period) = phases(spec, &mut rng);
    let (n, t) = (spec.nodes, spec.days);
    let mut values = Array2::zeros((n, t));
    let mut populations = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = values.row_mut(i);
        let population = match spec.series {
            SeriesStyle::Seasonal => {
                let base = rng.random_range(50.0..500.0);
                let amp = rng.random_range(0.3..0.8);
                for (d, v) in row.iter_mut().enumerate() {
                    let clean = base * (1.0 + amp * (TAU * d as f64 / period[i] + phase[i]).sin());
                    *v = (clean + noise(&mut rng, spec.noise * base)).max(0.0);
                }
                (base * rng.random_range(500.0..2000.0)).round()
            }
            SeriesStyle::Linear => {
                let intercept = rng.random_range(10.0..50.0);
                let slope = rng.random_range(0.5..3.0);
                for (d, v) in row.iter_mut().enumerate() {
                    let clean = intercept + slope * d as f64;
                    *v = (clean + noise(&mut rng, spec.noise * intercept)).max(0.0);
                }
                (intercept * 1000.0).round()
            }
            SeriesStyle::SeparableTwoClass => {
                let low = rng.random_range(50.0..300.0);
                let wave = regime_wave(t, low, &mut rng);
                for (v, clean) in row.iter_mut().zip(wave) {
                    *v = (clean + noise(&mut rng, spec.noise * low)).max(0.0);
                }
                // Puts the level near 50–150 cases per 100k residents.
                (low * 2000.0).round()
            }
        };
        populations.push((graph.node_ids()[i].clone(), population));
    }
    let panel = PanelSeries::new(values, graph.node_ids().to_vec(), spec.start)?;
    Ok((graph, panel, PopulationTable::new(populations)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{extract_backbone, BackboneParams};
    use crate::panel::{classification_targets, ALERT, DEFAULT_ALERT_THRESHOLD};

    fn spec(graph: GraphStyle, series: SeriesStyle) -> SynthSpec {
        SynthSpec {
            graph,
            series,
            seed: 42,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for graph in [GraphStyle::Ring, GraphStyle::Community, GraphStyle::Random] {
            for series in [
                SeriesStyle::Seasonal,
                SeriesStyle::Linear,
                SeriesStyle::SeparableTwoClass,
            ] {
                let s = spec(graph, series);
                let (g1, p1, q1) = generate_synthetic(&s).unwrap();
                let (g2, p2, q2) = generate_synthetic(&s).unwrap();
                assert_eq!(g1, g2);
                assert_eq!(p1, p2);
                assert_eq!(q1, q2);
                assert_eq!(p1.values().dim(), (20, 400));
            }
        }
        let a = generate_synthetic(&spec(GraphStyle::Community, SeriesStyle::Seasonal)).unwrap();
        let b = generate_synthetic(&SynthSpec {
            seed: 43,
            ..spec(GraphStyle::Community, SeriesStyle::Seasonal)
        })
        .unwrap();
        assert_ne!(a.1, b.1);
    }

    #[test]
    fn noiseless_seasonal_is_periodic() {
        let s = SynthSpec {
            noise: 0.0,
            period: 7.0,
            ..spec(GraphStyle::Ring, SeriesStyle::Seasonal)
        };
        let (_, panel, _) = generate_synthetic(&s).unwrap();
        let v = panel.values();
        for row in v.rows() {
            for d in 7..400 {
                assert!((row[d] - row[d - 7]).abs() < 1e-9 * row[d].abs().max(1.0));
            }
        }
    }

    #[test]
    fn separable_labels_are_balanced() {
        let s = spec(GraphStyle::Ring, SeriesStyle::SeparableTwoClass);
        let (_, panel, pops) = generate_synthetic(&s).unwrap();
        let labels = classification_targets(&panel, &pops, DEFAULT_ALERT_THRESHOLD).unwrap();
        let share = labels.iter().filter(|&&l| l == ALERT).count() as f64 / labels.len() as f64;
        assert!((0.4..=0.6).contains(&share), "alert share {share}");
    }

    #[test]
    fn community_backbone_keeps_intra_edges() {
        let (graph, _, _) =
            generate_synthetic(&spec(GraphStyle::Community, SeriesStyle::Seasonal)).unwrap();
        let backbone = extract_backbone(&graph, &BackboneParams::default()).unwrap();
        let (_, group) = communities(20);
        assert!(backbone.edge_count() < graph.edge_count());
        for e in backbone.edges() {
            assert_eq!(group[e.source], group[e.target]);
        }
    }

    #[test]
    fn rejects_empty_spec() {
        assert!(generate_synthetic(&SynthSpec {
            nodes: 0,
            ..SynthSpec::default()
        })
        .is_err());
        assert!(generate_synthetic(&SynthSpec {
            noise: -1.0,
            ..SynthSpec::default()
        })
        .is_err());
    }
}
