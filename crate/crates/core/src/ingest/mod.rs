//! CSV loaders, node reconciliation, inflow aggregation and synthetic data.
//!
//! File formats:
//!
//! * edge list: header `source,target,weight`, node ids are arbitrary strings
//!   numbered in order of first appearance;
//! * panel: first column node id, remaining header cells consecutive ISO
//!   dates, cells daily new cases;
//! * population: header `node,population`.

mod inflow;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{Edge, MobilityGraph};
use crate::panel::{PanelSeries, PopulationTable};

pub use inflow::{aggregate_inflows, load_inflow_dir, RawInflowSeries, MAX_ORIGINS};
pub use synth::{generate_synthetic, GraphStyle, SeriesStyle, SynthSpec};

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: line as usize,
        message: message.into(),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    parse_error(path, line, err.to_string())
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_err(path: &Path, err: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(err))
}

#[derive(Deserialize)]
struct EdgeRow {
    source: String,
    target: String,
    weight: f64,
}

/// Reads a directed edge list.
pub fn load_edge_list(path: &Path) -> Result<MobilityGraph> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row: EdgeRow = record
            .deserialize(Some(&header))
            .map_err(|e| parse_error(path, line, e.to_string()))?;
        if !row.weight.is_finite() || row.weight < 0.0 {
            return Err(parse_error(
                path,
                line,
                format!("invalid weight {}", row.weight),
            ));
        }
        if row.source == row.target {
            return Err(parse_error(
                path,
                line,
                format!("self-loop on node `{}`", row.source),
            ));
        }
        let mut intern = |id: &str| match index.get(id) {
            Some(&i) => i,
            None => {
                index.insert(id.to_string(), ids.len());
                ids.push(id.to_string());
                ids.len() - 1
            }
        };
        let source = intern(&row.source);
        let target = intern(&row.target);
        if !seen.insert((source, target)) {
            return Err(parse_error(
                path,
                line,
                format!("duplicate edge {} -> {}", row.source, row.target),
            ));
        }
        edges.push(Edge {
            source,
            target,
            weight: row.weight,
        });
    }
    MobilityGraph::new(ids, edges)
}

/// Writes every stored edge, so directed graphs round-trip exactly.
pub fn write_edge_list(graph: &MobilityGraph, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["source", "target", "weight"])
        .map_err(|e| write_err(path, e))?;
    let ids = graph.node_ids();
    for e in graph.edges() {
        w.write_record([&ids[e.source], &ids[e.target], &e.weight.to_string()])
            .map_err(|e| write_err(path, e))?;
    }
    finish(path, w)
}

/// Reads a node × day case panel.
pub fn load_panel(path: &Path) -> Result<PanelSeries> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(parse_error(
            path,
            1,
            "panel needs a node column and at least one date",
        ));
    }
    let mut dates = Vec::with_capacity(header.len() - 1);
    for cell in header.iter().skip(1) {
        let d = NaiveDate::parse_from_str(cell, "%Y-%m-%d")
            .map_err(|e| parse_error(path, 1, format!("bad date `{cell}`: {e}")))?;
        if let Some(prev) = dates.last() {
            if d != *prev + chrono::Days::new(1) {
                return Err(parse_error(
                    path,
                    1,
                    format!("dates are not consecutive at `{cell}`"),
                ));
            }
        }
        dates.push(d);
    }
    let days = dates.len();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_error(path, line, format!("duplicate node `{id}`")));
        }
        for cell in record.iter().skip(1) {
            let v: f64 = cell.parse().map_err(|_| {
                parse_error(path, line, format!("bad value `{cell}` for node `{id}`"))
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    line,
                    format!("non-finite value for node `{id}`"),
                ));
            }
            values.push(v);
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(parse_error(path, 1, "panel has no rows"));
    }
    let values = Array2::from_shape_vec((ids.len(), days), values)
        .map_err(|e| Error::invalid(e.to_string()))?;
    PanelSeries::new(values, ids, dates[0])
}

pub fn write_panel(panel: &PanelSeries, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["node".to_string()];
    header.extend((0..panel.day_count()).map(|d| panel.day(d).format("%Y-%m-%d").to_string()));
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for (id, row) in panel.node_ids().iter().zip(panel.values().rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| write_err(path, e))?;
    }
    finish(path, w)
}

#[derive(Deserialize)]
struct PopulationRow {
    node: String,
    population: f64,
}

pub fn load_population(path: &Path) -> Result<PopulationTable> {
    let mut rdr = reader(path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.deserialize::<PopulationRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if !seen.insert(row.node.clone()) {
            return Err(Error::invalid(format!(
                "duplicate population row for `{}`",
                row.node
            )));
        }
        entries.push((row.node, row.population));
    }
    PopulationTable::new(entries)
}

pub fn write_population(table: &PopulationTable, order: &[String], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node", "population"])
        .map_err(|e| write_err(path, e))?;
    for id in order {
        if let Some(p) = table.get(id) {
            w.write_record([id, &p.to_string()])
                .map_err(|e| write_err(path, e))?;
        }
    }
    finish(path, w)
}

/// What reconciliation changed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReconcileReport {
    /// Graph nodes without a case series; removed with their edges.
    pub dropped_graph_nodes: Vec<String>,
    /// Series without any mobility edge; kept as isolated nodes.
    pub isolated_series_nodes: Vec<String>,
    /// Kept nodes without a population entry.
    pub missing_population: Vec<String>,
}

impl ReconcileReport {
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "dropped graph nodes: {}",
            self.dropped_graph_nodes.len()
        )?;
        writeln!(
            out,
            "isolated series nodes: {}",
            self.isolated_series_nodes.len()
        )?;
        writeln!(out, "missing population: {}", self.missing_population.len())
    }
}

/// Graph, panel and populations over one node universe, in graph order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: MobilityGraph,
    pub panel: PanelSeries,
    pub population: Option<PopulationTable>,
    pub report: ReconcileReport,
}

/// Aligns the three inputs. Graph nodes that have a series keep their
/// order; series without edges follow in panel order.
pub fn reconcile(
    graph: &MobilityGraph,
    panel: &PanelSeries,
    population: Option<&PopulationTable>,
) -> Result<Dataset> {
    let row_of: HashMap<&str, usize> = panel
        .node_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut report = ReconcileReport::default();
    let mut keep = Vec::new();
    let mut order = Vec::new();
    for (i, id) in graph.node_ids().iter().enumerate() {
        match row_of.get(id.as_str()) {
            Some(&row) => {
                keep.push(i);
                order.push(row);
            }
            None => report.dropped_graph_nodes.push(id.clone()),
        }
    }
    let in_graph: HashSet<&str> = graph.node_ids().iter().map(String::as_str).collect();
    for (row, id) in panel.node_ids().iter().enumerate() {
        if !in_graph.contains(id.as_str()) {
            report.isolated_series_nodes.push(id.clone());
            order.push(row);
        }
    }
    if !report.dropped_graph_nodes.is_empty() {
        log::warn!(
            "dropping {} graph nodes without a case series (first: {})",
            report.dropped_graph_nodes.len(),
            report.dropped_graph_nodes[0]
        );
    }
    if !report.isolated_series_nodes.is_empty() {
        log::info!(
            "{} series have no mobility edges",
            report.isolated_series_nodes.len()
        );
    }

    let sub = graph.induced(&keep)?;
    let mut ids = sub.node_ids().to_vec();
    ids.extend(report.isolated_series_nodes.iter().cloned());
    let graph = MobilityGraph::from_parts(ids, sub.edges().to_vec(), sub.is_directed())?;
    let panel = panel.select_rows(&order);

    if let Some(pop) = population {
        report.missing_population = panel
            .node_ids()
            .iter()
            .filter(|id| pop.get(id).is_none())
            .cloned()
            .collect();
        if !report.missing_population.is_empty() {
            log::warn!(
                "{} nodes have no population entry",
                report.missing_population.len()
            );
        }
    }
    Ok(Dataset {
        graph,
        panel,
        population: population.cloned(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use std::fs;

    use ndarray::array;

    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn toy_edge_list_uses_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "e.csv",
            "source,target,weight\nB,A,2\nA,C,1.5\nC,B,0.5\n",
        );
        let g = load_edge_list(&p).unwrap();
        assert_eq!(g.node_ids(), ["B", "A", "C"]);
        assert_eq!(g.edge_count(), 3);
        assert_eq!(
            g.edges()[1],
            Edge {
                source: 1,
                target: 2,
                weight: 1.5
            }
        );
    }

    #[test]
    fn edge_list_errors() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(
            dir.path(),
            "d.csv",
            "source,target,weight\nA,B,1\nB,A,1\nA,B,3\n",
        );
        let err = load_edge_list(&dup).unwrap_err().to_string();
        assert!(err.contains("duplicate edge A -> B"), "{err}");
        let neg = write(dir.path(), "n.csv", "source,target,weight\nA,B,-1\n");
        assert!(load_edge_list(&neg).is_err());
        let bad = write(dir.path(), "b.csv", "source,target,weight\nA,B,1\nA,C,x\n");
        match load_edge_list(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn panel_and_population_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.csv",
            "node,2020-02-28,2020-02-29,2020-03-01\nx,1,2,3\ny,0,0.5,4\n",
        );
        let panel = load_panel(&p).unwrap();
        assert_eq!(panel.values(), &array![[1.0, 2.0, 3.0], [0.0, 0.5, 4.0]]);
        assert_eq!(
            panel.start_day(),
            NaiveDate::from_ymd_opt(2020, 2, 28).unwrap()
        );
        let out = dir.path().join("p2.csv");
        write_panel(&panel, &out).unwrap();
        assert_eq!(load_panel(&out).unwrap(), panel);

        let gap = write(dir.path(), "g.csv", "node,2020-01-01,2020-01-03\nx,1,2\n");
        assert!(load_panel(&gap).is_err());

        let pop = write(dir.path(), "pop.csv", "node,population\nx,1000\ny,250\n");
        let table = load_population(&pop).unwrap();
        assert_eq!(table.get("y"), Some(250.0));
        let dup = write(dir.path(), "pop2.csv", "node,population\nx,1\nx,2\n");
        assert!(load_population(&dup).is_err());
    }

    #[test]
    fn reconcile_keeps_isolated_series_and_drops_unobserved_nodes() {
        let ids = ["a", "b", "c"].map(String::from).to_vec();
        let graph = MobilityGraph::new(
            ids,
            [
                Edge {
                    source: 0,
                    target: 1,
                    weight: 1.0,
                },
                Edge {
                    source: 1,
                    target: 2,
                    weight: 2.0,
                },
            ],
        )
        .unwrap();
        let panel = PanelSeries::new(
            array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]],
            ["z", "b", "a"].map(String::from).to_vec(),
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        )
        .unwrap();
        let pop = PopulationTable::new([("a".to_string(), 10.0), ("z".to_string(), 5.0)]).unwrap();
        let ds = reconcile(&graph, &panel, Some(&pop)).unwrap();
        assert_eq!(ds.graph.node_ids(), ["a", "b", "z"]);
        assert_eq!(
            ds.graph.edges(),
            [Edge {
                source: 0,
                target: 1,
                weight: 1.0
            }]
        );
        assert_eq!(ds.panel.node_ids(), ["a", "b", "z"]);
        assert_eq!(ds.panel.values().column(0).to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(ds.report.dropped_graph_nodes, ["c"]);
        assert_eq!(ds.report.isolated_series_nodes, ["z"]);
        assert_eq!(ds.report.missing_population, ["b"]);
    }
}
