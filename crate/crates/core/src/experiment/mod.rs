//! End-to-end runs: load → backbone → standardise → snapshots → split →
//! train → evaluate, plus the window × horizon grid sweep.
//!
//! Every run directory holds:
//!
//! * `metrics.csv`: summary rows `model,scenario,mean,std,min,max,q1,median,q3`;
//! * `timestamps.csv`: the per-timestamp scores behind the summaries;
//! * `predictions.csv`: test-set predictions next to the observed values;
//! * `loss.csv`: training loss per epoch;
//! * `checkpoint.json`: the trained model;
//! * `manifest.json`: seed, config hash, the config itself with paths made
//!   relative to the run directory, and library versions.

mod config;
mod grid;
mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};

use crate::error::{Error, Result, StageExt};
use crate::graph::{extract_backbone, propagation_matrix, MobilityGraph, PropagationMatrix};
use crate::ingest::{
    generate_synthetic, load_edge_list, load_panel, load_population, reconcile, Dataset,
};
use crate::metrics::{classification_per_timestamp, rmse_per_timestamp, MetricsTable, CSV_HEADER};
use crate::panel::{
    apply_zscore, classification_targets, fit_zscore, make_labeled_snapshots, make_snapshots,
    snapshot_anchors, train_count, training_day_range, Label, LabelMatrix, Snapshot,
    StandardizationParams, Target,
};
use crate::stgnn::{head_width, predict_batch, train, Checkpoint, Model, Prediction, Task};

pub use config::{cell_seed, BackboneConfig, DataSource, ExperimentConfig, GRID_MAX};
pub use grid::{
    grid_sweep, merge_cells, metric_names, render_svg, CellResult, GridOptions, Heatmap,
};
pub use manifest::{Manifest, LOCKED_VERSIONS};

/// Inputs shared by every run over the same data and graph settings.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: Dataset,
    /// Edge count before backbone extraction.
    pub edges_before: usize,
    /// Graph actually used for propagation.
    pub graph: MobilityGraph,
    pub propagation: PropagationMatrix,
    /// Stable/Alert states computed from raw counts, for classification.
    pub labels: Option<LabelMatrix>,
}

/// Loads, reconciles, optionally filters the graph, and derives labels.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    let dataset = load_dataset(config).stage("load")?;
    let edges_before = dataset.graph.edge_count();
    let graph = if config.backbone.enabled {
        let g = extract_backbone(&dataset.graph, &config.backbone.params()).stage("backbone")?;
        log::info!("backbone kept {} of {} edges", g.edge_count(), edges_before);
        g
    } else {
        dataset.graph.clone()
    };
    let propagation = propagation_matrix(&graph).stage("backbone")?;
    let labels = match config.task {
        Task::Regression => None,
        Task::Classification => {
            let pop = dataset
                .population
                .as_ref()
                .ok_or_else(|| Error::Config("classification needs populations".into()))
                .stage("labels")?;
            Some(
                classification_targets(&dataset.panel, pop, config.alert_threshold)
                    .stage("labels")?,
            )
        }
    };
    Ok(PreparedData {
        dataset,
        edges_before,
        graph,
        propagation,
        labels,
    })
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Files {
            edges,
            panel,
            population,
        } => {
            let graph = load_edge_list(edges)?;
            let panel = load_panel(panel)?;
            let population = population.as_deref().map(load_population).transpose()?;
            reconcile(&graph, &panel, population.as_ref())
        }
        DataSource::Synthetic(spec) => {
            let (graph, panel, population) = generate_synthetic(spec)?;
            reconcile(&graph, &panel, Some(&population))
        }
    }
}

/// Standardised snapshots split chronologically.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub standardization: StandardizationParams,
    pub train: Vec<Snapshot>,
    pub test: Vec<Snapshot>,
}

pub fn build_snapshots(config: &ExperimentConfig, data: &PreparedData) -> Result<SplitData> {
    let panel = &data.dataset.panel;
    let (l, f) = (config.window, config.horizon);
    let anchors = snapshot_anchors(panel.day_count(), l, f, config.windowing)?;
    let n_train = train_count(anchors.len(), config.train_fraction)?;
    if n_train == 0 || n_train == anchors.len() {
        return Err(Error::EmptyData(format!(
            "{} snapshots leave an empty training or test set",
            anchors.len()
        )));
    }
    let fit_range = training_day_range(&anchors[..n_train], f)?;
    let standardization = fit_zscore(panel, fit_range)?;
    let z = apply_zscore(panel, &standardization)?;
    let mut snaps = match (&data.labels, config.task) {
        (_, Task::Regression) => make_snapshots(&z, l, f, config.windowing)?,
        (Some(labels), Task::Classification) => {
            make_labeled_snapshots(&z, labels, l, f, config.windowing)?
        }
        (None, Task::Classification) => {
            return Err(Error::Config("labels were not prepared".into()))
        }
    };
    let test = snaps.split_off(n_train);
    Ok(SplitData {
        standardization,
        train: snaps,
        test,
    })
}

#[derive(Clone, Debug)]
pub enum Evaluation {
    Regression {
        rmse: MetricsTable,
        /// Repeat-the-last-observation baseline on the same snapshots.
        persistence: MetricsTable,
        predictions: Vec<Array2<f64>>,
        targets: Vec<Array2<f64>>,
    },
    Classification {
        f1: MetricsTable,
        precision: MetricsTable,
        recall: MetricsTable,
        predicted: Vec<Vec<Label>>,
        truth: Vec<Vec<Label>>,
    },
}

impl Evaluation {
    /// Mean RMSE for regression, mean F1 for classification.
    pub fn headline(&self) -> f64 {
        match self {
            Evaluation::Regression { rmse, .. } => rmse.summary.mean,
            Evaluation::Classification { f1, .. } => f1.summary.mean,
        }
    }

    fn tables(&self) -> Vec<(&'static str, &MetricsTable)> {
        match self {
            Evaluation::Regression {
                rmse, persistence, ..
            } => vec![("rmse", rmse), ("persistence_rmse", persistence)],
            Evaluation::Classification {
                f1,
                precision,
                recall,
                ..
            } => {
                vec![("f1", f1), ("precision", precision), ("recall", recall)]
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: Model,
    pub loss_history: Vec<f64>,
    pub standardization: StandardizationParams,
    /// Anchor day of every test snapshot.
    pub test_anchors: Vec<usize>,
    pub evaluation: Evaluation,
}

/// Trains and evaluates one configuration on prepared data.
pub fn run_prepared(config: &ExperimentConfig, data: &PreparedData) -> Result<RunOutcome> {
    config.validate().stage("config")?;
    let split = build_snapshots(config, data).stage("preprocess")?;
    let model = Model::new(
        config.model,
        config.task,
        config.train.hidden,
        config.horizon,
        config.model_seed(),
    );
    let (model, loss_history) =
        train(&model, &split.train, &data.propagation, &config.train).stage("train")?;
    let evaluation = evaluate(config, data, &model, &split).stage("evaluate")?;
    Ok(RunOutcome {
        model,
        loss_history,
        standardization: split.standardization,
        test_anchors: split.test.iter().map(|s| s.anchor_day).collect(),
        evaluation,
    })
}

/// Scores an already trained `model` on the test split of `config`.
pub fn evaluate_model(
    config: &ExperimentConfig,
    data: &PreparedData,
    model: &Model,
) -> Result<Evaluation> {
    config.validate().stage("config")?;
    if model.kind() != config.model
        || model.task != config.task
        || model.output_width() != head_width(config.task, config.horizon)
    {
        return Err(Error::Config(format!(
            "checkpoint holds a {} {} model with {} outputs; the config asks for {} {} with horizon {}",
            model.kind(),
            model.task,
            model.output_width(),
            config.model,
            config.task,
            config.horizon
        )))
        .stage("config");
    }
    let split = build_snapshots(config, data).stage("preprocess")?;
    evaluate(config, data, model, &split).stage("evaluate")
}

fn evaluate(
    config: &ExperimentConfig,
    data: &PreparedData,
    model: &Model,
    split: &SplitData,
) -> Result<Evaluation> {
    let preds = predict_batch(
        model,
        &split.test,
        &data.propagation,
        &split.standardization,
    )?;
    let raw = data.dataset.panel.values();
    match config.task {
        Task::Regression => {
            let mut predictions = Vec::with_capacity(preds.len());
            let mut targets = Vec::with_capacity(preds.len());
            let mut persistence = Vec::with_capacity(preds.len());
            for (pred, snap) in preds.into_iter().zip(&split.test) {
                let Prediction::Values(v) = pred else {
                    return Err(Error::invalid("regression model returned labels"));
                };
                let t = snap.anchor_day;
                let target = raw.slice(s![.., t + 1..=t + snap.horizon]).to_owned();
                let last = raw.column(t);
                persistence.push(Array2::from_shape_fn(target.dim(), |(i, _)| last[i]));
                predictions.push(v);
                targets.push(target);
            }
            Ok(Evaluation::Regression {
                rmse: MetricsTable::new(rmse_per_timestamp(&predictions, &targets)?)?,
                persistence: MetricsTable::new(rmse_per_timestamp(&persistence, &targets)?)?,
                predictions,
                targets,
            })
        }
        Task::Classification => {
            let mut predicted = Vec::with_capacity(preds.len());
            let mut truth = Vec::with_capacity(preds.len());
            for (pred, snap) in preds.into_iter().zip(&split.test) {
                let Prediction::Labels(l) = pred else {
                    return Err(Error::invalid("classification model returned values"));
                };
                let Target::Labels(t) = &snap.target else {
                    return Err(Error::invalid("classification snapshot without labels"));
                };
                predicted.push(l);
                truth.push(t.clone());
            }
            let scores = classification_per_timestamp(&predicted, &truth)?;
            Ok(Evaluation::Classification {
                f1: MetricsTable::new(scores.iter().map(|s| s.f1).collect())?,
                precision: MetricsTable::new(scores.iter().map(|s| s.precision).collect())?,
                recall: MetricsTable::new(scores.iter().map(|s| s.recall).collect())?,
                predicted,
                truth,
            })
        }
    }
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub outcome: RunOutcome,
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

/// Runs `config` and writes the result files into `config.output`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate().stage("config")?;
    let data = prepare(config)?;
    let outcome = run_prepared(config, &data)?;
    let dir = config.output.clone();
    fs::create_dir_all(&dir)
        .map_err(|e| Error::io(&dir, e))
        .stage("write")?;
    let manifest = write_outputs(config, &data, &outcome, &dir).stage("write")?;
    Ok(ExperimentReport {
        outcome,
        output_dir: dir,
        manifest,
    })
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)
            .map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

/// Summary rows for `metrics.csv`, header included.
pub fn metrics_rows(config: &ExperimentConfig, evaluation: &Evaluation) -> Vec<Vec<String>> {
    let model = config.model.to_string();
    let mut rows = vec![CSV_HEADER.iter().map(|s| s.to_string()).collect()];
    for (metric, table) in evaluation.tables() {
        let (who, scenario) = match metric {
            "persistence_rmse" => ("persistence".to_string(), config.name.clone()),
            "rmse" => (model.clone(), config.name.clone()),
            other => (model.clone(), format!("{}-{other}", config.name)),
        };
        rows.push(table.summary.csv_record(&who, &scenario));
    }
    rows
}

fn write_outputs(
    config: &ExperimentConfig,
    data: &PreparedData,
    outcome: &RunOutcome,
    dir: &Path,
) -> Result<Manifest> {
    let panel = &data.dataset.panel;
    let eval = &outcome.evaluation;
    write_atomic(
        &dir.join("metrics.csv"),
        &csv_bytes(metrics_rows(config, eval))?,
    )?;

    let tables = eval.tables();
    let mut rows = vec![["anchor_day", "date"]
        .into_iter()
        .map(String::from)
        .chain(tables.iter().map(|(m, _)| m.to_string()))
        .collect::<Vec<_>>()];
    for (k, &t) in outcome.test_anchors.iter().enumerate() {
        let mut row = vec![t.to_string(), panel.day(t).to_string()];
        row.extend(tables.iter().map(|(_, tab)| tab.scores[k].to_string()));
        rows.push(row);
    }
    write_atomic(&dir.join("timestamps.csv"), &csv_bytes(rows)?)?;

    let ids = panel.node_ids();
    let mut rows = Vec::new();
    match eval {
        Evaluation::Regression {
            predictions,
            targets,
            ..
        } => {
            rows.push(
                ["anchor_day", "node", "step", "predicted", "observed"]
                    .map(String::from)
                    .to_vec(),
            );
            for ((&t, p), y) in outcome.test_anchors.iter().zip(predictions).zip(targets) {
                for ((i, step), v) in p.indexed_iter() {
                    rows.push(vec![
                        t.to_string(),
                        ids[i].clone(),
                        (step + 1).to_string(),
                        v.to_string(),
                        y[[i, step]].to_string(),
                    ]);
                }
            }
        }
        Evaluation::Classification {
            predicted, truth, ..
        } => {
            rows.push(
                ["anchor_day", "node", "predicted", "observed"]
                    .map(String::from)
                    .to_vec(),
            );
            for ((&t, p), y) in outcome.test_anchors.iter().zip(predicted).zip(truth) {
                for (i, (a, b)) in p.iter().zip(y).enumerate() {
                    rows.push(vec![
                        t.to_string(),
                        ids[i].clone(),
                        a.to_string(),
                        b.to_string(),
                    ]);
                }
            }
        }
    }
    write_atomic(&dir.join("predictions.csv"), &csv_bytes(rows)?)?;

    let mut loss = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_history.iter().enumerate() {
        let _ = writeln!(loss, "{e},{l}");
    }
    write_atomic(&dir.join("loss.csv"), loss.as_bytes())?;

    let mut train = config.train.clone();
    train.seed = config.model_seed();
    let ckpt = Checkpoint::new(&outcome.model, &train);
    write_atomic(&dir.join("checkpoint.json"), ckpt.to_json()?.as_bytes())?;

    let manifest = Manifest::new(
        config,
        data,
        dir,
        &[
            "metrics.csv",
            "timestamps.csv",
            "predictions.csv",
            "loss.csv",
            "checkpoint.json",
        ],
    )?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
