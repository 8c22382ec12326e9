use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GRID_MAX};
use super::{prepare, run_prepared, write_atomic, PreparedData};
use crate::error::{Error, Result, StageExt};
use crate::metrics::Summary;
use crate::stgnn::Task;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridOptions {
    pub windows: RangeInclusive<usize>,
    pub horizons: RangeInclusive<usize>,
    /// Cells trained at once.
    pub workers: usize,
    /// Where cell files and the heatmap go; nothing is written if unset.
    pub output: Option<PathBuf>,
    /// Reuse finished cell files found in the output directory.
    pub resume: bool,
    pub svg: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            windows: 1..=GRID_MAX,
            horizons: 1..=GRID_MAX,
            workers: 1,
            output: None,
            resume: false,
            svg: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellResult {
    Done {
        window: usize,
        horizon: usize,
        seed: u64,
        /// Summary per metric name.
        metrics: BTreeMap<String, Summary>,
    },
    Failed {
        window: usize,
        horizon: usize,
        error: String,
    },
}

impl CellResult {
    pub fn key(&self) -> (usize, usize) {
        match self {
            CellResult::Done {
                window, horizon, ..
            }
            | CellResult::Failed {
                window, horizon, ..
            } => (*window, *horizon),
        }
    }

    /// Mean of `metric`, if the cell finished and recorded it.
    pub fn score(&self, metric: &str) -> Option<f64> {
        match self {
            CellResult::Done { metrics, .. } => metrics.get(metric).map(|s| s.mean),
            CellResult::Failed { .. } => None,
        }
    }
}

/// Mean score per (window, horizon); `None` marks a missing cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub metric: String,
    pub windows: Vec<usize>,
    pub horizons: Vec<usize>,
    pub cells: BTreeMap<(usize, usize), Option<f64>>,
}

impl Heatmap {
    pub fn from_cells(
        metric: &str,
        windows: Vec<usize>,
        horizons: Vec<usize>,
        results: &[CellResult],
    ) -> Self {
        let found: BTreeMap<_, _> = results.iter().map(|r| (r.key(), r.score(metric))).collect();
        let mut cells = BTreeMap::new();
        for &l in &windows {
            for &f in &horizons {
                cells.insert((l, f), found.get(&(l, f)).copied().flatten());
            }
        }
        Self {
            metric: metric.to_string(),
            windows,
            horizons,
            cells,
        }
    }

    pub fn get(&self, window: usize, horizon: usize) -> Option<f64> {
        self.cells.get(&(window, horizon)).copied().flatten()
    }

    pub fn populated(&self) -> usize {
        self.cells.values().filter(|v| v.is_some()).count()
    }

    /// First column `window`, then `horizon_<F>` per horizon; missing
    /// cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window");
        for f in &self.horizons {
            let _ = write!(out, ",horizon_{f}");
        }
        out.push('\n');
        for &l in &self.windows {
            out.push_str(&l.to_string());
            for &f in &self.horizons {
                out.push(',');
                if let Some(v) = self.get(l, f) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn cell_path(dir: &Path, window: usize, horizon: usize) -> PathBuf {
    dir.join("cells")
        .join(format!("l{window:02}_f{horizon:02}.json"))
}

/// Metrics mapped per task; the first is the headline.
pub fn metric_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Regression => &["rmse"],
        Task::Classification => &["f1", "precision", "recall"],
    }
}

fn heatmap_name(base: &ExperimentConfig, metric: &str) -> String {
    format!(
        "heatmap_{}_{}_{metric}",
        base.model.to_string().to_lowercase(),
        base.task
    )
}

fn run_cell(
    base: &ExperimentConfig,
    data: &PreparedData,
    window: usize,
    horizon: usize,
) -> CellResult {
    let mut config = base.clone();
    config.window = window;
    config.horizon = horizon;
    match run_prepared(&config, data) {
        Ok(outcome) => {
            let tables = match &outcome.evaluation {
                super::Evaluation::Regression { rmse, .. } => vec![rmse],
                super::Evaluation::Classification {
                    f1,
                    precision,
                    recall,
                    ..
                } => vec![f1, precision, recall],
            };
            let metrics = metric_names(config.task)
                .iter()
                .zip(tables)
                .map(|(name, t)| (name.to_string(), t.summary))
                .collect();
            CellResult::Done {
                window,
                horizon,
                seed: config.model_seed(),
                metrics,
            }
        }
        Err(e) => {
            log::warn!("cell l={window} F={horizon} failed: {e}");
            CellResult::Failed {
                window,
                horizon,
                error: e.to_string(),
            }
        }
    }
}

fn read_cell(path: &Path) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Trains one model per (window, horizon) pair and returns one heatmap per
/// metric, headline first. Failed cells are recorded and the sweep
/// continues.
pub fn grid_sweep(
    base: &ExperimentConfig,
    options: &GridOptions,
) -> Result<(Vec<Heatmap>, Vec<CellResult>)> {
    for r in [&options.windows, &options.horizons] {
        if r.is_empty() || *r.start() < 1 || *r.end() > GRID_MAX {
            return Err(Error::Config(format!(
                "grid ranges must lie within 1..={GRID_MAX}, got {}..={}",
                r.start(),
                r.end()
            )));
        }
    }
    base.validate().stage("config")?;
    let data = prepare(base)?;
    if let Some(dir) = &options.output {
        fs::create_dir_all(dir.join("cells"))
            .map_err(|e| Error::io(dir, e))
            .stage("write")?;
    }
    let keys: Vec<(usize, usize)> = options
        .windows
        .clone()
        .flat_map(|l| options.horizons.clone().map(move |f| (l, f)))
        .collect();

    let work = |&(l, f): &(usize, usize)| -> Result<CellResult> {
        let path = options.output.as_ref().map(|d| cell_path(d, l, f));
        if options.resume {
            if let Some(done @ CellResult::Done { .. }) = path.as_deref().and_then(read_cell) {
                return Ok(done);
            }
        }
        let result = run_cell(base, &data, l, f);
        if let Some(path) = path {
            let text =
                serde_json::to_string_pretty(&result).map_err(|e| Error::Serde(e.to_string()))?;
            write_atomic(&path, text.as_bytes()).stage("write")?;
        }
        Ok(result)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<CellResult> =
        pool.install(|| keys.par_iter().map(work).collect::<Result<_>>())?;

    let heatmaps: Vec<Heatmap> = metric_names(base.task)
        .iter()
        .map(|m| {
            Heatmap::from_cells(
                m,
                options.windows.clone().collect(),
                options.horizons.clone().collect(),
                &results,
            )
        })
        .collect();
    if let Some(dir) = &options.output {
        for heatmap in &heatmaps {
            let name = heatmap_name(base, &heatmap.metric);
            write_atomic(
                &dir.join(format!("{name}.csv")),
                heatmap.to_csv().as_bytes(),
            )
            .stage("write")?;
            if options.svg {
                write_atomic(
                    &dir.join(format!("{name}.svg")),
                    render_svg(heatmap).as_bytes(),
                )
                .stage("write")?;
            }
        }
    }
    Ok((heatmaps, results))
}

/// Rebuilds the heatmaps from the cell files of one or more partial sweeps
/// in `dir`, one per metric in name order.
pub fn merge_cells(dir: &Path) -> Result<Vec<Heatmap>> {
    let cells_dir = dir.join("cells");
    let listing = fs::read_dir(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let mut results = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(&cells_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let cell: CellResult = serde_json::from_str(&text)
                .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
            results.push(cell);
        }
    }
    if results.is_empty() {
        return Err(Error::EmptyData(format!(
            "no cell files in {}",
            cells_dir.display()
        )));
    }
    let mut names = std::collections::BTreeSet::new();
    for r in &results {
        if let CellResult::Done { metrics, .. } = r {
            names.extend(metrics.keys().cloned());
        }
    }
    if names.is_empty() {
        return Err(Error::EmptyData(format!(
            "no finished cells in {}",
            cells_dir.display()
        )));
    }
    let span = |pick: fn(&(usize, usize)) -> usize| {
        let vals: Vec<usize> = results.iter().map(|r| pick(&r.key())).collect();
        let lo = *vals.iter().min().expect("non-empty");
        let hi = *vals.iter().max().expect("non-empty");
        (lo..=hi).collect::<Vec<_>>()
    };
    Ok(names
        .iter()
        .map(|m| Heatmap::from_cells(m, span(|k| k.0), span(|k| k.1), &results))
        .collect())
}

/// Colour-scaled grid of the heatmap values. Carries nothing beyond the CSV.
pub fn render_svg(heatmap: &Heatmap) -> String {
    const CELL: usize = 40;
    const MARGIN: usize = 60;
    let values: Vec<f64> = heatmap.cells.values().flatten().copied().collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = MARGIN + CELL * heatmap.horizons.len();
    let height = MARGIN + CELL * heatmap.windows.len();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(
        svg,
        "<text x=\"4\" y=\"14\">{} (rows: window, columns: horizon)</text>",
        heatmap.metric
    );
    for (c, f) in heatmap.horizons.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\">{f}</text>",
            MARGIN + c * CELL + CELL / 3,
            MARGIN - 6
        );
    }
    for (r, &l) in heatmap.windows.iter().enumerate() {
        let y = MARGIN + r * CELL;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\">{l}</text>",
            MARGIN - 20,
            y + CELL / 2 + 4
        );
        for (c, &f) in heatmap.horizons.iter().enumerate() {
            let x = MARGIN + c * CELL;
            let fill = match heatmap.get(l, f) {
                Some(v) => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let red = (255.0 * t).round() as u8;
                    let blue = (255.0 * (1.0 - t)).round() as u8;
                    format!("rgb({red},64,{blue})")
                }
                None => "#dddddd".to_string(),
            };
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{fill}\"/>"
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
