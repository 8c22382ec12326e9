use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use epigraph_core::experiment::{
    build_snapshots, evaluate_model, grid_sweep, merge_cells, metrics_rows, prepare, render_svg,
    run_experiment, DataSource, Evaluation, ExperimentConfig, GridOptions, Manifest,
};
use epigraph_core::graph::{extract_backbone, BackboneParams, Criterion, MobilityGraph};
use epigraph_core::ingest::{
    generate_synthetic, load_edge_list, write_edge_list, write_panel, write_population, GraphStyle,
    SeriesStyle, SynthSpec,
};
use epigraph_core::panel::Windowing;
use epigraph_core::stgnn::{Checkpoint, ModelKind, Task};

#[derive(Parser)]
#[command(
    name = "epigraph",
    version,
    about = "Graph-convolutional recurrent forecasting of epidemic series"
)]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter an edge list to its disparity backbone.
    Backbone(BackboneArgs),
    /// Load, reconcile and standardise the data without training.
    Preprocess(PreprocessArgs),
    /// Train and evaluate one configuration, writing the run directory.
    Train(RunArgs),
    /// Score a saved checkpoint on the test split of a configuration.
    Evaluate(EvaluateArgs),
    /// Sweep window and horizon sizes and write heatmaps.
    Grid(GridArgs),
    /// Write a synthetic edge list, panel and population table.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BackboneArgs {
    /// Edge list CSV with `source,target,weight` columns.
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    min_keep: usize,
    #[arg(long, default_value = "smallest")]
    criterion: Criterion,
    /// Treat each row as a link in both directions.
    #[arg(long)]
    undirected: bool,
    /// Where to write the filtered edge list.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    population: Option<PathBuf>,
    /// Use a synthetic dataset with this seed instead of files.
    #[arg(long, conflicts_with_all = ["edges", "panel", "population"])]
    synthetic: Option<u64>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    windowing: Option<Windowing>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Enable backbone extraction.
    #[arg(long, conflicts_with = "no_backbone")]
    backbone: bool,
    #[arg(long)]
    no_backbone: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    min_keep: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Window sizes as `a-b` or a single value.
    #[arg(long, default_value = "1-14", value_parser = parse_range)]
    windows: RangeInclusive<usize>,
    /// Horizons as `a-b` or a single value.
    #[arg(long, default_value = "1-14", value_parser = parse_range)]
    horizons: RangeInclusive<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Keep finished cells already in the output directory.
    #[arg(long)]
    resume: bool,
    /// Also write SVG renderings of the heatmaps.
    #[arg(long)]
    svg: bool,
    /// Only rebuild the heatmaps from existing cell files.
    #[arg(long)]
    merge_only: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 400)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "community")]
    graph: GraphStyle,
    #[arg(long, default_value = "seasonal")]
    series: SeriesStyle,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 14.0)]
    period: f64,
    #[arg(long, default_value_t = 0.0)]
    period_spread: f64,
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let bad = || format!("expected `a-b` or a single number, got `{s}`");
    let (a, b) = match s.split_once('-') {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

impl RunArgs {
    /// Config file (or manifest), then flag overrides.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = if let Some(path) = &self.manifest {
            let dir = path.parent().unwrap_or(Path::new("."));
            Manifest::load(path)?.config_in(dir)?
        } else if let Some(path) = &self.config {
            ExperimentConfig::load(path)?
        } else if let Some(seed) = self.synthetic {
            ExperimentConfig::new(DataSource::Synthetic(SynthSpec {
                seed,
                ..SynthSpec::default()
            }))
        } else {
            let (Some(edges), Some(panel)) = (&self.edges, &self.panel) else {
                bail!("give --config, --manifest, --synthetic <seed>, or both --edges and --panel");
            };
            ExperimentConfig::new(DataSource::Files {
                edges: edges.clone(),
                panel: panel.clone(),
                population: self.population.clone(),
            })
        };
        if let Some(seed) = self.synthetic {
            match &mut c.data {
                DataSource::Synthetic(spec) => spec.seed = seed,
                data => {
                    *data = DataSource::Synthetic(SynthSpec {
                        seed,
                        ..SynthSpec::default()
                    })
                }
            }
        }
        if let DataSource::Files {
            edges,
            panel,
            population,
        } = &mut c.data
        {
            if let Some(p) = &self.edges {
                *edges = p.clone();
            }
            if let Some(p) = &self.panel {
                *panel = p.clone();
            }
            if self.population.is_some() {
                population.clone_from(&self.population);
            }
        }
        if let Some(v) = &self.name {
            c.name = v.clone();
        }
        if let Some(v) = self.model {
            c.model = v;
        }
        if let Some(v) = self.task {
            c.set_task(v);
        }
        if let Some(v) = self.window {
            c.window = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = v;
        }
        if let Some(v) = self.windowing {
            c.windowing = v;
        }
        if let Some(v) = self.train_fraction {
            c.train_fraction = v;
        }
        if self.backbone {
            c.backbone.enabled = true;
        }
        if self.no_backbone {
            c.backbone.enabled = false;
        }
        if let Some(v) = self.alpha {
            c.backbone.alpha = v;
        }
        if let Some(v) = self.min_keep {
            c.backbone.min_keep = v;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.hidden {
            c.train.hidden = v;
        }
        if let Some(v) = self.seed {
            c.train.seed = v;
        }
        if let Some(v) = &self.output {
            c.output = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn backbone(args: &BackboneArgs) -> Result<()> {
    let mut graph = load_edge_list(&args.edges)?;
    if args.undirected {
        graph =
            MobilityGraph::undirected(graph.node_ids().to_vec(), graph.edges().iter().copied())?;
    }
    let params = BackboneParams {
        alpha: args.alpha,
        min_keep: args.min_keep,
        criterion: args.criterion,
    };
    let kept = extract_backbone(&graph, &params)?;
    if let Some(out) = &args.out {
        write_edge_list(&kept, out)?;
    }
    println!("edges_in,edges_out,alpha,min_keep");
    println!(
        "{},{},{},{}",
        graph.edge_count(),
        kept.edge_count(),
        args.alpha,
        args.min_keep
    );
    Ok(())
}

fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let config = args.run.resolve()?;
    let data = prepare(&config)?;
    let split = build_snapshots(&config, &data)?;
    let report = &data.dataset.report;
    for id in &report.dropped_graph_nodes {
        log::warn!("graph node {id} has no series and was dropped");
    }
    for id in &report.isolated_series_nodes {
        log::warn!("series {id} has no graph node and is isolated");
    }
    let fit = split.standardization.fit_range;
    println!("nodes,edges_loaded,edges_used,train_snapshots,test_snapshots,fit_start,fit_end");
    println!(
        "{},{},{},{},{},{},{}",
        data.graph.node_count(),
        data.edges_before,
        data.graph.edge_count(),
        split.train.len(),
        split.test.len(),
        fit.start,
        fit.end
    );
    Ok(())
}

fn train(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    let report = run_experiment(&config)?;
    let eval = &report.outcome.evaluation;
    match eval {
        Evaluation::Regression {
            rmse, persistence, ..
        } => println!(
            "{} mean RMSE {:.4} (persistence {:.4}) -> {}",
            config.model,
            rmse.summary.mean,
            persistence.summary.mean,
            report.output_dir.display()
        ),
        Evaluation::Classification {
            f1,
            precision,
            recall,
            ..
        } => println!(
            "{} mean F1 {:.4} precision {:.4} recall {:.4} -> {}",
            config.model,
            f1.summary.mean,
            precision.summary.mean,
            recall.summary.mean,
            report.output_dir.display()
        ),
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let config = args.run.resolve()?;
    let model = Checkpoint::load(&args.checkpoint)
        .and_then(|c| c.model())
        .with_context(|| format!("[checkpoint] reading {}", args.checkpoint.display()))?;
    let data = prepare(&config)?;
    let eval = evaluate_model(&config, &data, &model)?;
    for row in metrics_rows(&config, &eval) {
        println!("{}", row.join(","));
    }
    Ok(())
}

fn grid(args: &GridArgs) -> Result<()> {
    let heatmaps = if args.merge_only {
        let dir =
            args.run.output.clone().ok_or_else(|| {
                anyhow!("--merge-only needs --output pointing at a sweep directory")
            })?;
        let heatmaps = merge_cells(&dir)?;
        for h in &heatmaps {
            std::fs::write(
                dir.join(format!("heatmap_merged_{}.csv", h.metric)),
                h.to_csv(),
            )?;
            if args.svg {
                std::fs::write(
                    dir.join(format!("heatmap_merged_{}.svg", h.metric)),
                    render_svg(h),
                )?;
            }
        }
        heatmaps
    } else {
        let config = args.run.resolve()?;
        let options = GridOptions {
            windows: args.windows.clone(),
            horizons: args.horizons.clone(),
            workers: args.workers,
            output: Some(config.output.clone()),
            resume: args.resume,
            svg: args.svg,
        };
        let (heatmaps, results) = grid_sweep(&config, &options)?;
        let failed = results
            .iter()
            .filter(|r| r.score(&heatmaps[0].metric).is_none())
            .count();
        if failed > 0 {
            log::warn!(
                "{failed} of {} cells failed; see cells/*.json",
                results.len()
            );
        }
        heatmaps
    };
    for h in &heatmaps {
        println!(
            "# {} ({} of {} cells)",
            h.metric,
            h.populated(),
            h.cells.len()
        );
        print!("{}", h.to_csv());
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        nodes: args.nodes,
        days: args.days,
        seed: args.seed,
        graph: args.graph,
        series: args.series,
        noise: args.noise,
        period: args.period,
        period_spread: args.period_spread,
        ..SynthSpec::default()
    };
    let (graph, panel, population) = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_edge_list(&graph, &args.out.join("edges.csv"))?;
    write_panel(&panel, &args.out.join("panel.csv"))?;
    write_population(
        &population,
        panel.node_ids(),
        &args.out.join("population.csv"),
    )?;
    println!(
        "{} nodes, {} edges, {} days -> {}",
        graph.node_count(),
        graph.edge_count(),
        panel.day_count(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Backbone(a) => backbone(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Grid(a) => grid(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
