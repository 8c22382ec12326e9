use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn epigraph(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epigraph"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--window",
    "4",
    "--horizon",
    "2",
    "--epochs",
    "4",
    "--hidden",
    "3",
];

fn synth_data(dir: &Path, series: &str) {
    let o = epigraph(
        &[
            "synth", "--out", "data", "--nodes", "8", "--days", "90", "--seed", "3", "--graph",
            "ring", "--series", series,
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["edges.csv", "panel.csv", "population.csv"] {
        assert!(dir.join("data").join(f).exists());
    }
}

#[test]
fn backbone_prints_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    synth_data(dir.path(), "seasonal");
    let o = epigraph(
        &[
            "backbone",
            "--edges",
            "data/edges.csv",
            "--alpha",
            "0.05",
            "--min-keep",
            "1",
            "--out",
            "bb.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("edges_in,edges_out,alpha,min_keep"));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[0], "32");
    assert!(fields[1].parse::<usize>().unwrap() <= 32);
    assert_eq!(&fields[2..], ["0.05", "1"]);
    assert!(dir.path().join("bb.csv").exists());
}

#[test]
fn train_then_evaluate_checkpoint_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth_data(dir.path(), "seasonal");
    let files = [
        "--edges",
        "data/edges.csv",
        "--panel",
        "data/panel.csv",
        "--output",
        "run",
    ];
    let o = epigraph(&[&["train"], &files[..], SMALL].concat(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean RMSE"));
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();

    let o = epigraph(
        &[
            &["evaluate", "--checkpoint", "run/checkpoint.json"],
            &files[..],
            SMALL,
        ]
        .concat(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), metrics);

    let o = epigraph(
        &[
            "train",
            "--manifest",
            "run/manifest.json",
            "--output",
            "again",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("again/metrics.csv")).unwrap(),
        metrics
    );
}

#[test]
fn preprocess_reports_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    synth_data(dir.path(), "separable-two-class");
    let o = epigraph(
        &[
            "preprocess",
            "--edges",
            "data/edges.csv",
            "--panel",
            "data/panel.csv",
            "--population",
            "data/population.csv",
            "--task",
            "classification",
            "--window",
            "5",
            "--horizon",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    // 90 - 5 - 1 + 1 = 85 snapshots: 68 train, 17 test
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(row.starts_with("8,32,32,68,17,0,"), "{row}");
}

#[test]
fn grid_writes_heatmaps_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    let o = epigraph(
        &[
            &[
                "grid",
                "--synthetic",
                "1",
                "--windows",
                "2-3",
                "--horizons",
                "1",
                "--output",
                "sweep",
                "--svg",
            ],
            &SMALL[4..],
        ]
        .concat(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv =
        fs::read_to_string(dir.path().join("sweep/heatmap_gcrn_regression_rmse.csv")).unwrap();
    assert!(csv.starts_with("window,horizon_1\n2,"));
    assert!(dir
        .path()
        .join("sweep/heatmap_gcrn_regression_rmse.svg")
        .exists());
    assert_eq!(
        fs::read_dir(dir.path().join("sweep/cells"))
            .unwrap()
            .count(),
        2
    );

    let o = epigraph(&["grid", "--merge-only", "--output", "sweep"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("sweep/heatmap_merged_rmse.csv")).unwrap(),
        csv
    );
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = epigraph(
        &[
            "train",
            "--synthetic",
            "0",
            "--window",
            "400",
            "--horizon",
            "14",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("[preprocess]"), "{}", stderr(&o));

    let o = epigraph(&["backbone", "--edges", "missing.csv"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.csv"));

    let o = epigraph(
        &["train", "--edges", "missing.csv", "--panel", "missing.csv"],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("does not exist"), "{}", stderr(&o));
}
