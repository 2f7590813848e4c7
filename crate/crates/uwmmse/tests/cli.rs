use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uwmmse::config::RunConfig;
use uwmmse::dataset::{Dataset, DatasetManifest};
use uwmmse::weights::load_uwmmse;
use uwmmse_core::channel::ChannelMatrix;
use uwmmse_core::rng::stream;
use uwmmse_core::{Matrix, UwmmseWeights};

const SMALL: &str = r#"{
  "seed": 17,
  "system": { "m": 5 },
  "dataset": { "count": 24 },
  "model": { "layers": 2, "hidden": 8 },
  "train": { "epochs": 2, "batch_size": 8 },
  "mlp": { "epochs": 1 },
  "campaign": { "surface_sample": 3, "jobs": 2 }
}"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        fs::write(ws.path("config.json"), SMALL).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("config.json");
        let out = self.path("out");
        Command::new(env!("CARGO_BIN_EXE_uwmmse"))
            .args(args)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    }

    fn out(&self, name: &str) -> PathBuf {
        self.path("out").join(name)
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn generate_is_reproducible_and_sized() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    let first = read(&ws.out("dataset.uwds"));
    assert_eq!(first.len(), 24 * 5 * 5 * 8 + 18);
    let data = Dataset::decode(&first).unwrap();
    assert!(data.samples.iter().all(|h| h.matrix().as_slice().iter().all(|&x| x > 0.0 && x.is_finite())));
    ws.ok(&["generate"]);
    assert_eq!(read(&ws.out("dataset.uwds")), first);
    assert!(ws.out("dataset.perturbed.uwds").exists());

    let manifest: DatasetManifest = serde_json::from_slice(&read(&ws.out("dataset.uwds.json"))).unwrap();
    assert_eq!((manifest.m, manifest.count, manifest.seed), (5, 24, 17));
    assert!(manifest.provenance.version.starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn seed_flag_overrides_config() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    let a = read(&ws.out("dataset.uwds"));
    ws.ok(&["generate", "--seed", "18"]);
    assert_ne!(read(&ws.out("dataset.uwds")), a);
    let m: DatasetManifest = serde_json::from_slice(&read(&ws.out("dataset.uwds.json"))).unwrap();
    assert_eq!(m.seed, 18);
}

#[test]
fn zero_epochs_save_the_initialization() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    ws.ok(&["train", "--epochs", "0"]);
    let saved = load_uwmmse(&ws.out("uwmmse_weights.json")).unwrap().model;
    let cfg = RunConfig::from_json(SMALL).unwrap();
    let init = UwmmseWeights::init(2, 8, cfg.model.mode, &mut stream(cfg.init_seed()));
    assert_eq!(saved, init);
    let loss = String::from_utf8(read(&ws.out("loss.csv"))).unwrap();
    assert_eq!(loss.lines().filter(|l| !l.starts_with('#')).count(), 1);
}

#[test]
fn training_is_reproducible() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    ws.ok(&["train"]);
    let loss = read(&ws.out("loss.csv"));
    let weights = load_uwmmse(&ws.out("uwmmse_weights.json")).unwrap().model;
    let rows = csv_rows(&ws.out("loss.csv"));
    assert_eq!(rows.len(), 2);
    ws.ok(&["train"]);
    assert_eq!(read(&ws.out("loss.csv")), loss);
    // the worker count changes only the config echo
    ws.ok(&["train", "--jobs", "1"]);
    assert_eq!(csv_rows(&ws.out("loss.csv")), rows);
    assert_eq!(load_uwmmse(&ws.out("uwmmse_weights.json")).unwrap().model, weights);
}

fn svg_bin_counts(svg: &str) -> Vec<u64> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed XML");
    doc.descendants()
        .filter(|n| n.attribute("class") == Some("bin"))
        .map(|n| n.attribute("data-count").unwrap().parse().unwrap())
        .collect()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    String::from_utf8(read(path))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn bound_validation_artifacts_are_consistent() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    ws.ok(&["train"]);
    ws.ok(&["validate-bound"]);
    let report: serde_json::Value = serde_json::from_slice(&read(&ws.out("bound_report.json"))).unwrap();
    let total = report["report"]["total_entries"].as_u64().unwrap();
    assert_eq!(total, 24 * 5 * 2);

    let svg = String::from_utf8(read(&ws.out("margin_histogram.svg"))).unwrap();
    let hist = csv_rows(&ws.out("margin_histogram.csv"));
    let csv_counts: Vec<u64> = hist[1..hist.len() - 1].iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(svg_bin_counts(&svg), csv_counts);
    let all: u64 = hist.iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    let entries = csv_rows(&ws.out("bound_entries.csv"));
    assert_eq!(all, entries.len() as u64);
    let degenerate = report["report"]["degenerate_entries"].as_u64().unwrap();
    assert_eq!(all + degenerate, total);

    let surface = csv_rows(&ws.out("bound_surface.csv"));
    let expected: Vec<Vec<String>> =
        entries.iter().filter(|r| r[0] == "3").map(|r| vec![r[1].clone(), r[2].clone(), r[3].clone(), r[4].clone()]).collect();
    assert_eq!(surface, expected);

    // identical seeds reproduce identical reports
    let first = read(&ws.out("bound_report.json"));
    let first_entries = read(&ws.out("bound_entries.csv"));
    ws.ok(&["validate-bound"]);
    assert_eq!(read(&ws.out("bound_report.json")), first);
    assert_eq!(read(&ws.out("bound_entries.csv")), first_entries);

    // plot re-renders the same figure from the entries CSV
    let replot = ws.path("replot.svg");
    ws.ok(&["plot", ws.out("bound_entries.csv").to_str().unwrap(), "--output", replot.to_str().unwrap()]);
    assert_eq!(read(&replot), svg.into_bytes());
}

#[test]
fn zero_perturbation_has_no_violations() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    ws.ok(&["train"]);
    ws.ok(&["validate-bound", "--eps", "0"]);
    let report: serde_json::Value = serde_json::from_slice(&read(&ws.out("bound_report.json"))).unwrap();
    assert_eq!(report["report"]["violations"], 0);
    assert_eq!(report["report"]["violation_rate"], 0.0);
    assert!(csv_rows(&ws.out("bound_entries.csv")).iter().all(|r| r[5] == "0"));
}

#[test]
fn comparison_emits_report_and_figure() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    ws.ok(&["train"]);
    ws.ok(&["train", "--model", "mlp"]);
    ws.ok(&["compare"]);
    let report: serde_json::Value = serde_json::from_slice(&read(&ws.out("comparison.json"))).unwrap();
    let names: Vec<&str> = report["methods"].as_array().unwrap().iter().map(|m| m["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["MLP", "Tr-WMMSE", "WMMSE", "UWMMSE"]);
    let svg = String::from_utf8(read(&ws.out("comparison_box.svg"))).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("box")).count(), 4);
    let replot = ws.path("box.svg");
    ws.ok(&["plot", ws.out("comparison_samples.csv").to_str().unwrap(), "--output", replot.to_str().unwrap()]);
    assert_eq!(read(&replot), svg.into_bytes());

    ws.ok(&["eval"]);
    let eval: serde_json::Value = serde_json::from_slice(&read(&ws.out("eval.json"))).unwrap();
    assert_eq!(eval["methods"].as_array().unwrap().len(), 4);
}

#[test]
fn missing_learned_weights_is_a_data_error() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    ws.ok(&["train"]);
    let o = ws.run(&["compare", "--methods", "uwmmse,mlp"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    ws.ok(&["compare", "--methods", "uwmmse,tr-wmmse"]);
}

#[test]
fn config_errors_exit_with_2() {
    let ws = Workspace::new();
    fs::write(ws.path("config.json"), r#"{ "sytem": {} }"#).unwrap();
    let o = ws.run(&["generate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    fs::write(ws.path("config.json"), r#"{ "train": { "batch_size": 0 } }"#).unwrap();
    assert_eq!(code(&ws.run(&["generate"])), 2);
    assert_eq!(code(&ws.run(&["no-such-command"])), 2);
}

#[test]
fn data_errors_exit_with_3() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&["train"])), 3);
    fs::create_dir_all(ws.path("out")).unwrap();
    fs::write(ws.out("dataset.uwds"), b"UWDS\x01\x00").unwrap();
    let o = ws.run(&["train"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset"));
}

#[test]
fn mismatched_sizes_and_layers_are_data_errors() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    ws.ok(&["train", "--model", "mlp"]);
    ws.ok(&["train"]);
    ws.ok(&["generate", "--m", "6"]);
    let o = ws.run(&["compare", "--methods", "mlp"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("M = 5"));

    fs::write(ws.path("config.json"), SMALL.replace("\"layers\": 2", "\"layers\": 3")).unwrap();
    let o = ws.run(&["validate-bound"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("K = 2"));
}

#[test]
fn numeric_failures_exit_with_4() {
    let ws = Workspace::new();
    fs::create_dir_all(ws.path("out")).unwrap();
    let h = ChannelMatrix::new(Matrix::from_fn(5, 5, |i, j| if i == j { 1e200 } else { 1.0 })).unwrap();
    Dataset::new(vec![h]).unwrap().write(&ws.out("dataset.uwds")).unwrap();
    let o = ws.run(&["train"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
