use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hyperdisc::cli::{load_dataset, WorldFile};
use hyperdisc::cluster::LabelAssignment;
use hyperdisc::embedder::{EncoderParams, TrainConfig};
use hyperdisc::evalmod::map_summary;
use hyperdisc::pipeline::{self, ClusterArtifact, Report, RunConfig};
use hyperdisc::seed;
use tempfile::TempDir;

const SMALL: &str = r#"{"n_scenes": 16, "train": {"epochs": 2, "learning_rate": 0.003, "hidden": [8, 4]}}"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperdisc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(w.path("small.json"), SMALL).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn gen(&self) {
        ok(&["gen", "--config", &self.s("small.json"), "--out", &self.s("data.jsonl")]);
    }

    fn train(&self, extra: &[&str]) {
        let (c, d, out) = (self.s("small.json"), self.s("data.jsonl"), self.s("params.json"));
        let mut args = vec!["train", "--config", &c, "--dataset", &d];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", &out]);
        ok(&args);
    }

    fn cluster(&self, extra: &[&str]) {
        let (c, d, p, o) = (self.s("small.json"), self.s("data.jsonl"), self.s("params.json"), self.s("model.json"));
        let mut args = vec!["cluster", "--config", &c, "--dataset", &d, "--params", &p];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", &o]);
        ok(&args);
    }

    fn json<T: serde::de::DeserializeOwned>(&self, name: &str) -> T {
        serde_json::from_str(&std::fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }
}

fn small_config() -> RunConfig {
    serde_json::from_str(SMALL).unwrap()
}

#[test]
fn gen_round_trips_and_is_repeatable() {
    let w = Work::new();
    w.gen();
    let (world, scenes) = pipeline::generate(&small_config()).unwrap();
    assert_eq!(load_dataset(&w.path("data.jsonl")).unwrap(), scenes);
    let side: WorldFile = w.json("data.world.json");
    assert_eq!(side.tree, world);
    assert_eq!(side.tiers, world.tier_map());

    let first = std::fs::read(w.path("data.jsonl")).unwrap();
    w.gen();
    assert_eq!(std::fs::read(w.path("data.jsonl")).unwrap(), first);
}

#[test]
fn gen_with_no_scenes_writes_empty_dataset() {
    let w = Work::new();
    ok(&["gen", "--n-scenes", "0", "--out", &w.s("empty.jsonl")]);
    assert!(std::fs::read(w.path("empty.jsonl")).unwrap().is_empty());
    let side: WorldFile = w.json("empty.world.json");
    assert!(!side.tree.nodes.is_empty());
}

#[test]
fn zero_epochs_keeps_initial_params() {
    let w = Work::new();
    w.gen();
    w.train(&["--epochs", "0"]);
    let params: EncoderParams = w.json("params.json");
    let cfg = small_config().train_config();
    let init = EncoderParams::init(&cfg.dims(32), cfg.geometry, seed::derive(cfg.seed, "init", 0)).unwrap();
    assert_eq!(params, init);
    let csv = std::fs::read_to_string(w.path("params.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn loss_csv_rows_add_up() {
    let w = Work::new();
    w.gen();
    w.train(&[]);
    let cfg = TrainConfig::default();
    let csv = std::fs::read_to_string(w.path("params.loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,L_mask,L_object,L_hier,total"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let expect = cfg.beta * r[1] + cfg.gamma * r[2] + r[3];
        assert!((r[4] - expect).abs() <= 1e-9 * expect.abs().max(1.0), "{r:?}");
    }
}

#[test]
fn single_cluster_takes_everything() {
    let w = Work::new();
    w.gen();
    w.train(&[]);
    w.cluster(&["--k", "1"]);
    let a: ClusterArtifact = w.json("model.json");
    assert_eq!(a.model.k, 1);
    assert!(!a.model.assignment.is_empty());
    assert!(a.model.assignment.iter().all(|&c| c == 0));
    assert_eq!(a.proposals.len(), a.model.assignment.len());
}

#[test]
fn k_grid_records_choice_and_reruns_identically() {
    let w = Work::new();
    w.gen();
    w.train(&[]);
    w.cluster(&["--k-grid", "2,4,6,8"]);
    let a: ClusterArtifact = w.json("model.json");
    let elbow = a.elbow.as_ref().unwrap();
    assert!([2, 4, 6, 8].contains(&elbow.k));
    assert_eq!(a.model.k, elbow.k);
    let model = std::fs::read(w.path("model.json")).unwrap();
    let labels = std::fs::read(w.path("model.labels.json")).unwrap();
    w.cluster(&["--k-grid", "2,4,6,8"]);
    assert_eq!(std::fs::read(w.path("model.json")).unwrap(), model);
    assert_eq!(std::fs::read(w.path("model.labels.json")).unwrap(), labels);
}

#[test]
fn ground_truth_detections_score_one() {
    let w = Work::new();
    w.gen();
    ok(&["eval", "--dataset", &w.s("data.jsonl"), "--gt-detections", "--out", &w.s("gt.json")]);
    let r: Report = w.json("gt.json");
    assert_eq!(r.purity, 1.0);
    assert_eq!(r.map.map, 1.0);
    assert_eq!(r.map.map50, 1.0);
    assert_eq!(r.map.map75, 1.0);
    for split in [r.map.map_rare, r.map.map_common, r.map.map_frequent, r.map.map_small, r.map.map_medium, r.map.map_large] {
        assert!(split.is_none_or(|v| v == 1.0));
    }
    let csv = std::fs::read_to_string(w.path("gt.csv")).unwrap();
    assert!(csv.starts_with("k,purity,"));
}

fn eval_model(w: &Work, labels: Option<&Path>) -> Report {
    let (d, m, o) = (w.s("data.jsonl"), w.s("model.json"), w.s("report.json"));
    let mut args = vec!["eval", "--dataset", &d, "--model", &m];
    let l;
    if let Some(p) = labels {
        l = p.display().to_string();
        args.extend_from_slice(&["--labels", &l]);
    }
    args.extend_from_slice(&["--out", &o]);
    ok(&args);
    w.json("report.json")
}

#[test]
fn report_matches_library_and_empty_detections_score_zero() {
    let w = Work::new();
    w.gen();
    w.train(&[]);
    w.cluster(&[]);
    let report = eval_model(&w, None);

    let scenes = load_dataset(&w.path("data.jsonl")).unwrap();
    let world: WorldFile = w.json("data.world.json");
    let artifact: ClusterArtifact = w.json("model.json");
    let labels: LabelAssignment = w.json("model.labels.json");
    let dets = pipeline::detections(&scenes, &artifact, &labels).unwrap();
    let gts = pipeline::ground_truths(&scenes);
    let bins = pipeline::EvalConfig::default().size_bins(scenes[0].width);
    let mut expect = map_summary(&dets, &gts, &world.tiers, bins).unwrap();
    expect.novel_count = labels.novel.len();
    assert_eq!(report.map, expect);
    assert_eq!(report.k, artifact.model.k);

    let none = LabelAssignment {
        novel: (0..artifact.model.k).collect(),
        ..Default::default()
    };
    std::fs::write(w.path("none.json"), serde_json::to_string(&none).unwrap()).unwrap();
    let empty = eval_model(&w, Some(&w.path("none.json")));
    assert_eq!((empty.map.map, empty.map.map50, empty.map.map75), (0.0, 0.0, 0.0));
    assert_eq!(empty.map.novel_count, artifact.model.k);
}

fn ablate(w: &Work, suite: &str) -> Vec<Vec<String>> {
    std::fs::write(w.path("suite.json"), suite).unwrap();
    ok(&[
        "ablate",
        "--config",
        &w.s("small.json"),
        "--dataset",
        &w.s("data.jsonl"),
        "--suite",
        &w.s("suite.json"),
        "--out",
        &w.s("ablate.csv"),
    ]);
    let text = std::fs::read_to_string(w.path("ablate.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("variant,proposals_per_scene,alpha,beta,gamma,hier_weight,geometry,"));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn ablation_rows_follow_suite() {
    let w = Work::new();
    w.gen();
    let base = ablate(&w, r#"{"variants": []}"#);
    assert_eq!(base.len(), 1);
    assert_eq!(base[0][0], "\"base\"");

    let rows = ablate(&w, r#"{"variants": [{"name": "Euclidean", "geometry": "euclidean"}]}"#);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][6], "poincare");
    assert_eq!(rows[1][6], "euclidean");
    assert_eq!(rows[0][1..6], rows[1][1..6]);
    assert_eq!(rows[0][7..], base[0][7..]);
}

#[test]
fn errors_exit_nonzero() {
    let w = Work::new();
    std::fs::write(w.path("bad.jsonl"), "{\"not\": \"a scene\"}\n").unwrap();
    let out = bin(&["train", "--dataset", &w.s("bad.jsonl"), "--out", &w.s("p.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    w.gen();
    std::fs::write(w.path("bad_suite.json"), r#"{"variants": [{"momentum": 0.9}]}"#).unwrap();
    let out = bin(&["ablate", "--dataset", &w.s("data.jsonl"), "--suite", &w.s("bad_suite.json"), "--out", &w.s("a.csv")]);
    assert!(!out.status.success());

    let out = bin(&["gen", "--geometry", "spherical", "--out", &w.s("x.jsonl")]);
    assert!(!out.status.success());

    // Params trained on 32-dimensional features cannot embed 8-dimensional ones.
    w.train(&[]);
    std::fs::write(w.path("narrow.json"), r#"{"n_scenes": 4, "world": {"feature_dim": 8}}"#).unwrap();
    ok(&["gen", "--config", &w.s("narrow.json"), "--out", &w.s("narrow.jsonl")]);
    let out = bin(&["cluster", "--dataset", &w.s("narrow.jsonl"), "--params", &w.s("params.json"), "--out", &w.s("m.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
