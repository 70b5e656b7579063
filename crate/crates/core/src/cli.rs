//! Command-line harness: `gen | train | cluster | eval | ablate`.
//!
//! A JSON config file (`--config`) fills a [`RunConfig`]; individual flags override its fields.
//! Every command writes its outputs deterministically for fixed inputs and seed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cluster::{self, LabelAssignment};
use crate::embedder::{self, EncoderParams};
use crate::evalmod;
use crate::hypmath::Geometry;
use crate::pipeline::{self, ClusterArtifact, RunConfig};
use crate::scene::{self, CategoryTree, Scene, Tier};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "hyperdisc", version, about = "Hyperbolic long-tail category discovery on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_scenes: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated candidate cluster counts for elbow selection.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_geometry)]
    pub geometry: Option<Geometry>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub proposals_per_scene: Option<usize>,
}

fn parse_geometry(s: &str) -> std::result::Result<Geometry, String> {
    match s.to_ascii_lowercase().as_str() {
        "poincare" => Ok(Geometry::Poincare),
        "euclidean" => Ok(Geometry::Euclidean),
        _ => Err(format!("unknown geometry {s:?} (expected poincare or euclidean)")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world and a scene dataset (JSON Lines) with a world sidecar.
    Gen {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the encoder; writes params JSON and a loss-trace CSV sidecar.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed and cluster proposals, then label clusters; writes the model and a labels sidecar.
    Cluster {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a clustering; writes a JSON report and a CSV sidecar.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Cluster model; required unless --gt-detections is set.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Label assignment; defaults to the model's labels sidecar.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// World file for tiers; defaults to the dataset's world sidecar.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Score the ground truth as its own detections.
        #[arg(long)]
        gt_detections: bool,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the base config plus each ablation variant; writes one CSV row per run.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Suite JSON; defaults to the standard table.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// World file for tiers; defaults to the dataset's world sidecar.
        #[arg(long)]
        world: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
}

/// World sidecar: the category tree and its tier map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub tree: CategoryTree,
    pub tiers: BTreeMap<usize, Tier>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c: RunConfig = match &self.config {
            Some(p) => serde_json::from_str(&read_text(p)?)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.n_scenes {
            c.n_scenes = v;
        }
        if let Some(v) = self.k {
            c.cluster.k = Some(v);
        }
        if let Some(v) = &self.k_grid {
            c.cluster.k_grid = v.clone();
        }
        if let Some(v) = self.geometry {
            c.train.geometry = v;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.alpha {
            c.train.alpha = v;
        }
        if let Some(v) = self.beta {
            c.train.beta = v;
        }
        if let Some(v) = self.gamma {
            c.train.gamma = v;
        }
        if let Some(v) = self.proposals_per_scene {
            c.train.proposals_per_scene = v;
        }
        Ok(c)
    }
}

/// `dir/stem.suffix` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_context(path, e))
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_context(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn load_dataset(path: &Path) -> Result<Vec<Scene>> {
    let f = File::open(path).map_err(|e| io_context(path, e))?;
    scene::read_scenes(BufReader::new(f), &path.display().to_string())
}

fn load_world(dataset: &Path, world: Option<&PathBuf>) -> Result<WorldFile> {
    let path = world.cloned().unwrap_or_else(|| sidecar(dataset, "world.json"));
    read_json(&path)
}

pub fn cmd_gen(config: &RunConfig, out: &Path) -> Result<()> {
    let (world, scenes) = pipeline::generate(config)?;
    let mut w = create(out)?;
    scene::write_scenes(&mut w, &scenes)?;
    w.flush()?;
    let tiers = world.tier_map();
    write_json(&sidecar(out, "world.json"), &WorldFile { tree: world, tiers })
}

pub fn cmd_train(dataset: &Path, config: &RunConfig, out: &Path) -> Result<()> {
    let scenes = load_dataset(dataset)?;
    let outcome = embedder::train(&scenes, &config.train_config())?;
    write_json(out, &outcome.params)?;
    let mut w = create(&sidecar(out, "loss.csv"))?;
    embedder::write_loss_csv(&mut w, &outcome.trace)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_cluster(dataset: &Path, params: &Path, config: &RunConfig, out: &Path) -> Result<()> {
    let scenes = load_dataset(dataset)?;
    let params: EncoderParams = read_json(params)?;
    params.validate()?;
    if let Some(p) = scenes.iter().flat_map(|s| s.proposals.first()).next() {
        if p.feature_fg.len() != params.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: params.input_dim(),
                got: p.feature_fg.len(),
            });
        }
    }
    let train = &config.train;
    let embedded = pipeline::embed_proposals(&params, &scenes, train.proposals_per_scene, train.nms_threshold)?;
    let artifact = pipeline::cluster_embeddings(
        &embedded,
        &scenes,
        pipeline::category_count(&scenes),
        params.geometry,
        &config.cluster,
        config.cluster_seed(),
    )?;
    let anchors = pipeline::label_anchors(&scenes, &embedded, config.cluster.anchors_per_label)?;
    let labels = cluster::assign_labels(&artifact.model, &embedded.points, &anchors)?;
    write_json(out, &artifact)?;
    write_json(&sidecar(out, "labels.json"), &labels)
}

pub fn cmd_eval(
    dataset: &Path,
    model: Option<&Path>,
    labels: Option<&Path>,
    world: Option<&PathBuf>,
    gt_detections: bool,
    config: &RunConfig,
    out: &Path,
) -> Result<()> {
    let scenes = load_dataset(dataset)?;
    let world = load_world(dataset, world)?;
    let report = if gt_detections {
        pipeline::evaluate_ground_truth(&scenes, &world.tiers, &config.eval)?
    } else {
        let model = model.ok_or_else(|| Error::InvalidConfig("eval needs --model or --gt-detections".into()))?;
        let artifact: ClusterArtifact = read_json(model)?;
        let labels_path = labels.map(Path::to_path_buf).unwrap_or_else(|| sidecar(model, "labels.json"));
        let labels: LabelAssignment = read_json(&labels_path)?;
        pipeline::evaluate(&scenes, &artifact, &labels, &world.tiers, &config.eval)?
    };
    write_json(out, &report)?;
    let mut w = create(&sidecar(out, "csv"))?;
    w.write_all(report.to_csv().as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn cmd_ablate(
    dataset: &Path,
    suite: Option<&Path>,
    world: Option<&PathBuf>,
    config: &RunConfig,
    out: &Path,
) -> Result<()> {
    let suite = match suite {
        Some(p) => evalmod::parse_suite(&read_text(p)?)?,
        None => evalmod::default_suite(),
    };
    let scenes = load_dataset(dataset)?;
    let world = load_world(dataset, world)?;
    let rows = evalmod::run_ablation(&world.tree, &scenes, config, &suite)?;
    let mut w = create(out)?;
    evalmod::write_ablation_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { overrides, out } => cmd_gen(&overrides.resolve()?, &out),
        Command::Train {
            dataset,
            overrides,
            out,
        } => cmd_train(&dataset, &overrides.resolve()?, &out),
        Command::Cluster {
            dataset,
            params,
            overrides,
            out,
        } => cmd_cluster(&dataset, &params, &overrides.resolve()?, &out),
        Command::Eval {
            dataset,
            model,
            labels,
            world,
            gt_detections,
            overrides,
            out,
        } => cmd_eval(
            &dataset,
            model.as_deref(),
            labels.as_deref(),
            world.as_ref(),
            gt_detections,
            &overrides.resolve()?,
            &out,
        ),
        Command::Ablate {
            dataset,
            suite,
            world,
            overrides,
            out,
        } => cmd_ablate(&dataset, suite.as_deref(), world.as_ref(), &overrides.resolve()?, &out),
    }
}
