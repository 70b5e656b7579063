//! End-to-end glue: dataset → encoder → clusters → labels → detections → report.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterModel, ElbowResult, LabelAssignment};
use crate::embedder::{self, EncoderParams, TrainConfig, TrainOutcome};
use crate::evalmod::{self, Detection, EvalReport, GroundTruth, SizeBins};
use crate::scene::{self, iou, CategoryTree, Scene, SceneConfig, Tier, WorldConfig};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Fixed cluster count. When unset and `k_grid` is empty, one cluster per category.
    pub k: Option<usize>,
    /// Candidate counts for elbow selection; takes precedence over `k`.
    pub k_grid: Vec<usize>,
    pub max_iter: usize,
    /// K-means++ restarts per fit; the lowest-inertia run is kept.
    pub n_init: usize,
    /// Ground-truth instances per category embedded as label anchors.
    pub anchors_per_label: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: None,
            k_grid: Vec::new(),
            max_iter: cluster::DEFAULT_MAX_ITER,
            n_init: cluster::DEFAULT_N_INIT,
            anchors_per_label: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Upper area bound of small objects; defaults to the canvas-scaled 32².
    pub small_max_area: Option<f64>,
    /// Upper area bound of medium objects; defaults to the canvas-scaled 96².
    pub medium_max_area: Option<f64>,
}

impl EvalConfig {
    pub fn size_bins(&self, canvas_width: f64) -> SizeBins {
        let d = SizeBins::for_canvas_width(canvas_width);
        SizeBins {
            small_max: self.small_max_area.unwrap_or(d.small_max),
            medium_max: self.medium_max_area.unwrap_or(d.medium_max),
        }
    }
}

/// Everything a run needs. Stage seeds are split from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub world: WorldConfig,
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub cluster: ClusterConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_scenes: 400,
            world: WorldConfig::default(),
            scene: SceneConfig::default(),
            train: TrainConfig::default(),
            cluster: ClusterConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Default world and scenes with a training budget that converges at this scale
    /// (lr 3e-3, 30 epochs). The 1e-4 default underfits a few thousand steps.
    pub fn benchmark() -> Self {
        let mut cfg = RunConfig::default();
        cfg.train.learning_rate = 3e-3;
        cfg.train.epochs = 30;
        cfg
    }

    pub fn world_seed(&self) -> u64 {
        seed::derive(self.seed, "world", 0)
    }

    pub fn dataset_seed(&self) -> u64 {
        seed::derive(self.seed, "dataset", 0)
    }

    pub fn cluster_seed(&self) -> u64 {
        seed::derive(self.seed, "cluster", 0)
    }

    /// Training config with its seed split from the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "train", 0),
            ..self.train.clone()
        }
    }
}

pub fn generate(config: &RunConfig) -> Result<(CategoryTree, Vec<Scene>)> {
    let world = scene::generate_world(&config.world, config.world_seed())?;
    let scenes = scene::generate_dataset(&world, &config.scene, config.n_scenes, config.dataset_seed())?;
    Ok((world, scenes))
}

/// Embeddings of every kept proposal, in scene order then kept order.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub points: Vec<Vec<f64>>,
    /// `(position of the scene in the dataset, proposal index within the scene)`.
    pub index: Vec<(usize, usize)>,
    /// Category of the matched ground-truth instance; `None` for background.
    pub labels: Vec<Option<usize>>,
}

pub fn embed_proposals(
    params: &EncoderParams,
    scenes: &[Scene],
    proposals_per_scene: usize,
    nms_threshold: f64,
) -> Result<Embedded> {
    type Row = ((usize, usize), Vec<f64>, Option<usize>);
    let per_scene: Vec<Vec<Row>> = scenes
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            scene::top_k_indices(s, proposals_per_scene, nms_threshold)
                .into_iter()
                .map(|pi| {
                    let p = &s.proposals[pi];
                    let z = params.embed(&p.feature_fg)?;
                    let label = s.matched_instance(p).map(|i| s.instances[i].category);
                    Ok(((si, pi), z, label))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = Embedded {
        points: Vec::new(),
        index: Vec::new(),
        labels: Vec::new(),
    };
    for (idx, z, l) in per_scene.into_iter().flatten() {
        out.index.push(idx);
        out.points.push(z);
        out.labels.push(l);
    }
    Ok(out)
}

/// Up to `per_label` embedded anchors per category: for each ground-truth instance, in
/// dataset order, the foreground embedding of its best-overlapping kept proposal.
pub fn label_anchors(
    scenes: &[Scene],
    embedded: &Embedded,
    per_label: usize,
) -> Result<BTreeMap<usize, Vec<Vec<f64>>>> {
    let mut by_scene: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &(si, _)) in embedded.index.iter().enumerate() {
        by_scene.entry(si).or_default().push(row);
    }
    let mut anchors: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (si, s) in scenes.iter().enumerate() {
        let rows = by_scene.get(&si).map(Vec::as_slice).unwrap_or(&[]);
        for inst in &s.instances {
            let slot = anchors.entry(inst.category).or_default();
            if slot.len() >= per_label {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for &row in rows {
                let v = iou(&inst.bbox, &s.proposals[embedded.index[row].1].bbox);
                if v >= 0.5 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((row, v));
                }
            }
            if let Some((row, _)) = best {
                slot.push(embedded.points[row].clone());
            }
        }
    }
    anchors.retain(|_, v| !v.is_empty());
    Ok(anchors)
}

/// Cluster model file: the model plus the proposal behind each assigned point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    #[serde(flatten)]
    pub model: ClusterModel,
    /// `[scene id, proposal index]` per point, aligned with `assignment`.
    pub proposals: Vec<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbow: Option<ElbowResult>,
}

pub fn cluster_embeddings(
    embedded: &Embedded,
    scenes: &[Scene],
    n_categories: usize,
    geometry: crate::hypmath::Geometry,
    config: &ClusterConfig,
    seed: u64,
) -> Result<ClusterArtifact> {
    let elbow = if config.k_grid.is_empty() {
        None
    } else {
        Some(cluster::elbow_select_k(
            &embedded.points,
            &config.k_grid,
            seed,
            config.max_iter,
            geometry,
            config.n_init,
        )?)
    };
    let k = match (&elbow, config.k) {
        (Some(e), _) => e.k,
        (None, Some(k)) => k,
        (None, None) => n_categories.max(1),
    };
    let model = cluster::kmeans_restarts(&embedded.points, k, seed, config.max_iter, geometry, config.n_init)?;
    let proposals = embedded
        .index
        .iter()
        .map(|&(si, pi)| [scenes[si].id, pi as u64])
        .collect();
    Ok(ClusterArtifact {
        model,
        proposals,
        elbow,
    })
}

pub fn ground_truths(scenes: &[Scene]) -> Vec<GroundTruth> {
    scenes
        .iter()
        .flat_map(|s| {
            s.instances.iter().map(|i| GroundTruth {
                scene: s.id,
                bbox: i.bbox,
                label: i.category,
            })
        })
        .collect()
}

/// One detection per clustered proposal whose cluster carries a label, scored by objectness.
pub fn detections(scenes: &[Scene], artifact: &ClusterArtifact, labels: &LabelAssignment) -> Result<Vec<Detection>> {
    let by_id: BTreeMap<u64, &Scene> = scenes.iter().map(|s| (s.id, s)).collect();
    let mut out = Vec::new();
    for (&[sid, pi], &c) in artifact.proposals.iter().zip(&artifact.model.assignment) {
        let Some(&label) = labels.labels.get(&c) else { continue };
        let s = by_id
            .get(&sid)
            .ok_or_else(|| Error::InvalidConfig(format!("model references unknown scene {sid}")))?;
        let p = s
            .proposals
            .get(pi as usize)
            .ok_or_else(|| Error::InvalidConfig(format!("model references missing proposal {pi} of scene {sid}")))?;
        out.push(Detection {
            scene: sid,
            bbox: p.bbox,
            label,
            confidence: p.objectness,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(flatten)]
    pub map: EvalReport,
    /// Purity over clustered proposals that match a ground-truth instance.
    pub purity: f64,
    pub purity_r: Option<f64>,
    pub purity_c: Option<f64>,
    pub purity_f: Option<f64>,
    pub k: usize,
}

impl Report {
    /// Flat `(column, value)` list for CSV output; absent splits are empty cells.
    pub fn columns(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            ("k", self.k.to_string()),
            ("purity", self.purity.to_string()),
            ("purity_r", opt(self.purity_r)),
            ("purity_c", opt(self.purity_c)),
            ("purity_f", opt(self.purity_f)),
            ("mAP", self.map.map.to_string()),
            ("mAP50", self.map.map50.to_string()),
            ("mAP75", self.map.map75.to_string()),
            ("mAP_r", opt(self.map.map_rare)),
            ("mAP_c", opt(self.map.map_common)),
            ("mAP_f", opt(self.map.map_frequent)),
            ("mAP_s", opt(self.map.map_small)),
            ("mAP_m", opt(self.map.map_medium)),
            ("mAP_l", opt(self.map.map_large)),
            ("novel_count", self.map.novel_count.to_string()),
        ]
    }

    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let header: Vec<&str> = cols.iter().map(|c| c.0).collect();
        let values: Vec<&str> = cols.iter().map(|c| c.1.as_str()).collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

fn size_bins(scenes: &[Scene], eval: &EvalConfig) -> SizeBins {
    eval.size_bins(scenes.first().map_or(640.0, |s| s.width))
}

fn purity_report(
    assignment: &[usize],
    point_labels: &[Option<usize>],
    cluster_labels: &BTreeMap<usize, usize>,
    tiers: &BTreeMap<usize, Tier>,
) -> Result<(f64, BTreeMap<Tier, Option<f64>>)> {
    let (a, l): (Vec<usize>, Vec<usize>) = assignment
        .iter()
        .zip(point_labels)
        .filter_map(|(&a, l)| l.map(|l| (a, l)))
        .unzip();
    if a.is_empty() {
        return Err(Error::Empty("ground-truth-labelled proposals"));
    }
    Ok((
        cluster::purity(&a, &l)?,
        cluster::split_purity(&a, &l, cluster_labels, tiers)?,
    ))
}

/// Scores a clustering against the ground truth of `scenes`.
pub fn evaluate(
    scenes: &[Scene],
    artifact: &ClusterArtifact,
    labels: &LabelAssignment,
    tiers: &BTreeMap<usize, Tier>,
    eval: &EvalConfig,
) -> Result<Report> {
    let by_id: BTreeMap<u64, &Scene> = scenes.iter().map(|s| (s.id, s)).collect();
    let point_labels: Vec<Option<usize>> = artifact
        .proposals
        .iter()
        .map(|&[sid, pi]| {
            let s = by_id
                .get(&sid)
                .ok_or_else(|| Error::InvalidConfig(format!("model references unknown scene {sid}")))?;
            let p = s
                .proposals
                .get(pi as usize)
                .ok_or_else(|| Error::InvalidConfig(format!("model references missing proposal {pi} of scene {sid}")))?;
            Ok(s.matched_instance(p).map(|i| s.instances[i].category))
        })
        .collect::<Result<_>>()?;
    let gts = ground_truths(scenes);
    let dets = detections(scenes, artifact, labels)?;
    let mut map = evalmod::map_summary(&dets, &gts, tiers, size_bins(scenes, eval))?;
    map.novel_count = labels.novel.len();
    let (purity, split) = purity_report(&artifact.model.assignment, &point_labels, &labels.labels, tiers)?;
    Ok(Report {
        map,
        purity,
        purity_r: split[&Tier::Rare],
        purity_c: split[&Tier::Common],
        purity_f: split[&Tier::Frequent],
        k: artifact.model.k,
    })
}

/// Sanity mode: the ground truth scored as its own detections, each label its own cluster.
pub fn evaluate_ground_truth(scenes: &[Scene], tiers: &BTreeMap<usize, Tier>, eval: &EvalConfig) -> Result<Report> {
    let gts = ground_truths(scenes);
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            scene: g.scene,
            bbox: g.bbox,
            label: g.label,
            confidence: 1.0,
        })
        .collect();
    let map = evalmod::map_summary(&dets, &gts, tiers, size_bins(scenes, eval))?;
    let labels: Vec<usize> = gts.iter().map(|g| g.label).collect();
    let identity: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, l)).collect();
    let point_labels: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    let (purity, split) = purity_report(&labels, &point_labels, &identity, tiers)?;
    Ok(Report {
        map,
        purity,
        purity_r: split[&Tier::Rare],
        purity_c: split[&Tier::Common],
        purity_f: split[&Tier::Frequent],
        k: identity.len(),
    })
}

/// Fraction of ground-truth parent/child proposal pairs (same scene, kept proposals whose
/// matched instances are parent and child) with the parent embedded closer to the origin.
pub fn hierarchy_order_fraction(scenes: &[Scene], embedded: &Embedded, geometry: crate::hypmath::Geometry) -> Option<f64> {
    let mut by_scene: BTreeMap<usize, Vec<(Option<usize>, f64)>> = BTreeMap::new();
    for (row, &(si, pi)) in embedded.index.iter().enumerate() {
        let s = &scenes[si];
        let inst = s.matched_instance(&s.proposals[pi]);
        by_scene
            .entry(si)
            .or_default()
            .push((inst, geometry.origin_distance(&embedded.points[row])));
    }
    let (mut good, mut total) = (0usize, 0usize);
    for (si, rows) in &by_scene {
        let s = &scenes[*si];
        for (pi, pr) in rows {
            let Some(pi) = pi else { continue };
            for (ci, cr) in rows {
                let Some(ci) = ci else { continue };
                if s.instances[*ci].parent == Some(*pi) {
                    total += 1;
                    good += usize::from(pr < cr);
                }
            }
        }
    }
    (total > 0).then(|| good as f64 / total as f64)
}

/// Distinct ground-truth categories across `scenes`; the default cluster count.
pub fn category_count(scenes: &[Scene]) -> usize {
    let cats: BTreeSet<usize> = scenes.iter().flat_map(|s| s.instances.iter().map(|i| i.category)).collect();
    cats.len()
}

pub struct RunOutcome {
    pub train: TrainOutcome,
    pub embedded: Embedded,
    pub artifact: ClusterArtifact,
    pub labels: LabelAssignment,
    pub report: Report,
    pub hierarchy_fraction: Option<f64>,
}

/// Trains, clusters, labels and evaluates on `scenes`.
pub fn run(world: &CategoryTree, scenes: &[Scene], config: &RunConfig) -> Result<RunOutcome> {
    let train_cfg = config.train_config();
    let train = embedder::train(scenes, &train_cfg)?;
    let embedded = embed_proposals(&train.params, scenes, train_cfg.proposals_per_scene, train_cfg.nms_threshold)?;
    let artifact = cluster_embeddings(
        &embedded,
        scenes,
        category_count(scenes),
        train_cfg.geometry,
        &config.cluster,
        config.cluster_seed(),
    )?;
    let anchors = label_anchors(scenes, &embedded, config.cluster.anchors_per_label)?;
    let labels = cluster::assign_labels(&artifact.model, &embedded.points, &anchors)?;
    let report = evaluate(scenes, &artifact, &labels, &world.tier_map(), &config.eval)?;
    let hierarchy_fraction = hierarchy_order_fraction(scenes, &embedded, train_cfg.geometry);
    Ok(RunOutcome {
        train,
        embedded,
        artifact,
        labels,
        report,
        hierarchy_fraction,
    })
}
