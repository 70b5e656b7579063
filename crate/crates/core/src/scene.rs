//! Synthetic stand-in for a class-agnostic mask-proposal network.
//!
//! A [`CategoryTree`] holds a category hierarchy whose leaves follow a Zipf frequency law
//! and whose prototypes drift by a bounded perturbation from parent to child. Scenes place
//! top-level objects on a virtual canvas with their sub-category instances nested inside,
//! then emit jittered copies of every ground-truth box plus background distractors. Each
//! proposal carries full-box, foreground and background feature vectors.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.as_array().iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("bounding box"));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidConfig(format!("degenerate box {:?}", b.as_array())));
        }
        Ok(b)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Fraction of `self` covered by `outer`.
    pub fn contained_fraction(&self, outer: &BoundingBox) -> f64 {
        self.intersection_area(outer) / self.area()
    }

    pub fn within_canvas(&self, height: f64, width: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }
}

/// Intersection over union; 0 for disjoint boxes.
impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        BoundingBox::from_array(a)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Binary mask on a fixed G×G grid laid over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub bbox: BoundingBox,
    resolution: usize,
    bits: Vec<bool>,
}

impl MaskGrid {
    pub fn new(bbox: BoundingBox, resolution: usize, bits: Vec<bool>) -> Result<Self> {
        if resolution == 0 || bits.len() != resolution * resolution {
            return Err(Error::InvalidConfig(format!(
                "mask has {} bits, expected {resolution}x{resolution}",
                bits.len()
            )));
        }
        if !bits.iter().any(|b| *b) {
            return Err(Error::InvalidConfig("mask has no set bits".into()));
        }
        Ok(MaskGrid {
            bbox,
            resolution,
            bits,
        })
    }

    /// Axis-aligned ellipse centred in the box with radii scaled by `fill` ∈ (0, 1].
    pub fn ellipse(bbox: BoundingBox, resolution: usize, fill: f64) -> Self {
        let g = resolution.max(1);
        let r = 0.5 * fill.clamp(1e-3, 1.0);
        let mut bits = vec![false; g * g];
        for row in 0..g {
            for col in 0..g {
                let y = (row as f64 + 0.5) / g as f64 - 0.5;
                let x = (col as f64 + 0.5) / g as f64 - 0.5;
                bits[row * g + col] = (x / r).powi(2) + (y / r).powi(2) <= 1.0;
            }
        }
        // Very small fills may miss every cell centre.
        if !bits.iter().any(|b| *b) {
            bits[(g / 2) * g + g / 2] = true;
        }
        MaskGrid {
            bbox,
            resolution: g,
            bits,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn area_fraction(&self) -> f64 {
        self.bits.iter().filter(|b| **b).count() as f64 / self.bits.len() as f64
    }

    /// Row-major run lengths, alternating unset/set and starting with an unset run
    /// (which may be zero).
    pub fn to_rle(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.bits {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(bbox: BoundingBox, counts: &[u32]) -> Result<Self> {
        let total: u64 = counts.iter().map(|c| u64::from(*c)).sum();
        let g = (total as f64).sqrt().round() as usize;
        if (g * g) as u64 != total {
            return Err(Error::InvalidConfig(format!("rle total {total} is not a square")));
        }
        let mut bits = Vec::with_capacity(g * g);
        for (i, &c) in counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        MaskGrid::new(bbox, g, bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub mask: MaskGrid,
    pub objectness: f64,
    pub feature_full: Vec<f64>,
    pub feature_fg: Vec<f64>,
    pub feature_bg: Vec<f64>,
}

/// Keeps the highest-objectness box, drops every box overlapping it with IoU above
/// `threshold`, and repeats. Returns kept indices in descending objectness, ties broken
/// by ascending index.
pub fn nms_indices(proposals: &[Proposal], threshold: f64) -> Vec<usize> {
    let order = objectness_order(proposals);
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou(&proposals[k].bbox, &proposals[i].bbox) <= threshold)
        {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(proposals: &[Proposal], threshold: f64) -> Vec<Proposal> {
    nms_indices(proposals, threshold)
        .into_iter()
        .map(|i| proposals[i].clone())
        .collect()
}

fn objectness_order(proposals: &[Proposal]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .objectness
            .total_cmp(&proposals[a].objectness)
            .then(a.cmp(&b))
    });
    order
}

/// NMS followed by the `k` highest-objectness survivors (indices into `scene.proposals`).
pub fn top_k_indices(scene: &Scene, k: usize, nms_threshold: f64) -> Vec<usize> {
    let mut kept = nms_indices(&scene.proposals, nms_threshold);
    kept.truncate(k);
    kept
}

pub fn top_k_proposals(scene: &Scene, k: usize, nms_threshold: f64) -> Vec<Proposal> {
    top_k_indices(scene, k, nms_threshold)
        .into_iter()
        .map(|i| scene.proposals[i].clone())
        .collect()
}

/// Frequency tier of a category, mirroring rare/common/frequent splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Rare,
    Common,
    Frequent,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Rare, Tier::Common, Tier::Frequent];

    /// Tier from a frequency weight relative to the most frequent leaf.
    pub fn from_relative_frequency(rel: f64) -> Tier {
        if rel >= 0.25 {
            Tier::Frequent
        } else if rel >= 0.08 {
            Tier::Common
        } else {
            Tier::Rare
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: usize,
    pub name: String,
    /// `None` only for the sentinel root.
    pub parent: Option<usize>,
    pub depth: usize,
    /// Probability that a sampled object involves this category (leaves sum to 1).
    pub frequency: f64,
    pub tier: Tier,
    pub prototype: Vec<f64>,
}

/// Category hierarchy. Node 0 is the sentinel root; node ids equal their indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTree {
    pub nodes: Vec<Category>,
    pub feature_dim: usize,
}

pub const ROOT: usize = 0;

impl CategoryTree {
    pub fn children(&self, id: usize) -> impl Iterator<Item = &Category> + '_ {
        self.nodes.iter().filter(move |c| c.parent == Some(id))
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.children(id).next().is_none()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (1..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    /// Ancestors of `id` from the top level down to `id` itself, excluding the root.
    pub fn chain(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            if p == ROOT {
                break;
            }
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn tier(&self, id: usize) -> Tier {
        self.nodes[id].tier
    }

    /// Tier of every non-root category.
    pub fn tier_map(&self) -> std::collections::BTreeMap<usize, Tier> {
        self.nodes[1..].iter().map(|c| (c.id, c.tier)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Children per node at each depth; `[5, 5]` is 5 top-level categories with 5 sub-categories each.
    pub branching: Vec<usize>,
    pub feature_dim: usize,
    pub zipf_exponent: f64,
    /// Bound on the parent-to-child prototype perturbation.
    pub rho_child: f64,
    /// Per-coordinate standard deviation of top-level prototypes.
    pub prototype_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            branching: vec![5, 5],
            feature_dim: 32,
            zipf_exponent: 1.0,
            rho_child: 0.5,
            prototype_scale: 1.0,
        }
    }
}

pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<CategoryTree> {
    if config.branching.is_empty() || config.branching.contains(&0) {
        return Err(Error::InvalidConfig("world needs at least one category per depth".into()));
    }
    if config.feature_dim == 0 {
        return Err(Error::InvalidConfig("feature dimension must be positive".into()));
    }
    if !(config.rho_child >= 0.0 && config.zipf_exponent >= 0.0 && config.prototype_scale > 0.0) {
        return Err(Error::InvalidConfig("world scales must be nonnegative".into()));
    }
    let mut rng = seed::rng(seed, "world", 0);
    let f = config.feature_dim;
    let mut nodes = vec![Category {
        id: ROOT,
        name: "root".into(),
        parent: None,
        depth: 0,
        frequency: 1.0,
        tier: Tier::Frequent,
        prototype: vec![0.0; f],
    }];
    let mut frontier = vec![ROOT];
    for (level, &fanout) in config.branching.iter().enumerate() {
        let mut next = Vec::with_capacity(frontier.len() * fanout);
        for &parent in &frontier {
            for j in 0..fanout {
                let id = nodes.len();
                let prototype = if parent == ROOT {
                    (0..f)
                        .map(|_| config.prototype_scale * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                } else {
                    perturb(&nodes[parent].prototype, config.rho_child, &mut rng)
                };
                let name = if parent == ROOT {
                    format!("c{j}")
                } else {
                    format!("{}.{j}", nodes[parent].name)
                };
                nodes.push(Category {
                    id,
                    name,
                    parent: Some(parent),
                    depth: level + 1,
                    frequency: 0.0,
                    tier: Tier::Frequent,
                    prototype,
                });
                next.push(id);
            }
        }
        frontier = next;
    }

    // Zipf ranks over leaves in a seeded order so the tail is spread across the tree.
    let mut leaves = frontier;
    leaves.shuffle(&mut rng);
    let raw: Vec<f64> = (1..=leaves.len())
        .map(|r| (r as f64).powf(-config.zipf_exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    for (&leaf, w) in leaves.iter().zip(&raw) {
        let p = w / total;
        let mut cur = leaf;
        loop {
            if cur == ROOT {
                break;
            }
            nodes[cur].frequency += p;
            cur = nodes[cur].parent.unwrap_or(ROOT);
        }
    }
    let max_leaf = raw[0] / total;
    for node in nodes.iter_mut().skip(1) {
        node.tier = Tier::from_relative_frequency(node.frequency / max_leaf);
    }
    Ok(CategoryTree {
        nodes,
        feature_dim: f,
    })
}

// parent + δ with a uniformly random direction and |δ| ∈ [ρ/2, ρ].
fn perturb(parent: &[f64], rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..parent.len()).map(|_| rng.sample(StandardNormal)).collect();
    let n = crate::hypmath::norm(&dir).max(1e-12);
    let len = rho * rng.random_range(0.5..=1.0);
    parent
        .iter()
        .zip(&dir)
        .map(|(p, d)| p + len * d / n)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: f64,
    pub width: f64,
    /// Top-level objects attempted per scene (each with its nested sub-category chain).
    pub objects_per_scene: usize,
    /// Jittered proposals emitted per ground-truth instance.
    pub jitter_copies: usize,
    /// Box jitter standard deviation as a fraction of box size.
    pub sigma_jitter: f64,
    /// Background boxes attempted per scene; each avoids every object.
    pub distractors: usize,
    pub sigma_feat: f64,
    /// Per-coordinate scale of the scene-level background feature.
    pub sigma_bg: f64,
    /// Upper bound on child-to-parent box area ratio.
    pub sigma_child: f64,
    pub mask_resolution: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 256.0,
            width: 256.0,
            objects_per_scene: 3,
            jitter_copies: 4,
            sigma_jitter: 0.05,
            distractors: 30,
            sigma_feat: 0.1,
            sigma_bg: 1.0,
            sigma_child: 0.25,
            mask_resolution: 28,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub category: usize,
    pub bbox: BoundingBox,
    pub mask: MaskGrid,
    /// Index of the enclosing instance within the same scene.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub height: f64,
    pub width: f64,
    pub instances: Vec<Instance>,
    pub proposals: Vec<Proposal>,
}

impl Scene {
    /// Ground-truth instance a proposal localizes: highest IoU ≥ 0.5, ties to the lower index.
    pub fn matched_instance(&self, proposal: &Proposal) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, inst) in self.instances.iter().enumerate() {
            let v = iou(&inst.bbox, &proposal.bbox);
            if v >= 0.5 && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

fn sample_box_in(
    rng: &mut ChaCha8Rng,
    outer: (f64, f64, f64, f64),
    w_frac: (f64, f64),
    h_frac: (f64, f64),
) -> BoundingBox {
    let (ox, oy, ow, oh) = outer;
    let w = ow * rng.random_range(w_frac.0..=w_frac.1);
    let h = oh * rng.random_range(h_frac.0..=h_frac.1);
    let x = ox + rng.random_range(0.0..=(ow - w));
    let y = oy + rng.random_range(0.0..=(oh - h));
    BoundingBox {
        x_min: x,
        y_min: y,
        x_max: x + w,
        y_max: y + h,
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn jitter(
    rng: &mut ChaCha8Rng,
    b: &BoundingBox,
    sigma: f64,
    height: f64,
    width: f64,
) -> BoundingBox {
    if sigma <= 0.0 {
        return *b;
    }
    let nw = Normal::new(0.0, sigma * b.width()).expect("finite sigma");
    let nh = Normal::new(0.0, sigma * b.height()).expect("finite sigma");
    let mut x0 = (b.x_min + nw.sample(rng)).clamp(0.0, width - 1.0);
    let mut y0 = (b.y_min + nh.sample(rng)).clamp(0.0, height - 1.0);
    let mut x1 = (b.x_max + nw.sample(rng)).clamp(0.0, width);
    let mut y1 = (b.y_max + nh.sample(rng)).clamp(0.0, height);
    if x1 - x0 < 1.0 {
        x0 = x0.min(width - 1.0);
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1.0 {
        y0 = y0.min(height - 1.0);
        y1 = y0 + 1.0;
    }
    BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
    }
}

pub fn generate_scene(world: &CategoryTree, config: &SceneConfig, seed: u64) -> Result<Scene> {
    let leaves = world.leaves();
    if leaves.is_empty() {
        return Err(Error::InvalidConfig("world has no leaf categories".into()));
    }
    let mut rng = seed::rng(seed, "scene", 0);
    let f = world.feature_dim;
    let (h, w) = (config.height, config.width);
    let g = config.mask_resolution.max(1);
    let background = gaussian(&mut rng, config.sigma_bg, f);
    let child_side = config.sigma_child.clamp(1e-6, 1.0).sqrt();

    let mut instances: Vec<Instance> = Vec::new();
    let mut fills: Vec<f64> = Vec::new();
    let mut tops: Vec<BoundingBox> = Vec::new();
    let weights: Vec<f64> = leaves.iter().map(|&l| world.nodes[l].frequency).collect();
    let leaf_dist = rand::distr::weighted::WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidConfig(format!("leaf frequencies: {e}")))?;

    for _ in 0..config.objects_per_scene {
        let leaf = leaves[leaf_dist.sample(&mut rng)];
        let chain = world.chain(leaf);
        // Top-level objects never overlap, so nesting is the only containment in a scene.
        let mut top = None;
        for _ in 0..100 {
            let b = sample_box_in(&mut rng, (0.0, 0.0, w, h), (0.25, 0.5), (0.25, 0.5));
            if tops.iter().all(|t| t.intersection_area(&b) == 0.0) {
                top = Some(b);
                break;
            }
        }
        let Some(top) = top else { continue };
        tops.push(top);
        let mut parent: Option<usize> = None;
        let mut outer = top;
        for (depth, &cat) in chain.iter().enumerate() {
            let bbox = if depth == 0 {
                top
            } else {
                let lo = 0.6 * child_side;
                sample_box_in(
                    &mut rng,
                    (outer.x_min, outer.y_min, outer.width(), outer.height()),
                    (lo, child_side),
                    (lo, child_side),
                )
            };
            let fill = rng.random_range(0.7..=1.0);
            instances.push(Instance {
                category: cat,
                bbox,
                mask: MaskGrid::ellipse(bbox, g, fill),
                parent,
            });
            fills.push(fill);
            parent = Some(instances.len() - 1);
            outer = bbox;
        }
    }

    let mut proposals = Vec::new();
    for (inst, &fill) in instances.iter().zip(&fills) {
        let proto = &world.nodes[inst.category].prototype;
        for _ in 0..config.jitter_copies {
            let bbox = jitter(&mut rng, &inst.bbox, config.sigma_jitter, h, w);
            let overlap = iou(&bbox, &inst.bbox);
            let objectness = (0.5 + 0.45 * overlap * rng.random_range(0.5..=1.0)).clamp(0.0, 1.0);
            let mask = MaskGrid::ellipse(bbox, g, fill);
            let fg = add(proto, &gaussian(&mut rng, config.sigma_feat, f));
            let bg = add(&background, &gaussian(&mut rng, config.sigma_feat, f));
            proposals.push(make_proposal(bbox, mask, objectness, fg, bg));
        }
    }
    // Distractors cover background only; one that finds no free spot is dropped.
    for _ in 0..config.distractors {
        let mut spot = None;
        for _ in 0..50 {
            let b = sample_box_in(&mut rng, (0.0, 0.0, w, h), (0.05, 0.4), (0.05, 0.4));
            if tops.iter().all(|t| t.intersection_area(&b) == 0.0) {
                spot = Some(b);
                break;
            }
        }
        let Some(bbox) = spot else { continue };
        let objectness = rng.random_range(0.05..=0.75);
        let mask = MaskGrid::ellipse(bbox, g, rng.random_range(0.5..=1.0));
        let fg = add(&background, &gaussian(&mut rng, config.sigma_feat, f));
        let bg = add(&background, &gaussian(&mut rng, config.sigma_feat, f));
        proposals.push(make_proposal(bbox, mask, objectness, fg, bg));
    }

    Ok(Scene {
        id: seed,
        height: h,
        width: w,
        instances,
        proposals,
    })
}

// Full-box feature mixes foreground and background by the mask's area fraction.
fn make_proposal(
    bbox: BoundingBox,
    mask: MaskGrid,
    objectness: f64,
    fg: Vec<f64>,
    bg: Vec<f64>,
) -> Proposal {
    let m = mask.area_fraction();
    let full = fg.iter().zip(&bg).map(|(a, b)| m * a + (1.0 - m) * b).collect();
    Proposal {
        bbox,
        mask,
        objectness,
        feature_full: full,
        feature_fg: fg,
        feature_bg: bg,
    }
}

/// Scenes for a dataset: scene `i` uses a seed split from `root_seed`.
pub fn generate_dataset(
    world: &CategoryTree,
    config: &SceneConfig,
    n_scenes: usize,
    root_seed: u64,
) -> Result<Vec<Scene>> {
    (0..n_scenes)
        .map(|i| {
            let mut s = generate_scene(world, config, seed::derive(root_seed, "scene", i as u64))?;
            s.id = i as u64;
            Ok(s)
        })
        .collect()
}

// ---- JSON Lines wire format ----

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    cat: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    mask_rle: Vec<u32>,
    parent: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProposalRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    mask_rle: Vec<u32>,
    objectness: f64,
    f_full: Vec<f64>,
    f_fg: Vec<f64>,
    f_bg: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    id: u64,
    canvas: [f64; 2],
    instances: Vec<InstanceRecord>,
    proposals: Vec<ProposalRecord>,
}

impl From<&Scene> for SceneRecord {
    fn from(s: &Scene) -> Self {
        SceneRecord {
            id: s.id,
            canvas: [s.height, s.width],
            instances: s
                .instances
                .iter()
                .map(|i| InstanceRecord {
                    cat: i.category,
                    bbox: i.bbox.as_array(),
                    mask_rle: i.mask.to_rle(),
                    parent: i.parent,
                })
                .collect(),
            proposals: s
                .proposals
                .iter()
                .map(|p| ProposalRecord {
                    bbox: p.bbox.as_array(),
                    mask_rle: p.mask.to_rle(),
                    objectness: p.objectness,
                    f_full: p.feature_full.clone(),
                    f_fg: p.feature_fg.clone(),
                    f_bg: p.feature_bg.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneRecord> for Scene {
    type Error = Error;

    fn try_from(r: SceneRecord) -> Result<Self> {
        let instances = r
            .instances
            .into_iter()
            .map(|i| {
                let bbox = BoundingBox::from_array(i.bbox)?;
                Ok(Instance {
                    category: i.cat,
                    bbox,
                    mask: MaskGrid::from_rle(bbox, &i.mask_rle)?,
                    parent: i.parent,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let proposals = r
            .proposals
            .into_iter()
            .map(|p| {
                let bbox = BoundingBox::from_array(p.bbox)?;
                if p.f_full.len() != p.f_fg.len() || p.f_bg.len() != p.f_fg.len() {
                    return Err(Error::DimensionMismatch {
                        expected: p.f_fg.len(),
                        got: p.f_full.len().max(p.f_bg.len()),
                    });
                }
                if !(0.0..=1.0).contains(&p.objectness) {
                    return Err(Error::InvalidConfig(format!(
                        "objectness {} outside [0, 1]",
                        p.objectness
                    )));
                }
                Ok(Proposal {
                    bbox,
                    mask: MaskGrid::from_rle(bbox, &p.mask_rle)?,
                    objectness: p.objectness,
                    feature_full: p.f_full,
                    feature_fg: p.f_fg,
                    feature_bg: p.f_bg,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            id: r.id,
            height: r.canvas[0],
            width: r.canvas[1],
            instances,
            proposals,
        })
    }
}

pub fn scene_to_json_line(scene: &Scene) -> Result<String> {
    Ok(serde_json::to_string(&SceneRecord::from(scene))?)
}

pub fn scene_from_json_line(line: &str) -> Result<Scene> {
    let record: SceneRecord = serde_json::from_str(line)?;
    Scene::try_from(record)
}

pub fn write_scenes<W: Write>(mut out: W, scenes: &[Scene]) -> Result<()> {
    for s in scenes {
        writeln!(out, "{}", scene_to_json_line(s)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads JSON Lines scenes; `origin` names the source in error messages.
pub fn read_scenes<R: BufRead>(input: R, origin: &str) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene = scene_from_json_line(&line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}
