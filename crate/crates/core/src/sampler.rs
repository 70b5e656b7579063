//! Triplet and pair sampling over the kept proposals of a scene.

use rand::seq::index;
use rand::Rng;

use crate::scene::{iou, Proposal};
use crate::seed;

/// IoU a positive must reach for the object triplet loss.
pub const TAU_POS: f64 = 0.4;
/// Negatives drawn per anchor.
pub const N_NEG: usize = 3;
/// Largest child-to-parent area ratio for a hierarchical pair.
pub const SIGMA_HIER: f64 = 0.3;
/// Smallest fraction of the child box that must lie inside the parent box.
pub const KAPPA_CONTAIN: f64 = 0.9;

/// Full-box anchor, foreground positive and background negative of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTriplet {
    pub anchor_full: Vec<f64>,
    pub positive_fg: Vec<f64>,
    pub negative_bg: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeSource {
    SameScene(usize),
    /// Index into the `others` batch slice, then into that scene's proposals.
    OtherScene { scene: usize, proposal: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTriplet {
    pub anchor_fg: Vec<f64>,
    pub positive_fg: Vec<f64>,
    pub negative_fg: Vec<f64>,
    pub anchor: usize,
    pub positive: usize,
    pub negative: NegativeSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierPair {
    pub parent_fg: Vec<f64>,
    pub child_fg: Vec<f64>,
    pub parent: usize,
    pub child: usize,
}

/// One mask triplet per proposal, in order.
pub fn sample_mask_triplets(proposals: &[Proposal]) -> Vec<MaskTriplet> {
    proposals
        .iter()
        .map(|p| MaskTriplet {
            anchor_full: p.feature_full.clone(),
            positive_fg: p.feature_fg.clone(),
            negative_bg: p.feature_bg.clone(),
        })
        .collect()
}

/// For every anchor with an overlapping proposal (IoU ≥ `tau_pos`), picks one positive
/// uniformly and `n_neg` negatives uniformly from the non-overlapping proposals of the same
/// scene together with every proposal of the `others` scenes in the batch. Negatives are
/// drawn without replacement when the pool is large enough.
pub fn sample_object_triplets(
    proposals: &[Proposal],
    others: &[&[Proposal]],
    n_neg: usize,
    tau_pos: f64,
    rng_seed: u64,
) -> Vec<ObjectTriplet> {
    let mut rng = seed::rng(rng_seed, "object_triplets", 0);
    let other_total: usize = others.iter().map(|o| o.len()).sum();
    let mut out = Vec::new();
    if n_neg == 0 {
        return out;
    }
    for (a, anchor) in proposals.iter().enumerate() {
        let mut positives = Vec::new();
        let mut same_negatives = Vec::new();
        for (j, p) in proposals.iter().enumerate() {
            if j == a {
                continue;
            }
            let v = iou(&anchor.bbox, &p.bbox);
            if v >= tau_pos {
                positives.push(j);
            } else if v == 0.0 {
                same_negatives.push(j);
            }
        }
        let pool = same_negatives.len() + other_total;
        if positives.is_empty() || pool == 0 {
            continue;
        }
        let pos = positives[rng.random_range(0..positives.len())];
        let picks: Vec<usize> = if pool >= n_neg {
            index::sample(&mut rng, pool, n_neg).into_vec()
        } else {
            (0..n_neg).map(|_| rng.random_range(0..pool)).collect()
        };
        for k in picks {
            let (negative, feature) = if k < same_negatives.len() {
                let j = same_negatives[k];
                (NegativeSource::SameScene(j), &proposals[j].feature_fg)
            } else {
                let (scene, proposal) = locate(others, k - same_negatives.len());
                (
                    NegativeSource::OtherScene { scene, proposal },
                    &others[scene][proposal].feature_fg,
                )
            };
            out.push(ObjectTriplet {
                anchor_fg: anchor.feature_fg.clone(),
                positive_fg: proposals[pos].feature_fg.clone(),
                negative_fg: feature.clone(),
                anchor: a,
                positive: pos,
                negative,
            });
        }
    }
    out
}

fn locate(others: &[&[Proposal]], mut k: usize) -> (usize, usize) {
    for (s, o) in others.iter().enumerate() {
        if k < o.len() {
            return (s, k);
        }
        k -= o.len();
    }
    unreachable!("negative index beyond the batch pool")
}

/// True when `child` sits inside `parent` (≥ `kappa_contain` of its area) and is at most
/// `sigma_hier` times its size.
pub fn is_hier_pair(parent: &Proposal, child: &Proposal, sigma_hier: f64, kappa_contain: f64) -> bool {
    child.bbox.contained_fraction(&parent.bbox) >= kappa_contain
        && child.bbox.area() <= sigma_hier * parent.bbox.area()
}

/// Every (parent, child) combination satisfying [`is_hier_pair`], ordered by parent
/// index then child index.
pub fn sample_hier_pairs(proposals: &[Proposal], sigma_hier: f64, kappa_contain: f64) -> Vec<HierPair> {
    let mut out = Vec::new();
    for (a, parent) in proposals.iter().enumerate() {
        for (c, child) in proposals.iter().enumerate() {
            if a != c && is_hier_pair(parent, child, sigma_hier, kappa_contain) {
                out.push(HierPair {
                    parent_fg: parent.feature_fg.clone(),
                    child_fg: child.feature_fg.clone(),
                    parent: a,
                    child: c,
                });
            }
        }
    }
    out
}
