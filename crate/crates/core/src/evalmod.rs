//! Detection metrics (COCO-style mAP with tier and size splits) and ablation runs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embedder::TrainConfig;
use crate::hypmath::Geometry;
use crate::pipeline::{self, RunConfig};
use crate::scene::{iou, BoundingBox, CategoryTree, Scene, Tier};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scene: u64,
    pub bbox: BoundingBox,
    pub label: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scene: u64,
    pub bbox: BoundingBox,
    pub label: usize,
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Outcome of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    /// Matched an ignored ground truth, or unmatched and outside the evaluated area range.
    Ignored,
}

/// Matches detections of one label, already in descending confidence order, against that
/// label's ground truths. Each detection takes the unmatched non-ignored ground truth in its
/// scene with the highest IoU ≥ `threshold` (ties to the lower index); failing that, an
/// unmatched ignored one, which makes the detection ignored too.
pub fn match_detections(
    detections: &[&Detection],
    gts: &[&GroundTruth],
    gt_ignored: &[bool],
    det_out_of_range: &[bool],
    threshold: f64,
) -> Vec<MatchFlag> {
    let mut by_scene: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_scene.entry(g.scene).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    detections
        .iter()
        .zip(det_out_of_range)
        .map(|(d, &out_of_range)| {
            let candidates = by_scene.get(&d.scene).map(Vec::as_slice).unwrap_or(&[]);
            let best = |want_ignored: bool| {
                let mut best: Option<(usize, f64)> = None;
                for &g in candidates {
                    if taken[g] || gt_ignored[g] != want_ignored {
                        continue;
                    }
                    let v = iou(&d.bbox, &gts[g].bbox);
                    if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                        best = Some((g, v));
                    }
                }
                best.map(|(g, _)| g)
            };
            if let Some(g) = best(false) {
                taken[g] = true;
                MatchFlag::TruePositive
            } else if let Some(g) = best(true) {
                taken[g] = true;
                MatchFlag::Ignored
            } else if out_of_range {
                MatchFlag::Ignored
            } else {
                MatchFlag::FalsePositive
            }
        })
        .collect()
}

/// Area under the monotone precision envelope, summed over every recall step
/// (all-point interpolation). `is_tp` is in descending confidence order.
pub fn average_precision(is_tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (i, &hit) in is_tp.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..is_tp.len() {
        if is_tp[i] {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    ap
}

/// Area bounds (pixels²) for small / medium / large ground truths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeBins {
    pub small_max: f64,
    pub medium_max: f64,
}

impl SizeBins {
    /// The COCO bounds 32² and 96², rescaled from a 640-pixel-wide canvas.
    pub fn for_canvas_width(width: f64) -> Self {
        let s = width / 640.0;
        SizeBins {
            small_max: (32.0 * s).powi(2),
            medium_max: (96.0 * s).powi(2),
        }
    }

    fn range(&self, size: Size) -> (f64, f64) {
        match size {
            Size::Small => (0.0, self.small_max),
            Size::Medium => (self.small_max, self.medium_max),
            Size::Large => (self.medium_max, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Size {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mAP50")]
    pub map50: f64,
    #[serde(rename = "mAP75")]
    pub map75: f64,
    #[serde(rename = "mAP_r")]
    pub map_rare: Option<f64>,
    #[serde(rename = "mAP_c")]
    pub map_common: Option<f64>,
    #[serde(rename = "mAP_f")]
    pub map_frequent: Option<f64>,
    #[serde(rename = "mAP_s")]
    pub map_small: Option<f64>,
    #[serde(rename = "mAP_m")]
    pub map_medium: Option<f64>,
    #[serde(rename = "mAP_l")]
    pub map_large: Option<f64>,
    /// Clusters without a category.
    pub novel_count: usize,
    /// Mean AP over categories at each IoU threshold.
    pub per_threshold: Vec<f64>,
}

/// Mean AP per IoU threshold over the labels selected by `label_filter`, with optional area
/// range. `None` when no label qualifies.
fn map_curve(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    label_filter: &dyn Fn(usize) -> bool,
    area: Option<(f64, f64)>,
) -> Option<Vec<f64>> {
    let in_range = |b: &BoundingBox| area.is_none_or(|(lo, hi)| b.area() >= lo && b.area() < hi);
    let mut by_label: BTreeMap<usize, (Vec<&Detection>, Vec<&GroundTruth>)> = BTreeMap::new();
    for d in dets.iter().filter(|d| label_filter(d.label)) {
        by_label.entry(d.label).or_default().0.push(d);
    }
    for g in gts.iter().filter(|g| label_filter(g.label)) {
        by_label.entry(g.label).or_default().1.push(g);
    }
    let thresholds = iou_thresholds();
    let mut sums = vec![0.0; thresholds.len()];
    let mut n_labels = 0usize;
    for (d, g) in by_label.values() {
        let gt_ignored: Vec<bool> = g.iter().map(|g| !in_range(&g.bbox)).collect();
        let det_out: Vec<bool> = d.iter().map(|d| !in_range(&d.bbox)).collect();
        let n_gt = gt_ignored.iter().filter(|i| !**i).count();
        let mut counted = n_gt > 0;
        let mut aps = Vec::with_capacity(thresholds.len());
        for &t in &thresholds {
            let flags = match_detections(d, g, &gt_ignored, &det_out, t);
            let kept: Vec<bool> = flags
                .iter()
                .filter(|f| **f != MatchFlag::Ignored)
                .map(|f| *f == MatchFlag::TruePositive)
                .collect();
            counted |= !kept.is_empty();
            aps.push(average_precision(&kept, n_gt));
        }
        if counted {
            n_labels += 1;
            for (s, a) in sums.iter_mut().zip(aps) {
                *s += a;
            }
        }
    }
    (n_labels > 0).then(|| sums.into_iter().map(|s| s / n_labels as f64).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sorted_detections(detections: &[Detection]) -> Result<Vec<&Detection>> {
    for d in detections {
        if !d.confidence.is_finite() {
            return Err(Error::NonFinite("detection confidence"));
        }
    }
    let mut dets: Vec<&Detection> = detections.iter().collect();
    // A total order on content keeps the result independent of input order.
    dets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.scene.cmp(&b.scene))
            .then_with(|| {
                let (x, y) = (a.bbox.as_array(), b.bbox.as_array());
                x.iter()
                    .zip(&y)
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(a.label.cmp(&b.label))
    });
    Ok(dets)
}

/// mAP over IoU 0.50:0.05:0.95, mAP50, mAP75, and splits by frequency tier and object size.
/// Labels absent from both detections and ground truth do not enter any mean.
pub fn map_summary(
    detections: &[Detection],
    ground_truth: &[GroundTruth],
    tiers: &BTreeMap<usize, Tier>,
    sizes: SizeBins,
) -> Result<EvalReport> {
    if ground_truth.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    let dets = sorted_detections(detections)?;
    let gts: Vec<&GroundTruth> = ground_truth.iter().collect();
    let all = map_curve(&dets, &gts, &|_| true, None).unwrap_or_else(|| vec![0.0; 10]);
    let tier_map = |t: Tier| {
        map_curve(&dets, &gts, &|l| tiers.get(&l) == Some(&t), None).map(|c| mean(&c))
    };
    let size_map = |s: Size| map_curve(&dets, &gts, &|_| true, Some(sizes.range(s))).map(|c| mean(&c));
    Ok(EvalReport {
        map: mean(&all),
        map50: all[0],
        map75: all[5],
        map_rare: tier_map(Tier::Rare),
        map_common: tier_map(Tier::Common),
        map_frequent: tier_map(Tier::Frequent),
        map_small: size_map(Size::Small),
        map_medium: size_map(Size::Medium),
        map_large: size_map(Size::Large),
        novel_count: 0,
        per_threshold: all,
    })
}

/// One config change applied on top of a base run.
#[derive(Debug, Clone, PartialEq)]
pub enum AblationDelta {
    ProposalsPerScene(usize),
    Alpha(f64),
    Beta(f64),
    Gamma(f64),
    HierWeight(f64),
    Geometry(Geometry),
}

impl AblationDelta {
    pub fn apply(&self, train: &mut TrainConfig) {
        match *self {
            AblationDelta::ProposalsPerScene(k) => train.proposals_per_scene = k,
            AblationDelta::Alpha(v) => train.alpha = v,
            AblationDelta::Beta(v) => train.beta = v,
            AblationDelta::Gamma(v) => train.gamma = v,
            AblationDelta::HierWeight(v) => train.hier_weight = v,
            AblationDelta::Geometry(g) => train.geometry = g,
        }
    }

    /// Parses a one-entry JSON object such as `{"alpha": 0.1}` or `{"drop": "mask"}`.
    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .filter(|o| o.len() == 1)
            .ok_or_else(|| Error::InvalidConfig(format!("ablation must name exactly one change: {v}")))?;
        let (key, val) = obj.iter().next().unwrap();
        let num = || {
            val.as_f64()
                .ok_or_else(|| Error::InvalidConfig(format!("ablation {key} needs a number")))
        };
        Ok(match key.as_str() {
            "proposals_per_scene" => AblationDelta::ProposalsPerScene(
                val.as_u64()
                    .filter(|k| *k > 0)
                    .ok_or_else(|| Error::InvalidConfig("proposals_per_scene needs a positive integer".into()))?
                    as usize,
            ),
            "alpha" => AblationDelta::Alpha(num()?),
            "beta" => AblationDelta::Beta(num()?),
            "gamma" => AblationDelta::Gamma(num()?),
            "hier_weight" => AblationDelta::HierWeight(num()?),
            "geometry" => AblationDelta::Geometry(serde_json::from_value(val.clone())?),
            "drop" => match val.as_str() {
                Some("mask") => AblationDelta::Beta(0.0),
                Some("object") => AblationDelta::Gamma(0.0),
                Some("hierarchical") => AblationDelta::HierWeight(0.0),
                _ => return Err(Error::UnknownAblation(format!("drop {val}"))),
            },
            other => return Err(Error::UnknownAblation(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub name: String,
    pub delta: AblationDelta,
}

/// The standard table: proposal count, margin, mask weight, each loss removed, and geometry.
pub fn default_suite() -> Vec<Ablation> {
    let mk = |name: &str, delta| Ablation {
        name: name.to_string(),
        delta,
    };
    vec![
        mk("No. RP = 20", AblationDelta::ProposalsPerScene(20)),
        mk("No. RP = 50", AblationDelta::ProposalsPerScene(50)),
        mk("No. RP = 100", AblationDelta::ProposalsPerScene(100)),
        mk("alpha = 0.1", AblationDelta::Alpha(0.1)),
        mk("alpha = 0.2", AblationDelta::Alpha(0.2)),
        mk("alpha = 0.5", AblationDelta::Alpha(0.5)),
        mk("beta = 0.1", AblationDelta::Beta(0.1)),
        mk("beta = 0.2", AblationDelta::Beta(0.2)),
        mk("beta = 0.5", AblationDelta::Beta(0.5)),
        mk("w/o L_mask", AblationDelta::Beta(0.0)),
        mk("w/o L_object", AblationDelta::Gamma(0.0)),
        mk("w/o L_hierarchical", AblationDelta::HierWeight(0.0)),
        mk("Euclidean", AblationDelta::Geometry(Geometry::Euclidean)),
        mk("Poincare", AblationDelta::Geometry(Geometry::Poincare)),
    ]
}

/// Parses `{"variants": [{"name": "...", "alpha": 0.1}, ...]}` or a bare array. The optional
/// `name` field labels the row; the one remaining key is the change.
pub fn parse_suite(text: &str) -> Result<Vec<Ablation>> {
    let v: Value = serde_json::from_str(text)?;
    let list = match &v {
        Value::Array(a) => a.clone(),
        Value::Object(o) => match o.get("variants") {
            Some(Value::Array(a)) => a.clone(),
            _ => return Err(Error::InvalidConfig("suite needs a \"variants\" array".into())),
        },
        _ => return Err(Error::InvalidConfig("suite must be an array or object".into())),
    };
    list.into_iter()
        .map(|mut entry| {
            let name = entry
                .as_object_mut()
                .and_then(|o| o.remove("name"))
                .and_then(|n| n.as_str().map(str::to_string));
            let delta = AblationDelta::from_json(&entry)?;
            Ok(Ablation {
                name: name.unwrap_or_else(|| entry.to_string()),
                delta,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub proposals_per_scene: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub hier_weight: f64,
    pub geometry: Geometry,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mAP50")]
    pub map50: f64,
    #[serde(rename = "mAP75")]
    pub map75: f64,
    pub purity: f64,
    pub novel_count: usize,
}

/// Trains, clusters and evaluates the base config and every variant. Variants whose config
/// equals an earlier row reuse that row's metrics.
pub fn run_ablation(
    world: &CategoryTree,
    scenes: &[Scene],
    base: &RunConfig,
    suite: &[Ablation],
) -> Result<Vec<AblationRow>> {
    let mut runs: Vec<(String, TrainConfig)> = vec![("base".to_string(), base.train.clone())];
    for a in suite {
        let mut t = base.train.clone();
        a.delta.apply(&mut t);
        t.validate()?;
        runs.push((a.name.clone(), t));
    }
    let mut done: Vec<(TrainConfig, AblationRow)> = Vec::new();
    let mut rows = Vec::with_capacity(runs.len());
    for (name, train) in runs {
        let mut row = if let Some((_, r)) = done.iter().find(|(t, _)| *t == train) {
            r.clone()
        } else {
            let cfg = RunConfig {
                train: train.clone(),
                ..base.clone()
            };
            let out = pipeline::run(world, scenes, &cfg)?;
            let r = AblationRow {
                variant: String::new(),
                proposals_per_scene: train.proposals_per_scene,
                alpha: train.alpha,
                beta: train.beta,
                gamma: train.gamma,
                hier_weight: train.hier_weight,
                geometry: train.geometry,
                map: out.report.map.map,
                map50: out.report.map.map50,
                map75: out.report.map.map75,
                purity: out.report.purity,
                novel_count: out.report.map.novel_count,
            };
            done.push((train, r.clone()));
            r
        };
        row.variant = name;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(mut out: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(
        out,
        "variant,proposals_per_scene,alpha,beta,gamma,hier_weight,geometry,mAP,mAP50,mAP75,purity,novel_count"
    )?;
    for r in rows {
        let geometry = match r.geometry {
            Geometry::Poincare => "poincare",
            Geometry::Euclidean => "euclidean",
        };
        writeln!(
            out,
            "\"{}\",{},{},{},{},{},{},{},{},{},{},{}",
            r.variant.replace('"', "\"\""),
            r.proposals_per_scene,
            r.alpha,
            r.beta,
            r.gamma,
            r.hier_weight,
            geometry,
            r.map,
            r.map50,
            r.map75,
            r.purity,
            r.novel_count
        )?;
    }
    Ok(())
}

/// Every label id seen in the ground truth.
pub fn gt_labels(ground_truth: &[GroundTruth]) -> BTreeSet<usize> {
    ground_truth.iter().map(|g| g.label).collect()
}

#[cfg(test)]
mod tests {
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn bx(a: [f64; 4]) -> BoundingBox {
        BoundingBox::from_array(a).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true], 1), 1.0);
        assert_eq!(average_precision(&[true, false], 1), 1.0);
        assert_eq!(average_precision(&[false, true], 1), 0.5);
        // One of two objects found at precision 1/2.
        assert_eq!(average_precision(&[false, true], 2), 0.25);
        assert_eq!(average_precision(&[], 3), 0.0);
        assert_eq!(average_precision(&[false, false], 2), 0.0);
        // Envelope lifts the first TP's precision to the later, higher value.
        let ap = average_precision(&[true, false, true, true], 3);
        assert!((ap - (1.0 / 3.0 + 2.0 / 3.0 * 0.75)).abs() < 1e-15);
    }

    // Independent reference: 101-free exact AP as the integral of the interpolated precision
    // p_interp(r) = max_{r' ≥ r} p(r'), evaluated at every distinct recall level.
    fn reference_ap(is_tp: &[bool], n_gt: usize) -> f64 {
        let mut pts = Vec::new();
        let mut tp = 0;
        for (i, &h) in is_tp.iter().enumerate() {
            tp += h as usize;
            pts.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
        }
        let mut levels: Vec<f64> = pts.iter().map(|p| p.0).collect();
        levels.dedup();
        let mut ap = 0.0;
        let mut prev = 0.0;
        for r in levels {
            if r == 0.0 {
                continue;
            }
            let p = pts.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
            ap += (r - prev) * p;
            prev = r;
        }
        ap
    }

    #[test]
    fn ap_agrees_with_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let n = rng.random_range(0..30);
            let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let n_gt = flags.iter().filter(|f| **f).count() + rng.random_range(0..4);
            if n_gt == 0 {
                continue;
            }
            let a = average_precision(&flags, n_gt);
            let b = reference_ap(&flags, n_gt);
            assert!((a - b).abs() < 1e-12, "{flags:?} {n_gt}: {a} vs {b}");
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for scene in 0..4u64 {
            for _ in 0..rng.random_range(1..5) {
                let x = rng.random_range(0.0..200.0);
                let y = rng.random_range(0.0..200.0);
                let w = rng.random_range(5.0..60.0);
                let h = rng.random_range(5.0..60.0);
                let label = rng.random_range(0..3);
                gts.push(GroundTruth {
                    scene,
                    bbox: bx([x, y, x + w, y + h]),
                    label,
                });
                for _ in 0..rng.random_range(0..3) {
                    let j = |s: f64, rng: &mut ChaCha8Rng| s + rng.random_range(-6.0..6.0);
                    let x0 = j(x, rng);
                    let y0 = j(y, rng);
                    dets.push(Detection {
                        scene,
                        bbox: bx([x0, y0, x0 + w.max(8.0), y0 + h.max(8.0)]),
                        label: if rng.random_bool(0.8) { label } else { rng.random_range(0..4) },
                        confidence: (rng.random_range(0..20) as f64) / 20.0 + 0.01 * scene as f64,
                    });
                }
            }
        }
        (dets, gts)
    }

    // Brute force: per label and threshold, walk detections by confidence, scan every ground
    // truth, and integrate precision with the reference AP.
    fn reference_map(dets: &[Detection], gts: &[GroundTruth]) -> f64 {
        let labels: BTreeSet<usize> = dets.iter().map(|d| d.label).chain(gts.iter().map(|g| g.label)).collect();
        let sorted = sorted_detections(dets).unwrap();
        let mut total = 0.0;
        for &t in &iou_thresholds() {
            let mut s = 0.0;
            for &l in &labels {
                let mut used = vec![false; gts.len()];
                let mut flags = Vec::new();
                for d in sorted.iter().filter(|d| d.label == l) {
                    let mut best = None;
                    let mut best_iou = -1.0;
                    for (gi, g) in gts.iter().enumerate() {
                        if g.label == l && g.scene == d.scene && !used[gi] {
                            let v = iou(&g.bbox, &d.bbox);
                            if v >= t && v > best_iou {
                                best = Some(gi);
                                best_iou = v;
                            }
                        }
                    }
                    if let Some(gi) = best {
                        used[gi] = true;
                    }
                    flags.push(best.is_some());
                }
                let n_gt = gts.iter().filter(|g| g.label == l).count();
                if n_gt > 0 {
                    s += reference_ap(&flags, n_gt);
                }
            }
            total += s / labels.len() as f64;
        }
        total / 10.0
    }

    #[test]
    fn map_agrees_with_brute_force_and_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bins = SizeBins::for_canvas_width(256.0);
        for _ in 0..100 {
            let (mut dets, gts) = random_problem(&mut rng);
            let a = map_summary(&dets, &gts, &BTreeMap::new(), bins).unwrap();
            let b = reference_map(&dets, &gts);
            assert!((a.map - b).abs() < 1e-12, "{} vs {b}", a.map);
            dets.shuffle(&mut rng);
            let c = map_summary(&dets, &gts, &BTreeMap::new(), bins).unwrap();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn perfect_detections_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, gts) = random_problem(&mut rng);
        let dets: Vec<Detection> = gts
            .iter()
            .map(|g| Detection {
                scene: g.scene,
                bbox: g.bbox,
                label: g.label,
                confidence: 0.9,
            })
            .collect();
        let tiers = BTreeMap::from([(0, Tier::Rare), (1, Tier::Common), (2, Tier::Frequent)]);
        let r = map_summary(&dets, &gts, &tiers, SizeBins::for_canvas_width(256.0)).unwrap();
        for v in [r.map, r.map50, r.map75] {
            assert_eq!(v, 1.0);
        }
        for v in [r.map_rare, r.map_common, r.map_frequent, r.map_small, r.map_medium, r.map_large]
            .into_iter()
            .flatten()
        {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn empty_detections_score_zero_and_empty_gt_errors() {
        let gts = vec![GroundTruth {
            scene: 0,
            bbox: bx([0.0, 0.0, 10.0, 10.0]),
            label: 1,
        }];
        let r = map_summary(&[], &gts, &BTreeMap::new(), SizeBins::for_canvas_width(640.0)).unwrap();
        assert_eq!((r.map, r.map50, r.map75), (0.0, 0.0, 0.0));
        assert!(matches!(
            map_summary(&[], &[], &BTreeMap::new(), SizeBins::for_canvas_width(640.0)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn iou_thresholds_split_map50_and_map75() {
        // IoU 0.6 with the only ground truth.
        let gts = vec![GroundTruth {
            scene: 0,
            bbox: bx([0.0, 0.0, 10.0, 10.0]),
            label: 0,
        }];
        let dets = vec![Detection {
            scene: 0,
            bbox: bx([0.0, 0.0, 10.0, 6.0]),
            label: 0,
            confidence: 1.0,
        }];
        let r = map_summary(&dets, &gts, &BTreeMap::new(), SizeBins::for_canvas_width(640.0)).unwrap();
        assert_eq!(r.map50, 1.0);
        assert_eq!(r.map75, 0.0);
        // Thresholds 0.50 and 0.55 pass, plus 0.60 (inclusive).
        assert!((r.map - 0.3).abs() < 1e-12, "{}", r.map);
    }

    #[test]
    fn size_split_ignores_other_ranges() {
        let bins = SizeBins {
            small_max: 100.0,
            medium_max: 1000.0,
        };
        let gts = vec![
            GroundTruth {
                scene: 0,
                bbox: bx([0.0, 0.0, 5.0, 5.0]),
                label: 0,
            },
            GroundTruth {
                scene: 0,
                bbox: bx([50.0, 50.0, 100.0, 100.0]),
                label: 0,
            },
        ];
        // Finds only the large one, plus a small false positive.
        let dets = vec![
            Detection {
                scene: 0,
                bbox: bx([50.0, 50.0, 100.0, 100.0]),
                label: 0,
                confidence: 0.9,
            },
            Detection {
                scene: 0,
                bbox: bx([200.0, 200.0, 204.0, 204.0]),
                label: 0,
                confidence: 0.8,
            },
        ];
        let r = map_summary(&dets, &gts, &BTreeMap::new(), bins).unwrap();
        assert_eq!(r.map_large, Some(1.0));
        assert_eq!(r.map_small, Some(0.0));
        assert_eq!(r.map_medium, None);
        assert_eq!(r.map50, 0.5);
    }

    #[test]
    fn suite_parsing() {
        let s = parse_suite(r#"{"variants": [{"geometry": "euclidean"}, {"name": "no hier", "drop": "hierarchical"}]}"#).unwrap();
        assert_eq!(s[0].delta, AblationDelta::Geometry(Geometry::Euclidean));
        assert_eq!(s[1].name, "no hier");
        assert_eq!(s[1].delta, AblationDelta::HierWeight(0.0));
        assert!(matches!(parse_suite(r#"[{"learning_rat": 0.1}]"#), Err(Error::UnknownAblation(_))));
        assert!(parse_suite(r#"[{"alpha": 0.1, "beta": 0.2}]"#).is_err());
    }

    #[test]
    fn default_suite_rows() {
        let names: Vec<String> = default_suite().into_iter().map(|a| a.name).collect();
        assert_eq!(names.len(), 14);
        assert!(names.contains(&"w/o L_object".to_string()));
    }
}
