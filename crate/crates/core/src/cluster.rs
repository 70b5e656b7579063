//! K-means on the Poincaré ball (or in Euclidean space), elbow selection of K, purity, and
//! greedy cluster-to-label assignment.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hypmath::{self, BallPoint, Geometry};
use crate::scene::Tier;
use crate::{seed, Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_N_INIT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub geometry: Geometry,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    #[serde(default)]
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn centroid_points(&self) -> Result<Vec<BallPoint>> {
        self.centroids.iter().map(|c| BallPoint::new(c.clone())).collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Index of the nearest centroid, ties to the lower index.
    pub fn nearest(&self, point: &[f64]) -> usize {
        nearest(self.geometry, &self.centroids, point).0
    }
}

fn nearest(geometry: Geometry, centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = geometry.distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn validate_points(points: &[Vec<f64>], geometry: Geometry) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::Empty("points"));
    };
    let dim = first.len();
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cluster input"));
        }
        if geometry == Geometry::Poincare {
            BallPoint::new(p.clone())?;
        }
    }
    Ok(dim)
}

/// Centroid minimizing the sum of squared distances to `members`.
fn center(geometry: Geometry, members: &[&Vec<f64>]) -> Result<Vec<f64>> {
    match geometry {
        Geometry::Euclidean => {
            let mut c = vec![0.0; members[0].len()];
            for m in members {
                for (a, b) in c.iter_mut().zip(m.iter()) {
                    *a += b;
                }
            }
            let n = members.len() as f64;
            Ok(c.into_iter().map(|v| v / n).collect())
        }
        Geometry::Poincare => {
            let pts: Vec<BallPoint> = members.iter().map(|m| BallPoint::new((*m).clone())).collect::<Result<_>>()?;
            Ok(hypmath::frechet_mean_uniform(&pts)?.into_inner())
        }
    }
}

fn sq_cost(geometry: Geometry, members: &[&Vec<f64>], c: &[f64]) -> f64 {
    members.iter().map(|m| geometry.distance(m, c).powi(2)).sum()
}

/// k-means++ seeding: first center uniform, later centers with probability ∝ D².
fn seed_centroids<R: Rng>(rng: &mut R, geometry: Geometry, points: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| geometry.distance(p, &points[chosen[0]]).powi(2))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.unwrap()
        } else {
            // All remaining points coincide with a center.
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(geometry.distance(p, &points[next]).powi(2));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn assign(geometry: Geometry, centroids: &[Vec<f64>], points: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .par_iter()
        .map(|p| nearest(geometry, centroids, p))
        .unzip()
}

/// Lloyd iterations with k-means++ seeding. Centroids are Fréchet means (Poincaré) or
/// arithmetic means (Euclidean); an empty cluster is reseeded at the point farthest from its
/// current centroid. Inertia never increases between iterations.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, geometry: Geometry) -> Result<ClusterModel> {
    validate_points(points, geometry)?;
    if k == 0 || k > points.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} outside 1..={}",
            points.len()
        )));
    }
    let mut rng = seed::rng(seed, "kmeans", k as u64);
    let mut centroids = seed_centroids(&mut rng, geometry, points, k);
    let (mut assignment, mut dists) = assign(geometry, &centroids, points);
    let mut trace = vec![dists.iter().map(|d| d * d).sum::<f64>()];

    for _ in 0..max_iter {
        // Update step: each centroid moves to the center of its members unless the move
        // would not lower that cluster's cost.
        let mut members: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); k];
        for (p, &a) in points.iter().zip(&assignment) {
            members[a].push(p);
        }
        let updated: Vec<Option<Vec<f64>>> = members
            .par_iter()
            .zip(centroids.par_iter())
            .map(|(m, old)| {
                if m.is_empty() {
                    return Ok(None);
                }
                let c = center(geometry, m)?;
                Ok((sq_cost(geometry, m, &c) < sq_cost(geometry, m, old)).then_some(c))
            })
            .collect::<Result<_>>()?;
        for (j, u) in updated.into_iter().enumerate() {
            if let Some(c) = u {
                centroids[j] = c;
            }
        }
        let mut taken = BTreeSet::new();
        for j in 0..k {
            if members[j].is_empty() {
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .map(|i| (i, geometry.distance(&points[i], &centroids[assignment[i]])))
                    .fold((usize::MAX, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
                taken.insert(far.0);
                centroids[j] = points[far.0].clone();
            }
        }

        let (next, next_d) = assign(geometry, &centroids, points);
        let inertia: f64 = next_d.iter().map(|d| d * d).sum();
        let prev = *trace.last().unwrap();
        debug_assert!(inertia <= prev * (1.0 + 1e-12) + 1e-15, "inertia rose {prev} -> {inertia}");
        trace.push(inertia);
        let changed = next != assignment;
        assignment = next;
        dists = next_d;
        if !changed {
            break;
        }
    }
    let inertia = dists.iter().map(|d| d * d).sum();
    Ok(ClusterModel {
        k,
        geometry,
        centroids,
        assignment,
        inertia,
        inertia_trace: trace,
    })
}

/// Best of `n_init` [`kmeans`] runs by inertia (ties to the earlier run). Run 0 uses `seed`
/// itself, so `n_init = 1` is a single run.
pub fn kmeans_restarts(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    geometry: Geometry,
    n_init: usize,
) -> Result<ClusterModel> {
    let mut best = kmeans(points, k, seed, max_iter, geometry)?;
    for r in 1..n_init as u64 {
        let m = kmeans(points, k, seed::derive(seed, "restart", r), max_iter, geometry)?;
        if m.inertia < best.inertia {
            best = m;
        }
    }
    Ok(best)
}

/// Hyperbolic K-means on ball points.
pub fn hyperbolic_kmeans(points: &[BallPoint], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    let raw: Vec<Vec<f64>> = points.iter().map(|p| p.coords().to_vec()).collect();
    kmeans(&raw, k, seed, max_iter, Geometry::Poincare)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    pub k: usize,
    /// `(k, inertia)` for every grid entry.
    pub curve: Vec<(usize, f64)>,
    /// Inertia of a single cluster, used to normalize the curve.
    pub total_variance: f64,
    /// Normalized second difference at each interior grid entry.
    pub curvature: Vec<(usize, f64)>,
}

/// Second difference of `y` at `x1` for unevenly spaced `x0 < x1 < x2`.
pub fn second_difference(x: [f64; 3], y: [f64; 3]) -> f64 {
    let h1 = x[1] - x[0];
    let h2 = x[2] - x[1];
    2.0 * (h2 * y[0] - (h1 + h2) * y[1] + h1 * y[2]) / (h1 * h2 * (h1 + h2))
}

/// Picks K at the interior grid point where the inertia curve (normalized by the
/// single-cluster inertia) bends most; ties go to the smaller K. Each fit keeps the best of
/// `n_init` restarts.
pub fn elbow_select_k(
    points: &[Vec<f64>],
    k_grid: &[usize],
    seed: u64,
    max_iter: usize,
    geometry: Geometry,
    n_init: usize,
) -> Result<ElbowResult> {
    if k_grid.len() < 3 || k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "k grid must hold at least three strictly increasing entries".into(),
        ));
    }
    let total_variance = kmeans(points, 1, seed, max_iter, geometry)?.inertia;
    let curve: Vec<(usize, f64)> = k_grid
        .iter()
        .map(|&k| Ok((k, kmeans_restarts(points, k, seed, max_iter, geometry, n_init)?.inertia)))
        .collect::<Result<_>>()?;
    let norm = if total_variance > 0.0 { total_variance } else { 1.0 };
    let curvature: Vec<(usize, f64)> = curve
        .windows(3)
        .map(|w| {
            let x = [w[0].0 as f64, w[1].0 as f64, w[2].0 as f64];
            let y = [w[0].1 / norm, w[1].1 / norm, w[2].1 / norm];
            (w[1].0, second_difference(x, y))
        })
        .collect();
    let mut best = curvature[0];
    for &c in &curvature[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    Ok(ElbowResult {
        k: best.0,
        curve,
        total_variance,
        curvature,
    })
}

/// `(1/N) Σ_clusters max_label |cluster ∩ label|`.
pub fn purity(assignment: &[usize], gt_labels: &[usize]) -> Result<f64> {
    if assignment.len() != gt_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.len(),
            got: gt_labels.len(),
        });
    }
    if assignment.is_empty() {
        return Err(Error::Empty("purity input"));
    }
    let counts = joint_counts(assignment, gt_labels);
    let majority: usize = majority_counts(&counts).values().sum();
    Ok(majority as f64 / assignment.len() as f64)
}

fn joint_counts(assignment: &[usize], gt_labels: &[usize]) -> BTreeMap<(usize, usize), usize> {
    let mut counts = BTreeMap::new();
    for (&c, &l) in assignment.iter().zip(gt_labels) {
        *counts.entry((c, l)).or_insert(0) += 1;
    }
    counts
}

fn majority_counts(counts: &BTreeMap<(usize, usize), usize>) -> BTreeMap<usize, usize> {
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(c, _), &n) in counts {
        let e = best.entry(c).or_insert(0);
        *e = (*e).max(n);
    }
    best
}

/// Purity restricted to the clusters whose assigned label falls in each tier. Tiers with no
/// such cluster map to `None`.
pub fn split_purity(
    assignment: &[usize],
    gt_labels: &[usize],
    cluster_labels: &BTreeMap<usize, usize>,
    tiers: &BTreeMap<usize, Tier>,
) -> Result<BTreeMap<Tier, Option<f64>>> {
    if assignment.len() != gt_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.len(),
            got: gt_labels.len(),
        });
    }
    let counts = joint_counts(assignment, gt_labels);
    let majority = majority_counts(&counts);
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in assignment {
        *sizes.entry(c).or_insert(0) += 1;
    }
    let mut out = BTreeMap::new();
    for tier in Tier::ALL {
        let (mut hit, mut total) = (0usize, 0usize);
        for (cluster, label) in cluster_labels {
            if tiers.get(label) == Some(&tier) {
                hit += majority.get(cluster).copied().unwrap_or(0);
                total += sizes.get(cluster).copied().unwrap_or(0);
            }
        }
        out.insert(tier, (total > 0).then(|| hit as f64 / total as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    /// Cluster index to category id.
    pub labels: BTreeMap<usize, usize>,
    /// Clusters left without a label.
    pub novel: Vec<usize>,
    /// Mean member-to-anchor distance behind each assignment.
    #[serde(default)]
    pub mean_distance: BTreeMap<usize, f64>,
}

/// Repeatedly matches the globally closest (cluster, label) pair among unmatched clusters and
/// labels. Ties go to the lower cluster index, then the lower label id. `distances[c][j]` is
/// the distance from cluster `c` to label `label_ids[j]`; infinite entries never match.
pub fn greedy_assign(distances: &[Vec<f64>], label_ids: &[usize]) -> Result<LabelAssignment> {
    let mut cells = Vec::new();
    for (c, row) in distances.iter().enumerate() {
        if row.len() != label_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: label_ids.len(),
                got: row.len(),
            });
        }
        for (j, &d) in row.iter().enumerate() {
            if d.is_nan() {
                return Err(Error::NonFinite("cluster-label distance"));
            }
            if d.is_finite() {
                cells.push((d, c, label_ids[j]));
            }
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = LabelAssignment::default();
    let mut used = BTreeSet::new();
    for (d, c, l) in cells {
        if !out.labels.contains_key(&c) && !used.contains(&l) {
            out.labels.insert(c, l);
            out.mean_distance.insert(c, d);
            used.insert(l);
        }
    }
    out.novel = (0..distances.len()).filter(|c| !out.labels.contains_key(c)).collect();
    Ok(out)
}

/// Mean distance between every cluster's members and each label's anchor embeddings,
/// followed by [`greedy_assign`]. Empty clusters stay novel.
pub fn assign_labels(
    model: &ClusterModel,
    points: &[Vec<f64>],
    anchors: &BTreeMap<usize, Vec<Vec<f64>>>,
) -> Result<LabelAssignment> {
    if points.len() != model.assignment.len() {
        return Err(Error::DimensionMismatch {
            expected: model.assignment.len(),
            got: points.len(),
        });
    }
    let anchors: Vec<(usize, &Vec<Vec<f64>>)> =
        anchors.iter().filter(|(_, a)| !a.is_empty()).map(|(l, a)| (*l, a)).collect();
    let label_ids: Vec<usize> = anchors.iter().map(|(l, _)| *l).collect();
    let mut members: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); model.k];
    for (p, &a) in points.iter().zip(&model.assignment) {
        members[a].push(p);
    }
    let geometry = model.geometry;
    let distances: Vec<Vec<f64>> = members
        .par_iter()
        .map(|m| {
            anchors
                .iter()
                .map(|(_, a)| {
                    if m.is_empty() {
                        return f64::INFINITY;
                    }
                    let sum: f64 = m
                        .iter()
                        .flat_map(|p| a.iter().map(move |q| geometry.distance(p, q)))
                        .sum();
                    sum / (m.len() * a.len()) as f64
                })
                .collect()
        })
        .collect();
    greedy_assign(&distances, &label_ids)
}
