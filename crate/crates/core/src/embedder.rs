//! Encoder and triplet losses.
//!
//! The encoder is a fully connected network `F → h1 → h2 → d` with `tanh` hidden units and a
//! linear output, followed by the exponential map at the origin (Poincaré geometry) or the
//! identity (Euclidean geometry). Parameters live in flat space and are trained with Adam;
//! gradients are analytic and flow through the head and the distance function.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hypmath::{self, BallPoint, Geometry, MAX_NORM};
use crate::sampler::{self, HierPair, MaskTriplet, ObjectTriplet};
use crate::scene::{top_k_proposals, Proposal, Scene};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `[out][in]`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Layer widths, input first: `[F, h1, h2, d]`.
    pub dims: Vec<usize>,
    pub layers: Vec<Layer>,
    pub geometry: Geometry,
}

impl EncoderParams {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn init(dims: &[usize], geometry: Geometry, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad encoder widths {dims:?}")));
        }
        let mut rng = seed::rng(seed, "encoder_init", 0);
        let layers = dims
            .windows(2)
            .map(|io| {
                let bound = 1.0 / (io[0] as f64).sqrt();
                let w = (0..io[1])
                    .map(|_| (0..io[0]).map(|_| rng.random_range(-bound..=bound)).collect())
                    .collect();
                let b = (0..io[1]).map(|_| rng.random_range(-bound..=bound)).collect();
                Layer { w, b }
            })
            .collect();
        Ok(EncoderParams {
            dims: dims.to_vec(),
            layers,
            geometry,
        })
    }

    pub fn zeros(dims: &[usize], geometry: Geometry) -> Self {
        let layers = dims
            .windows(2)
            .map(|io| Layer {
                w: vec![vec![0.0; io[0]]; io[1]],
                b: vec![0.0; io[1]],
            })
            .collect();
        EncoderParams {
            dims: dims.to_vec(),
            layers,
            geometry,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|io| io[1] * (io[0] + 1)).sum()
    }

    /// Parameters in a fixed order: per layer, weights row-major then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for row in &l.w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for row in &mut l.w {
                for v in row.iter_mut() {
                    *v = it.next().expect("flat parameter length");
                }
            }
            for v in l.b.iter_mut() {
                *v = it.next().expect("flat parameter length");
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.layers.len() != self.dims.len() - 1 {
            return Err(Error::InvalidConfig("encoder layers do not match dims".into()));
        }
        for (l, io) in self.layers.iter().zip(self.dims.windows(2)) {
            if l.w.len() != io[1] || l.b.len() != io[1] || l.w.iter().any(|r| r.len() != io[0]) {
                return Err(Error::InvalidConfig("encoder layer shape mismatch".into()));
            }
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder parameters"));
        }
        Ok(())
    }

    fn check_input(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: feature.len(),
            });
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input"));
        }
        Ok(())
    }

    /// Embedding in the configured geometry.
    pub fn embed(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.check_input(feature)?;
        Ok(forward(self, feature).z)
    }

    /// Network output through the exponential map at the origin, clipped to the ball.
    pub fn encode(&self, feature: &[f64]) -> Result<BallPoint> {
        self.check_input(feature)?;
        let fw = forward(self, feature);
        match self.geometry {
            Geometry::Poincare => BallPoint::new(fw.z),
            Geometry::Euclidean => Ok(hypmath::exp_map_origin(&hypmath::TangentVector(fw.u))),
        }
    }
}

struct Forward {
    /// Input followed by each hidden activation.
    acts: Vec<Vec<f64>>,
    /// Pre-head network output.
    u: Vec<f64>,
    /// Embedding.
    z: Vec<f64>,
}

fn affine(l: &Layer, x: &[f64]) -> Vec<f64> {
    l.w.iter()
        .zip(&l.b)
        .map(|(row, b)| b + hypmath::dot(row, x))
        .collect()
}

fn forward(p: &EncoderParams, x: &[f64]) -> Forward {
    let mut acts = vec![x.to_vec()];
    let last = p.layers.len() - 1;
    for l in &p.layers[..last] {
        let h: Vec<f64> = affine(l, acts.last().unwrap()).iter().map(|v| v.tanh()).collect();
        acts.push(h);
    }
    let u = affine(&p.layers[last], acts.last().unwrap());
    let z = match p.geometry {
        Geometry::Euclidean => u.clone(),
        Geometry::Poincare => {
            let (g, _) = exp_head_coeffs(hypmath::norm(&u));
            u.iter().map(|v| g * v).collect()
        }
    };
    Forward { acts, u, z }
}

/// For `z = g(|u|) u`, returns `(g, g'(n)/n)`. Covers the clipped region, where
/// `z = MAX_NORM u / |u|`.
fn exp_head_coeffs(n: f64) -> (f64, f64) {
    if n < 1e-4 {
        let n2 = n * n;
        return (1.0 - n2 / 3.0, -2.0 / 3.0 + 8.0 * n2 / 15.0);
    }
    let t = n.tanh();
    if t > MAX_NORM {
        let g = MAX_NORM / n;
        return (g, -g / (n * n));
    }
    let sech2 = 1.0 - t * t;
    (t / n, (sech2 * n - t) / (n * n * n))
}

/// Accumulates `∂L/∂θ` into `grad` given `∂L/∂z`.
fn backward(p: &EncoderParams, fw: &Forward, gz: &[f64], grad: &mut [f64]) {
    let mut delta: Vec<f64> = match p.geometry {
        Geometry::Euclidean => gz.to_vec(),
        Geometry::Poincare => {
            let (g, h) = exp_head_coeffs(hypmath::norm(&fw.u));
            let ug = hypmath::dot(&fw.u, gz);
            gz.iter().zip(&fw.u).map(|(a, u)| g * a + h * u * ug).collect()
        }
    };
    let offsets = layer_offsets(p);
    for li in (0..p.layers.len()).rev() {
        let layer = &p.layers[li];
        let input = &fw.acts[li];
        let fan_in = input.len();
        let off = offsets[li];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
            for (g, x) in row.iter_mut().zip(input) {
                *g += d * x;
            }
        }
        let boff = off + layer.w.len() * fan_in;
        for (o, d) in delta.iter().enumerate() {
            grad[boff + o] += d;
        }
        if li == 0 {
            break;
        }
        // Back through tanh of the previous hidden layer.
        let mut prev = vec![0.0; fan_in];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            for (pv, w) in prev.iter_mut().zip(&layer.w[o]) {
                *pv += d * w;
            }
        }
        for (pv, a) in prev.iter_mut().zip(input) {
            *pv *= 1.0 - a * a;
        }
        delta = prev;
    }
}

fn layer_offsets(p: &EncoderParams) -> Vec<usize> {
    let mut out = Vec::with_capacity(p.layers.len());
    let mut off = 0;
    for io in p.dims.windows(2) {
        out.push(off);
        off += io[1] * (io[0] + 1);
    }
    out
}

/// `max(0, α - d_neg + d_pos)`.
pub fn triplet_hinge(alpha: f64, d_pos: f64, d_neg: f64) -> f64 {
    (alpha - d_neg + d_pos).max(0.0)
}

/// Which loss terms a computation touches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mask: f64,
    pub object: f64,
    pub hierarchical: f64,
}

impl LossTerms {
    pub fn weighted(&self, config: &TrainConfig) -> f64 {
        config.beta * self.mask + config.gamma * self.object + config.hier_weight * self.hierarchical
    }
}

// Shared machinery for all three losses. Each distinct input vector is run forward once;
// gradients with respect to its embedding accumulate and are backpropagated once in `finish`.
struct LossCtx<'a> {
    params: &'a EncoderParams,
    alpha: f64,
    with_grad: bool,
    slots: HashMap<Vec<u64>, usize>,
    passes: Vec<Forward>,
    gz: Vec<Vec<f64>>,
    degenerate: usize,
}

impl<'a> LossCtx<'a> {
    fn new(params: &'a EncoderParams, alpha: f64, with_grad: bool) -> Self {
        LossCtx {
            params,
            alpha,
            with_grad,
            slots: HashMap::new(),
            passes: Vec::new(),
            gz: Vec::new(),
            degenerate: 0,
        }
    }

    fn slot(&mut self, x: &[f64]) -> usize {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&i) = self.slots.get(&key) {
            return i;
        }
        let fw = forward(self.params, x);
        self.gz.push(vec![0.0; fw.z.len()]);
        self.passes.push(fw);
        self.slots.insert(key, self.passes.len() - 1);
        self.passes.len() - 1
    }

    fn pair_grad(&mut self, a: usize, b: usize, scale: f64) {
        let geo = self.params.geometry;
        let (za, zb) = (&self.passes[a].z, &self.passes[b].z);
        let mut ga = vec![0.0; za.len()];
        let mut gb = vec![0.0; za.len()];
        let ok = geo.accumulate_grad(za, zb, scale, &mut ga) && geo.accumulate_grad(zb, za, scale, &mut gb);
        if !ok {
            self.degenerate += 1;
            return;
        }
        for (t, g) in self.gz[a].iter_mut().zip(&ga) {
            *t += g;
        }
        for (t, g) in self.gz[b].iter_mut().zip(&gb) {
            *t += g;
        }
    }

    fn origin_grad(&mut self, a: usize, scale: f64) {
        let geo = self.params.geometry;
        let mut g = vec![0.0; self.passes[a].z.len()];
        if !geo.accumulate_origin_grad(&self.passes[a].z, scale, &mut g) {
            self.degenerate += 1;
            return;
        }
        for (t, v) in self.gz[a].iter_mut().zip(&g) {
            *t += v;
        }
    }

    fn triplet(&mut self, anchor: &[f64], pos: &[f64], neg: &[f64], scale: f64) -> f64 {
        let geo = self.params.geometry;
        let (a, p, n) = (self.slot(anchor), self.slot(pos), self.slot(neg));
        let d_pos = geo.distance(&self.passes[a].z, &self.passes[p].z);
        let d_neg = geo.distance(&self.passes[a].z, &self.passes[n].z);
        let h = triplet_hinge(self.alpha, d_pos, d_neg);
        if h > 0.0 && scale != 0.0 && self.with_grad {
            self.pair_grad(a, p, scale);
            self.pair_grad(a, n, -scale);
        }
        h
    }

    fn hier(&mut self, parent: &[f64], child: &[f64], scale: f64) -> f64 {
        let geo = self.params.geometry;
        let (p, c) = (self.slot(parent), self.slot(child));
        let h = triplet_hinge(
            self.alpha,
            geo.origin_distance(&self.passes[p].z),
            geo.origin_distance(&self.passes[c].z),
        );
        if h > 0.0 && scale != 0.0 && self.with_grad {
            self.origin_grad(p, scale);
            self.origin_grad(c, -scale);
        }
        h
    }

    /// Backpropagates the accumulated embedding gradients into `grad`.
    fn finish(&self, grad: &mut [f64]) {
        for (fw, gz) in self.passes.iter().zip(&self.gz) {
            if gz.iter().any(|v| *v != 0.0) {
                backward(self.params, fw, gz, grad);
            }
        }
    }
}

fn ctx(params: &EncoderParams, alpha: f64) -> LossCtx<'_> {
    LossCtx::new(params, alpha, false)
}

/// `Σ max(0, α - d(z_full, z_bg) + d(z_full, z_fg))`.
pub fn loss_mask(triplets: &[MaskTriplet], params: &EncoderParams, alpha: f64) -> f64 {
    let mut c = ctx(params, alpha);
    triplets
        .iter()
        .map(|t| c.triplet(&t.anchor_full, &t.positive_fg, &t.negative_bg, 1.0))
        .sum()
}

/// `Σ max(0, α - d(z_fg, z̄_fg) + d(z_fg, ẑ_fg))` with ẑ the positive and z̄ the negative.
pub fn loss_object(triplets: &[ObjectTriplet], params: &EncoderParams, alpha: f64) -> f64 {
    let mut c = ctx(params, alpha);
    triplets
        .iter()
        .map(|t| c.triplet(&t.anchor_fg, &t.positive_fg, &t.negative_fg, 1.0))
        .sum()
}

/// `Σ max(0, α - d(z_child, o) + d(z_parent, o))`.
pub fn loss_hierarchical(pairs: &[HierPair], params: &EncoderParams, alpha: f64) -> f64 {
    let mut c = ctx(params, alpha);
    pairs.iter().map(|p| c.hier(&p.parent_fg, &p.child_fg, 1.0)).sum()
}

/// Samples of one scene for one optimization step.
#[derive(Debug, Clone, Default)]
pub struct SceneSamples {
    pub mask: Vec<MaskTriplet>,
    pub object: Vec<ObjectTriplet>,
    pub hier: Vec<HierPair>,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Mean over scenes of `β L_mask + γ L_object + L_hier`.
    pub value: f64,
    /// Mean over scenes of each unweighted term.
    pub terms: LossTerms,
    /// Flat gradient in [`EncoderParams::to_flat`] order.
    pub gradient: Vec<f64>,
    /// Distance gradients skipped at coincident embeddings.
    pub degenerate: usize,
}

fn scene_loss(
    params: &EncoderParams,
    s: &SceneSamples,
    config: &TrainConfig,
    scale: f64,
) -> (LossTerms, Vec<f64>, usize) {
    let mut c = LossCtx::new(params, config.alpha, true);
    // Zero-weight terms are still reported, but from a separate pass so they cannot touch
    // the gradient (not even its summation order).
    let mut off = LossCtx::new(params, config.alpha, false);
    let mut terms = LossTerms::default();
    let w = config.beta * scale;
    let ctx = if w != 0.0 { &mut c } else { &mut off };
    for t in &s.mask {
        terms.mask += ctx.triplet(&t.anchor_full, &t.positive_fg, &t.negative_bg, w);
    }
    let w = config.gamma * scale;
    let ctx = if w != 0.0 { &mut c } else { &mut off };
    for t in &s.object {
        terms.object += ctx.triplet(&t.anchor_fg, &t.positive_fg, &t.negative_fg, w);
    }
    let w = config.hier_weight * scale;
    let ctx = if w != 0.0 { &mut c } else { &mut off };
    for p in &s.hier {
        terms.hierarchical += ctx.hier(&p.parent_fg, &p.child_fg, w);
    }
    let mut grad = vec![0.0; params.num_params()];
    c.finish(&mut grad);
    let degenerate = c.degenerate;
    (terms, grad, degenerate)
}

/// Weighted total loss over a batch (mean over scenes) and its analytic gradient.
/// Per-scene work runs in parallel; the reduction is a fixed-order sum.
pub fn total_loss(batch: &[SceneSamples], params: &EncoderParams, config: &TrainConfig) -> BatchLoss {
    let n = batch.len().max(1) as f64;
    let per_scene: Vec<_> = batch
        .par_iter()
        .map(|s| scene_loss(params, s, config, 1.0 / n))
        .collect();
    let mut terms = LossTerms::default();
    let mut gradient = vec![0.0; params.num_params()];
    let mut degenerate = 0;
    for (t, g, d) in per_scene {
        terms.mask += t.mask;
        terms.object += t.object;
        terms.hierarchical += t.hierarchical;
        for (a, b) in gradient.iter_mut().zip(&g) {
            *a += b;
        }
        degenerate += d;
    }
    terms.mask /= n;
    terms.object /= n;
    terms.hierarchical /= n;
    BatchLoss {
        value: terms.weighted(config),
        terms,
        gradient,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Triplet margin α.
    pub alpha: f64,
    /// Weight β of the mask loss.
    pub beta: f64,
    /// Weight γ of the object loss.
    pub gamma: f64,
    /// Weight of the hierarchical loss (1 in the standard objective; 0 removes it).
    pub hier_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Scenes per optimization step.
    pub batch_size: usize,
    pub seed: u64,
    pub geometry: Geometry,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub proposals_per_scene: usize,
    pub nms_threshold: f64,
    pub n_neg: usize,
    pub tau_pos: f64,
    pub sigma_hier: f64,
    pub kappa_contain: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.2,
            beta: 0.2,
            gamma: 0.2,
            hier_weight: 1.0,
            learning_rate: 1e-4,
            epochs: 20,
            batch_size: 1,
            seed: 0,
            geometry: Geometry::Poincare,
            hidden: vec![64, 16],
            embed_dim: 2,
            proposals_per_scene: 50,
            nms_threshold: 0.75,
            n_neg: sampler::N_NEG,
            tau_pos: sampler::TAU_POS,
            sigma_hier: sampler::SIGMA_HIER,
            kappa_contain: sampler::KAPPA_CONTAIN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return bad("margin alpha must be positive");
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0 && self.hier_weight >= 0.0) {
            return bad("loss weights must be nonnegative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.embed_dim == 0 || self.proposals_per_scene == 0 {
            return bad("batch size, embedding dimension and proposal count must be positive");
        }
        if !(self.tau_pos > 0.0 && self.tau_pos < 1.0) {
            return bad("tau_pos must lie in (0, 1)");
        }
        if !(self.sigma_hier > 0.0 && self.sigma_hier < 1.0) {
            return bad("sigma_hier must lie in (0, 1)");
        }
        if !(self.kappa_contain > 0.0 && self.kappa_contain <= 1.0) {
            return bad("kappa_contain must lie in (0, 1]");
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold <= 1.0) {
            return bad("nms threshold must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn dims(&self, feature_dim: usize) -> Vec<usize> {
        let mut d = vec![feature_dim];
        d.extend(&self.hidden);
        d.push(self.embed_dim);
        d
    }
}

/// Per-epoch means over scenes of each loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mask: f64,
    pub object: f64,
    pub hierarchical: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub trace: Vec<EpochLoss>,
    pub degenerate: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Kept proposals and their fixed samples (mask triplets and hierarchical pairs do not
/// depend on randomness; object triplets are redrawn every epoch).
pub struct PreparedScene {
    pub kept: Vec<Proposal>,
    pub mask: Vec<MaskTriplet>,
    pub hier: Vec<HierPair>,
}

pub fn prepare_scenes(scenes: &[Scene], config: &TrainConfig) -> Vec<PreparedScene> {
    scenes
        .par_iter()
        .map(|s| {
            let kept = top_k_proposals(s, config.proposals_per_scene, config.nms_threshold);
            let mask = sampler::sample_mask_triplets(&kept);
            let hier = sampler::sample_hier_pairs(&kept, config.sigma_hier, config.kappa_contain);
            PreparedScene { kept, mask, hier }
        })
        .collect()
}

/// Samples for scene `i` of a batch; negatives may come from the other batch members.
pub fn batch_samples(
    prepared: &[PreparedScene],
    batch: &[usize],
    config: &TrainConfig,
    step_seed: u64,
) -> Vec<SceneSamples> {
    batch
        .iter()
        .enumerate()
        .map(|(bi, &si)| {
            let p = &prepared[si];
            let others: Vec<&[Proposal]> = batch
                .iter()
                .filter(|&&o| o != si)
                .map(|&o| prepared[o].kept.as_slice())
                .collect();
            let object = if config.gamma > 0.0 {
                sampler::sample_object_triplets(
                    &p.kept,
                    &others,
                    config.n_neg,
                    config.tau_pos,
                    seed::derive(step_seed, "scene_in_batch", bi as u64),
                )
            } else {
                Vec::new()
            };
            SceneSamples {
                mask: if config.beta > 0.0 { p.mask.clone() } else { Vec::new() },
                object,
                hier: if config.hier_weight > 0.0 { p.hier.clone() } else { Vec::new() },
            }
        })
        .collect()
}

/// Trains the encoder with Adam. Deterministic for a fixed `config.seed`.
pub fn train(scenes: &[Scene], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let Some(first) = scenes.iter().flat_map(|s| s.proposals.first()).next() else {
        return Err(Error::Empty("training scenes"));
    };
    let feature_dim = first.feature_fg.len();
    let mut params = EncoderParams::init(&config.dims(feature_dim), config.geometry, seed::derive(config.seed, "init", 0))?;
    let prepared = prepare_scenes(scenes, config);
    let mut theta = params.to_flat();
    let mut adam = Adam::new(theta.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut degenerate = 0;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut seed::rng(config.seed, "epoch_order", epoch as u64));
        }
        let mut sums = LossTerms::default();
        for batch in order.chunks(config.batch_size) {
            let samples = batch_samples(&prepared, batch, config, seed::derive(config.seed, "step", step as u64));
            let loss = total_loss(&samples, &params, config);
            if !loss.value.is_finite() || loss.gradient.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: loss.value,
                });
            }
            let w = batch.len() as f64;
            sums.mask += loss.terms.mask * w;
            sums.object += loss.terms.object * w;
            sums.hierarchical += loss.terms.hierarchical * w;
            degenerate += loss.degenerate;
            adam.step(&mut theta, &loss.gradient);
            params.set_flat(&theta);
            step += 1;
        }
        let n = scenes.len() as f64;
        let terms = LossTerms {
            mask: sums.mask / n,
            object: sums.object / n,
            hierarchical: sums.hierarchical / n,
        };
        trace.push(EpochLoss {
            epoch,
            mask: terms.mask,
            object: terms.object,
            hierarchical: terms.hierarchical,
            total: terms.weighted(config),
        });
    }
    Ok(TrainOutcome {
        params,
        trace,
        degenerate,
    })
}

/// Loss trace as CSV: `epoch,L_mask,L_object,L_hier,total`.
pub fn write_loss_csv<W: Write>(mut out: W, trace: &[EpochLoss]) -> Result<()> {
    writeln!(out, "epoch,L_mask,L_object,L_hier,total")?;
    for e in trace {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.mask, e.object, e.hierarchical, e.total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::{generate_dataset, generate_world, SceneConfig, WorldConfig};

    fn small_world_scenes(n: usize, f: usize) -> Vec<Scene> {
        let w = generate_world(
            &WorldConfig {
                feature_dim: f,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        generate_dataset(&w, &SceneConfig::default(), n, 1).unwrap()
    }

    #[test]
    fn zero_network_maps_to_origin() {
        let p = EncoderParams::zeros(&[4, 3, 3, 2], Geometry::Poincare);
        let z = p.encode(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(z.coords(), &[0.0, 0.0]);
        assert!(matches!(p.encode(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn encode_is_deterministic_and_inside_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = EncoderParams::init(&[32, 64, 16, 2], Geometry::Poincare, 1).unwrap();
        // Inflate weights so some outputs saturate the clip.
        let flat: Vec<f64> = p.to_flat().iter().map(|v| v * 20.0).collect();
        p.set_flat(&flat);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = p.encode(&x).unwrap();
            assert!(a.norm() <= MAX_NORM + 1e-12);
            assert_eq!(a, p.encode(&x).unwrap());
            assert_eq!(a.coords(), p.embed(&x).unwrap().as_slice());
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = EncoderParams::init(&[5, 4, 3, 2], Geometry::Poincare, 9).unwrap();
        let mut q = EncoderParams::zeros(&[5, 4, 3, 2], Geometry::Poincare);
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
        assert_eq!(p.to_flat().len(), p.num_params());
        assert_eq!(p.num_params(), 4 * 6 + 3 * 5 + 2 * 4);
    }

    #[test]
    fn hinge_examples() {
        // Mask loss: d(full, bg) = 0.5, d(full, fg) = 0.1.
        assert_eq!(triplet_hinge(0.2, 0.1, 0.5), 0.0);
        assert!((triplet_hinge(0.2, 0.5, 0.1) - 0.6).abs() < 1e-15);
        // Object loss: d(anchor, positive) / d(anchor, negative).
        assert_eq!(triplet_hinge(0.2, 0.3, 0.9), 0.0);
        assert!((triplet_hinge(0.2, 0.9, 0.3) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_sample_sets_cost_nothing() {
        let p = EncoderParams::init(&[4, 3, 3, 2], Geometry::Poincare, 0).unwrap();
        assert_eq!(loss_mask(&[], &p, 0.2), 0.0);
        assert_eq!(loss_object(&[], &p, 0.2), 0.0);
        assert_eq!(loss_hierarchical(&[], &p, 0.2), 0.0);
    }

    #[test]
    fn identical_anchor_and_positive_leaves_negative_margin() {
        let p = EncoderParams::init(&[3, 4, 4, 2], Geometry::Poincare, 2).unwrap();
        let a = vec![0.3, -0.1, 0.7];
        let n = vec![-2.0, 1.5, 0.2];
        let t = ObjectTriplet {
            anchor_fg: a.clone(),
            positive_fg: a.clone(),
            negative_fg: n.clone(),
            anchor: 0,
            positive: 0,
            negative: sampler::NegativeSource::SameScene(1),
        };
        let za = p.encode(&a).unwrap();
        let zn = p.encode(&n).unwrap();
        let expect = (0.2 - hypmath::poincare_distance(&za, &zn).unwrap()).max(0.0);
        assert!((loss_object(&[t], &p, 0.2) - expect).abs() < 1e-15);
    }

    #[test]
    fn hierarchical_examples() {
        // Output = bias only, so every input lands on the same point.
        let mut p = EncoderParams::zeros(&[2, 2, 2, 2], Geometry::Poincare);
        p.layers[2].b = vec![0.4, 0.1];
        let pair = HierPair {
            parent_fg: vec![1.0, 0.0],
            child_fg: vec![0.0, 1.0],
            parent: 0,
            child: 1,
        };
        assert!((loss_hierarchical(std::slice::from_ref(&pair), &p, 0.2) - 0.2).abs() < 1e-15);

        // Parent at the origin, child at tangent norm 0.2 => d(child, o) = 0.4 ≥ α.
        let mut p = EncoderParams::zeros(&[2, 2, 2, 2], Geometry::Poincare);
        p.layers[0].w = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        p.layers[1].w = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        p.layers[2].w = vec![vec![0.2 / 1f64.tanh().tanh(), 0.0], vec![0.0, 0.0]];
        let zc = p.encode(&pair.child_fg).unwrap();
        assert_eq!(p.encode(&pair.parent_fg).unwrap().norm(), 0.0);
        assert!((2.0 * zc.norm().atanh() - 0.4).abs() < 1e-12);
        assert_eq!(loss_hierarchical(&[pair], &p, 0.2), 0.0);
    }

    #[test]
    fn head_coefficients_are_continuous() {
        for n in [1e-4, 0.5, 3.0] {
            let (g_lo, h_lo) = exp_head_coeffs(n * (1.0 - 1e-9));
            let (g_hi, h_hi) = exp_head_coeffs(n * (1.0 + 1e-9));
            assert!((g_lo - g_hi).abs() < 1e-8 && (h_lo - h_hi).abs() < 1e-6, "{n}");
        }
    }

    fn fd_check(params: &EncoderParams, batch: &[SceneSamples], cfg: &TrainConfig) -> f64 {
        let analytic = total_loss(batch, params, cfg).gradient;
        let theta = params.to_flat();
        let h = 1e-6;
        let mut q = params.clone();
        let mut num = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            q.set_flat(&t);
            let up = total_loss(batch, &q, cfg).value;
            t[i] -= 2.0 * h;
            q.set_flat(&t);
            let down = total_loss(batch, &q, cfg).value;
            num[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = hypmath::norm(&analytic).max(hypmath::norm(&num)).max(1e-12);
        diff / scale
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let scenes = small_world_scenes(3, 4);
        for geometry in [Geometry::Poincare, Geometry::Euclidean] {
            let cfg = TrainConfig {
                hidden: vec![5, 4],
                geometry,
                alpha: 0.5,
                ..Default::default()
            };
            let prepared = prepare_scenes(&scenes, &cfg);
            let batch = batch_samples(&prepared, &[0, 1, 2], &cfg, 3);
            for s in 0..5 {
                let p = EncoderParams::init(&cfg.dims(4), geometry, s).unwrap();
                let err = fd_check(&p, &batch, &cfg);
                assert!(err < 1e-4, "{geometry:?} seed {s}: {err}");
            }
        }
    }

    #[test]
    fn weights_decompose_total() {
        let scenes = small_world_scenes(2, 6);
        let cfg = TrainConfig {
            hidden: vec![6, 4],
            ..Default::default()
        };
        let prepared = prepare_scenes(&scenes, &cfg);
        let batch = batch_samples(&prepared, &[0, 1], &cfg, 0);
        let p = EncoderParams::init(&cfg.dims(6), Geometry::Poincare, 4).unwrap();
        let total = total_loss(&batch, &p, &cfg);
        let mut m = 0.0;
        let mut o = 0.0;
        let mut h = 0.0;
        for s in &batch {
            m += loss_mask(&s.mask, &p, cfg.alpha);
            o += loss_object(&s.object, &p, cfg.alpha);
            h += loss_hierarchical(&s.hier, &p, cfg.alpha);
        }
        let expect = (0.2 * m + 0.2 * o + h) / 2.0;
        assert!((total.value - expect).abs() <= 1e-12 * expect.abs().max(1.0));

        let only_hier = TrainConfig {
            beta: 0.0,
            gamma: 0.0,
            ..cfg.clone()
        };
        let v = total_loss(&batch, &p, &only_hier).value;
        assert_eq!(v, total.terms.hierarchical);
    }

    #[test]
    fn zero_weight_ignores_its_samples() {
        let scenes = small_world_scenes(2, 6);
        let cfg = TrainConfig {
            hidden: vec![6, 4],
            beta: 0.0,
            ..Default::default()
        };
        let prepared = prepare_scenes(&scenes, &cfg);
        let mut batch = batch_samples(&prepared, &[0, 1], &cfg, 0);
        let p = EncoderParams::init(&cfg.dims(6), Geometry::Poincare, 4).unwrap();
        let a = total_loss(&batch, &p, &cfg);
        batch[0].mask = sampler::sample_mask_triplets(&prepared[1].kept);
        for t in &mut batch[0].mask {
            t.anchor_full.iter_mut().for_each(|v| *v += 5.0);
        }
        let b = total_loss(&batch, &p, &cfg);
        assert_eq!(a.value, b.value);
        assert_eq!(a.gradient, b.gradient);
    }

    #[test]
    fn training_is_deterministic_and_respects_zero_rate() {
        let scenes = small_world_scenes(6, 8);
        let cfg = TrainConfig {
            hidden: vec![8, 4],
            epochs: 2,
            batch_size: 2,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let a = train(&scenes, &cfg).unwrap();
        let b = train(&scenes, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.iter().all(|e| e.total.is_finite()));

        let frozen = TrainConfig {
            learning_rate: 0.0,
            ..cfg.clone()
        };
        let init = EncoderParams::init(&frozen.dims(8), frozen.geometry, seed::derive(frozen.seed, "init", 0)).unwrap();
        assert_eq!(train(&scenes, &frozen).unwrap().params, init);
        let none = TrainConfig { epochs: 0, ..cfg };
        let out = train(&scenes, &none).unwrap();
        assert_eq!(out.params, init);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let scenes = small_world_scenes(1, 4);
        for cfg in [
            TrainConfig { alpha: 0.0, ..Default::default() },
            TrainConfig { beta: -1.0, ..Default::default() },
            TrainConfig { learning_rate: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(train(&scenes, &cfg), Err(Error::InvalidConfig(_))));
        }
        assert!(matches!(train(&[], &TrainConfig::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn loss_csv_shape() {
        let trace = vec![EpochLoss {
            epoch: 0,
            mask: 1.0,
            object: 2.0,
            hierarchical: 3.0,
            total: 3.6,
        }];
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &trace).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,L_mask,L_object,L_hier,total\n0,1,2,3,3.6\n"
        );
    }

    #[test]
    fn params_json_shape() {
        let p = EncoderParams::init(&[4, 3, 3, 2], Geometry::Euclidean, 0).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["dims"], serde_json::json!([4, 3, 3, 2]));
        assert_eq!(v["geometry"], "euclidean");
        assert_eq!(v["layers"][0]["w"].as_array().unwrap().len(), 3);
        let back: EncoderParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
