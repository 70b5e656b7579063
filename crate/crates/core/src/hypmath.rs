//! Poincaré-ball geometry at curvature -1.
//!
//! Points live strictly inside the unit ball, clipped to radius `1 - EPS_BALL`.
//! Distances use the half-angle form `d = 2 asinh(|x - y| / sqrt((1-|x|^2)(1-|y|^2)))`,
//! which equals `acosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2)))` but stays well conditioned
//! when the two points nearly coincide.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clipping margin of the ball.
pub const EPS_BALL: f64 = 1e-5;

/// Largest admissible Euclidean norm of a ball point.
pub const MAX_NORM: f64 = 1.0 - EPS_BALL;

// Slack for the rounding of the final rescale in `project_to_ball`.
const NORM_SLACK: f64 = 1e-12;

// Pairs closer than this are treated as coincident by the gradients.
const COINCIDENT: f64 = 1e-12;

/// Embedding geometry: the Poincaré ball or flat Euclidean space (the ablation baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    #[default]
    Poincare,
    Euclidean,
}

impl Geometry {
    pub fn distance(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Geometry::Poincare => dist(x, y),
            Geometry::Euclidean => sq_dist(x, y).sqrt(),
        }
    }

    /// Distance to the origin.
    pub fn origin_distance(self, x: &[f64]) -> f64 {
        match self {
            Geometry::Poincare => 2.0 * norm(x).atanh(),
            Geometry::Euclidean => norm(x),
        }
    }

    /// Adds `scale * ∂d(x, y)/∂x` into `out`. Returns `false` (adding nothing) when the
    /// points coincide, where the distance has no gradient.
    pub fn accumulate_grad(self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> bool {
        match self {
            Geometry::Poincare => accumulate_dist_grad(x, y, scale, out),
            Geometry::Euclidean => {
                let r = sq_dist(x, y).sqrt();
                if r < COINCIDENT {
                    return false;
                }
                for i in 0..x.len() {
                    out[i] += scale * (x[i] - y[i]) / r;
                }
                true
            }
        }
    }

    /// Adds `scale * ∂d(x, o)/∂x` into `out`; `false` at the origin itself.
    pub fn accumulate_origin_grad(self, x: &[f64], scale: f64, out: &mut [f64]) -> bool {
        let n = norm(x);
        if n < COINCIDENT {
            return false;
        }
        let factor = match self {
            Geometry::Poincare => 2.0 / (n * (1.0 - n * n)),
            Geometry::Euclidean => 1.0 / n,
        };
        for i in 0..x.len() {
            out[i] += scale * factor * x[i];
        }
        true
    }
}

/// A point strictly inside the unit Poincaré ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("ball point coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("ball point"));
        }
        let n = norm(&coords);
        if n > MAX_NORM + NORM_SLACK {
            return Err(Error::OutsideBall {
                norm: n,
                limit: MAX_NORM,
            });
        }
        Ok(BallPoint(coords))
    }

    pub fn origin(dim: usize) -> Self {
        BallPoint(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for BallPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for BallPoint {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        BallPoint::new(v)
    }
}

impl From<BallPoint> for Vec<f64> {
    fn from(p: BallPoint) -> Vec<f64> {
        p.0
    }
}

/// Pre-image of the exponential map at the origin. No norm bound.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(pub Vec<f64>);

impl Deref for TangentVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Poincaré distance on raw coordinates; callers guarantee both lie in the ball.
pub(crate) fn dist(x: &[f64], y: &[f64]) -> f64 {
    let alpha = 1.0 - dot(x, x);
    let beta = 1.0 - dot(y, y);
    let r2 = sq_dist(x, y);
    2.0 * (r2 / (alpha * beta)).sqrt().asinh()
}

/// Hyperbolic distance between two ball points.
pub fn poincare_distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    check_dims(x, y)?;
    Ok(dist(x, y))
}

/// ∂d(x,y)/∂x = 2 / sqrt(αβ + r²) · ((x - y)/r + r·x/α), with α = 1-|x|², β = 1-|y|², r = |x-y|.
fn accumulate_dist_grad(x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> bool {
    let r = sq_dist(x, y).sqrt();
    if r < COINCIDENT {
        return false;
    }
    let alpha = 1.0 - dot(x, x);
    let beta = 1.0 - dot(y, y);
    let lead = 2.0 / (alpha * beta + r * r).sqrt();
    for i in 0..x.len() {
        out[i] += scale * lead * ((x[i] - y[i]) / r + r * x[i] / alpha);
    }
    true
}

/// Gradients of the Poincaré distance with respect to both arguments.
pub fn distance_grad(x: &BallPoint, y: &BallPoint) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(x, y)?;
    let mut gx = vec![0.0; x.dim()];
    let mut gy = vec![0.0; y.dim()];
    if !accumulate_dist_grad(x, y, 1.0, &mut gx) {
        return Err(Error::CoincidentPoints);
    }
    accumulate_dist_grad(y, x, 1.0, &mut gy);
    Ok((gx, gy))
}

/// Rescales `v` onto the clipping radius when it lies outside it.
pub fn project_to_ball(v: &[f64]) -> Result<BallPoint> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    BallPoint::new(project_raw(v))
}

pub(crate) fn project_raw(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n <= MAX_NORM {
        v.to_vec()
    } else {
        let s = MAX_NORM / n;
        v.iter().map(|c| c * s).collect()
    }
}

/// `exp_0(v) = tanh(|v|) v / |v|`, followed by clipping.
pub fn exp_map_origin(v: &TangentVector) -> BallPoint {
    let n = norm(v);
    if n == 0.0 {
        return BallPoint::origin(v.len());
    }
    let s = n.tanh() / n;
    let p: Vec<f64> = v.iter().map(|c| c * s).collect();
    BallPoint(project_raw(&p))
}

/// Inverse of [`exp_map_origin`]: `log_0(p) = artanh(|p|) p / |p|`.
pub fn log_map_origin(p: &BallPoint) -> TangentVector {
    let n = p.norm();
    if n == 0.0 {
        return TangentVector(vec![0.0; p.dim()]);
    }
    let s = n.atanh() / n;
    TangentVector(p.iter().map(|c| c * s).collect())
}

fn mobius_add(x: &[f64], y: &[f64]) -> Vec<f64> {
    let xy = dot(x, y);
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let den = 1.0 + 2.0 * xy + x2 * y2;
    let a = (1.0 + 2.0 * xy + y2) / den;
    let b = (1.0 - x2) / den;
    x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect()
}

/// Exponential map at base point `x`: `x ⊕ tanh(λ_x |v| / 2) v / |v|`.
fn exp_map_at(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return x.to_vec();
    }
    let lambda = 2.0 / (1.0 - dot(x, x));
    let s = (0.5 * lambda * n).tanh() / n;
    let step: Vec<f64> = v.iter().map(|c| c * s).collect();
    project_raw(&mobius_add(x, &step))
}

#[derive(Debug, Clone)]
pub struct FrechetMean {
    pub point: BallPoint,
    pub iterations: usize,
    /// Riemannian gradient norm of the objective at `point`.
    pub residual: f64,
}

const FRECHET_MAX_ITER: usize = 200;
const FRECHET_TOL: f64 = 1e-8;
const FRECHET_STEP: f64 = 0.2;

fn frechet_objective(c: &[f64], points: &[BallPoint], weights: &[f64]) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            let d = dist(c, p);
            w * d * d
        })
        .sum()
}

// Euclidean gradient of Σ w d(c,p)², and the Riemannian norm |g| / λ_c.
fn frechet_gradient(c: &[f64], points: &[BallPoint], weights: &[f64]) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; c.len()];
    for (p, w) in points.iter().zip(weights) {
        let d = dist(c, p);
        accumulate_dist_grad(c, p, 2.0 * w * d, &mut g);
    }
    let lambda = 2.0 / (1.0 - dot(c, c));
    let residual = norm(&g) / lambda;
    (g, residual)
}

/// Weighted Fréchet mean by Riemannian gradient descent.
///
/// Starts from the exponential map of the weighted tangent-space average at the origin;
/// each iteration tries a step of 0.2 and halves it until the objective does not increase.
pub fn frechet_mean(points: &[BallPoint], weights: &[f64]) -> Result<FrechetMean> {
    let Some(first) = points.first() else {
        return Err(Error::Empty("frechet_mean points"));
    };
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("weights sum to {total}, not 1")));
    }
    let dim = first.dim();
    for p in points {
        check_dims(first, p)?;
    }

    let mut init = vec![0.0; dim];
    for (p, w) in points.iter().zip(weights) {
        let t = log_map_origin(p);
        for i in 0..dim {
            init[i] += w * t[i];
        }
    }
    let mut c = exp_map_origin(&TangentVector(init)).into_inner();
    let mut f = frechet_objective(&c, points, weights);
    let (mut g, mut residual) = frechet_gradient(&c, points, weights);
    let mut iterations = 0;

    'outer: while residual >= FRECHET_TOL && iterations < FRECHET_MAX_ITER {
        iterations += 1;
        let lambda = 2.0 / (1.0 - dot(&c, &c));
        let inv_metric = 1.0 / (lambda * lambda);
        let mut step = FRECHET_STEP;
        loop {
            let v: Vec<f64> = g.iter().map(|gi| -step * gi * inv_metric).collect();
            let candidate = exp_map_at(&c, &v);
            let f_new = frechet_objective(&candidate, points, weights);
            // Near the optimum the decrease drops below rounding noise in `f`.
            if f_new <= f + 8.0 * f64::EPSILON * f.abs() {
                c = candidate;
                f = f_new;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                break 'outer;
            }
        }
        (g, residual) = frechet_gradient(&c, points, weights);
    }

    Ok(FrechetMean {
        point: BallPoint(c),
        iterations,
        residual,
    })
}

/// Fréchet mean with equal weights.
pub fn frechet_mean_uniform(points: &[BallPoint]) -> Result<BallPoint> {
    let w = vec![1.0 / points.len().max(1) as f64; points.len()];
    Ok(frechet_mean(points, &w)?.point)
}
