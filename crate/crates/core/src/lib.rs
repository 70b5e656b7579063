//! Self-supervised hierarchical embeddings of region proposals in the Poincaré ball,
//! followed by hyperbolic K-means discovery and detection-style evaluation.
//!
//! The pipeline runs end to end on a synthetic stand-in for a class-agnostic
//! mask-proposal network:
//!
//! 1. [`scene`] generates a category hierarchy with a Zipf long tail, scenes with
//!    nested instances, and noisy proposals carrying full/foreground/background features.
//! 2. [`sampler`] draws mask triplets, object triplets and parent/child pairs.
//! 3. [`embedder`] trains a small encoder whose output passes through the exponential
//!    map at the origin, using three triplet losses with analytic gradients.
//! 4. [`cluster`] runs hyperbolic K-means, elbow selection, purity and greedy
//!    one-to-one label assignment.
//! 5. [`evalmod`] scores the labelled clusters as detections (mAP family) and runs ablations.

pub mod cli;
pub mod cluster;
pub mod embedder;
mod error;
pub mod evalmod;
pub mod hypmath;
pub mod pipeline;
pub mod sampler;
pub mod scene;
pub mod seed;

pub use error::{Error, Result};
