//! Framework-free re-identification math.
//!
//! The crate covers the full path from an image tensor to an evaluation report:
//!
//! - [`augment`]: flipping, resizing, random erasing, cutout and random patch
//! - [`aggregation`]: max / average / GeM / attention pooling of feature maps
//! - [`head`]: batch normalization, reduction head and decision layer
//! - [`losses`]: label-smoothed cross-entropy, ArcFace, circle and triplet losses
//! - [`distill`]: logit L1 and probabilistic knowledge transfer
//! - [`retrieval`]: distances, DSR matching, query expansion, k-reciprocal re-ranking
//! - [`metrics`]: CMC, mAP, mINP and ROC
//! - [`schedule`]: warmup / cosine learning rate, backbone freeze, PK sampling
//!
//! All arithmetic is `f64`. Every stochastic operator takes an explicit
//! generator (see [`rng`]) so runs replay bit-exactly from a seed.

pub mod aggregation;
pub mod augment;
pub mod distill;
pub mod error;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod retrieval;
pub mod rng;
pub mod schedule;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    l2_normalize, validate_meta_set, DistanceMatrix, Embedding, FeatureMap, ImageTensor, ItemMeta,
};
