//! Training-schedule helpers: warmup/plateau/cosine learning rate, backbone
//! freezing and identity-balanced (PK) batch sampling.

use std::collections::BTreeMap;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ItemMeta;

pub const DEFAULT_FREEZE_ITERS: u64 = 2000;

/// Linear warmup to `base_lr`, flat until `plateau_end_iter`, then cosine
/// decay to `final_lr` at `total_iters`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_start_lr: f64,
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_iters: u64,
    pub plateau_end_iter: u64,
    pub total_iters: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_start_lr: 3.5e-5,
            base_lr: 3.5e-4,
            final_lr: 7.7e-7,
            warmup_iters: 2000,
            plateau_end_iter: 9000,
            total_iters: 18000,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.warmup_start_lr, self.base_lr, self.final_lr];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidParam(format!(
                "learning rates must be finite and >= 0: {rates:?}"
            )));
        }
        if self.warmup_start_lr > self.base_lr || self.final_lr > self.base_lr {
            return Err(Error::InvalidParam(
                "warmup_start_lr and final_lr must not exceed base_lr".into(),
            ));
        }
        if self.total_iters == 0
            || self.warmup_iters > self.plateau_end_iter
            || self.plateau_end_iter > self.total_iters
        {
            return Err(Error::InvalidParam(format!(
                "need warmup_iters <= plateau_end_iter <= total_iters with total_iters > 0, got {} / {} / {}",
                self.warmup_iters, self.plateau_end_iter, self.total_iters
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: u64) -> Result<f64> {
        lr_at(iter, self)
    }
}

pub fn lr_at(iter: u64, s: &LrSchedule) -> Result<f64> {
    s.validate()?;
    if iter > s.total_iters {
        return Err(Error::InvalidParam(format!(
            "iteration {iter} beyond total_iters {}",
            s.total_iters
        )));
    }
    if iter <= s.warmup_iters && s.warmup_iters > 0 {
        let t = iter as f64 / s.warmup_iters as f64;
        // lerp form hits both endpoints exactly
        return Ok(s.warmup_start_lr * (1.0 - t) + s.base_lr * t);
    }
    if iter <= s.plateau_end_iter {
        return Ok(s.base_lr);
    }
    let t = (iter - s.plateau_end_iter) as f64 / (s.total_iters - s.plateau_end_iter) as f64;
    Ok(s.final_lr + (s.base_lr - s.final_lr) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
}

/// Half-open freeze window `[0, freeze_iters)`.
pub fn is_backbone_frozen(iter: u64, freeze_iters: u64) -> bool {
    iter < freeze_iters
}

/// `p` identities with `k` items each per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkSpec {
    pub p: usize,
    pub k: usize,
}

impl Default for PkSpec {
    fn default() -> Self {
        Self { p: 4, k: 16 }
    }
}

/// Draws `p` distinct identities, then `k` items of each. Identities with
/// fewer than `k` items are drawn with replacement. Indices come grouped by
/// identity.
pub fn pk_sample(meta: &[ItemMeta], spec: PkSpec, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if spec.p < 2 || spec.k < 2 {
        return Err(Error::InvalidParam(format!(
            "PK sampling needs P >= 2 and K >= 2, got {spec:?}"
        )));
    }
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        by_id.entry(m.person_id).or_default().push(i);
    }
    if by_id.len() < spec.p {
        return Err(Error::Precondition(format!(
            "PK sampling needs {} identities, found {}",
            spec.p,
            by_id.len()
        )));
    }
    let groups: Vec<&Vec<usize>> = by_id.values().collect();
    let mut batch = Vec::with_capacity(spec.p * spec.k);
    for &g in index::sample(rng, groups.len(), spec.p)
        .iter()
        .map(|i| &groups[i])
        .collect::<Vec<_>>()
    {
        if g.len() >= spec.k {
            batch.extend(index::sample(rng, g.len(), spec.k).iter().map(|i| g[i]));
        } else {
            batch.extend((0..spec.k).map(|_| *g.choose(rng).expect("groups are non-empty")));
        }
    }
    Ok(batch)
}
