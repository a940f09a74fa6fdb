//! Synthetic identity-clustered embeddings for desk-scale evaluation.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use reid_core::rng::seeded;
use reid_core::{Embedding, ItemMeta};

use crate::error::{CliError, Result};
use crate::io::{save_embeddings, FloatWidth};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub num_ids: usize,
    pub per_id: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub query: Vec<Embedding>,
    pub query_meta: Vec<ItemMeta>,
    pub gallery: Vec<Embedding>,
    pub gallery_meta: Vec<ItemMeta>,
}

fn unit(v: Vec<f64>) -> Result<Embedding> {
    Ok(reid_core::l2_normalize(&Embedding::new(v)?)?)
}

/// Per identity: a random unit mean; each item is the mean plus isotropic
/// Gaussian noise, renormalized. Item 0 of each identity becomes the query,
/// the rest go to the gallery. Item `k` is seen by camera `k % 2`.
pub fn synthesize(p: &SynthParams) -> Result<SynthData> {
    if p.per_id < 2 {
        return Err(CliError::Config(format!(
            "per_id must be at least 2, got {}",
            p.per_id
        )));
    }
    if p.num_ids == 0 || p.dim == 0 {
        return Err(CliError::Config("num_ids and dim must be positive".into()));
    }
    let bad_sigma = || {
        CliError::Config(format!(
            "noise_sigma must be finite and >= 0, got {}",
            p.noise_sigma
        ))
    };
    if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
        return Err(bad_sigma());
    }
    let noise = Normal::new(0.0, p.noise_sigma).map_err(|_| bad_sigma())?;
    let mut rng = seeded(p.seed);
    let mut data = SynthData {
        query: Vec::with_capacity(p.num_ids),
        query_meta: Vec::with_capacity(p.num_ids),
        gallery: Vec::with_capacity(p.num_ids * (p.per_id - 1)),
        gallery_meta: Vec::with_capacity(p.num_ids * (p.per_id - 1)),
    };
    for id in 0..p.num_ids {
        let mean = unit(sample_nonzero(&mut rng, p.dim))?;
        for k in 0..p.per_id {
            let item: Vec<f64> = mean
                .as_slice()
                .iter()
                .map(|m| m + noise.sample(&mut rng))
                .collect();
            let emb = unit(item)?;
            let meta = ItemMeta::new(format!("id{id:04}_{k:03}"), id as u32, (k % 2) as u32);
            if k == 0 {
                data.query.push(emb);
                data.query_meta.push(meta);
            } else {
                data.gallery.push(emb);
                data.gallery_meta.push(meta);
            }
        }
    }
    Ok(data)
}

fn sample_nonzero(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|x: &f64| *x != 0.0) {
            return v;
        }
    }
}

/// Writes `query.reid`/`query.csv` and `gallery.reid`/`gallery.csv` into
/// `out_dir`.
pub fn gen_synthetic(p: &SynthParams, out_dir: &Path, width: FloatWidth) -> Result<SynthData> {
    let data = synthesize(p)?;
    save_embeddings(
        &out_dir.join("query.reid"),
        &data.query,
        &data.query_meta,
        width,
    )?;
    save_embeddings(
        &out_dir.join("gallery.reid"),
        &data.gallery,
        &data.gallery_meta,
        width,
    )?;
    Ok(data)
}
