//! Global pooling of a feature map into one vector per image.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Embedding, FeatureMap};

/// Floor applied to activations before the GeM power.
pub const GEM_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemParams {
    pub alpha: f64,
}

impl Default for GemParams {
    fn default() -> Self {
        Self { alpha: 3.0 }
    }
}

impl GemParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "GeM alpha must be >= 1, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }
}

/// Non-negative spatial weights with the same `[w, h, c]` layout as the map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    data: Array3<f64>,
}

impl AttentionWeights {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParam(
                "attention weights must be finite and non-negative".into(),
            ));
        }
        for (c, lane) in data.axis_iter(Axis(2)).enumerate() {
            if lane.sum() <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "attention weights of channel {c} sum to zero"
                )));
            }
        }
        Ok(Self { data })
    }

    /// Softmax over the spatial positions of each channel of `scores`.
    pub fn softmax(scores: &Array3<f64>) -> Result<Self> {
        let mut data = scores.clone();
        for mut lane in data.axis_iter_mut(Axis(2)) {
            let max = lane.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            lane.mapv_inplace(|x| (x - max).exp());
            let total = lane.sum();
            lane.mapv_inplace(|x| x / total);
        }
        Self::new(data)
    }

    /// One weight map shared by all `channels`.
    pub fn shared(spatial: &ndarray::Array2<f64>, channels: usize) -> Result<Self> {
        let (w, h) = spatial.dim();
        Self::new(Array3::from_shape_fn((w, h, channels), |(i, j, _)| {
            spatial[[i, j]]
        }))
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

fn per_channel(x: &FeatureMap, f: impl Fn(&mut dyn Iterator<Item = f64>) -> f64) -> Embedding {
    let values = (0..x.channels()).map(|c| f(&mut x.channel(c))).collect();
    Embedding::new(values).expect("pooling a valid feature map yields finite values")
}

pub fn max_pool(x: &FeatureMap) -> Embedding {
    per_channel(x, |it| it.fold(f64::NEG_INFINITY, f64::max))
}

pub fn avg_pool(x: &FeatureMap) -> Embedding {
    let n = x.positions() as f64;
    per_channel(x, |it| it.sum::<f64>() / n)
}

/// Generalized mean `(mean xᵅ)^(1/α)` per channel, after flooring inputs at
/// [`GEM_CLAMP`]. Evaluated relative to the channel maximum so large `α`
/// does not overflow.
pub fn gem_pool(x: &FeatureMap, p: GemParams) -> Embedding {
    let n = x.positions() as f64;
    let alpha = p.alpha;
    per_channel(x, |it| {
        let vals: Vec<f64> = it.map(|v| v.max(GEM_CLAMP)).collect();
        if alpha == 1.0 {
            return vals.iter().sum::<f64>() / n;
        }
        let peak = vals.iter().copied().fold(GEM_CLAMP, f64::max);
        let mean = vals.iter().map(|v| (v / peak).powf(alpha)).sum::<f64>() / n;
        peak * mean.powf(1.0 / alpha)
    })
}

/// Attention-weighted mean: `Σ w·x / Σ w` per channel.
pub fn attention_pool(x: &FeatureMap, w: &AttentionWeights) -> Result<Embedding> {
    let shape = (x.width(), x.height(), x.channels());
    if w.dim() != shape {
        return Err(Error::shape(
            "attention_pool",
            format!("{shape:?}"),
            format!("{:?}", w.dim()),
        ));
    }
    let xv = x.view();
    let values = (0..shape.2)
        .map(|c| {
            let xs = xv.index_axis(Axis(2), c);
            let ws = w.data.index_axis(Axis(2), c);
            let num: f64 = xs.iter().zip(ws.iter()).map(|(a, b)| a * b).sum();
            num / ws.sum()
        })
        .collect();
    Embedding::new(values)
}
