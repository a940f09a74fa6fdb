//! Heads applied after pooling: batch normalization, the reduction head and
//! the decision (classifier) layer. Forward semantics only.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::Embedding;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub epsilon: f64,
}

impl BnParams {
    /// `γ = 1`, `β = 0`.
    pub fn identity(channels: usize, epsilon: f64) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            epsilon,
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "bn epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.gamma.len() != channels || self.beta.len() != channels {
            return Err(Error::shape(
                "batchnorm",
                format!("gamma/beta of length {channels}"),
                format!("{}/{}", self.gamma.len(), self.beta.len()),
            ));
        }
        Ok(())
    }
}

/// Dense layer `y = W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl LinearParams {
    pub fn new(weight: Array2<f64>, bias: Option<Array1<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.nrows() {
                return Err(Error::shape("LinearParams bias", weight.nrows(), b.len()));
            }
        }
        if weight
            .iter()
            .chain(bias.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("linear parameters"));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the layer to each row of `batch`.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if batch.ncols() != self.in_dim() {
            return Err(Error::shape("linear forward", self.in_dim(), batch.ncols()));
        }
        let mut out = batch.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            out += b;
        }
        Ok(out)
    }
}

/// Normalizes each column with the batch mean and biased (`1/m`) variance,
/// then applies `γ·x̂ + β`.
pub fn batchnorm_forward(batch: ArrayView2<'_, f64>, p: &BnParams) -> Result<Array2<f64>> {
    let m = batch.nrows();
    if m < 2 {
        return Err(Error::Precondition(format!(
            "batchnorm needs at least 2 rows, got {m}"
        )));
    }
    p.check(batch.ncols())?;
    let mean = batch.mean_axis(Axis(0)).expect("m >= 2");
    let centered = &batch - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / m as f64;
    if var.iter().any(|v| v + p.epsilon <= 0.0) {
        return Err(Error::Precondition(
            "constant column with epsilon = 0".into(),
        ));
    }
    let inv_std = var.mapv(|v| 1.0 / (v + p.epsilon).sqrt());
    Ok(centered * &inv_std * &p.gamma + &p.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Dropout {
    /// Identity, as at inference time.
    #[default]
    Inference,
    /// Inverted dropout: zero with probability `prob`, scale survivors by `1/(1-prob)`.
    Train { prob: f64 },
}

/// The reduction head: linear, batchnorm, rectifier, dropout, then the
/// reduction linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionHead {
    pub conv: LinearParams,
    pub bn: BnParams,
    pub reduce: LinearParams,
}

impl ReductionHead {
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<'_, f64>,
        dropout: Dropout,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        if self.reduce.out_dim() >= batch.ncols() {
            return Err(Error::Precondition(format!(
                "reduction must shrink the feature: {} -> {}",
                batch.ncols(),
                self.reduce.out_dim()
            )));
        }
        if self.conv.out_dim() != self.reduce.in_dim() {
            return Err(Error::shape(
                "reduction head",
                self.conv.out_dim(),
                self.reduce.in_dim(),
            ));
        }
        let hidden = self.conv.forward(batch)?;
        let mut hidden = batchnorm_forward(hidden.view(), &self.bn)?;
        hidden.mapv_inplace(|v| v.max(0.0));
        apply_dropout(&mut hidden, dropout, rng)?;
        self.reduce.forward(hidden.view())
    }
}

pub fn reduction_forward<R: Rng + ?Sized>(
    batch: ArrayView2<'_, f64>,
    head: &ReductionHead,
    dropout: Dropout,
    rng: &mut R,
) -> Result<Array2<f64>> {
    head.forward(batch, dropout, rng)
}

fn apply_dropout<R: Rng + ?Sized>(
    x: &mut Array2<f64>,
    dropout: Dropout,
    rng: &mut R,
) -> Result<()> {
    let Dropout::Train { prob } = dropout else {
        return Ok(());
    };
    if !(0.0..1.0).contains(&prob) {
        return Err(Error::InvalidParam(format!(
            "dropout prob must be in [0, 1), got {prob}"
        )));
    }
    if prob == 0.0 {
        return Ok(());
    }
    let keep = 1.0 / (1.0 - prob);
    for v in x.iter_mut() {
        *v = if rng.random::<f64>() < prob {
            0.0
        } else {
            *v * keep
        };
    }
    Ok(())
}

/// Classifier logits `W f (+ b)`.
pub fn decision_logits(f: &Embedding, p: &LinearParams) -> Result<Vec<f64>> {
    if f.len() != p.in_dim() {
        return Err(Error::shape("decision_logits", p.in_dim(), f.len()));
    }
    let mut out = p.weight.dot(&ndarray::ArrayView1::from(f.as_slice()));
    if let Some(b) = &p.bias {
        out += b;
    }
    Ok(out.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::{arr2, Array};
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn bn_two_point_batch() {
        let b = arr2(&[[1.0], [3.0]]);
        let out = batchnorm_forward(b.view(), &BnParams::identity(1, 0.0)).unwrap();
        assert_eq!(out, arr2(&[[-1.0], [1.0]]));
        let p = BnParams {
            gamma: Array1::from(vec![2.0]),
            beta: Array1::from(vec![1.0]),
            epsilon: 0.0,
        };
        assert_eq!(
            batchnorm_forward(b.view(), &p).unwrap(),
            arr2(&[[-1.0], [3.0]])
        );
    }

    #[test]
    fn bn_random_moments() {
        let b = random(16, 4, 1);
        let out = batchnorm_forward(b.view(), &BnParams::identity(4, 1e-12)).unwrap();
        for col in out.columns() {
            let mean = col.sum() / 16.0;
            let var = col.mapv(|v| (v - mean).powi(2)).sum() / 16.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bn_rejects_single_row() {
        let b = arr2(&[[1.0, 2.0]]);
        assert!(matches!(
            batchnorm_forward(b.view(), &BnParams::identity(2, 1e-5)),
            Err(Error::Precondition(_))
        ));
    }

    fn eye(n: usize) -> LinearParams {
        LinearParams::new(Array2::eye(n), None).unwrap()
    }

    #[test]
    fn reduction_with_identity_conv_projects_bn_output() {
        let x = random(6, 4, 2).mapv(f64::abs);
        let reduce = LinearParams::new(random(2, 4, 3), None).unwrap();
        let head = ReductionHead {
            conv: eye(4),
            bn: BnParams::identity(4, 1e-5),
            reduce: reduce.clone(),
        };
        let out = reduction_forward(x.view(), &head, Dropout::Inference, &mut seeded(0)).unwrap();
        let bn = batchnorm_forward(x.view(), &BnParams::identity(4, 1e-5))
            .unwrap()
            .mapv(|v| v.max(0.0));
        let expect = bn.dot(&reduce.weight.t());
        assert!((&out - &expect).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn reduction_rectifier_kill_returns_bias() {
        let x = random(5, 4, 4);
        let bias = Array1::from(vec![0.3, -0.2]);
        let head = ReductionHead {
            conv: eye(4),
            bn: BnParams {
                gamma: Array1::from_elem(4, 0.1),
                beta: Array1::from_elem(4, -10.0),
                epsilon: 1e-5,
            },
            reduce: LinearParams::new(random(2, 4, 5), Some(bias.clone())).unwrap(),
        };
        let out = head
            .forward(x.view(), Dropout::Inference, &mut seeded(0))
            .unwrap();
        for row in out.rows() {
            assert_eq!(row, bias);
        }
    }

    #[test]
    fn reduction_matches_stepwise_oracle() {
        let x = random(8, 16, 6);
        let conv = LinearParams::new(random(16, 16, 7), Some(Array1::from_elem(16, 0.1))).unwrap();
        let bn = BnParams {
            gamma: random(1, 16, 8).row(0).to_owned(),
            beta: random(1, 16, 9).row(0).to_owned(),
            epsilon: 1e-5,
        };
        let reduce =
            LinearParams::new(random(4, 16, 10), Some(Array1::from_elem(4, -0.2))).unwrap();
        let head = ReductionHead {
            conv: conv.clone(),
            bn: bn.clone(),
            reduce: reduce.clone(),
        };
        let out = head
            .forward(x.view(), Dropout::Inference, &mut seeded(0))
            .unwrap();
        assert_eq!(out.dim(), (8, 4));

        // scalar loops, one stage at a time
        let mut h = vec![vec![0.0; 16]; 8];
        for i in 0..8 {
            for o in 0..16 {
                h[i][o] = 0.1
                    + (0..16)
                        .map(|k| conv.weight[[o, k]] * x[[i, k]])
                        .sum::<f64>();
            }
        }
        for c in 0..16 {
            let mu = (0..8).map(|i| h[i][c]).sum::<f64>() / 8.0;
            let var = (0..8).map(|i| (h[i][c] - mu).powi(2)).sum::<f64>() / 8.0;
            for row in h.iter_mut() {
                let v = bn.gamma[c] * (row[c] - mu) / (var + 1e-5).sqrt() + bn.beta[c];
                row[c] = v.max(0.0);
            }
        }
        for i in 0..8 {
            for o in 0..4 {
                let expect = -0.2
                    + (0..16)
                        .map(|k| reduce.weight[[o, k]] * h[i][k])
                        .sum::<f64>();
                assert!((out[[i, o]] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reduction_shape_errors() {
        let x = random(4, 4, 1);
        let grow = ReductionHead {
            conv: eye(4),
            bn: BnParams::identity(4, 1e-5),
            reduce: eye(4),
        };
        assert!(grow
            .forward(x.view(), Dropout::Inference, &mut seeded(0))
            .is_err());
        let mismatch = ReductionHead {
            conv: eye(4),
            bn: BnParams::identity(4, 1e-5),
            reduce: LinearParams::new(random(2, 3, 1), None).unwrap(),
        };
        assert!(matches!(
            mismatch.forward(x.view(), Dropout::Inference, &mut seeded(0)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn training_dropout_is_seeded() {
        let x = random(6, 8, 11).mapv(f64::abs);
        let head = ReductionHead {
            conv: eye(8),
            bn: BnParams::identity(8, 1e-5),
            reduce: LinearParams::new(random(3, 8, 12), None).unwrap(),
        };
        let d = Dropout::Train { prob: 0.5 };
        let a = head.forward(x.view(), d, &mut seeded(4)).unwrap();
        let b = head.forward(x.view(), d, &mut seeded(4)).unwrap();
        let inf = head
            .forward(x.view(), Dropout::Inference, &mut seeded(4))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, inf);
        let p0 = head
            .forward(x.view(), Dropout::Train { prob: 0.0 }, &mut seeded(4))
            .unwrap();
        assert_eq!(p0, inf);
    }

    #[test]
    fn logits_identity_and_argmax() {
        let f = Embedding::new(vec![0.3, -1.0, 2.0]).unwrap();
        assert_eq!(decision_logits(&f, &eye(3)).unwrap(), vec![0.3, -1.0, 2.0]);

        let u = Embedding::unit(vec![0.6, 0.8, 0.0]).unwrap();
        let w = arr2(&[[0.0, 0.0, 1.0], [0.6, 0.8, 0.0], [0.8, -0.6, 0.0]]);
        let logits = decision_logits(&u, &LinearParams::new(w, None).unwrap()).unwrap();
        let best = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(best, 1);
    }

    #[test]
    fn logits_matrix_vector_oracle() {
        let w = random(5, 8, 13);
        let b = Array1::from(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let f = Embedding::new(random(1, 8, 14).row(0).to_vec()).unwrap();
        let p = LinearParams::new(w.clone(), Some(b.clone())).unwrap();
        let out = decision_logits(&f, &p).unwrap();
        for r in 0..5 {
            let mut acc = b[r];
            for k in 0..8 {
                acc += w[[r, k]] * f.as_slice()[k];
            }
            assert!((out[r] - acc).abs() < 1e-12);
        }
        let short = Embedding::new(vec![1.0; 7]).unwrap();
        assert!(decision_logits(&short, &p).is_err());
    }

    proptest! {
        #[test]
        fn bn_normalizes_and_ignores_column_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
            let b = random(10, 3, seed);
            let p = BnParams::identity(3, 1e-10);
            let out = batchnorm_forward(b.view(), &p).unwrap();
            for col in out.columns() {
                let mean = col.sum() / 10.0;
                let var = col.mapv(|v| (v - mean).powi(2)).sum() / 10.0;
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((var - 1.0).abs() <= 1e-6);
            }
            let mut shifted = b.clone();
            shifted.column_mut(1).mapv_inplace(|v| v + shift);
            let out2 = batchnorm_forward(shifted.view(), &p).unwrap();
            prop_assert!((&out - &out2).iter().all(|d| d.abs() <= 1e-9));
        }

        #[test]
        fn logits_are_linear(seed in any::<u64>(), a in -3.0f64..3.0, c in -3.0f64..3.0) {
            let p = LinearParams::new(random(4, 6, seed), None).unwrap();
            let f1 = random(1, 6, seed ^ 1).row(0).to_vec();
            let f2 = random(1, 6, seed ^ 2).row(0).to_vec();
            let mix: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + c * y).collect();
            let l1 = decision_logits(&Embedding::new(f1).unwrap(), &p).unwrap();
            let l2 = decision_logits(&Embedding::new(f2).unwrap(), &p).unwrap();
            let lm = decision_logits(&Embedding::new(mix).unwrap(), &p).unwrap();
            for i in 0..4 {
                prop_assert!((lm[i] - (a * l1[i] + c * l2[i])).abs() <= 1e-9);
            }
        }
    }
}
