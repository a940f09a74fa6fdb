//! Training losses with analytic gradients with respect to their direct
//! inputs (logits, cosines, similarities or distances).

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dot, Embedding, UNIT_NORM_TOL};

/// A loss value and its gradient with respect to a single input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// `ln Σ exp(x)`, or `-∞` for an empty slice.
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Label-smoothed one-hot target: `1 − δ` on the true class and
/// `δ / (C − 1)` on every other class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedTarget {
    pub class: usize,
    pub num_classes: usize,
    pub delta: f64,
}

impl SmoothedTarget {
    pub const DEFAULT_DELTA: f64 = 0.1;

    pub fn new(class: usize, num_classes: usize, delta: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParam(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if class >= num_classes {
            return Err(Error::InvalidParam(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidParam(format!(
                "label smoothing delta must be in [0, 1), got {delta}"
            )));
        }
        Ok(Self {
            class,
            num_classes,
            delta,
        })
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        Self::new(class, num_classes, 0.0)
    }

    pub fn probs(&self) -> Vec<f64> {
        let off = self.delta / (self.num_classes - 1) as f64;
        (0..self.num_classes)
            .map(|j| {
                if j == self.class {
                    1.0 - self.delta
                } else {
                    off
                }
            })
            .collect()
    }
}

/// How the smoothed target is scored against the softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CeForm {
    /// `−Σ yᵢ log ŷᵢ`.
    #[default]
    Categorical,
    /// `−Σ [yᵢ log ŷᵢ + (1 − yᵢ) log(1 − ŷᵢ)]`: a binary term per class on
    /// top of the softmax.
    BinaryPerClass,
}

/// Probability floor inside the logarithms of [`CeForm::BinaryPerClass`].
const PROB_FLOOR: f64 = 1e-300;

pub fn cross_entropy_ls(logits: &[f64], target: &SmoothedTarget) -> Result<LossGrad> {
    cross_entropy_ls_with(logits, target, CeForm::Categorical)
}

/// Cross-entropy of `logits` against a smoothed target; the gradient is with
/// respect to the logits.
pub fn cross_entropy_ls_with(
    logits: &[f64],
    target: &SmoothedTarget,
    form: CeForm,
) -> Result<LossGrad> {
    if logits.len() != target.num_classes {
        return Err(Error::shape(
            "cross_entropy_ls",
            target.num_classes,
            logits.len(),
        ));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let y = target.probs();
    match form {
        CeForm::Categorical => {
            let logp = log_softmax(logits);
            let p = softmax_probs(logits);
            let loss = -y.iter().zip(&logp).map(|(yi, lp)| yi * lp).sum::<f64>();
            let grad = p.iter().zip(&y).map(|(pi, yi)| pi - yi).collect();
            Ok(LossGrad { loss, grad })
        }
        CeForm::BinaryPerClass => {
            let p = softmax_probs(logits);
            let mut loss = 0.0;
            // dL/dp_i, then through the softmax Jacobian
            let mut g = vec![0.0; p.len()];
            for i in 0..p.len() {
                let pi = p[i].clamp(PROB_FLOOR, 1.0 - f64::EPSILON);
                loss -= y[i] * pi.ln() + (1.0 - y[i]) * (1.0 - pi).ln();
                g[i] = -y[i] / pi + (1.0 - y[i]) / (1.0 - pi);
            }
            let gp: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
            let grad = p.iter().zip(&g).map(|(pj, gj)| pj * (gj - gp)).collect();
            Ok(LossGrad { loss, grad })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcfaceParams {
    pub scale: f64,
    pub margin: f64,
}

impl ArcfaceParams {
    pub fn new(scale: f64, margin: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "arcface scale must be > 0, got {scale}"
            )));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::InvalidParam(format!(
                "arcface margin must be in [0, pi/2), got {margin}"
            )));
        }
        Ok(Self { scale, margin })
    }
}

impl Default for ArcfaceParams {
    fn default() -> Self {
        Self {
            scale: 64.0,
            margin: 0.5,
        }
    }
}

/// ArcFace logits for an L2-normalized feature against L2-normalized class
/// weights (one class per row of `weights`).
pub fn arcface_logits(
    f: &Embedding,
    weights: ArrayView2<'_, f64>,
    target: usize,
    p: &ArcfaceParams,
) -> Result<Vec<f64>> {
    if weights.ncols() != f.len() {
        return Err(Error::shape("arcface_logits", f.len(), weights.ncols()));
    }
    if target >= weights.nrows() {
        return Err(Error::InvalidParam(format!(
            "target class {target} out of range"
        )));
    }
    if (f.norm() - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::NotNormalized("arcface feature"));
    }
    let mut cosines = Vec::with_capacity(weights.nrows());
    for row in weights.rows() {
        let row = row.to_vec();
        if (crate::types::norm(&row) - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized("arcface class weight"));
        }
        cosines.push(dot(&row, f.as_slice()));
    }
    Ok(arcface_logits_from_cosines(&cosines, target, p))
}

/// `s·cos(θ_c + m)` for the target class, `s·cos θ_i` elsewhere.
pub fn arcface_logits_from_cosines(cosines: &[f64], target: usize, p: &ArcfaceParams) -> Vec<f64> {
    if p.margin == 0.0 {
        return cosines.iter().map(|c| p.scale * c).collect();
    }
    cosines
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let c = c.clamp(-1.0, 1.0);
            if i == target {
                p.scale * (c.acos() + p.margin).cos()
            } else {
                p.scale * c
            }
        })
        .collect()
}

/// Cross-entropy over ArcFace logits; the gradient is with respect to the
/// cosines `W_i · f`.
pub fn arcface_loss(
    cosines: &[f64],
    target: &SmoothedTarget,
    p: &ArcfaceParams,
) -> Result<LossGrad> {
    if cosines.len() != target.num_classes {
        return Err(Error::shape(
            "arcface_loss",
            target.num_classes,
            cosines.len(),
        ));
    }
    let logits = arcface_logits_from_cosines(cosines, target.class, p);
    let ce = cross_entropy_ls(&logits, target)?;
    let grad = ce
        .grad
        .iter()
        .zip(cosines)
        .enumerate()
        .map(|(i, (g, &c))| {
            if i != target.class {
                return g * p.scale;
            }
            // d/dx cos(acos x + m) = cos m + sin m · x / sqrt(1 − x²)
            let c = c.clamp(-1.0, 1.0);
            let sin = (1.0 - c * c).sqrt();
            let slope = if sin > 0.0 {
                p.margin.cos() + p.margin.sin() * c / sin
            } else {
                p.margin.cos()
            };
            g * p.scale * slope
        })
        .collect();
    Ok(LossGrad {
        loss: ce.loss,
        grad,
    })
}

/// Circle loss hyper-parameters: `gamma` is the scale, `margin` the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleParams {
    pub gamma: f64,
    pub margin: f64,
}

impl Default for CircleParams {
    fn default() -> Self {
        Self {
            gamma: 80.0,
            margin: 0.25,
        }
    }
}

impl CircleParams {
    pub fn new(gamma: f64, margin: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "circle gamma must be > 0, got {gamma}"
            )));
        }
        if !(margin > 0.0 && margin < 1.0) {
            return Err(Error::InvalidParam(format!(
                "circle margin must be in (0, 1), got {margin}"
            )));
        }
        Ok(Self { gamma, margin })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleGrad {
    pub loss: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

/// Pair-wise circle loss
/// `log(1 + Σₙ exp(γ αₙ (sₙ − m)) · Σₚ exp(−γ αₚ (sₚ − 1 + m)))`
/// with `αₚ = [1 + m − sₚ]₊` and `αₙ = [sₙ + m]₊`.
///
/// Gradients are those of this function, including the dependence of the
/// adaptive weights on the similarities.
pub fn circle_loss(sim_pos: &[f64], sim_neg: &[f64], p: &CircleParams) -> Result<CircleGrad> {
    if sim_pos.is_empty() {
        return Err(Error::Empty("circle loss positive set"));
    }
    if sim_neg.is_empty() {
        return Err(Error::Empty("circle loss negative set"));
    }
    if sim_pos.iter().chain(sim_neg).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("circle loss similarities"));
    }
    let (g, m) = (p.gamma, p.margin);
    let pos_logit: Vec<f64> = sim_pos
        .iter()
        .map(|&s| -g * (1.0 + m - s).max(0.0) * (s - 1.0 + m))
        .collect();
    let neg_logit: Vec<f64> = sim_neg
        .iter()
        .map(|&s| g * (s + m).max(0.0) * (s - m))
        .collect();
    let (lse_p, lse_n) = (log_sum_exp(&pos_logit), log_sum_exp(&neg_logit));
    let total = lse_p + lse_n;
    let loss = softplus(total);
    let outer = sigmoid(total);

    let grad_pos = sim_pos
        .iter()
        .zip(&pos_logit)
        .map(|(&s, &z)| {
            let w = (z - lse_p).exp();
            let alpha = 1.0 + m - s;
            let dz = if alpha > 0.0 {
                -g * (alpha - (s - 1.0 + m))
            } else {
                0.0
            };
            outer * w * dz
        })
        .collect();
    let grad_neg = sim_neg
        .iter()
        .zip(&neg_logit)
        .map(|(&s, &z)| {
            let w = (z - lse_n).exp();
            let alpha = s + m;
            let dz = if alpha > 0.0 {
                g * (alpha + (s - m))
            } else {
                0.0
            };
            outer * w * dz
        })
        .collect();
    Ok(CircleGrad {
        loss,
        grad_pos,
        grad_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TripletForm {
    /// `[m + d_ap − d_an]₊`
    #[default]
    Hinge,
    /// `log(1 + exp(d_ap − d_an))`; the margin is unused.
    SoftMargin,
    /// `m + d_ap − d_an` without the clamp.
    Unclamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletParams {
    pub margin: f64,
    pub form: TripletForm,
}

impl Default for TripletParams {
    fn default() -> Self {
        Self {
            margin: 0.3,
            form: TripletForm::Hinge,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub grad_ap: Vec<f64>,
    pub grad_an: Vec<f64>,
}

/// Sum of per-triplet losses over aligned anchor-positive and
/// anchor-negative distances.
pub fn triplet_loss(dist_ap: &[f64], dist_an: &[f64], p: &TripletParams) -> Result<TripletGrad> {
    if dist_ap.len() != dist_an.len() {
        return Err(Error::shape("triplet_loss", dist_ap.len(), dist_an.len()));
    }
    if p.margin.is_nan() || p.margin < 0.0 {
        return Err(Error::InvalidParam(format!(
            "triplet margin must be >= 0, got {}",
            p.margin
        )));
    }
    let mut loss = 0.0;
    let mut grad_ap = Vec::with_capacity(dist_ap.len());
    for (&ap, &an) in dist_ap.iter().zip(dist_an) {
        let (l, g) = match p.form {
            TripletForm::Hinge => {
                let v = p.margin + ap - an;
                if v > 0.0 {
                    (v, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            TripletForm::SoftMargin => (softplus(ap - an), sigmoid(ap - an)),
            TripletForm::Unclamped => (p.margin + ap - an, 1.0),
        };
        loss += l;
        grad_ap.push(g);
    }
    let grad_an = grad_ap.iter().map(|g| -g).collect();
    Ok(TripletGrad {
        loss,
        grad_ap,
        grad_an,
    })
}

/// Hardest positive and negative of every anchor in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HardPairs {
    pub dist_ap: Vec<f64>,
    pub dist_an: Vec<f64>,
    pub pos_index: Vec<usize>,
    pub neg_index: Vec<usize>,
}

/// For each anchor, the farthest same-label sample (self excluded) and the
/// nearest different-label sample. Ties resolve to the lowest index.
pub fn batch_hard_mine(dist: ArrayView2<'_, f64>, labels: &[u32]) -> Result<HardPairs> {
    let n = labels.len();
    if dist.dim() != (n, n) {
        return Err(Error::shape(
            "batch_hard_mine",
            format!("{n}x{n}"),
            format!("{:?}", dist.dim()),
        ));
    }
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Precondition(
            "batch-hard mining needs at least 2 distinct labels".into(),
        ));
    }
    if let Some((l, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Precondition(format!(
            "label {l} appears only once in the batch"
        )));
    }
    let mut out = HardPairs {
        dist_ap: Vec::with_capacity(n),
        dist_an: Vec::with_capacity(n),
        pos_index: Vec::with_capacity(n),
        neg_index: Vec::with_capacity(n),
    };
    for a in 0..n {
        let row = dist.row(a);
        let mut pos = (usize::MAX, f64::NEG_INFINITY);
        let mut neg = (usize::MAX, f64::INFINITY);
        for (j, &d) in row.iter().enumerate() {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if d > pos.1 {
                    pos = (j, d);
                }
            } else if d < neg.1 {
                neg = (j, d);
            }
        }
        out.pos_index.push(pos.0);
        out.dist_ap.push(pos.1);
        out.neg_index.push(neg.0);
        out.dist_an.push(neg.1);
    }
    Ok(out)
}

/// Relative weights of the two metric losses trained together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReidLossWeights {
    pub circle: f64,
    pub triplet: f64,
}

impl Default for ReidLossWeights {
    fn default() -> Self {
        Self {
            circle: 1.0,
            triplet: 1.0,
        }
    }
}

impl ReidLossWeights {
    pub fn combine(&self, circle: f64, triplet: f64) -> f64 {
        self.circle * circle + self.triplet * triplet
    }
}
