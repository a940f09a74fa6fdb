//! Knowledge distillation objectives: L1 logit matching and probabilistic
//! knowledge transfer (PKT) between teacher and student feature geometry.
//!
//! Teacher quantities are constants; every gradient is with respect to the
//! student side only.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for student conditional probabilities inside the KL logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// One distillation batch of `m` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KdBatch {
    pub student_logits: Array2<f64>,
    pub teacher_logits: Array2<f64>,
    pub student_feats: Array2<f64>,
    pub teacher_feats: Array2<f64>,
}

impl KdBatch {
    pub fn validate(&self) -> Result<()> {
        let m = self.student_logits.nrows();
        if m < 2 {
            return Err(Error::Precondition(format!(
                "distillation batch needs m >= 2, got {m}"
            )));
        }
        if self.teacher_logits.dim() != self.student_logits.dim() {
            return Err(Error::shape(
                "KdBatch logits",
                format!("{:?}", self.student_logits.dim()),
                format!("{:?}", self.teacher_logits.dim()),
            ));
        }
        if self.student_feats.nrows() != m || self.teacher_feats.nrows() != m {
            return Err(Error::shape(
                "KdBatch features",
                m,
                format!(
                    "{}/{}",
                    self.student_feats.nrows(),
                    self.teacher_feats.nrows()
                ),
            ));
        }
        Ok(())
    }
}

/// Weight `α` of the PKT term in the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdWeights {
    pub alpha: f64,
}

impl Default for KdWeights {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLossGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
}

/// `‖l_s − l_t‖₁` with subgradient `sign(l_s − l_t)` (zero at ties).
pub fn logit_l1(
    student: ArrayView2<'_, f64>,
    teacher: ArrayView2<'_, f64>,
) -> Result<MatrixLossGrad> {
    if student.dim() != teacher.dim() {
        return Err(Error::shape(
            "logit_l1",
            format!("{:?}", student.dim()),
            format!("{:?}", teacher.dim()),
        ));
    }
    let diff = &student - &teacher;
    let loss = diff.iter().map(|d| d.abs()).sum();
    let grad = diff.mapv(|d| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    Ok(MatrixLossGrad { loss, grad })
}

fn unit_rows(feats: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut unit = feats.to_owned();
    let mut norms = Vec::with_capacity(feats.nrows());
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let n = crate::types::norm(row.as_slice().expect("owned rows are contiguous"));
        if n == 0.0 {
            return Err(Error::Precondition(format!(
                "feature row {i} has zero norm"
            )));
        }
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    Ok((unit, norms))
}

/// Pairwise geometry of one feature matrix: cosines, kernel and conditionals.
struct Conditionals {
    unit: Array2<f64>,
    norms: Vec<f64>,
    cosine: Array2<f64>,
    kernel: Array2<f64>,
    row_sum: Vec<f64>,
    probs: Array2<f64>,
}

fn conditionals(feats: ArrayView2<'_, f64>) -> Result<Conditionals> {
    let m = feats.nrows();
    if m < 2 {
        return Err(Error::Precondition(format!(
            "conditional probabilities need m >= 2, got {m}"
        )));
    }
    let (unit, norms) = unit_rows(feats)?;
    let cosine = unit.dot(&unit.t()).mapv(|c| c.clamp(-1.0, 1.0));
    let mut kernel = cosine.mapv(|c| (c + 1.0) / 2.0);
    kernel.diag_mut().fill(0.0);
    let row_sum: Vec<f64> = kernel.rows().into_iter().map(|r| r.sum()).collect();
    let mut probs = kernel.clone();
    for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
        if row_sum[i] > 0.0 {
            row.mapv_inplace(|k| k / row_sum[i]);
        } else {
            // every other sample is antipodal: no preference
            row.fill(1.0 / (m - 1) as f64);
            row[i] = 0.0;
        }
    }
    Ok(Conditionals {
        unit,
        norms,
        cosine,
        kernel,
        row_sum,
        probs,
    })
}

/// `p(j | i)`: shifted-cosine kernel `(cos + 1) / 2` normalized over `j ≠ i`.
/// Rows sum to one and the diagonal is zero.
pub fn conditional_probs(feats: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(conditionals(feats)?.probs)
}

/// `Σᵢ Σ_{j≠i} pᵗ(j|i) · log(pᵗ(j|i) / pˢ(j|i))` with the teacher as the
/// reference distribution. Student and teacher widths may differ.
pub fn pkt_loss(
    student: ArrayView2<'_, f64>,
    teacher: ArrayView2<'_, f64>,
) -> Result<MatrixLossGrad> {
    if student.nrows() != teacher.nrows() {
        return Err(Error::shape(
            "pkt_loss rows",
            teacher.nrows(),
            student.nrows(),
        ));
    }
    let s = conditionals(student)?;
    let t = conditionals(teacher)?;
    let m = student.nrows();

    let mut loss = 0.0;
    // dL/dK[i][k] for the kernel entries of row i
    let mut dk = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let uniform_row = s.row_sum[i] <= 0.0;
        let mut live_mass = 0.0;
        for j in (0..m).filter(|&j| j != i) {
            let pt = t.probs[[i, j]];
            if pt <= 0.0 {
                continue;
            }
            let ps = s.probs[[i, j]];
            loss += pt * (pt / ps.max(PROB_FLOOR)).ln();
            if ps >= PROB_FLOOR && !uniform_row {
                dk[[i, j]] -= pt / s.kernel[[i, j]];
                live_mass += pt;
            }
        }
        if !uniform_row {
            for k in (0..m).filter(|&k| k != i) {
                dk[[i, k]] += live_mass / s.row_sum[i];
            }
        }
    }

    // K is symmetric in (i, j) and dK/dcos = 1/2
    let dcos = (&dk + &dk.t()) * 0.5;
    let mut grad = Array2::<f64>::zeros(student.dim());
    for i in 0..m {
        let ui = s.unit.row(i);
        let mut gi = grad.row_mut(i);
        for j in (0..m).filter(|&j| j != i) {
            let w = dcos[[i, j]];
            if w == 0.0 {
                continue;
            }
            // d cos(i, j) / d s_i = (û_j − cos · û_i) / ‖s_i‖
            let c = s.cosine[[i, j]];
            gi.scaled_add(w / s.norms[i], &s.unit.row(j));
            gi.scaled_add(-w * c / s.norms[i], &ui);
        }
    }
    Ok(MatrixLossGrad { loss, grad })
}

/// Re-id loss computed elsewhere, with gradients on whichever student
/// outputs it touches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReidTerm {
    pub loss: f64,
    pub grad_logits: Option<Array2<f64>>,
    pub grad_feats: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdLoss {
    pub loss: f64,
    pub logit: f64,
    pub pkt: f64,
    pub reid: f64,
    pub grad_logits: Array2<f64>,
    pub grad_feats: Array2<f64>,
}

/// `L_logit + α · L_PKT + L_reid`, with gradients summed the same way.
pub fn kd_total(batch: &KdBatch, reid: &ReidTerm, w: &KdWeights) -> Result<KdLoss> {
    batch.validate()?;
    if !(w.alpha >= 0.0 && w.alpha.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "kd alpha must be finite and >= 0, got {}",
            w.alpha
        )));
    }
    let logit = logit_l1(batch.student_logits.view(), batch.teacher_logits.view())?;
    let pkt = pkt_loss(batch.student_feats.view(), batch.teacher_feats.view())?;
    let mut grad_logits = logit.grad;
    let mut grad_feats = pkt.grad * w.alpha;
    if let Some(g) = &reid.grad_logits {
        if g.dim() != grad_logits.dim() {
            return Err(Error::shape(
                "reid logit gradient",
                format!("{:?}", grad_logits.dim()),
                format!("{:?}", g.dim()),
            ));
        }
        grad_logits += g;
    }
    if let Some(g) = &reid.grad_feats {
        if g.dim() != grad_feats.dim() {
            return Err(Error::shape(
                "reid feature gradient",
                format!("{:?}", grad_feats.dim()),
                format!("{:?}", g.dim()),
            ));
        }
        grad_feats += g;
    }
    Ok(KdLoss {
        loss: logit.loss + w.alpha * pkt.loss + reid.loss,
        logit: logit.loss,
        pkt: pkt.loss,
        reid: reid.loss,
        grad_logits,
        grad_feats,
    })
}
