//! Classification branch: linear logits without bias, class prototypes derived
//! from the classifier weight, and prior-compensated cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::error::{Error, Result};
use crate::numerics::{HasParams, Matrix, Mlp2, Mlp2Cache, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `h1 x C`; column `c` is the class-specific weight of class `c`.
    pub w: Param,
    /// Maps a class weight (`h1`) to its prototype (`h2`).
    pub proj_h: Mlp2,
}

impl ClassifierParams {
    pub fn init(feat_dim: usize, num_classes: usize, hidden_dim: usize, proj_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (feat_dim.max(1) as f64).sqrt();
        Self {
            w: Param::uniform(feat_dim, num_classes, bound, rng),
            proj_h: Mlp2::init(feat_dim, hidden_dim, proj_dim, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.value.cols()
    }

    pub fn feat_dim(&self) -> usize {
        self.w.value.rows()
    }

    /// `logits = feat · w`
    pub fn class_logits(&self, feat: &Matrix) -> Result<Matrix> {
        feat.matmul(&self.w.value)
    }

    /// Accumulates `dL/dw` and returns `dL/dfeat`.
    pub fn logits_backward(&mut self, feat: &Matrix, grad_logits: &Matrix) -> Result<Matrix> {
        let gw = feat.t_matmul(grad_logits)?;
        self.w.grad.add_assign(&gw)?;
        grad_logits.matmul_t(&self.w.value)
    }

    /// `C x h2` prototypes: row `c` is `proj_h` applied to column `c` of `w`.
    pub fn make_prototypes(&self) -> Result<(Matrix, Mlp2Cache)> {
        self.proj_h.forward(&self.w.value.transpose())
    }

    /// Backpropagates a prototype gradient into `proj_h` and `w`.
    pub fn prototypes_backward(&mut self, cache: &Mlp2Cache, grad_proto: &Matrix) -> Result<()> {
        let g_wt = self.proj_h.backward(cache, grad_proto)?;
        self.w.grad.add_assign(&g_wt.transpose())
    }
}

impl HasParams for ClassifierParams {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.w];
        v.extend(self.proj_h.params_mut());
        v
    }
}

/// Per-class additive logit offsets `δ_y = log P_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationVector {
    delta: Vec<f64>,
}

impl CompensationVector {
    pub fn from_priors(priors: &[f64]) -> Result<Self> {
        if priors.is_empty() {
            return Err(Error::invalid("no priors"));
        }
        if let Some(p) = priors.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::invalid(format!("prior must be positive, got {p}")));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("priors sum to {sum}, expected 1")));
        }
        Ok(Self {
            delta: priors.iter().map(|p| p.ln()).collect(),
        })
    }

    /// No compensation: plain cross-entropy.
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            delta: vec![0.0; num_classes],
        }
    }

    pub fn from_offsets(delta: Vec<f64>) -> Self {
        Self { delta }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

/// Mean over rows of `-log softmax(logits_i + δ)[y_i]`, and its gradient
/// w.r.t. the logits, `(softmax(logits + δ) - onehot) / n`.
pub fn logit_compensated_loss(logits: &Matrix, labels: &[ClassId], delta: &CompensationVector) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "logit_compensated_loss",
            left: (n, c),
            right: (labels.len(), 1),
        });
    }
    if delta.len() != c {
        return Err(Error::Shape {
            op: "logit_compensated_loss delta",
            left: (n, c),
            right: (1, delta.len()),
        });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, c);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, num_classes: c });
        }
        let shifted: Vec<f64> = logits.row(i).iter().zip(delta.as_slice()).map(|(l, d)| l + d).collect();
        let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = shifted.iter().map(|s| (s - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - shifted[y];
        for (g, s) in grad.row_mut(i).iter_mut().zip(&shifted) {
            *g = (s - log_z).exp() * inv_n;
        }
        grad[(i, y)] -= inv_n;
    }
    Ok((total * inv_n, grad))
}
