//! Binary cross-entropy and the deeply supervised refinement loss.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::rnet::SaliencyPrediction;
use crate::Scalar;

/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Weights of the three side-output losses, ordered shallow to deep decoder level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: [0.2, 0.4, 0.8] }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("loss weights must be nonnegative, got {:?}", self.lambda)));
        }
        Ok(())
    }
}

/// Which supervision pool a loss term belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    Real,
    /// Pseudo or contaminated labels.
    Pseudo,
}

pub(crate) fn bce_slice<T: Scalar>(pred: &[T], target: &[T], eps: T) -> T {
    let hi = T::one() - eps;
    let mut acc = T::zero();
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.max(eps).min(hi);
        acc -= y * p.ln() + (T::one() - y) * (T::one() - p).ln();
    }
    acc / T::from_usize_lossy(pred.len())
}

pub(crate) fn bce_grad_slice<T: Scalar>(pred: &[T], target: &[T], eps: T, out: &mut [T]) {
    let hi = T::one() - eps;
    let n = T::from_usize_lossy(pred.len());
    for ((&p, &y), o) in pred.iter().zip(target).zip(out.iter_mut()) {
        *o = if p < eps || p > hi { T::zero() } else { (p - y) / (p * (T::one() - p)) / n };
    }
}

/// Pixel-mean binary cross-entropy between equally shaped arrays.
pub fn bce<T: Scalar, D: ndarray::Dimension>(pred: &ndarray::Array<T, D>, label: &ndarray::Array<T, D>) -> Result<T> {
    if pred.shape() != label.shape() {
        return Err(shape_err("bce", pred.shape(), label.shape()));
    }
    let p = pred.as_standard_layout();
    let y = label.as_standard_layout();
    Ok(bce_slice(p.as_slice().unwrap(), y.as_slice().unwrap(), T::lit(BCE_EPS)))
}

/// `bce(final) + Σ λᵢ·bce(auxᵢ)` for a B×1×H×W label.
pub fn rnet_loss<T: Scalar>(pred: &SaliencyPrediction<T>, label: &Tensor<T>, w: &LossWeights) -> Result<T> {
    let mut total = bce(&pred.final_map, label)?;
    for (aux, &l) in pred.aux.iter().zip(&w.lambda) {
        total += T::lit(l) * bce(aux, label)?;
    }
    Ok(total)
}

/// Graph form of [`rnet_loss`] for training.
pub fn rnet_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    final_map: Var,
    aux: &[Var; 3],
    label: &Tensor<T>,
    w: &LossWeights,
) -> Result<Var> {
    let eps = T::lit(BCE_EPS);
    let mut terms = vec![(g.bce(final_map, label, eps)?, T::one())];
    for (&a, &l) in aux.iter().zip(&w.lambda) {
        terms.push((g.bce(a, label, eps)?, T::lit(l)));
    }
    g.weighted_sum(&terms)
}

/// Running per-pool loss means within an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossAccumulator {
    pub real_sum: f64,
    pub real_batches: usize,
    pub pseudo_sum: f64,
    pub pseudo_batches: usize,
}

impl LossAccumulator {
    pub fn add(&mut self, pool: Supervision, value: f64) {
        match pool {
            Supervision::Real => {
                self.real_sum += value;
                self.real_batches += 1;
            }
            Supervision::Pseudo => {
                self.pseudo_sum += value;
                self.pseudo_batches += 1;
            }
        }
    }

    pub fn real_mean(&self) -> Option<f64> {
        (self.real_batches > 0).then(|| self.real_sum / self.real_batches as f64)
    }

    pub fn pseudo_mean(&self) -> Option<f64> {
        (self.pseudo_batches > 0).then(|| self.pseudo_sum / self.pseudo_batches as f64)
    }
}
