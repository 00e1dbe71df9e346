//! Regression, classification and joint objectives with their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Loss components of one batch; `total = mse + alpha * ce`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub ce: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mse: f64, ce: f64, alpha: f64) -> Self {
        Self { mse, ce, total: mse + alpha * ce }
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!("prediction {:?} vs target {:?}", a.shape(), b.shape())))
    }
}

/// Mean of squared differences over every element.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape(pred, target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p.f64() - t.f64()).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(pred, target)?;
    let k = 2.0 / pred.len() as f64;
    let data = pred.data().iter().zip(target.data()).map(|(&p, &t)| T::of(k * (p.f64() - t.f64()))).collect();
    Tensor::from_vec(pred.shape(), data)
}

fn check_labels(rows: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::InvalidLabel { label, classes }),
        None => Ok(()),
    }
}

/// Mean negative log-probability of the true class, from `N x K`
/// probabilities.
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (n, k) = (probs.dim(0), probs.dim(1));
    check_labels(n, k, labels)?;
    let sum: f64 = labels.iter().enumerate().map(|(i, &l)| -probs.data()[i * k + l].f64().max(f64::MIN_POSITIVE).ln()).sum();
    Ok(sum / n as f64)
}

/// Cross-entropy from `N x K` scores via log-sum-exp, with the gradient
/// `(softmax - onehot) / N`.
pub fn cross_entropy_with_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = (logits.dim(0), logits.dim(1));
    check_labels(n, k, labels)?;
    let mut grad = Vec::with_capacity(n * k);
    let mut sum = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
        sum += lse - row[label].f64();
        for (j, v) in row.iter().enumerate() {
            let p = (v.f64() - lse).exp();
            grad.push(T::of((p - f64::from(u8::from(j == label))) / n as f64));
        }
    }
    Ok((sum / n as f64, Tensor::from_vec(&[n, k], grad)?))
}

/// Value and output gradients of the joint objective.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    pub loss: LossBreakdown,
    pub d_ab: Tensor<T>,
    /// Absent when there is no classification term.
    pub d_logits: Option<Tensor<T>>,
}

/// `mse(ab_pred, ab_target) + alpha * ce(logits, labels)`. Without logits
/// (no fusion) or with `alpha = 0` the classification term is dropped.
pub fn joint_loss<T: Scalar>(
    ab_pred: &Tensor<T>,
    ab_target: &Tensor<T>,
    logits: Option<&Tensor<T>>,
    labels: &[usize],
    alpha: f64,
) -> Result<Objective<T>> {
    let mse = mse_loss(ab_pred, ab_target)?;
    let d_ab = mse_grad(ab_pred, ab_target)?;
    let (ce, d_logits) = match logits {
        Some(z) => {
            let (ce, mut g) = cross_entropy_with_logits(z, labels)?;
            g.data_mut().iter_mut().for_each(|v| *v = T::of(v.f64() * alpha));
            (ce, (alpha != 0.0).then_some(g))
        }
        None => (0.0, None),
    };
    Ok(Objective { loss: LossBreakdown::new(mse, ce, alpha), d_ab, d_logits })
}
