use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, softmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    Nll,
    Triplet { margin: f64 },
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Nll
    }
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Triplet { margin } if !(margin > 0.0 && margin.is_finite()) => Err(
                Error::invalid(format!("triplet margin must be > 0, got {margin}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Nll => "nll",
            LossKind::Triplet { .. } => "triplet",
        }
    }
}

/// `−log softmax(row)[label]` and its gradient `softmax(row) − onehot(label)`.
pub fn nll_loss_and_grad<T: Scalar>(row: &[T], label: usize) -> (T, Vec<T>) {
    assert!(label < row.len(), "label {label} out of range for row of {}", row.len());
    let loss = log_sum_exp(row) - row[label];
    let mut grad = softmax(row);
    grad[label] -= T::one();
    (loss, grad)
}

/// `max(0, margin − sim_pos + sim_neg)` with gradients `(loss, ∂/∂sim_pos,
/// ∂/∂sim_neg)`. The subgradient at the hinge corner is 0.
pub fn triplet_loss_and_grad<T: Scalar>(sim_pos: T, sim_neg: T, margin: T) -> (T, T, T) {
    let slack = margin - sim_pos + sim_neg;
    if slack > T::zero() {
        (slack, -T::one(), T::one())
    } else {
        (T::zero(), T::zero(), T::zero())
    }
}

/// Loss of one score row whose correct column is `label`.
///
/// The triplet loss averages the hinge over every negative column of the row.
pub fn row_loss_and_grad<T: Scalar>(kind: &LossKind, row: &[T], label: usize) -> (T, Vec<T>) {
    match *kind {
        LossKind::Nll => nll_loss_and_grad(row, label),
        LossKind::Triplet { margin } => {
            let mut grad = vec![T::zero(); row.len()];
            let negatives = row.len() - 1;
            if negatives == 0 {
                return (T::zero(), grad);
            }
            let scale = T::one() / T::lit(negatives as f64);
            let margin = T::lit(margin);
            let mut loss = T::zero();
            for j in (0..row.len()).filter(|&j| j != label) {
                let (l, dp, dn) = triplet_loss_and_grad(row[label], row[j], margin);
                loss += l * scale;
                grad[label] += dp * scale;
                grad[j] += dn * scale;
            }
            (loss, grad)
        }
    }
}
