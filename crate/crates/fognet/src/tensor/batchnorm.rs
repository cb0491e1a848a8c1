//! Running-statistics state for batch normalization.
//!
//! The affine pair (γ, β) lives with the rest of the trainable parameters;
//! this module only carries the non-trainable side: running mean/variance,
//! the numerical floor and the update momentum.

use super::{Real, Tensor};

/// How a batchnorm call normalizes its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and fold them into the running
    /// estimates: `running ← (1 − momentum)·running + momentum·batch`.
    Train,
    /// Normalize with the running estimates; nothing is updated.
    Eval,
    /// Pass the input through untouched. Exists so numeric comparisons can
    /// switch normalization off without rewiring a model.
    Identity,
}

/// Per-channel running statistics plus the two scalar knobs.
#[derive(Clone, Debug)]
pub struct BnStats<F: Real> {
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    /// Added to the variance before the square root (1e-5 everywhere).
    pub eps: f64,
    /// Weight of the current batch in the running update (0.1 everywhere).
    pub momentum: f64,
}

impl<F: Real> BnStats<F> {
    /// Fresh statistics: zero mean, unit variance.
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BnStats {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], F::one()),
            eps,
            momentum,
        }
    }
}
