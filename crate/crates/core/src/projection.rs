//! The relaxed projection step: first-order minimization of the squared
//! answer gap, with a sparsemax (Euclidean simplex) projection of every
//! feature block after each update.

use serde::{Deserialize, Serialize};

use crate::dataset::RelaxedDataset;
use crate::error::{Error, Result};
use crate::surrogate::{loss_and_gradient, PolyThresholdSpec};

/// Hyperparameters for the adaptive-moment optimizer driving the projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Best-loss improvement below this counts as a non-improving iteration.
    pub stop_tolerance: f64,
    /// Consecutive non-improving iterations before stopping.
    pub patience: usize,
    pub moment_decay_1: f64,
    pub moment_decay_2: f64,
    pub epsilon_stabilizer: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_iterations: 1000,
            stop_tolerance: 1e-7,
            patience: 50,
            moment_decay_1: 0.9,
            moment_decay_2: 0.999,
            epsilon_stabilizer: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.max_iterations >= 1
            && self.stop_tolerance >= 0.0
            && self.patience >= 1
            && (0.0..1.0).contains(&self.moment_decay_1)
            && (0.0..1.0).contains(&self.moment_decay_2)
            && self.epsilon_stabilizer > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config: {self:?}")))
        }
    }
}

/// Euclidean projection of `z` onto the probability simplex
/// (sort descending, find the support size, threshold, clip).
pub fn sparsemax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Projection("sparsemax of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Projection(
            "sparsemax input contains non-finite entries".into(),
        ));
    }
    let mut out = z.to_vec();
    let mut scratch = Vec::with_capacity(z.len());
    sparsemax_in_place(&mut out, &mut scratch);
    Ok(out)
}

/// In-place sparsemax on a finite block. `scratch` is reused across calls.
pub(crate) fn sparsemax_in_place(block: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(block);
    scratch.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut support = 0usize;
    let mut support_sum = 0.0;
    for (j, &zj) in scratch.iter().enumerate() {
        cumsum += zj;
        // largest s with 1 + s * z_(s) > sum_{l <= s} z_(l)
        if 1.0 + ((j + 1) as f64) * zj > cumsum {
            support = j + 1;
            support_sum = cumsum;
        }
    }
    debug_assert!(support >= 1);
    let tau = (support_sum - 1.0) / support as f64;
    for v in block.iter_mut() {
        *v = (*v - tau).max(0.0);
    }
}

/// Replace every feature block of every row by its sparsemax, restoring the
/// block simplex invariant. Errors if any entry is non-finite (a diverged
/// optimizer step), rather than silently projecting garbage.
pub fn project_rows(relaxed: &mut RelaxedDataset) -> Result<()> {
    if relaxed.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(
            "relaxed dataset contains non-finite entries; reduce the learning rate".into(),
        ));
    }
    let offsets = relaxed.block_offsets().to_vec();
    let n = relaxed.n_prime();
    let mut scratch = Vec::new();
    for i in 0..n {
        let row = relaxed.row_mut(i);
        for w in offsets.windows(2) {
            sparsemax_in_place(&mut row[w[0]..w[1]], &mut scratch);
        }
    }
    Ok(())
}

/// Outcome of one relaxed projection call.
#[derive(Debug, Clone, Copy)]
pub struct RpReport {
    /// Iterations actually executed (loss evaluations).
    pub iterations: usize,
    /// Loss of the returned (best) iterate.
    pub best_loss: f64,
}

/// Minimize `||Q_hat(D') - targets||_2^2` over the relaxed dataset with
/// adaptive-moment updates, projecting every feature block back onto its
/// simplex after each step. Stops at `max_iterations` or once the best loss
/// has not improved by `stop_tolerance` for `patience` consecutive
/// iterations, and leaves `relaxed` at the best iterate observed.
pub fn relaxed_projection(
    relaxed: &mut RelaxedDataset,
    specs: &[PolyThresholdSpec],
    targets: &[f64],
    config: &OptimizerConfig,
) -> Result<RpReport> {
    relaxed_projection_observed(relaxed, specs, targets, config, |_, _, _| {})
}

/// [`relaxed_projection`] with a per-iteration observer
/// `(iteration, loss, current iterate)`, used for training-progress logs.
pub fn relaxed_projection_observed(
    relaxed: &mut RelaxedDataset,
    specs: &[PolyThresholdSpec],
    targets: &[f64],
    config: &OptimizerConfig,
    mut observer: impl FnMut(usize, f64, &RelaxedDataset),
) -> Result<RpReport> {
    config.validate()?;
    if specs.is_empty() || specs.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} queries vs {} targets",
            specs.len(),
            targets.len()
        )));
    }

    let len = relaxed.values().len();
    let mut moment1 = vec![0.0f64; len];
    let mut moment2 = vec![0.0f64; len];
    let b1 = config.moment_decay_1;
    let b2 = config.moment_decay_2;
    let mut b1_pow = 1.0f64;
    let mut b2_pow = 1.0f64;

    let mut best = relaxed.clone();
    let mut best_loss = f64::INFINITY;
    let mut bad_streak = 0usize;
    let mut iterations = 0usize;

    for iter in 0..config.max_iterations {
        let (loss, grad) = loss_and_gradient(relaxed, specs, targets)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss at iteration {iter}"
            )));
        }
        iterations = iter + 1;
        observer(iter, loss, relaxed);

        if loss < best_loss - config.stop_tolerance {
            bad_streak = 0;
        } else {
            bad_streak += 1;
        }
        if loss < best_loss {
            best_loss = loss;
            best.values_mut().copy_from_slice(relaxed.values());
        }
        if best_loss == 0.0 || bad_streak >= config.patience {
            break;
        }

        b1_pow *= b1;
        b2_pow *= b2;
        let values = relaxed.values_mut();
        for j in 0..len {
            let g = grad[j];
            moment1[j] = b1 * moment1[j] + (1.0 - b1) * g;
            moment2[j] = b2 * moment2[j] + (1.0 - b2) * g * g;
            let m_hat = moment1[j] / (1.0 - b1_pow);
            let v_hat = moment2[j] / (1.0 - b2_pow);
            values[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon_stabilizer);
        }
        project_rows(relaxed)?;
    }

    relaxed.values_mut().copy_from_slice(best.values());
    Ok(RpReport {
        iterations,
        best_loss,
    })
}
