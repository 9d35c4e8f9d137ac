//! zCDP budget arithmetic and the noise mechanisms.
//!
//! The engine accounts privacy in zero-concentrated DP: budgets compose
//! additively and convert to `(epsilon, delta)`-DP at the end. Three
//! mechanisms touch the sensitive data: the Gaussian mechanism for answering
//! a statistical query, Gumbel report-noisy-max for selecting one
//! high-error query, and oneshot top-K Gumbel selection, which draws one
//! noise sample per candidate and takes the K largest noisy values in a
//! single pass (distributionally equivalent to K sequential noisy-max
//! calls at the same per-comparison scale).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(epsilon, delta)` differential privacy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    epsilon: f64,
    delta: f64,
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Privacy(format!(
                "epsilon must be finite and positive, got {epsilon}"
            )));
        }
        if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::Privacy(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// A zCDP budget `rho > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZcdpBudget {
    rho: f64,
}

impl ZcdpBudget {
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::Privacy(format!(
                "rho must be finite and positive, got {rho}"
            )));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Convert `(epsilon, delta)` to the zCDP budget spent by the whole run:
/// `rho = eps + 2 (log(1/delta) - sqrt(log(1/delta) (eps + log(1/delta))))`.
/// Always strictly below `epsilon`: the conversion surrenders budget.
pub fn eps_delta_to_rho(params: &DpParams) -> ZcdpBudget {
    let eps = params.epsilon;
    let l = (1.0 / params.delta).ln();
    let rho = eps + 2.0 * (l - (l * (eps + l)).sqrt());
    debug_assert!(rho > 0.0 && rho < eps);
    ZcdpBudget { rho }
}

/// Convert a zCDP budget back to the epsilon of an `(epsilon, delta)`-DP
/// guarantee: `eps = rho + 2 sqrt(rho log(1/delta))`. Exact inverse of
/// [`eps_delta_to_rho`] at the same delta.
pub fn rho_to_eps(budget: &ZcdpBudget, delta: f64) -> f64 {
    let l = (1.0 / delta).ln();
    budget.rho + 2.0 * (budget.rho * l).sqrt()
}

/// Noise standard deviation of the Gaussian mechanism for a statistical
/// query (sensitivity 1/n): `sigma^2 = 1 / (2 n^2 rho)`.
pub fn gaussian_sigma(n: usize, rho: f64) -> f64 {
    (1.0 / (2.0 * (n as f64) * (n as f64) * rho)).sqrt()
}

/// Answer a statistical query with Gaussian noise calibrated to the budget.
/// The output is deliberately not clamped to `[0,1]`; downstream
/// optimization keeps its gradient signal from out-of-range targets.
pub fn gaussian_mechanism(
    true_value: f64,
    n: usize,
    budget: &ZcdpBudget,
    rng: &mut impl Rng,
) -> f64 {
    let sigma = gaussian_sigma(n, budget.rho);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    true_value + normal.sample(rng)
}

/// Draw from Gumbel(scale) by inverse CDF: `-scale * ln(-ln U)` with
/// `U ~ Uniform(0,1)` restricted to the open interval, so samples are
/// always finite.
pub fn gumbel_sample(scale: f64, rng: &mut impl Rng) -> f64 {
    debug_assert!(scale > 0.0);
    let u = loop {
        let v: f64 = rng.gen(); // [0, 1)
        if v > 0.0 {
            break v;
        }
    };
    -scale * (-u.ln()).ln()
}

/// Per-query absolute error gaps with their global query indices, the
/// input to the selection mechanisms.
#[derive(Debug, Clone, Default)]
pub struct ErrorGapVector {
    indices: Vec<u64>,
    gaps: Vec<f64>,
}

impl ErrorGapVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, index: u64, gap: f64) {
        debug_assert!(gap >= 0.0);
        self.indices.push(index);
        self.gaps.push(gap);
    }

    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// Drop the entry carrying global index `index`, if present.
    pub fn remove_index(&mut self, index: u64) {
        if let Some(pos) = self.indices.iter().position(|&i| i == index) {
            self.indices.swap_remove(pos);
            self.gaps.swap_remove(pos);
        }
    }
}

/// Gumbel report-noisy-max: the global index whose gap plus
/// `Gumbel(1 / sqrt(2 rho n^2))` noise is largest. Floating-point ties break
/// to the entry appearing first.
pub fn report_noisy_max(
    gaps: &ErrorGapVector,
    n: usize,
    budget: &ZcdpBudget,
    rng: &mut impl Rng,
) -> Result<u64> {
    if gaps.is_empty() {
        return Err(Error::Privacy(
            "report-noisy-max needs a non-empty gap vector".into(),
        ));
    }
    let scale = 1.0 / (2.0 * budget.rho * (n as f64) * (n as f64)).sqrt();
    let mut best_pos = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (pos, &gap) in gaps.gaps.iter().enumerate() {
        let noisy = gap + gumbel_sample(scale, rng);
        if noisy > best_val {
            best_val = noisy;
            best_pos = pos;
        }
    }
    Ok(gaps.indices[best_pos])
}

/// Oneshot top-K selection: one Gumbel draw per gap at scale
/// `sqrt(K / (2 rho n^2))` where `rho` is the budget for the whole
/// selection, then the indices of the K largest noisy values. Returned
/// sorted ascending (the selection is a set).
pub fn oneshot_top_k(
    gaps: &ErrorGapVector,
    k_select: usize,
    n: usize,
    budget: &ZcdpBudget,
    rng: &mut impl Rng,
) -> Result<Vec<u64>> {
    if k_select == 0 {
        return Err(Error::Privacy("oneshot selection needs K >= 1".into()));
    }
    if k_select > gaps.len() {
        return Err(Error::Privacy(format!(
            "oneshot selection asked for {k_select} of {} gaps; cap K first",
            gaps.len()
        )));
    }
    let scale = ((k_select as f64) / (2.0 * budget.rho * (n as f64) * (n as f64))).sqrt();
    let mut noisy: Vec<(f64, usize)> = gaps
        .gaps
        .iter()
        .enumerate()
        .map(|(pos, &gap)| (gap + gumbel_sample(scale, rng), pos))
        .collect();
    // descending by noisy value; ties to the lower position
    noisy.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let mut selected: Vec<u64> = noisy[..k_select]
        .iter()
        .map(|&(_, pos)| gaps.indices[pos])
        .collect();
    selected.sort_unstable();
    Ok(selected)
}

/// Run-scoped record of every `(mechanism, rho)` consumption; the sum must
/// equal the top-level budget at run end.
#[derive(Debug, Clone, Default)]
pub struct BudgetLedger {
    entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: String,
    pub rho: f64,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, mechanism: &str, rho: f64) {
        self.entries.push(LedgerEntry {
            mechanism: mechanism.to_string(),
            rho,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Total consumed budget, Kahan-summed so long ledgers stay exact well
    /// below the composition tolerance.
    pub fn total(&self) -> f64 {
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for e in &self.entries {
            let y = e.rho - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        sum
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
