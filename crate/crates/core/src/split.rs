//! Standard split conformal calibration.
//!
//! The threshold is the `ceil((n+1)(1-alpha))`-th smallest score — an order
//! statistic, no interpolation — which carries the finite-sample guarantee
//! `P(Y in C(X)) >= 1 - alpha` for exchangeable data, with upper bound
//! `1 - alpha + 1/(n+1)`.
//!
//! Used both as the oracle (clean calibration labels) and as the naive noisy
//! baseline (scores computed against the noisy labels).

use crate::error::{Error, LabelKind, Result};
use crate::eval;
use crate::synth::{self, SyntheticConfig};
use crate::util::guarded_ceil;

/// Split-CP threshold: the k-th smallest score with `k = ceil((n+1)(1-alpha))`.
///
/// Ties are resolved by position in the sorted multiset, so duplicated scores
/// (natural under rounded labels) behave exactly like distinct ones.
///
/// # Errors
///
/// [`Error::InsufficientCalibration`] when `k > n`, i.e. the requested
/// quantile does not exist for this calibration size. Callers must handle it;
/// there is no sentinel infinite threshold.
pub fn calibrate_split_cp(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if !alpha.is_finite() || !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("must lie in (0, 1), got {alpha}"),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    if let Some(bad) = scores.iter().find(|&&s| s < 0.0) {
        return Err(Error::InvalidParameter {
            name: "scores",
            reason: format!("scores must be nonnegative, got {bad}"),
        });
    }

    let n = scores.len();
    let k = guarded_ceil((n as f64 + 1.0) * (1.0 - alpha)) as usize;
    if k > n {
        return Err(Error::InsufficientCalibration { n, k });
    }

    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    Ok(sorted[k - 1])
}

/// One seeded coverage trial: generate a calibration set and a test set,
/// calibrate on the clean labels, return the empirical clean-label coverage
/// on the test set. Exercises the marginal coverage guarantee end to end.
pub fn marginal_coverage_trial(
    n_cal: usize,
    n_test: usize,
    alpha: f64,
    generator: &SyntheticConfig,
    seed: u64,
) -> Result<f64> {
    let cal_cfg = SyntheticConfig {
        n: n_cal,
        seed,
        ..generator.clone()
    };
    // Flip the top seed bit for the test stream so the two sets never share
    // a generator state.
    let test_cfg = SyntheticConfig {
        n: n_test,
        seed: seed ^ (1u64 << 63),
        ..generator.clone()
    };

    let cal = synth::generate(&cal_cfg)?;
    let test = synth::generate(&test_cfg)?;

    let scores = cal
        .iter()
        .map(|r| r.score(LabelKind::Clean))
        .collect::<Result<Vec<_>>>()?;
    let q_hat = calibrate_split_cp(&scores, alpha)?;
    eval::coverage(&test, q_hat)
}
