//! Iterative recovery of the noise-free conformal threshold from noisy
//! calibration data.
//!
//! The clean-label coverage at threshold `q` equals the trace integral of the
//! clean coverage-density matrix, and the noisy matrix is its per-row
//! convolution with the noise kernel. So, starting from the (inflated) noisy
//! split-CP threshold, the loop repeatedly:
//!
//! 1. decrements `q` by `delta_q`,
//! 2. estimates the noisy coverage-density matrix at `q`,
//! 3. deconvolves each row to approximate the clean matrix,
//! 4. reads the estimated clean coverage off the diagonal,
//!
//! and stops the first time the estimate falls below `1 - alpha`, returning
//! the previous `q`. Dispersive noise guarantees the starting point sits
//! above the clean threshold, so a linear downward scan is sufficient.
//!
//! The grid and kernel are built once per run; only the cheap matrix
//! estimate is rebuilt per iteration, and each row's previous solution seeds
//! the next iteration's solve.

use serde::{Deserialize, Serialize};

use crate::deconv::{self, DeconvConfig};
use crate::error::{Error, LabelKind, Result};
use crate::grid::{noisy_coverage_matrix, BinGrid, EmpiricalMatrix, NoiseKernel};
use crate::model::{CalibrationResult, Method, PredictionRecord};
use crate::split::calibrate_split_cp;

/// Parameters of the robust calibration loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustParams {
    /// Threshold decrement per iteration.
    pub delta_q: f64,
    /// Label-axis bin width.
    pub delta_y: f64,
    /// Optional density floor for the column mask; `None` masks exactly the
    /// empty columns.
    pub column_epsilon: Option<f64>,
    pub deconv: DeconvConfig,
}

impl Default for RobustParams {
    fn default() -> Self {
        Self {
            delta_q: 0.05,
            delta_y: 0.01,
            column_epsilon: None,
            deconv: DeconvConfig::default(),
        }
    }
}

/// One evaluated point of the threshold scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub q: f64,
    /// Trace estimate before clamping; deconvolution can overshoot [0, 1]
    /// numerically.
    pub coverage_raw: f64,
    /// Clamped estimate used by the stopping test.
    pub coverage: f64,
    /// Projected-gradient steps summed over rows for this evaluation.
    pub pgd_iterations: u64,
}

/// Result of a robust calibration run, with the full scan trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustOutcome {
    pub result: CalibrationResult,
    /// Every evaluated `(q, coverage)` point, in evaluation order.
    pub trace: Vec<TraceStep>,
    /// True when `q` hit the positive floor before the stopping test fired.
    pub floored: bool,
    /// Noise standard deviation the kernel was built with.
    pub sigma: f64,
    /// Bins of the label grid used for this run.
    pub num_bins: usize,
}

/// Estimated clean-label coverage: sum of diagonal densities times the bin
/// width, clamped to [0, 1] for reporting.
pub fn estimated_coverage(matrix: &EmpiricalMatrix, delta_y: f64) -> f64 {
    estimated_coverage_raw(matrix, delta_y).clamp(0.0, 1.0)
}

/// The unclamped trace estimate.
pub fn estimated_coverage_raw(matrix: &EmpiricalMatrix, delta_y: f64) -> f64 {
    debug_assert!((matrix.delta_y - delta_y).abs() <= 1e-9 * delta_y.abs().max(1e-300));
    let _ = delta_y;
    matrix.trace_mass()
}

struct ScanState<'a> {
    records: &'a [PredictionRecord],
    grid: BinGrid,
    kernel: NoiseKernel,
    params: &'a RobustParams,
    warm: Option<Vec<f64>>,
}

impl ScanState<'_> {
    /// Steps 1-3 at a single threshold.
    fn evaluate(&mut self, q: f64) -> Result<TraceStep> {
        let mut m = noisy_coverage_matrix(q, self.records, &self.grid)?;
        if let Some(eps) = self.params.column_epsilon {
            m.mask_sparse_columns(eps);
        }

        // Seed each row from its solution at the previously evaluated
        // threshold. Pure initialization: the solve still converges to the
        // same minimizer.
        let sol = deconv::solve_warm(&m, &self.kernel, &self.params.deconv, self.warm.as_deref())?;
        let raw = estimated_coverage_raw(&sol.matrix, self.params.delta_y);
        self.warm = Some(sol.matrix.values);
        Ok(TraceStep {
            q,
            coverage_raw: raw,
            coverage: raw.clamp(0.0, 1.0),
            pgd_iterations: sol.total_iterations,
        })
    }
}

/// Run the downward threshold scan on noisy-labeled calibration records.
///
/// Returns the last threshold whose estimated coverage was still at least
/// `1 - alpha`. If the scan reaches the positive floor without the estimate
/// ever dropping below the target, the outcome is flagged `floored` instead
/// of erroring, so batch runs survive pathological datasets.
pub fn calibrate_robust(
    records: &[PredictionRecord],
    alpha: f64,
    sigma: f64,
    params: &RobustParams,
) -> Result<RobustOutcome> {
    if !alpha.is_finite() || !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("must lie in (0, 1), got {alpha}"),
        });
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::NegativeSigma(sigma));
    }
    if !(params.delta_q.is_finite() && params.delta_q > 0.0) {
        return Err(Error::InvalidParameter {
            name: "delta_q",
            reason: format!("must be positive, got {}", params.delta_q),
        });
    }

    let noisy_scores = records
        .iter()
        .map(|r| r.score(LabelKind::Noisy))
        .collect::<Result<Vec<_>>>()?;
    let q_init = calibrate_split_cp(&noisy_scores, alpha)?;

    let noisy_labels: Vec<f64> = records
        .iter()
        .map(|r| r.label(LabelKind::Noisy))
        .collect::<Result<Vec<_>>>()?;
    let mut state = ScanState {
        records,
        grid: BinGrid::build(&noisy_labels, sigma, params.delta_y)?,
        kernel: NoiseKernel::gaussian(sigma, params.delta_y)?,
        params,
        warm: None,
    };

    let target = 1.0 - alpha;
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut floored = false;
    let mut q_hat = q_init;
    let mut coverage_at_q_hat: Option<f64> = None;

    for k in 1.. {
        let q = q_init - k as f64 * params.delta_q;
        if q <= 0.0 {
            // Scanned down to the floor with coverage still above target.
            q_hat = q_init - (k - 1) as f64 * params.delta_q;
            coverage_at_q_hat = trace.last().map(|s| s.coverage);
            floored = true;
            break;
        }

        let step = state.evaluate(q)?;
        if let Some(prev) = trace.last() {
            // The estimate shrinks with q; solver tolerance allows a whisker.
            debug_assert!(
                step.coverage <= prev.coverage + 1e-4,
                "coverage estimate rose along the scan: {} -> {} at q={q}",
                prev.coverage,
                step.coverage
            );
        }
        let stop = step.coverage < target;
        trace.push(step);

        if stop {
            q_hat = q + params.delta_q;
            if trace.len() >= 2 {
                coverage_at_q_hat = Some(trace[trace.len() - 2].coverage);
            }
            break;
        }
    }

    // When the loop exits on its first evaluation (or immediately hits the
    // floor) the coverage at the returned threshold was never computed.
    let estimated = match coverage_at_q_hat {
        Some(c) => c,
        None => {
            let step = state.evaluate(q_hat)?;
            let c = step.coverage;
            trace.push(step);
            c
        }
    };

    Ok(RobustOutcome {
        result: CalibrationResult {
            method: Method::Robust,
            q_hat,
            iterations: trace.len(),
            estimated_coverage: Some(estimated),
        },
        trace,
        floored,
        sigma,
        num_bins: state.grid.num_bins,
    })
}
