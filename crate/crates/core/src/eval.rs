//! Coverage/efficiency metrics and the three-way method comparison
//! (oracle / noisy / robust) over repeated trials.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, LabelKind, Result};
use crate::model::PredictionRecord;
use crate::noise;
use crate::robust::{self, RobustParams};
use crate::split::calibrate_split_cp;
use crate::synth::{self, SyntheticConfig};
use crate::util::{mean, sample_sd};

/// Fraction of clean test labels inside their interval at threshold `q`.
pub fn coverage(records: &[PredictionRecord], q: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let mut covered = 0usize;
    for r in records {
        let y = r.label(LabelKind::Clean)?;
        if r.interval(q)?.contains(y) {
            covered += 1;
        }
    }
    Ok(covered as f64 / records.len() as f64)
}

/// Mean interval length `2 * q * u_hat` over the records.
pub fn avg_length(records: &[PredictionRecord], q: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    if !(q >= 0.0) {
        return Err(Error::NegativeThreshold(q));
    }
    Ok(2.0 * q * records.iter().map(|r| r.u_hat).sum::<f64>() / records.len() as f64)
}

/// How the robust method obtains its noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSpec {
    /// Use this value directly.
    Known(f64),
    /// Estimate from the calibration uncertainties (lowest-1% rule).
    Estimate,
}

/// Where each trial's calibration/test data comes from.
#[derive(Debug, Clone)]
pub enum TrialSource {
    /// Fresh generation per trial: honest trial-to-trial variation for the
    /// synthetic setting. The template's `seed` is overridden per trial.
    Generate {
        config: SyntheticConfig,
        n_test: usize,
    },
    /// Reshuffle a fixed ingested dataset into calibration/test per trial.
    Resplit {
        pool: Vec<PredictionRecord>,
        n_cal: usize,
    },
}

impl TrialSource {
    fn materialize(
        &self,
        base_seed: u64,
        trial: usize,
    ) -> Result<(Vec<PredictionRecord>, Vec<PredictionRecord>)> {
        let trial_seed = base_seed.wrapping_add(trial as u64);
        match self {
            TrialSource::Generate { config, n_test } => {
                let cal_cfg = SyntheticConfig {
                    seed: trial_seed,
                    ..config.clone()
                };
                let test_cfg = SyntheticConfig {
                    n: *n_test,
                    seed: trial_seed ^ (1u64 << 63),
                    ..config.clone()
                };
                Ok((synth::generate(&cal_cfg)?, synth::generate(&test_cfg)?))
            }
            TrialSource::Resplit { pool, n_cal } => {
                if *n_cal == 0 || *n_cal >= pool.len() {
                    return Err(Error::InvalidParameter {
                        name: "n_cal",
                        reason: format!(
                            "resplit needs 0 < n_cal < pool size, got {n_cal} of {}",
                            pool.len()
                        ),
                    });
                }
                let mut shuffled = pool.clone();
                let mut rng = ChaCha12Rng::seed_from_u64(trial_seed);
                shuffled.shuffle(&mut rng);
                let test = shuffled.split_off(*n_cal);
                Ok((shuffled, test))
            }
        }
    }
}

/// Comparison settings shared by all trials.
#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub alpha: f64,
    pub sigma: SigmaSpec,
    pub trials: usize,
    pub base_seed: u64,
    pub robust: RobustParams,
}

/// Mean and sample standard deviation over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
}

impl Stats {
    fn from_values(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            sd: sample_sd(values),
        }
    }
}

/// Aggregated metrics of one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub q_hat: Stats,
    pub avg_length: Stats,
    pub coverage: Stats,
}

/// A method either aggregates cleanly or reports the error that stopped it;
/// one failing method leaves the other cells intact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodOutcome {
    Stats(MethodStats),
    Failed { error: String },
}

impl MethodOutcome {
    pub fn stats(&self) -> Option<&MethodStats> {
        match self {
            MethodOutcome::Stats(s) => Some(s),
            MethodOutcome::Failed { .. } => None,
        }
    }
}

/// Sigma actually used by the robust method, aggregated over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaUsed {
    /// "fixed" or "estimated".
    pub mode: String,
    pub mean: f64,
    pub sd: f64,
}

/// Per-method aggregates of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodsReport {
    pub oracle: MethodOutcome,
    pub noisy: MethodOutcome,
    pub robust: MethodOutcome,
}

/// Full three-way comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub methods: MethodsReport,
    pub sigma_used: SigmaUsed,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy)]
struct CellMetrics {
    q_hat: f64,
    avg_length: f64,
    coverage: f64,
}

#[derive(Debug, Clone)]
struct TrialRow {
    oracle: std::result::Result<CellMetrics, String>,
    noisy: std::result::Result<CellMetrics, String>,
    robust: std::result::Result<CellMetrics, String>,
    sigma_used: std::result::Result<f64, String>,
}

fn direct_method(
    cal: &[PredictionRecord],
    test: &[PredictionRecord],
    kind: LabelKind,
    alpha: f64,
) -> Result<CellMetrics> {
    let scores = cal
        .iter()
        .map(|r| r.score(kind))
        .collect::<Result<Vec<_>>>()?;
    let q_hat = calibrate_split_cp(&scores, alpha)?;
    Ok(CellMetrics {
        q_hat,
        avg_length: avg_length(test, q_hat)?,
        coverage: coverage(test, q_hat)?,
    })
}

fn run_trial(source: &TrialSource, cfg: &ComparisonConfig, trial: usize) -> TrialRow {
    let (cal, test) = match source.materialize(cfg.base_seed, trial) {
        Ok(pair) => pair,
        Err(e) => {
            let msg = format!("trial {trial}: {e}");
            return TrialRow {
                oracle: Err(msg.clone()),
                noisy: Err(msg.clone()),
                robust: Err(msg.clone()),
                sigma_used: Err(msg),
            };
        }
    };

    let oracle = direct_method(&cal, &test, LabelKind::Clean, cfg.alpha)
        .map_err(|e| format!("trial {trial}: {e}"));
    let noisy = direct_method(&cal, &test, LabelKind::Noisy, cfg.alpha)
        .map_err(|e| format!("trial {trial}: {e}"));

    let sigma_used = match cfg.sigma {
        SigmaSpec::Known(s) => Ok(s),
        SigmaSpec::Estimate => {
            let u: Vec<f64> = cal.iter().map(|r| r.u_hat).collect();
            noise::estimate_sigma(&u, 0.01).map_err(|e| format!("trial {trial}: {e}"))
        }
    };
    let robust = sigma_used.clone().and_then(|sigma| {
        robust::calibrate_robust(&cal, cfg.alpha, sigma, &cfg.robust)
            .and_then(|out| {
                Ok(CellMetrics {
                    q_hat: out.result.q_hat,
                    avg_length: avg_length(&test, out.result.q_hat)?,
                    coverage: coverage(&test, out.result.q_hat)?,
                })
            })
            .map_err(|e| format!("trial {trial}: {e}"))
    });

    TrialRow {
        oracle,
        noisy,
        robust,
        sigma_used,
    }
}

fn aggregate(cells: Vec<std::result::Result<CellMetrics, String>>) -> MethodOutcome {
    let mut q = Vec::with_capacity(cells.len());
    let mut len = Vec::with_capacity(cells.len());
    let mut cov = Vec::with_capacity(cells.len());
    for cell in cells {
        match cell {
            Ok(c) => {
                q.push(c.q_hat);
                len.push(c.avg_length);
                cov.push(c.coverage);
            }
            Err(e) => return MethodOutcome::Failed { error: e },
        }
    }
    MethodOutcome::Stats(MethodStats {
        q_hat: Stats::from_values(&q),
        avg_length: Stats::from_values(&len),
        coverage: Stats::from_values(&cov),
    })
}

/// Run the oracle/noisy/robust comparison over `cfg.trials` seeded trials and
/// aggregate mean +- SD per metric. Trials execute in parallel; aggregation
/// order is fixed by trial index, so the report is deterministic for a fixed
/// `base_seed`.
pub fn run_comparison(source: &TrialSource, cfg: &ComparisonConfig) -> Result<ComparisonReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "need at least one trial".into(),
        });
    }
    if !cfg.alpha.is_finite() || !(0.0 < cfg.alpha && cfg.alpha < 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("must lie in (0, 1), got {}", cfg.alpha),
        });
    }
    if let SigmaSpec::Known(s) = cfg.sigma {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::NegativeSigma(s));
        }
    }

    let rows: Vec<TrialRow> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(source, cfg, t))
        .collect();

    let mut sigmas = Vec::with_capacity(rows.len());
    let mut sigma_err = None;
    for row in &rows {
        match &row.sigma_used {
            Ok(s) => sigmas.push(*s),
            Err(e) => sigma_err = Some(e.clone()),
        }
    }
    let sigma_used = SigmaUsed {
        mode: match cfg.sigma {
            SigmaSpec::Known(_) => "fixed".into(),
            SigmaSpec::Estimate => "estimated".into(),
        },
        mean: if sigma_err.is_none() { mean(&sigmas) } else { f64::NAN },
        sd: if sigma_err.is_none() {
            sample_sd(&sigmas)
        } else {
            f64::NAN
        },
    };

    let oracle = aggregate(rows.iter().map(|r| r.oracle.clone()).collect());
    let noisy = aggregate(rows.iter().map(|r| r.noisy.clone()).collect());
    let robust = aggregate(rows.iter().map(|r| r.robust.clone()).collect());

    Ok(ComparisonReport {
        methods: MethodsReport {
            oracle,
            noisy,
            robust,
        },
        sigma_used,
        trials: cfg.trials,
    })
}
