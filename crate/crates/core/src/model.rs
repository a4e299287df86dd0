//! Domain types and the score/interval primitives shared by every calibration
//! method.
//!
//! The score of a labeled sample is `|y - y_hat| / u_hat` and the interval at
//! threshold `q` is `[y_hat - q*u_hat, y_hat + q*u_hat]`, so membership in the
//! interval is equivalent to the score being at most `q`. Both ends are
//! closed: a label sitting exactly on the boundary counts as covered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, LabelKind, Result};

/// One sample's model outputs plus its clean and/or noisy label, all in
/// normalized label units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Model mean prediction.
    pub y_hat: f64,
    /// Model heuristic standard deviation, strictly positive.
    pub u_hat: f64,
    /// Ground-truth label, when known.
    pub label_clean: Option<f64>,
    /// Observed (possibly noise-corrupted) label, when known.
    pub label_noisy: Option<f64>,
}

impl PredictionRecord {
    /// Build a record, rejecting non-finite fields, `u_hat <= 0`, and records
    /// carrying no label at all. Bad records are refused here rather than
    /// clamped later: a zero-variance record would corrupt every quantile
    /// downstream.
    pub fn new(
        y_hat: f64,
        u_hat: f64,
        label_clean: Option<f64>,
        label_noisy: Option<f64>,
    ) -> Result<Self> {
        if !y_hat.is_finite() {
            return Err(Error::NonFinite("y_hat"));
        }
        if !u_hat.is_finite() {
            return Err(Error::NonFinite("u_hat"));
        }
        if u_hat <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "u_hat",
                reason: format!("must be strictly positive, got {u_hat}"),
            });
        }
        if let Some(y) = label_clean {
            if !y.is_finite() {
                return Err(Error::NonFinite("label_clean"));
            }
        }
        if let Some(y) = label_noisy {
            if !y.is_finite() {
                return Err(Error::NonFinite("label_noisy"));
            }
        }
        if label_clean.is_none() && label_noisy.is_none() {
            return Err(Error::InvalidParameter {
                name: "labels",
                reason: "at least one of label_clean / label_noisy must be present".into(),
            });
        }
        Ok(Self {
            y_hat,
            u_hat,
            label_clean,
            label_noisy,
        })
    }

    /// The requested label field.
    pub fn label(&self, kind: LabelKind) -> Result<f64> {
        let v = match kind {
            LabelKind::Clean => self.label_clean,
            LabelKind::Noisy => self.label_noisy,
        };
        v.ok_or(Error::MissingLabel(kind))
    }

    /// Nonconformity score `|label - y_hat| / u_hat` for the chosen label.
    pub fn score(&self, kind: LabelKind) -> Result<f64> {
        let y = self.label(kind)?;
        Ok((y - self.y_hat).abs() / self.u_hat)
    }

    /// Confidence interval `[y_hat - q*u_hat, y_hat + q*u_hat]`.
    pub fn interval(&self, q: f64) -> Result<Interval> {
        if !(q >= 0.0) {
            return Err(Error::NegativeThreshold(q));
        }
        let half = q * self.u_hat;
        Ok(Interval {
            lo: self.y_hat - half,
            hi: self.y_hat + half,
        })
    }
}

/// Closed interval on the label axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidParameter {
                name: "interval",
                reason: format!("lo {lo} must not exceed hi {hi}"),
            });
        }
        Ok(Self { lo, hi })
    }

    /// True iff `lo <= y <= hi`; the boundary counts as covered.
    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// The calibration method that produced a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Split CP on clean calibration labels.
    Oracle,
    /// Split CP run directly on the noisy calibration labels.
    Noisy,
    /// Deconvolution-based recovery of the noise-free threshold.
    Robust,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Oracle => write!(f, "oracle"),
            Method::Noisy => write!(f, "noisy"),
            Method::Robust => write!(f, "robust"),
        }
    }
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: Method,
    /// Calibrated threshold, finite and nonnegative.
    pub q_hat: f64,
    /// Outer-loop iterations; 0 for the direct methods.
    pub iterations: usize,
    /// Estimated clean-label coverage at `q_hat` (robust method only).
    pub estimated_coverage: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(y_hat: f64, u_hat: f64, label: f64) -> PredictionRecord {
        PredictionRecord::new(y_hat, u_hat, Some(label), Some(label)).unwrap()
    }

    #[test]
    fn score_matches_hand_computed_values() {
        assert_eq!(record(1.0, 2.0, 3.0).score(LabelKind::Clean).unwrap(), 1.0);
        assert_eq!(record(0.7, 0.5, 0.7).score(LabelKind::Clean).unwrap(), 0.0);
        // |0.1 - (-0.4)| / 0.25 = 0.5 / 0.25
        assert_eq!(
            record(-0.4, 0.25, 0.1).score(LabelKind::Clean).unwrap(),
            2.0
        );
    }

    #[test]
    fn score_demands_the_requested_label() {
        let r = PredictionRecord::new(0.0, 1.0, Some(1.0), None).unwrap();
        assert!(matches!(
            r.score(LabelKind::Noisy),
            Err(Error::MissingLabel(LabelKind::Noisy))
        ));
        assert!(r.score(LabelKind::Clean).is_ok());
    }

    #[test]
    fn interval_endpoints_and_length() {
        let iv = record(0.0, 1.0, 0.0).interval(2.0).unwrap();
        assert_eq!((iv.lo, iv.hi), (-2.0, 2.0));

        let iv = record(5.0, 0.5, 0.0).interval(0.0).unwrap();
        assert_eq!((iv.lo, iv.hi), (5.0, 5.0));

        // q taken from the oracle-threshold magnitude: 1.5 -+ 2.48 * 2.0
        let iv = record(1.5, 2.0, 0.0).interval(2.48).unwrap();
        assert!((iv.lo - -3.46).abs() < 1e-12);
        assert!((iv.hi - 6.46).abs() < 1e-12);
    }

    #[test]
    fn negative_threshold_is_rejected() {
        assert!(matches!(
            record(0.0, 1.0, 0.0).interval(-0.1),
            Err(Error::NegativeThreshold(_))
        ));
    }

    #[test]
    fn closed_interval_boundaries() {
        let iv = Interval::new(-2.0, 2.0).unwrap();
        assert!(iv.contains(2.0));
        assert!(!iv.contains(2.0001));
        let point = Interval::new(5.0, 5.0).unwrap();
        assert!(point.contains(5.0));
    }

    #[test]
    fn construction_rejects_bad_records() {
        assert!(PredictionRecord::new(0.0, 0.0, Some(1.0), None).is_err());
        assert!(PredictionRecord::new(0.0, -1.0, Some(1.0), None).is_err());
        assert!(PredictionRecord::new(f64::NAN, 1.0, Some(1.0), None).is_err());
        assert!(PredictionRecord::new(0.0, 1.0, None, None).is_err());
        assert!(PredictionRecord::new(0.0, 1.0, Some(f64::INFINITY), None).is_err());
    }

    proptest! {
        // Membership in interval(q) is equivalent to score <= q. Exact
        // boundary cases can flip on the last ulp, so probe q strictly on
        // either side of the score.
        #[test]
        fn score_interval_duality(
            y_hat in -1e3..1e3f64,
            u_hat in 1e-3..1e3f64,
            y in -1e3..1e3f64,
        ) {
            let r = record(y_hat, u_hat, y);
            let s = r.score(LabelKind::Clean).unwrap();

            let above = s * (1.0 + 1e-9) + 1e-12;
            prop_assert!(r.interval(above).unwrap().contains(y));

            if s > 0.0 {
                let below = (s * (1.0 - 1e-9) - 1e-12).max(0.0);
                prop_assert!(!r.interval(below).unwrap().contains(y));
            }
        }

        #[test]
        fn interval_length_is_twice_q_u(
            y_hat in -1e3..1e3f64,
            u_hat in 1e-3..1e3f64,
            q in 0.0..1e3f64,
        ) {
            let r = PredictionRecord::new(y_hat, u_hat, Some(0.0), None).unwrap();
            let iv = r.interval(q).unwrap();
            let expect = 2.0 * q * u_hat;
            prop_assert!((iv.length() - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }
}
