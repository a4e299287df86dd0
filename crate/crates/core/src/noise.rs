//! Label-noise level estimation from a model trained on noisy labels.
//!
//! A Gaussian-NLL model fit on noisy labels learns `u_hat^2 = u^2 + sigma^2`.
//! On "easy" samples `u^2` is near zero, so the smallest `u_hat^2` values
//! across the training predictions expose `sigma^2` directly: the estimate
//! is the square root of the mean of the lowest `ceil(fraction * n)` squared
//! uncertainties.

use crate::error::{Error, Result};
use crate::util::guarded_ceil;

/// Estimate the noise standard deviation from per-sample `u_hat` values.
/// `fraction` selects how much of the lower tail to average (default 0.01
/// at the call sites).
pub fn estimate_sigma(u_hat_values: &[f64], fraction: f64) -> Result<f64> {
    if u_hat_values.is_empty() {
        return Err(Error::EmptyInput("u_hat_values"));
    }
    if !fraction.is_finite() || !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "fraction",
            reason: format!("must lie in (0, 1], got {fraction}"),
        });
    }
    if u_hat_values.iter().any(|u| !u.is_finite()) {
        return Err(Error::NonFinite("u_hat_values"));
    }
    if let Some(bad) = u_hat_values.iter().find(|&&u| u <= 0.0) {
        return Err(Error::InvalidParameter {
            name: "u_hat_values",
            reason: format!("uncertainties must be positive, got {bad}"),
        });
    }

    let n = u_hat_values.len();
    let k = (guarded_ceil(fraction * n as f64) as usize).clamp(1, n);

    let mut squared: Vec<f64> = u_hat_values.iter().map(|u| u * u).collect();
    squared.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mean_low = squared[..k].iter().sum::<f64>() / k as f64;
    Ok(mean_low.sqrt())
}

/// Number of tail samples [`estimate_sigma`] averages for a given input size.
pub fn tail_count(n: usize, fraction: f64) -> usize {
    (guarded_ceil(fraction * n as f64) as usize).clamp(1, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SyntheticConfig};

    #[test]
    fn constant_uncertainties_return_that_scale() {
        let u = vec![0.2; 50];
        assert!((estimate_sigma(&u, 0.01).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn full_fraction_is_the_plain_quadratic_mean() {
        // u^2 values 0.01 and 0.09 -> sqrt(0.05)
        let u = vec![0.1, 0.3];
        let s = estimate_sigma(&u, 1.0).unwrap();
        assert!((s - 0.05f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tiny_datasets_still_use_one_sample() {
        let u = vec![0.4, 0.9];
        // ceil(0.01 * 2) = 1: just the smallest value.
        assert_eq!(estimate_sigma(&u, 0.01).unwrap(), 0.4);
        assert_eq!(tail_count(2, 0.01), 1);
        assert_eq!(tail_count(100, 0.01), 1);
        assert_eq!(tail_count(250, 0.01), 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(estimate_sigma(&[], 0.01).is_err());
        assert!(estimate_sigma(&[0.1], 0.0).is_err());
        assert!(estimate_sigma(&[0.1], 1.5).is_err());
        assert!(estimate_sigma(&[0.0, 0.1], 0.5).is_err());
        assert!(estimate_sigma(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn scale_equivariance() {
        let u = vec![0.07, 0.2, 0.33, 0.5, 1.1, 0.09];
        let base = estimate_sigma(&u, 0.5).unwrap();
        let scaled: Vec<f64> = u.iter().map(|x| x * 3.0).collect();
        let s = estimate_sigma(&scaled, 0.5).unwrap();
        assert!((s - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_every_input() {
        let u = vec![0.1, 0.2, 0.3, 0.4];
        let base = estimate_sigma(&u, 0.75).unwrap();
        for i in 0..u.len() {
            let mut bumped = u.clone();
            bumped[i] += 0.05;
            assert!(estimate_sigma(&bumped, 0.75).unwrap() >= base);
        }
    }

    #[test]
    fn recovers_the_planted_noise_level() {
        // Noisy-trained emulation: u_hat^2 = u^2 + sigma^2 with an easy-sample
        // spike, so the lowest 1% of u_hat^2 sits just above sigma^2.
        let cfg = SyntheticConfig {
            n: 20_000,
            sigma_true: 0.2,
            seed: 17,
            ..SyntheticConfig::default()
        };
        let records = synth::generate(&cfg).unwrap();
        let u: Vec<f64> = records.iter().map(|r| r.u_hat).collect();
        let s = estimate_sigma(&u, 0.01).unwrap();
        assert!((0.19..=0.215).contains(&s), "estimated sigma {s}");
    }
}
