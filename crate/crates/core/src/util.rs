//! Small numeric helpers used across modules.

/// Ceiling that forgives values sitting a few ulps above an integer,
/// e.g. `(n+1)*(1-alpha)` evaluating to 18.000000000000004 must yield 18.
pub(crate) fn guarded_ceil(x: f64) -> f64 {
    (x * (1.0 - 1e-12)).ceil()
}

/// `floor(x / step)` snapping to the nearest integer when `x / step` is
/// within a relative 1e-9 of it. Keeps grid edges exact when `x` is an
/// intended multiple of `step` that floating point put on the wrong side.
pub(crate) fn snap_div_floor(x: f64, step: f64) -> i64 {
    let t = x / step;
    let r = t.round();
    if (t - r).abs() <= 1e-9 * (1.0 + t.abs()) {
        r as i64
    } else {
        t.floor() as i64
    }
}

/// `ceil(x / step)` with the same snapping rule as [`snap_div_floor`].
pub(crate) fn snap_div_ceil(x: f64, step: f64) -> i64 {
    let t = x / step;
    let r = t.round();
    if (t - r).abs() <= 1e-9 * (1.0 + t.abs()) {
        r as i64
    } else {
        t.ceil() as i64
    }
}

/// Sample mean.
pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (ss / (values.len() - 1) as f64).sqrt()
}
