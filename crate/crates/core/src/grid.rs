//! Label-axis binning, the empirical coverage-density matrix, and noise-kernel
//! discretization.
//!
//! The label axis is partitioned into `L` half-open bins of width `delta_y`.
//! For a threshold `q`, the empirical matrix entry at (row `l`, column `c`) is
//!
//! ```text
//!   #{ i : noisy label of i falls in bin c  AND  bin l fits inside C_q(x_i) }
//!   ---------------------------------------------------------------------
//!                              n * delta_y
//! ```
//!
//! i.e. a density-scaled joint count of "candidate bin covered" and "observed
//! label bin". Columns that received no calibration samples are masked out;
//! they carry no evidence and must not constrain the deconvolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, LabelKind, Result};
use crate::model::PredictionRecord;
use crate::util::{snap_div_ceil, snap_div_floor};

/// Uniform discretization of the label axis into `num_bins` half-open bins
/// `[origin + l*delta_y, origin + (l+1)*delta_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    /// Left edge of bin 0.
    pub origin: f64,
    /// Bin width.
    pub delta_y: f64,
    /// Number of bins `L`.
    pub num_bins: usize,
}

impl BinGrid {
    /// Build a grid spanning `[min - pad, max + pad]` over the given labels,
    /// with `pad = max(4*sigma, 5*delta_y)` and edges snapped outward to whole
    /// bins. The 4-sigma padding keeps essentially all kernel mass inside the
    /// grid so the deconvolution is not starved at the edges; the `5*delta_y`
    /// floor guards the sigma = 0 case.
    pub fn build(noisy_labels: &[f64], sigma: f64, delta_y: f64) -> Result<Self> {
        if noisy_labels.is_empty() {
            return Err(Error::EmptyInput("noisy_labels"));
        }
        if noisy_labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("noisy_labels"));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::NegativeSigma(sigma));
        }
        if !delta_y.is_finite() || delta_y <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "delta_y",
                reason: format!("bin width must be positive, got {delta_y}"),
            });
        }

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &y in noisy_labels {
            lo = lo.min(y);
            hi = hi.max(y);
        }
        let pad = (4.0 * sigma).max(5.0 * delta_y);
        let k_lo = snap_div_floor(lo - pad, delta_y);
        let k_hi = snap_div_ceil(hi + pad, delta_y);
        debug_assert!(k_hi > k_lo);

        Ok(Self {
            origin: k_lo as f64 * delta_y,
            delta_y,
            num_bins: (k_hi - k_lo) as usize,
        })
    }

    /// Right edge of the grid span.
    pub fn right_edge(&self) -> f64 {
        self.origin + self.num_bins as f64 * self.delta_y
    }

    /// Left edge of bin `l`.
    pub fn bin_left(&self, l: usize) -> f64 {
        self.origin + l as f64 * self.delta_y
    }

    /// Index of the bin containing `y`. Bins are half-open; `y` exactly on the
    /// right edge of the grid is clamped into the last bin.
    pub fn bin_index(&self, y: f64) -> Result<usize> {
        if !(y >= self.origin && y <= self.right_edge()) {
            return Err(Error::OutOfRange {
                value: y,
                lo: self.origin,
                hi: self.right_edge(),
            });
        }
        let idx = ((y - self.origin) / self.delta_y).floor() as i64;
        Ok(idx.clamp(0, self.num_bins as i64 - 1) as usize)
    }

    /// Range of bin indices whose closure `[left, right]` lies inside the
    /// closed interval `[lo, hi]`; `None` when no bin fits.
    fn contained_bins(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        // left edge >= lo  and  right edge <= hi, allowing boundary equality.
        let l_min = snap_div_ceil(lo - self.origin, self.delta_y).max(0);
        let l_max = (snap_div_floor(hi - self.origin, self.delta_y) - 1)
            .min(self.num_bins as i64 - 1);
        if l_min > l_max {
            None
        } else {
            Some((l_min as usize, l_max as usize))
        }
    }
}

/// L x L nonnegative matrix of empirical coverage densities, with a validity
/// mask over observed-label columns. Rows index candidate-label bins, columns
/// index observed (noisy) label bins. Entries are bounded by `1/delta_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMatrix {
    /// Row-major `num_bins x num_bins` densities.
    pub values: Vec<f64>,
    /// True for columns holding at least one calibration sample.
    pub col_mask: Vec<bool>,
    /// Calibration samples per column.
    pub col_counts: Vec<u32>,
    pub num_bins: usize,
    pub delta_y: f64,
    /// Number of calibration records the matrix was estimated from.
    pub n_samples: usize,
}

impl EmpiricalMatrix {
    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.num_bins..(l + 1) * self.num_bins]
    }

    pub fn value(&self, l: usize, c: usize) -> f64 {
        self.values[l * self.num_bins + c]
    }

    /// Sum of diagonal entries times `delta_y` (the discrete trace integral).
    pub fn trace_mass(&self) -> f64 {
        let mut acc = 0.0;
        for l in 0..self.num_bins {
            acc += self.values[l * self.num_bins + l];
        }
        acc * self.delta_y
    }

    /// Additionally mask out occupied columns whose empirical label density
    /// `count / (n * delta_y)` is at or below `epsilon`, zeroing them so the
    /// "masked implies all-zero" invariant keeps holding.
    pub fn mask_sparse_columns(&mut self, epsilon: f64) {
        let scale = 1.0 / (self.n_samples as f64 * self.delta_y);
        for c in 0..self.num_bins {
            if self.col_mask[c] && f64::from(self.col_counts[c]) * scale <= epsilon {
                self.col_mask[c] = false;
                for l in 0..self.num_bins {
                    self.values[l * self.num_bins + c] = 0.0;
                }
            }
        }
    }
}

/// Empirical coverage-density matrix at threshold `q`, estimated from the
/// noisy labels of `records` on `grid`.
///
/// Bin containment is tested against the closure of each half-open bin, which
/// is conservative by at most one bin edge and applied identically for every
/// method. Counting is integer and sequential, so the result is exactly
/// reproducible.
pub fn noisy_coverage_matrix(
    q: f64,
    records: &[PredictionRecord],
    grid: &BinGrid,
) -> Result<EmpiricalMatrix> {
    if !(q >= 0.0) {
        return Err(Error::NegativeThreshold(q));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }

    let l_bins = grid.num_bins;
    // Column-major counts so each record updates one contiguous run.
    let mut counts = vec![0u32; l_bins * l_bins];
    let mut col_counts = vec![0u32; l_bins];

    for rec in records {
        let noisy = rec.label(LabelKind::Noisy)?;
        let col = grid.bin_index(noisy)?;
        col_counts[col] += 1;

        let iv = rec.interval(q)?;
        if let Some((l_min, l_max)) = grid.contained_bins(iv.lo, iv.hi) {
            for cell in &mut counts[col * l_bins + l_min..=col * l_bins + l_max] {
                *cell += 1;
            }
        }
    }

    let scale = 1.0 / (records.len() as f64 * grid.delta_y);
    let mut values = vec![0.0; l_bins * l_bins];
    for l in 0..l_bins {
        for c in 0..l_bins {
            values[l * l_bins + c] = f64::from(counts[c * l_bins + l]) * scale;
        }
    }

    Ok(EmpiricalMatrix {
        values,
        col_mask: col_counts.iter().map(|&c| c > 0).collect(),
        col_counts,
        num_bins: l_bins,
        delta_y: grid.delta_y,
        n_samples: records.len(),
    })
}

/// Discretized symmetric noise kernel on the `delta_y` grid, unit mass:
/// `sum(weights) * delta_y = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseKernel {
    /// Density taps at offsets `-R*delta_y ..= R*delta_y`, odd length `2R+1`.
    pub weights: Vec<f64>,
    /// Noise standard deviation the kernel discretizes.
    pub sigma: f64,
    pub delta_y: f64,
}

impl NoiseKernel {
    /// Discretize a centered Gaussian of standard deviation `sigma`: density
    /// samples at bin-center offsets out to radius `R = ceil(4*sigma/delta_y)`,
    /// rescaled to unit mass (the truncated tail is below 1e-4 and
    /// renormalizing preserves the unit-mass assumption of the deconvolution).
    /// Below half a bin width the kernel degenerates to the discrete delta.
    pub fn gaussian(sigma: f64, delta_y: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::NegativeSigma(sigma));
        }
        if !delta_y.is_finite() || delta_y <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "delta_y",
                reason: format!("bin width must be positive, got {delta_y}"),
            });
        }
        if sigma < delta_y / 2.0 {
            return Ok(Self::delta(delta_y));
        }

        let radius = (4.0 * sigma / delta_y).ceil() as usize;
        let mut weights = vec![0.0; 2 * radius + 1];
        for (j, w) in weights.iter_mut().enumerate() {
            let offset = (j as f64 - radius as f64) * delta_y;
            *w = (-0.5 * (offset / sigma).powi(2)).exp();
        }
        // Mirror-symmetric summation keeps the taps bit-exactly symmetric
        // after normalization.
        let mut mass = weights[radius];
        for j in 1..=radius {
            mass += 2.0 * weights[radius + j];
        }
        let norm = 1.0 / (mass * delta_y);
        for j in 0..=radius {
            let w = weights[radius + j] * norm;
            weights[radius + j] = w;
            weights[radius - j] = w;
        }
        Ok(Self {
            weights,
            sigma,
            delta_y,
        })
    }

    /// The discrete delta: a single center tap of height `1/delta_y`.
    pub fn delta(delta_y: f64) -> Self {
        Self {
            weights: vec![1.0 / delta_y],
            sigma: 0.0,
            delta_y,
        }
    }

    /// Tap radius `R`; the kernel has `2R+1` taps.
    pub fn radius(&self) -> usize {
        (self.weights.len() - 1) / 2
    }

    /// `sum(weights) * delta_y`, which is 1 up to rounding.
    pub fn mass(&self) -> f64 {
        let r = self.radius();
        let mut acc = self.weights[r];
        for j in 1..=r {
            acc += 2.0 * self.weights[r + j];
        }
        acc * self.delta_y
    }

    pub fn is_delta(&self) -> bool {
        self.weights.len() == 1
    }
}
