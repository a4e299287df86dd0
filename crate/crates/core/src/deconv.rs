//! Masked, box-constrained, ridge-regularized least-squares deconvolution.
//!
//! Each row of the empirical matrix is deconvolved independently: find
//!
//! ```text
//!   min_v  || (v * k - m) .* mask ||^2  +  lambda * ||v||^2
//!   s.t.   0 <= v <= 1/delta_y
//! ```
//!
//! where `*` is "same"-size zero-padded convolution with the discretized
//! noise kernel. The regularizer separates across rows, so the full-matrix
//! problem is exactly the per-row problem repeated.
//!
//! Solved by projected gradient descent with fixed step `1/Lambda`, where
//! `Lambda` upper-bounds the Lipschitz constant of the gradient: 50 power
//! iterations on the masked-convolution normal operator, a 5% safety margin,
//! plus `lambda`. The objective is then nonincreasing at every iterate
//! (asserted in debug builds); iteration stops when the relative objective
//! change drops below `tol` or `max_iters` is reached.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{EmpiricalMatrix, NoiseKernel};

/// Deconvolution settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvConfig {
    /// Ridge weight on the recovered matrix.
    pub lambda: f64,
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
    /// Iteration cap per row.
    pub max_iters: usize,
    /// Keep the per-iteration objective trajectory on each row solution.
    pub record_objectives: bool,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            tol: 1e-8,
            max_iters: 10_000,
            record_objectives: false,
        }
    }
}

impl DeconvConfig {
    fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be finite and nonnegative, got {}", self.lambda),
            });
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "tol",
                reason: format!("must be finite and positive, got {}", self.tol),
            });
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iters",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Solution of one row problem.
#[derive(Debug, Clone)]
pub struct RowSolution {
    pub values: Vec<f64>,
    /// Projected-gradient steps taken.
    pub iterations: usize,
    /// False when the iteration cap was hit before the tolerance.
    pub converged: bool,
    /// Relative objective change at the final iteration.
    pub final_rel_change: f64,
    /// Objective trajectory, populated when `record_objectives` is set.
    pub objectives: Vec<f64>,
}

/// Deconvolved matrix plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct Deconvolved {
    pub matrix: EmpiricalMatrix,
    /// Projected-gradient steps summed over all rows.
    pub total_iterations: u64,
    /// Rows that hit the iteration cap (within 100x tolerance, so still
    /// returned with a warning rather than an error).
    pub unconverged_rows: usize,
}

/// Zero-padded "same" correlation. The kernel taps are symmetric, so this is
/// the convolution and also its own adjoint.
///
/// The inner product uses a fixed four-lane summation tree, so results are
/// identical across runs and thread schedules on a given machine.
fn correlate(taps: &[f64], padded: &[f64], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::sync::OnceLock;
        static HAS_FMA: OnceLock<bool> = OnceLock::new();
        let fma = *HAS_FMA.get_or_init(|| {
            std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        });
        if fma {
            // Safety: feature presence checked above.
            unsafe { correlate_fma(taps, padded, out) };
            return;
        }
    }
    correlate_generic(taps, padded, out);
}

/// AVX2+FMA correlation in tap-broadcast form: a block of 32 outputs lives
/// in eight accumulators while the taps sweep once, so every input element
/// is one streaming load folded into an FMA. Accumulation order is fixed
/// per output lane, so the result is reproducible run to run.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2", enable = "fma")]
unsafe fn correlate_fma(taps: &[f64], padded: &[f64], out: &mut [f64]) {
    use core::arch::x86_64::*;

    // Plain [f64; 4] reads instead of _mm256_loadu_pd: f64 alignment is
    // enough for the array type, and this dodges the per-load precondition
    // checks that debug-assertion builds compile into the std intrinsics.
    #[inline(always)]
    unsafe fn load4(p: *const f64) -> __m256d {
        core::mem::transmute(*(p as *const [f64; 4]))
    }
    #[inline(always)]
    unsafe fn store4(p: *mut f64, v: __m256d) {
        *(p as *mut [f64; 4]) = core::mem::transmute(v);
    }

    let w = taps.len();
    let n = out.len();
    debug_assert!(padded.len() >= n + w - 1);
    let tp = taps.as_ptr();
    let pp = padded.as_ptr();

    let mut j = 0;
    while j + 16 <= n {
        let base = pp.add(j);
        let mut a0 = _mm256_setzero_pd();
        let mut a1 = _mm256_setzero_pd();
        let mut a2 = _mm256_setzero_pd();
        let mut a3 = _mm256_setzero_pd();
        for t in 0..w {
            let tb = _mm256_set1_pd(*tp.add(t));
            let s = base.add(t);
            a0 = _mm256_fmadd_pd(tb, load4(s), a0);
            a1 = _mm256_fmadd_pd(tb, load4(s.add(4)), a1);
            a2 = _mm256_fmadd_pd(tb, load4(s.add(8)), a2);
            a3 = _mm256_fmadd_pd(tb, load4(s.add(12)), a3);
        }
        let op = out.as_mut_ptr().add(j);
        store4(op, a0);
        store4(op.add(4), a1);
        store4(op.add(8), a2);
        store4(op.add(12), a3);
        j += 16;
    }

    while j + 4 <= n {
        let base = pp.add(j);
        let mut acc = _mm256_setzero_pd();
        for t in 0..w {
            let tb = _mm256_set1_pd(*tp.add(t));
            acc = _mm256_fmadd_pd(tb, load4(base.add(t)), acc);
        }
        store4(out.as_mut_ptr().add(j), acc);
        j += 4;
    }

    while j < n {
        let base = pp.add(j);
        let mut s0 = 0.0f64;
        let mut s1 = 0.0f64;
        let mut t = 0;
        while t + 2 <= w {
            s0 = (*tp.add(t)).mul_add(*base.add(t), s0);
            s1 = (*tp.add(t + 1)).mul_add(*base.add(t + 1), s1);
            t += 2;
        }
        if t < w {
            s0 = (*tp.add(t)).mul_add(*base.add(t), s0);
        }
        out[j] = s0 + s1;
        j += 1;
    }
}

fn correlate_generic(taps: &[f64], padded: &[f64], out: &mut [f64]) {
    let w = taps.len();
    for (j, o) in out.iter_mut().enumerate() {
        let window = &padded[j..j + w];
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        let mut t = 0;
        while t + 4 <= w {
            s0 += taps[t] * window[t];
            s1 += taps[t + 1] * window[t + 1];
            s2 += taps[t + 2] * window[t + 2];
            s3 += taps[t + 3] * window[t + 3];
            t += 4;
        }
        let mut rest = 0.0;
        while t < w {
            rest += taps[t] * window[t];
            t += 1;
        }
        *o = (s0 + s2) + (s1 + s3) + rest;
    }
}

/// Shared, immutable description of the per-row problem.
struct RowProblem<'a> {
    /// Kernel weights pre-scaled by `delta_y` so correlation approximates the
    /// continuous convolution integral.
    taps: Vec<f64>,
    radius: usize,
    mask: &'a [bool],
    lambda: f64,
    /// `1 / Lambda`.
    step: f64,
    vmax: f64,
    tol: f64,
    max_iters: usize,
    record_objectives: bool,
    len: usize,
}

/// Per-worker scratch buffers.
struct Workspace {
    padded: Vec<f64>,
    conv_out: Vec<f64>,
    residual: Vec<f64>,
    grad_conv: Vec<f64>,
}

impl Workspace {
    fn new(len: usize, radius: usize) -> Self {
        Self {
            padded: vec![0.0; len + 2 * radius],
            conv_out: vec![0.0; len],
            residual: vec![0.0; len],
            grad_conv: vec![0.0; len],
        }
    }
}

impl<'a> RowProblem<'a> {
    fn build(
        kernel: &NoiseKernel,
        mask: &'a [bool],
        config: &DeconvConfig,
        delta_y: f64,
    ) -> Result<Self> {
        config.validate()?;
        if (kernel.delta_y - delta_y).abs() > 1e-9 * delta_y.abs().max(1e-300) {
            return Err(Error::InvalidParameter {
                name: "kernel",
                reason: format!(
                    "kernel bin width {} does not match matrix bin width {delta_y}",
                    kernel.delta_y
                ),
            });
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::AllMasked);
        }
        let len = mask.len();
        let radius = kernel.radius();
        let taps: Vec<f64> = kernel.weights.iter().map(|&w| w * delta_y).collect();

        let norm = masked_normal_operator_norm(&taps, radius, mask);
        let lipschitz = 2.0 * (1.05 * norm + config.lambda);
        let step = if lipschitz > 0.0 {
            1.0 / lipschitz
        } else {
            0.0
        };

        Ok(Self {
            taps,
            radius,
            mask,
            lambda: config.lambda,
            step,
            vmax: 1.0 / delta_y,
            tol: config.tol,
            max_iters: config.max_iters,
            record_objectives: config.record_objectives,
            len,
        })
    }

    /// Copy `src` into the center of the padded buffer and zero the right
    /// pad, which may hold leftovers from a longer slab solved earlier on the
    /// same worker. The left pad is never written and stays zero.
    fn load_padded(&self, src: &[f64], ws: &mut Workspace) {
        let sl = src.len();
        ws.padded[self.radius..self.radius + sl].copy_from_slice(src);
        ws.padded[self.radius + sl..sl + 2 * self.radius].fill(0.0);
    }

    /// Forward pass at `v` over the slab: fills `conv_out` and the masked
    /// residual, returns the objective value.
    fn objective(
        &self,
        v: &[f64],
        m_row: &[f64],
        mask: &[bool],
        ws: &mut Workspace,
    ) -> f64 {
        let sl = v.len();
        self.load_padded(v, ws);
        correlate(&self.taps, &ws.padded[..sl + 2 * self.radius], &mut ws.conv_out[..sl]);
        let mut fit = 0.0;
        let mut vsq = 0.0;
        for j in 0..sl {
            let d = if mask[j] { ws.conv_out[j] - m_row[j] } else { 0.0 };
            ws.residual[j] = d;
            fit += d * d;
            vsq += v[j] * v[j];
        }
        fit + self.lambda * vsq
    }

    fn solve(
        &self,
        row: usize,
        m_row_full: &[f64],
        warm: Option<&[f64]>,
        ws: &mut Workspace,
    ) -> Result<RowSolution> {
        if m_row_full.len() != self.len {
            return Err(Error::InvalidParameter {
                name: "row",
                reason: format!("row length {} != mask length {}", m_row_full.len(), self.len),
            });
        }
        if m_row_full.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix row"));
        }

        // Locate the unmasked data support. Without any, zero is optimal: the
        // fit term cannot reward mass and the ridge penalizes all of it.
        let mut support = None;
        for (j, (&v, &keep)) in m_row_full.iter().zip(self.mask).enumerate() {
            if keep && v != 0.0 {
                support = Some(match support {
                    None => (j, j),
                    Some((a, _)) => (a, j),
                });
            }
        }
        let Some((a, b)) = support else {
            return Ok(self.zero_solution());
        };
        if self.step == 0.0 {
            return Ok(self.zero_solution());
        }

        // Beyond kernel reach of the data the gradient only ever points down,
        // so the optimum vanishes there and the problem restricts exactly to
        // a slab around the support.
        let reach = 2 * self.radius;
        let slo = a.saturating_sub(reach);
        let shi = (b + reach + 1).min(self.len);
        let sl = shi - slo;
        let m_row = &m_row_full[slo..shi];
        let mask = &self.mask[slo..shi];

        let mut v: Vec<f64> = match warm {
            Some(w) => w[slo..shi]
                .iter()
                .map(|&x| x.clamp(0.0, self.vmax))
                .collect(),
            None => vec![0.0; sl],
        };

        let mut objectives = Vec::new();
        let mut f_prev = self.objective(&v, m_row, mask, ws);

        // A warm start from a neighboring problem is usually right up to an
        // overall scale; the optimal rescale is free because A(c*v) = c*Av.
        if warm.is_some() && f_prev > 0.0 {
            let mut dot_am = 0.0;
            let mut dot_aa = 0.0;
            let mut vsq = 0.0;
            for j in 0..sl {
                if mask[j] {
                    dot_am += ws.conv_out[j] * m_row[j];
                    dot_aa += ws.conv_out[j] * ws.conv_out[j];
                }
                vsq += v[j] * v[j];
            }
            let denom = dot_aa + self.lambda * vsq;
            if denom > 0.0 {
                let c = (dot_am / denom).max(0.0);
                let vmax_in = v.iter().fold(0.0f64, |m, &x| m.max(x));
                if c != 1.0 && c * vmax_in <= self.vmax {
                    let mut fit = 0.0;
                    for j in 0..sl {
                        v[j] *= c;
                        let d = if mask[j] {
                            c * ws.conv_out[j] - m_row[j]
                        } else {
                            0.0
                        };
                        ws.residual[j] = d;
                        fit += d * d;
                    }
                    let f_scaled = fit + self.lambda * c * c * vsq;
                    if f_scaled <= f_prev {
                        f_prev = f_scaled;
                    } else {
                        // Numerically worse: undo.
                        let inv = 1.0 / c;
                        for j in 0..sl {
                            v[j] *= inv;
                        }
                        f_prev = self.objective(&v, m_row, mask, ws);
                    }
                }
            }
        }
        if self.record_objectives {
            objectives.push(f_prev);
        }

        let two_step = 2.0 * self.step;
        let mut rel = f64::INFINITY;
        let mut iterations = 0;
        for _ in 1..=self.max_iters {
            // Gradient: 2 A' M (A v - m) + 2 lambda v, using the residual of
            // the last objective evaluation.
            ws.padded[self.radius..self.radius + sl].copy_from_slice(&ws.residual[..sl]);
            ws.padded[self.radius + sl..sl + 2 * self.radius].fill(0.0);
            correlate(
                &self.taps,
                &ws.padded[..sl + 2 * self.radius],
                &mut ws.grad_conv[..sl],
            );
            for j in 0..sl {
                let stepped = v[j] - two_step * (ws.grad_conv[j] + self.lambda * v[j]);
                v[j] = stepped.clamp(0.0, self.vmax);
            }
            iterations += 1;

            let f = self.objective(&v, m_row, mask, ws);
            debug_assert!(
                f <= f_prev * (1.0 + 1e-9) + 1e-12,
                "objective rose on row {row}: {f_prev} -> {f}"
            );
            if self.record_objectives {
                objectives.push(f);
            }
            rel = (f_prev - f) / f_prev.max(f64::MIN_POSITIVE);
            f_prev = f;
            if rel < self.tol {
                return Ok(self.embed(v, slo, iterations, true, rel, objectives));
            }
        }

        if rel > 100.0 * self.tol {
            return Err(Error::NonConvergence {
                row,
                iters: iterations,
                rel_change: rel,
            });
        }
        Ok(self.embed(v, slo, iterations, false, rel, objectives))
    }

    fn zero_solution(&self) -> RowSolution {
        RowSolution {
            values: vec![0.0; self.len],
            iterations: 0,
            converged: true,
            final_rel_change: 0.0,
            objectives: if self.record_objectives {
                vec![0.0]
            } else {
                Vec::new()
            },
        }
    }

    fn embed(
        &self,
        slab: Vec<f64>,
        slo: usize,
        iterations: usize,
        converged: bool,
        final_rel_change: f64,
        objectives: Vec<f64>,
    ) -> RowSolution {
        let mut values = vec![0.0; self.len];
        values[slo..slo + slab.len()].copy_from_slice(&slab);
        RowSolution {
            values,
            iterations,
            converged,
            final_rel_change,
            objectives,
        }
    }
}

/// Largest eigenvalue of `A' M A` (`A` the scaled convolution, `M` the column
/// mask), estimated by 50 power iterations from a uniform start. The operator
/// has nonnegative entries, so the uniform vector overlaps its top
/// eigenvector well.
fn masked_normal_operator_norm(taps: &[f64], radius: usize, mask: &[bool]) -> f64 {
    let len = mask.len();
    let mut v = vec![1.0 / (len as f64).sqrt(); len];
    let mut padded = vec![0.0; len + 2 * radius];
    let mut av = vec![0.0; len];
    let mut out = vec![0.0; len];
    let mut norm = 0.0;

    for _ in 0..50 {
        padded[radius..radius + len].copy_from_slice(&v);
        correlate(taps, &padded, &mut av);
        for j in 0..len {
            if !mask[j] {
                av[j] = 0.0;
            }
        }
        padded[radius..radius + len].copy_from_slice(&av);
        correlate(taps, &padded, &mut out);

        norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return 0.0;
        }
        for j in 0..len {
            v[j] = out[j] / norm;
        }
    }
    norm
}

/// Deconvolve a single density row. See the module docs for the objective.
pub fn solve_row(
    m_row: &[f64],
    kernel: &NoiseKernel,
    col_mask: &[bool],
    config: &DeconvConfig,
    delta_y: f64,
) -> Result<RowSolution> {
    let problem = RowProblem::build(kernel, col_mask, config, delta_y)?;
    let mut ws = Workspace::new(problem.len, problem.radius);
    problem.solve(0, m_row, None, &mut ws)
}

/// Deconvolve every row of the matrix independently.
pub fn solve(
    matrix: &EmpiricalMatrix,
    kernel: &NoiseKernel,
    config: &DeconvConfig,
) -> Result<Deconvolved> {
    solve_warm(matrix, kernel, config, None)
}

/// [`solve`], optionally warm-starting each row from the corresponding row of
/// a previous solution (row-major, same dimensions). Rows stay independent:
/// row `l` is only ever seeded from row `l`.
pub fn solve_warm(
    matrix: &EmpiricalMatrix,
    kernel: &NoiseKernel,
    config: &DeconvConfig,
    warm: Option<&[f64]>,
) -> Result<Deconvolved> {
    let l = matrix.num_bins;
    if let Some(w) = warm {
        if w.len() != matrix.values.len() {
            return Err(Error::InvalidParameter {
                name: "warm",
                reason: format!("warm start length {} != matrix size {}", w.len(), l * l),
            });
        }
    }
    let problem = RowProblem::build(kernel, &matrix.col_mask, config, matrix.delta_y)?;

    let solutions: Vec<RowSolution> = (0..l)
        .into_par_iter()
        .map_init(
            || Workspace::new(problem.len, problem.radius),
            |ws, row| {
                let warm_row = warm.map(|w| &w[row * l..(row + 1) * l]);
                problem.solve(row, matrix.row(row), warm_row, ws)
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::with_capacity(l * l);
    let mut total_iterations = 0u64;
    let mut unconverged_rows = 0;
    for sol in solutions {
        total_iterations += sol.iterations as u64;
        if !sol.converged {
            unconverged_rows += 1;
        }
        values.extend_from_slice(&sol.values);
    }

    Ok(Deconvolved {
        matrix: EmpiricalMatrix {
            values,
            col_mask: matrix.col_mask.clone(),
            col_counts: matrix.col_counts.clone(),
            num_bins: matrix.num_bins,
            delta_y: matrix.delta_y,
            n_samples: matrix.n_samples,
        },
        total_iterations,
        unconverged_rows,
    })
}
