//! Soft-margin SVM solvers on standardized features.
//!
//! * Linear: dual coordinate descent for the hinge loss, with the bias folded
//!   in as a constant feature. The dual objective `½‖w‖² - Σα` is recorded
//!   after each pass; every coordinate step minimizes it exactly, so the trace
//!   is non-increasing.
//! * Kernel: SMO with second-order working-set selection on a precomputed
//!   Gram matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct LinearSolution {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub passes: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

/// `labels[i]` is `+1.0` or `-1.0`.
pub(crate) fn linear_dual_cd(
    x: ArrayView2<f64>,
    labels: &[f64],
    c: f64,
    tolerance: f64,
    max_passes: usize,
    seed: u64,
) -> LinearSolution {
    let (n, d) = x.dim();
    let mut w = Array1::<f64>::zeros(d);
    let mut bias = 0.0;
    let mut alpha = vec![0.0; n];
    let q_diag: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut passes = 0;
    while passes < max_passes {
        passes += 1;
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let xi = x.row(i);
            let yi = labels[i];
            let g = yi * (xi.dot(&w) + bias) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * yi;
                if step != 0.0 {
                    w.scaled_add(step, &xi);
                    bias += step;
                }
            }
        }
        trace.push(0.5 * (w.dot(&w) + bias * bias) - alpha.iter().sum::<f64>());
        if pg_max - pg_min < tolerance {
            converged = true;
            break;
        }
    }
    LinearSolution {
        weights: w,
        bias,
        passes,
        converged,
        objective_trace: trace,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct KernelSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ αᵢ yᵢ K(xᵢ, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// SMO for `min ½ αᵀQα - Σα`, `Q = y yᵀ ∘ K`, `0 ≤ α ≤ C`, `yᵀα = 0`.
pub(crate) fn smo(gram: ArrayView2<f64>, labels: &[f64], c: f64, tolerance: f64, max_iter: usize) -> KernelSolution {
    let n = labels.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let at_upper = |a: f64| a >= c;
    let at_lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // Working set selection (second-order, as in LIBSVM).
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if labels[t] > 0.0 {
                if !at_upper(alpha[t]) && -grad[t] >= g_max {
                    g_max = -grad[t];
                    i_sel = Some(t);
                }
            } else if !at_lower(alpha[t]) && grad[t] >= g_max {
                g_max = grad[t];
                i_sel = Some(t);
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let diff = if labels[t] > 0.0 {
                    if at_lower(alpha[t]) {
                        continue;
                    }
                    g_max2 = g_max2.max(grad[t]);
                    g_max + grad[t]
                } else {
                    if at_upper(alpha[t]) {
                        continue;
                    }
                    g_max2 = g_max2.max(-grad[t]);
                    g_max - grad[t]
                };
                if diff > 0.0 {
                    let quad = gram[[i, i]] + gram[[t, t]] - 2.0 * gram[[i, t]];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            converged = true;
            break;
        };
        if g_max + g_max2 < tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let (yi, yj) = (labels[i], labels[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]];
        if quad <= 0.0 {
            quad = TAU;
        }
        if yi != yj {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for k in 0..n {
            grad[k] += yi * labels[k] * gram[[i, k]] * di + yj * labels[k] * gram[[j, k]] * dj;
        }
    }

    // Bias from free vectors, or the midpoint of the feasible interval.
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..n {
        let yg = labels[t] * grad[t];
        if at_upper(alpha[t]) {
            if labels[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if at_lower(alpha[t]) {
            if labels[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (upper + lower) / 2.0
    };
    KernelSolution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

#[inline]
pub(crate) fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, gamma: f64) -> f64 {
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * sq).exp()
}

/// `K[i, j] = rbf(a_i, b_j)`
pub(crate) fn rbf_gram(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    let mut k = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            k[[i, j]] = rbf(ra, rb, gamma);
        }
    }
    k
}
