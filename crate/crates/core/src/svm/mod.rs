//! Soft-margin SVM on precomputed Grams, ℓp-norm multiple kernel learning,
//! and one-vs-rest multiclass ensembles.

mod mkl;
mod ovr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::GramKernel;

pub use mkl::{combine_kernels, train_linf_mkl, train_lp_mkl, MklModel, MklOptions};
pub use ovr::{predict, train_ovr, OvrEnsemble, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c_reg: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    /// Defaults to `max(10⁶, 100·n)` when `None`.
    pub max_iter: Option<usize>,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c_reg: 1.0,
            tol: 1e-3,
            max_iter: None,
        }
    }
}

impl SvmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_reg > 0.0 && self.c_reg.is_finite()) {
            return Err(Error::Invalid(format!("c_reg {} must be positive", self.c_reg)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvmModel {
    /// `α_i·y_i` for every training row.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub c_reg: f64,
    pub support_indices: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// `Σα − ½·Σ α_i α_j y_i y_j K_ij` at the returned point.
    pub dual_objective: f64,
}

impl BinarySvmModel {
    pub fn alpha(&self) -> Vec<f64> {
        self.dual_coefficients.iter().map(|c| c.abs()).collect()
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    if let Some(v) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::Invalid(format!("binary labels must be ±1, found {v}")));
    }
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Invalid("binary problem needs both classes".into()));
    }
    Ok(())
}

/// SMO with maximal-violating-pair selection, scanning rows in index order.
pub fn solve_binary_svm(gram: &GramKernel, labels: &[f64], opts: &SvmOptions) -> Result<BinarySvmModel> {
    solve_from(&gram.values, labels, opts, None)
}

/// As [`solve_binary_svm`], starting from a feasible `α` (used between MKL steps).
pub fn solve_binary_svm_warm(gram: &GramKernel, labels: &[f64], opts: &SvmOptions, alpha0: &[f64]) -> Result<BinarySvmModel> {
    solve_from(&gram.values, labels, opts, Some(alpha0))
}

fn solve_from(k: &Array2<f64>, y: &[f64], opts: &SvmOptions, alpha0: Option<&[f64]>) -> Result<BinarySvmModel> {
    opts.validate()?;
    let n = y.len();
    if k.dim() != (n, n) {
        return Err(Error::shape(format!("{n}x{n} Gram"), format!("{:?}", k.dim())));
    }
    check_labels(y)?;
    let c = opts.c_reg;
    let mut alpha = match alpha0 {
        Some(a) if a.len() == n => a.iter().map(|v| v.clamp(0.0, c)).collect(),
        Some(a) => return Err(Error::shape(format!("{n} warm-start values"), a.len().to_string())),
        None => vec![0.0; n],
    };
    // Gradient of ½αᵀQα − eᵀα with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0; n];
    for (j, &aj) in alpha.iter().enumerate() {
        if aj != 0.0 {
            for i in 0..n {
                grad[i] += y[i] * y[j] * k[[i, j]] * aj;
            }
        }
    }
    let max_iter = opts.max_iter.unwrap_or_else(|| (100 * n).max(1_000_000));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let Some((i, j)) = select_pair(&alpha, &grad, y, c, opts.tol) else {
            converged = true;
            break;
        };
        iterations += 1;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = {
            let q = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
            if q > 0.0 {
                q
            } else {
                1e-12
            }
        };
        if y[i] != y[j] {
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
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[[t, i]] * di + y[j] * k[[t, j]] * dj);
        }
    }
    if !converged {
        log::warn!("SMO stopped at the iteration cap ({max_iter}) before reaching tolerance {}", opts.tol);
    }
    let bias = -rho(&alpha, &grad, y, c);
    let sum_alpha: f64 = alpha.iter().sum();
    let dual_objective = 0.5 * sum_alpha - 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    Ok(BinarySvmModel {
        dual_coefficients: alpha.iter().zip(y).map(|(a, yi)| a * yi).collect(),
        bias,
        c_reg: c,
        support_indices: (0..n).filter(|&i| alpha[i] > 0.0).collect(),
        converged,
        iterations,
        dual_objective,
    })
}

fn in_up(a: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(a: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

fn select_pair(alpha: &[f64], grad: &[f64], y: &[f64], c: f64, tol: f64) -> Option<(usize, usize)> {
    let mut up = (f64::NEG_INFINITY, usize::MAX);
    let mut low = (f64::INFINITY, usize::MAX);
    for t in 0..alpha.len() {
        let v = -y[t] * grad[t];
        if in_up(alpha[t], y[t], c) && v > up.0 {
            up = (v, t);
        }
        if in_low(alpha[t], y[t], c) && v < low.0 {
            low = (v, t);
        }
    }
    if up.1 == usize::MAX || low.1 == usize::MAX || up.0 - low.0 < tol {
        None
    } else {
        Some((up.1, low.1))
    }
}

fn rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// `f(e) = Σ_i coef_i·K(i, e) + bias` for every evaluation column.
pub fn decision_values(model: &BinarySvmModel, cross_gram: &GramKernel) -> Result<Vec<f64>> {
    let (na, ne) = cross_gram.shape();
    if na != model.dual_coefficients.len() {
        return Err(Error::shape(
            format!("{} anchor rows", model.dual_coefficients.len()),
            format!("{na}"),
        ));
    }
    let mut out = vec![model.bias; ne];
    for &i in &model.support_indices {
        let coef = model.dual_coefficients[i];
        for (e, o) in out.iter_mut().enumerate() {
            *o += coef * cross_gram.values[[i, e]];
        }
    }
    Ok(out)
}
