use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{solve_binary_svm, solve_binary_svm_warm, BinarySvmModel, SvmOptions};
use crate::error::{Error, Result};
use crate::kernels::{GramKernel, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MklOptions {
    pub svm: SvmOptions,
    pub max_outer: usize,
    /// Stop when `max_m |Δw_m| / max_m w_m` falls below this.
    pub weight_tol: f64,
}

impl Default for MklOptions {
    fn default() -> Self {
        MklOptions {
            svm: SvmOptions::default(),
            max_outer: 100,
            weight_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MklModel {
    pub kernel_weights: Vec<f64>,
    /// `f64::INFINITY` for the sum kernel.
    pub p_norm: f64,
    pub inner_svm: BinarySvmModel,
    pub kernel_specs: Vec<Option<KernelSpec>>,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// `Σ_m w_m·K_m`.
pub fn combine_kernels(grams: &[&GramKernel], weights: &[f64]) -> Result<GramKernel> {
    let first = grams.first().ok_or_else(|| Error::Invalid("no kernels to combine".into()))?;
    if grams.len() != weights.len() {
        return Err(Error::shape(format!("{} weights", grams.len()), weights.len().to_string()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Invalid(format!("kernel weight {w} is negative")));
    }
    let dim = first.shape();
    let mut acc = Array2::<f64>::zeros(dim);
    for (g, &w) in grams.iter().zip(weights) {
        if g.shape() != dim {
            return Err(Error::shape(format!("{dim:?}"), format!("{:?}", g.shape())));
        }
        acc.zip_mut_with(&g.values, |a, &k| *a += w * k);
    }
    Ok(GramKernel {
        values: acc,
        spec: if grams.len() == 1 { first.spec } else { None },
        square: grams.iter().all(|g| g.square),
    })
}

fn specs(grams: &[&GramKernel]) -> Vec<Option<KernelSpec>> {
    grams.iter().map(|g| g.spec).collect()
}

/// `coefᵀ K coef`.
fn quadratic(k: &Array2<f64>, coef: &[f64], support: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in support {
        let mut row = 0.0;
        for &j in support {
            row += k[[i, j]] * coef[j];
        }
        s += coef[i] * row;
    }
    s
}

/// ℓp-norm MKL by alternating an SVM solve with the closed-form weight step
/// `w_m ∝ η_m^{1/(p+1)}`, `η_m = w_m²·coefᵀK_m coef`, rescaled to `‖w‖_p = 1`.
pub fn train_lp_mkl(grams: &[&GramKernel], labels: &[f64], p: f64, opts: &MklOptions) -> Result<MklModel> {
    if p.is_infinite() {
        return train_linf_mkl(grams, labels, &opts.svm);
    }
    if !(p > 1.0) {
        return Err(Error::Invalid(format!("p = {p} must exceed 1")));
    }
    let m = grams.len();
    if m == 0 {
        return Err(Error::Invalid("no kernels to fuse".into()));
    }
    let mut w = vec![(m as f64).powf(-1.0 / p); m];
    let mut model = solve_binary_svm(&combine_kernels(grams, &w)?, labels, &opts.svm)?;
    let mut converged = false;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let eta: Vec<f64> = grams
            .iter()
            .zip(&w)
            .map(|(g, wm)| wm * wm * quadratic(&g.values, &model.dual_coefficients, &model.support_indices).max(0.0))
            .collect();
        let denom = eta.iter().map(|e| e.powf(p / (p + 1.0))).sum::<f64>().powf(1.0 / p);
        if !(denom > 0.0) {
            converged = true;
            break;
        }
        let next: Vec<f64> = eta.iter().map(|e| e.powf(1.0 / (p + 1.0)) / denom).collect();
        let scale = next.iter().copied().fold(0.0, f64::max);
        let change = w.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        w = next;
        model = solve_binary_svm_warm(&combine_kernels(grams, &w)?, labels, &opts.svm, &model.alpha())?;
        if change < opts.weight_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("MKL weights still moving after {outer} outer iterations");
    }
    Ok(MklModel {
        kernel_weights: w,
        p_norm: p,
        inner_svm: model,
        kernel_specs: specs(grams),
        outer_iterations: outer,
        converged,
    })
}

/// All weights fixed to 1: one SVM on the plain sum of the kernels.
pub fn train_linf_mkl(grams: &[&GramKernel], labels: &[f64], opts: &SvmOptions) -> Result<MklModel> {
    let w = vec![1.0; grams.len()];
    let model = solve_binary_svm(&combine_kernels(grams, &w)?, labels, opts)?;
    Ok(MklModel {
        kernel_weights: w,
        p_norm: f64::INFINITY,
        converged: model.converged,
        inner_svm: model,
        kernel_specs: specs(grams),
        outer_iterations: 0,
    })
}

impl MklModel {
    /// Decision values from per-kernel cross Grams (anchors = training rows).
    pub fn decision_values(&self, cross: &[&GramKernel]) -> Result<Vec<f64>> {
        if cross.len() != self.kernel_weights.len() {
            return Err(Error::shape(
                format!("{} cross kernels", self.kernel_weights.len()),
                cross.len().to_string(),
            ));
        }
        let n_anchor = self.inner_svm.dual_coefficients.len();
        let ne = cross.first().map(|g| g.shape().1).unwrap_or(0);
        let mut out = vec![self.inner_svm.bias; ne];
        for (g, &w) in cross.iter().zip(&self.kernel_weights) {
            if g.shape() != (n_anchor, ne) {
                return Err(Error::shape(format!("{n_anchor}x{ne}"), format!("{:?}", g.shape())));
            }
            if w == 0.0 {
                continue;
            }
            for &i in &self.inner_svm.support_indices {
                let c = w * self.inner_svm.dual_coefficients[i];
                for (e, o) in out.iter_mut().enumerate() {
                    *o += c * g.values[[i, e]];
                }
            }
        }
        Ok(out)
    }

    pub fn weight_norm(&self) -> f64 {
        if self.p_norm.is_infinite() {
            self.kernel_weights.iter().copied().fold(0.0, f64::max)
        } else {
            self.kernel_weights.iter().map(|w| w.powf(self.p_norm)).sum::<f64>().powf(1.0 / self.p_norm)
        }
    }
}
