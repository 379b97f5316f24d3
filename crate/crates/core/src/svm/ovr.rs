use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mkl::{train_linf_mkl, train_lp_mkl, MklModel, MklOptions};
use super::BinarySvmModel;
use crate::error::{Error, Result};
use crate::kernels::GramKernel;
use crate::store::ModelFile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trainer {
    /// Plain SVM on exactly one kernel.
    Svm,
    /// ℓp-norm MKL; `p = ∞` is the sum kernel.
    Mkl { p: f64 },
}

impl Trainer {
    pub fn name(&self) -> &'static str {
        match self {
            Trainer::Svm => "svm",
            Trainer::Mkl { p } if p.is_infinite() => "linf_mkl",
            Trainer::Mkl { .. } => "lp_mkl",
        }
    }

    pub fn p(&self) -> Option<f64> {
        match self {
            Trainer::Svm => None,
            Trainer::Mkl { p } => Some(*p),
        }
    }
}

/// One binary model per class, all trained on the same rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrEnsemble {
    pub trainer: Trainer,
    /// Class id of each model, ascending.
    pub classes: Vec<usize>,
    pub models: Vec<MklModel>,
}

/// Trains class `ℓ` versus the rest for every class present in `labels`.
pub fn train_ovr(grams: &[&GramKernel], labels: &[usize], trainer: Trainer, opts: &MklOptions) -> Result<OvrEnsemble> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid("one-vs-rest needs at least two classes".into()));
    }
    if trainer == Trainer::Svm && grams.len() != 1 {
        return Err(Error::Invalid(format!("plain SVM takes one kernel, got {}", grams.len())));
    }
    let models: Result<Vec<MklModel>> = classes
        .par_iter()
        .map(|&cls| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == cls { 1.0 } else { -1.0 }).collect();
            match trainer {
                Trainer::Svm => train_linf_mkl(grams, &y, &opts.svm),
                Trainer::Mkl { p } if p.is_infinite() => train_linf_mkl(grams, &y, &opts.svm),
                Trainer::Mkl { p } => train_lp_mkl(grams, &y, p, opts),
            }
        })
        .collect();
    Ok(OvrEnsemble {
        trainer,
        classes,
        models: models?,
    })
}

impl OvrEnsemble {
    pub fn converged(&self) -> bool {
        self.models.iter().all(|m| m.converged && m.inner_svm.converged)
    }

    /// `n_eval × L` decision values.
    pub fn decision_matrix(&self, cross: &[&GramKernel]) -> Result<Array2<f64>> {
        let cols: Result<Vec<Vec<f64>>> = self.models.par_iter().map(|m| m.decision_values(cross)).collect();
        let cols = cols?;
        let ne = cols.first().map(Vec::len).unwrap_or(0);
        Ok(Array2::from_shape_fn((ne, cols.len()), |(e, c)| cols[c][e]))
    }

    /// Stores the ensemble under `prefix` in a model file.
    pub fn write_into(&self, file: &mut ModelFile, prefix: &str) {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        file.set(format!("{prefix}.trainer"), self.trainer.name());
        file.set(format!("{prefix}.p"), self.trainer.p().unwrap_or(f64::NAN));
        file.set(
            format!("{prefix}.classes"),
            self.classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        let c_reg = self.models.first().map(|m| m.inner_svm.c_reg).unwrap_or(1.0);
        file.set(format!("{prefix}.c_reg"), c_reg);
        if let Some(m) = self.models.first() {
            let specs: Vec<String> = m
                .kernel_specs
                .iter()
                .map(|s| s.map(|s| s.to_string()).unwrap_or_else(|| "custom".into()))
                .collect();
            file.set(format!("{prefix}.kernel_specs"), specs.join(";"));
        }
        for (k, m) in self.models.iter().enumerate() {
            file.set(format!("{prefix}.{k}.weights"), join(&m.kernel_weights));
            file.set(format!("{prefix}.{k}.bias"), m.inner_svm.bias);
            file.set(format!("{prefix}.{k}.converged"), m.converged && m.inner_svm.converged);
        }
        let n = self.models.first().map(|m| m.inner_svm.dual_coefficients.len()).unwrap_or(0);
        let duals = Array2::from_shape_fn((self.models.len(), n), |(k, i)| self.models[k].inner_svm.dual_coefficients[i]);
        file.add_block(format!("{prefix}.dual_coefficients"), duals);
    }

    pub fn read_from(file: &ModelFile, prefix: &str) -> Result<Self> {
        let trainer = match file.get(&format!("{prefix}.trainer"))? {
            "svm" => Trainer::Svm,
            "linf_mkl" => Trainer::Mkl { p: f64::INFINITY },
            "lp_mkl" => Trainer::Mkl {
                p: file.parse(&format!("{prefix}.p"))?,
            },
            other => return Err(Error::Data(format!("unknown trainer `{other}`"))),
        };
        let classes: Vec<usize> = file.parse_list(&format!("{prefix}.classes"))?;
        let c_reg: f64 = file.parse(&format!("{prefix}.c_reg"))?;
        let duals = file.block(&format!("{prefix}.dual_coefficients"))?;
        if duals.nrows() != classes.len() {
            return Err(Error::Data("dual block does not match the class list".into()));
        }
        let mut models = Vec::with_capacity(classes.len());
        for k in 0..classes.len() {
            let kernel_weights: Vec<f64> = file.parse_list(&format!("{prefix}.{k}.weights"))?;
            let coef = duals.row(k).to_vec();
            let converged: bool = file.parse(&format!("{prefix}.{k}.converged"))?;
            models.push(MklModel {
                kernel_specs: vec![None; kernel_weights.len()],
                kernel_weights,
                p_norm: trainer.p().unwrap_or(f64::INFINITY),
                inner_svm: BinarySvmModel {
                    support_indices: (0..coef.len()).filter(|&i| coef[i] != 0.0).collect(),
                    dual_coefficients: coef,
                    bias: file.parse(&format!("{prefix}.{k}.bias"))?,
                    c_reg,
                    converged,
                    iterations: 0,
                    dual_objective: f64::NAN,
                },
                outer_iterations: 0,
                converged,
            });
        }
        Ok(OvrEnsemble {
            trainer,
            classes,
            models,
        })
    }
}

/// Argmax class per evaluation column; ties go to the smallest class id.
pub fn predict(ensemble: &OvrEnsemble, cross: &[&GramKernel]) -> Result<Vec<usize>> {
    let d = ensemble.decision_matrix(cross)?;
    Ok(d.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            ensemble.classes[best]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::{decision_values, solve_binary_svm, SvmOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(rng: &mut ChaCha8Rng, per: usize, centers: &[[f64; 2]]) -> (Vec<[f64; 2]>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                x.push([ctr[0] + rng.random_range(-0.5..0.5), ctr[1] + rng.random_range(-0.5..0.5)]);
                y.push(c + 1);
            }
        }
        (x, y)
    }

    fn linear(a: &[[f64; 2]], b: &[[f64; 2]]) -> GramKernel {
        let v = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i][0] * b[j][0] + a[i][1] * b[j][1] + 1.0);
        GramKernel::from_values(v, std::ptr::eq(a, b))
    }

    #[test]
    fn three_blobs_classified_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let centers = [[0.0, 5.0], [5.0, -3.0], [-5.0, -3.0]];
        let (xt, yt) = blobs(&mut rng, 15, &centers);
        let (xe, ye) = blobs(&mut rng, 10, &centers);
        let k = linear(&xt, &xt);
        let cross = linear(&xt, &xe);
        let opts = MklOptions {
            svm: SvmOptions {
                c_reg: 10.0,
                ..SvmOptions::default()
            },
            ..MklOptions::default()
        };
        let ens = train_ovr(&[&k], &yt, Trainer::Svm, &opts).unwrap();
        assert_eq!(predict(&ens, &[&cross]).unwrap(), ye);
    }

    #[test]
    fn two_classes_match_binary_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (xt, yt) = blobs(&mut rng, 12, &[[0.5, 0.0], [-0.5, 0.0]]);
        let (xe, _) = blobs(&mut rng, 12, &[[0.5, 0.0], [-0.5, 0.0]]);
        let k = linear(&xt, &xt);
        let cross = linear(&xt, &xe);
        let opts = MklOptions::default();
        let ens = train_ovr(&[&k], &yt, Trainer::Svm, &opts).unwrap();
        let y: Vec<f64> = yt.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let bin = solve_binary_svm(&k, &y, &opts.svm).unwrap();
        let f = decision_values(&bin, &cross).unwrap();
        let pred = predict(&ens, &[&cross]).unwrap();
        for (p, v) in pred.iter().zip(&f) {
            if v.abs() > 1e-9 {
                assert_eq!(*p, if *v > 0.0 { 1 } else { 2 });
            }
        }
    }

    #[test]
    fn single_sample_class_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut xt, mut yt) = blobs(&mut rng, 8, &[[2.0, 0.0], [-2.0, 0.0]]);
        xt.push([0.0, 4.0]);
        yt.push(3);
        let k = linear(&xt, &xt);
        let ens = train_ovr(&[&k], &yt, Trainer::Mkl { p: 2.0 }, &MklOptions::default()).unwrap();
        assert_eq!(ens.models.len(), 3);
        assert_eq!(predict(&ens, &[&linear(&xt, &xt[..3])]).unwrap().len(), 3);

        let mut flat = ens.clone();
        for m in &mut flat.models {
            m.inner_svm.dual_coefficients.iter_mut().for_each(|c| *c = 0.0);
            m.inner_svm.support_indices.clear();
            m.inner_svm.bias = 0.0;
        }
        assert_eq!(predict(&flat, &[&linear(&xt, &xt)]).unwrap(), vec![1; xt.len()]);
        assert!(train_ovr(&[&k], &vec![1; xt.len()], Trainer::Svm, &MklOptions::default()).is_err());
        assert!(train_ovr(&[&k, &k], &yt, Trainer::Svm, &MklOptions::default()).is_err());
    }

    #[test]
    fn predict_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (xt, yt) = blobs(&mut rng, 6, &[[1.0, 1.0], [-1.0, 1.0], [0.0, -1.0]]);
        let k1 = linear(&xt, &xt);
        let k2 = GramKernel::from_values(k1.values.mapv(|v| (v / 4.0).exp()), true);
        let ens = train_ovr(&[&k1, &k2], &yt, Trainer::Mkl { p: 1.5 }, &MklOptions::default()).unwrap();
        let xe: Vec<[f64; 2]> = (0..9).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let c1 = linear(&xt, &xe);
        let c2 = GramKernel::from_values(c1.values.mapv(|v| (v / 4.0).exp()), false);
        let pred = predict(&ens, &[&c1, &c2]).unwrap();
        for e in 0..xe.len() {
            let mut best = (f64::NEG_INFINITY, 0);
            for (k, m) in ens.models.iter().enumerate() {
                let mut f = m.inner_svm.bias;
                for i in 0..xt.len() {
                    let c = m.inner_svm.dual_coefficients[i];
                    f += c * (m.kernel_weights[0] * c1.values[[i, e]] + m.kernel_weights[1] * c2.values[[i, e]]);
                }
                if f > best.0 {
                    best = (f, ens.classes[k]);
                }
            }
            assert_eq!(pred[e], best.1);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (xt, yt) = blobs(&mut rng, 5, &[[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0]]);
        let k = linear(&xt, &xt);
        let ens = train_ovr(&[&k, &k], &yt, Trainer::Mkl { p: 2.0 }, &MklOptions::default()).unwrap();
        let mut file = ModelFile::default();
        ens.write_into(&mut file, "ovr");
        let back = OvrEnsemble::read_from(&ModelFile::from_bytes(&file.to_bytes()).unwrap(), "ovr").unwrap();
        assert_eq!(back.classes, ens.classes);
        assert_eq!(back.decision_matrix(&[&k, &k]).unwrap(), ens.decision_matrix(&[&k, &k]).unwrap());
    }
}
