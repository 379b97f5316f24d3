use std::path::Path;

use ndarray::Array2;

use super::protocol::normalize_pair;
use crate::cube_io::HsiDataset;
use crate::error::{Error, Result};
use crate::features::{group_means, Standardization};
use crate::kernels::{gram_between, GramKernel, KernelFamily, KernelSpec};
use crate::store::ModelFile;
use crate::svm::{predict, OvrEnsemble};

/// Everything needed to turn raw spectra into one standardized feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSetModel {
    pub label: String,
    /// Band column positions per group.
    pub groups: Vec<Vec<usize>>,
    pub standardization: Standardization,
    /// Standardized features of the training rows.
    pub anchors: Array2<f64>,
}

impl FeatureSetModel {
    fn features(&self, pixels: &Array2<f64>) -> Array2<f64> {
        let mut x = group_means(pixels, &self.groups);
        for mut row in x.rows_mut() {
            self.standardization.apply_row(row.as_slice_mut().expect("standard layout"));
        }
        x
    }
}

/// A trained one-vs-rest fusion model with its feature pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub band_ids: Vec<usize>,
    pub class_ids: Vec<i64>,
    pub feature_sets: Vec<FeatureSetModel>,
    /// (feature set index, kernel) per fused kernel, in ensemble order.
    pub kernels: Vec<(usize, KernelSpec)>,
    pub normalize: bool,
    pub center: bool,
    pub ensemble: OvrEnsemble,
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn parse_family(s: &str) -> Result<KernelFamily> {
    match s {
        "rbf" => Ok(KernelFamily::Rbf),
        "corr" => Ok(KernelFamily::Correlation),
        _ => Err(Error::Data(format!("unknown kernel family `{s}`"))),
    }
}

impl FusionModel {
    /// Dense class ids (1-based) for every pixel of `ds`.
    pub fn predict_dense(&self, ds: &HsiDataset) -> Result<Vec<usize>> {
        if ds.band_ids != self.band_ids {
            return Err(Error::shape(
                format!("{} bands matching the model", self.band_ids.len()),
                format!("{} bands", ds.band_ids.len()),
            ));
        }
        let feats: Vec<Array2<f64>> = self.feature_sets.iter().map(|f| f.features(&ds.pixels)).collect();
        let cross: Vec<GramKernel> = self
            .kernels
            .iter()
            .map(|&(fs, spec)| {
                let anchors = &self.feature_sets[fs].anchors;
                let xe = &feats[fs];
                let cross = GramKernel {
                    values: gram_between(anchors.view(), xe.view(), spec, false)?,
                    spec: Some(spec),
                    square: false,
                };
                if !self.normalize {
                    return Ok(cross);
                }
                let train = GramKernel {
                    values: gram_between(anchors.view(), anchors.view(), spec, true)?,
                    spec: Some(spec),
                    square: true,
                };
                Ok(normalize_pair(self.center, &train, &cross, xe.view(), spec)?.1)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&GramKernel> = cross.iter().collect();
        predict(&self.ensemble, &refs)
    }

    /// Original class ids as they appeared in the training data.
    pub fn predict_class_ids(&self, ds: &HsiDataset) -> Result<Vec<i64>> {
        Ok(self.predict_dense(ds)?.into_iter().map(|c| self.class_ids[c - 1]).collect())
    }

    pub fn to_file(&self) -> ModelFile {
        let mut f = ModelFile::default();
        f.set("band_ids", join(&self.band_ids, ","));
        f.set("class_ids", join(&self.class_ids, ","));
        f.set("normalize", self.normalize);
        f.set("center", self.center);
        f.set("feature_sets", self.feature_sets.len());
        for (k, fs) in self.feature_sets.iter().enumerate() {
            f.set(format!("fs.{k}.label"), &fs.label);
            let groups: Vec<String> = fs.groups.iter().map(|g| join(g, ",")).collect();
            f.set(format!("fs.{k}.groups"), groups.join(";"));
            f.set(format!("fs.{k}.mean"), join(&fs.standardization.mean, ","));
            f.set(format!("fs.{k}.std"), join(&fs.standardization.std, ","));
            f.set(format!("fs.{k}.degenerate"), join(&fs.standardization.degenerate, ","));
            f.add_block(format!("fs.{k}.anchors"), fs.anchors.clone());
        }
        let kernels: Vec<String> = self
            .kernels
            .iter()
            .map(|(fs, s)| format!("{fs}:{}:{}", s.family.short_name(), s.sigma))
            .collect();
        f.set("kernels", kernels.join(";"));
        self.ensemble.write_into(&mut f, "ovr");
        f
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        let n_fs: usize = f.parse("feature_sets")?;
        let mut feature_sets = Vec::with_capacity(n_fs);
        for k in 0..n_fs {
            let groups = f
                .get(&format!("fs.{k}.groups"))?
                .split(';')
                .map(|g| {
                    g.split(',')
                        .map(|t| t.parse::<usize>().map_err(|_| Error::Data(format!("bad group entry `{t}`"))))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            feature_sets.push(FeatureSetModel {
                label: f.get(&format!("fs.{k}.label"))?.to_string(),
                groups,
                standardization: Standardization {
                    mean: f.parse_list(&format!("fs.{k}.mean"))?,
                    std: f.parse_list(&format!("fs.{k}.std"))?,
                    degenerate: f.parse_list(&format!("fs.{k}.degenerate"))?,
                },
                anchors: f.block(&format!("fs.{k}.anchors"))?.clone(),
            });
        }
        let kernels = f
            .get("kernels")?
            .split(';')
            .map(|item| {
                let parts: Vec<&str> = item.split(':').collect();
                let [fs, fam, sigma] = parts[..] else {
                    return Err(Error::Data(format!("bad kernel entry `{item}`")));
                };
                let fs: usize = fs.parse().map_err(|_| Error::Data(format!("bad kernel entry `{item}`")))?;
                if fs >= n_fs {
                    return Err(Error::Data(format!("kernel refers to missing feature set {fs}")));
                }
                let sigma: f64 = sigma.parse().map_err(|_| Error::Data(format!("bad kernel entry `{item}`")))?;
                Ok((fs, KernelSpec::new(parse_family(fam)?, sigma)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ensemble = OvrEnsemble::read_from(f, "ovr")?;
        for m in &mut ensemble.models {
            m.kernel_specs = kernels.iter().map(|(_, s)| Some(*s)).collect();
        }
        Ok(FusionModel {
            band_ids: f.parse_list("band_ids")?,
            class_ids: f.parse_list("class_ids")?,
            feature_sets,
            kernels,
            normalize: f.parse("normalize")?,
            center: f.parse("center")?,
            ensemble,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&ModelFile::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube_io::make_split;
    use crate::pipeline::{generate_synthetic, run_grouper, ExperimentConfig, GrouperKind, SynthSpec};

    #[test]
    fn saved_models_reproduce_reported_accuracy() {
        let ds = generate_synthetic(&SynthSpec {
            pixels_per_class: 40,
            num_classes: 3,
            group_sizes: vec![5, 7, 6],
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = ExperimentConfig {
            groupers: vec![GrouperKind::BgMean],
            sigmas: vec![1.0, 4.0],
            p_norms: vec![2.0, f64::INFINITY],
            normalize_kernels: true,
            center_kernels: true,
            ..ExperimentConfig::default()
        };
        let split = make_split(&ds, &cfg.split_spec()).unwrap();
        let run = run_grouper(&cfg, &ds, &split, GrouperKind::BgMean).unwrap();
        assert_eq!(run.intra_models.len(), run.intra.len());
        let dir = tempfile::tempdir().unwrap();
        let test = ds.subset(&split.test);
        for (row, model) in run.intra.iter().zip(&run.intra_models).chain(run.inter.iter().zip(&run.inter_models)).step_by(7) {
            let path = dir.path().join("m.model");
            model.save(&path).unwrap();
            let loaded = FusionModel::load(&path).unwrap();
            let pred = loaded.predict_dense(&test).unwrap();
            let correct = pred.iter().zip(&test.labels).filter(|(a, b)| a == b).count();
            let acc = 100.0 * correct as f64 / test.labels.len() as f64;
            assert!((acc - row.overall_acc).abs() < 1e-9, "{} vs {}", acc, row.overall_acc);
        }
    }
}
