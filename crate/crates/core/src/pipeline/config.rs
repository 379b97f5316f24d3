use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GrouperKind, MethodId, TopK};
use crate::banding::{Linkage, Search};
use crate::cube_io::{DataFormat, SplitSpec};
use crate::error::{Error, Result};
use crate::kernels::sigma_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    /// Sensor band ids (1-based) to drop before anything else.
    #[serde(default)]
    pub exclude_bands: Vec<usize>,
    /// Dense class ids to keep; empty keeps all.
    #[serde(default)]
    pub keep_classes: Vec<usize>,
}

fn default_format() -> String {
    "csv".into()
}

impl DataConfig {
    pub fn data_format(&self) -> Result<DataFormat> {
        self.format.parse().map_err(|_| Error::Config(format!("unknown data format `{}`", self.format)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloddScan {
    pub alphas: Vec<f64>,
    pub gamma: f64,
    pub min_size: usize,
    pub max_size: usize,
    pub search: Search,
    pub restarts: usize,
}

impl Default for CloddScan {
    fn default() -> Self {
        CloddScan {
            alphas: (0..10).map(|i| i as f64 / 10.0).collect(),
            gamma: 3.0,
            min_size: 5,
            max_size: 20,
            search: Search::Auto,
            restarts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BgMeanScan {
    pub thresholds: Vec<f64>,
    pub max_size: usize,
}

impl Default for BgMeanScan {
    fn default() -> Self {
        BgMeanScan {
            thresholds: vec![0.90, 0.95, 0.98, 0.99],
            max_size: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchicalScan {
    pub linkage: Linkage,
    pub min_size: usize,
    pub max_size: usize,
    /// Inclusive cluster-count range; derived from the size bounds when absent.
    pub c_range: Option<(usize, usize)>,
}

impl Default for HierarchicalScan {
    fn default() -> Self {
        HierarchicalScan {
            linkage: Linkage::Ward,
            min_size: 5,
            max_size: 20,
            c_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: Option<DataConfig>,
    pub split: SplitSpec,
    pub groupers: Vec<GrouperKind>,
    pub methods: Vec<MethodId>,
    pub sigmas: Vec<f64>,
    /// `inf` selects the sum kernel.
    pub p_norms: Vec<f64>,
    pub c_reg: f64,
    pub tol: f64,
    pub intra_topk: Vec<TopK>,
    pub inter_topk: Vec<TopK>,
    pub normalize_kernels: bool,
    pub center_kernels: bool,
    pub save_models: bool,
    pub clodd: CloddScan,
    pub bg_mean: BgMeanScan,
    pub hierarchical: HierarchicalScan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: None,
            data: None,
            split: SplitSpec::default(),
            groupers: vec![
                GrouperKind::CloddC,
                GrouperKind::CloddN,
                GrouperKind::BgMean,
                GrouperKind::Hierarchical,
            ],
            methods: MethodId::ALL.to_vec(),
            sigmas: sigma_grid(),
            p_norms: vec![1.01, 2.0, 100.0, f64::INFINITY],
            c_reg: 1.0,
            tol: 1e-3,
            intra_topk: vec![TopK::N(2), TopK::N(3), TopK::All],
            inter_topk: vec![TopK::N(1), TopK::N(2), TopK::N(3)],
            normalize_kernels: false,
            center_kernels: false,
            save_models: true,
            clodd: CloddScan::default(),
            bg_mean: BgMeanScan::default(),
            hierarchical: HierarchicalScan::default(),
        }
    }
}

/// Offsets added to the master seed for each stage.
pub(crate) const SPLIT_SEED_OFFSET: u64 = 0;
pub(crate) const GROUPER_SEED_OFFSET: u64 = 1;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.seed.wrapping_add(SPLIT_SEED_OFFSET),
            ..self.split
        }
    }

    pub fn grouper_seed(&self) -> u64 {
        self.seed.wrapping_add(GROUPER_SEED_OFFSET)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.groupers.is_empty() {
            return bad("no groupers selected".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("sigma grid must be non-empty with positive widths".into());
        }
        if self.p_norms.is_empty() || self.p_norms.iter().any(|p| !(*p > 1.0)) {
            return bad("p norms must be > 1 or inf".into());
        }
        if !(self.c_reg > 0.0 && self.c_reg.is_finite()) || !(self.tol > 0.0) {
            return bad("c_reg and tol must be positive".into());
        }
        for k in self.intra_topk.iter().chain(&self.inter_topk) {
            if let TopK::N(n) = k {
                if *n > 10 {
                    return bad(format!("top-k {n} exceeds 10"));
                }
            }
        }
        if self.clodd.alphas.is_empty() || self.clodd.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("CLODD alpha scan must be non-empty within [0,1]".into());
        }
        if self.bg_mean.thresholds.is_empty() || self.bg_mean.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("BG-Mean thresholds must be non-empty within (0,1)".into());
        }
        if self.clodd.min_size == 0 || self.clodd.min_size > self.clodd.max_size {
            return bad("CLODD size bounds are inconsistent".into());
        }
        if self.hierarchical.min_size > self.hierarchical.max_size {
            return bad("hierarchical size bounds are inconsistent".into());
        }
        if !(self.split.validation_fraction_of_train > 0.0) {
            return bad("a validation split is required for kernel ranking".into());
        }
        self.split.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(d) = &self.data {
            d.data_format()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.clodd.alphas.len(), 10);
        assert_eq!(cfg.sigmas.len(), 10);
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_sections() {
        let text = r#"
seed = 7
p_norms = [1.01, 2.0, inf]
intra_topk = [2, "all"]
groupers = ["clodd_c", "bg_mean"]
methods = ["M1", "M3"]

[data]
path = "cube.csv"
exclude_bands = [104, 105]

[split]
train_fraction = 0.3

[clodd]
alphas = [0.5]
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(cfg.p_norms[2].is_infinite());
        assert_eq!(cfg.intra_topk, vec![TopK::N(2), TopK::All]);
        assert_eq!(cfg.split.train_fraction, 0.3);
        assert_eq!(cfg.split.validation_fraction_of_train, 0.5);
        assert_eq!(cfg.clodd.alphas, vec![0.5]);
        assert_eq!(cfg.clodd.min_size, 5);
        assert_eq!(cfg.data.unwrap().exclude_bands, vec![104, 105]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("p_norms = [1.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("intra_topk = [11]").is_err());
        assert!(ExperimentConfig::from_toml_str("groupers = []").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[clodd]\nalphas = []").is_err());
    }
}
