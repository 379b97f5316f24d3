//! The experimental protocol: grouper scans, kernel ranking, intra- and
//! inter-method fusion, reports and saved models.

mod config;
mod model;
mod protocol;
mod report;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::proximity::DmMeasure;

pub use config::{BgMeanScan, CloddScan, DataConfig, ExperimentConfig, HierarchicalScan};
pub use model::{FeatureSetModel, FusionModel};
pub use protocol::{
    build_feature_set, rank_kernels, run_grouper, run_grouper_scan, run_inter_method, run_intra_method,
    run_protocol, CandidateScore, FeatureSet, GrouperOutcome, GrouperRun, KernelBank, LeakGuard, ProtocolRun,
    RankedKernel,
};
pub use report::{emit_reports, write_dm_images, write_table_csv, ResultRow, Table};
pub use synth::{generate_synthetic, SynthSpec};

/// One of the four (dissimilarity measure, kernel family) combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    M1,
    M2,
    M3,
    M4,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [MethodId::M1, MethodId::M2, MethodId::M3, MethodId::M4];

    pub fn dm_measure(self) -> DmMeasure {
        match self {
            MethodId::M1 | MethodId::M2 => DmMeasure::SquaredEuclidean,
            MethodId::M3 | MethodId::M4 => DmMeasure::Correlation,
        }
    }

    pub fn kernel_family(self) -> KernelFamily {
        match self {
            MethodId::M1 | MethodId::M3 => KernelFamily::Rbf,
            MethodId::M2 | MethodId::M4 => KernelFamily::Correlation,
        }
    }

    pub fn label(self) -> String {
        format!("{}-{} ({self})", self.dm_measure().short_name(), self.kernel_family().short_name())
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodId::M1 => "M1",
            MethodId::M2 => "M2",
            MethodId::M3 => "M3",
            MethodId::M4 => "M4",
        };
        f.write_str(s)
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(MethodId::M1),
            "M2" => Ok(MethodId::M2),
            "M3" => Ok(MethodId::M3),
            "M4" => Ok(MethodId::M4),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrouperKind {
    CloddC,
    CloddN,
    BgMean,
    Hierarchical,
}

impl GrouperKind {
    pub fn label(self) -> &'static str {
        match self {
            GrouperKind::CloddC => "CLODD-C",
            GrouperKind::CloddN => "CLODD-N",
            GrouperKind::BgMean => "BG-Mean",
            GrouperKind::Hierarchical => "Hierarchical",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            GrouperKind::CloddC => "clodd_c",
            GrouperKind::CloddN => "clodd_n",
            GrouperKind::BgMean => "bg_mean",
            GrouperKind::Hierarchical => "hierarchical",
        }
    }
}

impl FromStr for GrouperKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clodd_c" => Ok(GrouperKind::CloddC),
            "clodd_n" => Ok(GrouperKind::CloddN),
            "bg_mean" => Ok(GrouperKind::BgMean),
            "hierarchical" => Ok(GrouperKind::Hierarchical),
            _ => Err(Error::Config(format!("unknown grouper `{s}`"))),
        }
    }
}

/// Number of ranked kernels to fuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    N(usize),
    All,
}

impl TopK {
    pub fn take(self, available: usize) -> usize {
        match self {
            TopK::N(k) => k.min(available),
            TopK::All => available,
        }
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::N(k) => write!(f, "{k}"),
            TopK::All => f.write_str("all"),
        }
    }
}

impl FromStr for TopK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TopK::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(TopK::N(k)),
            _ => Err(Error::Config(format!("top-k `{s}` must be a positive integer or `all`"))),
        }
    }
}

impl Serialize for TopK {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TopK::N(k) => s.serialize_u64(*k as u64),
            TopK::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for TopK {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("top-k must be positive")),
            Raw::N(k) => Ok(TopK::N(k as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// The five method subsets fused across methods.
pub fn inter_scenarios() -> Vec<Vec<MethodId>> {
    use MethodId::*;
    vec![vec![M1, M2, M3, M4], vec![M1, M2], vec![M3, M4], vec![M1, M3], vec![M2, M4]]
}

pub fn scenario_label(methods: &[MethodId]) -> String {
    methods.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_matrix() {
        assert_eq!(MethodId::M1.label(), "sqE-rbf (M1)");
        assert_eq!(MethodId::M2.label(), "sqE-corr (M2)");
        assert_eq!(MethodId::M3.label(), "corr-rbf (M3)");
        assert_eq!(MethodId::M4.label(), "corr-corr (M4)");
        assert_eq!("m3".parse::<MethodId>().unwrap(), MethodId::M3);
        assert!("M5".parse::<MethodId>().is_err());
    }

    #[test]
    fn scenarios() {
        let s = inter_scenarios();
        assert_eq!(s.len(), 5);
        assert_eq!(scenario_label(&s[0]), "M1+M2+M3+M4");
        assert_eq!(TopK::N(1).take(10) * s[0].len(), 4);
        assert_eq!(TopK::All.take(10), 10);
        assert_eq!("all".parse::<TopK>().unwrap(), TopK::All);
        assert!("0".parse::<TopK>().is_err());
    }
}
