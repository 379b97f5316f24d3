//! Band grouping: CLODD on (optionally VAT-ordered) iVAT images, plus the
//! BG-Mean and agglomerative baselines.

mod baselines;
mod clodd;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baselines::{bg_mean_partition, hierarchical_partition, Linkage};
pub use clodd::{
    clodd_c, clodd_n, clodd_objective, clodd_partition, count_feasible, default_c_range, edginess,
    smoothstep_gate, squareness, Blocks, CloddParams, CloddScorer, Search,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    Contiguous,
    Noncontiguous,
}

/// Parameters that produced a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "grouper", rename_all = "snake_case")]
pub enum PartitionParams {
    Clodd {
        alpha: f64,
        gamma: f64,
        min_size: usize,
        max_size: usize,
    },
    BgMean {
        threshold: f64,
        max_size: usize,
    },
    Hierarchical {
        linkage: Linkage,
        c: usize,
        min_size: usize,
        max_size: usize,
    },
}

/// Ordered band groups. Group members are dataset column positions
/// (`0..b`), each group sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPartition {
    pub groups: Vec<Vec<usize>>,
    pub mode: GroupingMode,
    /// Permutation used to find the groups (identity for contiguous modes).
    pub ordering: Vec<usize>,
    pub objective_value: Option<f64>,
    pub params: PartitionParams,
    /// False when group sizes fall outside the grouper's size bounds.
    pub feasible: bool,
}

impl BandPartition {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_bands(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Checks that the groups are non-empty, disjoint and cover `0..b`.
    pub fn check_cover(&self, b: usize) -> Result<()> {
        let mut seen = vec![false; b];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::Invalid("empty band group".into()));
            }
            for &m in g {
                if m >= b || seen[m] {
                    return Err(Error::Invalid(format!("band {m} out of range or repeated")));
                }
                seen[m] = true;
            }
        }
        if let Some(m) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("band {m} not covered")));
        }
        Ok(())
    }

    /// Short human-readable description, e.g. `1-5|6-12|13`.
    pub fn describe(&self, band_ids: &[usize]) -> String {
        self.groups
            .iter()
            .map(|g| describe_group(g, band_ids))
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Text form: `#` header lines, then one line per group of
    /// comma-separated sensor band ids.
    pub fn to_text(&self, band_ids: &[usize]) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            GroupingMode::Contiguous => "contiguous",
            GroupingMode::Noncontiguous => "noncontiguous",
        };
        let _ = writeln!(out, "# mode = {mode}");
        let _ = writeln!(out, "# params = {}", serde_json::to_string(&self.params).unwrap());
        match self.objective_value {
            Some(v) => {
                let _ = writeln!(out, "# objective_value = {v}");
            }
            None => {
                let _ = writeln!(out, "# objective_value = none");
            }
        }
        let _ = writeln!(out, "# feasible = {}", self.feasible);
        let ord: Vec<String> = self.ordering.iter().map(|&p| band_ids[p].to_string()).collect();
        let _ = writeln!(out, "# ordering = {}", ord.join(","));
        for g in &self.groups {
            let ids: Vec<String> = g.iter().map(|&p| band_ids[p].to_string()).collect();
            let _ = writeln!(out, "{}", ids.join(","));
        }
        out
    }

    pub fn from_text(text: &str, band_ids: &[usize]) -> Result<Self> {
        let pos_of = |id: usize| -> Result<usize> {
            band_ids
                .iter()
                .position(|&x| x == id)
                .ok_or_else(|| Error::Data(format!("partition names unknown band id {id}")))
        };
        let parse_ids = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Data(format!("bad band id `{t}`")))
                        .and_then(pos_of)
                })
                .collect()
        };
        let mut mode = GroupingMode::Contiguous;
        let mut params = None;
        let mut objective_value = None;
        let mut feasible = true;
        let mut ordering = Vec::new();
        let mut groups = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let Some((k, v)) = rest.split_once('=') else { continue };
                let v = v.trim();
                match k.trim() {
                    "mode" => {
                        mode = match v {
                            "contiguous" => GroupingMode::Contiguous,
                            "noncontiguous" => GroupingMode::Noncontiguous,
                            _ => return Err(Error::Data(format!("unknown mode `{v}`"))),
                        }
                    }
                    "params" => {
                        params = Some(
                            serde_json::from_str(v).map_err(|e| Error::Data(format!("bad params: {e}")))?,
                        )
                    }
                    "objective_value" => objective_value = v.parse().ok(),
                    "feasible" => feasible = v == "true",
                    "ordering" => ordering = parse_ids(v)?,
                    _ => {}
                }
            } else {
                let mut g = parse_ids(line)?;
                g.sort_unstable();
                groups.push(g);
            }
        }
        let part = BandPartition {
            groups,
            mode,
            ordering: if ordering.is_empty() {
                (0..band_ids.len()).collect()
            } else {
                ordering
            },
            objective_value,
            params: params.ok_or_else(|| Error::Data("partition file lacks `# params`".into()))?,
            feasible,
        };
        part.check_cover(band_ids.len())?;
        Ok(part)
    }

    pub fn save(&self, path: &Path, band_ids: &[usize]) -> Result<()> {
        fs::write(path, self.to_text(band_ids)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, band_ids: &[usize]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, band_ids)
    }
}

fn describe_group(g: &[usize], band_ids: &[usize]) -> String {
    let ids: Vec<usize> = g.iter().map(|&p| band_ids[p]).collect();
    let mut runs: Vec<String> = Vec::new();
    let mut i = 0;
    while i < ids.len() {
        let mut j = i;
        while j + 1 < ids.len() && ids[j + 1] == ids[j] + 1 {
            j += 1;
        }
        runs.push(if i == j {
            ids[i].to_string()
        } else {
            format!("{}-{}", ids[i], ids[j])
        });
        i = j + 1;
    }
    runs.join("+")
}
