//! Baseline groupers: BG-Mean block thresholding and agglomerative clustering.

use serde::{Deserialize, Serialize};

use super::{BandPartition, GroupingMode, PartitionParams};
use crate::error::{Error, Result};
use crate::proximity::DissimilarityMatrix;

/// Greedy left-to-right contiguous grouping on a normalized matrix.
///
/// The current group absorbs the next band while the mean similarity
/// (`1 − d`, diagonal included) of the enlarged square block stays at or above
/// `threshold` and the group is below `max_size`.
pub fn bg_mean_partition(dm: &DissimilarityMatrix, threshold: f64, max_size: usize) -> Result<BandPartition> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold {threshold} outside (0,1)")));
    }
    if max_size == 0 {
        return Err(Error::Invalid("max_size must be at least 1".into()));
    }
    let d = &dm.values;
    let b = d.nrows();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut start = 0;
    // Sum of dissimilarities inside [start, end).
    let mut block_sum = 0.0;
    for next in 1..=b {
        if next == b {
            groups.push((start..b).collect());
            break;
        }
        let size = next - start;
        let added: f64 = (start..next).map(|i| d[[i, next]]).sum::<f64>() * 2.0;
        let grown = size + 1;
        let mean_sim = 1.0 - (block_sum + added) / (grown * grown) as f64;
        if size < max_size && mean_sim >= threshold {
            block_sum += added;
        } else {
            groups.push((start..next).collect());
            start = next;
            block_sum = 0.0;
        }
    }
    Ok(BandPartition {
        groups,
        mode: GroupingMode::Contiguous,
        ordering: (0..b).collect(),
        objective_value: None,
        params: PartitionParams::BgMean { threshold, max_size },
        feasible: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Ward,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "ward" => Ok(Linkage::Ward),
            other => Err(Error::Config(format!("unknown linkage `{other}`"))),
        }
    }
}

/// Agglomerative clustering of the bands cut at `c` clusters.
///
/// Cluster distances follow the Lance–Williams recurrences; the closest pair
/// merges first, ties going to the smallest (row, column). The result is
/// flagged infeasible when a cluster size leaves `[min_size, max_size]`.
pub fn hierarchical_partition(
    dm: &DissimilarityMatrix,
    linkage: Linkage,
    c: usize,
    min_size: usize,
    max_size: usize,
) -> Result<BandPartition> {
    let b = dm.size();
    if c == 0 || c > b {
        return Err(Error::Infeasible(format!("cannot cut {b} bands into {c} clusters")));
    }
    let mut dist = dm.values.clone();
    let mut members: Vec<Option<Vec<usize>>> = (0..b).map(|i| Some(vec![i])).collect();
    let mut alive = b;
    while alive > c {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..b {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..b {
                if members[j].is_some() && dist[[i, j]] < best.0 {
                    best = (dist[[i, j]], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let ni = members[i].as_ref().unwrap().len() as f64;
        let nj = members[j].as_ref().unwrap().len() as f64;
        for k in 0..b {
            if k == i || k == j || members[k].is_none() {
                continue;
            }
            let (dki, dkj) = (dist[[k, i]], dist[[k, j]]);
            let merged = match linkage {
                Linkage::Single => dki.min(dkj),
                Linkage::Ward => {
                    let nk = members[k].as_ref().unwrap().len() as f64;
                    ((ni + nk) * dki + (nj + nk) * dkj - nk * dij) / (ni + nj + nk)
                }
            };
            dist[[k, i]] = merged;
            dist[[i, k]] = merged;
        }
        let moved = members[j].take().unwrap();
        members[i].as_mut().unwrap().extend(moved);
        alive -= 1;
    }
    let mut groups: Vec<Vec<usize>> = members
        .into_iter()
        .flatten()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort_by_key(|g| g[0]);
    let feasible = groups.iter().all(|g| g.len() >= min_size && g.len() <= max_size);
    Ok(BandPartition {
        groups,
        mode: GroupingMode::Noncontiguous,
        ordering: (0..b).collect(),
        objective_value: None,
        params: PartitionParams::Hierarchical {
            linkage,
            c,
            min_size,
            max_size,
        },
        feasible,
    })
}
