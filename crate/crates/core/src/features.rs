//! One feature per band group (the group mean), z-scored with training
//! statistics.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::banding::BandPartition;
use crate::cube_io::HsiDataset;
use crate::error::{Error, Result};

/// Per-column training mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with zero training spread; they are centered but not scaled.
    pub degenerate: Vec<usize>,
}

impl Standardization {
    pub fn apply_row(&self, row: &mut [f64]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v -= self.mean[c];
            if self.std[c] > 0.0 {
                *v /= self.std[c];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `n × c`, one column per band group.
    pub values: Array2<f64>,
    /// Human-readable identifier of the partition, e.g. `1-12|13-30`.
    pub partition_ref: String,
    pub standardization: Option<Standardization>,
}

impl FeatureMatrix {
    pub fn num_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.values.ncols()
    }

    /// CSV with a comment header naming the partition, then one column per group.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# partition = {}", self.partition_ref)?;
        let names: Vec<String> = self.partition_ref.split('|').map(|g| format!("g[{g}]")).collect();
        writeln!(w, "{}", names.join(","))?;
        for row in self.values.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// `feature(r, i)` = mean of `X(r, j)` over bands `j` in group `i`.
pub fn extract_group_means(ds: &HsiDataset, part: &BandPartition) -> Result<FeatureMatrix> {
    part.check_cover(ds.num_bands()).map_err(|e| {
        Error::shape(
            format!("partition covering {} bands", ds.num_bands()),
            format!("{} ({e})", part.num_bands()),
        )
    })?;
    let values = group_means(&ds.pixels, &part.groups);
    Ok(FeatureMatrix {
        values,
        partition_ref: part.describe(&ds.band_ids),
        standardization: None,
    })
}

pub(crate) fn group_means(pixels: &Array2<f64>, groups: &[Vec<usize>]) -> Array2<f64> {
    let n = pixels.nrows();
    let mut out = Array2::zeros((n, groups.len()));
    for (r, row) in pixels.rows().into_iter().enumerate() {
        for (g, idx) in groups.iter().enumerate() {
            let s: f64 = idx.iter().map(|&j| row[j]).sum();
            out[[r, g]] = s / idx.len() as f64;
        }
    }
    out
}

/// Training statistics for every column of `values` over `train_rows`.
pub fn fit_standardization(values: &Array2<f64>, train_rows: &[usize]) -> Result<Standardization> {
    if train_rows.is_empty() {
        return Err(Error::Invalid("no training rows to standardize on".into()));
    }
    let n = train_rows.len() as f64;
    let cols = values.ncols();
    let mut mean = vec![0.0; cols];
    let mut std = vec![0.0; cols];
    let mut degenerate = Vec::new();
    for c in 0..cols {
        let col = values.column(c);
        let m = train_rows.iter().map(|&r| col[r]).sum::<f64>() / n;
        let var = train_rows.iter().map(|&r| (col[r] - m).powi(2)).sum::<f64>() / n;
        mean[c] = m;
        let s = var.sqrt();
        // Spread at rounding level counts as constant.
        if s <= 1e-12 * m.abs().max(1.0) {
            degenerate.push(c);
        } else {
            std[c] = s;
        }
    }
    if !degenerate.is_empty() {
        log::warn!(
            "{} feature column(s) are constant on the training rows; centered only",
            degenerate.len()
        );
    }
    Ok(Standardization { mean, std, degenerate })
}

/// Applies `(x − μ_train) / σ_train` to every row.
pub fn standardize(fm: &FeatureMatrix, train_rows: &[usize]) -> Result<FeatureMatrix> {
    let stats = fit_standardization(&fm.values, train_rows)?;
    let mut values = fm.values.clone();
    for mut row in values.rows_mut() {
        stats.apply_row(row.as_slice_mut().expect("standard layout"));
    }
    Ok(FeatureMatrix {
        values,
        partition_ref: fm.partition_ref.clone(),
        standardization: Some(stats),
    })
}

/// Column means over the given rows; used by tests and diagnostics.
pub fn column_means(values: &Array2<f64>, rows: &[usize]) -> Array1<f64> {
    let n = rows.len() as f64;
    Array1::from_shape_fn(values.ncols(), |c| rows.iter().map(|&r| values[[r, c]]).sum::<f64>() / n)
}
