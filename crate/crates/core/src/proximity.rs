//! Band-by-band dissimilarity matrices.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube_io::HsiDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmMeasure {
    SquaredEuclidean,
    Correlation,
}

impl DmMeasure {
    pub fn short_name(self) -> &'static str {
        match self {
            DmMeasure::SquaredEuclidean => "sqE",
            DmMeasure::Correlation => "corr",
        }
    }
}

impl std::str::FromStr for DmMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_euclidean" | "sqe" | "sqE" => Ok(DmMeasure::SquaredEuclidean),
            "correlation" | "corr" => Ok(DmMeasure::Correlation),
            other => Err(Error::Config(format!("unknown dissimilarity measure `{other}`"))),
        }
    }
}

/// Symmetric `b × b` band dissimilarities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub values: Array2<f64>,
    pub measure: DmMeasure,
    pub normalized: bool,
    /// Original band position shown at each display position.
    pub ordering: Vec<usize>,
    /// Set when `ordering` came from VAT.
    pub vat_ordered: bool,
    /// Bands whose variance vanished over the selected rows (correlation only).
    pub degenerate_bands: Vec<usize>,
}

impl DissimilarityMatrix {
    /// Wraps an existing matrix after checking symmetry and the zero diagonal.
    pub fn from_values(values: Array2<f64>, measure: DmMeasure, normalized: bool) -> Result<Self> {
        check_symmetric(&values)?;
        let b = values.nrows();
        Ok(DissimilarityMatrix {
            values,
            measure,
            normalized,
            ordering: (0..b).collect(),
            vat_ordered: false,
            degenerate_bands: Vec::new(),
        })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn max_off_diagonal(&self) -> f64 {
        max_off_diagonal(&self.values)
    }
}

pub(crate) fn max_off_diagonal(m: &Array2<f64>) -> f64 {
    let b = m.nrows();
    let mut best = 0.0f64;
    for i in 0..b {
        for j in 0..b {
            if i != j && m[[i, j]] > best {
                best = m[[i, j]];
            }
        }
    }
    best
}

pub(crate) fn check_symmetric(m: &Array2<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::shape("square matrix", format!("{:?}", m.dim())));
    }
    let b = m.nrows();
    for i in 0..b {
        if m[[i, i]] != 0.0 {
            return Err(Error::Invalid(format!("non-zero diagonal at {i}")));
        }
        for j in 0..i {
            if m[[i, j]] != m[[j, i]] {
                return Err(Error::Invalid(format!("asymmetric entry at ({i},{j})")));
            }
            if !m[[i, j]].is_finite() {
                return Err(Error::Invalid(format!("non-finite entry at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Copies the selected rows into one contiguous vector per band.
fn band_columns(ds: &HsiDataset, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    if rows.is_empty() {
        return Err(Error::Invalid("empty row set".into()));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= ds.num_pixels()) {
        return Err(Error::Invalid(format!("row {r} out of range")));
    }
    Ok((0..ds.num_bands())
        .map(|c| rows.iter().map(|&r| ds.pixels[[r, c]]).collect())
        .collect())
}

/// Fills a symmetric matrix by evaluating each unordered pair once.
fn fill_pairs(b: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Array2<f64> {
    let pairs: Vec<(usize, usize)> = (0..b).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs.par_iter().map(|&(i, j)| f(i, j)).collect();
    let mut m = Array2::zeros((b, b));
    for (&(i, j), &v) in pairs.iter().zip(&vals) {
        m[[i, j]] = v;
        m[[j, i]] = v;
    }
    m
}

/// `D(i,j) = Σ_r (X(r,i) − X(r,j))²` over the selected rows.
pub fn squared_euclidean_dm(ds: &HsiDataset, rows: &[usize]) -> Result<DissimilarityMatrix> {
    let cols = band_columns(ds, rows)?;
    let values = fill_pairs(cols.len(), |i, j| {
        cols[i]
            .iter()
            .zip(&cols[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    });
    DissimilarityMatrix::from_values(values, DmMeasure::SquaredEuclidean, false)
}

/// `D(i,j) = 1 − corr(X(·,i), X(·,j))` over the selected rows.
///
/// A band with zero variance gets correlation 0 against every other band.
pub fn correlation_dm(ds: &HsiDataset, rows: &[usize]) -> Result<DissimilarityMatrix> {
    let cols = band_columns(ds, rows)?;
    let mut degenerate = Vec::new();
    // Unit-norm centered columns; the correlation is then a dot product.
    let units: Vec<Option<Vec<f64>>> = cols
        .iter()
        .enumerate()
        .map(|(c, col)| {
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let centered: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                degenerate.push(c);
                None
            } else {
                Some(centered.into_iter().map(|v| v / norm).collect())
            }
        })
        .collect();
    if !degenerate.is_empty() {
        log::warn!(
            "{} band(s) have zero variance over the selected rows; their correlations are set to 0",
            degenerate.len()
        );
    }
    let values = fill_pairs(cols.len(), |i, j| match (&units[i], &units[j]) {
        (Some(a), Some(b)) => {
            let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            1.0 - s.clamp(-1.0, 1.0)
        }
        _ => 1.0,
    });
    let mut dm = DissimilarityMatrix::from_values(values, DmMeasure::Correlation, false)?;
    dm.degenerate_bands = degenerate;
    Ok(dm)
}

pub fn compute_dm(ds: &HsiDataset, rows: &[usize], measure: DmMeasure) -> Result<DissimilarityMatrix> {
    match measure {
        DmMeasure::SquaredEuclidean => squared_euclidean_dm(ds, rows),
        DmMeasure::Correlation => correlation_dm(ds, rows),
    }
}

/// Divides every entry by the largest off-diagonal entry. An all-zero matrix
/// passes through unchanged.
pub fn normalize_dm(dm: &DissimilarityMatrix) -> DissimilarityMatrix {
    let mut out = dm.clone();
    out.normalized = true;
    let max = dm.max_off_diagonal();
    if max > 0.0 {
        out.values.mapv_inplace(|v| v / max);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(px: Array2<f64>) -> HsiDataset {
        let n = px.nrows();
        let b = px.ncols();
        HsiDataset::from_raw_labels(px, &vec![1; n], (1..=b).collect()).unwrap()
    }

    fn all_rows(ds: &HsiDataset) -> Vec<usize> {
        (0..ds.num_pixels()).collect()
    }

    fn random_data(seed: u64, n: usize, b: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, b), |_| rng.random_range(-2.0..3.0))
    }

    #[test]
    fn sq_euclidean_small_cases() {
        let ds = dataset(array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let dm = squared_euclidean_dm(&ds, &all_rows(&ds)).unwrap();
        assert_eq!(dm.values[[0, 2]], 0.0);
        assert_eq!(dm.values[[0, 1]], 2.0);
        assert!(!dm.normalized);
        assert!(squared_euclidean_dm(&ds, &[]).is_err());
    }

    #[test]
    fn sq_euclidean_matches_double_loop() {
        let px = random_data(11, 10, 5);
        let ds = dataset(px.clone());
        let dm = squared_euclidean_dm(&ds, &all_rows(&ds)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                // Kahan-compensated accumulation as the extended-precision reference.
                let (mut sum, mut comp) = (0.0f64, 0.0f64);
                for r in 0..10 {
                    let d = px[[r, i]] - px[[r, j]];
                    let y = d * d - comp;
                    let t = sum + y;
                    comp = (t - sum) - y;
                    sum = t;
                }
                assert!((dm.values[[i, j]] - sum).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn correlation_extremes() {
        let ds = dataset(array![[1.0, 5.0, -1.0], [2.0, 7.0, -2.0], [4.0, 11.0, -4.0]]);
        let dm = correlation_dm(&ds, &all_rows(&ds)).unwrap();
        assert!(dm.values[[0, 1]].abs() < 1e-15);
        assert!((dm.values[[0, 2]] - 2.0).abs() < 1e-15);
        assert_eq!(dm.values[[1, 1]], 0.0);
    }

    #[test]
    fn correlation_matches_two_pass_oracle() {
        let px = random_data(5, 50, 8);
        let ds = dataset(px.clone());
        let dm = correlation_dm(&ds, &all_rows(&ds)).unwrap();
        let n = 50.0;
        for i in 0..8 {
            for j in 0..8 {
                if i == j {
                    continue;
                }
                let mi = px.column(i).sum() / n;
                let mj = px.column(j).sum() / n;
                let cov = (0..50).map(|r| (px[[r, i]] - mi) * (px[[r, j]] - mj)).sum::<f64>() / n;
                let si = ((0..50).map(|r| (px[[r, i]] - mi).powi(2)).sum::<f64>() / n).sqrt();
                let sj = ((0..50).map(|r| (px[[r, j]] - mj).powi(2)).sum::<f64>() / n).sqrt();
                let expected = 1.0 - cov / (si * sj);
                assert!((dm.values[[i, j]] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_variance_band_is_uncorrelated() {
        let ds = dataset(array![[1.0, 3.0, 2.0], [2.0, 3.0, 1.0], [3.0, 3.0, 5.0]]);
        let dm = correlation_dm(&ds, &all_rows(&ds)).unwrap();
        assert_eq!(dm.degenerate_bands, vec![1]);
        assert_eq!(dm.values[[1, 0]], 1.0);
        assert_eq!(dm.values[[1, 2]], 1.0);
        assert_eq!(dm.values[[1, 1]], 0.0);
    }

    #[test]
    fn normalization_cases() {
        let m = array![[0.0, 4.0, 2.0], [4.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let dm = DissimilarityMatrix::from_values(m, DmMeasure::SquaredEuclidean, false).unwrap();
        let n = normalize_dm(&dm);
        assert!(n.normalized);
        assert_eq!(n.values[[0, 1]], 1.0);
        assert_eq!(n.values[[0, 2]], 0.5);
        assert_eq!(n.values[[1, 2]], 0.25);
        assert_eq!(normalize_dm(&n), n);

        let z = DissimilarityMatrix::from_values(Array2::zeros((3, 3)), DmMeasure::Correlation, false).unwrap();
        let nz = normalize_dm(&z);
        assert!(nz.normalized);
        assert_eq!(nz.values, z.values);

        let ds = dataset(array![[1.0, -1.0, 0.5], [2.0, -2.0, 0.1], [3.0, -3.0, 0.7]]);
        let c = normalize_dm(&correlation_dm(&ds, &all_rows(&ds)).unwrap());
        assert!(c.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(c.max_off_diagonal(), 1.0);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = array![[0.0, 1.0], [2.0, 0.0]];
        assert!(DissimilarityMatrix::from_values(m, DmMeasure::Correlation, false).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn constructed_dms_are_exactly_symmetric(seed in 0u64..1000, n in 2usize..20, b in 2usize..10) {
            let ds = dataset(random_data(seed, n, b));
            for dm in [squared_euclidean_dm(&ds, &all_rows(&ds)).unwrap(), correlation_dm(&ds, &all_rows(&ds)).unwrap()] {
                for i in 0..b {
                    prop_assert_eq!(dm.values[[i, i]], 0.0);
                    for j in 0..b {
                        prop_assert_eq!(dm.values[[i, j]], dm.values[[j, i]]);
                    }
                }
            }
        }

        #[test]
        fn normalized_sq_euclidean_is_scale_free(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let px = random_data(seed, 12, 6);
            let a = dataset(px.clone());
            let b = dataset(px.mapv(|v| v * scale));
            let rows: Vec<usize> = (0..12).collect();
            let na = normalize_dm(&squared_euclidean_dm(&a, &rows).unwrap());
            let nb = normalize_dm(&squared_euclidean_dm(&b, &rows).unwrap());
            for (x, y) in na.values.iter().zip(nb.values.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn correlation_dm_is_affine_invariant(seed in 0u64..1000) {
            let px = random_data(seed, 15, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut moved = px.clone();
            for c in 0..5 {
                let a = rng.random_range(0.1..10.0);
                let off = rng.random_range(-5.0..5.0);
                moved.column_mut(c).mapv_inplace(|v| a * v + off);
            }
            let rows: Vec<usize> = (0..15).collect();
            let d1 = correlation_dm(&dataset(px), &rows).unwrap();
            let d2 = correlation_dm(&dataset(moved), &rows).unwrap();
            for (x, y) in d1.values.iter().zip(d2.values.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
