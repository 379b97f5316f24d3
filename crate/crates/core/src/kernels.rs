//! Gram matrices over group-mean features.
//!
//! Two Gaussian families are provided, both with `k(x, x) = 1`:
//!
//! * RBF: `exp(−‖x_a − x_e‖² / 2σ²)`
//! * correlation: `exp(−(1 − corr(x_a, x_e)) / 2σ²)`, where `corr` is the
//!   Pearson correlation across the feature components of the two samples.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    Correlation,
}

impl KernelFamily {
    pub fn short_name(self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Correlation => "corr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(format!("kernel width {sigma} must be positive")));
        }
        Ok(KernelSpec { family, sigma })
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}(sigma={})", self.family.short_name(), self.sigma)
    }
}

/// `K(a, e)` for anchor rows `a` (rows of `values`) and evaluation rows `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramKernel {
    pub values: Array2<f64>,
    /// `None` for combined kernels.
    pub spec: Option<KernelSpec>,
    pub square: bool,
}

impl GramKernel {
    pub fn from_values(values: Array2<f64>, square: bool) -> Self {
        GramKernel {
            values,
            spec: None,
            square,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Sub-kernel on the given anchor and evaluation positions.
    pub fn select(&self, anchors: &[usize], evals: &[usize]) -> GramKernel {
        GramKernel {
            values: self.values.select(Axis(0), anchors).select(Axis(1), evals),
            spec: self.spec,
            square: self.square && anchors == evals,
        }
    }

    pub fn trace(&self) -> f64 {
        self.values.diag().sum()
    }
}

/// The ten widths `2⁻³, 2⁻², …, 2⁶`.
pub fn sigma_grid() -> Vec<f64> {
    (-3..=6).map(|e| 2f64.powi(e)).collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Centered, unit-norm copy of each row; zero for a constant row.
fn unit_rows(x: ArrayView2<'_, f64>) -> (Vec<Vec<f64>>, usize) {
    let mut degenerate = 0;
    let rows = x
        .rows()
        .into_iter()
        .map(|row| {
            let m = row.sum() / row.len().max(1) as f64;
            let centered: Vec<f64> = row.iter().map(|v| v - m).collect();
            let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                centered.into_iter().map(|v| v / norm).collect()
            } else {
                degenerate += 1;
                vec![0.0; centered.len()]
            }
        })
        .collect();
    (rows, degenerate)
}

/// Kernel values between the rows of `xa` and `xe`.
pub fn gram_between(xa: ArrayView2<'_, f64>, xe: ArrayView2<'_, f64>, spec: KernelSpec, square: bool) -> Result<Array2<f64>> {
    if xa.ncols() != xe.ncols() {
        return Err(Error::shape(format!("{} features", xa.ncols()), format!("{} features", xe.ncols())));
    }
    let spec = KernelSpec::new(spec.family, spec.sigma)?;
    let denom = 2.0 * spec.sigma * spec.sigma;
    let (na, ne) = (xa.nrows(), xe.nrows());
    let out: Vec<f64> = match spec.family {
        KernelFamily::Rbf => {
            let a: Vec<Vec<f64>> = xa.rows().into_iter().map(|r| r.to_vec()).collect();
            let e: Vec<Vec<f64>> = xe.rows().into_iter().map(|r| r.to_vec()).collect();
            a.par_iter()
                .flat_map_iter(|ra| e.iter().map(move |re| (-squared_distance(ra, re) / denom).exp()))
                .collect()
        }
        KernelFamily::Correlation => {
            let (ua, da) = unit_rows(xa);
            let (ue, de) = unit_rows(xe);
            if da + de > 0 {
                log::warn!("{} constant feature vector(s); their correlations are set to 0", da + de);
            }
            ua.par_iter()
                .enumerate()
                .flat_map_iter(|(i, ra)| {
                    let ue = &ue;
                    (0..ne).map(move |j| {
                        let re = &ue[j];
                        let mut corr: f64 = ra.iter().zip(re).map(|(x, y)| x * y).sum();
                        if square && i == j && corr != 0.0 {
                            corr = 1.0;
                        }
                        (-(1.0 - corr.clamp(-1.0, 1.0)) / denom).exp()
                    })
                })
                .collect()
        }
    };
    let mut k = Array2::from_shape_vec((na, ne), out).expect("one value per cell");
    if square {
        // Mirror the lower triangle so symmetry is exact.
        for i in 0..na {
            for j in 0..i {
                k[[j, i]] = k[[i, j]];
            }
        }
    }
    Ok(k)
}

fn build(fm: &FeatureMatrix, rows_a: &[usize], rows_e: &[usize], spec: KernelSpec) -> Result<GramKernel> {
    let n = fm.num_rows();
    if let Some(&r) = rows_a.iter().chain(rows_e).find(|&&r| r >= n) {
        return Err(Error::Invalid(format!("row {r} out of range for {n} feature rows")));
    }
    let square = rows_a == rows_e;
    let xa = fm.values.select(Axis(0), rows_a);
    let xe = if square { xa.clone() } else { fm.values.select(Axis(0), rows_e) };
    let values = gram_between(xa.view(), xe.view(), spec, square)?;
    Ok(GramKernel {
        values,
        spec: Some(spec),
        square,
    })
}

pub fn rbf_gram(fm: &FeatureMatrix, rows_a: &[usize], rows_e: &[usize], sigma: f64) -> Result<GramKernel> {
    build(fm, rows_a, rows_e, KernelSpec::new(KernelFamily::Rbf, sigma)?)
}

pub fn correlation_gram(fm: &FeatureMatrix, rows_a: &[usize], rows_e: &[usize], sigma: f64) -> Result<GramKernel> {
    build(fm, rows_a, rows_e, KernelSpec::new(KernelFamily::Correlation, sigma)?)
}

pub fn gram(fm: &FeatureMatrix, rows_a: &[usize], rows_e: &[usize], spec: KernelSpec) -> Result<GramKernel> {
    build(fm, rows_a, rows_e, spec)
}

/// Streams `K(rows_a, rows_e)` in blocks of at most `block_rows` anchor rows,
/// so the full matrix never has to be held at once.
pub fn gram_row_blocks<'a>(
    fm: &'a FeatureMatrix,
    rows_a: &'a [usize],
    rows_e: &'a [usize],
    spec: KernelSpec,
    block_rows: usize,
) -> impl Iterator<Item = Result<(usize, Array2<f64>)>> + 'a {
    let xe = fm.values.select(Axis(0), rows_e);
    rows_a.chunks(block_rows.max(1)).enumerate().map(move |(k, chunk)| {
        let xa = fm.values.select(Axis(0), chunk);
        gram_between(xa.view(), xe.view(), spec, false).map(|block| (k * block_rows.max(1), block))
    })
}

/// Spherical normalization `K(a,e)/√(K(a,a)·K(e,e))`, optionally followed by
/// centering in feature space with training means.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsNormalizer {
    anchor_diag: Vec<f64>,
    center: Option<CenterStats>,
}

#[derive(Debug, Clone, PartialEq)]
struct CenterStats {
    /// Mean of the normalized training kernel over training columns, per anchor.
    anchor_means: Vec<f64>,
    grand_mean: f64,
}

impl RkhsNormalizer {
    pub fn fit(train: &GramKernel, center: bool) -> Result<Self> {
        if !train.square {
            return Err(Error::Invalid("normalizer needs the square training Gram".into()));
        }
        let diag: Vec<f64> = train.values.diag().to_vec();
        if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
            return Err(Error::Invalid(format!("kernel diagonal entry {i} is not positive")));
        }
        let mut norm = RkhsNormalizer {
            anchor_diag: diag.clone(),
            center: None,
        };
        if center {
            let k = norm.spherical(&train.values, &diag);
            let n = k.nrows() as f64;
            let anchor_means: Vec<f64> = k.rows().into_iter().map(|r| r.sum() / n).collect();
            let grand_mean = anchor_means.iter().sum::<f64>() / n;
            norm.center = Some(CenterStats {
                anchor_means,
                grand_mean,
            });
        }
        Ok(norm)
    }

    fn spherical(&self, k: &Array2<f64>, eval_diag: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn(k.dim(), |(a, e)| k[[a, e]] / (self.anchor_diag[a] * eval_diag[e]).sqrt())
    }

    /// Normalizes `k`, whose evaluation rows have self-similarities `eval_diag`.
    pub fn apply(&self, k: &GramKernel, eval_diag: &[f64]) -> Result<GramKernel> {
        let (na, ne) = k.shape();
        if na != self.anchor_diag.len() || ne != eval_diag.len() {
            return Err(Error::shape(
                format!("{}x{}", self.anchor_diag.len(), eval_diag.len()),
                format!("{na}x{ne}"),
            ));
        }
        if let Some(i) = eval_diag.iter().position(|&d| d <= 0.0) {
            return Err(Error::Invalid(format!("kernel diagonal entry {i} is not positive")));
        }
        let mut values = self.spherical(&k.values, eval_diag);
        if let Some(c) = &self.center {
            let col_means: Vec<f64> = values.columns().into_iter().map(|col| col.sum() / na as f64).collect();
            for a in 0..na {
                for e in 0..ne {
                    values[[a, e]] += c.grand_mean - c.anchor_means[a] - col_means[e];
                }
            }
        }
        Ok(GramKernel {
            values,
            spec: k.spec,
            square: k.square,
        })
    }
}

pub fn normalize_kernel(k: &GramKernel, stats: &RkhsNormalizer, eval_diag: &[f64]) -> Result<GramKernel> {
    stats.apply(k, eval_diag)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    SymmetricEigen::new(dm).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Numerical PSD test: `λ_min ≥ −1e-8 · trace`.
pub fn passes_psd_check(k: &GramKernel) -> bool {
    k.square && min_eigenvalue(&k.values) >= -1e-8 * k.trace().abs()
}

/// Hex SHA-256 of the feature values (row-major little-endian bytes).
pub fn feature_hash(values: &Array2<f64>) -> String {
    let mut hasher = Sha256::new();
    for v in values.iter() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes `path` (little-endian `f64`, row-major) and a `path.meta` sidecar.
pub fn save_gram_cache(path: &Path, k: &GramKernel, rows_a: &[usize], rows_e: &[usize], features: &Array2<f64>) -> Result<()> {
    let bytes: Vec<u8> = k.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let spec = k
        .spec
        .map(|s| format!("{} {}", s.family.short_name(), s.sigma))
        .unwrap_or_else(|| "combined".into());
    let meta = format!(
        "spec = {spec}\nshape = {} {}\nrows_a = {}\nrows_e = {}\nfeature_sha256 = {}\n",
        k.values.nrows(),
        k.values.ncols(),
        join(rows_a),
        join(rows_e),
        feature_hash(features)
    );
    let meta_path = path.with_extension("meta");
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

/// Reads a cached Gram if its sidecar matches the given rows and features.
pub fn load_gram_cache(path: &Path, rows_a: &[usize], rows_e: &[usize], features: &Array2<f64>) -> Result<Option<Array2<f64>>> {
    let meta_path = path.with_extension("meta");
    let Ok(meta) = fs::read_to_string(&meta_path) else {
        return Ok(None);
    };
    let field = |k: &str| {
        meta.lines()
            .find_map(|l| l.split_once('=').filter(|(a, _)| a.trim() == k).map(|(_, v)| v.trim().to_string()))
    };
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    if field("rows_a").as_deref() != Some(join(rows_a).as_str())
        || field("rows_e").as_deref() != Some(join(rows_e).as_str())
        || field("feature_sha256").as_deref() != Some(feature_hash(features).as_str())
    {
        return Ok(None);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows_a.len() * rows_e.len() * 8 {
        return Err(Error::Data(format!("Gram cache {} has the wrong size", path.display())));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Some(Array2::from_shape_vec((rows_a.len(), rows_e.len()), vals).unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(values: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix {
            values,
            partition_ref: "test".into(),
            standardization: None,
        }
    }

    fn random_fm(seed: u64, n: usize, c: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fm(Array2::from_shape_fn((n, c), |_| rng.random_range(-2.0..2.0)))
    }

    #[test]
    fn grid_shape() {
        let g = sigma_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.125);
        assert_eq!(g[9], 64.0);
        assert!(g.windows(2).all(|w| w[1] / w[0] == 2.0));
    }

    #[test]
    fn rbf_reference_values() {
        let sigma = 0.7;
        let d = (2.0f64).sqrt() * sigma;
        let f = fm(array![[0.0, 0.0], [d, 0.0]]);
        let k = rbf_gram(&f, &[0, 1], &[0, 1], sigma).unwrap();
        assert_eq!(k.values[[0, 0]], 1.0);
        assert!((k.values[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(rbf_gram(&f, &[0], &[1], 0.0).is_err());
        assert!(rbf_gram(&f, &[0], &[1], -1.0).is_err());
    }

    #[test]
    fn rbf_grows_with_width() {
        let f = random_fm(3, 8, 3);
        let rows: Vec<usize> = (0..8).collect();
        let ks: Vec<GramKernel> = [16.0, 64.0, 256.0].iter().map(|&s| rbf_gram(&f, &rows, &rows, s).unwrap()).collect();
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert!(ks[0].values[[i, j]] < ks[1].values[[i, j]]);
                    assert!(ks[1].values[[i, j]] < ks[2].values[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn correlation_reference_values() {
        let f = fm(array![[1.0, 2.0, 4.0], [3.0, 5.0, 9.0], [-1.0, -2.0, -4.0], [2.0, 2.0, 2.0]]);
        let sigma = 1.5;
        let k = correlation_gram(&f, &[0], &[1, 2, 3], sigma).unwrap();
        assert!((k.values[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((k.values[[0, 1]] - (-1.0 / (sigma * sigma)).exp()).abs() < 1e-15);
        assert!((k.values[[0, 2]] - (-1.0 / (2.0 * sigma * sigma)).exp()).abs() < 1e-15);
    }

    #[test]
    fn correlation_matches_pairwise_oracle() {
        let f = random_fm(7, 30, 6);
        let rows: Vec<usize> = (0..30).collect();
        let sigma = 0.5;
        let k = correlation_gram(&f, &rows, &rows, sigma).unwrap();
        for a in 0..30 {
            for e in 0..30 {
                let x = f.values.row(a);
                let y = f.values.row(e);
                let mx = x.sum() / 6.0;
                let my = y.sum() / 6.0;
                let cov: f64 = (0..6).map(|i| (x[i] - mx) * (y[i] - my)).sum();
                let vx: f64 = (0..6).map(|i| (x[i] - mx).powi(2)).sum();
                let vy: f64 = (0..6).map(|i| (y[i] - my).powi(2)).sum();
                let corr = cov / (vx * vy).sqrt();
                let expected = (-(1.0 - corr) / (2.0 * sigma * sigma)).exp();
                assert!((k.values[[a, e]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn streamed_blocks_match_dense() {
        let f = random_fm(9, 23, 4);
        let a: Vec<usize> = (0..23).collect();
        let e: Vec<usize> = (0..23).step_by(3).collect();
        let spec = KernelSpec::new(KernelFamily::Rbf, 1.0).unwrap();
        let dense = gram(&f, &a, &e, spec).unwrap();
        for block in gram_row_blocks(&f, &a, &e, spec, 5) {
            let (start, vals) = block.unwrap();
            for i in 0..vals.nrows() {
                for j in 0..vals.ncols() {
                    assert_eq!(vals[[i, j]], dense.values[[start + i, j]]);
                }
            }
        }
    }

    #[test]
    fn normalizer_cases() {
        let f = random_fm(2, 10, 3);
        let rows: Vec<usize> = (0..10).collect();
        let k = rbf_gram(&f, &rows, &rows, 1.0).unwrap();
        let plain = RkhsNormalizer::fit(&k, false).unwrap();
        assert_eq!(normalize_kernel(&k, &plain, &vec![1.0; 10]).unwrap().values, k.values);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Array2::from_shape_fn((8, 5), |_| rng.random_range(-1.0..1.0));
        let psd = GramKernel::from_values(b.dot(&b.t()) + Array2::<f64>::eye(8) * 0.1, true);
        let diag: Vec<f64> = psd.values.diag().to_vec();
        let n = normalize_kernel(&psd, &RkhsNormalizer::fit(&psd, false).unwrap(), &diag).unwrap();
        assert!(n.values.diag().iter().all(|&d| (d - 1.0).abs() < 1e-12));
        assert!(passes_psd_check(&n));
        let centered = normalize_kernel(&psd, &RkhsNormalizer::fit(&psd, true).unwrap(), &diag).unwrap();
        assert!(passes_psd_check(&centered));
        assert!(centered.values.sum().abs() < 1e-10);

        let zero = GramKernel::from_values(Array2::zeros((2, 2)), true);
        assert!(RkhsNormalizer::fit(&zero, false).is_err());
    }

    #[test]
    fn gram_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.bin");
        let f = random_fm(1, 6, 2);
        let rows: Vec<usize> = (0..6).collect();
        let k = rbf_gram(&f, &rows, &rows, 2.0).unwrap();
        save_gram_cache(&path, &k, &rows, &rows, &f.values).unwrap();
        assert_eq!(load_gram_cache(&path, &rows, &rows, &f.values).unwrap(), Some(k.values.clone()));
        let other = random_fm(2, 6, 2);
        assert_eq!(load_gram_cache(&path, &rows, &rows, &other.values).unwrap(), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn grams_are_psd_unit_diagonal(seed in 0u64..1000, n in 2usize..40, c in 2usize..6) {
            let f = random_fm(seed, n, c);
            let rows: Vec<usize> = (0..n).collect();
            for sigma in sigma_grid() {
                for fam in [KernelFamily::Rbf, KernelFamily::Correlation] {
                    let k = gram(&f, &rows, &rows, KernelSpec::new(fam, sigma).unwrap()).unwrap();
                    prop_assert!(passes_psd_check(&k));
                    for i in 0..n {
                        prop_assert_eq!(k.values[[i, i]], 1.0);
                    }
                    prop_assert!(k.values.iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }

        #[test]
        fn rbf_ignores_zero_column(seed in 0u64..1000) {
            let f = random_fm(seed, 12, 3);
            let mut wide = Array2::zeros((12, 4));
            wide.slice_mut(ndarray::s![.., 0..3]).assign(&f.values);
            let rows: Vec<usize> = (0..12).collect();
            let a = rbf_gram(&f, &rows, &rows, 1.0).unwrap();
            let b = rbf_gram(&fm(wide), &rows, &rows, 1.0).unwrap();
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn correlation_ignores_per_sample_affine(seed in 0u64..1000) {
            let f = random_fm(seed, 10, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut moved = f.values.clone();
            for mut row in moved.rows_mut() {
                let a = rng.random_range(0.1..5.0);
                let c = rng.random_range(-3.0..3.0);
                row.mapv_inplace(|v| a * v + c);
            }
            let rows: Vec<usize> = (0..10).collect();
            let k1 = correlation_gram(&f, &rows, &rows, 0.8).unwrap();
            let k2 = correlation_gram(&fm(moved), &rows, &rows, 0.8).unwrap();
            for (x, y) in k1.values.iter().zip(k2.values.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
