//! Loading hyperspectral data as a flat pixel-by-band matrix.
//!
//! Two on-disk layouts are understood:
//!
//! * **HSI-CSV**: a first line `n,b,L`, followed by `n` lines each holding `b`
//!   comma-separated reflectance values and one integer label. Label `0` marks
//!   an unlabeled pixel and is dropped.
//! * **raw cube**: little-endian `f32` samples in band-interleaved-by-pixel
//!   order, with a sidecar `<file>.hdr` text header (`rows`, `cols`, `bands`,
//!   `label_file`) and a label raster of little-endian `i32`.
//!
//! Labels are stored densified to `1..=L`; [`HsiDataset::class_ids`] keeps the
//! original id of every dense class.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk dataset layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    RawCube,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "raw-cube" | "raw" => Ok(DataFormat::RawCube),
            other => Err(Error::Config(format!("unknown data format `{other}`"))),
        }
    }
}

/// Labeled pixels, one row per pixel and one column per retained band.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiDataset {
    pub pixels: Array2<f64>,
    /// Dense class index per row, in `1..=num_classes()`.
    pub labels: Vec<usize>,
    /// Original sensor band index of each column, strictly increasing.
    pub band_ids: Vec<usize>,
    /// Original label id of dense class `k` at position `k - 1`.
    pub class_ids: Vec<i64>,
    pub class_names: Option<Vec<String>>,
}

impl HsiDataset {
    /// Builds a dataset from raw labels, densifying them in ascending order of
    /// their original ids. Rows labeled `0` are dropped.
    pub fn from_raw_labels(pixels: Array2<f64>, raw_labels: &[i64], band_ids: Vec<usize>) -> Result<Self> {
        if pixels.nrows() != raw_labels.len() {
            return Err(Error::shape(
                format!("{} labels", pixels.nrows()),
                format!("{} labels", raw_labels.len()),
            ));
        }
        let keep: Vec<usize> = (0..raw_labels.len()).filter(|&r| raw_labels[r] != 0).collect();
        let mut ids: Vec<i64> = keep.iter().map(|&r| raw_labels[r]).collect();
        ids.sort_unstable();
        ids.dedup();
        if let Some(&neg) = ids.iter().find(|&&id| id < 0) {
            return Err(Error::Data(format!("negative class label {neg}")));
        }
        let dense: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k + 1)).collect();
        let pixels = pixels.select(Axis(0), &keep);
        let labels = keep.iter().map(|&r| dense[&raw_labels[r]]).collect();
        let ds = HsiDataset {
            pixels,
            labels,
            band_ids,
            class_ids: ids,
            class_names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_pixels(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn num_bands(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// The given rows, keeping band and class metadata (classes may end up empty).
    pub fn subset(&self, rows: &[usize]) -> HsiDataset {
        HsiDataset {
            pixels: self.pixels.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            band_ids: self.band_ids.clone(),
            class_ids: self.class_ids.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Row indices of each dense class, in row order.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (r, &l) in self.labels.iter().enumerate() {
            out[l - 1].push(r);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.nrows() != self.labels.len() {
            return Err(Error::shape(
                format!("{} labels", self.pixels.nrows()),
                format!("{} labels", self.labels.len()),
            ));
        }
        if self.band_ids.len() != self.pixels.ncols() {
            return Err(Error::shape(
                format!("{} band ids", self.pixels.ncols()),
                format!("{} band ids", self.band_ids.len()),
            ));
        }
        if self.pixels.ncols() == 0 || self.pixels.nrows() == 0 {
            return Err(Error::Data("empty dataset".into()));
        }
        if self.band_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("band ids must be strictly increasing".into()));
        }
        let l = self.num_classes();
        let mut counts = vec![0usize; l];
        for (r, &lab) in self.labels.iter().enumerate() {
            if lab == 0 || lab > l {
                return Err(Error::Data(format!("label {lab} at row {r} outside 1..={l}")));
            }
            counts[lab - 1] += 1;
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("class {} has no samples", k + 1)));
        }
        Ok(())
    }
}

/// Reads a dataset in the given layout.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<HsiDataset> {
    match format {
        DataFormat::Csv => load_csv(path),
        DataFormat::RawCube => load_raw_cube(path),
    }
}

fn parse_header_line(line: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Header(format!("expected `n,b,L`, found `{}`", line.trim())));
    }
    let mut vals = [0usize; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .parse()
            .map_err(|_| Error::Header(format!("`{p}` is not a non-negative integer")))?;
    }
    if vals[1] == 0 {
        return Err(Error::Header("band count must be positive".into()));
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Parses HSI-CSV text. Rows and columns in error messages are 1-based data
/// coordinates (the header line is not counted).
pub fn parse_csv<R: BufRead>(reader: R) -> Result<HsiDataset> {
    let mut lines = reader.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line.map_err(|e| Error::Header(e.to_string()))?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::Header("missing `n,b,L` header".into())),
        }
    };
    let (n, b, l) = parse_header_line(&header)?;

    let mut values = Vec::with_capacity(n * b);
    let mut raw_labels = Vec::with_capacity(n);
    let mut row = 0usize;
    for line in lines {
        let line = line.map_err(|e| Error::Parse {
            row: row + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != b + 1 {
            return Err(Error::Parse {
                row,
                col: fields.len(),
                msg: format!("expected {} fields, found {}", b + 1, fields.len()),
            });
        }
        for (c, f) in fields[..b].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                row,
                col: c + 1,
                msg: format!("`{f}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: c + 1,
                    msg: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        let lab: i64 = fields[b].parse().map_err(|_| Error::Parse {
            row,
            col: b + 1,
            msg: format!("`{}` is not an integer label", fields[b]),
        })?;
        if lab < 0 || lab as usize > l {
            return Err(Error::Parse {
                row,
                col: b + 1,
                msg: format!("label {lab} outside 0..={l}"),
            });
        }
        raw_labels.push(lab);
    }
    if row != n {
        return Err(Error::Header(format!("header declares {n} rows, found {row}")));
    }
    let pixels = Array2::from_shape_vec((n, b), values).expect("row lengths checked");
    HsiDataset::from_raw_labels(pixels, &raw_labels, (1..=b).collect())
}

fn load_csv(path: &Path) -> Result<HsiDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(BufReader::new(file))
}

/// Writes HSI-CSV using original class ids, so a reload reproduces the dataset.
pub fn write_csv<W: Write>(ds: &HsiDataset, mut w: W) -> std::io::Result<()> {
    let max_id = ds.class_ids.iter().copied().max().unwrap_or(0);
    writeln!(w, "{},{},{}", ds.num_pixels(), ds.num_bands(), max_id)?;
    let mut line = String::new();
    for (r, row) in ds.pixels.rows().into_iter().enumerate() {
        line.clear();
        for v in row.iter() {
            line.push_str(&format!("{v},"));
        }
        line.push_str(&ds.class_ids[ds.labels[r] - 1].to_string());
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn save_csv(ds: &HsiDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sidecar header of a raw cube.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCubeHeader {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub label_file: PathBuf,
}

impl RawCubeHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Header(format!("expected `key = value`, found `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let dim = |key: &str| -> Result<usize> {
            let v = kv
                .get(key)
                .ok_or_else(|| Error::Header(format!("missing `{key}`")))?;
            v.parse()
                .map_err(|_| Error::Header(format!("`{key}` = `{v}` is not an integer")))
        };
        let label_file = kv
            .get("label_file")
            .ok_or_else(|| Error::Header("missing `label_file`".into()))?;
        Ok(RawCubeHeader {
            rows: dim("rows")?,
            cols: dim("cols")?,
            bands: dim("bands")?,
            label_file: PathBuf::from(label_file),
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn load_raw_cube(path: &Path) -> Result<HsiDataset> {
    let hdr_path = sidecar_path(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header = RawCubeHeader::parse(&text)?;
    let n = header.rows * header.cols;
    let b = header.bands;
    if n == 0 || b == 0 {
        return Err(Error::Header("cube dimensions must be positive".into()));
    }

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != n * b * 4 {
        return Err(Error::Header(format!(
            "cube file holds {} bytes, header implies {}",
            bytes.len(),
            n * b * 4
        )));
    }
    let mut values = Vec::with_capacity(n * b);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Parse {
                row: i / b + 1,
                col: i % b + 1,
                msg: "non-finite value".into(),
            });
        }
        values.push(v);
    }

    let label_path = if header.label_file.is_absolute() {
        header.label_file.clone()
    } else {
        path.parent().unwrap_or(Path::new(".")).join(&header.label_file)
    };
    let lbytes = fs::read(&label_path).map_err(|e| Error::io(&label_path, e))?;
    if lbytes.len() != n * 4 {
        return Err(Error::Header(format!(
            "label raster holds {} bytes, expected {}",
            lbytes.len(),
            n * 4
        )));
    }
    let raw_labels: Vec<i64> = lbytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
        .collect();
    if let Some(r) = raw_labels.iter().position(|&l| l < 0) {
        return Err(Error::Parse {
            row: r + 1,
            col: b + 1,
            msg: format!("negative label {}", raw_labels[r]),
        });
    }

    let pixels = Array2::from_shape_vec((n, b), values).expect("size checked");
    HsiDataset::from_raw_labels(pixels, &raw_labels, (1..=b).collect())
}

/// Writes a raw cube (`path`, `path.hdr`, and the label raster next to it).
pub fn save_raw_cube(
    path: &Path,
    pixels: &Array2<f64>,
    raw_labels: &[i32],
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows * cols != pixels.nrows() || raw_labels.len() != pixels.nrows() {
        return Err(Error::shape(
            format!("{} pixels", rows * cols),
            format!("{} pixels / {} labels", pixels.nrows(), raw_labels.len()),
        ));
    }
    let mut buf = Vec::with_capacity(pixels.len() * 4);
    for v in pixels.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let label_name = format!(
        "{}.labels",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("cube")
    );
    let label_path = path.parent().unwrap_or(Path::new(".")).join(&label_name);
    let lbuf: Vec<u8> = raw_labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(&label_path, lbuf).map_err(|e| Error::io(&label_path, e))?;
    let hdr = format!(
        "rows = {rows}\ncols = {cols}\nbands = {}\nlabel_file = {label_name}\n",
        pixels.ncols()
    );
    let hdr_path = sidecar_path(path);
    fs::write(&hdr_path, hdr).map_err(|e| Error::io(&hdr_path, e))
}

/// Removes the listed sensor bands.
pub fn apply_band_exclusion(ds: &HsiDataset, excluded: &[usize]) -> Result<HsiDataset> {
    for id in excluded {
        if !ds.band_ids.contains(id) {
            return Err(Error::Invalid(format!("unknown band id {id}")));
        }
    }
    let keep: Vec<usize> = (0..ds.num_bands())
        .filter(|&c| !excluded.contains(&ds.band_ids[c]))
        .collect();
    if keep.is_empty() {
        return Err(Error::Data("empty dataset: every band excluded".into()));
    }
    Ok(HsiDataset {
        pixels: ds.pixels.select(Axis(1), &keep),
        labels: ds.labels.clone(),
        band_ids: keep.iter().map(|&c| ds.band_ids[c]).collect(),
        class_ids: ds.class_ids.clone(),
        class_names: ds.class_names.clone(),
    })
}

/// The 20 water-absorption bands removed from the 220-band Indian Pines cube
/// (1-based sensor ids 104–108, 150–163 and 220).
pub fn indian_pines_water_bands() -> Vec<usize> {
    (104..=108).chain(150..=163).chain(std::iter::once(220)).collect()
}

/// Keeps only the given dense classes, relabeling them `1..=|keep|` in their
/// original order. The original ids travel in `class_ids`.
pub fn filter_classes(ds: &HsiDataset, keep: &[usize]) -> Result<HsiDataset> {
    if keep.is_empty() {
        return Err(Error::Invalid("class keep-set is empty".into()));
    }
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if let Some(&bad) = keep.iter().find(|&&k| k == 0 || k > ds.num_classes()) {
        return Err(Error::Invalid(format!("class {bad} is not present")));
    }
    let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(i, &k)| (k, i + 1)).collect();
    let rows: Vec<usize> = (0..ds.num_pixels())
        .filter(|&r| remap.contains_key(&ds.labels[r]))
        .collect();
    Ok(HsiDataset {
        pixels: ds.pixels.select(Axis(0), &rows),
        labels: rows.iter().map(|&r| remap[&ds.labels[r]]).collect(),
        band_ids: ds.band_ids.clone(),
        class_ids: keep.iter().map(|&k| ds.class_ids[k - 1]).collect(),
        class_names: ds
            .class_names
            .as_ref()
            .map(|names| keep.iter().map(|&k| names[k - 1].clone()).collect()),
    })
}

/// Parameters of a stratified train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            train_fraction: 0.2,
            validation_fraction_of_train: 0.5,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0,1)",
                self.train_fraction
            )));
        }
        if !(self.validation_fraction_of_train >= 0.0 && self.validation_fraction_of_train < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction_of_train {} outside [0,1)",
                self.validation_fraction_of_train
            )));
        }
        Ok(())
    }
}

/// Disjoint, sorted row-index sets covering the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// Training rows excluding the validation rows.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Training rows including validation, sorted.
    pub fn full_train(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().chain(&self.validation).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let fmt = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let text = format!(
            "train: {}\nvalidation: {}\ntest: {}\n",
            fmt(&self.train),
            fmt(&self.validation),
            fmt(&self.test)
        );
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut sets: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Data(format!("bad split line `{line}`")))?;
            let idx = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().map_err(|_| Error::Data(format!("bad index `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            sets.insert(k.trim().to_string(), idx);
        }
        let mut take = |k: &str| sets.remove(k).ok_or_else(|| Error::Data(format!("split file lacks `{k}`")));
        Ok(Split {
            train: take("train")?,
            validation: take("validation")?,
            test: take("test")?,
        })
    }
}

/// Stratified, seeded split. Each class contributes `round(f·n_c)` training
/// rows, of which `round(v·n_train)` become validation rows.
pub fn make_split(ds: &HsiDataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let want_val = spec.validation_fraction_of_train > 0.0;
    for (k, mut rows) in ds.rows_by_class().into_iter().enumerate() {
        let n_c = rows.len();
        let min_needed = 2 + usize::from(want_val);
        if n_c < min_needed {
            return Err(Error::ClassTooSmall {
                class: k + 1,
                count: n_c,
            });
        }
        rows.shuffle(&mut rng);
        let n_train = ((spec.train_fraction * n_c as f64).round() as usize).clamp(1 + usize::from(want_val), n_c - 1);
        let mut n_val = (spec.validation_fraction_of_train * n_train as f64).round() as usize;
        if want_val {
            n_val = n_val.clamp(1, n_train - 1);
        }
        split.validation.extend_from_slice(&rows[..n_val]);
        split.train.extend_from_slice(&rows[n_val..n_train]);
        split.test.extend_from_slice(&rows[n_train..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
