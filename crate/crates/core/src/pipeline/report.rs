use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use super::config::ExperimentConfig;
use super::protocol::ProtocolRun;
use crate::cube_io::HsiDataset;
use crate::error::{Error, Result};
use crate::export::{save_matrix_text, save_permutation, save_pgm};
use crate::proximity::{compute_dm, normalize_dm, DmMeasure};
use crate::vat::{ivat_enhance, ivat_values, vat_order};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Intra,
    Inter,
}

/// One line of an accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub table: Table,
    pub clustering: String,
    pub method: String,
    pub trainer: String,
    pub p: Option<f64>,
    pub topk: String,
    pub overall_acc: f64,
    pub per_class_acc: Vec<f64>,
    pub kernels: Vec<String>,
    pub converged: bool,
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        None => String::new(),
        Some(p) if p.is_infinite() => "inf".into(),
        Some(p) => p.to_string(),
    }
}

fn fmt_acc(a: f64) -> String {
    if a.is_nan() {
        "nan".into()
    } else {
        format!("{a:.4}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_table_csv<W: Write>(rows: &[&ResultRow], num_classes: usize, mut w: W) -> std::io::Result<()> {
    let mut header = vec!["clustering", "method", "trainer", "p", "topk", "overall_acc"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((1..=num_classes).map(|c| format!("per_class_acc_{c}")));
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut cells = vec![
            csv_field(&r.clustering),
            csv_field(&r.method),
            r.trainer.clone(),
            fmt_p(r.p),
            r.topk.clone(),
            fmt_acc(r.overall_acc),
        ];
        cells.extend(r.per_class_acc.iter().map(|&a| fmt_acc(a)));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Normalized DM text, raw/iVAT/VAT+iVAT images and the VAT order per measure.
pub fn write_dm_images(ds: &HsiDataset, rows: &[usize], measures: &[DmMeasure], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for &measure in measures {
        let dm = normalize_dm(&compute_dm(ds, rows, measure)?);
        let name = measure.short_name();
        save_matrix_text(&dm.values, &dir.join(format!("{name}_dm.txt")))?;
        save_pgm(&dm.values, 1.0, &dir.join(format!("{name}_raw.pgm")))?;
        save_pgm(&ivat_values(&dm.values)?, 1.0, &dir.join(format!("{name}_ivat.pgm")))?;
        let vat = vat_order(&dm)?;
        let enhanced = ivat_enhance(&vat.ordered_dm)?;
        save_pgm(&enhanced.values, 1.0, &dir.join(format!("{name}_vat_ivat.pgm")))?;
        save_permutation(&vat.permutation, &dir.join(format!("{name}_vat_order.txt")))?;
    }
    Ok(())
}

/// Writes the accuracy tables, the run log, DM images, partitions, the split
/// and (when kept) one model file per table row under `outdir`.
pub fn emit_reports(run: &ProtocolRun, ds: &HsiDataset, cfg: &ExperimentConfig, outdir: &Path) -> Result<()> {
    if run.runs.is_empty() {
        return Err(Error::Invalid("nothing to report".into()));
    }
    for sub in ["", "images", "partitions", "models"] {
        let d = outdir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let l = ds.num_classes();
    for (name, rows) in [("intra_method.csv", run.intra_rows()), ("inter_method.csv", run.inter_rows())] {
        let mut buf = Vec::new();
        write_table_csv(&rows, l, &mut buf).map_err(|e| Error::io(outdir.join(name), e))?;
        write_file(&outdir.join(name), &buf)?;
    }
    run.split.write_text(&outdir.join("split.txt"))?;
    write_dm_images(
        ds,
        &run.split.full_train(),
        &[DmMeasure::SquaredEuclidean, DmMeasure::Correlation],
        &outdir.join("images"),
    )?;

    let mut log = String::new();
    let mut push = |v: serde_json::Value| {
        log.push_str(&v.to_string());
        log.push('\n');
    };
    push(json!({
        "event": "config",
        "seed": cfg.seed,
        "config": serde_json::to_value(cfg).unwrap_or_default(),
    }));
    push(json!({
        "event": "split",
        "seed": cfg.split_spec().seed,
        "train": run.split.train.len(),
        "validation": run.split.validation.len(),
        "test": run.split.test.len(),
    }));
    for g in &run.runs {
        for (measure, o) in &g.outcomes {
            let part_name = format!("{}_{}.txt", g.grouper.short_name(), measure.short_name());
            o.feature_set.partition.save(&outdir.join("partitions").join(&part_name), &ds.band_ids)?;
            push(json!({
                "event": "grouper_scan",
                "clustering": g.grouper.label(),
                "dm": measure.short_name(),
                "selected": o.setting,
                "val_acc": o.val_acc,
                "partition": o.feature_set.features.partition_ref,
                "partition_file": format!("partitions/{part_name}"),
                "seed": cfg.grouper_seed(),
                "candidates": o.candidates.iter().map(|c| json!({
                    "setting": c.setting,
                    "partition": c.partition,
                    "groups": c.num_groups,
                    "feasible": c.feasible,
                    "val_acc": c.val_acc,
                })).collect::<Vec<_>>(),
            }));
        }
        for (method, ranked) in &g.rankings {
            push(json!({
                "event": "ranking",
                "clustering": g.grouper.label(),
                "method": method.label(),
                "kernels": ranked.iter().map(|k| json!({
                    "family": k.spec.family.short_name(),
                    "sigma": k.spec.sigma,
                    "val_acc": k.val_acc,
                })).collect::<Vec<_>>(),
            }));
        }
        push(json!({
            "event": "timing",
            "clustering": g.grouper.label(),
            "seconds": g.seconds,
        }));
    }
    let mut models_written = 0;
    for (stem, rows) in [("intra", run.intra_rows()), ("inter", run.inter_rows())] {
        let kept: Vec<_> = run
            .runs
            .iter()
            .flat_map(|g| if stem == "intra" { &g.intra_models } else { &g.inter_models })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            let model_file = match kept.get(i) {
                Some(m) => {
                    let name = format!("models/{stem}_{i:04}.model");
                    m.save(&outdir.join(&name))?;
                    models_written += 1;
                    Some(name)
                }
                None => None,
            };
            push(json!({
                "event": "result",
                "table": stem,
                "row": i,
                "result": row,
                "model_file": model_file,
            }));
        }
    }
    push(json!({
        "event": "done",
        "seconds": run.seconds,
        "models_written": models_written,
        "converged": run.converged(),
    }));
    write_file(&outdir.join("run_log.jsonl"), log.as_bytes())
}
