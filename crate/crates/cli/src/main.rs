use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bandgroup::cube_io::{
    apply_band_exclusion, filter_classes, load_dataset, make_split, save_csv, save_raw_cube, DataFormat, HsiDataset,
};
use bandgroup::banding::BandPartition;
use bandgroup::pipeline::{
    build_feature_set, emit_reports, generate_synthetic, rank_kernels, run_grouper_scan, run_protocol, write_dm_images,
    write_table_csv, DataConfig, ExperimentConfig, FusionModel, GrouperKind, MethodId, SynthSpec,
};
use bandgroup::proximity::DmMeasure;
use bandgroup::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "bandgroup", version, about = "Hyperspectral band grouping and multi-kernel fusion")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (a file path for `synth`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dataset path (overrides the config)
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Dataset layout: csv or raw-cube
    #[arg(long, global = true)]
    format: Option<String>,

    /// Fail with exit code 4 when any solver hits its iteration limit
    #[arg(long, global = true)]
    strict: bool,

    /// Repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark dataset
    Synth {
        #[arg(long, default_value_t = 500)]
        pixels_per_class: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Comma-separated planted group sizes
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<usize>>,
    },
    /// Compute DMs on the training rows and export matrices and images
    Dm {
        /// sqE, corr or both
        #[arg(long, default_value = "both")]
        measure: String,
    },
    /// Run one grouper's parameter scan and save the selected partition
    Band {
        #[arg(long, default_value = "clodd_c")]
        grouper: String,
        #[arg(long, default_value = "sqE")]
        measure: String,
    },
    /// Rank the kernel widths of one method by validation accuracy
    Rank {
        #[arg(long)]
        method: String,
        /// Partition file; the grouper scan runs when absent
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, default_value = "clodd_c")]
        grouper: String,
    },
    /// Intra- and/or inter-method fusion tables
    Fuse {
        #[arg(long, value_enum, default_value_t = Tables::Both)]
        table: Tables,
    },
    /// Full protocol with all reports
    Run,
    /// Apply a saved model to a dataset
    Predict {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Tables {
    Intra,
    Inter,
    Both,
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(path) = &c.data {
        let prev = cfg.data.take();
        cfg.data = Some(DataConfig {
            path: path.clone(),
            format: prev.as_ref().map_or_else(|| "csv".into(), |d| d.format.clone()),
            exclude_bands: prev.as_ref().map(|d| d.exclude_bands.clone()).unwrap_or_default(),
            keep_classes: prev.map(|d| d.keep_classes).unwrap_or_default(),
        });
    }
    if let Some(f) = &c.format {
        match cfg.data.as_mut() {
            Some(d) => d.format = f.clone(),
            None => return Err(Error::Config("--format given without a dataset".into())),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig) -> Result<HsiDataset> {
    let d = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set [data] path".into()))?;
    let mut ds = load_dataset(&d.path, d.data_format()?)?;
    if !d.exclude_bands.is_empty() {
        ds = apply_band_exclusion(&ds, &d.exclude_bands)?;
    }
    if !d.keep_classes.is_empty() {
        ds = filter_classes(&ds, &d.keep_classes)?;
    }
    log::info!(
        "{}: {} pixels, {} bands, {} classes",
        d.path.display(),
        ds.num_pixels(),
        ds.num_bands(),
        ds.num_classes()
    );
    Ok(ds)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(c: &Common, pixels_per_class: usize, classes: usize, groups: Option<Vec<usize>>) -> Result<()> {
    let out = c.out.clone().ok_or_else(|| Error::Config("synth needs --out FILE".into()))?;
    let mut spec = SynthSpec {
        seed: c.seed.unwrap_or(0),
        pixels_per_class,
        num_classes: classes,
        ..SynthSpec::default()
    };
    if let Some(g) = groups {
        spec.group_sizes = g;
    }
    let ds = generate_synthetic(&spec)?;
    let format: DataFormat = c.format.as_deref().unwrap_or("csv").parse()?;
    match format {
        DataFormat::Csv => save_csv(&ds, &out)?,
        DataFormat::RawCube => {
            let labels: Vec<i32> = ds.labels.iter().map(|&l| l as i32).collect();
            save_raw_cube(&out, &ds.pixels, &labels, ds.num_pixels(), 1)?;
        }
    }
    println!(
        "wrote {} pixels x {} bands ({} classes) to {}",
        ds.num_pixels(),
        ds.num_bands(),
        ds.num_classes(),
        out.display()
    );
    Ok(())
}

fn parse_measures(s: &str) -> Result<Vec<DmMeasure>> {
    if s == "both" {
        return Ok(vec![DmMeasure::SquaredEuclidean, DmMeasure::Correlation]);
    }
    Ok(vec![s.parse()?])
}

fn dm(cfg: &ExperimentConfig, measure: &str) -> Result<()> {
    let measures = parse_measures(measure)?;
    let ds = load_data(cfg)?;
    let split = make_split(&ds, &cfg.split_spec())?;
    let dir = out_dir(cfg)?;
    write_dm_images(&ds, &split.full_train(), &measures, &dir)?;
    println!("wrote {} DM(s) to {}", measures.len(), dir.display());
    Ok(())
}

fn band(cfg: &ExperimentConfig, grouper: &str, measure: &str) -> Result<()> {
    let grouper: GrouperKind = grouper.parse()?;
    let measure: DmMeasure = measure.parse()?;
    let ds = load_data(cfg)?;
    let split = make_split(&ds, &cfg.split_spec())?;
    let outcome = run_grouper_scan(cfg, &ds, &split, grouper, measure)?;
    for cand in &outcome.candidates {
        let acc = cand.val_acc.map_or_else(|| "infeasible".into(), |a| format!("{a:.2}"));
        println!("{:<16} groups={:<3} val_acc={acc}", cand.setting, cand.num_groups);
    }
    let dir = out_dir(cfg)?;
    let stem = format!("{}_{}", grouper.short_name(), measure.short_name());
    let fs = &outcome.feature_set;
    fs.partition.save(&dir.join(format!("partition_{stem}.txt")), &ds.band_ids)?;
    fs.features.save_csv(&dir.join(format!("features_{stem}.csv")))?;
    println!(
        "selected {} ({} groups): {}",
        outcome.setting,
        fs.partition.num_groups(),
        fs.partition.describe(&ds.band_ids)
    );
    Ok(())
}

fn rank(cfg: &ExperimentConfig, method: &str, partition: Option<&Path>, grouper: &str) -> Result<()> {
    let method: MethodId = method.parse()?;
    let ds = load_data(cfg)?;
    let split = make_split(&ds, &cfg.split_spec())?;
    let measure = method.dm_measure();
    let fs = match partition {
        Some(p) => build_feature_set(&ds, BandPartition::load(p, &ds.band_ids)?, measure, &split.full_train())?,
        None => run_grouper_scan(cfg, &ds, &split, grouper.parse()?, measure)?.feature_set,
    };
    let ranked = rank_kernels(cfg, &ds, &fs, &split, method)?;
    let mut text = String::from("rank\tkernel\tval_acc\n");
    for (i, k) in ranked.iter().enumerate() {
        text.push_str(&format!("{}\t{}\t{:.4}\n", i + 1, k.spec, k.val_acc));
    }
    print!("{text}");
    let dir = out_dir(cfg)?;
    write(&dir.join(format!("ranking_{method}.tsv")), &text)
}

fn check_strict(strict: bool, converged: bool) -> Result<()> {
    if strict && !converged {
        return Err(Error::NonConvergence("at least one SVM solve hit its iteration limit".into()));
    }
    if !converged {
        log::warn!("at least one SVM solve hit its iteration limit");
    }
    Ok(())
}

fn fuse(cfg: &ExperimentConfig, tables: Tables, strict: bool) -> Result<()> {
    let mut cfg = cfg.clone();
    match tables {
        Tables::Intra => cfg.inter_topk.clear(),
        Tables::Inter => cfg.intra_topk.clear(),
        Tables::Both => {}
    }
    let ds = load_data(&cfg)?;
    let run = run_protocol(&cfg, &ds)?;
    let dir = out_dir(&cfg)?;
    let mut outputs = Vec::new();
    if tables != Tables::Inter {
        outputs.push(("intra_method.csv", run.intra_rows()));
    }
    if tables != Tables::Intra {
        outputs.push(("inter_method.csv", run.inter_rows()));
    }
    for (name, rows) in outputs {
        let path = dir.join(name);
        let mut buf = Vec::new();
        write_table_csv(&rows, ds.num_classes(), &mut buf).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, buf).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        println!("wrote {} rows to {}", rows.len(), path.display());
    }
    run.split.write_text(&dir.join("split.txt"))?;
    check_strict(strict, run.converged())
}

fn run(cfg: &ExperimentConfig, strict: bool) -> Result<()> {
    let ds = load_data(cfg)?;
    let run = run_protocol(cfg, &ds)?;
    let dir = out_dir(cfg)?;
    emit_reports(&run, &ds, cfg, &dir)?;
    for r in run.intra_rows().iter().filter(|r| r.topk == "all" && r.p == Some(f64::INFINITY)) {
        println!("{:<13} {:<14} all-kernels linf {:.2}%", r.clustering, r.method, r.overall_acc);
    }
    println!("reports in {} ({:.1}s)", dir.display(), run.seconds);
    write(&dir.join("config.toml"), &cfg.to_toml_string())?;
    check_strict(strict, run.converged())
}

fn predict(cfg: &ExperimentConfig, model: &Path) -> Result<()> {
    let m = FusionModel::load(model)?;
    let ds = load_data(cfg)?;
    let pred = m.predict_class_ids(&ds)?;
    let truth: Vec<i64> = ds.labels.iter().map(|&l| ds.class_ids[l - 1]).collect();
    let correct = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
    let dir = out_dir(cfg)?;
    let text: String = pred.iter().map(|p| format!("{p}\n")).collect();
    write(&dir.join("predictions.txt"), &text)?;
    println!(
        "accuracy {:.2}% on {} pixels; predictions in {}",
        100.0 * correct as f64 / pred.len().max(1) as f64,
        pred.len(),
        dir.join("predictions.txt").display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if let Command::Synth {
        pixels_per_class,
        classes,
        groups,
    } = &cli.command
    {
        return synth(c, *pixels_per_class, *classes, groups.clone());
    }
    let cfg = resolve_config(c)?;
    match &cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Dm { measure } => dm(&cfg, measure),
        Command::Band { grouper, measure } => band(&cfg, grouper, measure),
        Command::Rank {
            method,
            partition,
            grouper,
        } => rank(&cfg, method, partition.as_deref(), grouper),
        Command::Fuse { table } => fuse(&cfg, *table, c.strict),
        Command::Run => run(&cfg, c.strict),
        Command::Predict { model } => predict(&cfg, model),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonConvergence(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
