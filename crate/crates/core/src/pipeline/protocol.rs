use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::model::{FeatureSetModel, FusionModel};
use super::report::{ResultRow, Table};
use super::{inter_scenarios, scenario_label, GrouperKind, MethodId, TopK};
use crate::banding::{
    bg_mean_partition, clodd_c, clodd_n, default_c_range, hierarchical_partition, BandPartition, CloddParams,
};
use crate::cube_io::{make_split, HsiDataset, Split};
use crate::error::{Error, Result};
use crate::features::{group_means, standardize, FeatureMatrix};
use crate::kernels::{gram_between, GramKernel, KernelFamily, KernelSpec, RkhsNormalizer};
use crate::proximity::{compute_dm, normalize_dm, DmMeasure};
use crate::svm::{predict, train_ovr, MklOptions, OvrEnsemble, SvmOptions, Trainer};

/// Refuses any selection stage that would read a test row.
#[derive(Debug, Clone)]
pub struct LeakGuard {
    is_test: Vec<bool>,
}

impl LeakGuard {
    pub fn new(num_rows: usize, split: &Split) -> Self {
        let mut is_test = vec![false; num_rows];
        for &r in &split.test {
            is_test[r] = true;
        }
        LeakGuard { is_test }
    }

    pub fn check(&self, rows: &[usize], stage: &str) -> Result<()> {
        match rows.iter().find(|&&r| self.is_test[r]) {
            Some(r) => Err(Error::Invalid(format!("test row {r} reached the {stage} stage"))),
            None => Ok(()),
        }
    }
}

/// Row sets of one split, with the positions of the inner training and
/// validation rows inside the full training set.
#[derive(Debug, Clone)]
struct Rows {
    full: Vec<usize>,
    test: Vec<usize>,
    train_pos: Vec<usize>,
    val_pos: Vec<usize>,
}

impl Rows {
    fn new(split: &Split) -> Self {
        let full = split.full_train();
        let pos = |rows: &[usize]| -> Vec<usize> {
            rows.iter().map(|r| full.binary_search(r).expect("row in training set")).collect()
        };
        Rows {
            train_pos: pos(&split.train),
            val_pos: pos(&split.validation),
            full,
            test: split.test.clone(),
        }
    }
}

/// Standardized group-mean features of one partition for every dataset row.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub measure: DmMeasure,
    pub partition: BandPartition,
    pub features: FeatureMatrix,
}

impl FeatureSet {
    pub fn to_model(&self, anchors: &[usize]) -> FeatureSetModel {
        FeatureSetModel {
            label: self.features.partition_ref.clone(),
            groups: self.partition.groups.clone(),
            standardization: self.features.standardization.clone().expect("standardized"),
            anchors: self.features.values.select(ndarray::Axis(0), anchors),
        }
    }
}

/// Features of `partition`, z-scored with statistics of `fit_rows`.
pub fn build_feature_set(ds: &HsiDataset, partition: BandPartition, measure: DmMeasure, fit_rows: &[usize]) -> Result<FeatureSet> {
    partition.check_cover(ds.num_bands())?;
    let raw = FeatureMatrix {
        values: group_means(&ds.pixels, &partition.groups),
        partition_ref: partition.describe(&ds.band_ids),
        standardization: None,
    };
    Ok(FeatureSet {
        measure,
        features: standardize(&raw, fit_rows)?,
        partition,
    })
}

fn rows_of(values: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    values.select(ndarray::Axis(0), rows)
}

/// `K(anchors, anchors)` and `K(anchors, evals)`, normalized when configured.
fn kernel_pair(cfg: &ExperimentConfig, x: &Array2<f64>, anchors: &[usize], evals: &[usize], spec: KernelSpec) -> Result<(GramKernel, GramKernel)> {
    let xa = rows_of(x, anchors);
    let xe = rows_of(x, evals);
    let train = GramKernel {
        values: gram_between(xa.view(), xa.view(), spec, true)?,
        spec: Some(spec),
        square: true,
    };
    let cross = GramKernel {
        values: gram_between(xa.view(), xe.view(), spec, false)?,
        spec: Some(spec),
        square: false,
    };
    if !cfg.normalize_kernels {
        return Ok((train, cross));
    }
    normalize_pair(cfg.center_kernels, &train, &cross, xe.view(), spec)
}

pub(crate) fn normalize_pair(
    center: bool,
    train: &GramKernel,
    cross: &GramKernel,
    xe: ndarray::ArrayView2<'_, f64>,
    spec: KernelSpec,
) -> Result<(GramKernel, GramKernel)> {
    let norm = RkhsNormalizer::fit(train, center)?;
    let train_diag: Vec<f64> = train.values.diag().to_vec();
    let eval_diag: Vec<f64> = xe
        .rows()
        .into_iter()
        .map(|r| {
            let one = r.insert_axis(ndarray::Axis(0));
            gram_between(one, one, spec, true).map(|k| k[[0, 0]])
        })
        .collect::<Result<_>>()?;
    Ok((norm.apply(train, &train_diag)?, norm.apply(cross, &eval_diag)?))
}

fn accuracy(pred: &[usize], truth: &[usize], num_classes: usize) -> (f64, Vec<f64>) {
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let overall = 100.0 * correct as f64 / truth.len().max(1) as f64;
    let per_class = (1..=num_classes)
        .map(|c| {
            let (mut hit, mut tot) = (0usize, 0usize);
            for (p, t) in pred.iter().zip(truth) {
                if *t == c {
                    tot += 1;
                    hit += usize::from(p == t);
                }
            }
            if tot == 0 {
                f64::NAN
            } else {
                100.0 * hit as f64 / tot as f64
            }
        })
        .collect();
    (overall, per_class)
}

fn svm_options(cfg: &ExperimentConfig) -> MklOptions {
    MklOptions {
        svm: SvmOptions {
            c_reg: cfg.c_reg,
            tol: cfg.tol,
            max_iter: None,
        },
        ..MklOptions::default()
    }
}

/// Validation accuracy of a single-kernel SVM trained on the inner training rows.
fn validation_accuracy(cfg: &ExperimentConfig, ds: &HsiDataset, fs: &FeatureSet, rows: &Rows, spec: KernelSpec) -> Result<f64> {
    let train_rows: Vec<usize> = rows.train_pos.iter().map(|&p| rows.full[p]).collect();
    let val_rows: Vec<usize> = rows.val_pos.iter().map(|&p| rows.full[p]).collect();
    let (k, cross) = kernel_pair(cfg, &fs.features.values, &train_rows, &val_rows, spec)?;
    let labels: Vec<usize> = train_rows.iter().map(|&r| ds.labels[r]).collect();
    let truth: Vec<usize> = val_rows.iter().map(|&r| ds.labels[r]).collect();
    let ens = train_ovr(&[&k], &labels, Trainer::Svm, &svm_options(cfg))?;
    let pred = predict(&ens, &[&cross])?;
    Ok(accuracy(&pred, &truth, ds.num_classes()).0)
}

fn sorted_sigmas(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut s = cfg.sigmas.clone();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub setting: String,
    pub partition: Option<String>,
    pub num_groups: usize,
    pub feasible: bool,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GrouperOutcome {
    pub grouper: GrouperKind,
    pub setting: String,
    pub val_acc: f64,
    pub candidates: Vec<CandidateScore>,
    pub feature_set: FeatureSet,
}

fn grouper_candidates(cfg: &ExperimentConfig, grouper: GrouperKind, ds: &HsiDataset, rows: &[usize], measure: DmMeasure) -> Result<Vec<(String, Result<BandPartition>)>> {
    let dm = normalize_dm(&compute_dm(ds, rows, measure)?);
    let b = dm.size();
    let clodd = |alpha: f64| CloddParams {
        alpha,
        gamma: cfg.clodd.gamma,
        min_size: cfg.clodd.min_size,
        max_size: cfg.clodd.max_size,
        search: cfg.clodd.search,
        restarts: cfg.clodd.restarts,
        seed: cfg.grouper_seed(),
        ..CloddParams::default()
    };
    Ok(match grouper {
        GrouperKind::CloddC => cfg.clodd.alphas.iter().map(|&a| (format!("alpha={a}"), clodd_c(&dm, &clodd(a)))).collect(),
        GrouperKind::CloddN => cfg.clodd.alphas.iter().map(|&a| (format!("alpha={a}"), clodd_n(&dm, &clodd(a)))).collect(),
        GrouperKind::BgMean => cfg
            .bg_mean
            .thresholds
            .iter()
            .map(|&t| (format!("threshold={t}"), bg_mean_partition(&dm, t, cfg.bg_mean.max_size)))
            .collect(),
        GrouperKind::Hierarchical => {
            let h = &cfg.hierarchical;
            let (lo, hi) = h.c_range.unwrap_or_else(|| default_c_range(b, h.min_size, h.max_size));
            let all: Vec<(String, Result<BandPartition>)> = (lo..=hi.min(b))
                .map(|c| (format!("c={c}"), hierarchical_partition(&dm, h.linkage, c, h.min_size, h.max_size)))
                .collect();
            if all.iter().any(|(_, p)| matches!(p, Ok(p) if p.feasible)) {
                all.into_iter()
                    .map(|(s, p)| match p {
                        Ok(p) if !p.feasible => (s, Err(Error::Infeasible("group sizes outside bounds".into()))),
                        other => (s, other),
                    })
                    .collect()
            } else {
                log::warn!("no hierarchical cut meets the size bounds; scanning all cuts");
                all
            }
        }
    })
}

/// Runs every setting of the grouper's scan and keeps the partition whose
/// best single-kernel SVM has the highest validation accuracy (first wins ties).
pub fn run_grouper_scan(cfg: &ExperimentConfig, ds: &HsiDataset, split: &Split, grouper: GrouperKind, measure: DmMeasure) -> Result<GrouperOutcome> {
    let rows = Rows::new(split);
    let guard = LeakGuard::new(ds.num_pixels(), split);
    guard.check(&rows.full, "grouping")?;
    let families: Vec<KernelFamily> = {
        let mut f: Vec<KernelFamily> = cfg.methods.iter().filter(|m| m.dm_measure() == measure).map(|m| m.kernel_family()).collect();
        f.sort();
        f.dedup();
        if f.is_empty() {
            vec![KernelFamily::Rbf, KernelFamily::Correlation]
        } else {
            f
        }
    };
    let sigmas = sorted_sigmas(cfg);
    let candidates = grouper_candidates(cfg, grouper, ds, &rows.full, measure)?;
    let single = candidates.len() == 1;
    let scored: Vec<(CandidateScore, Option<FeatureSet>)> = candidates
        .into_par_iter()
        .map(|(setting, part)| -> Result<(CandidateScore, Option<FeatureSet>)> {
            let part = match part {
                Ok(p) => p,
                Err(Error::Infeasible(msg)) => {
                    log::debug!("{} {setting}: {msg}", grouper.label());
                    let score = CandidateScore {
                        setting,
                        partition: None,
                        num_groups: 0,
                        feasible: false,
                        val_acc: None,
                    };
                    return Ok((score, None));
                }
                Err(e) => return Err(e),
            };
            let feasible = part.feasible;
            let num_groups = part.num_groups();
            let fs = build_feature_set(ds, part, measure, &rows.full)?;
            let acc = if single {
                0.0
            } else {
                let mut best = f64::NEG_INFINITY;
                for &family in &families {
                    for &s in &sigmas {
                        best = best.max(validation_accuracy(cfg, ds, &fs, &rows, KernelSpec::new(family, s)?)?);
                    }
                }
                best
            };
            let score = CandidateScore {
                setting,
                partition: Some(fs.features.partition_ref.clone()),
                num_groups,
                feasible,
                val_acc: Some(acc),
            };
            Ok((score, Some(fs)))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, (score, _)) in scored.iter().enumerate() {
        if let Some(a) = score.val_acc {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
    }
    let (idx, val_acc) = best.ok_or_else(|| Error::Infeasible(format!("every {} setting is infeasible", grouper.label())))?;
    let candidates: Vec<CandidateScore> = scored.iter().map(|(s, _)| s.clone()).collect();
    let (score, fs) = scored.into_iter().nth(idx).unwrap();
    Ok(GrouperOutcome {
        grouper,
        setting: score.setting,
        val_acc,
        candidates,
        feature_set: fs.unwrap(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedKernel {
    pub spec: KernelSpec,
    pub val_acc: f64,
}

/// Validation accuracy of every width of the method's kernel family, best
/// first; equal accuracies keep the smaller width first.
pub fn rank_kernels(cfg: &ExperimentConfig, ds: &HsiDataset, fs: &FeatureSet, split: &Split, method: MethodId) -> Result<Vec<RankedKernel>> {
    if split.validation.is_empty() {
        return Err(Error::Invalid("kernel ranking needs validation rows".into()));
    }
    let rows = Rows::new(split);
    LeakGuard::new(ds.num_pixels(), split).check(&rows.full, "ranking")?;
    let mut ranked: Vec<RankedKernel> = sorted_sigmas(cfg)
        .par_iter()
        .map(|&s| {
            let spec = KernelSpec::new(method.kernel_family(), s)?;
            Ok(RankedKernel {
                spec,
                val_acc: validation_accuracy(cfg, ds, fs, &rows, spec)?,
            })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.val_acc.total_cmp(&a.val_acc));
    Ok(ranked)
}

/// Training and test Grams for every ranked kernel of each method.
#[derive(Debug, Clone, Default)]
pub struct KernelBank {
    /// Per method, in ranking order: (spec, K(train, train), K(train, test)).
    pub kernels: BTreeMap<MethodId, Vec<(KernelSpec, GramKernel, GramKernel)>>,
}

impl KernelBank {
    fn build(cfg: &ExperimentConfig, features: &BTreeMap<DmMeasure, FeatureSet>, rankings: &BTreeMap<MethodId, Vec<RankedKernel>>, rows: &Rows) -> Result<Self> {
        let jobs: Vec<(MethodId, KernelSpec)> = rankings
            .iter()
            .flat_map(|(&m, r)| r.iter().map(move |k| (m, k.spec)))
            .collect();
        let built: Vec<(GramKernel, GramKernel)> = jobs
            .par_iter()
            .map(|&(m, spec)| kernel_pair(cfg, &features[&m.dm_measure()].features.values, &rows.full, &rows.test, spec))
            .collect::<Result<_>>()?;
        let mut kernels: BTreeMap<MethodId, Vec<(KernelSpec, GramKernel, GramKernel)>> = BTreeMap::new();
        for ((m, spec), (k, c)) in jobs.into_iter().zip(built) {
            kernels.entry(m).or_default().push((spec, k, c));
        }
        Ok(KernelBank { kernels })
    }
}

/// Everything computed for one grouper.
#[derive(Debug, Clone)]
pub struct GrouperRun {
    pub grouper: GrouperKind,
    pub outcomes: BTreeMap<DmMeasure, GrouperOutcome>,
    pub rankings: BTreeMap<MethodId, Vec<RankedKernel>>,
    pub intra: Vec<ResultRow>,
    pub inter: Vec<ResultRow>,
    /// Parallel to `intra` / `inter` when models are kept.
    pub intra_models: Vec<FusionModel>,
    pub inter_models: Vec<FusionModel>,
    pub seconds: f64,
}

struct FusionContext<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a HsiDataset,
    rows: &'a Rows,
    bank: &'a KernelBank,
    features: &'a BTreeMap<DmMeasure, FeatureSet>,
    grouper: GrouperKind,
}

struct FusionJob {
    table: Table,
    method: String,
    picks: Vec<(MethodId, usize)>,
    trainer: Trainer,
    topk: TopK,
}

impl FusionContext<'_> {
    fn run(&self, job: &FusionJob) -> Result<(ResultRow, Option<FusionModel>)> {
        let mut train = Vec::new();
        let mut cross = Vec::new();
        let mut names = Vec::new();
        for &(m, i) in &job.picks {
            let (spec, k, c) = &self.bank.kernels[&m][i];
            train.push(k);
            cross.push(c);
            names.push(format!("{m}:{spec}"));
        }
        let labels: Vec<usize> = self.rows.full.iter().map(|&r| self.ds.labels[r]).collect();
        let truth: Vec<usize> = self.rows.test.iter().map(|&r| self.ds.labels[r]).collect();
        let ens = train_ovr(&train, &labels, job.trainer, &svm_options(self.cfg))?;
        let pred = predict(&ens, &cross)?;
        let (overall, per_class) = accuracy(&pred, &truth, self.ds.num_classes());
        let row = ResultRow {
            table: job.table,
            clustering: self.grouper.label().to_string(),
            method: job.method.clone(),
            trainer: job.trainer.name().to_string(),
            p: job.trainer.p(),
            topk: job.topk.to_string(),
            overall_acc: overall,
            per_class_acc: per_class,
            kernels: names,
            converged: ens.converged(),
        };
        let model = self.cfg.save_models.then(|| self.model(job, ens));
        Ok((row, model))
    }

    fn model(&self, job: &FusionJob, ensemble: OvrEnsemble) -> FusionModel {
        let mut measures: Vec<DmMeasure> = job.picks.iter().map(|(m, _)| m.dm_measure()).collect();
        measures.sort();
        measures.dedup();
        let feature_sets = measures.iter().map(|m| self.features[m].to_model(&self.rows.full)).collect();
        let kernels = job
            .picks
            .iter()
            .map(|&(m, i)| {
                let fs = measures.iter().position(|x| *x == m.dm_measure()).unwrap();
                (fs, self.bank.kernels[&m][i].0)
            })
            .collect();
        FusionModel {
            band_ids: self.ds.band_ids.clone(),
            class_ids: self.ds.class_ids.clone(),
            feature_sets,
            kernels,
            normalize: self.cfg.normalize_kernels,
            center: self.cfg.center_kernels,
            ensemble,
        }
    }

    fn run_all(&self, jobs: &[FusionJob]) -> Result<(Vec<ResultRow>, Vec<FusionModel>)> {
        let out: Vec<(ResultRow, Option<FusionModel>)> = jobs.par_iter().map(|j| self.run(j)).collect::<Result<_>>()?;
        let (rows, models): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        Ok((rows, models.into_iter().flatten().collect()))
    }
}

fn intra_jobs(cfg: &ExperimentConfig, method: MethodId, available: usize) -> Vec<FusionJob> {
    let mut jobs = vec![FusionJob {
        table: Table::Intra,
        method: method.label(),
        picks: vec![(method, 0)],
        trainer: Trainer::Svm,
        topk: TopK::N(1),
    }];
    for &tk in &cfg.intra_topk {
        for &p in &cfg.p_norms {
            jobs.push(FusionJob {
                table: Table::Intra,
                method: method.label(),
                picks: (0..tk.take(available)).map(|i| (method, i)).collect(),
                trainer: Trainer::Mkl { p },
                topk: tk,
            });
        }
    }
    jobs
}

fn inter_jobs(cfg: &ExperimentConfig, rankings: &BTreeMap<MethodId, Vec<RankedKernel>>) -> Vec<FusionJob> {
    let mut jobs = Vec::new();
    for scenario in inter_scenarios() {
        if !scenario.iter().all(|m| rankings.contains_key(m)) {
            continue;
        }
        for &tk in &cfg.inter_topk {
            for &p in &cfg.p_norms {
                let picks = scenario
                    .iter()
                    .flat_map(|&m| (0..tk.take(rankings[&m].len())).map(move |i| (m, i)))
                    .collect();
                jobs.push(FusionJob {
                    table: Table::Inter,
                    method: scenario_label(&scenario),
                    picks,
                    trainer: Trainer::Mkl { p },
                    topk: tk,
                });
            }
        }
    }
    jobs
}

/// Intra-method fusion rows for one method: the top-1 SVM, then every
/// (top-k, p) combination.
pub fn run_intra_method(cfg: &ExperimentConfig, ds: &HsiDataset, split: &Split, run: &GrouperRun, bank: &KernelBank, method: MethodId) -> Result<Vec<ResultRow>> {
    let rows = Rows::new(split);
    let features = run.outcomes.iter().map(|(m, o)| (*m, o.feature_set.clone())).collect();
    let ctx = FusionContext {
        cfg,
        ds,
        rows: &rows,
        bank,
        features: &features,
        grouper: run.grouper,
    };
    let available = bank.kernels.get(&method).map(Vec::len).unwrap_or(0);
    Ok(ctx.run_all(&intra_jobs(cfg, method, available))?.0)
}

/// Inter-method fusion rows: the top-k kernels of each method in a scenario.
pub fn run_inter_method(cfg: &ExperimentConfig, ds: &HsiDataset, split: &Split, run: &GrouperRun, bank: &KernelBank) -> Result<Vec<ResultRow>> {
    let rows = Rows::new(split);
    let features = run.outcomes.iter().map(|(m, o)| (*m, o.feature_set.clone())).collect();
    let ctx = FusionContext {
        cfg,
        ds,
        rows: &rows,
        bank,
        features: &features,
        grouper: run.grouper,
    };
    Ok(ctx.run_all(&inter_jobs(cfg, &run.rankings))?.0)
}

/// Scan, rank, and fuse for one grouper.
pub fn run_grouper(cfg: &ExperimentConfig, ds: &HsiDataset, split: &Split, grouper: GrouperKind) -> Result<GrouperRun> {
    let start = Instant::now();
    let rows = Rows::new(split);
    let mut measures: Vec<DmMeasure> = cfg.methods.iter().map(|m| m.dm_measure()).collect();
    measures.sort();
    measures.dedup();
    let mut outcomes = BTreeMap::new();
    for &measure in &measures {
        outcomes.insert(measure, run_grouper_scan(cfg, ds, split, grouper, measure)?);
    }
    let features: BTreeMap<DmMeasure, FeatureSet> = outcomes.iter().map(|(m, o)| (*m, o.feature_set.clone())).collect();
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let rankings: BTreeMap<MethodId, Vec<RankedKernel>> = methods
        .iter()
        .map(|&m| Ok((m, rank_kernels(cfg, ds, &features[&m.dm_measure()], split, m)?)))
        .collect::<Result<_>>()?;
    let bank = KernelBank::build(cfg, &features, &rankings, &rows)?;
    let ctx = FusionContext {
        cfg,
        ds,
        rows: &rows,
        bank: &bank,
        features: &features,
        grouper,
    };
    let intra: Vec<FusionJob> = methods
        .iter()
        .flat_map(|&m| intra_jobs(cfg, m, rankings[&m].len()))
        .collect();
    let (intra, intra_models) = ctx.run_all(&intra)?;
    let (inter, inter_models) = ctx.run_all(&inter_jobs(cfg, &rankings))?;
    Ok(GrouperRun {
        grouper,
        outcomes,
        rankings,
        intra,
        inter,
        intra_models,
        inter_models,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The full protocol over every configured grouper.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub split: Split,
    pub runs: Vec<GrouperRun>,
    pub seconds: f64,
}

impl ProtocolRun {
    pub fn intra_rows(&self) -> Vec<&ResultRow> {
        self.runs.iter().flat_map(|r| &r.intra).collect()
    }

    pub fn inter_rows(&self) -> Vec<&ResultRow> {
        self.runs.iter().flat_map(|r| &r.inter).collect()
    }

    pub fn converged(&self) -> bool {
        self.runs.iter().flat_map(|r| r.intra.iter().chain(&r.inter)).all(|row| row.converged)
    }
}

pub fn run_protocol(cfg: &ExperimentConfig, ds: &HsiDataset) -> Result<ProtocolRun> {
    cfg.validate()?;
    ds.validate()?;
    let start = Instant::now();
    let split = make_split(ds, &cfg.split_spec())?;
    let mut runs = Vec::new();
    for &g in &cfg.groupers {
        log::info!("running {}", g.label());
        runs.push(run_grouper(cfg, ds, &split, g)?);
    }
    Ok(ProtocolRun {
        split,
        runs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{generate_synthetic, SynthSpec};

    fn small() -> (ExperimentConfig, HsiDataset) {
        let ds = generate_synthetic(&SynthSpec {
            pixels_per_class: 60,
            num_classes: 3,
            group_sizes: vec![6, 8, 6],
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = ExperimentConfig {
            groupers: vec![GrouperKind::CloddC],
            sigmas: vec![0.5, 1.0, 2.0, 4.0],
            save_models: false,
            clodd: crate::pipeline::CloddScan {
                alphas: vec![0.3, 0.6],
                min_size: 3,
                max_size: 10,
                ..Default::default()
            },
            ..ExperimentConfig::default()
        };
        (cfg, ds)
    }

    #[test]
    fn leak_guard_flags_test_rows() {
        let split = Split {
            train: vec![0, 1],
            validation: vec![2],
            test: vec![3, 4],
        };
        let g = LeakGuard::new(5, &split);
        assert!(g.check(&[0, 1, 2], "x").is_ok());
        assert!(g.check(&[0, 4], "x").is_err());
    }

    #[test]
    fn accuracy_counts() {
        let (o, pc) = accuracy(&[1, 2, 2, 1], &[1, 2, 1, 1], 3);
        assert_eq!(o, 75.0);
        assert_eq!(pc[0], 100.0 * 2.0 / 3.0);
        assert_eq!(pc[1], 100.0);
        assert!(pc[2].is_nan());
    }

    #[test]
    fn ranking_is_complete_and_sorted() {
        let (cfg, ds) = small();
        let split = make_split(&ds, &cfg.split_spec()).unwrap();
        let out = run_grouper_scan(&cfg, &ds, &split, GrouperKind::CloddC, DmMeasure::SquaredEuclidean).unwrap();
        assert_eq!(out.candidates.len(), 2);
        let r = rank_kernels(&cfg, &ds, &out.feature_set, &split, MethodId::M1).unwrap();
        assert_eq!(r.len(), 4);
        for w in r.windows(2) {
            assert!(w[0].val_acc > w[1].val_acc || (w[0].val_acc == w[1].val_acc && w[0].spec.sigma < w[1].spec.sigma));
        }
        assert_eq!(r, rank_kernels(&cfg, &ds, &out.feature_set, &split, MethodId::M1).unwrap());
    }

    #[test]
    fn single_setting_scan_returns_it() {
        let (mut cfg, ds) = small();
        cfg.clodd.alphas = vec![0.5];
        let split = make_split(&ds, &cfg.split_spec()).unwrap();
        let out = run_grouper_scan(&cfg, &ds, &split, GrouperKind::CloddC, DmMeasure::Correlation).unwrap();
        assert_eq!(out.setting, "alpha=0.5");
    }

    #[test]
    fn table_shapes_and_top1_identity() {
        let (cfg, ds) = small();
        let split = make_split(&ds, &cfg.split_spec()).unwrap();
        let run = run_grouper(&cfg, &ds, &split, GrouperKind::CloddC).unwrap();
        // top-1 SVM + 4 norms × 3 kernel counts per method.
        assert_eq!(run.intra.len(), 4 * 13);
        // 5 scenarios × 3 top-k × 4 norms.
        assert_eq!(run.inter.len(), 60);
        let rows = Rows::new(&split);
        let features = run.outcomes.iter().map(|(m, o)| (*m, o.feature_set.clone())).collect();
        let bank = KernelBank::build(&cfg, &features, &run.rankings, &rows).unwrap();
        let cfg1 = ExperimentConfig {
            intra_topk: vec![TopK::N(1)],
            p_norms: vec![f64::INFINITY],
            ..cfg.clone()
        };
        let r = run_intra_method(&cfg1, &ds, &split, &run, &bank, MethodId::M2).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].overall_acc, r[1].overall_acc);
        assert!(run.intra.iter().chain(&run.inter).all(|r| (0.0..=100.0).contains(&r.overall_acc)));
    }
}
