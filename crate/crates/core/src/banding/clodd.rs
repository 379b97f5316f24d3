//! CLODD: contiguous block partitioning of an enhanced dissimilarity image.
//!
//! A partition of the `b` display positions into `c` consecutive blocks is
//! scored by squareness (mean between-block minus mean within-block
//! dissimilarity) and edginess (mean intensity jump across each block
//! boundary), mixed by `alpha` and gated by a smoothstep on the smallest block.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BandPartition, GroupingMode, PartitionParams};
use crate::error::{Error, Result};
use crate::proximity::DissimilarityMatrix;
use crate::vat::{ivat_enhance, vat_order, EnhancedDm};

/// Block sizes of a contiguous partition, left to right.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Blocks(pub Vec<usize>);

impl Blocks {
    pub fn num_blocks(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Exclusive end position of every block.
    pub fn ends(&self) -> Vec<usize> {
        self.0
            .iter()
            .scan(0, |acc, &s| {
                *acc += s;
                Some(*acc)
            })
            .collect()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut start = 0;
        self.0
            .iter()
            .map(|&s| {
                let g = (start..start + s).collect();
                start += s;
                g
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Search {
    Exhaustive,
    Annealed,
    /// Exhaustive when the feasible set is small enough, annealed otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloddParams {
    pub alpha: f64,
    pub gamma: f64,
    pub min_size: usize,
    pub max_size: usize,
    /// Inclusive range of candidate group counts; `None` uses [`default_c_range`].
    pub c_range: Option<(usize, usize)>,
    pub search: Search,
    pub seed: u64,
    pub restarts: usize,
    pub proposals_per_band: usize,
    pub cooling: f64,
    /// Initial temperature as a fraction of the objective spread over random
    /// feasible partitions.
    pub initial_temperature: f64,
    /// Largest feasible-set size `Search::Auto` still enumerates.
    pub auto_exhaustive_limit: u64,
}

impl Default for CloddParams {
    fn default() -> Self {
        CloddParams {
            alpha: 0.5,
            gamma: 3.0,
            min_size: 5,
            max_size: 20,
            c_range: None,
            search: Search::Auto,
            seed: 0,
            restarts: 20,
            proposals_per_band: 200,
            cooling: 0.995,
            initial_temperature: 0.1,
            auto_exhaustive_limit: 200_000,
        }
    }
}

impl CloddParams {
    pub fn with_alpha(alpha: f64) -> Self {
        CloddParams {
            alpha,
            ..Default::default()
        }
    }

    /// Size at which the smoothstep gate saturates.
    pub fn gate_threshold(&self) -> f64 {
        self.gamma.max(self.min_size as f64)
    }

    fn resolved_c_range(&self, b: usize) -> (usize, usize) {
        self.c_range
            .unwrap_or_else(|| default_c_range(b, self.min_size, self.max_size))
    }

    /// Feasible group counts for `b` bands.
    pub fn feasible_counts(&self, b: usize) -> Vec<usize> {
        let (lo, hi) = self.resolved_c_range(b);
        (lo.max(1)..=hi)
            .filter(|&c| c * self.min_size <= b && c * self.max_size >= b)
            .collect()
    }

    pub fn validate(&self, b: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if self.min_size == 0 || self.min_size > self.max_size || self.min_size > b {
            return Err(Error::Invalid(format!(
                "size bounds {}..{} invalid for {b} bands",
                self.min_size, self.max_size
            )));
        }
        if self.feasible_counts(b).is_empty() {
            return Err(Error::Infeasible(format!(
                "no group count in {:?} fits {b} bands with sizes {}..={}",
                self.resolved_c_range(b),
                self.min_size,
                self.max_size
            )));
        }
        Ok(())
    }

    fn params_record(&self) -> PartitionParams {
        PartitionParams::Clodd {
            alpha: self.alpha,
            gamma: self.gamma,
            min_size: self.min_size,
            max_size: self.max_size,
        }
    }
}

/// `2..=⌊b/min⌋` intersected with `⌈b/max⌉..=b`; falls back to a single group
/// when that range is empty and one group of `b` bands fits.
pub fn default_c_range(b: usize, min_size: usize, max_size: usize) -> (usize, usize) {
    let lo = 2.max(b.div_ceil(max_size.max(1)));
    let hi = (b / min_size.max(1)).min(b);
    if lo <= hi {
        (lo, hi)
    } else {
        (1, 1)
    }
}

/// Number of feasible partitions over the given group-count range.
pub fn count_feasible(b: usize, min_size: usize, max_size: usize, c_lo: usize, c_hi: usize) -> u128 {
    // ways[n] after k rounds = compositions of n into k parts within bounds.
    let mut ways = vec![0u128; b + 1];
    ways[0] = 1;
    let mut total = 0u128;
    for k in 1..=c_hi.min(b) {
        let mut next = vec![0u128; b + 1];
        for n in 0..=b {
            if ways[n] == 0 {
                continue;
            }
            for s in min_size..=max_size {
                if n + s > b {
                    break;
                }
                next[n + s] = next[n + s].saturating_add(ways[n]);
            }
        }
        ways = next;
        if k >= c_lo {
            total = total.saturating_add(ways[b]);
        }
    }
    total
}

/// Cubic smoothstep of `x / t` clamped to `[0, 1]`.
pub fn smoothstep_gate(x: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let u = (x / t).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Mean between-group minus mean within-group dissimilarity. Groups are
/// arbitrary disjoint index sets in `de`'s index space.
pub fn squareness(groups: &[Vec<usize>], de: &Array2<f64>) -> f64 {
    let b = de.nrows();
    let mut member = vec![usize::MAX; b];
    for (g, idx) in groups.iter().enumerate() {
        for &i in idx {
            member[i] = g;
        }
    }
    let (mut between, mut within) = (0.0, 0.0);
    let (mut between_den, mut within_den) = (0.0, 0.0);
    for g in groups {
        let bi = g.len() as f64;
        between_den += (b as f64 - bi) * bi;
        within_den += bi * bi - bi;
    }
    for s in 0..b {
        for t in 0..b {
            if s == t || member[s] == usize::MAX || member[t] == usize::MAX {
                continue;
            }
            if member[s] == member[t] {
                within += de[[s, t]];
            } else {
                between += de[[s, t]];
            }
        }
    }
    let first = if groups.len() < 2 || between_den == 0.0 {
        0.0
    } else {
        between / between_den
    };
    let second = if within_den == 0.0 { 0.0 } else { within / within_den };
    first - second
}

/// Mean boundary contrast. For the boundary after block `j` (last column `a`),
/// sums `|D(i,a) − D(i,a+1)|` over the rows of blocks `j` and `j+1` and divides
/// by their combined size.
pub fn edginess(blocks: &Blocks, de: &Array2<f64>) -> f64 {
    let c = blocks.num_blocks();
    if c < 2 {
        return 0.0;
    }
    let ends = blocks.ends();
    let mut acc = 0.0;
    for j in 0..c - 1 {
        let start = if j == 0 { 0 } else { ends[j - 1] };
        let a = ends[j] - 1;
        let stop = ends[j + 1];
        let sum: f64 = (start..stop).map(|i| (de[[i, a]] - de[[i, a + 1]]).abs()).sum();
        acc += sum / (blocks.0[j] + blocks.0[j + 1]) as f64;
    }
    acc / (c - 1) as f64
}

/// `s(min_i b_i, t) · (α·E_sq + (1−α)·E_edge)` with `t = max(γ, min_size)`.
pub fn clodd_objective(blocks: &Blocks, de: &Array2<f64>, p: &CloddParams) -> f64 {
    let smallest = blocks.0.iter().copied().min().unwrap_or(0) as f64;
    let gate = smoothstep_gate(smallest, p.gate_threshold());
    if gate == 0.0 {
        return 0.0;
    }
    gate * (p.alpha * squareness(&blocks.groups(), de) + (1.0 - p.alpha) * edginess(blocks, de))
}

/// Prefix-sum evaluator scoring a contiguous partition in `O(c)`.
#[derive(Debug, Clone)]
pub struct CloddScorer {
    b: usize,
    /// `block[(i, j)]` = sum of `de[s,t]` for `s < i`, `t < j`; `(b+1)²` entries.
    block: Vec<f64>,
    /// `edge[a*(b+1) + i]` = sum over rows `s < i` of `|de[s,a] − de[s,a+1]|`.
    edge: Vec<f64>,
    total: f64,
}

impl CloddScorer {
    pub fn new(de: &Array2<f64>) -> Self {
        let b = de.nrows();
        let w = b + 1;
        let mut block = vec![0.0; w * w];
        for i in 0..b {
            let mut row = 0.0;
            for j in 0..b {
                row += de[[i, j]];
                block[(i + 1) * w + j + 1] = block[i * w + j + 1] + row;
            }
        }
        let mut edge = vec![0.0; b.saturating_sub(1) * w];
        for a in 0..b.saturating_sub(1) {
            for i in 0..b {
                edge[a * w + i + 1] = edge[a * w + i] + (de[[i, a]] - de[[i, a + 1]]).abs();
            }
        }
        CloddScorer {
            b,
            total: block[b * w + b],
            block,
            edge,
        }
    }

    pub fn size(&self) -> usize {
        self.b
    }

    fn square_sum(&self, lo: usize, hi: usize) -> f64 {
        let w = self.b + 1;
        self.block[hi * w + hi] - self.block[lo * w + hi] - self.block[hi * w + lo] + self.block[lo * w + lo]
    }

    pub fn squareness(&self, sizes: &[usize]) -> f64 {
        let b = self.b as f64;
        let (mut within, mut between_den, mut within_den) = (0.0, 0.0, 0.0);
        let mut start = 0;
        for &s in sizes {
            within += self.square_sum(start, start + s);
            let bi = s as f64;
            between_den += (b - bi) * bi;
            within_den += bi * bi - bi;
            start += s;
        }
        let first = if sizes.len() < 2 {
            0.0
        } else {
            (self.total - within) / between_den
        };
        let second = if within_den == 0.0 { 0.0 } else { within / within_den };
        first - second
    }

    pub fn edginess(&self, sizes: &[usize]) -> f64 {
        let c = sizes.len();
        if c < 2 {
            return 0.0;
        }
        let w = self.b + 1;
        let mut acc = 0.0;
        let mut start = 0;
        for j in 0..c - 1 {
            let a = start + sizes[j] - 1;
            let stop = start + sizes[j] + sizes[j + 1];
            let sum = self.edge[a * w + stop] - self.edge[a * w + start];
            acc += sum / (sizes[j] + sizes[j + 1]) as f64;
            start += sizes[j];
        }
        acc / (c - 1) as f64
    }

    pub fn objective(&self, sizes: &[usize], alpha: f64, gate_threshold: f64) -> f64 {
        let smallest = sizes.iter().copied().min().unwrap_or(0) as f64;
        let gate = smoothstep_gate(smallest, gate_threshold);
        if gate == 0.0 {
            return 0.0;
        }
        gate * (alpha * self.squareness(sizes) + (1.0 - alpha) * self.edginess(sizes))
    }
}

/// Search context shared by the exhaustive and annealed strategies.
struct Problem<'a> {
    scorer: &'a CloddScorer,
    alpha: f64,
    gate: f64,
    b: usize,
    min: usize,
    max: usize,
    c_lo: usize,
    c_hi: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    sizes: Vec<usize>,
    score: f64,
}

impl Candidate {
    /// Higher score wins; equal scores go to the smaller boundary vector.
    fn beats(&self, other: &Candidate) -> bool {
        self.score > other.score || (self.score == other.score && self.sizes < other.sizes)
    }
}

impl Problem<'_> {
    fn score(&self, sizes: &[usize]) -> f64 {
        self.scorer.objective(sizes, self.alpha, self.gate)
    }

    fn candidate(&self, sizes: Vec<usize>) -> Candidate {
        let score = self.score(&sizes);
        Candidate { sizes, score }
    }

    fn feasible_counts(&self) -> Vec<usize> {
        (self.c_lo..=self.c_hi)
            .filter(|&c| c * self.min <= self.b && c * self.max >= self.b)
            .collect()
    }

    fn exhaustive(&self) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        let mut sizes = Vec::new();
        self.enumerate(self.b, &mut sizes, &mut best);
        best
    }

    fn enumerate(&self, remaining: usize, sizes: &mut Vec<usize>, best: &mut Option<Candidate>) {
        if remaining == 0 {
            if sizes.len() >= self.c_lo {
                let cand = self.candidate(sizes.clone());
                if best.as_ref().is_none_or(|b| cand.beats(b)) {
                    *best = Some(cand);
                }
            }
            return;
        }
        if sizes.len() >= self.c_hi || remaining < self.min {
            return;
        }
        // Remaining bands must fit in the remaining group slots.
        if sizes.len() + remaining.div_ceil(self.max) > self.c_hi {
            return;
        }
        for s in self.min..=self.max.min(remaining) {
            sizes.push(s);
            self.enumerate(remaining - s, sizes, best);
            sizes.pop();
        }
    }

    fn random_feasible(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let counts = self.feasible_counts();
        let c = counts[rng.random_range(0..counts.len())];
        let mut sizes = vec![self.min; c];
        let mut left = self.b - c * self.min;
        while left > 0 {
            let open: Vec<usize> = (0..c).filter(|&g| sizes[g] < self.max).collect();
            sizes[open[rng.random_range(0..open.len())]] += 1;
            left -= 1;
        }
        sizes
    }

    fn propose(&self, sizes: &[usize], rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        let c = sizes.len();
        match rng.random_range(0..3u8) {
            0 => {
                if c < 2 {
                    return None;
                }
                let k = rng.random_range(0..c - 1);
                let mut next = sizes.to_vec();
                if rng.random_bool(0.5) {
                    next[k] += 1;
                    next[k + 1] = next[k + 1].checked_sub(1)?;
                } else {
                    next[k] = next[k].checked_sub(1)?;
                    next[k + 1] += 1;
                }
                let ok = [next[k], next[k + 1]].iter().all(|&s| s >= self.min && s <= self.max);
                ok.then_some(next)
            }
            1 => {
                if c + 1 > self.c_hi {
                    return None;
                }
                let splittable: Vec<usize> = (0..c).filter(|&g| sizes[g] >= 2 * self.min).collect();
                if splittable.is_empty() {
                    return None;
                }
                let g = splittable[rng.random_range(0..splittable.len())];
                let left = rng.random_range(self.min..=sizes[g] - self.min);
                let mut next = sizes[..g].to_vec();
                next.push(left);
                next.push(sizes[g] - left);
                next.extend_from_slice(&sizes[g + 1..]);
                Some(next)
            }
            _ => {
                if c < 2 || c - 1 < self.c_lo {
                    return None;
                }
                let mergeable: Vec<usize> = (0..c - 1)
                    .filter(|&k| sizes[k] + sizes[k + 1] <= self.max)
                    .collect();
                if mergeable.is_empty() {
                    return None;
                }
                let k = mergeable[rng.random_range(0..mergeable.len())];
                let mut next = sizes[..k].to_vec();
                next.push(sizes[k] + sizes[k + 1]);
                next.extend_from_slice(&sizes[k + 2..]);
                Some(next)
            }
        }
    }

    /// Every feasible single-move neighbour, in a fixed order.
    fn neighbours(&self, sizes: &[usize]) -> Vec<Vec<usize>> {
        let c = sizes.len();
        let mut out = Vec::new();
        for k in 0..c.saturating_sub(1) {
            for delta in [-1i64, 1] {
                let l = sizes[k] as i64 + delta;
                let r = sizes[k + 1] as i64 - delta;
                let fits = |s: i64| s >= self.min as i64 && s <= self.max as i64;
                if fits(l) && fits(r) {
                    let mut next = sizes.to_vec();
                    next[k] = l as usize;
                    next[k + 1] = r as usize;
                    out.push(next);
                }
            }
        }
        if c < self.c_hi {
            for g in 0..c {
                if sizes[g] >= 2 * self.min {
                    for left in self.min..=sizes[g] - self.min {
                        let mut next = sizes[..g].to_vec();
                        next.push(left);
                        next.push(sizes[g] - left);
                        next.extend_from_slice(&sizes[g + 1..]);
                        out.push(next);
                    }
                }
            }
        }
        if c >= 2 && c > self.c_lo {
            for k in 0..c - 1 {
                if sizes[k] + sizes[k + 1] <= self.max {
                    let mut next = sizes[..k].to_vec();
                    next.push(sizes[k] + sizes[k + 1]);
                    next.extend_from_slice(&sizes[k + 2..]);
                    out.push(next);
                }
            }
        }
        out
    }

    fn polish(&self, mut cur: Candidate) -> Candidate {
        loop {
            let mut best_move: Option<Candidate> = None;
            for n in self.neighbours(&cur.sizes) {
                let cand = self.candidate(n);
                if cand.score > cur.score && best_move.as_ref().is_none_or(|b| cand.beats(b)) {
                    best_move = Some(cand);
                }
            }
            match best_move {
                Some(m) => cur = m,
                None => return cur,
            }
        }
    }

    fn anneal(&self, p: &CloddParams) -> Candidate {
        let mut probe = ChaCha8Rng::seed_from_u64(p.seed);
        probe.set_stream(u64::MAX);
        let samples: Vec<f64> = (0..64).map(|_| self.score(&self.random_feasible(&mut probe))).collect();
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let t0 = (p.initial_temperature * (hi - lo)).max(1e-12);
        let steps = p.proposals_per_band * self.b;

        let runs: Vec<Candidate> = (0..p.restarts.max(1))
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
                rng.set_stream(r as u64);
                let mut cur = self.candidate(self.random_feasible(&mut rng));
                let mut best = cur.clone();
                let mut temp = t0;
                for _ in 0..steps {
                    if let Some(next) = self.propose(&cur.sizes, &mut rng) {
                        let cand = self.candidate(next);
                        let delta = cand.score - cur.score;
                        if delta >= 0.0 || rng.random::<f64>() < (delta / temp).exp() {
                            cur = cand;
                            if cur.beats(&best) {
                                best = cur.clone();
                            }
                        }
                    }
                    temp *= p.cooling;
                }
                self.polish(best)
            })
            .collect();
        runs.into_iter()
            .reduce(|a, b| if b.beats(&a) { b } else { a })
            .expect("at least one restart")
    }
}

/// Best size-feasible contiguous partition of `de`'s index space.
///
/// Groups of the returned partition are mapped through `de.ordering`, so they
/// name dataset columns rather than display positions.
pub fn clodd_partition(de: &EnhancedDm, p: &CloddParams) -> Result<BandPartition> {
    let b = de.size();
    p.validate(b)?;
    let counts = p.feasible_counts(b);
    let scorer = CloddScorer::new(&de.values);
    let problem = Problem {
        scorer: &scorer,
        alpha: p.alpha,
        gate: p.gate_threshold(),
        b,
        min: p.min_size,
        max: p.max_size,
        c_lo: counts[0],
        c_hi: *counts.last().unwrap(),
    };
    let exhaustive = match p.search {
        Search::Exhaustive => true,
        Search::Annealed => false,
        Search::Auto => {
            count_feasible(b, p.min_size, p.max_size, problem.c_lo, problem.c_hi) <= p.auto_exhaustive_limit as u128
        }
    };
    let best = if exhaustive {
        problem
            .exhaustive()
            .ok_or_else(|| Error::Infeasible(format!("no partition of {b} bands fits the size bounds")))?
    } else {
        problem.anneal(p)
    };

    let groups = Blocks(best.sizes)
        .groups()
        .into_iter()
        .map(|g| {
            let mut mapped: Vec<usize> = g.into_iter().map(|pos| de.ordering[pos]).collect();
            mapped.sort_unstable();
            mapped
        })
        .collect();
    Ok(BandPartition {
        groups,
        mode: GroupingMode::Contiguous,
        ordering: de.ordering.clone(),
        objective_value: Some(best.score),
        params: p.params_record(),
        feasible: true,
    })
}

/// Contiguous grouping: iVAT on the unordered matrix, then CLODD.
pub fn clodd_c(dm: &DissimilarityMatrix, p: &CloddParams) -> Result<BandPartition> {
    let de = ivat_enhance(dm)?;
    let mut part = clodd_partition(&de, p)?;
    part.mode = GroupingMode::Contiguous;
    Ok(part)
}

/// Non-contiguous grouping: VAT ordering, iVAT, then CLODD on the ordered image.
pub fn clodd_n(dm: &DissimilarityMatrix, p: &CloddParams) -> Result<BandPartition> {
    let ordered = vat_order(dm)?.ordered_dm;
    let de = ivat_enhance(&ordered)?;
    let mut part = clodd_partition(&de, p)?;
    part.mode = GroupingMode::Noncontiguous;
    Ok(part)
}
