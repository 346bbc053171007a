//! Hard-sample mining for one sampled `(target, sensitive)` pair.
//!
//! Given the epoch ground set and the current embeddings:
//!
//! 1. sample a pair `(t, s)` whose anchor cell `T_t ∩ S_s`, positive pool
//!    `T_t ∩ S̄_s` and negative pool `(V ∖ T_t) ∩ S_s` are all non-empty;
//! 2. pick diverse anchors by greedy Log-Determinant maximization;
//! 3. pick hard positives by maximizing the facility-location conditional
//!    gain `H_f(· | anchors)`;
//! 4. pick hard negatives by maximizing the facility-location mutual
//!    information `I_f(· ; anchors)`.
//!
//! Selection runs on the temperature-free, unit-diagonal view of the cosine
//! kernel, which makes the chosen ids invariant to a positive rescaling of
//! the kernel.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greedy::{lazy_greedy_max, Selection, SelectionProblem};
use crate::kernel::{cosine_kernel, EmbeddingMatrix, SimilarityKernel};
use crate::pool::{AttributeIndex, EpochGroundSet};
use crate::submodular::{
    union, BaseFunction, ConditionalGainFl, LogDetGain, MutualInfoFl, DEFAULT_EPSILON,
};

pub const DEFAULT_MAX_RETRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinerKind {
    /// Submodular anchors / hard positives / hard negatives.
    Shasam,
    /// Uniform draws from the same three pools.
    Random,
}

impl std::str::FromStr for MinerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shasam" => Ok(MinerKind::Shasam),
            "random" => Ok(MinerKind::Random),
            other => Err(Error::invalid(format!("unknown miner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    pub k: usize,
    pub epsilon: f64,
    pub miner: MinerKind,
    pub max_retries: usize,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            k: 16,
            epsilon: DEFAULT_EPSILON,
            miner: MinerKind::Shasam,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedBatch {
    /// `(target label, sensitive label)` of the anchors.
    pub pair: (u32, u32),
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Budgets were shrunk because a pool held fewer than `k` items.
    pub short: bool,
    /// Anchor Schur complements collapsed to the regularizer scale.
    pub degenerate_anchors: bool,
}

impl MinedBatch {
    pub fn len(&self) -> usize {
        self.anchors.len() + self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ids in anchor, positive, negative order.
    pub fn all_ids(&self) -> Vec<usize> {
        let mut v = self.anchors.clone();
        v.extend(&self.positives);
        v.extend(&self.negatives);
        v
    }

    /// Checks pool membership, disjointness and balance against `index`.
    pub fn validate(&self, index: &AttributeIndex, k: usize) -> Result<()> {
        let (t, s) = self.pair;
        let cell: HashSet<usize> = index.cell(t, s).iter().copied().collect();
        let pos: HashSet<usize> = index.positives(t, s).into_iter().collect();
        let neg: HashSet<usize> = index.negatives(t, s).into_iter().collect();
        let fail = |m: String| Err(Error::invalid(format!("mined batch invariant: {m}")));
        if let Some(a) = self.anchors.iter().find(|a| !cell.contains(a)) {
            return fail(format!("anchor {a} outside T_{t} ∩ S_{s}"));
        }
        if let Some(p) = self.positives.iter().find(|p| !pos.contains(p)) {
            return fail(format!("positive {p} outside T_{t} ∩ S̄_{s}"));
        }
        if let Some(n) = self.negatives.iter().find(|n| !neg.contains(n)) {
            return fail(format!("negative {n} outside (V∖T_{t}) ∩ S_{s}"));
        }
        let all = self.all_ids();
        if all.iter().collect::<HashSet<_>>().len() != all.len() {
            return fail("duplicate ids across or within roles".into());
        }
        let (na, np, nn) = (
            self.anchors.len(),
            self.positives.len(),
            self.negatives.len(),
        );
        if na != np || np != nn || na == 0 {
            return fail(format!("unbalanced sizes {na}/{np}/{nn}"));
        }
        if !self.short && na != k {
            return fail(format!(
                "size {na} differs from budget {k} without short flag"
            ));
        }
        if self.short && na >= k {
            return fail("short flag set on a full batch".into());
        }
        Ok(())
    }
}

impl AttributeIndex {
    /// Keeps only ids present in `ground` (which must be sorted).
    pub fn restrict(&self, ground: &[usize]) -> AttributeIndex {
        let mut out = AttributeIndex::default();
        for (&(t, s), ids) in &self.by_pair {
            let kept: Vec<usize> = ids
                .iter()
                .copied()
                .filter(|id| ground.binary_search(id).is_ok())
                .collect();
            if !kept.is_empty() {
                out.by_pair.insert((t, s), kept);
                out.targets.insert(t);
                out.sensitives.insert(s);
            }
        }
        out
    }

    fn pair_is_valid(&self, t: u32, s: u32) -> bool {
        !self.cell(t, s).is_empty()
            && self.by_pair.iter().any(|(&(ct, cs), _)| ct == t && cs != s)
            && self.by_pair.iter().any(|(&(ct, cs), _)| ct != t && cs == s)
    }
}

/// Draws target and sensitive labels uniformly, retrying until the anchor,
/// positive and negative pools are all non-empty within `ground`.
pub fn sample_pair<R: Rng + ?Sized>(
    index: &AttributeIndex,
    ground: &EpochGroundSet,
    rng: &mut R,
    max_retries: usize,
) -> Result<(u32, u32)> {
    let local = index.restrict(&ground.ids);
    sample_pair_local(&local, rng, max_retries)
}

fn sample_pair_local<R: Rng + ?Sized>(
    local: &AttributeIndex,
    rng: &mut R,
    max_retries: usize,
) -> Result<(u32, u32)> {
    let any_valid = local
        .by_pair
        .keys()
        .any(|&(t, s)| local.pair_is_valid(t, s));
    if !any_valid {
        return Err(Error::NoValidPair(0));
    }
    let targets: Vec<u32> = local.targets.iter().copied().collect();
    let sensitives: Vec<u32> = local.sensitives.iter().copied().collect();
    for _ in 0..max_retries {
        let t = *targets.choose(rng).expect("non-empty");
        let s = *sensitives.choose(rng).expect("non-empty");
        if local.pair_is_valid(t, s) {
            return Ok((t, s));
        }
    }
    Err(Error::NoValidPair(max_retries))
}

/// Unit-diagonal, temperature-free view of a kernel.
pub fn unit_view(kernel: &SimilarityKernel) -> SimilarityKernel {
    if kernel.is_empty() {
        return kernel.clone();
    }
    let d = kernel.get(0, 0);
    kernel.map(|v| v / d)
}

/// Greedy Log-Determinant anchors from `pool` (kernel indices).
pub fn select_anchors(
    pool: &[usize],
    kernel: &SimilarityKernel,
    k: usize,
    epsilon: f64,
) -> Result<Selection> {
    let mut p = SelectionProblem::new(LogDetGain::new(kernel, epsilon), pool.to_vec(), k)?;
    lazy_greedy_max(&mut p)
}

/// True when some anchor's Schur complement is within 10ε of zero, i.e. the
/// regularizer rather than the data drove its gain.
pub fn anchors_degenerate(sel: &Selection, epsilon: f64) -> bool {
    sel.gains.iter().skip(1).any(|g| g.exp() <= 10.0 * epsilon)
}

/// Hard positives maximizing `H_f(· | anchors)`, facility location over
/// `pool ∪ anchors`.
pub fn select_hard_positives(
    pool: &[usize],
    anchors: &[usize],
    kernel: &SimilarityKernel,
    k: usize,
) -> Result<Selection> {
    if anchors.is_empty() {
        return Err(Error::invalid("hard positives need a non-empty anchor set"));
    }
    let universe = union(&[pool, anchors]);
    let mut p = SelectionProblem::new(
        ConditionalGainFl::new(kernel, universe, anchors),
        pool.to_vec(),
        k,
    )?;
    lazy_greedy_max(&mut p)
}

/// Hard negatives maximizing `I_f(· ; anchors)`, facility location over
/// `pool ∪ anchors`. Gains are computed on the kernel shifted to be
/// nonnegative; a constant shift leaves every greedy argmax unchanged and
/// makes the objective submodular, so lazy evaluation is exact.
pub fn select_hard_negatives(
    pool: &[usize],
    anchors: &[usize],
    kernel: &SimilarityKernel,
    k: usize,
) -> Result<Selection> {
    if anchors.is_empty() {
        return Err(Error::invalid("hard negatives need a non-empty anchor set"));
    }
    let universe = union(&[pool, anchors]);
    let min = kernel.entries().min();
    let shifted;
    let kern = if min < 0.0 {
        shifted = kernel.map(|v| v - min);
        &shifted
    } else {
        kernel
    };
    let mut p =
        SelectionProblem::new(MutualInfoFl::new(kern, universe, anchors), pool.to_vec(), k)?;
    lazy_greedy_max(&mut p)
}

/// Mines one balanced batch. `embeddings` has one row per id of `ground`,
/// in the same order.
pub fn mine<R: Rng + ?Sized>(
    index: &AttributeIndex,
    ground: &EpochGroundSet,
    embeddings: &EmbeddingMatrix,
    config: &MineConfig,
    rng: &mut R,
) -> Result<MinedBatch> {
    if config.k == 0 {
        return Err(Error::invalid("budget k must be at least 1"));
    }
    if embeddings.len() != ground.ids.len() {
        return Err(Error::DimensionMismatch {
            expected: ground.ids.len(),
            found: embeddings.len(),
            context: Some("embedding rows vs ground set".into()),
        });
    }
    let local = index.restrict(&ground.ids);
    let (t, s) = sample_pair_local(&local, rng, config.max_retries)?;
    let to_local = |ids: &[usize]| -> Vec<usize> {
        ids.iter()
            .map(|id| ground.ids.binary_search(id).expect("restricted to ground"))
            .collect()
    };
    let cell = to_local(local.cell(t, s));
    let pos = to_local(&local.positives(t, s));
    let neg = to_local(&local.negatives(t, s));
    let budget = config.k.min(cell.len()).min(pos.len()).min(neg.len());
    let short = budget < config.k;

    let (a, p, n, degenerate) = match config.miner {
        MinerKind::Random => {
            let draw = |pool: &[usize], rng: &mut R| -> Vec<usize> {
                rand::seq::index::sample(rng, pool.len(), budget)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            };
            let a = draw(&cell, rng);
            let p = draw(&pos, rng);
            let n = draw(&neg, rng);
            (a, p, n, false)
        }
        MinerKind::Shasam => {
            let kernel = unit_view(&cosine_kernel(embeddings, 1.0)?);
            let anchors = select_anchors(&cell, &kernel, budget, config.epsilon)?;
            let degenerate = anchors_degenerate(&anchors, config.epsilon);
            let positives = select_hard_positives(&pos, &anchors.ids, &kernel, budget)?;
            let negatives = select_hard_negatives(&neg, &anchors.ids, &kernel, budget)?;
            (anchors.ids, positives.ids, negatives.ids, degenerate)
        }
    };
    let back = |v: Vec<usize>| v.into_iter().map(|i| ground.ids[i]).collect::<Vec<_>>();
    Ok(MinedBatch {
        pair: (t, s),
        anchors: back(a),
        positives: back(p),
        negatives: back(n),
        short,
        degenerate_anchors: degenerate,
    })
}

/// Summary statistics of a selection against its anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    /// `logdet(S_A + εI)` of the anchors.
    pub anchor_logdet: f64,
    /// Mean over positives of their max similarity to any anchor.
    pub positive_max_sim: f64,
    /// Mean over negatives of their max similarity to any anchor.
    pub negative_max_sim: f64,
}

/// Mean over `set` of `max_{a ∈ anchors} S(x, a)`.
pub fn mean_max_similarity(kernel: &SimilarityKernel, set: &[usize], anchors: &[usize]) -> f64 {
    if set.is_empty() || anchors.is_empty() {
        return f64::NAN;
    }
    set.iter()
        .map(|&x| {
            anchors
                .iter()
                .map(|&a| kernel.get(x, a))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / set.len() as f64
}

/// Statistics of a batch given in kernel indices.
pub fn selection_stats(
    kernel: &SimilarityKernel,
    anchors: &[usize],
    positives: &[usize],
    negatives: &[usize],
    epsilon: f64,
) -> Result<SelectionStats> {
    let f = BaseFunction::log_det(kernel, anchors.to_vec(), epsilon)?;
    Ok(SelectionStats {
        anchor_logdet: f.eval(anchors)?,
        positive_max_sim: mean_max_similarity(kernel, positives, anchors),
        negative_max_sim: mean_max_similarity(kernel, negatives, anchors),
    })
}

/// Random Fourier features used to embed 2D demo points before mining.
pub const DEMO_LIFT_FEATURES: usize = 256;
/// Bandwidth of the demo lift, below both default cluster scales.
pub const DEMO_LIFT_BANDWIDTH: f64 = 0.2;

/// Mining outcome for one fixed pair next to `draws` uniform random batches
/// from the same pools. Every set is given in pool ids, and `kernel` is
/// indexed by pool id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineDemo {
    pub batch: MinedBatch,
    pub stats: SelectionStats,
    pub random: Vec<SelectionStats>,
    pub random_mean: SelectionStats,
    /// Selected negatives are more similar to the anchors than the random mean.
    pub negatives_harder: bool,
    /// Selected positives are less similar to the anchors than the random mean.
    pub positives_harder: bool,
    /// Anchor LogDet exceeds every random draw.
    pub anchors_more_diverse: bool,
}

pub fn mine_demo<R: Rng + ?Sized>(
    index: &AttributeIndex,
    kernel: &SimilarityKernel,
    pair: (u32, u32),
    config: &MineConfig,
    draws: usize,
    rng: &mut R,
) -> Result<MineDemo> {
    let (t, s) = pair;
    let cell = index.cell(t, s).to_vec();
    let pos = index.positives(t, s);
    let neg = index.negatives(t, s);
    if cell.is_empty() || pos.is_empty() || neg.is_empty() {
        return Err(Error::NoValidPair(index.total()));
    }
    let budget = config.k.min(cell.len()).min(pos.len()).min(neg.len());
    let unit = unit_view(kernel);
    let draw = |rng: &mut R| {
        let mut pick = |pool: &[usize]| -> Vec<usize> {
            rand::seq::index::sample(rng, pool.len(), budget)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        };
        (pick(&cell), pick(&pos), pick(&neg))
    };
    let (anchors, positives, negatives, degenerate) = match config.miner {
        MinerKind::Random => {
            let (a, p, n) = draw(rng);
            (a, p, n, false)
        }
        MinerKind::Shasam => {
            let a = select_anchors(&cell, &unit, budget, config.epsilon)?;
            let degenerate = anchors_degenerate(&a, config.epsilon);
            let p = select_hard_positives(&pos, &a.ids, &unit, budget)?.ids;
            let n = select_hard_negatives(&neg, &a.ids, &unit, budget)?.ids;
            (a.ids, p, n, degenerate)
        }
    };
    let stats = selection_stats(&unit, &anchors, &positives, &negatives, config.epsilon)?;
    let mut random = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (a, p, n) = draw(rng);
        random.push(selection_stats(&unit, &a, &p, &n, config.epsilon)?);
    }
    let mean =
        |f: fn(&SelectionStats) -> f64| random.iter().map(f).sum::<f64>() / draws.max(1) as f64;
    let random_mean = SelectionStats {
        anchor_logdet: mean(|s| s.anchor_logdet),
        positive_max_sim: mean(|s| s.positive_max_sim),
        negative_max_sim: mean(|s| s.negative_max_sim),
    };
    Ok(MineDemo {
        negatives_harder: stats.negative_max_sim > random_mean.negative_max_sim,
        positives_harder: stats.positive_max_sim < random_mean.positive_max_sim,
        anchors_more_diverse: random.iter().all(|r| stats.anchor_logdet > r.anchor_logdet),
        batch: MinedBatch {
            pair,
            anchors,
            positives,
            negatives,
            short: budget < config.k,
            degenerate_anchors: degenerate,
        },
        stats,
        random,
        random_mean,
    })
}
