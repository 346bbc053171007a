//! Accuracy and group-fairness metrics.
//!
//! All rates are one-vs-rest per target class and per sensitive group.
//! Gaps are reported in points (`100 ×`). EO is the strict variant: max over
//! classes, max over group pairs, max of the TPR and FPR gaps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Definition string embedded in every [`EvalReport`].
pub const EO_DEFINITION: &str =
    "100 * max over classes, max over group pairs, of max(|TPR gap|, |FPR gap|)";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.fp + self.tn)
    }

    pub fn positive_rate(&self) -> Option<f64> {
        ratio(self.tp + self.fp, self.total())
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One-vs-rest confusion counts keyed by `(group, class)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedConfusion {
    pub classes: Vec<u32>,
    pub groups: Vec<u32>,
    counts: BTreeMap<(u32, u32), Counts>,
    group_sizes: BTreeMap<u32, u64>,
    correct: BTreeMap<u32, u64>,
}

impl GroupedConfusion {
    pub fn get(&self, group: u32, class: u32) -> Counts {
        self.counts
            .get(&(group, class))
            .copied()
            .unwrap_or_default()
    }

    pub fn group_size(&self, group: u32) -> u64 {
        self.group_sizes.get(&group).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.group_sizes.values().sum()
    }

    pub fn correct(&self) -> u64 {
        self.correct.values().sum()
    }

    /// Class treated as "positive": label 1 when the task is binary over
    /// `{0, 1}`, otherwise every class is considered.
    fn positive_classes(&self) -> Vec<u32> {
        if self.classes == [0, 1] {
            vec![1]
        } else {
            self.classes.clone()
        }
    }
}

pub fn confusion_by_group(y_true: &[u32], y_pred: &[u32], s: &[u32]) -> Result<GroupedConfusion> {
    if y_true.len() != y_pred.len() || y_true.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            found: if y_pred.len() != y_true.len() {
                y_pred.len()
            } else {
                s.len()
            },
            context: Some("y_true / y_pred / s lengths".into()),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyReport("no samples".into()));
    }
    let classes: BTreeSet<u32> = y_true.iter().chain(y_pred).copied().collect();
    let groups: BTreeSet<u32> = s.iter().copied().collect();
    let mut counts = BTreeMap::new();
    let mut group_sizes = BTreeMap::new();
    let mut correct = BTreeMap::new();
    for ((&t, &p), &g) in y_true.iter().zip(y_pred).zip(s) {
        *group_sizes.entry(g).or_insert(0) += 1;
        if t == p {
            *correct.entry(g).or_insert(0) += 1;
        }
        for &c in &classes {
            let cell: &mut Counts = counts.entry((g, c)).or_default();
            match (t == c, p == c) {
                (true, true) => cell.tp += 1,
                (false, true) => cell.fp += 1,
                (false, false) => cell.tn += 1,
                (true, false) => cell.fn_ += 1,
            }
        }
    }
    Ok(GroupedConfusion {
        classes: classes.into_iter().collect(),
        groups: groups.into_iter().collect(),
        counts,
        group_sizes,
        correct,
    })
}

/// A metric value plus the classes or subgroups left out because a rate was
/// undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub skipped: Vec<String>,
}

fn pairs(groups: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    groups
        .iter()
        .enumerate()
        .flat_map(move |(i, &a)| groups[i + 1..].iter().map(move |&b| (a, b)))
}

/// `100 · |a_num/a_den − b_num/b_den|` by integer cross-multiplication, so
/// gaps such as 1.0 vs 0.8 give exactly 20.0 points.
pub fn gap_points(a: (u64, u64), b: (u64, u64)) -> f64 {
    let lhs = a.0 as u128 * b.1 as u128;
    let rhs = b.0 as u128 * a.1 as u128;
    (100 * lhs.abs_diff(rhs)) as f64 / (a.1 as u128 * b.1 as u128) as f64
}

fn max_gap(gc: &GroupedConfusion, classes: &[u32], with_fpr: bool, name: &str) -> Result<Metric> {
    let mut best: Option<f64> = None;
    let mut skipped = Vec::new();
    for &c in classes {
        let defined = gc.groups.iter().all(|&g| {
            let k = gc.get(g, c);
            k.tp + k.fn_ > 0 && k.fp + k.tn > 0
        });
        if !defined {
            log::warn!("{name}: class {c} skipped, a group lacks positives or negatives");
            skipped.push(format!("class {c}"));
            continue;
        }
        let mut gap: f64 = 0.0;
        for (a, b) in pairs(&gc.groups) {
            let (ka, kb) = (gc.get(a, c), gc.get(b, c));
            gap = gap.max(gap_points((ka.tp, ka.tp + ka.fn_), (kb.tp, kb.tp + kb.fn_)));
            if with_fpr {
                gap = gap.max(gap_points((ka.fp, ka.fp + ka.tn), (kb.fp, kb.fp + kb.tn)));
            }
        }
        best = Some(best.map_or(gap, |b: f64| b.max(gap)));
    }
    match best {
        Some(value) => Ok(Metric { value, skipped }),
        None => Err(Error::EmptyReport(format!(
            "{name}: every class was skipped"
        ))),
    }
}

pub fn equalized_odds(gc: &GroupedConfusion) -> Result<Metric> {
    max_gap(gc, &gc.classes, true, "EO")
}

/// TPR gap on the positive class (label 1 for binary tasks, every class
/// otherwise).
pub fn equal_opportunity(gc: &GroupedConfusion) -> Result<Metric> {
    max_gap(gc, &gc.positive_classes(), false, "EOpp")
}

pub fn demographic_parity(gc: &GroupedConfusion) -> Result<Metric> {
    if let Some(&g) = gc.groups.iter().find(|&&g| gc.group_size(g) == 0) {
        return Err(Error::EmptyReport(format!("group {g} is empty")));
    }
    let mut value: f64 = 0.0;
    for c in gc.positive_classes() {
        for (a, b) in pairs(&gc.groups) {
            let (ka, kb) = (gc.get(a, c), gc.get(b, c));
            value = value.max(gap_points(
                (ka.tp + ka.fp, ka.total()),
                (kb.tp + kb.fp, kb.total()),
            ));
        }
    }
    Ok(Metric {
        value,
        skipped: Vec::new(),
    })
}

/// Mean over `(group, class)` subgroups of `(TPR + TNR) / 2`, in percent.
pub fn balanced_accuracy(gc: &GroupedConfusion) -> Result<Metric> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for &g in &gc.groups {
        for &c in &gc.classes {
            let k = gc.get(g, c);
            match (k.tpr(), k.tnr()) {
                (Some(tpr), Some(tnr)) => {
                    sum += (tpr + tnr) / 2.0;
                    used += 1;
                }
                _ => {
                    log::warn!("BA: subgroup (s={g}, class {c}) skipped, undefined rate");
                    skipped.push(format!("s={g} class {c}"));
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::EmptyReport("BA: every subgroup was skipped".into()));
    }
    Ok(Metric {
        value: 100.0 * sum / used as f64,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub n: u64,
    pub acc: f64,
    /// Per-class one-vs-rest rates, keyed by class label.
    pub tpr: BTreeMap<u32, Option<f64>>,
    pub fpr: BTreeMap<u32, Option<f64>>,
    pub positive_rate: BTreeMap<u32, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub ba: f64,
    pub eo: f64,
    pub dp: f64,
    pub eopp: f64,
    pub groups: BTreeMap<u32, GroupReport>,
    pub eo_definition: String,
    pub warnings: Vec<String>,
}

pub fn evaluate(y_true: &[u32], y_pred: &[u32], s: &[u32]) -> Result<EvalReport> {
    let gc = confusion_by_group(y_true, y_pred, s)?;
    let eo = equalized_odds(&gc)?;
    let eopp = equal_opportunity(&gc)?;
    let dp = demographic_parity(&gc)?;
    let ba = balanced_accuracy(&gc)?;
    let mut warnings = Vec::new();
    for (name, m) in [("eo", &eo), ("eopp", &eopp), ("ba", &ba)] {
        warnings.extend(m.skipped.iter().map(|w| format!("{name}: skipped {w}")));
    }
    let groups = gc
        .groups
        .iter()
        .map(|&g| {
            let n = gc.group_size(g);
            let per = |f: fn(&Counts) -> Option<f64>| {
                gc.classes
                    .iter()
                    .map(|&c| (c, f(&gc.get(g, c))))
                    .collect::<BTreeMap<_, _>>()
            };
            let report = GroupReport {
                n,
                acc: 100.0 * gc.correct.get(&g).copied().unwrap_or(0) as f64 / n as f64,
                tpr: per(Counts::tpr),
                fpr: per(Counts::fpr),
                positive_rate: per(Counts::positive_rate),
            };
            (g, report)
        })
        .collect();
    Ok(EvalReport {
        acc: 100.0 * gc.correct() as f64 / gc.total() as f64,
        ba: ba.value,
        eo: eo.value,
        dp: dp.value,
        eopp: eopp.value,
        groups,
        eo_definition: EO_DEFINITION.to_string(),
        warnings,
    })
}
