//! Cardinality-constrained greedy maximization, naive and lazy.
//!
//! Both variants pick, at every step, the candidate with the largest
//! marginal gain, breaking ties towards the smallest id. The lazy variant
//! keeps stale gains in a max-heap keyed by `(gain, -id)` and only refreshes
//! the top; for submodular objectives stale gains are upper bounds, so its
//! output is identical to the naive one.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// An incremental set function: the current selection lives inside the
/// implementor, `gain` scores a candidate against it and `commit` adds one.
pub trait Objective {
    fn gain(&self, v: usize) -> Result<f64>;
    fn commit(&mut self, v: usize) -> Result<()>;
}

impl<O: Objective + ?Sized> Objective for &mut O {
    fn gain(&self, v: usize) -> Result<f64> {
        (**self).gain(v)
    }
    fn commit(&mut self, v: usize) -> Result<()> {
        (**self).commit(v)
    }
}

/// Linear objective `f(A) = Σ_{a∈A} w_a`.
#[derive(Debug, Clone)]
pub struct Modular(pub Vec<f64>);

impl Objective for Modular {
    fn gain(&self, v: usize) -> Result<f64> {
        self.0.get(v).copied().ok_or(Error::IndexOutOfRange {
            index: v,
            len: self.0.len(),
        })
    }

    fn commit(&mut self, _v: usize) -> Result<()> {
        Ok(())
    }
}

/// Adapts a plain set function to [`Objective`] by differencing
/// evaluations. Slow, but independent of any incremental bookkeeping, which
/// is what the oracles want.
pub struct SetFunction<F> {
    eval: F,
    current: Vec<usize>,
    value: f64,
}

impl<F> SetFunction<F>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    pub fn new(eval: F) -> Result<Self> {
        let value = eval(&[])?;
        Ok(SetFunction {
            eval,
            current: Vec::new(),
            value,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

impl<F> Objective for SetFunction<F>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    fn gain(&self, v: usize) -> Result<f64> {
        let mut s = self.current.clone();
        s.push(v);
        Ok((self.eval)(&s)? - self.value)
    }

    fn commit(&mut self, v: usize) -> Result<()> {
        self.current.push(v);
        self.value = (self.eval)(&self.current)?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct SelectionProblem<O> {
    pub objective: O,
    pub candidates: Vec<usize>,
    pub budget: usize,
}

impl<O: Objective> SelectionProblem<O> {
    pub fn new(objective: O, candidates: Vec<usize>, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if candidates.is_empty() {
            return Err(Error::invalid("no candidates to select from"));
        }
        let mut seen = candidates.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate candidate ids"));
        }
        Ok(SelectionProblem {
            objective,
            candidates,
            budget,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Ids in selection order.
    pub ids: Vec<usize>,
    /// Marginal gain of each pick at the time it was picked.
    pub gains: Vec<f64>,
    /// Number of `gain` calls made.
    pub evaluations: usize,
    /// The candidate pool was smaller than the budget.
    pub short: bool,
}

impl Selection {
    pub fn total_gain(&self) -> f64 {
        self.gains.iter().sum()
    }
}

/// `a` beats `b`: larger gain, then smaller id.
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.1 < b.1,
    }
}

pub fn greedy_max<O: Objective + Sync>(p: &mut SelectionProblem<O>) -> Result<Selection> {
    let target = p.budget.min(p.candidates.len());
    let mut remaining = p.candidates.clone();
    let mut out = Selection {
        ids: Vec::with_capacity(target),
        gains: Vec::with_capacity(target),
        evaluations: 0,
        short: p.candidates.len() < p.budget,
    };
    while out.ids.len() < target {
        let obj = &p.objective;
        let gains: Vec<f64> = remaining
            .par_iter()
            .map(|&v| obj.gain(v))
            .collect::<Result<_>>()?;
        out.evaluations += gains.len();
        let mut best = 0;
        for i in 1..remaining.len() {
            if better((gains[i], remaining[i]), (gains[best], remaining[best])) {
                best = i;
            }
        }
        let v = remaining.swap_remove(best);
        p.objective.commit(v)?;
        out.ids.push(v);
        out.gains.push(gains[best]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    gain: f64,
    id: usize,
    round: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Lazy greedy. The caller asserts the objective is submodular; on
/// non-submodular objectives the result may differ from [`greedy_max`].
pub fn lazy_greedy_max<O: Objective + Sync>(p: &mut SelectionProblem<O>) -> Result<Selection> {
    let target = p.budget.min(p.candidates.len());
    let mut out = Selection {
        ids: Vec::with_capacity(target),
        gains: Vec::with_capacity(target),
        evaluations: 0,
        short: p.candidates.len() < p.budget,
    };
    let obj = &p.objective;
    let first: Vec<f64> = p
        .candidates
        .par_iter()
        .map(|&v| obj.gain(v))
        .collect::<Result<_>>()?;
    out.evaluations += first.len();
    let mut heap: BinaryHeap<HeapEntry> = p
        .candidates
        .iter()
        .zip(first)
        .map(|(&id, gain)| HeapEntry { gain, id, round: 0 })
        .collect();
    let mut round = 0;
    while out.ids.len() < target {
        let top = heap.pop().expect("heap holds every unselected candidate");
        if top.round == round {
            p.objective.commit(top.id)?;
            out.ids.push(top.id);
            out.gains.push(top.gain);
            round += 1;
        } else {
            let gain = p.objective.gain(top.id)?;
            out.evaluations += 1;
            heap.push(HeapEntry {
                gain,
                id: top.id,
                round,
            });
        }
    }
    Ok(out)
}
