//! Facility-Location and Log-Determinant set functions and the information
//! measures built on them:
//!
//! * mutual information `I_f(A;Q) = f(A) + f(Q) - f(A ∪ Q)`
//! * conditional gain `H_f(A|Q) = f(A ∪ Q) - f(Q)`
//! * conditional mutual information
//!   `I_f(A;B|C) = f(A ∪ C) + f(B ∪ C) - f(A ∪ B ∪ C) - f(C)`
//!
//! All of these are evaluated definitionally from `eval`. The incremental
//! states at the bottom of the module (`FacilityLocationGain`, `LogDetGain`,
//! `ConditionalGainFl`, `MutualInfoFl`) back the greedy maximizer.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::greedy::Objective;
use crate::kernel::SimilarityKernel;

/// Diagonal regularizer used when none is configured.
pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    FacilityLocation,
    LogDet,
}

#[derive(Debug, Clone)]
pub struct BaseFunction<'k> {
    kind: BaseKind,
    kernel: &'k SimilarityKernel,
    epsilon: f64,
    universe: Vec<usize>,
    in_universe: Vec<bool>,
}

impl<'k> BaseFunction<'k> {
    pub fn new(
        kind: BaseKind,
        kernel: &'k SimilarityKernel,
        universe: Vec<usize>,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon {epsilon} must be >= 0")));
        }
        let n = kernel.len();
        let mut in_universe = vec![false; n];
        for &u in &universe {
            if u >= n {
                return Err(Error::IndexOutOfRange { index: u, len: n });
            }
            in_universe[u] = true;
        }
        let mut universe = universe;
        universe.sort_unstable();
        universe.dedup();
        Ok(BaseFunction {
            kind,
            kernel,
            epsilon,
            universe,
            in_universe,
        })
    }

    /// Facility location whose outer sum runs over `universe`.
    pub fn facility_location(kernel: &'k SimilarityKernel, universe: Vec<usize>) -> Result<Self> {
        Self::new(BaseKind::FacilityLocation, kernel, universe, 0.0)
    }

    /// `logdet(S_A + εI)` over `universe`.
    pub fn log_det(
        kernel: &'k SimilarityKernel,
        universe: Vec<usize>,
        epsilon: f64,
    ) -> Result<Self> {
        Self::new(BaseKind::LogDet, kernel, universe, epsilon)
    }

    pub fn kind(&self) -> BaseKind {
        self.kind
    }

    pub fn kernel(&self) -> &'k SimilarityKernel {
        self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn universe(&self) -> &[usize] {
        &self.universe
    }

    fn check(&self, set: &[usize]) -> Result<Vec<usize>> {
        let mut s = set.to_vec();
        s.sort_unstable();
        s.dedup();
        for &v in &s {
            if v >= self.in_universe.len() {
                return Err(Error::IndexOutOfRange {
                    index: v,
                    len: self.in_universe.len(),
                });
            }
            if !self.in_universe[v] {
                return Err(Error::invalid(format!(
                    "id {v} is outside the function's universe"
                )));
            }
        }
        Ok(s)
    }

    /// `f(A)`; the empty set evaluates to 0 for both kinds.
    pub fn eval(&self, set: &[usize]) -> Result<f64> {
        let set = self.check(set)?;
        if set.is_empty() {
            return Ok(0.0);
        }
        match self.kind {
            BaseKind::FacilityLocation => Ok(self.fl_eval(&set)),
            BaseKind::LogDet => log_det_regularized(self.kernel, &set, self.epsilon),
        }
    }

    fn fl_eval(&self, set: &[usize]) -> f64 {
        self.universe
            .iter()
            .map(|&i| {
                set.iter()
                    .map(|&j| self.kernel.get(i, j))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }

    /// `f(A ∪ {v}) − f(A)` through the kind-specific fast path.
    pub fn marginal_gain(&self, set: &[usize], v: usize) -> Result<f64> {
        let set = self.check(set)?;
        self.check(&[v])?;
        if set.binary_search(&v).is_ok() {
            return Err(Error::invalid(format!("id {v} already in the set")));
        }
        match self.kind {
            BaseKind::FacilityLocation => {
                let mut st = FacilityLocationGain::new(self.kernel, self.universe.clone());
                for &a in &set {
                    st.insert(a);
                }
                Ok(st.gain_of(v))
            }
            BaseKind::LogDet => {
                let mut st = LogDetGain::new(self.kernel, self.epsilon);
                for &a in &set {
                    st.commit(a)?;
                }
                st.gain(v)
            }
        }
    }

    /// Mutual information `I_f(A;Q)`.
    pub fn smi(&self, a: &[usize], q: &[usize]) -> Result<f64> {
        Ok(self.eval(a)? + self.eval(q)? - self.eval(&union(&[a, q]))?)
    }

    /// Conditional gain `H_f(A|Q)`.
    pub fn scg(&self, a: &[usize], q: &[usize]) -> Result<f64> {
        Ok(self.eval(&union(&[a, q]))? - self.eval(q)?)
    }

    /// Conditional mutual information `I_f(A;B|C)`.
    pub fn scmi(&self, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64> {
        Ok(self.eval(&union(&[a, c]))? + self.eval(&union(&[b, c]))?
            - self.eval(&union(&[a, b, c]))?
            - self.eval(c)?)
    }
}

/// Sorted, deduplicated union of id lists.
pub fn union(parts: &[&[usize]]) -> Vec<usize> {
    let mut out: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// `logdet(M)` of a symmetric positive definite matrix through its Cholesky
/// factor.
pub fn log_det_spd(m: DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    Some(2.0 * acc)
}

/// `logdet(S_A + εI)`, retrying once with `10ε` if the factorization fails.
pub fn log_det_regularized(kernel: &SimilarityKernel, set: &[usize], epsilon: f64) -> Result<f64> {
    let block = DMatrix::from_fn(set.len(), set.len(), |r, c| kernel.get(set[r], set[c]));
    log_det_block(block, epsilon)
}

pub(crate) fn log_det_block(block: DMatrix<f64>, epsilon: f64) -> Result<f64> {
    let n = block.nrows();
    for eps in [epsilon, epsilon * 10.0] {
        let m = &block + DMatrix::identity(n, n) * eps;
        if let Some(v) = log_det_spd(m) {
            if v.is_finite() {
                if eps != epsilon {
                    log::warn!("logdet: escalated epsilon {epsilon} -> {eps}");
                }
                return Ok(v);
            }
        }
        if epsilon == 0.0 {
            break;
        }
    }
    Err(Error::NumericalDomain(format!(
        "{n}x{n} block is not positive definite with epsilon {epsilon}"
    )))
}

/// Incremental facility location: per-universe-element running maxima.
#[derive(Debug, Clone)]
pub struct FacilityLocationGain<'k> {
    kernel: &'k SimilarityKernel,
    universe: Vec<usize>,
    best: Vec<f64>,
    empty: bool,
}

impl<'k> FacilityLocationGain<'k> {
    pub fn new(kernel: &'k SimilarityKernel, universe: Vec<usize>) -> Self {
        let best = vec![f64::NEG_INFINITY; universe.len()];
        FacilityLocationGain {
            kernel,
            universe,
            best,
            empty: true,
        }
    }

    pub fn gain_of(&self, v: usize) -> f64 {
        if self.empty {
            self.universe.iter().map(|&i| self.kernel.get(i, v)).sum()
        } else {
            self.universe
                .iter()
                .zip(&self.best)
                .map(|(&i, &b)| (self.kernel.get(i, v) - b).max(0.0))
                .sum()
        }
    }

    pub fn insert(&mut self, v: usize) {
        for (&i, b) in self.universe.iter().zip(self.best.iter_mut()) {
            let s = self.kernel.get(i, v);
            if s > *b {
                *b = s;
            }
        }
        self.empty = false;
    }

    pub fn value(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.best.iter().sum()
        }
    }
}

impl Objective for FacilityLocationGain<'_> {
    fn gain(&self, v: usize) -> Result<f64> {
        Ok(self.gain_of(v))
    }

    fn commit(&mut self, v: usize) -> Result<()> {
        self.insert(v);
        Ok(())
    }
}

/// Incremental `logdet(S_A + εI)` through a growing Cholesky factor; the
/// gain of `v` is the log of its Schur complement against the current set.
#[derive(Debug, Clone)]
pub struct LogDetGain<'k> {
    kernel: &'k SimilarityKernel,
    epsilon: f64,
    selected: Vec<usize>,
    // rows of the lower Cholesky factor
    factor: Vec<Vec<f64>>,
    value: f64,
}

impl<'k> LogDetGain<'k> {
    pub fn new(kernel: &'k SimilarityKernel, epsilon: f64) -> Self {
        LogDetGain {
            kernel,
            epsilon,
            selected: Vec::new(),
            factor: Vec::new(),
            value: 0.0,
        }
    }

    fn schur(&self, v: usize) -> (Vec<f64>, f64) {
        let k = self.selected.len();
        let mut y = vec![0.0; k];
        for r in 0..k {
            let mut acc = self.kernel.get(self.selected[r], v);
            for c in 0..r {
                acc -= self.factor[r][c] * y[c];
            }
            y[r] = acc / self.factor[r][r];
        }
        let d = self.kernel.get(v, v) + self.epsilon - y.iter().map(|x| x * x).sum::<f64>();
        (y, d)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }
}

impl Objective for LogDetGain<'_> {
    fn gain(&self, v: usize) -> Result<f64> {
        let (_, d) = self.schur(v);
        if d > 0.0 && d.is_finite() {
            Ok(d.ln())
        } else {
            Err(Error::NumericalDomain(format!(
                "Schur complement {d} of item {v} is not positive (epsilon {})",
                self.epsilon
            )))
        }
    }

    fn commit(&mut self, v: usize) -> Result<()> {
        let (mut y, d) = self.schur(v);
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NumericalDomain(format!(
                "Schur complement {d} of item {v} is not positive"
            )));
        }
        y.push(d.sqrt());
        self.factor.push(y);
        self.selected.push(v);
        self.value += d.ln();
        Ok(())
    }
}

/// `H_f(X | Q)` with facility location: gains of `X` on top of a fixed `Q`.
#[derive(Debug, Clone)]
pub struct ConditionalGainFl<'k> {
    state: FacilityLocationGain<'k>,
    base_value: f64,
}

impl<'k> ConditionalGainFl<'k> {
    pub fn new(kernel: &'k SimilarityKernel, universe: Vec<usize>, query: &[usize]) -> Self {
        let mut state = FacilityLocationGain::new(kernel, universe);
        for &q in query {
            state.insert(q);
        }
        let base_value = state.value();
        ConditionalGainFl { state, base_value }
    }

    /// Current `H_f(X | Q)`.
    pub fn value(&self) -> f64 {
        self.state.value() - self.base_value
    }
}

impl Objective for ConditionalGainFl<'_> {
    fn gain(&self, v: usize) -> Result<f64> {
        Ok(self.state.gain_of(v))
    }

    fn commit(&mut self, v: usize) -> Result<()> {
        self.state.insert(v);
        Ok(())
    }
}

/// `I_f(X; Q)` with facility location: gain is `Δf(v|X) − Δf(v|X ∪ Q)`.
#[derive(Debug, Clone)]
pub struct MutualInfoFl<'k> {
    alone: FacilityLocationGain<'k>,
    with_query: FacilityLocationGain<'k>,
    query_value: f64,
}

impl<'k> MutualInfoFl<'k> {
    pub fn new(kernel: &'k SimilarityKernel, universe: Vec<usize>, query: &[usize]) -> Self {
        let alone = FacilityLocationGain::new(kernel, universe.clone());
        let mut with_query = FacilityLocationGain::new(kernel, universe);
        for &q in query {
            with_query.insert(q);
        }
        let query_value = with_query.value();
        MutualInfoFl {
            alone,
            with_query,
            query_value,
        }
    }

    /// Current `I_f(X; Q)`.
    pub fn value(&self) -> f64 {
        self.alone.value() + self.query_value - self.with_query.value()
    }
}

impl Objective for MutualInfoFl<'_> {
    fn gain(&self, v: usize) -> Result<f64> {
        Ok(self.alone.gain_of(v) - self.with_query.gain_of(v))
    }

    fn commit(&mut self, v: usize) -> Result<()> {
        self.alone.insert(v);
        self.with_query.insert(v);
        Ok(())
    }
}
