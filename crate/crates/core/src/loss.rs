//! Combinatorial conditional-mutual-information losses over a mined batch
//! `(A, P, N)`, with analytic gradients with respect to the raw (not yet
//! normalized) embeddings.
//!
//! Both losses are `I_f(A; N | P) / (3|A|)` evaluated on the temperature
//! scaled cosine kernel of the batch `A ∪ P ∪ N`:
//!
//! * FLCMI: `Σ_i max(min(max_a S_ia, max_n S_in) − max_p S_ip, 0)`
//! * LogDetCMI: `f(A∪P) + f(N∪P) − f(A∪P∪N) − f(P)` with
//!   `f(X) = logdet(S_X + εI)`.
//!
//! Gradients are accumulated as `G = ∂L/∂S` and pulled back through
//! `S = Ê Êᵀ / τ` and the row normalization `ê = e / ‖e‖`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cosine_kernel, EmbeddingMatrix, SimilarityKernel};
use crate::submodular::{log_det_spd, DEFAULT_EPSILON};

/// Temperature applied inside the loss kernel.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Flcmi,
    Logdetcmi,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flcmi" => Ok(LossKind::Flcmi),
            "logdetcmi" => Ok(LossKind::Logdetcmi),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

/// Which role an FLCMI term's `min` branch routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Anchor,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlcmiTerm {
    /// Batch row the term belongs to.
    pub row: usize,
    /// `false` when the outer clamp at zero is active.
    pub active: bool,
    pub branch: Branch,
    /// Batch rows of the arg-max elements `(min branch, positive)`.
    pub args: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Diagnostics {
    Flcmi {
        terms: Vec<FlcmiTerm>,
    },
    Logdetcmi {
        /// Condition numbers of the regularized blocks `A∪P`, `N∪P`,
        /// `A∪P∪N`, `P`.
        condition: [f64; 4],
        /// Regularizer actually used (after any escalation).
        epsilon: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient rows for the stacked batch: anchors, then positives, then
    /// negatives, each row aligned with its input embedding.
    pub grad: DMatrix<f64>,
    pub sizes: (usize, usize, usize),
    pub diagnostics: Diagnostics,
}

impl LossOutput {
    pub fn grad_anchors(&self) -> DMatrix<f64> {
        self.grad.rows(0, self.sizes.0).into_owned()
    }

    pub fn grad_positives(&self) -> DMatrix<f64> {
        self.grad.rows(self.sizes.0, self.sizes.1).into_owned()
    }

    pub fn grad_negatives(&self) -> DMatrix<f64> {
        self.grad
            .rows(self.sizes.0 + self.sizes.1, self.sizes.2)
            .into_owned()
    }
}

/// Loss selector plus its hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub temperature: f64,
    pub epsilon: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            temperature: DEFAULT_TEMPERATURE,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn evaluate(
        &self,
        anchors: &EmbeddingMatrix,
        positives: &EmbeddingMatrix,
        negatives: &EmbeddingMatrix,
    ) -> Result<LossOutput> {
        match self.kind {
            LossKind::Flcmi => flcmi_loss(anchors, positives, negatives, self.temperature),
            LossKind::Logdetcmi => logdetcmi_loss(
                anchors,
                positives,
                negatives,
                self.temperature,
                self.epsilon,
            ),
        }
    }
}

struct Batch {
    unit: DMatrix<f64>,
    norms: Vec<f64>,
    kernel: SimilarityKernel,
    na: usize,
    np: usize,
    nn: usize,
}

impl Batch {
    fn new(
        a: &EmbeddingMatrix,
        p: &EmbeddingMatrix,
        n: &EmbeddingMatrix,
        tau: f64,
    ) -> Result<Self> {
        if a.is_empty() || p.is_empty() || n.is_empty() {
            return Err(Error::invalid(
                "anchors, positives and negatives must be non-empty",
            ));
        }
        let stacked = EmbeddingMatrix::stack(&[a, p, n])?;
        let kernel = cosine_kernel(&stacked, tau)?;
        let norms = stacked.matrix().row_iter().map(|r| r.norm()).collect();
        Ok(Batch {
            unit: stacked.normalized(),
            norms,
            kernel,
            na: a.len(),
            np: p.len(),
            nn: n.len(),
        })
    }

    fn len(&self) -> usize {
        self.na + self.np + self.nn
    }

    fn anchors(&self) -> std::ops::Range<usize> {
        0..self.na
    }

    fn positives(&self) -> std::ops::Range<usize> {
        self.na..self.na + self.np
    }

    fn negatives(&self) -> std::ops::Range<usize> {
        self.na + self.np..self.len()
    }

    /// Pulls `G = ∂L/∂S` back to the raw embeddings.
    fn backprop(&self, mut g: DMatrix<f64>) -> DMatrix<f64> {
        // diagonal entries are constant (1/τ)
        g.fill_diagonal(0.0);
        let sym = &g + g.transpose();
        let d_unit = sym * &self.unit / self.kernel.temperature();
        let mut out = DMatrix::zeros(d_unit.nrows(), d_unit.ncols());
        for i in 0..d_unit.nrows() {
            let u = self.unit.row(i);
            let gi = d_unit.row(i);
            let proj = gi.dot(&u);
            out.row_mut(i).copy_from(&((gi - u * proj) / self.norms[i]));
        }
        out
    }
}

/// `(max value, arg)` of row `i` over `cols`, ties to the smallest column.
fn row_max(k: &SimilarityKernel, i: usize, cols: std::ops::Range<usize>) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for j in cols {
        let v = k.get(i, j);
        if v > best.0 {
            best = (v, j);
        }
    }
    best
}

pub fn flcmi_loss(
    anchors: &EmbeddingMatrix,
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    temperature: f64,
) -> Result<LossOutput> {
    let b = Batch::new(anchors, positives, negatives, temperature)?;
    let n = b.len();
    let norm = 3.0 * b.na as f64;
    let mut g = DMatrix::zeros(n, n);
    let mut value = 0.0;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let (a_val, a_arg) = row_max(&b.kernel, i, b.anchors());
        let (q_val, q_arg) = row_max(&b.kernel, i, b.negatives());
        let (r_val, r_arg) = row_max(&b.kernel, i, b.positives());
        // anchors precede negatives, so a tie routes to the anchor
        let (m_val, m_arg, branch) = if a_val <= q_val {
            (a_val, a_arg, Branch::Anchor)
        } else {
            (q_val, q_arg, Branch::Negative)
        };
        let term = m_val - r_val;
        let active = term > 0.0;
        if active {
            value += term;
            g[(i, m_arg)] += 1.0 / norm;
            g[(i, r_arg)] -= 1.0 / norm;
        }
        terms.push(FlcmiTerm {
            row: i,
            active,
            branch,
            args: (m_arg, r_arg),
        });
    }
    let value = value / norm;
    if !value.is_finite() {
        return Err(Error::NumericalDomain(format!("FLCMI value {value}")));
    }
    Ok(LossOutput {
        value,
        grad: b.backprop(g),
        sizes: (b.na, b.np, b.nn),
        diagnostics: Diagnostics::Flcmi { terms },
    })
}

fn block(k: &SimilarityKernel, idx: &[usize], eps: f64) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
        k.get(idx[r], idx[c]) + if r == c { eps } else { 0.0 }
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi / lo
}

pub fn logdetcmi_loss(
    anchors: &EmbeddingMatrix,
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    temperature: f64,
    epsilon: f64,
) -> Result<LossOutput> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be >= 0")));
    }
    let b = Batch::new(anchors, positives, negatives, temperature)?;
    let ap: Vec<usize> = b.anchors().chain(b.positives()).collect();
    let np: Vec<usize> = b.negatives().chain(b.positives()).collect();
    let all: Vec<usize> = (0..b.len()).collect();
    let p: Vec<usize> = b.positives().collect();
    let blocks: [(&[usize], f64); 4] = [(&ap, 1.0), (&np, 1.0), (&all, -1.0), (&p, -1.0)];

    let attempt = |eps: f64| -> Option<(f64, DMatrix<f64>, [f64; 4])> {
        let mut value = 0.0;
        let mut g = DMatrix::zeros(b.len(), b.len());
        let mut condition = [0.0; 4];
        for (slot, (idx, sign)) in blocks.iter().enumerate() {
            let m = block(&b.kernel, idx, eps);
            condition[slot] = condition_number(&m);
            let chol = nalgebra::Cholesky::new(m)?;
            let l = chol.l_dirty();
            let ld: f64 = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
            if !ld.is_finite() {
                return None;
            }
            value += sign * ld;
            let inv = chol.inverse();
            for (r, &gi) in idx.iter().enumerate() {
                for (c, &gj) in idx.iter().enumerate() {
                    g[(gi, gj)] += sign * inv[(c, r)];
                }
            }
        }
        Some((value, g, condition))
    };
    let (raw, g, condition, eps_used) = match attempt(epsilon) {
        Some((v, g, c)) => (v, g, c, epsilon),
        None if epsilon > 0.0 => match attempt(epsilon * 10.0) {
            Some((v, g, c)) => {
                log::warn!(
                    "LogDetCMI: escalated epsilon {epsilon} -> {}",
                    epsilon * 10.0
                );
                (v, g, c, epsilon * 10.0)
            }
            None => return Err(non_pd(epsilon * 10.0)),
        },
        None => return Err(non_pd(epsilon)),
    };
    let norm = 3.0 * b.na as f64;
    Ok(LossOutput {
        value: raw / norm,
        grad: b.backprop(g / norm),
        sizes: (b.na, b.np, b.nn),
        diagnostics: Diagnostics::Logdetcmi {
            condition,
            epsilon: eps_used,
        },
    })
}

fn non_pd(eps: f64) -> Error {
    Error::NumericalDomain(format!(
        "LogDetCMI block not positive definite at epsilon {eps}"
    ))
}

/// The two printed ratio-of-determinants forms of LogDetCMI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogDetClosedForm {
    /// Denominator conditions on `A ∪ P` against `N`:
    /// `det(I − S_{A∪P}⁻¹ S_{A∪P,N} S_N⁻¹ S_{A∪P,N}ᵀ)`.
    AnchorsWithPositives,
    /// Denominator conditions on `A ∪ N` against `P`:
    /// `det(I − S_{A∪N}⁻¹ S_{A∪N,P} S_P⁻¹ S_{A∪N,P}ᵀ)`.
    AnchorsWithNegatives,
}

impl LogDetClosedForm {
    pub const ALL: [LogDetClosedForm; 2] = [
        LogDetClosedForm::AnchorsWithPositives,
        LogDetClosedForm::AnchorsWithNegatives,
    ];

    pub fn describe(&self) -> &'static str {
        match self {
            LogDetClosedForm::AnchorsWithPositives => {
                "log det(I - S_N^-1 S_NP S_P^-1 S_NP^T) / det(I - S_AuP^-1 S_AuP,N S_N^-1 S_AuP,N^T)"
            }
            LogDetClosedForm::AnchorsWithNegatives => {
                "log det(I - S_N^-1 S_NP S_P^-1 S_NP^T) / det(I - S_AuN^-1 S_AuN,P S_P^-1 S_AuN,P^T)"
            }
        }
    }
}

/// `log det(I − X⁻¹ C Y⁻¹ Cᵀ)` with `X`, `Y` regularized diagonal blocks.
fn log_det_residual(k: &SimilarityKernel, x: &[usize], y: &[usize], eps: f64) -> Result<f64> {
    let mx = block(k, x, eps);
    let my = block(k, y, eps);
    let c = DMatrix::from_fn(x.len(), y.len(), |r, cc| k.get(x[r], y[cc]));
    let xi = mx.cholesky().ok_or_else(|| non_pd(eps))?.inverse();
    let yi = my.cholesky().ok_or_else(|| non_pd(eps))?.inverse();
    let m = DMatrix::identity(x.len(), x.len()) - xi * &c * yi * c.transpose();
    let det = m.determinant();
    if det > 0.0 && det.is_finite() {
        Ok(det.ln())
    } else {
        Err(Error::NumericalDomain(format!(
            "residual determinant {det} is not positive"
        )))
    }
}

/// Un-normalized LogDetCMI through one of the printed closed forms.
pub fn logdetcmi_closed_form(
    anchors: &EmbeddingMatrix,
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    temperature: f64,
    epsilon: f64,
    form: LogDetClosedForm,
) -> Result<f64> {
    let b = Batch::new(anchors, positives, negatives, temperature)?;
    let a: Vec<usize> = b.anchors().collect();
    let p: Vec<usize> = b.positives().collect();
    let n: Vec<usize> = b.negatives().collect();
    let numerator = log_det_residual(&b.kernel, &n, &p, epsilon)?;
    let denominator = match form {
        LogDetClosedForm::AnchorsWithPositives => {
            let ap: Vec<usize> = a.iter().chain(&p).copied().collect();
            log_det_residual(&b.kernel, &ap, &n, epsilon)?
        }
        LogDetClosedForm::AnchorsWithNegatives => {
            let an: Vec<usize> = a.iter().chain(&n).copied().collect();
            log_det_residual(&b.kernel, &an, &p, epsilon)?
        }
    };
    Ok(numerator - denominator)
}

/// Un-normalized LogDetCMI straight from four log-determinants, without
/// gradients. Used as the second route next to [`logdetcmi_closed_form`].
pub fn logdetcmi_definitional(
    anchors: &EmbeddingMatrix,
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    temperature: f64,
    epsilon: f64,
) -> Result<f64> {
    let b = Batch::new(anchors, positives, negatives, temperature)?;
    let ld = |idx: Vec<usize>| {
        log_det_spd(block(&b.kernel, &idx, epsilon)).ok_or_else(|| non_pd(epsilon))
    };
    let ap = ld(b.anchors().chain(b.positives()).collect())?;
    let np = ld(b.negatives().chain(b.positives()).collect())?;
    let all = ld((0..b.len()).collect())?;
    let p = ld(b.positives().collect())?;
    Ok(ap + np - all - p)
}

/// Smallest gap between competing quantities in any FLCMI term: the top two
/// candidates of each inner max, the two sides of the min, and the clamp.
/// A gap of zero means the loss sits on a kink.
pub fn flcmi_min_gap(
    anchors: &EmbeddingMatrix,
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    temperature: f64,
) -> Result<f64> {
    let b = Batch::new(anchors, positives, negatives, temperature)?;
    let top2 = |i: usize, cols: std::ops::Range<usize>| -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for j in cols {
            let v = b.kernel.get(i, j);
            if v > best.0 {
                best = (v, best.0);
            } else if v > best.1 {
                best.1 = v;
            }
        }
        best
    };
    let mut gap = f64::INFINITY;
    for i in 0..b.len() {
        let mut maxima = [0.0; 3];
        for (slot, range) in [b.anchors(), b.negatives(), b.positives()]
            .into_iter()
            .enumerate()
        {
            let (first, second) = top2(i, range);
            maxima[slot] = first;
            if second.is_finite() {
                gap = gap.min(first - second);
            }
        }
        let [a, q, r] = maxima;
        gap = gap.min((a - q).abs());
        gap = gap.min((a.min(q) - r).abs());
    }
    Ok(gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

/// Absolute floor in the relative-error denominator, so coordinates with a
/// vanishing gradient are judged against finite-difference round-off rather
/// than against zero.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of `spec` with central finite differences
/// over every embedding coordinate. For FLCMI, batches whose nearest kink is
/// within `1000 · step` report [`Error::TieDetected`] so the caller can
/// resample.
pub fn grad_check(
    spec: &LossSpec,
    anchors: &EmbeddingMatrix,
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if spec.kind == LossKind::Flcmi {
        let gap = flcmi_min_gap(anchors, positives, negatives, spec.temperature)?;
        if gap < 1e3 * step {
            return Err(Error::TieDetected(format!("smallest branch gap {gap:.3e}")));
        }
    }
    let out = spec.evaluate(anchors, positives, negatives)?;
    let parts = [anchors.matrix(), positives.matrix(), negatives.matrix()];
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut coords = 0;
    let mut row0 = 0;
    for which in 0..3 {
        let m = parts[which];
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let eval_at = |delta: f64| -> Result<f64> {
                    let mut mats = [parts[0].clone(), parts[1].clone(), parts[2].clone()];
                    mats[which][(r, c)] += delta;
                    let [a, p, n] = mats;
                    Ok(spec
                        .evaluate(
                            &EmbeddingMatrix::new(a)?,
                            &EmbeddingMatrix::new(p)?,
                            &EmbeddingMatrix::new(n)?,
                        )?
                        .value)
                };
                let numeric = (eval_at(step)? - eval_at(-step)?) / (2.0 * step);
                let analytic = out.grad[(row0 + r, c)];
                let abs = (numeric - analytic).abs();
                let rel = abs / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(rel);
                coords += 1;
            }
        }
        row0 += m.nrows();
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        coordinates: coords,
        passed: max_rel < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::submodular::BaseFunction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_emb(rng: &mut ChaCha8Rng, n: usize, m: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::new(DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn rows(v: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn positives_equal_to_anchors_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_emb(&mut rng, 4, 5);
        let n = rand_emb(&mut rng, 4, 5);
        let out = flcmi_loss(&a, &a, &n, 0.7).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn three_point_hand_evaluation() {
        // unit vectors with cos(a,n) = 0.9, cos(a,p) = 0.2
        let tau = 0.7;
        let a = [1.0, 0.0, 0.0];
        let n = [0.9, (1.0f64 - 0.81).sqrt(), 0.0];
        let py = (0.0 - 0.2 * 0.9) / n[1];
        let p = [0.2, py, (1.0f64 - 0.04 - py * py).sqrt()];
        let out = flcmi_loss(&rows(&[&a]), &rows(&[&p]), &rows(&[&n]), tau).unwrap();
        let cos = |x: &[f64; 3], y: &[f64; 3]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
        let (san, sap, spn) = (cos(&a, &n) / tau, cos(&a, &p) / tau, cos(&p, &n) / tau);
        let diag = 1.0 / tau;
        // term for a: max(min(S_aa, S_an) - S_ap, 0) = (0.9 - 0.2)/τ
        let term_a = (diag.min(san) - sap).max(0.0);
        assert!((term_a - 0.7 / tau).abs() < 1e-12);
        let term_p = (sap.min(spn) - diag).max(0.0);
        let term_n = (san.min(diag) - spn).max(0.0);
        let expect = (term_a + term_p + term_n) / 3.0;
        assert!(
            (out.value - expect).abs() < 1e-12,
            "{} vs {expect}",
            out.value
        );
    }

    #[test]
    fn closed_form_matches_definitional_scmi() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (na, np, nn) = (
                rng.random_range(1..5),
                rng.random_range(1..5),
                rng.random_range(1..5),
            );
            let a = rand_emb(&mut rng, na, 4);
            let p = rand_emb(&mut rng, np, 4);
            let n = rand_emb(&mut rng, nn, 4);
            let out = flcmi_loss(&a, &p, &n, 0.7).unwrap();
            let all = EmbeddingMatrix::stack(&[&a, &p, &n]).unwrap();
            let k = cosine_kernel(&all, 0.7).unwrap();
            let f = BaseFunction::facility_location(&k, (0..na + np + nn).collect()).unwrap();
            let ai: Vec<usize> = (0..na).collect();
            let pi: Vec<usize> = (na..na + np).collect();
            let ni: Vec<usize> = (na + np..na + np + nn).collect();
            let scmi = f.scmi(&ai, &ni, &pi).unwrap();
            assert!((out.value * 3.0 * na as f64 - scmi).abs() < 1e-8);
            // SCMI is symmetric in its first two arguments
            assert!((scmi - f.scmi(&ni, &ai, &pi).unwrap()).abs() < 1e-9);

            let ld = logdetcmi_loss(&a, &p, &n, 0.7, 1e-4).unwrap();
            let g = BaseFunction::log_det(&k, (0..na + np + nn).collect(), 1e-4).unwrap();
            let def = g.scmi(&ai, &ni, &pi).unwrap();
            assert!((ld.value * 3.0 * na as f64 - def).abs() < 1e-6);
        }
    }

    #[test]
    fn flcmi_is_nonnegative_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = rand_emb(&mut rng, 3, 4);
            let p = rand_emb(&mut rng, 3, 4);
            let n = rand_emb(&mut rng, 3, 4);
            let base = flcmi_loss(&a, &p, &n, 0.7).unwrap();
            assert!(base.value >= 0.0);
            let perm = [2usize, 0, 1];
            let pa = EmbeddingMatrix::new(DMatrix::from_fn(3, 4, |r, c| a.matrix()[(perm[r], c)]))
                .unwrap();
            let out = flcmi_loss(&pa, &p, &n, 0.7).unwrap();
            assert!((out.value - base.value).abs() < 1e-12);
            let ga = base.grad_anchors();
            let gp = out.grad_anchors();
            for r in 0..3 {
                for c in 0..4 {
                    assert!((gp[(r, c)] - ga[(perm[r], c)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn near_orthogonal_logdetcmi_is_zero() {
        let e = |i: usize| {
            let mut v = vec![0.0; 9];
            v[i] = 1.0;
            v
        };
        let a = EmbeddingMatrix::from_rows(&[e(0), e(1), e(2)]).unwrap();
        let p = EmbeddingMatrix::from_rows(&[e(3), e(4), e(5)]).unwrap();
        let n = EmbeddingMatrix::from_rows(&[e(6), e(7), e(8)]).unwrap();
        let out = logdetcmi_loss(&a, &p, &n, 0.7, 1e-4).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn logdet_closed_forms_against_definitional() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut other_matched = 0;
        for _ in 0..20 {
            let a = rand_emb(&mut rng, 3, 12);
            let p = rand_emb(&mut rng, 3, 12);
            let n = rand_emb(&mut rng, 3, 12);
            let def = logdetcmi_definitional(&a, &p, &n, 0.7, 1e-4).unwrap();
            let with_p = logdetcmi_closed_form(
                &a,
                &p,
                &n,
                0.7,
                1e-4,
                LogDetClosedForm::AnchorsWithPositives,
            )
            .unwrap();
            let with_n = logdetcmi_closed_form(
                &a,
                &p,
                &n,
                0.7,
                1e-4,
                LogDetClosedForm::AnchorsWithNegatives,
            )
            .unwrap();
            assert!((def - with_p).abs() < 1e-6, "{def} vs {with_p}");
            if (def - with_n).abs() < 1e-6 {
                other_matched += 1;
            }
        }
        assert_eq!(other_matched, 0);
    }

    #[test]
    fn duplicate_negative_without_regularizer_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_emb(&mut rng, 2, 6);
        let p = rand_emb(&mut rng, 2, 6);
        let n0 = rand_emb(&mut rng, 1, 6);
        let n = EmbeddingMatrix::stack(&[&n0, &n0]).unwrap();
        assert!(matches!(
            logdetcmi_loss(&a, &p, &n, 0.7, 0.0),
            Err(Error::NumericalDomain(_))
        ));
        assert!(logdetcmi_loss(&a, &p, &n, 0.7, 1e-4).is_ok());
    }

    #[test]
    fn empty_sets_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_emb(&mut rng, 2, 3);
        let empty = EmbeddingMatrix::new(DMatrix::zeros(0, 3)).unwrap();
        assert!(flcmi_loss(&a, &a, &empty, 0.7).is_err());
        assert!(logdetcmi_loss(&empty, &a, &a, 0.7, 1e-4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [LossKind::Flcmi, LossKind::Logdetcmi] {
            let spec = LossSpec::new(kind);
            let mut checked = 0;
            while checked < 3 {
                let a = rand_emb(&mut rng, 4, 16);
                let p = rand_emb(&mut rng, 4, 16);
                let n = rand_emb(&mut rng, 4, 16);
                match grad_check(&spec, &a, &p, &n, 1e-5, 1e-4) {
                    Err(Error::TieDetected(_)) => continue,
                    Ok(r) => {
                        assert!(r.passed, "{kind:?}: {r:?}");
                        checked += 1;
                    }
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn exact_tie_is_detected() {
        // the positive equals the negative, so every term ties on its inner max
        let a = rows(&[&[1.0, 0.0, 0.0]]);
        let p = rows(&[&[0.0, 1.0, 0.0]]);
        let n = rows(&[&[0.0, 1.0, 0.0]]);
        let spec = LossSpec::new(LossKind::Flcmi);
        assert!(matches!(
            grad_check(&spec, &a, &p, &n, 1e-5, 1e-4),
            Err(Error::TieDetected(_))
        ));
    }
}
