//! Oracle suites: every check compares a fast implementation against a
//! brute-force or definitional reference computed independently.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greedy::{greedy_max, lazy_greedy_max, SelectionProblem};
use crate::kernel::{cosine_kernel, EmbeddingMatrix, SimilarityKernel};
use crate::loss::{
    flcmi_loss, grad_check, logdetcmi_closed_form, logdetcmi_loss, LogDetClosedForm, LossKind,
    LossSpec, DEFAULT_TEMPERATURE,
};
use crate::submodular::{BaseFunction, FacilityLocationGain, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    /// Largest observed violation or error, in the suite's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

impl SuiteResult {
    fn finish(
        name: &str,
        start: Instant,
        checks: usize,
        failures: usize,
        worst: f64,
        tolerance: f64,
        detail: String,
    ) -> Self {
        SuiteResult {
            name: name.into(),
            passed: failures == 0 && checks > 0,
            checks,
            failures,
            worst,
            tolerance,
            seconds: start.elapsed().as_secs_f64(),
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub form: LogDetClosedForm,
    pub formula: String,
    pub max_abs_error: f64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub epsilon: f64,
    pub suites: Vec<SuiteResult>,
    pub logdet_variants: Vec<VariantResult>,
    pub passed: bool,
}

fn uniform_embeddings(rng: &mut ChaCha8Rng, n: usize, dim: usize, lo: f64) -> EmbeddingMatrix {
    loop {
        let m = DMatrix::from_fn(n, dim, |_, _| rng.random_range(lo..1.0));
        if let Ok(e) = EmbeddingMatrix::new(m) {
            return e;
        }
    }
}

/// Cosine kernel of embeddings drawn from the positive orthant, so every
/// entry is nonnegative.
pub fn nonnegative_cosine_kernel(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> SimilarityKernel {
    cosine_kernel(&uniform_embeddings(rng, n, dim, 0.0), 1.0).expect("valid embeddings")
}

fn mask_to_set(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask >> i & 1 == 1).collect()
}

fn submodular_gap(f: &BaseFunction, a: u32, b: u32, n: usize) -> Result<f64> {
    let fa = f.eval(&mask_to_set(a, n))?;
    let fb = f.eval(&mask_to_set(b, n))?;
    let fu = f.eval(&mask_to_set(a | b, n))?;
    let fi = f.eval(&mask_to_set(a & b, n))?;
    Ok(fa + fb - fu - fi)
}

/// `f(A) + f(B) ≥ f(A∪B) + f(A∩B)` for FL and LogDet: every pair at `n = 6`
/// over ten kernels, then 1000 sampled pairs at `n = 12`.
pub fn submodularity_suite(seed: u64, epsilon: f64) -> Result<SuiteResult> {
    let start = Instant::now();
    let tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures, mut worst) = (0, 0, 0.0f64);
    let mut check = |gap: f64| {
        checks += 1;
        worst = worst.max(-gap);
        if gap < -tol {
            failures += 1;
        }
    };
    for _ in 0..10 {
        let n = 6;
        let k = nonnegative_cosine_kernel(&mut rng, n, 8);
        let fl = BaseFunction::facility_location(&k, (0..n).collect())?;
        let ld = BaseFunction::log_det(&k, (0..n).collect(), epsilon)?;
        for a in 0..1u32 << n {
            for b in 0..1u32 << n {
                check(submodular_gap(&fl, a, b, n)?);
                check(submodular_gap(&ld, a, b, n)?);
            }
        }
    }
    let n = 12;
    let k = nonnegative_cosine_kernel(&mut rng, n, 14);
    let fl = BaseFunction::facility_location(&k, (0..n).collect())?;
    let ld = BaseFunction::log_det(&k, (0..n).collect(), epsilon)?;
    for _ in 0..1000 {
        let a = rng.random_range(0..1u32 << n);
        let b = rng.random_range(0..1u32 << n);
        check(submodular_gap(&fl, a, b, n)?);
        check(submodular_gap(&ld, a, b, n)?);
    }
    Ok(SuiteResult::finish(
        "submodularity",
        start,
        checks,
        failures,
        worst,
        tol,
        "largest violation of f(A)+f(B) >= f(A|B)+f(A&B)".into(),
    ))
}

fn random_batch(rng: &mut ChaCha8Rng, dim: usize, max_size: usize) -> [EmbeddingMatrix; 3] {
    let mut part = || {
        let size = rng.random_range(1..=max_size);
        uniform_embeddings(rng, size, dim, -1.0)
    };
    [part(), part(), part()]
}

/// Closed-form losses against definitional SCMI on the batch kernel, plus the
/// disambiguation of the two printed LogDetCMI forms.
pub fn closed_form_suite(seed: u64, epsilon: f64) -> Result<(SuiteResult, Vec<VariantResult>)> {
    let start = Instant::now();
    let (tol_fl, tol_ld) = (1e-8, 1e-6);
    let tau = DEFAULT_TEMPERATURE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures, mut worst) = (0, 0, 0.0f64);
    let mut variant_err = [0.0f64; 2];
    for kind in [LossKind::Flcmi, LossKind::Logdetcmi] {
        for _ in 0..50 {
            let [a, p, n] = random_batch(&mut rng, 16, 4);
            let (na, np, nn) = (a.len(), p.len(), n.len());
            let all = EmbeddingMatrix::stack(&[&a, &p, &n])?;
            let kernel = cosine_kernel(&all, tau)?;
            let universe: Vec<usize> = (0..na + np + nn).collect();
            let ai: Vec<usize> = (0..na).collect();
            let pi: Vec<usize> = (na..na + np).collect();
            let ni: Vec<usize> = (na + np..na + np + nn).collect();
            let scale = 3.0 * na as f64;
            let (err, tol) = match kind {
                LossKind::Flcmi => {
                    let f = BaseFunction::facility_location(&kernel, universe)?;
                    let def = f.scmi(&ai, &ni, &pi)?;
                    (
                        (flcmi_loss(&a, &p, &n, tau)?.value * scale - def).abs(),
                        tol_fl,
                    )
                }
                LossKind::Logdetcmi => {
                    let f = BaseFunction::log_det(&kernel, universe, epsilon)?;
                    let def = f.scmi(&ai, &ni, &pi)?;
                    for (slot, form) in LogDetClosedForm::ALL.iter().enumerate() {
                        let e = match logdetcmi_closed_form(&a, &p, &n, tau, epsilon, *form) {
                            Ok(v) => (v - def).abs(),
                            Err(_) => f64::INFINITY,
                        };
                        variant_err[slot] = variant_err[slot].max(e);
                    }
                    let loss = logdetcmi_loss(&a, &p, &n, tau, epsilon)?.value * scale;
                    let fast = logdetcmi_closed_form(
                        &a,
                        &p,
                        &n,
                        tau,
                        epsilon,
                        LogDetClosedForm::AnchorsWithPositives,
                    )?;
                    ((loss - def).abs().max((fast - def).abs()), tol_ld)
                }
            };
            checks += 1;
            worst = worst.max(err);
            if err > tol {
                failures += 1;
            }
        }
    }
    let variants: Vec<VariantResult> = LogDetClosedForm::ALL
        .iter()
        .zip(variant_err)
        .map(|(form, e)| VariantResult {
            form: *form,
            formula: form.describe().into(),
            max_abs_error: e,
            matches: e <= tol_ld,
        })
        .collect();
    let matched: Vec<&str> = variants
        .iter()
        .filter(|v| v.matches)
        .map(|v| v.formula.as_str())
        .collect();
    let detail = format!("matching LogDetCMI form(s): {matched:?}");
    Ok((
        SuiteResult::finish(
            "closed-form",
            start,
            checks,
            failures,
            worst,
            tol_ld,
            detail,
        ),
        variants,
    ))
}

/// Brute-force optimum of FL over all `k`-subsets of `0..n`.
pub fn brute_force_fl(k: &SimilarityKernel, budget: usize) -> Result<f64> {
    let n = k.len();
    let f = BaseFunction::facility_location(k, (0..n).collect())?;
    let mut best = f64::NEG_INFINITY;
    for mask in 0..1u32 << n {
        if mask.count_ones() as usize == budget {
            best = best.max(f.eval(&mask_to_set(mask, n))?);
        }
    }
    Ok(best)
}

/// Greedy FL value against the exhaustive optimum, and lazy against naive.
pub fn greedy_suite(seed: u64) -> Result<SuiteResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 - (-1.0f64).exp();
    let (mut checks, mut failures, mut worst_ratio) = (0, 0, f64::INFINITY);
    let (n, budget) = (12, 3);
    for _ in 0..20 {
        let k = nonnegative_cosine_kernel(&mut rng, n, 4);
        let universe: Vec<usize> = (0..n).collect();
        let mut naive = SelectionProblem::new(
            FacilityLocationGain::new(&k, universe.clone()),
            universe.clone(),
            budget,
        )?;
        let mut lazy = SelectionProblem::new(
            FacilityLocationGain::new(&k, universe.clone()),
            universe.clone(),
            budget,
        )?;
        let g = greedy_max(&mut naive)?;
        let l = lazy_greedy_max(&mut lazy)?;
        let f = BaseFunction::facility_location(&k, universe)?;
        let value = f.eval(&g.ids)?;
        let opt = brute_force_fl(&k, budget)?;
        let ratio = value / opt;
        worst_ratio = worst_ratio.min(ratio);
        checks += 2;
        if ratio < bound - 1e-12 {
            failures += 1;
        }
        if g.ids != l.ids {
            failures += 1;
        }
    }
    Ok(SuiteResult::finish(
        "greedy",
        start,
        checks,
        failures,
        worst_ratio,
        bound,
        format!(
            "worst greedy/OPT ratio {worst_ratio:.4} (bound {bound:.4}); lazy == naive required"
        ),
    ))
}

/// Finite-difference gradient checks on non-degenerate 4/4/4 batches.
pub fn gradient_suite(seed: u64, epsilon: f64) -> Result<SuiteResult> {
    let start = Instant::now();
    let tol = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures, mut worst, mut resampled) = (0, 0, 0.0f64, 0);
    for kind in [LossKind::Flcmi, LossKind::Logdetcmi] {
        let spec = LossSpec {
            kind,
            temperature: DEFAULT_TEMPERATURE,
            epsilon,
        };
        let mut done = 0;
        while done < 10 {
            let a = uniform_embeddings(&mut rng, 4, 16, -1.0);
            let p = uniform_embeddings(&mut rng, 4, 16, -1.0);
            let n = uniform_embeddings(&mut rng, 4, 16, -1.0);
            match grad_check(&spec, &a, &p, &n, 1e-5, tol) {
                Err(Error::TieDetected(_)) => {
                    resampled += 1;
                    if resampled > 1000 {
                        return Err(Error::TieDetected("too many degenerate batches".into()));
                    }
                }
                Err(e) => return Err(e),
                Ok(r) => {
                    done += 1;
                    checks += 1;
                    worst = worst.max(r.max_rel_error);
                    if !r.passed {
                        failures += 1;
                    }
                }
            }
        }
    }
    Ok(SuiteResult::finish(
        "gradients",
        start,
        checks,
        failures,
        worst,
        tol,
        format!("max relative error; {resampled} batches resampled for ties"),
    ))
}

pub fn run_all(seed: u64, epsilon: f64) -> Result<VerifyReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let (closed, variants) = closed_form_suite(seed, epsilon)?;
    let suites = vec![
        submodularity_suite(seed, epsilon)?,
        closed,
        greedy_suite(seed)?,
        gradient_suite(seed, epsilon)?,
    ];
    let passed = suites.iter().all(|s| s.passed);
    Ok(VerifyReport {
        seed,
        epsilon,
        suites,
        logdet_variants: variants,
        passed,
    })
}

/// Default regularizer for [`run_all`].
pub const VERIFY_EPSILON: f64 = DEFAULT_EPSILON;
