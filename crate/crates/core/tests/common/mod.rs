//! Reference implementations written directly from the definitions, shared
//! by the integration tests. Nothing here calls into the library's
//! set-function or loss code.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `Ê Êᵀ / τ` with rows normalized to unit length.
pub fn cosine(e: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut u = e.clone();
    for mut row in u.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    let mut s = &u * u.transpose() / tau;
    for i in 0..s.nrows() {
        s[(i, i)] = 1.0 / tau;
    }
    s
}

/// `Σ_{i ∈ universe} max_{j ∈ set} S_ij`, zero on the empty set.
pub fn fl(s: &DMatrix<f64>, universe: &[usize], set: &[usize]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    universe
        .iter()
        .map(|&i| {
            set.iter()
                .map(|&j| s[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

/// `logdet(S_set + εI)` via Cholesky, zero on the empty set.
pub fn logdet(s: &DMatrix<f64>, set: &[usize], eps: f64) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let m = DMatrix::from_fn(set.len(), set.len(), |r, c| {
        s[(set[r], set[c])] + if r == c { eps } else { 0.0 }
    });
    let l = m.cholesky().expect("positive definite block").l();
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn union(parts: &[&[usize]]) -> Vec<usize> {
    let mut v: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// `f(A∪C) + f(B∪C) − f(A∪B∪C) − f(C)`.
pub fn scmi(f: impl Fn(&[usize]) -> f64, a: &[usize], b: &[usize], c: &[usize]) -> f64 {
    f(&union(&[a, c])) + f(&union(&[b, c])) - f(&union(&[a, b, c])) - f(c)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..1.0))
}

pub fn subsets(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask >> i & 1 == 1).collect()
}

pub fn mean_max_sim(s: &DMatrix<f64>, set: &[usize], anchors: &[usize]) -> f64 {
    set.iter()
        .map(|&x| {
            anchors
                .iter()
                .map(|&a| s[(x, a)])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / set.len() as f64
}
