//! Cosine similarity kernels over embeddings.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-per-item embeddings. Every row is finite with nonzero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(DMatrix<f64>);

impl EmbeddingMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        for r in 0..rows.nrows() {
            let row = rows.row(r);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalDomain(format!(
                    "non-finite entry in row {r}"
                )));
            }
            if row.norm() == 0.0 {
                return Err(Error::ZeroNorm(r));
            }
        }
        Ok(EmbeddingMatrix(rows))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.len(),
                context: Some("embedding rows".into()),
            });
        }
        Self::new(DMatrix::from_fn(rows.len(), m, |r, c| rows[r][c]))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Rows scaled to unit L2 norm.
    pub fn normalized(&self) -> DMatrix<f64> {
        let mut out = self.0.clone();
        for mut row in out.row_iter_mut() {
            let n = row.norm();
            row /= n;
        }
        out
    }

    /// Stacks several embedding matrices row-wise.
    pub fn stack(parts: &[&EmbeddingMatrix]) -> Result<Self> {
        let m = parts.first().map(|p| p.dim()).unwrap_or(0);
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut out = DMatrix::zeros(n, m);
        let mut r0 = 0;
        for p in parts {
            if p.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: p.dim(),
                    context: Some("stacked embeddings".into()),
                });
            }
            out.rows_mut(r0, p.len()).copy_from(&p.0);
            r0 += p.len();
        }
        Ok(EmbeddingMatrix(out))
    }
}

/// Dense symmetric similarity matrix with entries `cos(e_i, e_j) / temperature`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityKernel {
    entries: DMatrix<f64>,
    temperature: f64,
}

impl SimilarityKernel {
    /// Wraps a precomputed symmetric matrix. Used for synthetic kernels in
    /// tests and oracles; `cosine_kernel` is the normal constructor.
    pub fn from_matrix(entries: DMatrix<f64>, temperature: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::invalid("kernel must be square"));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature {temperature} must be positive"
            )));
        }
        let n = entries.nrows();
        for i in 0..n {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid(format!("kernel not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(SimilarityKernel {
            entries,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// The kernel multiplied by a positive constant `c`.
    pub fn scaled(&self, c: f64) -> SimilarityKernel {
        SimilarityKernel {
            entries: &self.entries * c,
            temperature: self.temperature / c,
        }
    }

    /// Entry-wise map, e.g. to shift a signed kernel to be nonnegative.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SimilarityKernel {
        SimilarityKernel {
            entries: self.entries.map(f),
            temperature: self.temperature,
        }
    }
}

pub fn cosine_kernel(e: &EmbeddingMatrix, temperature: f64) -> Result<SimilarityKernel> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let n = e.len();
    let unit = e.normalized();
    // rows are independent, so the result does not depend on the thread count
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ri = unit.row(i);
            (i..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        ri.dot(&unit.row(j)).clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    let mut entries = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            let s = v / temperature;
            entries[(i, j)] = s;
            entries[(j, i)] = s;
        }
    }
    Ok(SimilarityKernel {
        entries,
        temperature,
    })
}

/// The `|rows| × |cols|` block of `k`.
pub fn sub_kernel(k: &SimilarityKernel, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
    let n = k.len();
    for &i in rows.iter().chain(cols) {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        k.entries[(rows[r], cols[c])]
    }))
}

/// Seeded random Fourier feature lift. Cosine similarity between lifted
/// points approximates a Gaussian kernel of the given bandwidth, which gives
/// low-dimensional point clouds a full-rank, locality-preserving kernel.
#[derive(Debug, Clone)]
pub struct FourierLift {
    freqs: DMatrix<f64>,
    phases: Vec<f64>,
}

impl FourierLift {
    pub fn new(input_dim: usize, features: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if !(bandwidth > 0.0) || features == 0 || input_dim == 0 {
            return Err(Error::invalid(
                "fourier lift needs positive bandwidth and dims",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / bandwidth).expect("valid normal");
        let freqs = DMatrix::from_fn(features, input_dim, |_, _| normal.sample(&mut rng));
        let uni = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
        let phases = (0..features).map(|_| uni.sample(&mut rng)).collect();
        Ok(FourierLift { freqs, phases })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<EmbeddingMatrix> {
        if x.ncols() != self.freqs.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.freqs.ncols(),
                found: x.ncols(),
                context: Some("fourier lift input".into()),
            });
        }
        let proj = x * self.freqs.transpose();
        let scale = (2.0 / self.phases.len() as f64).sqrt();
        let out = DMatrix::from_fn(proj.nrows(), proj.ncols(), |r, c| {
            scale * (proj[(r, c)] + self.phases[c]).cos()
        });
        EmbeddingMatrix::new(out)
    }
}

/// Unit-temperature cosine kernel of the Fourier-lifted rows of `x`.
pub fn lifted_cosine_kernel(
    x: &DMatrix<f64>,
    features: usize,
    bandwidth: f64,
    seed: u64,
) -> Result<SimilarityKernel> {
    let lift = FourierLift::new(x.ncols(), features, bandwidth, seed)?;
    cosine_kernel(&lift.apply(x)?, 1.0)
}
