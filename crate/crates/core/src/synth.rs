//! Seeded synthetic datasets: 2D two-cluster sets for mining demos and a
//! biased vector benchmark (`fairbias`) for end-to-end fairness runs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{Item, LabeledPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Balanced,
    Imbalanced,
    Overlap,
    Fairbias,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Scenario::Balanced),
            "imbalanced" => Ok(Scenario::Imbalanced),
            "overlap" => Ok(Scenario::Overlap),
            "fairbias" => Ok(Scenario::Fairbias),
            other => Err(Error::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Generator parameters. Use [`SynthSpec::defaults`] and override fields.
///
/// Two-cluster scenarios use `n_minor`, `alpha`, `sigma_major`,
/// `sigma_minor` and `separation`; cluster A (t = 0) holds
/// `alpha * n_minor` points. `fairbias` uses `n`, `alpha`, `rho`, `dim`,
/// `signal`, `nuisance`, `noise` and `test_per_cell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scenario: Scenario,
    pub seed: u64,
    pub alpha: u32,
    pub n_minor: usize,
    pub sigma_major: f64,
    pub sigma_minor: f64,
    /// Distance between the two cluster centroids.
    pub separation: f64,
    pub n: usize,
    pub rho: f64,
    pub dim: usize,
    /// Half-distance between the target class means along feature 0.
    pub signal: f64,
    /// Magnitude of the sensitive-attribute offset along feature 1.
    pub nuisance: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    pub test_per_cell: usize,
}

impl SynthSpec {
    pub fn defaults(scenario: Scenario, seed: u64) -> Self {
        let sigma_minor = 0.6;
        let (alpha, n_minor, separation, sigma_major) = match scenario {
            Scenario::Balanced => (1, 200, 6.0 * sigma_minor, sigma_minor),
            Scenario::Imbalanced => (5, 100, 6.0 * sigma_minor, 1.5),
            Scenario::Overlap => (5, 100, 1.5 * sigma_minor, 1.5),
            Scenario::Fairbias => (4, 0, 0.0, 0.0),
        };
        SynthSpec {
            scenario,
            seed,
            alpha,
            n_minor,
            sigma_major,
            sigma_minor,
            separation,
            n: 800,
            rho: 0.8,
            dim: 8,
            signal: 1.0,
            nuisance: 2.0,
            noise: 1.0,
            test_per_cell: 250,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(Error::invalid("alpha must be >= 1"));
        }
        match self.scenario {
            Scenario::Fairbias => {
                if !(0.0..=1.0).contains(&self.rho) {
                    return Err(Error::invalid(format!("rho {} outside [0, 1]", self.rho)));
                }
                if self.dim < 2 {
                    return Err(Error::invalid("fairbias needs dim >= 2"));
                }
                if !(self.noise > 0.0) {
                    return Err(Error::invalid("noise must be > 0"));
                }
                if self.n / 2 < (self.alpha as usize + 1) {
                    return Err(Error::invalid(format!(
                        "n = {} too small for alpha = {}",
                        self.n, self.alpha
                    )));
                }
                if self.test_per_cell == 0 {
                    return Err(Error::invalid("test_per_cell must be >= 1"));
                }
            }
            _ => {
                if self.n_minor < 2 {
                    return Err(Error::invalid("n_minor must be >= 2"));
                }
                if !(self.sigma_major > 0.0 && self.sigma_minor > 0.0) {
                    return Err(Error::invalid("cluster variances must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Shuffles generated rows and assigns ids `0..n`.
fn into_pool(mut rows: Vec<(Vec<f64>, u32, u32)>, rng: &mut ChaCha8Rng) -> Result<LabeledPool> {
    rows.shuffle(rng);
    LabeledPool::new(
        rows.into_iter()
            .enumerate()
            .map(|(id, (x, t, s))| Item { id, x, t, s })
            .collect(),
    )
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("positive standard deviation")
}

/// Two Gaussian clusters in 2D. Cluster A (t = 0) is centred at the origin
/// with `sigma_major`, cluster B (t = 1) at `(separation, 0)` with
/// `sigma_minor`. The sensitive label is a fair coin per point.
pub fn gen_two_cluster(spec: &SynthSpec) -> Result<LabeledPool> {
    if spec.scenario == Scenario::Fairbias {
        return Err(Error::invalid("use gen_fairbias for the fairbias scenario"));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_major = spec.alpha as usize * spec.n_minor;
    let mut rows = Vec::with_capacity(n_major + spec.n_minor);
    let clusters = [
        (n_major, 0.0, spec.sigma_major, 0u32),
        (spec.n_minor, spec.separation, spec.sigma_minor, 1u32),
    ];
    for (count, cx, sd, t) in clusters {
        let d = normal(sd);
        for _ in 0..count {
            let x = vec![cx + d.sample(&mut rng), d.sample(&mut rng)];
            let s = u32::from(rng.random_bool(0.5));
            rows.push((x, t, s));
        }
    }
    into_pool(rows, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairBiasData {
    pub train: LabeledPool,
    pub test: LabeledPool,
}

/// `(t = 0, t = 1)` counts within one sensitive group of size `half`: the
/// largest `(alpha m, m)` split that fits.
pub fn fairbias_cell_counts(half: usize, alpha: u32) -> (usize, usize) {
    let minor = half / (alpha as usize + 1);
    (alpha as usize * minor, minor)
}

fn fairbias_point(spec: &SynthSpec, t: u32, s: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = normal(spec.noise);
    let mut x: Vec<f64> = (0..spec.dim).map(|_| noise.sample(rng)).collect();
    x[0] += if t == 1 { spec.signal } else { -spec.signal };
    // the offset points towards the group's side with probability (1 + rho) / 2
    let side = if s == 1 { 1.0 } else { -1.0 };
    let agree = rng.random_bool((1.0 + spec.rho) / 2.0);
    x[1] += spec.nuisance * if agree { side } else { -side };
    x
}

/// Biased benchmark: within `s = 0` the target ratio is `alpha : 1`, within
/// `s = 1` it is `1 : alpha`. Feature 0 carries the target, feature 1 a
/// nuisance offset whose sign agrees with `s` at strength `rho`. The test
/// split holds `test_per_cell` points in each `(t, s)` cell.
pub fn gen_fairbias(spec: &SynthSpec) -> Result<FairBiasData> {
    if spec.scenario != Scenario::Fairbias {
        return Err(Error::invalid("gen_fairbias needs the fairbias scenario"));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (major, minor) = fairbias_cell_counts(spec.n / 2, spec.alpha);
    let mut train = Vec::new();
    for (t, s, count) in [(0, 0, major), (1, 0, minor), (0, 1, minor), (1, 1, major)] {
        for _ in 0..count {
            train.push((fairbias_point(spec, t, s, &mut rng), t, s));
        }
    }
    let mut test = Vec::new();
    for (t, s) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        for _ in 0..spec.test_per_cell {
            test.push((fairbias_point(spec, t, s, &mut rng), t, s));
        }
    }
    Ok(FairBiasData {
        train: into_pool(train, &mut rng)?,
        test: into_pool(test, &mut rng)?,
    })
}

/// Per-cell counts written alongside a generated pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCount {
    pub t: u32,
    pub s: u32,
    pub count: usize,
}

pub fn cell_counts(pool: &LabeledPool) -> Vec<CellCount> {
    let mut map = std::collections::BTreeMap::new();
    for it in pool.items() {
        *map.entry((it.t, it.s)).or_insert(0) += 1;
    }
    map.into_iter()
        .map(|((t, s), count)| CellCount { t, s, count })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SynthSpec,
    pub cells: Vec<CellCount>,
    pub note: String,
}

pub fn write_sidecar(path: &Path, spec: &SynthSpec, pool: &LabeledPool) -> Result<()> {
    let sidecar = Sidecar {
        spec: spec.clone(),
        cells: cell_counts(pool),
        note: "Gaussian parameters are this generator's built-in defaults".into(),
    };
    let text = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalanced_defaults() {
        let pool = gen_two_cluster(&SynthSpec::defaults(Scenario::Imbalanced, 1)).unwrap();
        let t1 = pool.targets().iter().filter(|&&t| t == 1).count();
        assert_eq!((pool.len(), t1), (600, 100));
        assert_eq!(pool.dim(), 2);
    }

    #[test]
    fn balanced_defaults() {
        let pool = gen_two_cluster(&SynthSpec::defaults(Scenario::Balanced, 1)).unwrap();
        let t1 = pool.targets().iter().filter(|&&t| t == 1).count();
        assert_eq!((pool.len(), t1), (400, 200));
    }

    #[test]
    fn seeded_repeat_identical() {
        let spec = SynthSpec::defaults(Scenario::Overlap, 9);
        assert_eq!(
            gen_two_cluster(&spec).unwrap(),
            gen_two_cluster(&spec).unwrap()
        );
        let f = SynthSpec::defaults(Scenario::Fairbias, 9);
        assert_eq!(gen_fairbias(&f).unwrap(), gen_fairbias(&f).unwrap());
    }

    #[test]
    fn fairbias_ratios() {
        let data = gen_fairbias(&SynthSpec::defaults(Scenario::Fairbias, 3)).unwrap();
        let cells = cell_counts(&data.train);
        let get = |t, s| cells.iter().find(|c| c.t == t && c.s == s).unwrap().count;
        assert_eq!(
            (get(0, 0), get(1, 0), get(0, 1), get(1, 1)),
            (320, 80, 80, 320)
        );
        assert!(cell_counts(&data.test).iter().all(|c| c.count == 250));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::defaults(Scenario::Fairbias, 0);
        spec.rho = 1.5;
        assert!(gen_fairbias(&spec).is_err());
        let mut spec = SynthSpec::defaults(Scenario::Imbalanced, 0);
        spec.sigma_minor = 0.0;
        assert!(gen_two_cluster(&spec).is_err());
        spec.alpha = 0;
        assert!(spec.validate().is_err());
    }
}
