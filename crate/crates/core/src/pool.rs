//! Labeled ground set: items carrying a feature vector, a target label `t`
//! and a sensitive label `s`, plus the `(t, s)` cell index used by the miner
//! and per-epoch subsampling of the ground set.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

/// Default fraction of the training pool drawn into each epoch's ground set.
pub const DEFAULT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: usize,
    pub x: Vec<f64>,
    pub t: u32,
    pub s: u32,
}

/// A validated labeled dataset. Ids are exactly `0..len()` and item `i` is
/// stored at position `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    items: Vec<Item>,
    dim: usize,
}

impl LabeledPool {
    /// Validates and sorts `items` by id.
    pub fn new(mut items: Vec<Item>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyPool);
        }
        items.sort_by_key(|it| it.id);
        let dim = items[0].x.len();
        if dim == 0 {
            return Err(Error::InvalidPool("feature dimension is zero".into()));
        }
        for (pos, it) in items.iter().enumerate() {
            if pos > 0 && items[pos - 1].id == it.id {
                return Err(Error::DuplicateId(it.id));
            }
            if it.id != pos {
                return Err(Error::InvalidPool(format!(
                    "ids must be contiguous from 0; missing id {pos}"
                )));
            }
            if it.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: it.x.len(),
                    context: Some(format!("item {}", it.id)),
                });
            }
            if let Some(v) = it.x.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidPool(format!(
                    "item {} has non-finite feature {v}",
                    it.id
                )));
            }
        }
        let pool = LabeledPool { items, dim };
        if pool.target_labels().len() < 2 {
            return Err(Error::InvalidPool("need at least two target labels".into()));
        }
        if pool.sensitive_labels().len() < 2 {
            return Err(Error::InvalidPool(
                "need at least two sensitive labels".into(),
            ));
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: usize) -> &Item {
        &self.items[id]
    }

    pub fn ids(&self) -> Vec<usize> {
        (0..self.items.len()).collect()
    }

    pub fn targets(&self) -> Vec<u32> {
        self.items.iter().map(|it| it.t).collect()
    }

    pub fn sensitives(&self) -> Vec<u32> {
        self.items.iter().map(|it| it.s).collect()
    }

    pub fn target_labels(&self) -> BTreeSet<u32> {
        self.items.iter().map(|it| it.t).collect()
    }

    pub fn sensitive_labels(&self) -> BTreeSet<u32> {
        self.items.iter().map(|it| it.s).collect()
    }

    /// Feature rows for `ids`, one row per id, in the given order.
    pub fn feature_matrix(&self, ids: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(ids.len(), self.dim, |r, c| self.items[ids[r]].x[c])
    }

    /// All feature rows in id order.
    pub fn all_features(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim, |r, c| self.items[r].x[c])
    }

    /// Writes the pool in the CSV interchange layout
    /// (`id,f0,...,f{d-1},t,s`) with 9 significant digits per feature.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = String::from("id");
        for c in 0..self.dim {
            header.push_str(&format!(",f{c}"));
        }
        header.push_str(",t,s");
        writeln!(w, "{header}")?;
        for it in &self.items {
            write!(w, "{}", it.id)?;
            for v in &it.x {
                write!(w, ",{}", format_sig9(*v))?;
            }
            writeln!(w, ",{},{}", it.t, it.s)?;
        }
        Ok(())
    }
}

/// Formats with 9 significant digits, without exponent when reasonable.
pub fn format_sig9(v: f64) -> String {
    let s = format!("{v:.8e}");
    // `s` is `d.dddddddde±x`; reparse so the printed value is canonical.
    let parsed: f64 = s.parse().unwrap_or(v);
    let abs = parsed.abs();
    if parsed == 0.0 {
        "0".to_string()
    } else if (1e-4..1e9).contains(&abs) {
        let exp = abs.log10().floor() as i32;
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{parsed:.decimals$}");
        if fixed.parse::<f64>().ok() == Some(parsed) {
            trim_zeros(fixed)
        } else {
            s
        }
    } else {
        s
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Reads a pool from the CSV interchange layout.
pub fn load_pool(path: &Path) -> Result<LabeledPool> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_pool_from(file)
}

pub fn load_pool_from<R: std::io::Read>(reader: R) -> Result<LabeledPool> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::EmptyPool),
        Some(r) => r.map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
    };
    let dim = parse_header(&header)?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != dim + 3 {
            return Err(Error::DimensionMismatch {
                expected: dim + 3,
                found: rec.len(),
                context: Some(format!("columns on line {line}")),
            });
        }
        let id: usize = rec[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad id {:?}", &rec[0]),
        })?;
        let mut x = Vec::with_capacity(dim);
        for c in 0..dim {
            let v: f64 = rec[c + 1].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad feature f{c} {:?}", &rec[c + 1]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature f{c} {:?}", &rec[c + 1]),
                });
            }
            x.push(v);
        }
        let t: u32 = rec[dim + 1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad target label {:?}", &rec[dim + 1]),
        })?;
        let s: u32 = rec[dim + 2].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad sensitive label {:?}", &rec[dim + 2]),
        })?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        items.push(Item { id, x, t, s });
    }
    if items.is_empty() {
        return Err(Error::EmptyPool);
    }
    LabeledPool::new(items)
}

fn parse_header(header: &csv::StringRecord) -> Result<usize> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let n = header.len();
    if n < 4 {
        return Err(bad(format!(
            "header needs id, features, t, s; got {n} columns"
        )));
    }
    if &header[0] != "id" || &header[n - 2] != "t" || &header[n - 1] != "s" {
        return Err(bad("header must be `id,f0,...,f{d-1},t,s`".into()));
    }
    for c in 0..n - 3 {
        if header[c + 1] != format!("f{c}") {
            return Err(bad(format!(
                "expected column f{c}, found {:?}",
                &header[c + 1]
            )));
        }
    }
    Ok(n - 3)
}

/// Disjoint `(t, s)` cells over a set of ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeIndex {
    pub by_pair: BTreeMap<(u32, u32), Vec<usize>>,
    pub targets: BTreeSet<u32>,
    pub sensitives: BTreeSet<u32>,
}

pub fn build_index(pool: &LabeledPool) -> AttributeIndex {
    index_of(pool, pool.ids().iter().copied())
}

/// Index restricted to the given ids (typically an epoch ground set).
pub fn index_of(pool: &LabeledPool, ids: impl IntoIterator<Item = usize>) -> AttributeIndex {
    let mut idx = AttributeIndex::default();
    for id in ids {
        let it = pool.item(id);
        idx.by_pair.entry((it.t, it.s)).or_default().push(id);
        idx.targets.insert(it.t);
        idx.sensitives.insert(it.s);
    }
    for list in idx.by_pair.values_mut() {
        list.sort_unstable();
    }
    idx
}

impl AttributeIndex {
    /// `T_t ∩ S_s`.
    pub fn cell(&self, t: u32, s: u32) -> &[usize] {
        self.by_pair.get(&(t, s)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Same target, any other sensitive label: `T_t ∩ S̄_s`.
    pub fn positives(&self, t: u32, s: u32) -> Vec<usize> {
        self.collect(|ct, cs| ct == t && cs != s)
    }

    /// Other target, same sensitive label: `(V ∖ T_t) ∩ S_s`.
    pub fn negatives(&self, t: u32, s: u32) -> Vec<usize> {
        self.collect(|ct, cs| ct != t && cs == s)
    }

    pub fn total(&self) -> usize {
        self.by_pair.values().map(Vec::len).sum()
    }

    fn collect(&self, keep: impl Fn(u32, u32) -> bool) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .by_pair
            .iter()
            .filter(|((t, s), _)| keep(*t, *s))
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EpochGroundSet {
    /// Sorted ids.
    pub ids: Vec<usize>,
    pub epoch: usize,
}

/// Number of ids an epoch ground set holds for a pool of `n`.
pub fn epoch_size(n: usize, fraction: f64) -> usize {
    // guards against 0.2 * 100 landing a hair above 20
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Draws `⌈fraction·|pool|⌉` ids uniformly without replacement, avoiding
/// the previous epoch's ids. When too few fresh ids remain the deficit is
/// filled from `prev`.
pub fn subsample_epoch<R: Rng + ?Sized>(
    pool: &LabeledPool,
    fraction: f64,
    prev: Option<&EpochGroundSet>,
    rng: &mut R,
) -> Result<EpochGroundSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} not in (0, 1]")));
    }
    let n = pool.len();
    let needed = epoch_size(n, fraction);
    if needed == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} selects no items from a pool of {n}"
        )));
    }
    let prev_set: HashSet<usize> = prev
        .map(|p| p.ids.iter().copied().collect())
        .unwrap_or_default();
    let fresh: Vec<usize> = (0..n).filter(|id| !prev_set.contains(id)).collect();
    let mut ids = if fresh.len() >= needed {
        rand::seq::index::sample(rng, fresh.len(), needed)
            .into_iter()
            .map(|i| fresh[i])
            .collect::<Vec<_>>()
    } else {
        let deficit = needed - fresh.len();
        let mut stale: Vec<usize> = prev_set.iter().copied().collect();
        stale.sort_unstable();
        warn!(
            "epoch ground set overlaps previous epoch by {deficit} ids (pool {n}, need {needed}, fresh {})",
            fresh.len()
        );
        let mut ids = fresh;
        ids.extend(
            rand::seq::index::sample(rng, stale.len(), deficit)
                .into_iter()
                .map(|i| stale[i]),
        );
        ids
    };
    ids.sort_unstable();
    Ok(EpochGroundSet {
        ids,
        epoch: prev.map(|p| p.epoch + 1).unwrap_or(0),
    })
}
