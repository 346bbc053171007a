//! Two-stage trainer. Stage 1 fits an encoder with a combinatorial loss over
//! mined batches; stage 2 freezes it and fits a one-hidden-layer classifier
//! with cross-entropy.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::EmbeddingMatrix;
use crate::loss::{LossKind, LossSpec, DEFAULT_TEMPERATURE};
use crate::mine::{mine, MineConfig, MinerKind, DEFAULT_MAX_RETRIES};
use crate::pool::{build_index, subsample_epoch, EpochGroundSet, LabeledPool, DEFAULT_FRACTION};
use crate::submodular::DEFAULT_EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Single affine map `d → m`.
    Linear,
    /// `d → h`, ReLU, `h → m`.
    Mlp1,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EncoderKind::Linear),
            "mlp1" => Ok(EncoderKind::Mlp1),
            other => Err(Error::invalid(format!("unknown encoder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs1: usize,
    pub epochs2: usize,
    pub lr1: f64,
    pub lr2: f64,
    pub temperature: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    pub miner: MinerKind,
    pub fraction: f64,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub hidden: usize,
    pub projection: usize,
    pub classifier_hidden: usize,
    /// Stage-2 minibatch size.
    pub batch2: usize,
    /// Noise standard deviation of the optional two-view augmentation.
    pub view_sigma: Option<f64>,
    pub max_retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 16,
            epochs1: 100,
            epochs2: 10,
            lr1: 0.1,
            lr2: 0.1,
            temperature: DEFAULT_TEMPERATURE,
            epsilon: DEFAULT_EPSILON,
            loss: LossKind::Flcmi,
            miner: MinerKind::Shasam,
            fraction: DEFAULT_FRACTION,
            seed: 0,
            encoder: EncoderKind::Linear,
            hidden: 32,
            projection: 16,
            classifier_hidden: 32,
            batch2: 64,
            view_sigma: None,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("hidden", self.hidden),
            ("projection", self.projection),
            ("classifier_hidden", self.classifier_hidden),
            ("batch2", self.batch2),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("lr1", self.lr1),
            ("lr2", self.lr2),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "fraction {} not in (0, 1]",
                self.fraction
            )));
        }
        if let Some(s) = self.view_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("view_sigma must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            temperature: self.temperature,
            epsilon: self.epsilon,
        }
    }

    /// Mined items per iteration: `3k`, doubled with two views.
    pub fn batch1(&self) -> usize {
        3 * self.k * if self.view_sigma.is_some() { 2 } else { 1 }
    }

    /// SHA-256 of the canonical (sorted-key) JSON encoding.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex_sha256(value.to_string().as_bytes())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Cosine annealing from `lr1` at `t = 0` towards 0 at `t = total`.
pub fn cosine_lr(lr1: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return lr1;
    }
    lr1 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()) / 2.0
}

/// Dense layer `y = W x + b` applied row-wise (`Y = X Wᵀ + 1 bᵀ`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    fn init(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Dense {
            w: DMatrix::from_fn(out, inp, |_, _| rng.random_range(-bound..bound)),
            b: DVector::from_fn(out, |_, _| rng.random_range(-bound..bound)),
        }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.w.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y
    }

    /// Gradients for `W`, `b` and the layer input, given `dY`.
    fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>) -> (Dense, DMatrix<f64>) {
        let grad = Dense {
            w: dy.transpose() * x,
            b: dy.row_sum().transpose(),
        };
        (grad, dy * &self.w)
    }

    fn step(&mut self, grad: &Dense, lr: f64) {
        self.w -= &grad.w * lr;
        self.b -= &grad.b * lr;
    }

    fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn relu_backward(pre: &DMatrix<f64>, dy: &DMatrix<f64>) -> DMatrix<f64> {
    dy.zip_map(pre, |g, p| if p > 0.0 { g } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub input: usize,
    pub layers: Vec<Dense>,
}

/// Gradient of an encoder, one [`Dense`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad(pub Vec<Dense>);

impl Encoder {
    pub fn new(
        kind: EncoderKind,
        input: usize,
        hidden: usize,
        projection: usize,
        seed: u64,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || projection == 0 {
            return Err(Error::invalid("encoder dimensions must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = match kind {
            EncoderKind::Linear => vec![Dense::init(projection, input, &mut rng)],
            EncoderKind::Mlp1 => vec![
                Dense::init(hidden, input, &mut rng),
                Dense::init(projection, hidden, &mut rng),
            ],
        };
        Ok(Encoder {
            kind,
            input,
            layers,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input {
            return Err(Error::DimensionMismatch {
                expected: self.input,
                found: x.ncols(),
                context: Some("encoder input".into()),
            });
        }
        Ok(())
    }

    /// Raw (un-normalized) outputs.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.forward_cached(x).1)
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        match self.kind {
            EncoderKind::Linear => (Vec::new(), self.layers[0].forward(x)),
            EncoderKind::Mlp1 => {
                let pre = self.layers[0].forward(x);
                let out = self.layers[1].forward(&relu(&pre));
                (vec![pre], out)
            }
        }
    }

    /// Parameter gradients given `dL/d(raw output)`.
    pub fn backward(&self, x: &DMatrix<f64>, d_out: &DMatrix<f64>) -> Result<EncoderGrad> {
        self.check_input(x)?;
        let (cache, _) = self.forward_cached(x);
        Ok(match self.kind {
            EncoderKind::Linear => EncoderGrad(vec![self.layers[0].backward(x, d_out).0]),
            EncoderKind::Mlp1 => {
                let pre = &cache[0];
                let (g2, d_hidden) = self.layers[1].backward(&relu(pre), d_out);
                let (g1, _) = self.layers[0].backward(x, &relu_backward(pre, &d_hidden));
                EncoderGrad(vec![g1, g2])
            }
        })
    }

    pub fn step(&mut self, grad: &EncoderGrad, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grad.0) {
            layer.step(g, lr);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// All parameters, layer by layer, `W` (column-major) then `b`.
    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        unflatten(&mut self.layers, flat)
    }
}

impl EncoderGrad {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.0)
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
        .collect()
}

fn unflatten(layers: &mut [Dense], flat: &[f64]) -> Result<()> {
    let n: usize = layers.iter().map(|l| l.w.len() + l.b.len()).sum();
    if flat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: flat.len(),
            context: Some("parameter vector".into()),
        });
    }
    let mut it = flat.iter().copied();
    for l in layers {
        for v in l.w.iter_mut().chain(l.b.iter_mut()) {
            *v = it.next().expect("length checked");
        }
    }
    Ok(())
}

/// Normalized embeddings of `x`. Fails on a zero output row.
pub fn encode(enc: &Encoder, x: &DMatrix<f64>) -> Result<EmbeddingMatrix> {
    let raw = enc.forward(x)?;
    EmbeddingMatrix::new(EmbeddingMatrix::new(raw)?.normalized())
}

/// Loss value and encoder gradient on one batch of raw features.
pub fn batch_loss_and_grad(
    enc: &Encoder,
    spec: &LossSpec,
    xa: &DMatrix<f64>,
    xp: &DMatrix<f64>,
    xn: &DMatrix<f64>,
) -> Result<(f64, EncoderGrad)> {
    let za = EmbeddingMatrix::new(enc.forward(xa)?)?;
    let zp = EmbeddingMatrix::new(enc.forward(xp)?)?;
    let zn = EmbeddingMatrix::new(enc.forward(xn)?)?;
    let out = spec.evaluate(&za, &zp, &zn)?;
    let x = stack_rows(&[xa, xp, xn]);
    let grad = enc.backward(&x, &out.grad)?;
    Ok((out.value, grad))
}

fn stack_rows(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts[0].ncols();
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        out.rows_mut(r0, p.nrows()).copy_from(p);
        r0 += p.nrows();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub t: u32,
    pub s: u32,
    pub short: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    pub encoder: Encoder,
    pub trace: Vec<TraceRow>,
}

/// Iterations per epoch: `⌊|V| / b⌋`, at least one.
pub fn iterations_per_epoch(n: usize, config: &TrainConfig) -> usize {
    (crate::pool::epoch_size(n, config.fraction) / config.batch1()).max(1)
}

/// Per-purpose RNG streams derived from the run seed.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub fn stage1_train(pool: &LabeledPool, config: &TrainConfig) -> Result<Stage1Output> {
    config.validate()?;
    let mut encoder = Encoder::new(
        config.encoder,
        pool.dim(),
        config.hidden,
        config.projection,
        config.seed,
    )?;
    let index = build_index(pool);
    let spec = config.loss_spec();
    let mine_cfg = MineConfig {
        k: config.k,
        epsilon: config.epsilon,
        miner: config.miner,
        max_retries: config.max_retries,
    };
    let mut rng = stream(config.seed, 1);
    let iters = iterations_per_epoch(pool.len(), config);
    let total = iters * config.epochs1;
    let view_noise = config
        .view_sigma
        .map(|s| Normal::new(0.0, s).expect("validated sigma"));
    let mut prev: Option<EpochGroundSet> = None;
    let mut trace = Vec::with_capacity(total);
    for epoch in 0..config.epochs1 {
        let ground = subsample_epoch(pool, config.fraction, prev.as_ref(), &mut rng)?;
        for iteration in 0..iters {
            let step = epoch * iters + iteration;
            let lr = cosine_lr(config.lr1, step, total);
            let emb = encode(&encoder, &pool.feature_matrix(&ground.ids))?;
            let batch = mine(&index, &ground, &emb, &mine_cfg, &mut rng)?;
            let mut xa = pool.feature_matrix(&batch.anchors);
            let mut xp = pool.feature_matrix(&batch.positives);
            let mut xn = pool.feature_matrix(&batch.negatives);
            if let Some(noise) = &view_noise {
                let mut two_views = |x: &DMatrix<f64>| {
                    let v1 = x.map(|v| v + noise.sample(&mut rng));
                    let v2 = x.map(|v| v + noise.sample(&mut rng));
                    stack_rows(&[&v1, &v2])
                };
                xa = two_views(&xa);
                xp = two_views(&xp);
                xn = two_views(&xn);
            }
            let (loss, grad) = batch_loss_and_grad(&encoder, &spec, &xa, &xp, &xn)?;
            if !loss.is_finite() || grad.flat().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration,
                    detail: format!("loss {loss}, pair {:?}", batch.pair),
                });
            }
            encoder.step(&grad, lr);
            if !encoder.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration,
                    detail: "encoder weights became non-finite".into(),
                });
            }
            trace.push(TraceRow {
                epoch,
                iteration,
                lr,
                loss,
                t: batch.pair.0,
                s: batch.pair.1,
                short: batch.short,
            });
        }
        prev = Some(ground);
    }
    Ok(Stage1Output { encoder, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub labels: Vec<u32>,
    pub hidden: Dense,
    pub out: Dense,
}

impl Classifier {
    pub fn new(input: usize, hidden: usize, labels: Vec<u32>, seed: u64) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::invalid("classifier needs at least two labels"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Classifier {
            hidden: Dense::init(hidden, input, &mut rng),
            out: Dense::init(labels.len(), hidden, &mut rng),
            labels,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.w.ncols()
    }

    pub fn logits(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: z.ncols(),
                context: Some("classifier input".into()),
            });
        }
        Ok(self.out.forward(&relu(&self.hidden.forward(z))))
    }

    /// Mean cross-entropy and the parameter gradients `(hidden, out)`.
    fn loss_and_grad(&self, z: &DMatrix<f64>, targets: &[usize]) -> (f64, Dense, Dense) {
        let pre = self.hidden.forward(z);
        let h = relu(&pre);
        let logits = self.out.forward(&h);
        let n = z.nrows() as f64;
        let mut d_logits = DMatrix::zeros(logits.nrows(), logits.ncols());
        let mut loss = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            let row = logits.row(r);
            let max = row.max();
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss += sum.ln() + max - row[y];
            for c in 0..row.len() {
                d_logits[(r, c)] =
                    ((row[c] - max).exp() / sum - if c == y { 1.0 } else { 0.0 }) / n;
            }
        }
        let (g_out, d_h) = self.out.backward(&h, &d_logits);
        let (g_hidden, _) = self.hidden.backward(z, &relu_backward(&pre, &d_h));
        (loss / n, g_hidden, g_out)
    }
}

/// Stage-2 input features: the frozen encoder's normalized embeddings, or the
/// raw features when no encoder is given (the cross-entropy baseline).
pub fn stage2_features(encoder: Option<&Encoder>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match encoder {
        Some(enc) => Ok(encode(enc, x)?.into_inner()),
        None => Ok(x.clone()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Output {
    pub classifier: Classifier,
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
}

pub fn stage2_train(
    encoder: Option<&Encoder>,
    pool: &LabeledPool,
    config: &TrainConfig,
) -> Result<Stage2Output> {
    config.validate()?;
    let z = stage2_features(encoder, &pool.all_features())?;
    let labels: Vec<u32> = pool.target_labels().into_iter().collect();
    let targets: Vec<usize> = pool
        .targets()
        .iter()
        .map(|t| labels.binary_search(t).expect("label present"))
        .collect();
    let mut clf = Classifier::new(
        z.ncols(),
        config.classifier_hidden,
        labels,
        config.seed.wrapping_add(1),
    )?;
    let mut rng = stream(config.seed, 2);
    let mut order: Vec<usize> = (0..z.nrows()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs2);
    for epoch in 0..config.epochs2 {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (iteration, chunk) in order.chunks(config.batch2).enumerate() {
            let zb = DMatrix::from_fn(chunk.len(), z.ncols(), |r, c| z[(chunk[r], c)]);
            let yb: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, g_hidden, g_out) = clf.loss_and_grad(&zb, &yb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration,
                    detail: "stage-2 cross-entropy".into(),
                });
            }
            clf.hidden.step(&g_hidden, config.lr2);
            clf.out.step(&g_out, config.lr2);
            total += loss * chunk.len() as f64;
        }
        epoch_loss.push(total / z.nrows() as f64);
    }
    Ok(Stage2Output {
        classifier: clf,
        epoch_loss,
    })
}

/// Arg-max labels; ties go to the smallest label.
pub fn predict(encoder: Option<&Encoder>, clf: &Classifier, x: &DMatrix<f64>) -> Result<Vec<u32>> {
    let logits = clf.logits(&stage2_features(encoder, x)?)?;
    Ok(logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            clf.labels[best]
        })
        .collect())
}

/// Runs `f` inside a dedicated rayon pool of `threads` workers (the global
/// pool when `None`).
pub fn run_with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

// ---- checkpoints ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub model: String,
    pub encoder_kind: Option<EncoderKind>,
    pub labels: Option<Vec<u32>>,
    pub config_hash: String,
    pub seed: u64,
    pub tensors: Vec<TensorInfo>,
}

const FORMAT: &str = "subfair-checkpoint-v1";

fn tensors(layers: &[&Dense]) -> Vec<(String, DMatrix<f64>)> {
    let mut out = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        out.push((format!("layer{i}.w"), l.w.clone()));
        out.push((
            format!("layer{i}.b"),
            DMatrix::from_column_slice(l.b.len(), 1, l.b.as_slice()),
        ));
    }
    out
}

fn write_checkpoint(
    path: &Path,
    mut header: CheckpointHeader,
    tensors: Vec<(String, DMatrix<f64>)>,
) -> Result<()> {
    header.tensors = tensors
        .iter()
        .map(|(name, m)| TensorInfo {
            name: name.clone(),
            rows: m.nrows(),
            cols: m.ncols(),
        })
        .collect();
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    for (_, m) in &tensors {
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<DMatrix<f64>>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown format {:?}",
            header.format
        )));
    }
    let mut out = Vec::new();
    for t in &header.tensors {
        let mut bytes = vec![0u8; t.rows * t.cols * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated tensor {}", t.name)))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(DMatrix::from_column_slice(t.rows, t.cols, &data));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, out))
}

fn dense_from(tensors: &[DMatrix<f64>]) -> Result<Vec<Dense>> {
    if !tensors.len().is_multiple_of(2) {
        return Err(Error::Checkpoint("tensor count must be even".into()));
    }
    tensors
        .chunks(2)
        .map(|pair| {
            let (w, b) = (&pair[0], &pair[1]);
            if b.ncols() != 1 || b.nrows() != w.nrows() {
                return Err(Error::Checkpoint(
                    "bias shape does not match weights".into(),
                ));
            }
            Ok(Dense {
                w: w.clone(),
                b: b.column(0).into_owned(),
            })
        })
        .collect()
}

pub fn save_encoder(path: &Path, enc: &Encoder, config: &TrainConfig) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        model: "encoder".into(),
        encoder_kind: Some(enc.kind),
        labels: None,
        config_hash: config.hash(),
        seed: config.seed,
        tensors: Vec::new(),
    };
    write_checkpoint(
        path,
        header,
        tensors(&enc.layers.iter().collect::<Vec<_>>()),
    )
}

pub fn load_encoder(path: &Path) -> Result<(Encoder, CheckpointHeader)> {
    let (header, ts) = read_checkpoint(path)?;
    if header.model != "encoder" {
        return Err(Error::Checkpoint(format!(
            "expected an encoder, found {:?}",
            header.model
        )));
    }
    let kind = header
        .encoder_kind
        .ok_or_else(|| Error::Checkpoint("missing encoder kind".into()))?;
    let layers = dense_from(&ts)?;
    let expected = match kind {
        EncoderKind::Linear => 1,
        EncoderKind::Mlp1 => 2,
    };
    if layers.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{kind:?} needs {expected} layers"
        )));
    }
    let input = layers[0].w.ncols();
    Ok((
        Encoder {
            kind,
            input,
            layers,
        },
        header,
    ))
}

pub fn save_classifier(path: &Path, clf: &Classifier, config: &TrainConfig) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        model: "classifier".into(),
        encoder_kind: None,
        labels: Some(clf.labels.clone()),
        config_hash: config.hash(),
        seed: config.seed,
        tensors: Vec::new(),
    };
    write_checkpoint(path, header, tensors(&[&clf.hidden, &clf.out]))
}

pub fn load_classifier(path: &Path) -> Result<(Classifier, CheckpointHeader)> {
    let (header, ts) = read_checkpoint(path)?;
    if header.model != "classifier" {
        return Err(Error::Checkpoint(format!(
            "expected a classifier, found {:?}",
            header.model
        )));
    }
    let labels = header
        .labels
        .clone()
        .ok_or_else(|| Error::Checkpoint("missing labels".into()))?;
    let mut layers = dense_from(&ts)?;
    if layers.len() != 2 || layers[1].w.nrows() != labels.len() {
        return Err(Error::Checkpoint(
            "classifier shape does not match labels".into(),
        ));
    }
    let out = layers.pop().expect("two layers");
    let hidden = layers.pop().expect("two layers");
    Ok((
        Classifier {
            labels,
            hidden,
            out,
        },
        header,
    ))
}
