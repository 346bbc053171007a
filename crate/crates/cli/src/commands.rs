use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use subfair_core::kernel::{cosine_kernel, lifted_cosine_kernel};
use subfair_core::mine::{mine_demo as run_mine_demo, sample_pair, MineConfig};
use subfair_core::synth::{gen_fairbias, gen_two_cluster, write_sidecar};
use subfair_core::train::{
    load_classifier, load_encoder, save_classifier, save_encoder, stage1_train, stage2_train,
    CheckpointHeader,
};
use subfair_core::verify::run_all;
use subfair_core::{
    build_index, evaluate, load_pool, predict, EmbeddingMatrix, EpochGroundSet, Scenario,
    SynthSpec, TrainConfig,
};

use crate::manifest::Run;
use crate::{EvalArgs, GenArgs, MineDemoArgs, TrainArgs, TrainFlags, VerifyArgs};

/// Uses the given seed or draws a fresh one and reports it.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s} (generated)");
        s
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn gen(a: GenArgs, threads: Option<usize>) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let mut spec = SynthSpec::defaults(a.scenario, seed);
    if let Some(v) = a.alpha {
        spec.alpha = v;
    }
    if let Some(v) = a.rho {
        spec.rho = v;
    }
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.n_minor {
        spec.n_minor = v;
    }
    if let Some(v) = a.separation {
        spec.separation = v;
    }
    spec.validate()?;
    let mut run = Run::start("gen", &a.out.out, a.out.force)?;
    run.threads = threads;
    let pools = if spec.scenario == Scenario::Fairbias {
        let data = gen_fairbias(&spec)?;
        vec![("pool", data.train), ("test", data.test)]
    } else {
        vec![("pool", gen_two_cluster(&spec)?)]
    };
    for (name, pool) in &pools {
        pool.write_csv(&run.output(&format!("{name}.csv")))?;
        write_sidecar(&run.output(&format!("{name}.json")), &spec, pool)?;
        println!("{name}: {} items, dim {}", pool.len(), pool.dim());
    }
    run.finish(&spec, Some(seed))?;
    Ok(())
}

#[derive(Serialize)]
struct SelectionRow {
    id: usize,
    role: &'static str,
    t: u32,
    s: u32,
}

pub fn mine_demo(a: MineDemoArgs, threads: Option<usize>) -> Result<()> {
    let pool = load_pool(&a.pool)?;
    let seed = resolve_seed(a.seed);
    let mut run = Run::start("mine-demo", &a.out.out, a.out.force)?;
    run.threads = threads;
    run.input(&a.pool)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = build_index(&pool);
    let cfg = MineConfig {
        k: a.k,
        epsilon: a.epsilon,
        miner: a.miner,
        ..MineConfig::default()
    };
    let pair = match (a.target, a.sensitive) {
        (Some(t), Some(s)) => (t, s),
        _ => {
            let everything = EpochGroundSet {
                ids: pool.ids(),
                epoch: 0,
            };
            sample_pair(&index, &everything, &mut rng, cfg.max_retries)?
        }
    };
    let kernel = if a.lift_features > 0 {
        lifted_cosine_kernel(&pool.all_features(), a.lift_features, a.bandwidth, seed)?
    } else {
        cosine_kernel(&EmbeddingMatrix::new(pool.all_features())?, 1.0)?
    };
    let demo = run_mine_demo(&index, &kernel, pair, &cfg, a.draws, &mut rng)?;
    let b = &demo.batch;
    let roles = [
        ("anchor", &b.anchors),
        ("positive", &b.positives),
        ("negative", &b.negatives),
    ];
    let rows = roles.iter().flat_map(|(role, ids)| {
        ids.iter().map(|&id| {
            let it = pool.item(id);
            SelectionRow {
                id,
                role,
                t: it.t,
                s: it.s,
            }
        })
    });
    write_csv(&run.output("selection.csv"), rows)?;
    run.write_json("stats.json", &demo)?;
    println!(
        "pair (t={}, s={}), {} per role{}",
        pair.0,
        pair.1,
        b.anchors.len(),
        if b.short { " (short)" } else { "" }
    );
    println!(
        "anchor logdet {:.4} vs random mean {:.4}; positive max-sim {:.4} vs {:.4}; negative max-sim {:.4} vs {:.4}",
        demo.stats.anchor_logdet,
        demo.random_mean.anchor_logdet,
        demo.stats.positive_max_sim,
        demo.random_mean.positive_max_sim,
        demo.stats.negative_max_sim,
        demo.random_mean.negative_max_sim,
    );
    let config = json!({
        "pool": a.pool,
        "k": a.k,
        "miner": a.miner,
        "epsilon": a.epsilon,
        "pair": pair,
        "draws": a.draws,
        "lift_features": a.lift_features,
        "bandwidth": a.bandwidth,
    });
    run.finish(&config, Some(seed))?;
    Ok(())
}

/// Defaults, then the TOML file, then flags.
fn resolve_train_config(file: Option<&Path>, flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seed_in_file = false;
    if let Some(path) = file {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        seed_in_file = table.contains_key("seed");
        cfg = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    }
    macro_rules! apply {
        ($($f:ident),*) => { $(if let Some(v) = flags.$f { cfg.$f = v; })* };
    }
    apply!(
        k,
        loss,
        miner,
        encoder,
        epochs1,
        epochs2,
        lr1,
        lr2,
        temperature,
        epsilon,
        fraction
    );
    cfg.seed = match flags.seed {
        Some(s) => s,
        None if seed_in_file => cfg.seed,
        None => resolve_seed(None),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    #[serde(flatten)]
    config: &'a TrainConfig,
    ce_only: bool,
}

#[derive(Serialize)]
struct EpochLoss {
    epoch: usize,
    loss: f64,
}

pub fn train(a: TrainArgs, threads: Option<usize>) -> Result<()> {
    let cfg = resolve_train_config(a.config.as_deref(), &a.flags)?;
    let pool = load_pool(&a.pool)?;
    let test = a.test.as_deref().map(load_pool).transpose()?;
    let mut run = Run::start("train", &a.out.out, a.out.force)?;
    run.threads = threads;
    run.input(&a.pool)?;
    if let Some(p) = &a.test {
        run.input(p)?;
    }
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    let encoder = if a.ce_only {
        None
    } else {
        let out = stage1_train(&pool, &cfg)?;
        save_encoder(&run.output("encoder.ckpt"), &out.encoder, &cfg)?;
        write_csv(&run.output("trace.csv"), &out.trace)?;
        if let Some(last) = out.trace.last() {
            println!(
                "stage 1: {} steps, final loss {:.6}",
                out.trace.len(),
                last.loss
            );
        }
        Some(out.encoder)
    };
    let head = stage2_train(encoder.as_ref(), &pool, &cfg)?;
    save_classifier(&run.output("classifier.ckpt"), &head.classifier, &cfg)?;
    let losses = head
        .epoch_loss
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| EpochLoss { epoch, loss });
    write_csv(&run.output("stage2_loss.csv"), losses)?;
    if let Some(test) = &test {
        let preds = predict(encoder.as_ref(), &head.classifier, &test.all_features())?;
        let report = evaluate(&test.targets(), &preds, &test.sensitives())?;
        println!(
            "test: acc {:.2}, eo {:.2}, dp {:.2}, eopp {:.2}, ba {:.2}",
            report.acc, report.eo, report.dp, report.eopp, report.ba
        );
        run.write_json("report.json", &report)?;
    }
    let seed = cfg.seed;
    run.finish(
        &ResolvedTrain {
            config: &cfg,
            ce_only: a.ce_only,
        },
        Some(seed),
    )?;
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRow {
    y_true: u32,
    y_pred: u32,
    s: u32,
}

#[derive(Serialize)]
struct PredictionOut {
    id: usize,
    y_true: u32,
    y_pred: u32,
    s: u32,
}

fn check_hashes(clf: &CheckpointHeader, enc: Option<&CheckpointHeader>) {
    if let Some(e) = enc {
        if e.config_hash != clf.config_hash {
            warn!("encoder and classifier checkpoints come from different configs");
        }
    }
}

pub fn eval(a: EvalArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::start("eval", &a.out.out, a.out.force)?;
    run.threads = threads;
    let (y, preds, s, config) = if let Some(path) = &a.predictions {
        run.input(path)?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let (mut y, mut p, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
            let row = row.with_context(|| format!("{} row {}", path.display(), i + 2))?;
            y.push(row.y_true);
            p.push(row.y_pred);
            s.push(row.s);
        }
        (y, p, s, json!({ "predictions": path }))
    } else {
        let (Some(clf_path), Some(pool_path)) = (&a.classifier, &a.pool) else {
            bail!("--classifier needs --pool");
        };
        run.input(clf_path)?;
        run.input(pool_path)?;
        let (clf, clf_header) = load_classifier(clf_path)?;
        let encoder = match &a.encoder {
            Some(p) => {
                run.input(p)?;
                Some(load_encoder(p)?)
            }
            None => None,
        };
        check_hashes(&clf_header, encoder.as_ref().map(|(_, h)| h));
        let pool = load_pool(pool_path)?;
        let preds = predict(encoder.as_ref().map(|(e, _)| e), &clf, &pool.all_features())?;
        let rows = pool
            .items()
            .iter()
            .zip(&preds)
            .map(|(it, &p)| PredictionOut {
                id: it.id,
                y_true: it.t,
                y_pred: p,
                s: it.s,
            });
        write_csv(&run.output("predictions.csv"), rows)?;
        let config = json!({
            "classifier": clf_path,
            "encoder": a.encoder,
            "pool": pool_path,
            "config_hash": clf_header.config_hash,
        });
        (pool.targets(), preds, pool.sensitives(), config)
    };
    let report = evaluate(&y, &preds, &s)?;
    println!(
        "acc {:.2}, ba {:.2}, eo {:.2}, dp {:.2}, eopp {:.2}",
        report.acc, report.ba, report.eo, report.dp, report.eopp
    );
    for w in &report.warnings {
        warn!("{w}");
    }
    run.write_json("report.json", &report)?;
    run.finish(&config, None)?;
    Ok(())
}

pub fn verify(a: VerifyArgs, threads: Option<usize>) -> Result<()> {
    let mut run = a
        .out
        .as_deref()
        .map(|o| Run::start("verify", o, a.force))
        .transpose()?;
    let report = run_all(a.seed, a.epsilon)?;
    let mut stdout = std::io::stdout().lock();
    for s in &report.suites {
        writeln!(
            stdout,
            "[{}] {}: {} checks, {} failures, worst {:.3e} (tol {:.0e}), {:.2}s; {}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.checks,
            s.failures,
            s.worst,
            s.tolerance,
            s.seconds,
            s.detail
        )?;
    }
    for v in &report.logdet_variants {
        writeln!(
            stdout,
            "LogDetCMI form {}: max error {:.3e} -> {}",
            v.formula,
            v.max_abs_error,
            if v.matches {
                "matches"
            } else {
                "does not match"
            }
        )?;
    }
    if let Some(run) = run.as_mut() {
        run.threads = threads;
        run.write_json("report.json", &report)?;
    }
    if let Some(run) = run {
        run.finish(
            &json!({ "seed": a.seed, "epsilon": a.epsilon }),
            Some(a.seed),
        )?;
    }
    if !report.passed {
        bail!("verification failed");
    }
    Ok(())
}
