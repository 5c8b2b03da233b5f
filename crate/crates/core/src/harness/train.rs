//! The three-stage training loop.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{GradBuffer, Gradients, NumericsError, Sgd, Tape};
use crate::objectives::{example_losses, total_loss, LossKind};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;

pub const METRICS_FILE: &str = "metrics.tsv";

pub fn stage_checkpoint_name(stage: u8) -> String {
    format!("stage{stage}.ckpt")
}

/// Mean losses of one epoch. A loss is averaged over the examples it applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub stage: u8,
    pub epoch: usize,
    pub losses: BTreeMap<LossKind, f64>,
    pub skipped: BTreeMap<LossKind, usize>,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn tsv_header() -> String {
        let mut cols = vec!["stage".to_string(), "epoch".to_string()];
        cols.extend(LossKind::ALL.iter().map(|k| k.name().to_string()));
        cols.push("seconds".into());
        cols.join("\t")
    }

    /// Tab-separated line; inactive losses are written as `-`.
    pub fn tsv_line(&self) -> String {
        let mut cols = vec![self.stage.to_string(), self.epoch.to_string()];
        for k in LossKind::ALL {
            cols.push(self.losses.get(&k).map_or("-".into(), |v| format!("{v:.6}")));
        }
        cols.push(format!("{:.3}", self.seconds));
        cols.join("\t")
    }
}

fn record(sums: &mut BTreeMap<LossKind, (f64, usize)>, k: LossKind, v: f64) {
    let s = sums.get_mut(&k).expect("active loss");
    s.0 += v;
    s.1 += 1;
}

fn check_finite(v: f64, ex: &Example, stage: u8, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NumericsError::NonFinite(format!("loss {v} on example {} in stage {stage} epoch {epoch}", ex.id)).into())
    }
}

/// Runs one epoch of `stage` over `data` in a seeded order.
///
/// With per-loss clipping each loss of an example is backpropagated on its
/// own tape and its gradient clipped to the configured norm before the
/// weighted sum; otherwise the weighted total is backpropagated once and the
/// optimizer clips the step.
pub fn run_epoch(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &[Example],
    stage: u8,
    epoch: usize,
) -> Result<EpochMetrics> {
    let start = Instant::now();
    let active = cfg.active(stage)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed() ^ ((stage as u64) << 32) ^ epoch as u64);
    order.shuffle(&mut rng);
    let sgd = Sgd {
        lr: cfg.lr,
        clip_norm: if cfg.clip_per_loss { 0.0 } else { cfg.clip },
    };
    let mut sums: BTreeMap<LossKind, (f64, usize)> = active.iter().map(|&k| (k, (0.0, 0))).collect();
    let mut skipped: BTreeMap<LossKind, usize> = active.iter().map(|&k| (k, 0)).collect();
    let mut buf = GradBuffer::new(&model.store);
    for batch in order.chunks(cfg.batch_size) {
        buf.reset();
        for &i in batch {
            let ex = &data[i];
            let grads = if cfg.clip_per_loss {
                let mut acc = Gradients::default();
                for &k in &active {
                    let mut tape = Tape::new();
                    let bundle = example_losses(&mut tape, model, ex, stage, &[k])?;
                    if bundle.skipped.contains(&k) {
                        *skipped.get_mut(&k).expect("active loss") += 1;
                        continue;
                    }
                    let v = bundle.parts[&k];
                    record(&mut sums, k, check_finite(tape.scalar(v), ex, stage, epoch)?);
                    let mut g = tape.backward(v)?;
                    let norm = g.norm();
                    let clip = if norm > cfg.clip { cfg.clip / norm } else { 1.0 };
                    g.scale(cfg.weights.get(k) * clip);
                    acc.add(&g);
                }
                acc
            } else {
                let mut tape = Tape::new();
                let bundle = example_losses(&mut tape, model, ex, stage, &active)?;
                for (k, v) in &bundle.parts {
                    if bundle.skipped.contains(k) {
                        *skipped.get_mut(k).expect("active loss") += 1;
                    } else {
                        record(&mut sums, *k, tape.scalar(*v));
                    }
                }
                let total = total_loss(&mut tape, &bundle, &cfg.weights)?;
                check_finite(tape.scalar(total), ex, stage, epoch)?;
                tape.backward(total)?
            };
            buf.accumulate(&grads);
        }
        if !buf.is_finite() {
            return Err(NumericsError::NonFinite(format!("gradient in stage {stage} epoch {epoch}")).into());
        }
        sgd.step(&mut model.store, &buf);
    }
    if !model.store.all_finite() {
        return Err(NumericsError::NonFinite(format!("parameters after stage {stage} epoch {epoch}")).into());
    }
    let losses = sums
        .into_iter()
        .map(|(k, (s, n))| (k, if n == 0 { 0.0 } else { s / n as f64 }))
        .collect();
    Ok(EpochMetrics {
        stage,
        epoch,
        losses,
        skipped,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains through stages 1, 2 and 3.
///
/// With an output directory, metrics are appended to `metrics.tsv` as epochs
/// finish and a checkpoint is written after each stage, so a numeric failure
/// leaves the last completed stage on disk. `on_stage` sees the model after
/// each stage.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &[Example],
    out: Option<&Path>,
    mut on_stage: impl FnMut(u8, &mut Model) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.check()?;
    if data.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let mut log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = File::create(dir.join(METRICS_FILE))?;
            writeln!(f, "{}", EpochMetrics::tsv_header())?;
            Some(f)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    for stage in 1..=3u8 {
        let epochs = cfg.epochs[stage as usize - 1];
        for epoch in 1..=epochs {
            let m = run_epoch(model, cfg, data, stage, epoch)?;
            log::info!("{}", m.tsv_line());
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", m.tsv_line())?;
                f.flush()?;
            }
            metrics.push(m);
        }
        if let Some(dir) = out {
            Checkpoint::of(model, cfg).save(&dir.join(stage_checkpoint_name(stage)))?;
        }
        on_stage(stage, model)?;
    }
    Ok(metrics)
}

/// A fresh model whose visual vocabularies come from the training images.
pub fn init_model(cfg: &TrainConfig, grammar: &crate::grammar::ToyGrammar, data: &[Example]) -> Result<Model> {
    let vsgs: Vec<_> = data.iter().map(|e| e.vsg.clone()).collect();
    let vocab = crate::vsh::build_vocabularies(&vsgs)?;
    Model::new(cfg.model.clone(), grammar.clone(), vocab)
}
