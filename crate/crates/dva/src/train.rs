//! Minibatch SGD with momentum: batch sampling, the update rule, step
//! learning-rate decay, periodic validation, checkpointing and CSV logging.
//!
//! A run is deterministic for a fixed config, seed and thread count: batches
//! are drawn from a counter RNG on the coordinating thread, workers receive
//! fixed index ranges, and partial gradients are merged in range order.
//! Resuming from a checkpoint replays the RNG to where the interrupted run
//! left off, so a resumed run matches an uninterrupted one bit for bit.

use std::io::Write;
use std::path::PathBuf;

use crate::data::{prepare_sample, DataConfig, ManifestRecord, Split};
use crate::metrics::{cc, format_sig6, nss, ContinuousMap, FixationMap, SaliencyMap};
use crate::network::{backward, forward, visit_params_mut, NetworkGrads, NetworkState};
use crate::objective::{combined_objective, LossBreakdown};
use crate::rng::Rng;
use crate::tensor::Tensor4;
use crate::weights::save_checkpoint;
use crate::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Total iterations the run should reach; resuming continues toward the
    /// same target.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Learning-rate multiplier applied every `lr_decay_every` iterations
    /// (0 disables decay).
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Validation cadence in iterations; 0 disables.
    pub validate_every: usize,
    /// Checkpoint cadence in iterations; 0 disables periodic saves (a final
    /// checkpoint is still written when a path is configured).
    pub checkpoint_every: usize,
    /// Worker threads for per-batch gradients. Results are deterministic per
    /// thread count; changing it may move sums by rounding.
    pub threads: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch_size: 16,
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_decay_factor: 0.1,
            lr_decay_every: 2000,
            validate_every: 100,
            checkpoint_every: 500,
            threads: 1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "learning-rate decay factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        Ok(())
    }
}

/// Learning rate for a 0-based iteration index under the step schedule.
pub fn learning_rate_at(cfg: &TrainConfig, iter: usize) -> f64 {
    if cfg.lr_decay_every == 0 {
        return cfg.learning_rate;
    }
    cfg.learning_rate * cfg.lr_decay_factor.powi((iter / cfg.lr_decay_every) as i32)
}

/// One sample ready for the network: normalized image, target map and the
/// fixations mapped to the same resolution.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub image: Tensor4,
    pub gt: Tensor4,
    pub fixations: Vec<(usize, usize)>,
}

/// Prepares every manifest record of one split at the configured working
/// resolution.
pub fn items_for_split(
    records: &[ManifestRecord],
    split: Split,
    cfg: &DataConfig,
) -> Result<Vec<TrainItem>> {
    records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let s = prepare_sample(r, cfg)?;
            Ok(TrainItem {
                id: s.id,
                image: s.image,
                gt: s.gt,
                fixations: s.fixations,
            })
        })
        .collect()
}

/// Draws `batch_size` item indices sharing one resolution: a uniform anchor
/// draw picks the dims bucket, then the batch fills from that bucket with
/// replacement. Always consumes exactly `1 + batch_size` RNG values so
/// resume replay stays aligned.
pub(crate) fn sample_batch(items: &[TrainItem], batch_size: usize, rng: &mut Rng) -> Vec<usize> {
    let anchor = rng.next_below(items.len());
    let dims = {
        let s = items[anchor].image.shape();
        (s.h, s.w)
    };
    let bucket: Vec<usize> = (0..items.len())
        .filter(|&i| {
            let s = items[i].image.shape();
            (s.h, s.w) == dims
        })
        .collect();
    (0..batch_size)
        .map(|_| bucket[rng.next_below(bucket.len())])
        .collect()
}

/// One SGD-with-momentum update over every parameter:
/// `v = momentum * v - lr * (g + weight_decay * theta)`, `theta += v`.
pub fn sgd_step(
    state: &mut NetworkState,
    grads: &NetworkGrads,
    velocity: &mut NetworkGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    visit_params_mut(state, grads, velocity, |theta, g, v| {
        for i in 0..theta.len() {
            let step = g[i] + weight_decay * theta[i];
            v[i] = momentum * v[i] - lr * step;
            theta[i] += v[i];
        }
    });
}

fn batch_gradients(
    state: &NetworkState,
    items: &[TrainItem],
    batch: &[usize],
    threads: usize,
    deep_supervision: bool,
) -> Result<(NetworkGrads, LossBreakdown)> {
    let branches = state.spec.branches();
    let compute_chunk = |chunk: &[usize]| -> Result<(NetworkGrads, LossBreakdown)> {
        let mut grads = NetworkGrads::zeros_like(state);
        let mut loss = LossBreakdown::zeros(branches);
        for &i in chunk {
            let item = &items[i];
            let trace = forward(state, &item.image)?;
            let (item_loss, d_branch, d_fused) =
                combined_objective(&trace, &item.gt, deep_supervision)?;
            let item_grads = backward(state, &trace, &d_branch, &d_fused)?;
            grads.add_scaled(&item_grads, 1.0)?;
            loss.add_scaled(&item_loss, 1.0);
        }
        Ok((grads, loss))
    };

    let parts: Vec<Result<(NetworkGrads, LossBreakdown)>> = if threads <= 1 {
        vec![compute_chunk(batch)]
    } else {
        let chunk_size = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk_size)
                .map(|chunk| scope.spawn(move || compute_chunk(chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };

    let inv = 1.0 / batch.len() as f64;
    let mut grads = NetworkGrads::zeros_like(state);
    let mut loss = LossBreakdown::zeros(branches);
    for part in parts {
        let (g, l) = part?;
        grads.add_scaled(&g, inv)?;
        loss.add_scaled(&l, inv);
    }
    Ok((grads, loss))
}

fn check_finite_loss(loss: &LossBreakdown, iter: usize, ids: &[String]) -> Result<()> {
    let bad = !loss.combined.is_finite()
        || !loss.fusion.is_finite()
        || loss.branch.iter().any(|v| !v.is_finite());
    if bad {
        return Err(Error::Numeric(format!(
            "non-finite loss at iteration {iter} (batch: {})",
            ids.join(", ")
        )));
    }
    Ok(())
}

fn validation_scores(
    state: &NetworkState,
    val_items: &[TrainItem],
) -> Result<(Option<f64>, Option<f64>)> {
    let mut nss_vals = Vec::new();
    let mut cc_vals = Vec::new();
    for item in val_items {
        let trace = forward(state, &item.image)?;
        let fused = trace.fused_map.map_unary(|v| v.clamp(0.0, 1.0));
        let s = fused.shape();
        let sal = SaliencyMap::from_tensor(&fused)?;
        match FixationMap::new(s.h, s.w, &item.fixations).and_then(|fix| nss(&sal, &fix)) {
            Ok(v) => nss_vals.push(v),
            Err(e) => eprintln!("warning: validation NSS skipped for {}: {e}", item.id),
        }
        match ContinuousMap::from_tensor(&item.gt).and_then(|gt| cc(&sal, &gt)) {
            Ok(v) => cc_vals.push(v),
            Err(e) => eprintln!("warning: validation CC skipped for {}: {e}", item.id),
        }
    }
    let mean = |v: &[f64]| {
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok((mean(&nss_vals), mean(&cc_vals)))
}

/// What one iteration produced, mirroring a loss CSV row.
#[derive(Debug, Clone)]
pub struct IterationLog {
    /// 1-based iteration number.
    pub iter: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Mean validation `(NSS, CC)` when this iteration validated.
    pub val: Option<(Option<f64>, Option<f64>)>,
}

/// Where training artifacts land; `None` disables that artifact.
#[derive(Debug, Clone, Default)]
pub struct TrainSinks {
    /// Per-iteration loss CSV; truncated on a fresh run, appended on resume.
    pub loss_csv: Option<PathBuf>,
    /// Checkpoint file, overwritten in place at the configured cadence and
    /// after the final iteration.
    pub checkpoint: Option<PathBuf>,
}

fn csv_header(branches: usize) -> String {
    let mut header = String::from("iter,lr");
    for b in 1..=branches {
        header.push_str(&format!(",branch_{b}"));
    }
    header.push_str(",fusion,combined,val_nss,val_cc\n");
    header
}

fn csv_row(log: &IterationLog) -> String {
    let mut row = format!("{},{}", log.iter, format_sig6(log.lr));
    for b in &log.loss.branch {
        row.push(',');
        row.push_str(&format_sig6(*b));
    }
    row.push(',');
    row.push_str(&format_sig6(log.loss.fusion));
    row.push(',');
    row.push_str(&format_sig6(log.loss.combined));
    let (val_nss, val_cc) = log.val.unwrap_or((None, None));
    for cell in [val_nss, val_cc] {
        row.push(',');
        if let Some(v) = cell {
            row.push_str(&format_sig6(v));
        }
    }
    row.push('\n');
    row
}

/// Runs iterations `start_iter..cfg.iterations`, updating `state` and
/// `velocity` in place, and returns one log entry per executed iteration.
/// `start_iter` is the completed-iteration count from a checkpoint (0 for a
/// fresh run).
pub fn train(
    state: &mut NetworkState,
    velocity: &mut NetworkGrads,
    start_iter: usize,
    items: &[TrainItem],
    val_items: &[TrainItem],
    cfg: &TrainConfig,
    sinks: &TrainSinks,
) -> Result<Vec<IterationLog>> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Data("no training items".into()));
    }
    let branches = state.spec.branches();

    let mut csv = match &sinks.loss_csv {
        Some(path) => {
            let mut file = if start_iter == 0 {
                std::fs::File::create(path).map_err(|e| Error::io(path, e))?
            } else {
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?
            };
            if start_iter == 0 {
                file.write_all(csv_header(branches).as_bytes())
                    .map_err(|e| Error::io(path, e))?;
            }
            Some((file, path))
        }
        None => None,
    };

    // Replay the sampler to where the interrupted run stopped; each
    // iteration consumes exactly 1 + batch_size values.
    let mut rng = Rng::new(cfg.seed);
    for _ in 0..start_iter.saturating_mul(1 + cfg.batch_size) {
        rng.next_u64();
    }

    let mut logs = Vec::new();
    let mut checkpointed_at = start_iter;
    for idx in start_iter..cfg.iterations {
        let iter = idx + 1;
        let lr = learning_rate_at(cfg, idx);
        let batch = sample_batch(items, cfg.batch_size, &mut rng);
        let (grads, loss) =
            batch_gradients(state, items, &batch, cfg.threads, state.spec.deep_supervision)?;
        let ids: Vec<String> = batch.iter().map(|&i| items[i].id.clone()).collect();
        check_finite_loss(&loss, iter, &ids)?;
        sgd_step(state, &grads, velocity, lr, cfg.momentum, cfg.weight_decay);

        let val = if cfg.validate_every > 0 && iter % cfg.validate_every == 0 && !val_items.is_empty()
        {
            Some(validation_scores(state, val_items)?)
        } else {
            None
        };

        let log = IterationLog {
            iter,
            lr,
            loss,
            val,
        };
        if let Some((file, path)) = &mut csv {
            file.write_all(csv_row(&log).as_bytes())
                .map_err(|e| Error::io(&**path, e))?;
        }
        logs.push(log);

        if let Some(path) = &sinks.checkpoint {
            if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 {
                save_checkpoint(state, velocity, iter as u64, path)?;
                checkpointed_at = iter;
            }
        }
    }

    if let Some(path) = &sinks.checkpoint {
        if checkpointed_at != cfg.iterations && cfg.iterations > start_iter {
            save_checkpoint(state, velocity, cfg.iterations as u64, path)?;
        }
    }
    Ok(logs)
}
