//! Fine-tuning on the relabeled forget set.
//!
//! The vanilla loop runs minibatch SGD against the boundary labels. Three
//! switches extend it: a remain-set loss term weighted by `phi` (optionally
//! delayed to a later epoch), and top-k soft targets built from the
//! original model's logits at the boundary points instead of hard labels.
//!
//! An epoch is one shuffled pass over the relabeled set; when the remain
//! term is active, one remain minibatch is drawn per forget batch and its
//! gradient enters scaled by `phi` only.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ForgetPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::inner::RelabeledForgetSet;
use crate::nn::{self, Model};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterConfig {
    pub lr: f64,
    /// Epochs over the relabeled set. Zero returns the original weights.
    pub epochs: usize,
    pub batch_size: usize,
    /// Remain-loss weight.
    pub phi: f64,
    pub use_remain_loss: bool,
    /// First epoch (1-based) at which the remain term is applied.
    pub remain_onset_epoch: usize,
    /// Train against top-k soft targets from the original model's logits
    /// at the boundary points instead of hard boundary labels.
    pub use_soft_labels: bool,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig {
            lr: 0.1,
            epochs: 5,
            batch_size: 32,
            phi: 0.0,
            use_remain_loss: false,
            remain_onset_epoch: 1,
            use_soft_labels: false,
            top_k: 3,
            seed: 0,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidInput("outer lr must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("outer batch size must be >= 1".into()));
        }
        if self.phi < 0.0 {
            return Err(Error::InvalidInput("phi must be >= 0".into()));
        }
        if self.top_k == 0 || self.top_k > classes {
            return Err(Error::InvalidInput(format!(
                "top_k {} outside 1..={classes}",
                self.top_k
            )));
        }
        if self.remain_onset_epoch == 0 {
            return Err(Error::InvalidInput("remain onset epoch is 1-based".into()));
        }
        if self.use_remain_loss && self.remain_onset_epoch > self.epochs {
            return Err(Error::InvalidInput(format!(
                "remain onset {} after final epoch {}",
                self.remain_onset_epoch, self.epochs
            )));
        }
        Ok(())
    }
}

/// Normalizes the k largest logits into a distribution, zeroing the rest.
/// Raw logits are divided by their sum when that sum is positive; a
/// non-positive retained sum falls back to a softmax over the retained
/// entries so the result stays a valid distribution.
pub fn topk_soft_target<F: Scalar>(logits: &[F], k: usize) -> Vec<F> {
    assert!(k >= 1 && k <= logits.len(), "top-k out of range");
    let mut order: Vec<usize> = (0..logits.len()).collect();
    // Ties keep the lower index first.
    order.sort_by(|a, b| logits[*b].partial_cmp(&logits[*a]).unwrap().then(a.cmp(b)));
    let retained = &order[..k];

    let sum: F = retained.iter().map(|i| logits[*i]).sum();
    let mut out = vec![F::zero(); logits.len()];
    if sum > F::zero() && retained.iter().all(|i| logits[*i] >= F::zero()) {
        for i in retained {
            out[*i] = logits[*i] / sum;
        }
    } else {
        let max = retained
            .iter()
            .map(|i| logits[*i])
            .fold(logits[retained[0]], F::max);
        let z: F = retained.iter().map(|i| (logits[*i] - max).exp()).sum();
        for i in retained {
            out[*i] = (logits[*i] - max).exp() / z;
        }
    }
    out
}

/// Per-epoch log row emitted by [`unlearn`].
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub forget_loss: f64,
    /// Mean remain loss over the epoch; 0 while the term is inactive.
    pub remain_loss: f64,
    pub wall_s: f64,
}

/// Fine-tunes a copy of `model_w0` on the relabeled forget set and returns
/// the unlearned weights with per-epoch logs. Deterministic per seed.
pub fn unlearn<F: Scalar>(
    model_w0: &Model<F>,
    relabeled: &RelabeledForgetSet<F>,
    ds: &LabeledDataset<F>,
    partition: &ForgetPartition,
    cfg: &OuterConfig,
) -> Result<(Model<F>, Vec<EpochLog>)> {
    let classes = model_w0.output_dim();
    cfg.validate(classes)?;
    if relabeled.samples.is_empty() {
        return Err(Error::InvalidInput("relabeled forget set is empty".into()));
    }
    let mut model = model_w0.clone();
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }

    // Targets come from the original model once, up front: hard boundary
    // labels, or top-k soft targets of its logits at the boundary points.
    let targets: Vec<Vec<F>> = relabeled
        .samples
        .iter()
        .map(|s| {
            if cfg.use_soft_labels {
                let logits = nn::forward(model_w0, &s.boundary.x_boundary)?.logits;
                Ok(topk_soft_target(&logits, cfg.top_k))
            } else {
                Ok(nn::one_hot(classes, s.boundary.y_boundary))
            }
        })
        .collect::<Result<_>>()?;

    let remain_term = cfg.use_remain_loss && cfg.phi > 0.0 && !partition.remain.is_empty();
    let mut forget_rng = rng::stream(rng::derive(cfg.seed, "outer-forget"), 0);
    let mut remain_rng = rng::stream(rng::derive(cfg.seed, "outer-remain"), 0);
    let mut order: Vec<usize> = (0..relabeled.samples.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut forget_rng);
        let remain_active = remain_term && epoch >= cfg.remain_onset_epoch;
        let mut forget_loss_sum = 0.0;
        let mut remain_loss_sum = 0.0;
        let mut batches = 0usize;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<(&[F], &[F])> = batch
                .iter()
                .map(|i| {
                    (
                        relabeled.samples[*i].features.as_slice(),
                        targets[*i].as_slice(),
                    )
                })
                .collect();
            let (f_loss, mut grads) =
                nn::batch_loss_grad(&model, &pairs).map_err(|e| at_epoch(e, epoch, batch_idx))?;
            forget_loss_sum += f_loss.as_f64();

            if remain_active {
                let picks = sample_rows(&partition.remain, cfg.batch_size, &mut remain_rng);
                let remain_targets: Vec<Vec<F>> = picks.iter().map(|r| ds.one_hot(*r)).collect();
                let remain_pairs: Vec<(&[F], &[F])> = picks
                    .iter()
                    .zip(&remain_targets)
                    .map(|(r, t)| (ds.row(*r), t.as_slice()))
                    .collect();
                let (r_loss, r_grads) = nn::batch_loss_grad(&model, &remain_pairs)
                    .map_err(|e| at_epoch(e, epoch, batch_idx))?;
                remain_loss_sum += r_loss.as_f64();
                grads.add_scaled(&r_grads, F::from_f64(cfg.phi));
            }

            nn::sgd_step(&mut model, &grads, cfg.lr)?;
            batches += 1;
        }

        logs.push(EpochLog {
            epoch,
            forget_loss: forget_loss_sum / batches as f64,
            remain_loss: if remain_active {
                remain_loss_sum / batches as f64
            } else {
                0.0
            },
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((model, logs))
}

fn at_epoch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { context, detail } => Error::Numeric {
            context: format!("epoch {epoch} batch {batch}: {context}"),
            detail,
        },
        other => other,
    }
}

fn sample_rows<R: rand::Rng>(rows: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    if rows.len() <= count {
        return rows.to_vec();
    }
    rand::seq::index::sample(rng, rows.len(), count)
        .into_iter()
        .map(|i| rows[i])
        .collect()
}
