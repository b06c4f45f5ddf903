//! Plain minibatch SGD training, shared by base-model training and the
//! reference unlearning methods.

use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::nn::{self, Model};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Epoch cap. Zero means "do not train at all".
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once epoch-over-epoch train accuracy moves by less than this
    /// (as a fraction, 0.01 = one percentage point). `None` disables the
    /// convergence stop and always runs `epochs` epochs.
    pub stop_delta: Option<f64>,
    /// Convergence is only tested from this epoch on.
    pub min_epochs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidInput("train lr must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: Model<F>,
    pub epochs_run: usize,
    pub train_accuracy: f64,
}

/// Trains on the given rows with cross-entropy SGD. The input model is
/// consumed; callers keep their own copy when they need the original.
pub fn fit<F: Scalar>(
    model: Model<F>,
    ds: &LabeledDataset<F>,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    fit_signed(model, ds, rows, cfg, false, None)
}

/// The same loop with an optional ascent flag (gradient sign flipped) and
/// loss cap; exceeding the cap aborts with a numeric error instead of
/// running away silently.
pub(crate) fn fit_signed<F: Scalar>(
    mut model: Model<F>,
    ds: &LabeledDataset<F>,
    rows: &[usize],
    cfg: &TrainConfig,
    ascend: bool,
    loss_cap: Option<f64>,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    let mut rng = rng::stream(rng::derive(cfg.seed, "train-shuffle"), 0);
    let mut order: Vec<usize> = rows.to_vec();
    let mut previous_acc: Option<f64> = None;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let targets: Vec<Vec<F>> = batch.iter().map(|r| ds.one_hot(*r)).collect();
            let pairs: Vec<(&[F], &[F])> = batch
                .iter()
                .zip(&targets)
                .map(|(r, t)| (ds.row(*r), t.as_slice()))
                .collect();
            let (loss, mut grads) = nn::batch_loss_grad(&model, &pairs).map_err(|e| match e {
                Error::Numeric { context, detail } => Error::Numeric {
                    context: format!("epoch {epoch} batch {batch_idx}: {context}"),
                    detail,
                },
                other => other,
            })?;
            if let Some(cap) = loss_cap {
                if loss.as_f64() > cap {
                    return Err(Error::numeric(
                        format!("epoch {epoch} batch {batch_idx}"),
                        format!("loss {} exceeded cap {cap}", loss.as_f64()),
                    ));
                }
            }
            if ascend {
                grads.scale(-F::one());
            }
            nn::sgd_step(&mut model, &grads, cfg.lr)?;
        }
        epochs_run = epoch;
        if cfg.stop_delta.is_some() || epoch == cfg.epochs {
            let acc = eval::accuracy(&model, ds, rows)?;
            if let (Some(delta), Some(prev)) = (cfg.stop_delta, previous_acc) {
                if epoch >= cfg.min_epochs && (acc - prev).abs() < delta {
                    previous_acc = Some(acc);
                    break;
                }
            }
            previous_acc = Some(acc);
        }
    }

    let train_accuracy = match previous_acc {
        Some(acc) => acc,
        None => eval::accuracy(&model, ds, rows)?,
    };
    Ok(TrainOutcome {
        model,
        epochs_run,
        train_accuracy,
    })
}
