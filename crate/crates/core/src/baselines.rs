//! Reference unlearning methods: Retrain, Finetune, NegGrad, CFK, EUK.
//!
//! All methods leave the original model untouched and return a new one.
//! Retrain and EUK train fresh layers from scratch for the full epoch
//! budget: the accuracy-delta convergence stop saturates within a few
//! epochs on separable data while stray argmax slivers of the removed
//! class can survive, and the gold-standard comparator is the fully
//! trained one. Finetune, NegGrad and CFK run their (short) fixed
//! budgets. The `k` in CFK/EUK counts whole affine layers from the input
//! side.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ForgetPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng;
use crate::scalar::Scalar;
use crate::train::{self, TrainConfig};

/// NegGrad ascends an unbounded objective; training aborts once the
/// forget-set batch loss passes this cap (ten times the attack-feature
/// clip bound).
pub const NEG_GRAD_LOSS_CAP: f64 = 4000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Retrain,
    Finetune,
    NegGrad,
    Cfk,
    Euk,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] = [
        BaselineMethod::Retrain,
        BaselineMethod::Finetune,
        BaselineMethod::NegGrad,
        BaselineMethod::Cfk,
        BaselineMethod::Euk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Retrain => "retrain",
            BaselineMethod::Finetune => "finetune",
            BaselineMethod::NegGrad => "neggrad",
            BaselineMethod::Cfk => "cfk",
            BaselineMethod::Euk => "euk",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown method {s:?}; valid methods: retrain, finetune, neggrad, cfk, euk"
                ))
            })
    }
}

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Fixed epoch budget (full from-scratch budget for Retrain/EUK,
    /// short budgets for the others).
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Layers frozen from the input side for CFK/EUK.
    pub k_layers: usize,
    pub seed: u64,
}

/// Network shape used when a method needs a fresh initialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl ArchSpec {
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.classes);
        dims
    }

    pub fn build<F: Scalar>(&self, seed: u64) -> Result<Model<F>> {
        Model::glorot(&self.dims(), seed)
    }
}

fn fixed_cfg(cfg: &BaselineConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        stop_delta: None,
        min_epochs: 0,
    }
}

/// Gold standard: train from scratch on the remain set only.
pub fn retrain<F: Scalar>(
    ds: &LabeledDataset<F>,
    partition: &ForgetPartition,
    arch: &ArchSpec,
    cfg: &BaselineConfig,
) -> Result<Model<F>> {
    if partition.remain.is_empty() {
        return Err(Error::InvalidInput("remain set is empty".into()));
    }
    let fresh = arch.build(rng::derive(cfg.seed, "reinit"))?;
    Ok(train::fit(fresh, ds, &partition.remain, &fixed_cfg(cfg))?.model)
}

/// Continue SGD from the original weights on the remain set.
pub fn finetune<F: Scalar>(
    model_w0: &Model<F>,
    ds: &LabeledDataset<F>,
    partition: &ForgetPartition,
    cfg: &BaselineConfig,
) -> Result<Model<F>> {
    if cfg.epochs == 0 {
        return Ok(model_w0.clone());
    }
    Ok(train::fit(model_w0.clone(), ds, &partition.remain, &fixed_cfg(cfg))?.model)
}

/// Gradient ascent on the forget set. Divergence is detected via
/// [`NEG_GRAD_LOSS_CAP`] and reported as a numeric error.
pub fn neg_grad<F: Scalar>(
    model_w0: &Model<F>,
    ds: &LabeledDataset<F>,
    partition: &ForgetPartition,
    cfg: &BaselineConfig,
) -> Result<Model<F>> {
    if cfg.epochs == 0 {
        return Ok(model_w0.clone());
    }
    Ok(train::fit_signed(
        model_w0.clone(),
        ds,
        &partition.forget,
        &fixed_cfg(cfg),
        true,
        Some(NEG_GRAD_LOSS_CAP),
    )?
    .model)
}

fn check_k<F: Scalar>(model: &Model<F>, k: usize) -> Result<()> {
    if k >= model.layer_count() {
        return Err(Error::InvalidInput(format!(
            "k_layers {k} must be below the layer count {}",
            model.layer_count()
        )));
    }
    Ok(())
}

/// Catastrophic-forgetting-k: freeze the first k layers of the original
/// model and fine-tune the rest on the remain set.
pub fn cfk<F: Scalar>(
    model_w0: &Model<F>,
    ds: &LabeledDataset<F>,
    partition: &ForgetPartition,
    cfg: &BaselineConfig,
) -> Result<Model<F>> {
    check_k(model_w0, cfg.k_layers)?;
    let mut model = model_w0.clone();
    model.freeze_first(cfg.k_layers)?;
    if cfg.epochs == 0 {
        return Ok(model);
    }
    Ok(train::fit(model, ds, &partition.remain, &fixed_cfg(cfg))?.model)
}

/// Exact-unlearning-k: keep the first k layers of the original model
/// frozen, reinitialize everything after them from the seed, and train the
/// reinitialized part on the remain set. With k = 0 this is exactly
/// [`retrain`].
pub fn euk<F: Scalar>(
    model_w0: &Model<F>,
    ds: &LabeledDataset<F>,
    partition: &ForgetPartition,
    arch: &ArchSpec,
    cfg: &BaselineConfig,
) -> Result<Model<F>> {
    check_k(model_w0, cfg.k_layers)?;
    if model_w0.layer_count() != arch.dims().len() - 1 {
        return Err(Error::InvalidInput("arch spec does not match model".into()));
    }
    let mut model: Model<F> = arch.build(rng::derive(cfg.seed, "reinit"))?;
    for i in 0..cfg.k_layers {
        model.replace_layer(i, model_w0.layers()[i].clone())?;
    }
    model.freeze_first(cfg.k_layers)?;
    Ok(train::fit(model, ds, &partition.remain, &fixed_cfg(cfg))?.model)
}
