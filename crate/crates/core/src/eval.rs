//! Forgetting/retention metrics and the membership-inference attack.
//!
//! The attack follows the loss-feature protocol: one scalar feature per
//! row (cross-entropy clipped to [-400, 400]), a balanced pool of forget
//! members against held-out non-members, and a logistic-regression
//! classifier scored with k-fold cross-validation.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{self, Model};
use crate::rng;
use crate::scalar::Scalar;

/// Attack features are losses clipped to this symmetric range.
pub const MIA_LOSS_CLIP: f64 = 400.0;

/// Full per-method metric row. `fr_ratio` is `None` when the remain
/// accuracy is zero and the ratio is undefined.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub f_acc: f64,
    pub r_acc: f64,
    pub fr_ratio: Option<f64>,
    pub mia_mean: f64,
    pub mia_std: f64,
    pub t_inner_s: f64,
    pub t_outer_s: f64,
    pub t_total_s: f64,
}

/// Fraction of rows whose argmax prediction matches the label. Argmax ties
/// break toward the lowest class index.
pub fn accuracy<F: Scalar>(model: &Model<F>, ds: &LabeledDataset<F>, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::UndefinedMetric("accuracy over empty rows".into()));
    }
    let mut correct = 0usize;
    for row in rows {
        let bundle = nn::forward(model, ds.row(*row))?;
        if bundle.predicted_class() == ds.label(*row) {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

/// `f_acc / r_acc`, undefined when `r_acc` is zero.
pub fn fr_ratio(f_acc: f64, r_acc: f64) -> Option<f64> {
    (r_acc > 0.0).then(|| f_acc / r_acc)
}

/// Clips a raw value into the attack-feature range.
pub fn clip_loss(raw: f64) -> f64 {
    raw.clamp(-MIA_LOSS_CLIP, MIA_LOSS_CLIP)
}

/// Per-row attack feature: clipped cross-entropy of the model on the row's
/// true label.
pub fn loss_feature<F: Scalar>(model: &Model<F>, ds: &LabeledDataset<F>, row: usize) -> Result<f64> {
    let bundle = nn::forward(model, ds.row(row))?;
    Ok(clip_loss(bundle.cross_entropy(&ds.one_hot(row)).as_f64()))
}

#[derive(Debug, Clone, Serialize)]
pub struct MiaResult {
    pub mean: f64,
    pub std: f64,
    pub folds_used: usize,
    /// Set when the pool was too small for the requested fold count.
    pub reduced: bool,
}

/// Membership-inference attack on precomputed scalar features. Label 1 is
/// "forget member". Pools are downsampled to balance, so 0.5 means chance.
pub fn mia_attack_features(
    forget_losses: &[f64],
    heldout_losses: &[f64],
    folds: usize,
    seed: u64,
) -> Result<MiaResult> {
    if forget_losses.is_empty() || heldout_losses.is_empty() {
        return Err(Error::UndefinedMetric("attack needs both row sets".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidInput("need at least 2 folds".into()));
    }
    let mut rng = rng::stream(rng::derive(seed, "mia"), 0);
    let m = forget_losses.len().min(heldout_losses.len());

    let balanced = |values: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let mut v = values.to_vec();
        v.shuffle(rng);
        v.truncate(m);
        v
    };
    let f = balanced(forget_losses, &mut rng);
    let h = balanced(heldout_losses, &mut rng);

    let mut pool: Vec<(f64, f64)> = f
        .into_iter()
        .map(|x| (x, 1.0))
        .chain(h.into_iter().map(|x| (x, 0.0)))
        .collect();
    pool.shuffle(&mut rng);

    let folds_used = folds.min(pool.len());
    let reduced = folds_used < folds;

    let mut accuracies = Vec::with_capacity(folds_used);
    for fold in 0..folds_used {
        let (train, val): (Vec<_>, Vec<_>) = pool
            .iter()
            .enumerate()
            .partition(|(i, _)| i % folds_used != fold);
        let train: Vec<(f64, f64)> = train.into_iter().map(|(_, p)| *p).collect();
        let val: Vec<(f64, f64)> = val.into_iter().map(|(_, p)| *p).collect();
        accuracies.push(logistic_fold_accuracy(&train, &val));
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let var = accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / accuracies.len() as f64;
    Ok(MiaResult {
        mean,
        std: var.sqrt(),
        folds_used,
        reduced,
    })
}

/// Attack wired to a model: features are clipped losses of the forget rows
/// (members) and the held-out comparison rows (non-members).
pub fn mia_attack<F: Scalar>(
    model: &Model<F>,
    ds: &LabeledDataset<F>,
    forget_rows: &[usize],
    heldout_rows: &[usize],
    folds: usize,
    seed: u64,
) -> Result<MiaResult> {
    let f: Vec<f64> = forget_rows
        .iter()
        .map(|r| loss_feature(model, ds, *r))
        .collect::<Result<_>>()?;
    let h: Vec<f64> = heldout_rows
        .iter()
        .map(|r| loss_feature(model, ds, *r))
        .collect::<Result<_>>()?;
    mia_attack_features(&f, &h, folds, seed)
}

/// Logistic regression on the standardized scalar feature: 1000 full-batch
/// gradient steps at rate 0.1, then accuracy on the validation fold.
fn logistic_fold_accuracy(train: &[(f64, f64)], val: &[(f64, f64)]) -> f64 {
    let n = train.len() as f64;
    let mean = train.iter().map(|(x, _)| x).sum::<f64>() / n;
    let sd = {
        let var = train.iter().map(|(x, _)| (x - mean) * (x - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    };
    let standardize = |x: f64| (x - mean) / sd;

    let mut w = 0.0;
    let mut b = 0.0;
    for _ in 0..1000 {
        let mut gw = 0.0;
        let mut gb = 0.0;
        for (x, y) in train {
            let z = standardize(*x);
            let p = 1.0 / (1.0 + (-(w * z + b)).exp());
            gw += (p - y) * z;
            gb += p - y;
        }
        w -= 0.1 * gw / n;
        b -= 0.1 * gb / n;
    }

    let correct = val
        .iter()
        .filter(|(x, y)| {
            let member = w * standardize(*x) + b > 0.0;
            member == (*y > 0.5)
        })
        .count();
    correct as f64 / val.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_blobs, Split};
    use crate::nn::{Activation, Layer};

    fn constant_model(bias: Vec<f64>) -> Model<f64> {
        let k = bias.len();
        Model::from_layers(vec![Layer::new(
            1,
            k,
            Activation::Identity,
            vec![0.0; k],
            bias,
        )
        .unwrap()])
        .unwrap()
    }

    fn tiny_dataset(labels: Vec<usize>, classes: usize) -> LabeledDataset<f64> {
        let n = labels.len();
        let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let splits: Vec<Split> = (0..n)
            .map(|i| if i % 2 == 0 { Split::Train } else { Split::Test })
            .collect();
        LabeledDataset::new(features, 1, classes, labels, splits).unwrap()
    }

    #[test]
    fn accuracy_all_correct_and_chance() {
        let ds = tiny_dataset(vec![0, 0, 0, 0, 1, 1, 1, 1], 2);
        let always_zero = constant_model(vec![1.0, 0.0]);
        let rows: Vec<usize> = (0..8).collect();
        // Predicting class 0 everywhere scores 1.0 on class-0 rows and 0.5
        // on the balanced set.
        assert_eq!(accuracy(&always_zero, &ds, &rows[..4]).unwrap(), 1.0);
        assert_eq!(accuracy(&always_zero, &ds, &rows).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_ties_break_to_lowest_index() {
        let ds = tiny_dataset(vec![0, 0, 1, 1], 2);
        let tied = constant_model(vec![0.0, 0.0]);
        assert_eq!(accuracy(&tied, &ds, &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&tied, &ds, &[2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let ds = make_gaussian_blobs::<f64>(3, 30, 2, 5.0, 2).unwrap();
        let model = Model::glorot(&[2, 6, 3], 2).unwrap();
        let mut rows = ds.test_rows();
        let a = accuracy(&model, &ds, &rows).unwrap();
        rows.reverse();
        assert_eq!(a, accuracy(&model, &ds, &rows).unwrap());
    }

    #[test]
    fn empty_rows_are_an_undefined_metric() {
        let ds = tiny_dataset(vec![0, 0, 1, 1], 2);
        let model = constant_model(vec![0.0, 0.0]);
        assert!(matches!(
            accuracy(&model, &ds, &[]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn reported_ratio_recomputes_from_accuracies() {
        // Two-decimal forget/remain displays of 0.09 / 0.49 recompute to
        // 0.1837; the unrounded pair behind them (0.094 / 0.49) displays
        // as 0.19.
        let ratio = fr_ratio(0.09, 0.49).unwrap();
        assert!((ratio - 0.09 / 0.49).abs() < 1e-15);
        assert!((ratio - 0.1837).abs() < 1e-4);
        let unrounded = fr_ratio(0.094, 0.49).unwrap();
        assert_eq!((unrounded * 100.0).round() / 100.0, 0.19);
        assert_eq!(fr_ratio(0.5, 0.0), None);
    }

    #[test]
    fn clip_saturates_at_bounds() {
        assert_eq!(clip_loss(1e5), 400.0);
        assert_eq!(clip_loss(-1e5), -400.0);
        assert_eq!(clip_loss(3.5), 3.5);
    }

    #[test]
    fn identical_loss_distributions_attack_at_chance() {
        let losses: Vec<f64> = (0..100).map(|i| 0.1 + 0.001 * (i % 10) as f64).collect();
        let r = mia_attack_features(&losses, &losses, 5, 7).unwrap();
        assert!((r.mean - 0.5).abs() <= 0.1, "mean {}", r.mean);
        assert_eq!(r.folds_used, 5);
        assert!(!r.reduced);
    }

    #[test]
    fn separated_losses_attack_near_perfectly() {
        let f = vec![0.0; 100];
        let h = vec![10.0; 100];
        let r = mia_attack_features(&f, &h, 5, 3).unwrap();
        assert!(r.mean >= 0.95, "mean {}", r.mean);
    }

    #[test]
    fn small_pools_reduce_folds_with_flag() {
        let f = vec![0.0, 0.1];
        let h = vec![5.0];
        let r = mia_attack_features(&f, &h, 5, 1).unwrap();
        assert!(r.reduced);
        assert_eq!(r.folds_used, 2);
    }

    #[test]
    fn folds_partition_without_overlap() {
        // Mirrors the fold construction: row i belongs to fold i % folds
        // and to no other.
        let n = 17;
        let folds = 5;
        let counts: Vec<usize> = (0..n)
            .map(|i| (0..folds).filter(|fold| i % folds == *fold).count())
            .collect();
        assert!(counts.iter().all(|c| *c == 1));
    }
}
