//! Boundary search via perturbed sign-gradient ascent.
//!
//! For each forget sample the search ascends the original model's loss in
//! input space with decaying steps `eps_t = c / t`, following
//! `sign(g + lambda * delta + gamma * z)` where `g` is the input gradient,
//! `lambda * delta` is the closeness penalty gradient, and `z` is unit
//! noise. The endpoint `x + delta` is relabeled with the original model's
//! argmax class. Setting `gamma = lambda = 0` makes the update a plain
//! deterministic sign-ascent step.
//!
//! Searches never mutate the model and run one independent RNG stream per
//! sample, so relabeling a whole forget set is parallel and its output is
//! independent of scheduling.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ForgetPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{self, Model};
use crate::rng;
use crate::scalar::Scalar;

/// Noise distribution for the perturbation term. All are unit-scale and
/// symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Laplacian,
    Cauchy,
}

impl NoiseKind {
    pub fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            NoiseKind::Gaussian => StandardNormal.sample(rng),
            NoiseKind::Laplacian => {
                // Inverse-CDF transform of Uniform(-1/2, 1/2).
                let u: f64 = rng.gen_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseKind::Cauchy => Cauchy::new(0.0, 1.0).unwrap().sample(rng),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerConfig {
    /// Step-size constant; the step at iteration t is `c / t`.
    pub c: f64,
    /// Iteration budget per sample.
    pub t_inner: usize,
    /// Noise scale, >= 0.
    pub gamma: f64,
    /// Closeness-penalty weight, >= 0.
    pub lambda: f64,
    /// Boundary threshold in (0, 1/K]. At or below it the true class is
    /// no longer strictly dominant.
    pub kappa: f64,
    /// Stop a search as soon as the true-class probability reaches kappa
    /// instead of always running the full budget.
    pub early_stop_at_kappa: bool,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl InnerConfig {
    /// Defaults calibrated on the synthetic-blob benchmark, with kappa at
    /// the tie point 1/K. The default noise scale is zero: any positive
    /// gamma drowns the exponentially small (but well-oriented) gradients
    /// of saturated samples and turns their search into a random walk, so
    /// noise is a per-run knob rather than a default.
    pub fn for_classes(classes: usize) -> Self {
        InnerConfig {
            c: 1.5,
            t_inner: 20,
            gamma: 0.0,
            lambda: 0.0,
            kappa: 1.0 / classes as f64,
            early_stop_at_kappa: false,
            noise: NoiseKind::Gaussian,
            seed: 0,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.c <= 0.0 {
            return Err(Error::InvalidInput("inner c must be > 0".into()));
        }
        if self.t_inner == 0 {
            return Err(Error::InvalidInput("t_inner must be >= 1".into()));
        }
        if self.gamma < 0.0 || self.lambda < 0.0 {
            return Err(Error::InvalidInput("gamma and lambda must be >= 0".into()));
        }
        let max_kappa = 1.0 / classes as f64;
        if self.kappa <= 0.0 || self.kappa > max_kappa + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "kappa {} outside (0, 1/K = {max_kappa}]",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Outcome of one boundary search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryResult<F> {
    /// Accumulated perturbation.
    pub delta: Vec<F>,
    /// `x + delta`, the point the label was read at.
    pub x_boundary: Vec<F>,
    /// Argmax class of the original model at the boundary point.
    pub y_boundary: usize,
    /// Whether the true-class probability ended at or below kappa.
    pub crossed: bool,
    pub steps_used: usize,
}

/// `sign(v)` with the convention `sign(0) = 0`, so zero-gradient
/// coordinates stay put.
#[inline]
pub fn sign_of<F: Scalar>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// One scaled sign step: `eps * sign(g + lambda * delta + noise)` per
/// coordinate. `noise` is the already-scaled `gamma * z` term; `None`
/// means the noiseless path.
pub fn scaled_sign_step<F: Scalar>(
    g: &[F],
    delta: &[F],
    lambda: f64,
    noise: Option<&[F]>,
    eps: f64,
) -> Vec<F> {
    let eps = F::from_f64(eps);
    let lambda = F::from_f64(lambda);
    g.iter()
        .enumerate()
        .map(|(i, gi)| {
            let mut v = *gi + lambda * delta[i];
            if let Some(z) = noise {
                v += z[i];
            }
            eps * sign_of(v)
        })
        .collect()
}

/// Step `d_t = (c/t) * sign(g + lambda * delta + gamma * z)` at iteration
/// `t >= 1`, drawing `z` from the configured noise kind. No noise is drawn
/// when `gamma = 0`, keeping that path exactly deterministic.
pub fn sign_step<F: Scalar, R: Rng>(
    g: &[F],
    delta: &[F],
    cfg: &InnerConfig,
    t: usize,
    rng: &mut R,
) -> Vec<F> {
    debug_assert!(t >= 1);
    debug_assert_eq!(g.len(), delta.len());
    let noise: Option<Vec<F>> = (cfg.gamma > 0.0).then(|| {
        g.iter()
            .map(|_| F::from_f64(cfg.gamma * cfg.noise.sample(rng)))
            .collect()
    });
    scaled_sign_step(g, delta, cfg.lambda, noise.as_deref(), cfg.c / t as f64)
}

/// Runs the boundary search for one sample. `stream_id` selects the RNG
/// stream, so results depend only on `(cfg.seed, stream_id)` and never on
/// scheduling.
pub fn search_boundary<F: Scalar>(
    model: &Model<F>,
    x: &[F],
    true_class: usize,
    cfg: &InnerConfig,
    stream_id: u64,
) -> Result<BoundaryResult<F>> {
    let classes = model.output_dim();
    cfg.validate(classes)?;
    if true_class >= classes {
        return Err(Error::InvalidInput(format!(
            "true class {true_class} >= K = {classes}"
        )));
    }
    let target = nn::one_hot::<F>(classes, true_class);
    let mut rng = rng::stream(cfg.seed, stream_id);
    let mut delta = vec![F::zero(); x.len()];
    let mut point = x.to_vec();
    let mut steps_used = 0;

    for t in 1..=cfg.t_inner {
        if cfg.early_stop_at_kappa {
            let p = nn::forward(model, &point)?.probabilities[true_class];
            if p.as_f64() <= cfg.kappa {
                break;
            }
        }
        let (_, g) = nn::loss_grad_input(model, &point, &target).map_err(|e| match e {
            Error::Numeric { context, detail } => Error::Numeric {
                context: format!("iteration {t}: {context}"),
                detail,
            },
            other => other,
        })?;
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(
                format!("iteration {t}"),
                "non-finite input gradient",
            ));
        }
        let d = sign_step(&g, &delta, cfg, t, &mut rng);
        for (di, step) in delta.iter_mut().zip(&d) {
            *di += *step;
        }
        for (pi, (di, xi)) in point.iter_mut().zip(delta.iter().zip(x)) {
            *pi = *xi + *di;
        }
        steps_used = t;
    }

    let bundle = nn::forward(model, &point)?;
    let y_boundary = bundle.predicted_class();
    let crossed = bundle.probabilities[true_class].as_f64() <= cfg.kappa;
    Ok(BoundaryResult {
        delta,
        x_boundary: point,
        y_boundary,
        crossed,
        steps_used,
    })
}

/// One relabeled forget sample: the original input paired with the class
/// found across the boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelabeledSample<F> {
    /// Row index in the source dataset.
    pub row: usize,
    pub features: Vec<F>,
    pub true_class: usize,
    pub boundary: BoundaryResult<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelabeledForgetSet<F> {
    pub samples: Vec<RelabeledSample<F>>,
    pub fraction_crossed: f64,
}

/// Runs one boundary search per forget row, in parallel, ordered by the
/// partition's forget order.
pub fn relabel_forget_set<F: Scalar>(
    model: &Model<F>,
    ds: &LabeledDataset<F>,
    partition: &ForgetPartition,
    cfg: &InnerConfig,
) -> Result<RelabeledForgetSet<F>> {
    if partition.forget.is_empty() {
        return Err(Error::InvalidRule("forget set is empty".into()));
    }
    let samples: Vec<RelabeledSample<F>> = partition
        .forget
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let x = ds.row(*row);
            let boundary = search_boundary(model, x, ds.label(*row), cfg, i as u64)
                .map_err(|e| match e {
                    Error::Numeric { context, detail } => Error::Numeric {
                        context: format!("sample {i} (row {row}): {context}"),
                        detail,
                    },
                    other => other,
                })?;
            Ok(RelabeledSample {
                row: *row,
                features: x.to_vec(),
                true_class: ds.label(*row),
                boundary,
            })
        })
        .collect::<Result<_>>()?;
    let crossed = samples.iter().filter(|s| s.boundary.crossed).count();
    Ok(RelabeledForgetSet {
        fraction_crossed: crossed as f64 / samples.len() as f64,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_blobs, select_forget, ForgetRule};
    use crate::nn::{Activation, Layer};
    use crate::train::{self, TrainConfig};

    fn cfg(c: f64, t_inner: usize, gamma: f64, lambda: f64, classes: usize) -> InnerConfig {
        InnerConfig {
            c,
            t_inner,
            gamma,
            lambda,
            kappa: 1.0 / classes as f64,
            early_stop_at_kappa: false,
            noise: NoiseKind::Gaussian,
            seed: 0,
        }
    }

    #[test]
    fn noiseless_sign_step_scales_by_c_over_t() {
        let cfg = cfg(0.1, 10, 0.0, 0.0, 2);
        let mut rng = rng::stream(0, 0);
        let d = sign_step(&[2.0, -3.0], &[0.0, 0.0], &cfg, 1, &mut rng);
        assert_eq!(d, vec![0.1, -0.1]);
        let d2 = sign_step(&[2.0, -3.0], &[0.0, 0.0], &cfg, 4, &mut rng);
        assert_eq!(d2, vec![0.025, -0.025]);
    }

    #[test]
    fn zero_gradient_stays_put() {
        let cfg = cfg(0.1, 10, 0.0, 0.0, 2);
        let mut rng = rng::stream(0, 0);
        let d = sign_step(&[0.0, 0.0], &[0.0, 0.0], &cfg, 1, &mut rng);
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn noisy_scalar_mean_matches_gaussian_sign_expectation() {
        // E[sign(1 + z)] for unit Gaussian z is erf(1/sqrt(2)) ~ 0.68269.
        let cfg = cfg(1.0, 1, 1.0, 0.0, 2);
        let mut rng = rng::stream(42, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for t in 0..n {
            let _ = t;
            let d = sign_step(&[1.0f64], &[0.0], &cfg, 1, &mut rng);
            sum += d[0];
        }
        let mean = sum / n as f64;
        assert!(
            (mean - 0.682_689_492_137_085_9).abs() < 0.005,
            "mean {mean}"
        );
    }

    #[test]
    fn step_magnitudes_are_zero_or_c_over_t() {
        let cfg = cfg(0.7, 5, 0.5, 0.1, 2);
        let mut rng = rng::stream(9, 3);
        for t in 1..=5 {
            let g = [0.3f64, -0.2, 0.0, 1.4];
            let delta = [0.05f64, -0.01, 0.0, 0.2];
            let d = sign_step(&g, &delta, &cfg, t, &mut rng);
            let eps = 0.7 / t as f64;
            for di in d {
                assert!(
                    di == 0.0 || (di.abs() - eps).abs() < 1e-15,
                    "t={t}: |{di}| != {eps}"
                );
            }
        }
    }

    /// 1-d two-logit model: logits are (w*x, 0), so p0 = sigmoid(w*x).
    fn logistic_pair(w: f64) -> Model<f64> {
        Model::from_layers(vec![Layer::new(
            1,
            2,
            Activation::Identity,
            vec![w, 0.0],
            vec![0.0, 0.0],
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn crossing_step_count_matches_harmonic_sums() {
        // With gamma = lambda = 0 and class 0 true, the input gradient sign
        // is constant (-1 here), so after t steps delta = -c * H_t. The
        // crossing happens at the first t with H_t >= x / c.
        let w = 2.0;
        let x = (9.0f64).ln() / w; // p0 = 0.9
        let c = 0.5;
        let mut cfg = cfg(c, 50, 0.0, 0.0, 2);
        cfg.early_stop_at_kappa = true;
        cfg.kappa = 0.5;
        let model = logistic_pair(w);

        let mut h = 0.0;
        let mut expected_steps = 0;
        for t in 1..=50 {
            h += 1.0 / t as f64;
            if h >= x / c {
                expected_steps = t;
                break;
            }
        }
        assert_eq!(expected_steps, 5);

        let result = search_boundary(&model, &[x], 0, &cfg, 0).unwrap();
        assert_eq!(result.steps_used, expected_steps);
        assert!(result.crossed);
        assert_eq!(result.y_boundary, 1);
    }

    #[test]
    fn already_crossed_sample_stops_at_zero_steps() {
        let model = logistic_pair(2.0);
        let mut c = cfg(0.5, 20, 0.0, 0.0, 2);
        c.early_stop_at_kappa = true;
        c.kappa = 0.5;
        // Negative input: class 0 probability is already below 1/2.
        let result = search_boundary(&model, &[-1.0], 0, &c, 0).unwrap();
        assert_eq!(result.steps_used, 0);
        assert!(result.crossed);
        assert_eq!(result.y_boundary, 1);
        assert_eq!(result.delta, vec![0.0]);
    }

    #[test]
    fn boundary_point_is_exactly_x_plus_delta() {
        let ds = make_gaussian_blobs::<f64>(3, 20, 2, 5.0, 3).unwrap();
        let model = Model::glorot(&[2, 8, 3], 3).unwrap();
        let c = cfg(0.5, 10, 0.1, 0.01, 3);
        let row = ds.train_rows()[0];
        let r = search_boundary(&model, ds.row(row), ds.label(row), &c, 4).unwrap();
        for ((xb, x), d) in r.x_boundary.iter().zip(ds.row(row)).zip(&r.delta) {
            assert_eq!(*xb, *x + *d);
        }
    }

    #[test]
    fn relabel_preserves_cardinality_and_order() {
        let ds = make_gaussian_blobs::<f64>(3, 50, 2, 5.0, 8).unwrap();
        let model = Model::glorot(&[2, 8, 3], 8).unwrap();
        let part = select_forget(&ds, ForgetRule::ClassFraction { class: 0, fraction: 1.0 }, 8)
            .unwrap();
        let c = cfg(1.0, 5, 1e-4, 0.0, 3);
        let relabeled = relabel_forget_set(&model, &ds, &part, &c).unwrap();
        assert_eq!(relabeled.samples.len(), part.forget.len());
        let rows: Vec<usize> = relabeled.samples.iter().map(|s| s.row).collect();
        assert_eq!(rows, part.forget);
    }

    #[test]
    fn relabel_is_deterministic_under_parallelism() {
        let ds = make_gaussian_blobs::<f64>(3, 60, 2, 5.0, 13).unwrap();
        let model = Model::glorot(&[2, 8, 3], 13).unwrap();
        let part = select_forget(&ds, ForgetRule::ClassFraction { class: 1, fraction: 1.0 }, 13)
            .unwrap();
        let c = cfg(1.0, 8, 0.5, 1e-3, 3);
        let a = relabel_forget_set(&model, &ds, &part, &c).unwrap();
        let b = relabel_forget_set(&model, &ds, &part, &c).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| relabel_forget_set(&model, &ds, &part, &c).unwrap());
        assert_eq!(a, single);
    }

    #[test]
    fn trained_blobs_cross_with_default_config() {
        let ds = make_gaussian_blobs::<f64>(3, 200, 2, 5.0, 0).unwrap();
        let model = Model::glorot(&[2, 16, 16, 3], 0).unwrap();
        let trained = train::fit(
            model,
            &ds,
            &ds.train_rows(),
            &TrainConfig {
                epochs: 200,
                lr: 0.1,
                batch_size: 32,
                seed: 1,
                stop_delta: Some(0.01),
                min_epochs: 10,
            },
        )
        .unwrap()
        .model;
        let part = select_forget(&ds, ForgetRule::ClassFraction { class: 0, fraction: 1.0 }, 0)
            .unwrap();
        let cfg = InnerConfig::for_classes(3);
        let relabeled = relabel_forget_set(&trained, &ds, &part, &cfg).unwrap();
        assert!(
            relabeled.fraction_crossed >= 0.95,
            "crossed {}",
            relabeled.fraction_crossed
        );
        for s in &relabeled.samples {
            if s.boundary.crossed {
                assert_ne!(s.boundary.y_boundary, s.true_class);
            }
        }
    }

    #[test]
    fn all_samples_already_at_kappa_report_full_crossing() {
        // A model that ignores its input sends every class-0 sample across
        // immediately: p0 = softmax(0, 5) < 1/2.
        let model = Model::from_layers(vec![Layer::new(
            1,
            2,
            Activation::Identity,
            vec![0.0, 0.0],
            vec![0.0, 5.0],
        )
        .unwrap()])
        .unwrap();
        let features = vec![0.1, 0.2, 0.3, 0.4];
        let ds = LabeledDataset::new(
            features.clone(),
            1,
            2,
            vec![0, 0, 1, 1],
            vec![
                crate::data::Split::Train,
                crate::data::Split::Test,
                crate::data::Split::Train,
                crate::data::Split::Test,
            ],
        )
        .unwrap();
        let part = select_forget(&ds, ForgetRule::ClassFraction { class: 0, fraction: 1.0 }, 0)
            .unwrap();
        let mut c = cfg(0.5, 10, 0.0, 0.0, 2);
        c.early_stop_at_kappa = true;
        let relabeled = relabel_forget_set(&model, &ds, &part, &c).unwrap();
        assert_eq!(relabeled.fraction_crossed, 1.0);
        assert!(relabeled.samples.iter().all(|s| s.boundary.steps_used == 0));
    }
}
