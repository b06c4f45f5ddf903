//! Numerical verification of the method's mathematical backbone.
//!
//! Four checks: the closed form for the expected sign of a noised
//! gradient coordinate, the ascent alignment of the perturbed sign step,
//! the iteration scaling of perturbed sign descent on a smooth objective,
//! and the exact equivalence between the perturbation-space update and the
//! plain input-space sign update when noise and closeness terms are off.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inner::{self, NoiseKind};
use crate::nn::{self, Model};
use crate::rng;
use crate::scalar::Scalar;

/// Error function, accurate to about 1e-15.
///
/// Uses the non-alternating series
/// `erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n (2x^2)^n * x / (2n+1)!!`,
/// which has no cancellation; |x| >= 6 saturates to +-1 well below the
/// accuracy target.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let ax = x.abs();
    if ax >= 6.0 {
        return 1.0_f64.copysign(x);
    }
    let x2 = ax * ax;
    let mut term = ax;
    let mut sum = ax;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2.0 * f64::from(n) + 1.0);
        sum += term;
        if term < sum * 1e-17 || n > 500 {
            break;
        }
    }
    let value = 2.0 / std::f64::consts::PI.sqrt() * (-x2).exp() * sum;
    value.copysign(x)
}

/// Closed-form `E[sign(g + gamma * z)]` for unit Gaussian noise:
/// `erf(g / (gamma * sqrt(2)))`.
pub fn expected_sign(g: f64, gamma: f64) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    erf(g / (gamma * std::f64::consts::SQRT_2))
}

/// The same expectation for each supported noise kind, via its CDF.
pub fn expected_sign_for(kind: NoiseKind, g: f64, gamma: f64) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    let r = g / gamma;
    match kind {
        NoiseKind::Gaussian => erf(r / std::f64::consts::SQRT_2),
        NoiseKind::Laplacian => r.signum() * (1.0 - (-r.abs()).exp()),
        NoiseKind::Cauchy => 2.0 / std::f64::consts::PI * r.atan(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AscentConfig {
    pub trials: usize,
    pub dim: usize,
    pub gammas: Vec<f64>,
    /// Monte-Carlo draws per trial; at least 1e5 for the stated bounds.
    pub draws: usize,
    pub seed: u64,
    pub noise: NoiseKind,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            trials: 20,
            dim: 20,
            gammas: vec![0.1, 1.0, 10.0],
            draws: 100_000,
            seed: 0,
            noise: NoiseKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AscentRow {
    pub gamma: f64,
    pub grad_l2: f64,
    /// Monte-Carlo mean of the per-draw alignment `d . g`.
    pub mean_alignment: f64,
    /// Standard error of that mean.
    pub alignment_se: f64,
    /// Largest per-coordinate gap between the empirical sign mean and the
    /// closed form.
    pub max_coord_err: f64,
    /// The allowed per-coordinate gap, `5 / sqrt(draws)`.
    pub coord_bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AscentReport {
    pub rows: Vec<AscentRow>,
    pub all_pass: bool,
}

/// Monte-Carlo check of ascent alignment: for nonzero gradients the mean
/// alignment must exceed four standard errors above zero and every
/// coordinate's sign mean must match the closed form within
/// `5 / sqrt(draws)`; the zero gradient must stay within four standard
/// errors of zero.
pub fn verify_ascent(cfg: &AscentConfig) -> Result<AscentReport> {
    if cfg.draws < 100_000 {
        return Err(Error::InvalidInput("need at least 1e5 draws".into()));
    }
    let mut rows = Vec::new();
    for (trial, &gamma) in (0..cfg.trials).flat_map(|t| cfg.gammas.iter().map(move |g| (t, g))) {
        let mut rng = rng::stream(rng::derive(cfg.seed, "ascent"), trial as u64);
        // Random gradient; the first trial of each gamma checks g = 0.
        let g: Vec<f64> = if trial == 0 {
            vec![0.0; cfg.dim]
        } else {
            (0..cfg.dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        rows.push(ascent_row(&g, gamma, cfg, &mut rng));
    }
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(AscentReport { rows, all_pass })
}

/// One Monte-Carlo cell of the ascent check, reusing the inner-loop step.
pub fn ascent_row<R: Rng>(g: &[f64], gamma: f64, cfg: &AscentConfig, rng: &mut R) -> AscentRow {
    let dim = g.len();
    let step_cfg = inner::InnerConfig {
        c: 1.0,
        t_inner: 1,
        gamma,
        lambda: 0.0,
        kappa: 0.5,
        early_stop_at_kappa: false,
        noise: cfg.noise,
        seed: 0,
    };
    let zeros = vec![0.0f64; dim];
    let mut sum_align = 0.0;
    let mut sum_align_sq = 0.0;
    let mut coord_sums = vec![0.0f64; dim];
    for _ in 0..cfg.draws {
        let d = inner::sign_step(g, &zeros, &step_cfg, 1, rng);
        let a: f64 = d.iter().zip(g).map(|(di, gi)| di * gi).sum();
        sum_align += a;
        sum_align_sq += a * a;
        for (cs, di) in coord_sums.iter_mut().zip(&d) {
            *cs += di;
        }
    }
    let n = cfg.draws as f64;
    let mean_alignment = sum_align / n;
    let var = (sum_align_sq / n - mean_alignment * mean_alignment).max(0.0);
    let alignment_se = (var / n).sqrt();

    let coord_bound = 5.0 / n.sqrt();
    let mut max_coord_err = 0.0f64;
    for (cs, gi) in coord_sums.iter().zip(g) {
        let expected = expected_sign_for(cfg.noise, *gi, gamma);
        max_coord_err = max_coord_err.max((cs / n - expected).abs());
    }

    let grad_l2 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let aligned = if grad_l2 > 0.0 {
        mean_alignment > 4.0 * alignment_se
    } else {
        mean_alignment.abs() <= 4.0 * alignment_se
    };
    AscentRow {
        gamma,
        grad_l2,
        mean_alignment,
        alignment_se,
        max_coord_err,
        coord_bound,
        pass: aligned && max_coord_err <= coord_bound,
    }
}

type ValueGradFn = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync>;

/// A differentiable objective with a known gradient-Lipschitz constant.
pub struct SmoothObjective {
    pub dim: usize,
    pub lipschitz: f64,
    eval: ValueGradFn,
}

impl SmoothObjective {
    pub fn new(
        dim: usize,
        lipschitz: f64,
        eval: impl Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        SmoothObjective {
            dim,
            lipschitz,
            eval: Box::new(eval),
        }
    }

    /// `0.5 * |x|^2`, gradient `x`, Lipschitz constant 1.
    pub fn quadratic(dim: usize) -> Self {
        Self::new(dim, 1.0, |x| {
            let value = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
            (value, x.to_vec())
        })
    }

    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.eval)(x)
    }

    /// Largest relative gap between the analytic gradient and central
    /// finite differences at `x`.
    pub fn gradient_gap(&self, x: &[f64]) -> f64 {
        let h = 1e-6;
        let (_, g) = self.eval(x);
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            let mut xp = x.to_vec();
            xp[i] += h;
            let (fp, _) = self.eval(&xp);
            xp[i] -= 2.0 * h;
            let (fm, _) = self.eval(&xp);
            let numeric = (fp - fm) / (2.0 * h);
            let denom = numeric.abs().max(g[i].abs()).max(1e-8);
            worst = worst.max((numeric - g[i]).abs() / denom);
        }
        worst
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    /// `min`-so-far of the gradient l1 norm, per iteration.
    pub best_grad_l1: Vec<f64>,
    /// First iteration at which the target was met.
    pub hit: Option<usize>,
    pub epsilon: f64,
    pub budget: usize,
    pub pass: bool,
}

/// Minimizes the objective with perturbed sign descent, `eps_t = c/t`, and
/// reports when the min-so-far gradient l1 norm falls below `epsilon`.
pub fn verify_convergence(
    obj: &SmoothObjective,
    c: f64,
    gamma: f64,
    budget: usize,
    epsilon: f64,
    seed: u64,
) -> ConvergenceReport {
    let mut rng = rng::stream(rng::derive(seed, "converge"), 0);
    // Start in the unit ball.
    let mut x: Vec<f64> = {
        let v: Vec<f64> = (0..obj.dim)
            .map(|_| NoiseKind::Gaussian.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let radius: f64 = rng.gen_range(0.0..1.0f64).powf(1.0 / obj.dim as f64);
        v.into_iter().map(|a| a * radius / norm).collect()
    };

    let mut best = f64::INFINITY;
    let mut best_grad_l1 = Vec::with_capacity(budget);
    let mut hit = None;
    for t in 1..=budget {
        let (_, g) = obj.eval(&x);
        let l1: f64 = g.iter().map(|v| v.abs()).sum();
        best = best.min(l1);
        best_grad_l1.push(best);
        if best <= epsilon {
            hit = Some(t);
            break;
        }
        let eps_t = c / t as f64;
        for (xi, gi) in x.iter_mut().zip(&g) {
            let z = gamma * NoiseKind::Gaussian.sample(&mut rng);
            // Descent on the objective = ascent on its negation.
            *xi -= eps_t * inner::sign_of(gi + z);
        }
    }
    ConvergenceReport {
        best_grad_l1,
        hit,
        epsilon,
        budget,
        pass: hit.is_some(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub dims: Vec<usize>,
    /// Iterations-to-target, averaged over seeds, per dimension.
    pub mean_iterations: Vec<f64>,
    pub slope: f64,
    pub max_slope: f64,
    pub pass: bool,
}

/// Measures how iterations-to-target grow with dimension on the quadratic
/// objective. The noise scale is tied to the per-coordinate gradient
/// target `epsilon / dim`, matching how the convergence argument picks the
/// noise level against the smallest gradient magnitude. The log-log slope
/// across `dims` must stay below `max_slope`.
pub fn verify_convergence_scaling(
    dims: &[usize],
    c: f64,
    epsilon: f64,
    seeds: usize,
    budget: usize,
    max_slope: f64,
) -> Result<ScalingReport> {
    if dims.len() < 2 {
        return Err(Error::InvalidInput("need at least two dims".into()));
    }
    let mut mean_iterations = Vec::with_capacity(dims.len());
    for &dim in dims {
        let gamma = epsilon / dim as f64;
        let mut total = 0.0;
        for seed in 0..seeds {
            let obj = SmoothObjective::quadratic(dim);
            let report = verify_convergence(&obj, c, gamma, budget, epsilon, seed as u64);
            let hit = report.hit.ok_or_else(|| {
                Error::numeric(
                    format!("scaling dim {dim} seed {seed}"),
                    format!("target {epsilon} not reached in {budget} iterations"),
                )
            })?;
            total += hit as f64;
        }
        mean_iterations.push(total / seeds as f64);
    }
    let xs: Vec<f64> = dims.iter().map(|d| (*d as f64).ln()).collect();
    let ys: Vec<f64> = mean_iterations.iter().map(|t| t.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    Ok(ScalingReport {
        dims: dims.to_vec(),
        mean_iterations,
        slope,
        max_slope,
        pass: slope <= max_slope,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Step schedules supported by the equivalence check.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum StepSchedule {
    Constant(f64),
    /// `c / t`.
    Decaying { c: f64 },
}

impl StepSchedule {
    fn at(self, t: usize) -> f64 {
        match self {
            StepSchedule::Constant(eps) => eps,
            StepSchedule::Decaying { c } => c / t as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub steps: usize,
    pub samples: usize,
    pub max_deviation: f64,
    /// First `(iteration, coordinate)` exceeding the tolerance, if any.
    pub first_divergence: Option<(usize, usize)>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs the perturbation-space update and the plain input-space sign
/// update side by side (noise and closeness off) and compares
/// `x + delta_t` against `x_t` per coordinate and iteration. Both paths go
/// through the same step code.
pub fn verify_bs_equivalence<F: Scalar>(
    model: &Model<F>,
    samples: &[(Vec<F>, usize)],
    steps: usize,
    schedule: StepSchedule,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let classes = model.output_dim();
    let mut max_deviation = 0.0f64;
    let mut first_divergence = None;

    for (x, true_class) in samples {
        let target = nn::one_hot::<F>(classes, *true_class);
        let mut delta = vec![F::zero(); x.len()];
        let mut x_ref = x.clone();
        let zeros = vec![F::zero(); x.len()];

        for t in 1..=steps {
            let eps = schedule.at(t);
            // Perturbation-space path: gradient at x + delta, step added to delta.
            let point: Vec<F> = x.iter().zip(&delta).map(|(xi, di)| *xi + *di).collect();
            let (_, g_delta) = nn::loss_grad_input(model, &point, &target)?;
            let d = inner::scaled_sign_step(&g_delta, &delta, 0.0, None, eps);
            for (di, step) in delta.iter_mut().zip(&d) {
                *di += *step;
            }
            // Input-space path: gradient at x_ref, step added to x_ref.
            let (_, g_x) = nn::loss_grad_input(model, &x_ref, &target)?;
            let d_ref = inner::scaled_sign_step(&g_x, &zeros, 0.0, None, eps);
            for (xi, step) in x_ref.iter_mut().zip(&d_ref) {
                *xi += *step;
            }

            for (coord, ((xi, di), ri)) in x.iter().zip(&delta).zip(&x_ref).enumerate() {
                let dev = ((*xi + *di).as_f64() - ri.as_f64()).abs();
                if dev > max_deviation {
                    max_deviation = dev;
                }
                if dev > tolerance && first_divergence.is_none() {
                    first_divergence = Some((t, coord));
                }
            }
        }
    }
    Ok(EquivalenceReport {
        steps,
        samples: samples.len(),
        max_deviation,
        first_divergence,
        tolerance,
        pass: first_divergence.is_none(),
    })
}
