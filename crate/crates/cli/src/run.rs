//! Command implementations: train, unlearn, baselines, sweep, verify.
//!
//! Everything here is deterministic for a given (config, seed): datasets,
//! partitions, and every training phase draw their randomness from named
//! sub-seeds of the run seed, and parallel grid cells own independent
//! streams, so outputs do not depend on the worker count.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use unlearn_core::baselines::{self, ArchSpec, BaselineConfig, BaselineMethod};
use unlearn_core::checkpoint;
use unlearn_core::data::{self, ForgetPartition, ForgetRule};
use unlearn_core::eval::{self, MetricsReport, MiaResult};
use unlearn_core::inner::{self, InnerConfig};
use unlearn_core::outer::{self, EpochLog, OuterConfig};
use unlearn_core::theory::{self, StepSchedule};
use unlearn_core::train::{self, TrainConfig};
use unlearn_core::{rng, LabeledDataset, Model, RelabeledForgetSet};

use crate::config::{DatasetKind, ForgetSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{self, MethodMetrics, RunRecord, SweepCell, SweepRecord, VerifyCheck, VerifyRecord, SCHEMA_VERSION};

pub const MIA_FOLDS: usize = 5;

pub fn load_config(path: &Path, seed_override: Option<u64>) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn build_dataset(cfg: &RunConfig) -> CliResult<LabeledDataset> {
    let seed = rng::derive(cfg.seed, "dataset");
    let ds = match cfg.dataset.kind {
        DatasetKind::Blobs => data::make_gaussian_blobs(
            cfg.dataset.classes,
            cfg.dataset.per_class,
            cfg.dataset.dim,
            cfg.dataset.separation,
            seed,
        )?,
        DatasetKind::Csv => {
            let path = cfg.dataset.path.as_ref().expect("checked at parse");
            data::load_csv(
                Path::new(path),
                cfg.dataset.has_header,
                Some(cfg.dataset.classes),
            )?
        }
        DatasetKind::Idx => {
            let images = cfg.dataset.path.as_ref().expect("checked at parse");
            let labels = cfg.dataset.labels_path.as_ref().expect("checked at parse");
            data::load_idx(
                Path::new(images),
                Path::new(labels),
                Some(cfg.dataset.classes),
            )?
        }
    };
    Ok(ds)
}

pub fn arch_spec(cfg: &RunConfig, ds: &LabeledDataset) -> ArchSpec {
    ArchSpec {
        input_dim: ds.dim(),
        hidden: cfg.hidden.clone(),
        classes: ds.classes(),
    }
}

pub fn forget_rule(cfg: &RunConfig) -> ForgetRule {
    match cfg.forget {
        ForgetSpec::ClassFraction { class, fraction } => ForgetRule::ClassFraction { class, fraction },
        ForgetSpec::FeatureThreshold { feature, threshold } => {
            ForgetRule::FeatureThreshold { feature, threshold }
        }
    }
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        batch_size: cfg.train.batch_size,
        seed: rng::derive(cfg.seed, "train"),
        stop_delta: Some(cfg.train.stop_delta),
        min_epochs: cfg.train.min_epochs,
    }
}

pub fn inner_config(cfg: &RunConfig, classes: usize) -> InnerConfig {
    InnerConfig {
        c: cfg.inner.c,
        t_inner: cfg.inner.t_inner,
        gamma: cfg.inner.gamma,
        lambda: cfg.inner.lambda,
        kappa: cfg.inner.kappa.unwrap_or(1.0 / classes as f64),
        early_stop_at_kappa: cfg.inner.early_stop,
        noise: cfg.inner.noise,
        seed: rng::derive(cfg.seed, "inner"),
    }
}

pub fn outer_config(cfg: &RunConfig) -> OuterConfig {
    OuterConfig {
        lr: cfg.outer.lr,
        epochs: cfg.outer.epochs,
        batch_size: cfg.outer.batch_size,
        phi: cfg.outer.phi,
        use_remain_loss: cfg.outer.use_remain_loss,
        remain_onset_epoch: cfg.outer.remain_onset_epoch,
        use_soft_labels: cfg.outer.use_soft_labels,
        top_k: cfg.outer.top_k,
        seed: rng::derive(cfg.seed, "outer"),
    }
}

fn baseline_config(cfg: &RunConfig, method: BaselineMethod, layer_count: usize) -> BaselineConfig {
    let k_layers = cfg
        .baselines
        .k_layers
        .unwrap_or_else(|| layer_count.saturating_sub(1));
    let (epochs, lr, batch_size) = match method {
        // Retrain and EUK train fresh layers from scratch with the full
        // base budget; the others run their short fixed budgets.
        BaselineMethod::Retrain | BaselineMethod::Euk => {
            (cfg.train.epochs, cfg.train.lr, cfg.train.batch_size)
        }
        BaselineMethod::NegGrad => (
            cfg.baselines.neggrad_epochs,
            cfg.baselines.lr,
            cfg.baselines.batch_size,
        ),
        _ => (
            cfg.baselines.epochs,
            cfg.baselines.lr,
            cfg.baselines.batch_size,
        ),
    };
    BaselineConfig {
        method,
        epochs,
        lr,
        batch_size,
        k_layers,
        seed: rng::derive(cfg.seed, method.name()),
    }
}

pub fn select_partition(cfg: &RunConfig, ds: &LabeledDataset) -> CliResult<ForgetPartition> {
    Ok(data::select_forget(ds, forget_rule(cfg), rng::derive(cfg.seed, "forget"))?)
}

/// Rows the attack compares members against: held-out test rows of the
/// classes present in the forget set. Under a subgroup rule the mirror
/// rows matching the predicate are excluded, leaving same-class rows
/// without the defining property.
pub fn mia_heldout_rows(ds: &LabeledDataset, partition: &ForgetPartition, rule: ForgetRule) -> Vec<usize> {
    match rule {
        ForgetRule::ClassFraction { class, .. } => ds
            .test_rows()
            .into_iter()
            .filter(|r| ds.label(*r) == class)
            .collect(),
        ForgetRule::FeatureThreshold { .. } => {
            let forget_classes: std::collections::HashSet<usize> =
                partition.forget.iter().map(|r| ds.label(*r)).collect();
            let mirror: std::collections::HashSet<usize> =
                partition.forget_test.iter().copied().collect();
            ds.test_rows()
                .into_iter()
                .filter(|r| forget_classes.contains(&ds.label(*r)) && !mirror.contains(r))
                .collect()
        }
    }
}

pub struct EvalOutcome {
    pub report: MetricsReport,
    pub mia: MiaResult,
}

/// Wall-clock seconds per pipeline phase.
#[derive(Debug, Clone, Copy, Default)]
pub struct Phases {
    pub inner_s: f64,
    pub outer_s: f64,
    pub total_s: f64,
}

/// Shared metric assembly for any unlearned or baseline model.
pub fn evaluate_model(
    model: &Model,
    ds: &LabeledDataset,
    partition: &ForgetPartition,
    rule: ForgetRule,
    seed: u64,
    phases: Phases,
) -> CliResult<EvalOutcome> {
    let f_acc = eval::accuracy(model, ds, &partition.forget_test)?;
    let r_acc = eval::accuracy(model, ds, &partition.remain_test)?;
    let heldout = mia_heldout_rows(ds, partition, rule);
    let mia = eval::mia_attack(model, ds, &partition.forget, &heldout, MIA_FOLDS, seed)?;
    Ok(EvalOutcome {
        report: MetricsReport {
            f_acc,
            r_acc,
            fr_ratio: eval::fr_ratio(f_acc, r_acc),
            mia_mean: mia.mean,
            mia_std: mia.std,
            t_inner_s: phases.inner_s,
            t_outer_s: phases.outer_s,
            t_total_s: phases.total_s,
        },
        mia,
    })
}

pub struct UnlearnOutcome {
    pub model: Model,
    pub relabeled: RelabeledForgetSet,
    pub logs: Vec<EpochLog>,
    pub eval: EvalOutcome,
}

/// Inner search plus outer fine-tuning plus evaluation, with phase timing.
pub fn run_unlearn(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    partition: &ForgetPartition,
    w0: &Model,
    icfg: &InnerConfig,
    ocfg: &OuterConfig,
) -> CliResult<UnlearnOutcome> {
    let total_start = Instant::now();
    let inner_start = Instant::now();
    let relabeled = inner::relabel_forget_set(w0, ds, partition, icfg)?;
    let t_inner_s = inner_start.elapsed().as_secs_f64();

    let outer_start = Instant::now();
    let (model, logs) = outer::unlearn(w0, &relabeled, ds, partition, ocfg)?;
    let t_outer_s = outer_start.elapsed().as_secs_f64();
    let t_total_s = total_start.elapsed().as_secs_f64();

    let eval = evaluate_model(
        &model,
        ds,
        partition,
        forget_rule(cfg),
        cfg.seed,
        Phases {
            inner_s: t_inner_s,
            outer_s: t_outer_s,
            total_s: t_total_s,
        },
    )?;
    Ok(UnlearnOutcome {
        model,
        relabeled,
        logs,
        eval,
    })
}

/// Runs one baseline method against the shared partition.
pub fn run_baseline(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    partition: &ForgetPartition,
    w0: &Model,
    arch: &ArchSpec,
    method: BaselineMethod,
) -> CliResult<EvalOutcome> {
    let bcfg = baseline_config(cfg, method, w0.layer_count());
    let start = Instant::now();
    let model = match method {
        BaselineMethod::Retrain => baselines::retrain(ds, partition, arch, &bcfg)?,
        BaselineMethod::Finetune => baselines::finetune(w0, ds, partition, &bcfg)?,
        BaselineMethod::NegGrad => baselines::neg_grad(w0, ds, partition, &bcfg)?,
        BaselineMethod::Cfk => baselines::cfk(w0, ds, partition, &bcfg)?,
        BaselineMethod::Euk => baselines::euk(w0, ds, partition, arch, &bcfg)?,
    };
    let wall = start.elapsed().as_secs_f64();
    let phases = Phases {
        inner_s: 0.0,
        outer_s: wall,
        total_s: wall,
    };
    evaluate_model(&model, ds, partition, forget_rule(cfg), cfg.seed, phases)
}

fn check_model_matches(ds: &LabeledDataset, model: &Model) -> CliResult<()> {
    if model.input_dim() != ds.dim() || model.output_dim() != ds.classes() {
        return Err(CliError::Config(format!(
            "checkpoint maps {} features to {} classes, dataset has {} and {}",
            model.input_dim(),
            model.output_dim(),
            ds.dim(),
            ds.classes()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let ds = build_dataset(cfg)?;
    let arch = arch_spec(cfg, &ds);
    let model = arch
        .build::<f64>(rng::derive(cfg.seed, "model-init"))
        .map_err(CliError::from)?;
    if cfg.train.epochs == 0 {
        eprintln!("warning: train.epochs = 0, saving initial weights untrained");
    }
    let outcome = train::fit(model, &ds, &ds.train_rows(), &train_config(cfg))?;
    let test_acc = eval::accuracy(&outcome.model, &ds, &ds.test_rows())?;

    std::fs::create_dir_all(out)?;
    checkpoint::save(&outcome.model, &out.join("checkpoint.bin"))?;
    let record = json!({
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "epochs_run": outcome.epochs_run,
        "train_accuracy": outcome.train_accuracy,
        "test_accuracy": test_acc,
    });
    output::write_json(&out.join("train_metrics.json"), &record, &cfg.hash())?;
    std::fs::write(out.join("resolved_config.txt"), cfg.canonical())?;
    println!(
        "trained {} epochs, train accuracy {:.4}, test accuracy {:.4}",
        outcome.epochs_run, outcome.train_accuracy, test_acc
    );
    Ok(())
}

pub fn cmd_unlearn(cfg: &RunConfig, checkpoint_path: &Path, out: &Path) -> CliResult<()> {
    let ds = build_dataset(cfg)?;
    let w0: Model = checkpoint::load(checkpoint_path)?;
    check_model_matches(&ds, &w0)?;
    let partition = select_partition(cfg, &ds)?;
    let icfg = inner_config(cfg, ds.classes());
    let ocfg = outer_config(cfg);
    let outcome = run_unlearn(cfg, &ds, &partition, &w0, &icfg, &ocfg)?;

    std::fs::create_dir_all(out)?;
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        reports: vec![MethodMetrics::from_report(
            "ours",
            &outcome.eval.report,
            outcome.eval.mia.reduced,
        )],
    };
    output::write_metrics(out, &record)?;
    output::write_boundary_audit(out, &outcome.relabeled, &cfg.hash(), cfg.seed)?;
    output::write_unlearn_log(out, &outcome.logs)?;
    std::fs::write(out.join("resolved_config.txt"), cfg.canonical())?;
    checkpoint::save(&outcome.model, &out.join("unlearned.bin"))?;
    let r = &outcome.eval.report;
    println!(
        "ours: F-Acc {:.4} R-Acc {:.4} F/R {} MIA {:.3}±{:.3} ({} samples, {:.1}% crossed)",
        r.f_acc,
        r.r_acc,
        r.fr_ratio.map_or("undefined".into(), |v| format!("{v:.4}")),
        r.mia_mean,
        r.mia_std,
        outcome.relabeled.samples.len(),
        100.0 * outcome.relabeled.fraction_crossed,
    );
    Ok(())
}

pub fn cmd_baselines(cfg: &RunConfig, checkpoint_path: &Path, out: &Path) -> CliResult<()> {
    let ds = build_dataset(cfg)?;
    let w0: Model = checkpoint::load(checkpoint_path)?;
    check_model_matches(&ds, &w0)?;
    let arch = arch_spec(cfg, &ds);
    let partition = select_partition(cfg, &ds)?;

    let mut reports = Vec::new();
    for method in &cfg.baselines.methods {
        let outcome = run_baseline(cfg, &ds, &partition, &w0, &arch, *method)?;
        println!(
            "{}: F-Acc {:.4} R-Acc {:.4} ({:.2}s)",
            method, outcome.report.f_acc, outcome.report.r_acc, outcome.report.t_total_s
        );
        reports.push(MethodMetrics::from_report(
            method.name(),
            &outcome.report,
            outcome.mia.reduced,
        ));
    }
    std::fs::create_dir_all(out)?;
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        reports,
    };
    output::write_metrics(out, &record)?;
    std::fs::write(out.join("resolved_config.txt"), cfg.canonical())?;
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, checkpoint_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let ds = build_dataset(cfg)?;
    let w0: Model = match checkpoint_path {
        Some(path) => {
            let model = checkpoint::load(path)?;
            check_model_matches(&ds, &model)?;
            model
        }
        None => {
            let arch = arch_spec(cfg, &ds);
            let model = arch
                .build::<f64>(rng::derive(cfg.seed, "model-init"))
                .map_err(CliError::from)?;
            train::fit(model, &ds, &ds.train_rows(), &train_config(cfg))?.model
        }
    };

    let fractions: Vec<Option<f64>> = match (&cfg.forget, cfg.sweep.fractions.is_empty()) {
        (ForgetSpec::ClassFraction { .. }, false) => {
            cfg.sweep.fractions.iter().map(|f| Some(*f)).collect()
        }
        (ForgetSpec::ClassFraction { fraction, .. }, true) => vec![Some(*fraction)],
        (ForgetSpec::FeatureThreshold { .. }, _) => vec![None],
    };
    let gammas = if cfg.sweep.gammas.is_empty() {
        vec![cfg.inner.gamma]
    } else {
        cfg.sweep.gammas.clone()
    };
    let lambdas = if cfg.sweep.lambdas.is_empty() {
        vec![cfg.inner.lambda]
    } else {
        cfg.sweep.lambdas.clone()
    };

    let mut grid = Vec::new();
    for fraction in &fractions {
        for gamma in &gammas {
            for lambda in &lambdas {
                grid.push((*fraction, *gamma, *lambda));
            }
        }
    }

    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|(fraction, gamma, lambda)| -> CliResult<SweepCell> {
            let mut cell_cfg = cfg.clone();
            if let (Some(f), ForgetSpec::ClassFraction { fraction, .. }) =
                (fraction, &mut cell_cfg.forget)
            {
                *fraction = *f;
            }
            cell_cfg.inner.gamma = *gamma;
            cell_cfg.inner.lambda = *lambda;
            let partition = select_partition(&cell_cfg, &ds)?;
            let icfg = inner_config(&cell_cfg, ds.classes());
            let ocfg = outer_config(&cell_cfg);
            let outcome = run_unlearn(&cell_cfg, &ds, &partition, &w0, &icfg, &ocfg)?;
            Ok(SweepCell {
                fraction: *fraction,
                gamma: *gamma,
                lambda: *lambda,
                f_acc: outcome.eval.report.f_acc,
                r_acc: outcome.eval.report.r_acc,
                fr_ratio: outcome.eval.report.fr_ratio,
                mia_mean: outcome.eval.report.mia_mean,
                mia_std: outcome.eval.report.mia_std,
            })
        })
        .collect::<CliResult<_>>()?;

    std::fs::create_dir_all(out)?;
    let record = SweepRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        cells,
    };
    output::write_sweep(out, &record)?;
    std::fs::write(out.join("resolved_config.txt"), cfg.canonical())?;
    println!("swept {} cells", record.cells.len());
    Ok(())
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let seed = cfg.seed;
    let mut checks = Vec::new();

    // Expected-sign closed form against Monte-Carlo, scalar grid.
    {
        let draws = 1_000_000;
        let bound = 5.0 / (draws as f64).sqrt();
        let acfg = theory::AscentConfig {
            draws,
            noise: inner::NoiseKind::Gaussian,
            ..theory::AscentConfig::default()
        };
        let mut worst = 0.0f64;
        let mut pass = true;
        for (i, g) in [-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0].into_iter().enumerate() {
            for (j, gamma) in [0.1, 1.0, 10.0].into_iter().enumerate() {
                let mut rng = rng::stream(rng::derive(seed, "verify-erf"), (i * 3 + j) as u64);
                let row = theory::ascent_row(&[g], gamma, &acfg, &mut rng);
                worst = worst.max(row.max_coord_err);
                pass &= row.max_coord_err <= bound;
            }
        }
        checks.push(VerifyCheck {
            name: "expected_sign_identity".into(),
            pass,
            details: json!({ "max_error": worst, "bound": bound, "draws": draws }),
        });
    }

    // Ascent alignment for all three noise kinds.
    for noise in [
        inner::NoiseKind::Gaussian,
        inner::NoiseKind::Laplacian,
        inner::NoiseKind::Cauchy,
    ] {
        let acfg = theory::AscentConfig {
            trials: 20,
            dim: 50,
            gammas: vec![0.1, 1.0, 10.0],
            draws: 100_000,
            seed: rng::derive(seed, "verify-ascent"),
            noise,
        };
        let report = theory::verify_ascent(&acfg)?;
        checks.push(VerifyCheck {
            name: format!("ascent_alignment_{noise:?}").to_lowercase(),
            pass: report.all_pass,
            details: json!({
                "rows": report.rows.len(),
                "failing": report.rows.iter().filter(|r| !r.pass).count(),
            }),
        });
    }

    // Convergence on the quadratic objective plus dimension scaling.
    {
        let obj = theory::SmoothObjective::quadratic(10);
        let report =
            theory::verify_convergence(&obj, 0.5, 0.01, 10_000, 0.1, rng::derive(seed, "verify-conv"));
        checks.push(VerifyCheck {
            name: "convergence_quadratic".into(),
            pass: report.pass,
            details: json!({ "hit": report.hit, "budget": report.budget, "epsilon": report.epsilon }),
        });
        let scaling = theory::verify_convergence_scaling(&[5, 10, 20, 40], 0.5, 0.1, 5, 200_000, 1.3)?;
        checks.push(VerifyCheck {
            name: "convergence_dim_scaling".into(),
            pass: scaling.pass,
            details: json!({
                "dims": scaling.dims,
                "mean_iterations": scaling.mean_iterations,
                "slope": scaling.slope,
                "max_slope": scaling.max_slope,
            }),
        });
    }

    // Update-rule equivalence with noise and closeness off.
    {
        let ds = data::make_gaussian_blobs::<f64>(3, 10, 4, 5.0, rng::derive(seed, "verify-eq"))?;
        let model = Model::glorot(&[4, 12, 3], rng::derive(seed, "verify-eq-net"))?;
        let samples: Vec<(Vec<f64>, usize)> = ds
            .train_rows()
            .into_iter()
            .take(10)
            .map(|r| (ds.row(r).to_vec(), ds.label(r)))
            .collect();
        for (name, schedule) in [
            ("equivalence_decaying", StepSchedule::Decaying { c: 0.4 }),
            ("equivalence_constant", StepSchedule::Constant(0.05)),
        ] {
            let report = theory::verify_bs_equivalence(&model, &samples, 20, schedule, 1e-12)?;
            checks.push(VerifyCheck {
                name: name.into(),
                pass: report.pass,
                details: json!({
                    "max_deviation": report.max_deviation,
                    "first_divergence": report.first_divergence,
                }),
            });
        }
    }

    let all_pass = checks.iter().all(|c| c.pass);
    std::fs::create_dir_all(out)?;
    let record = VerifyRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed,
        all_pass,
        checks,
    };
    output::write_verify(out, &record)?;
    for check in &record.checks {
        println!("{}: {}", check.name, if check.pass { "pass" } else { "FAIL" });
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Numeric("verification checks failed".into()))
    }
}
