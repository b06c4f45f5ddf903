//! Flat key-value run configuration.
//!
//! The format is one `section.key = value` pair per line, `#` comments,
//! blank lines ignored. Unknown keys are rejected with their line number
//! so typos never silently fall back to defaults. [`RunConfig::canonical`]
//! renders the fully resolved configuration (defaults filled in, seed
//! applied), which is what gets hashed into every output record.

use std::fmt::Write as _;

use unlearn_core::baselines::BaselineMethod;
use unlearn_core::inner::NoiseKind;

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub msg: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, &self.field) {
            (Some(line), Some(field)) => write!(f, "line {line}, field {field}: {}", self.msg),
            (Some(line), None) => write!(f, "line {line}: {}", self.msg),
            (None, Some(field)) => write!(f, "field {field}: {}", self.msg),
            (None, None) => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    Blobs,
    Csv,
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub path: Option<String>,
    pub labels_path: Option<String>,
    pub has_header: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForgetSpec {
    ClassFraction { class: usize, fraction: f64 },
    FeatureThreshold { feature: usize, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub stop_delta: f64,
    pub min_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSpec {
    pub c: f64,
    pub t_inner: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Defaults to 1/K once the dataset's class count is known.
    pub kappa: Option<f64>,
    pub early_stop: bool,
    pub noise: NoiseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterSpec {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub phi: f64,
    pub use_remain_loss: bool,
    pub remain_onset_epoch: usize,
    pub use_soft_labels: bool,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    pub methods: Vec<BaselineMethod>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Defaults to layer count minus one.
    pub k_layers: Option<usize>,
    pub neggrad_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSpec {
    pub fractions: Vec<f64>,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub hidden: Vec<usize>,
    pub train: TrainSpec,
    pub forget: ForgetSpec,
    pub inner: InnerSpec,
    pub outer: OuterSpec,
    pub baselines: BaselineSpec,
    pub sweep: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            dataset: DatasetSpec {
                kind: DatasetKind::Blobs,
                classes: 3,
                per_class: 200,
                dim: 2,
                separation: 5.0,
                path: None,
                labels_path: None,
                has_header: false,
            },
            hidden: vec![16, 16],
            train: TrainSpec {
                epochs: 200,
                lr: 0.1,
                batch_size: 32,
                stop_delta: 0.01,
                min_epochs: 10,
            },
            forget: ForgetSpec::ClassFraction {
                class: 0,
                fraction: 1.0,
            },
            inner: InnerSpec {
                c: 1.5,
                t_inner: 20,
                gamma: 0.0,
                lambda: 0.0,
                kappa: None,
                early_stop: false,
                noise: NoiseKind::Gaussian,
            },
            outer: OuterSpec {
                lr: 0.1,
                epochs: 5,
                batch_size: 32,
                phi: 0.0,
                use_remain_loss: false,
                remain_onset_epoch: 1,
                use_soft_labels: false,
                top_k: 3,
            },
            baselines: BaselineSpec {
                methods: BaselineMethod::ALL.to_vec(),
                epochs: 10,
                lr: 0.05,
                batch_size: 32,
                k_layers: None,
                neggrad_epochs: 2,
            },
            sweep: SweepSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
                line: Some(line_no),
                field: None,
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value).map_err(|msg| ConfigError {
                line: Some(line_no),
                field: Some(key.to_string()),
                msg,
            })?;
        }
        cfg.check().map_err(|(field, msg)| ConfigError {
            line: None,
            field: Some(field),
            msg,
        })?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        if value.is_empty() {
            return Err("empty value (omit the line to keep the default)".into());
        }
        match key {
            "seed" => self.seed = parse(value)?,
            "dataset.kind" => {
                self.dataset.kind = match value {
                    "blobs" => DatasetKind::Blobs,
                    "csv" => DatasetKind::Csv,
                    "idx" => DatasetKind::Idx,
                    other => return Err(format!("unknown dataset kind {other:?}")),
                }
            }
            "dataset.classes" => self.dataset.classes = parse(value)?,
            "dataset.per_class" => self.dataset.per_class = parse(value)?,
            "dataset.dim" => self.dataset.dim = parse(value)?,
            "dataset.separation" => self.dataset.separation = parse(value)?,
            "dataset.path" => self.dataset.path = Some(value.to_string()),
            "dataset.labels_path" => self.dataset.labels_path = Some(value.to_string()),
            "dataset.has_header" => self.dataset.has_header = parse_bool(value)?,
            "model.hidden" => self.hidden = parse_list(value)?,
            "train.epochs" => self.train.epochs = parse(value)?,
            "train.lr" => self.train.lr = parse(value)?,
            "train.batch_size" => self.train.batch_size = parse(value)?,
            "train.stop_delta" => self.train.stop_delta = parse(value)?,
            "train.min_epochs" => self.train.min_epochs = parse(value)?,
            "forget.rule" => {
                self.forget = match value {
                    "class_fraction" => ForgetSpec::ClassFraction {
                        class: 0,
                        fraction: 1.0,
                    },
                    "feature_threshold" => ForgetSpec::FeatureThreshold {
                        feature: 0,
                        threshold: 0.0,
                    },
                    other => return Err(format!("unknown forget rule {other:?}")),
                }
            }
            "forget.class" => match &mut self.forget {
                ForgetSpec::ClassFraction { class, .. } => *class = parse(value)?,
                _ => return Err("forget.class needs forget.rule = class_fraction".into()),
            },
            "forget.fraction" => match &mut self.forget {
                ForgetSpec::ClassFraction { fraction, .. } => *fraction = parse(value)?,
                _ => return Err("forget.fraction needs forget.rule = class_fraction".into()),
            },
            "forget.feature" => match &mut self.forget {
                ForgetSpec::FeatureThreshold { feature, .. } => *feature = parse(value)?,
                _ => return Err("forget.feature needs forget.rule = feature_threshold".into()),
            },
            "forget.threshold" => match &mut self.forget {
                ForgetSpec::FeatureThreshold { threshold, .. } => *threshold = parse(value)?,
                _ => return Err("forget.threshold needs forget.rule = feature_threshold".into()),
            },
            "inner.c" => self.inner.c = parse(value)?,
            "inner.t_inner" => self.inner.t_inner = parse(value)?,
            "inner.gamma" => self.inner.gamma = parse(value)?,
            "inner.lambda" => self.inner.lambda = parse(value)?,
            "inner.kappa" => self.inner.kappa = Some(parse(value)?),
            "inner.early_stop" => self.inner.early_stop = parse_bool(value)?,
            "inner.noise" => {
                self.inner.noise = match value {
                    "gaussian" => NoiseKind::Gaussian,
                    "laplacian" => NoiseKind::Laplacian,
                    "cauchy" => NoiseKind::Cauchy,
                    other => return Err(format!("unknown noise kind {other:?}")),
                }
            }
            "outer.lr" => self.outer.lr = parse(value)?,
            "outer.epochs" => self.outer.epochs = parse(value)?,
            "outer.batch_size" => self.outer.batch_size = parse(value)?,
            "outer.phi" => self.outer.phi = parse(value)?,
            "outer.use_remain_loss" => self.outer.use_remain_loss = parse_bool(value)?,
            "outer.remain_onset_epoch" => self.outer.remain_onset_epoch = parse(value)?,
            "outer.use_soft_labels" => self.outer.use_soft_labels = parse_bool(value)?,
            "outer.top_k" => self.outer.top_k = parse(value)?,
            "baselines.methods" => {
                self.baselines.methods = value
                    .split(',')
                    .map(|m| m.trim().parse::<BaselineMethod>().map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()?;
            }
            "baselines.epochs" => self.baselines.epochs = parse(value)?,
            "baselines.lr" => self.baselines.lr = parse(value)?,
            "baselines.batch_size" => self.baselines.batch_size = parse(value)?,
            "baselines.k_layers" => self.baselines.k_layers = Some(parse(value)?),
            "baselines.neggrad_epochs" => self.baselines.neggrad_epochs = parse(value)?,
            "sweep.fractions" => self.sweep.fractions = parse_list(value)?,
            "sweep.gammas" => self.sweep.gammas = parse_list(value)?,
            "sweep.lambdas" => self.sweep.lambdas = parse_list(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    fn check(&self) -> Result<(), (String, String)> {
        match self.dataset.kind {
            DatasetKind::Blobs => {}
            DatasetKind::Csv => {
                if self.dataset.path.is_none() {
                    return Err(("dataset.path".into(), "required for csv datasets".into()));
                }
            }
            DatasetKind::Idx => {
                if self.dataset.path.is_none() || self.dataset.labels_path.is_none() {
                    return Err((
                        "dataset.path".into(),
                        "idx datasets need dataset.path and dataset.labels_path".into(),
                    ));
                }
            }
        }
        if let ForgetSpec::ClassFraction { fraction, .. } = self.forget {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(("forget.fraction".into(), format!("{fraction} not in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Fully resolved key-value snapshot, sorted, defaults included. The
    /// config hash is computed over exactly this text.
    pub fn canonical(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut kv = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        kv("seed", self.seed.to_string());
        kv(
            "dataset.kind",
            match self.dataset.kind {
                DatasetKind::Blobs => "blobs".into(),
                DatasetKind::Csv => "csv".into(),
                DatasetKind::Idx => "idx".into(),
            },
        );
        kv("dataset.classes", self.dataset.classes.to_string());
        kv("dataset.per_class", self.dataset.per_class.to_string());
        kv("dataset.dim", self.dataset.dim.to_string());
        kv("dataset.separation", fmt_f64(self.dataset.separation));
        if let Some(p) = &self.dataset.path {
            kv("dataset.path", p.clone());
        }
        if let Some(p) = &self.dataset.labels_path {
            kv("dataset.labels_path", p.clone());
        }
        kv("dataset.has_header", self.dataset.has_header.to_string());
        kv(
            "model.hidden",
            self.hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.lr", fmt_f64(self.train.lr));
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.stop_delta", fmt_f64(self.train.stop_delta));
        kv("train.min_epochs", self.train.min_epochs.to_string());
        match &self.forget {
            ForgetSpec::ClassFraction { class, fraction } => {
                kv("forget.rule", "class_fraction".into());
                kv("forget.class", class.to_string());
                kv("forget.fraction", fmt_f64(*fraction));
            }
            ForgetSpec::FeatureThreshold { feature, threshold } => {
                kv("forget.rule", "feature_threshold".into());
                kv("forget.feature", feature.to_string());
                kv("forget.threshold", fmt_f64(*threshold));
            }
        }
        kv("inner.c", fmt_f64(self.inner.c));
        kv("inner.t_inner", self.inner.t_inner.to_string());
        kv("inner.gamma", fmt_f64(self.inner.gamma));
        kv("inner.lambda", fmt_f64(self.inner.lambda));
        if let Some(kappa) = self.inner.kappa {
            kv("inner.kappa", fmt_f64(kappa));
        }
        kv("inner.early_stop", self.inner.early_stop.to_string());
        kv(
            "inner.noise",
            match self.inner.noise {
                NoiseKind::Gaussian => "gaussian".into(),
                NoiseKind::Laplacian => "laplacian".into(),
                NoiseKind::Cauchy => "cauchy".into(),
            },
        );
        kv("outer.lr", fmt_f64(self.outer.lr));
        kv("outer.epochs", self.outer.epochs.to_string());
        kv("outer.batch_size", self.outer.batch_size.to_string());
        kv("outer.phi", fmt_f64(self.outer.phi));
        kv("outer.use_remain_loss", self.outer.use_remain_loss.to_string());
        kv(
            "outer.remain_onset_epoch",
            self.outer.remain_onset_epoch.to_string(),
        );
        kv("outer.use_soft_labels", self.outer.use_soft_labels.to_string());
        kv("outer.top_k", self.outer.top_k.to_string());
        kv(
            "baselines.methods",
            self.baselines
                .methods
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("baselines.epochs", self.baselines.epochs.to_string());
        kv("baselines.lr", fmt_f64(self.baselines.lr));
        kv("baselines.batch_size", self.baselines.batch_size.to_string());
        if let Some(k) = self.baselines.k_layers {
            kv("baselines.k_layers", k.to_string());
        }
        kv(
            "baselines.neggrad_epochs",
            self.baselines.neggrad_epochs.to_string(),
        );
        if !self.sweep.fractions.is_empty() {
            kv("sweep.fractions", fmt_list(&self.sweep.fractions));
        }
        if !self.sweep.gammas.is_empty() {
            kv("sweep.gammas", fmt_list(&self.sweep.gammas));
        }
        if !self.sweep.lambdas.is_empty() {
            kv("sweep.lambdas", fmt_list(&self.sweep.lambdas));
        }
        lines.sort();
        let mut out = String::new();
        for line in lines {
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// Hex SHA-256 of the canonical snapshot.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

fn parse<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("bad value {value:?}: {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("bad boolean {other:?}")),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(v.trim())).collect()
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip formatting keeps the canonical text stable.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}
