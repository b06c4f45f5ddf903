//! Dataset construction, forget/remain partitioning, and file ingestion.
//!
//! Datasets carry an explicit train/test tag per row. Generated data uses
//! an 80/20 per-class split; loaded files are split the same way in file
//! order so ingestion stays deterministic without a seed.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Feature matrix with integer class labels (one-hot by construction) and
/// per-row train/test tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<F> {
    features: Vec<F>,
    dim: usize,
    classes: usize,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

impl<F: Scalar> LabeledDataset<F> {
    pub fn new(
        features: Vec<F>,
        dim: usize,
        classes: usize,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || features.len() != n * dim || splits.len() != n {
            return Err(Error::InvalidInput("dataset shape mismatch".into()));
        }
        if classes < 2 {
            return Err(Error::InvalidInput("need at least 2 classes".into()));
        }
        if n < classes {
            return Err(Error::InvalidInput("fewer rows than classes".into()));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::InvalidInput(format!("label {bad} >= {classes}")));
        }
        for c in 0..classes {
            let mut train = false;
            let mut test = false;
            for (l, s) in labels.iter().zip(&splits) {
                if *l == c {
                    match s {
                        Split::Train => train = true,
                        Split::Test => test = true,
                    }
                }
            }
            if !train || !test {
                return Err(Error::InvalidInput(format!(
                    "class {c} is missing a train or test row"
                )));
            }
        }
        Ok(Self {
            features,
            dim,
            classes,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn classes(&self) -> usize {
        self.classes
    }
    pub fn label(&self, row: usize) -> usize {
        self.labels[row]
    }
    pub fn split(&self, row: usize) -> Split {
        self.splits[row]
    }

    pub fn row(&self, row: usize) -> &[F] {
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    pub fn one_hot(&self, row: usize) -> Vec<F> {
        crate::nn::one_hot(self.classes, self.labels[row])
    }

    pub fn train_rows(&self) -> Vec<usize> {
        self.rows_with(Split::Train)
    }
    pub fn test_rows(&self) -> Vec<usize> {
        self.rows_with(Split::Test)
    }

    fn rows_with(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|r| self.splits[*r] == split).collect()
    }
}

/// K isotropic unit-variance Gaussian clusters with pairwise mean distance
/// at least `separation`, split 80/20 per class.
pub fn make_gaussian_blobs<F: Scalar>(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset<F>> {
    if classes < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    if separation <= 0.0 {
        return Err(Error::InvalidInput("separation must be > 0".into()));
    }
    if n_per_class < 2 {
        return Err(Error::InvalidInput("need at least 2 rows per class".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("dim must be > 0".into()));
    }

    let mut rng = rng::stream(seed, 0);
    let normal = StandardNormal;
    let mut features = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    let mut splits = Vec::with_capacity(classes * n_per_class);
    let n_train = ((0.8 * n_per_class as f64).round() as usize).clamp(1, n_per_class - 1);

    for c in 0..classes {
        let center = blob_center(c, classes, dim, separation);
        for i in 0..n_per_class {
            for c in &center {
                let z: f64 = normal.sample(&mut rng);
                features.push(F::from_f64(c + z));
            }
            labels.push(c);
            splits.push(if i < n_train { Split::Train } else { Split::Test });
        }
    }
    LabeledDataset::new(features, dim, classes, labels, splits)
}

/// Class means sit on a circle in the first two coordinates (or a line for
/// 1-d data) with chord length exactly `separation` between neighbors.
fn blob_center(class: usize, classes: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut center = vec![0.0; dim];
    if dim == 1 {
        center[0] = class as f64 * separation;
    } else {
        let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
        let angle = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
        center[0] = radius * angle.cos();
        center[1] = radius * angle.sin();
    }
    center
}

/// How forget rows are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ForgetRule {
    /// A seed-sampled fraction of one class.
    ClassFraction { class: usize, fraction: f64 },
    /// Every row with `feature[index] > threshold` (subgroup forgetting).
    FeatureThreshold { feature: usize, threshold: f64 },
}

/// Forget/remain index split over train rows, with the mirrored test-side
/// split used for held-out evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetPartition {
    pub forget: Vec<usize>,
    pub remain: Vec<usize>,
    pub forget_test: Vec<usize>,
    pub remain_test: Vec<usize>,
}

/// Applies a forget rule. For class-fraction rules `|F| = round(p * n_c)`
/// rows of the class sampled by seed, and the test mirror is the same
/// fraction of that class's test rows. For feature-threshold rules both
/// sides are all rows matching the predicate.
pub fn select_forget<F: Scalar>(
    ds: &LabeledDataset<F>,
    rule: ForgetRule,
    seed: u64,
) -> Result<ForgetPartition> {
    let train = ds.train_rows();
    let test = ds.test_rows();
    let (forget, forget_test) = match rule {
        ForgetRule::ClassFraction { class, fraction } => {
            if class >= ds.classes() {
                return Err(Error::InvalidRule(format!(
                    "class {class} out of range (K = {})",
                    ds.classes()
                )));
            }
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::InvalidRule(format!("fraction {fraction} not in [0, 1]")));
            }
            let f = sample_fraction(&train, ds, class, fraction, seed, 0, false);
            // The held-out mirror keeps at least one row so forget-side
            // metrics stay defined at tiny fractions.
            let ft = sample_fraction(&test, ds, class, fraction, seed, 1, true);
            (f, ft)
        }
        ForgetRule::FeatureThreshold { feature, threshold } => {
            if feature >= ds.dim() {
                return Err(Error::InvalidRule(format!(
                    "feature {feature} out of range (dim = {})",
                    ds.dim()
                )));
            }
            let pick = |rows: &[usize]| {
                rows.iter()
                    .copied()
                    .filter(|r| ds.row(*r)[feature].as_f64() > threshold)
                    .collect::<Vec<_>>()
            };
            (pick(&train), pick(&test))
        }
    };
    if forget.is_empty() {
        return Err(Error::InvalidRule("rule selects no train rows".into()));
    }
    let in_forget: std::collections::HashSet<usize> = forget.iter().copied().collect();
    let in_forget_test: std::collections::HashSet<usize> = forget_test.iter().copied().collect();
    Ok(ForgetPartition {
        remain: train.iter().copied().filter(|r| !in_forget.contains(r)).collect(),
        remain_test: test
            .iter()
            .copied()
            .filter(|r| !in_forget_test.contains(r))
            .collect(),
        forget,
        forget_test,
    })
}

fn sample_fraction<F: Scalar>(
    rows: &[usize],
    ds: &LabeledDataset<F>,
    class: usize,
    fraction: f64,
    seed: u64,
    stream_id: u64,
    at_least_one: bool,
) -> Vec<usize> {
    let of_class: Vec<usize> = rows.iter().copied().filter(|r| ds.label(*r) == class).collect();
    let mut count = (fraction * of_class.len() as f64).round() as usize;
    if at_least_one && count == 0 && fraction > 0.0 && !of_class.is_empty() {
        count = 1;
    }
    let mut shuffled = of_class;
    shuffled.shuffle(&mut rng::stream(rng::derive(seed, "forget-sample"), stream_id));
    let mut picked: Vec<usize> = shuffled.into_iter().take(count).collect();
    picked.sort_unstable();
    picked
}

/// CSV ingestion: `dim` feature columns then one integer label column.
/// When `classes` is given, labels must stay below it; otherwise the class
/// count is inferred as `max label + 1`.
pub fn load_csv<F: Scalar>(
    path: &Path,
    has_header: bool,
    classes: Option<usize>,
) -> Result<LabeledDataset<F>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&display, &e))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&display, &e))?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() < 2 {
            return Err(Error::Parse {
                path: display.clone(),
                offset,
                msg: format!("row has {} columns, need features + label", record.len()),
            });
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    path: display.clone(),
                    offset,
                    msg: format!("row has {d} feature columns, expected {expected}"),
                });
            }
            _ => {}
        }
        for v in record.iter().take(d) {
            let parsed: f64 = v.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                offset,
                msg: format!("bad feature value {v:?}"),
            })?;
            features.push(F::from_f64(parsed));
        }
        let label: usize = record[d].parse().map_err(|_| Error::Parse {
            path: display.clone(),
            offset,
            msg: format!("bad label {:?}", &record[d]),
        })?;
        if let Some(k) = classes {
            if label >= k {
                return Err(Error::Parse {
                    path: display.clone(),
                    offset,
                    msg: format!("label {label} >= {k}"),
                });
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            path: display,
            offset: 0,
            msg: "no data rows".into(),
        });
    }
    let k = classes.unwrap_or_else(|| labels.iter().max().unwrap() + 1);
    let dim = dim.unwrap();
    let splits = file_order_split(&labels, k);
    LabeledDataset::new(features, dim, k, labels, splits)
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            offset: 0,
            msg: e.to_string(),
        })
}

fn csv_error(path: &str, e: &csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Parse {
        path: path.to_string(),
        offset,
        msg: e.to_string(),
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// IDX ingestion (big-endian): u8 images scaled to [0, 1] against u8
/// labels.
pub fn load_idx<F: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    classes: Option<usize>,
) -> Result<LabeledDataset<F>> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::Parse {
            path: labels_path.display().to_string(),
            offset: 4,
            msg: format!(
                "{} labels for {} images",
                labels.len(),
                images.count
            ),
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    if let Some(k) = classes {
        if let Some((i, bad)) = labels.iter().enumerate().find(|(_, l)| **l >= k) {
            return Err(Error::Parse {
                path: labels_path.display().to_string(),
                offset: 8 + i as u64,
                msg: format!("label {bad} >= {k}"),
            });
        }
    }
    let k = classes.unwrap_or_else(|| labels.iter().max().unwrap() + 1);
    let features = images
        .pixels
        .iter()
        .map(|p| F::from_f64(f64::from(*p) / 255.0))
        .collect();
    let splits = file_order_split(&labels, k);
    LabeledDataset::new(features, images.rows * images.cols, k, labels, splits).map_err(|e| {
        Error::Parse {
            path: images_path.display().to_string(),
            offset: 0,
            msg: e.to_string(),
        }
    })
}

/// First 80% of each class's rows (file order) become train rows.
fn file_order_split(labels: &[usize], classes: usize) -> Vec<Split> {
    let mut totals = vec![0usize; classes];
    for l in labels {
        if *l < classes {
            totals[*l] += 1;
        }
    }
    let cut: Vec<usize> = totals
        .iter()
        .map(|n| {
            if *n < 2 {
                *n
            } else {
                ((0.8 * *n as f64).round() as usize).clamp(1, n - 1)
            }
        })
        .collect();
    let mut seen = vec![0usize; classes];
    labels
        .iter()
        .map(|l| {
            if *l >= classes {
                return Split::Train;
            }
            let s = if seen[*l] < cut[*l] { Split::Train } else { Split::Test };
            seen[*l] += 1;
            s
        })
        .collect()
}

#[derive(Debug)]
struct IdxImages {
    count: usize,
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let magic = be_u32(&bytes, 0, &display)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            path: display,
            offset: 0,
            msg: format!("bad image magic {magic:#010x}"),
        });
    }
    let count = be_u32(&bytes, 4, &display)? as usize;
    let rows = be_u32(&bytes, 8, &display)? as usize;
    let cols = be_u32(&bytes, 12, &display)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Parse {
            path: display,
            offset: bytes.len().min(expected) as u64,
            msg: format!("file is {} bytes, header implies {expected}", bytes.len()),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let magic = be_u32(&bytes, 0, &display)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            path: display,
            offset: 0,
            msg: format!("bad label magic {magic:#010x}"),
        });
    }
    let count = be_u32(&bytes, 4, &display)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::Parse {
            path: display,
            offset: bytes.len().min(8 + count) as u64,
            msg: format!("file is {} bytes, header implies {}", bytes.len(), 8 + count),
        });
    }
    Ok(bytes[8..].to_vec())
}

fn be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            path: path.to_string(),
            offset: offset as u64,
            msg: "truncated header".into(),
        })
}
