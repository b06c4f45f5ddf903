//! Minimal differentiable dense classifier.
//!
//! A [`Model`] is a stack of affine layers (row-major weights, bias) with
//! ReLU or identity activations. Backpropagation is written out by hand and
//! produces exact gradients with respect to parameters and with respect to
//! the input; both are checked against central finite differences in the
//! test suites. Layers can be frozen, in which case their gradient blocks
//! stay bitwise zero and [`sgd_step`] leaves them bitwise untouched.
//!
//! All math runs in the [`Scalar`] type; training loops own a copy of the
//! model and mutate it through [`sgd_step`], while evaluation is read-only
//! and safe to share across threads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Probabilities are clamped here before the log so that cross-entropy
/// stays finite even for confident mispredictions.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > F::zero() {
                    z
                } else {
                    F::zero()
                }
            }
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU uses 0 at z = 0.
    #[inline]
    fn derivative<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

/// Dense layer `y = act(Wx + b)`, weights row-major with shape
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    frozen: bool,
    weights: Vec<F>,
    bias: Vec<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<F>,
        bias: Vec<F>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput("layer dims must be > 0".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::InvalidInput(format!(
                "layer shape mismatch: {}x{} with {} weights, {} biases",
                out_dim,
                in_dim,
                weights.len(),
                bias.len()
            )));
        }
        if !weights.iter().chain(bias.iter()).all(|w| w.is_finite()) {
            return Err(Error::InvalidInput("non-finite layer parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            frozen: false,
            weights,
            bias,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| F::from_f64(rng.gen_range(-limit..limit)))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            frozen: false,
            weights,
            bias: vec![F::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn frozen(&self) -> bool {
        self.frozen
    }
    pub fn weights(&self) -> &[F] {
        &self.weights
    }
    pub fn bias(&self) -> &[F] {
        &self.bias
    }

    fn affine_into(&self, x: &[F], out: &mut Vec<F>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                z += *w * *xi;
            }
            out.push(z);
        }
    }
}

/// Feedforward classifier over `K = output_dim` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    layers: Vec<Layer<F>>,
}

impl<F: Scalar> Model<F> {
    /// Validates layer composition: consecutive dims must chain and the
    /// final width is the class count (at least 2).
    pub fn from_layers(layers: Vec<Layer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::InvalidInput(format!(
                    "layer widths do not compose: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if layers.last().unwrap().out_dim < 2 {
            return Err(Error::InvalidInput("output dim must be >= 2".into()));
        }
        Ok(Self { layers })
    }

    /// Fresh network `dims[0] -> dims[1] -> ... -> dims[last]` with ReLU
    /// hidden layers and an identity output layer, Glorot-initialized from
    /// `seed`.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidInput("need input and output dims".into()));
        }
        let mut rng = rng::stream(seed, 0);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer::glorot(dims[i], dims[i + 1], act, &mut rng));
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }
    /// Number of classes K.
    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) -> Result<()> {
        let n = self.layers.len();
        self.layers
            .get_mut(layer)
            .map(|l| l.frozen = frozen)
            .ok_or_else(|| Error::InvalidInput(format!("no layer {layer} in {n}-layer model")))
    }

    /// Freezes layers `0..k`.
    pub fn freeze_first(&mut self, k: usize) -> Result<()> {
        if k > self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "cannot freeze {k} of {} layers",
                self.layers.len()
            )));
        }
        for i in 0..k {
            self.layers[i].frozen = true;
        }
        Ok(())
    }

    /// Replaces layer `i`, keeping the shape contract.
    pub fn replace_layer(&mut self, i: usize, layer: Layer<F>) -> Result<()> {
        let current = self
            .layers
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("no layer {i}")))?;
        if current.in_dim != layer.in_dim || current.out_dim != layer.out_dim {
            return Err(Error::InvalidInput("replacement layer shape mismatch".into()));
        }
        self.layers[i] = layer;
        Ok(())
    }

    fn check_input(&self, x: &[F]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "input length {} != model input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input entry".into()));
        }
        Ok(())
    }

    fn check_target(&self, target: &[F]) -> Result<()> {
        if target.len() != self.output_dim() {
            return Err(Error::InvalidInput(format!(
                "target length {} != class count {}",
                target.len(),
                self.output_dim()
            )));
        }
        let sum: f64 = target.iter().map(|t| t.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "target is not a distribution (sums to {sum})"
            )));
        }
        Ok(())
    }
}

/// Logits and softmax probabilities for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle<F> {
    pub logits: Vec<F>,
    pub probabilities: Vec<F>,
}

impl<F: Scalar> PredictionBundle<F> {
    /// Cross-entropy of the prediction against a target distribution,
    /// computed from log-sum-exp with the probability clamp.
    pub fn cross_entropy(&self, target: &[F]) -> F {
        let ln_clamp = F::from_f64(PROB_CLAMP.ln());
        let mut loss = F::zero();
        for (p, t) in self.probabilities.iter().zip(target) {
            if *t != F::zero() {
                let lp = p.ln().max(ln_clamp);
                loss -= *t * lp;
            }
        }
        loss
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Index of the largest entry, ties broken by lowest index.
pub fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One-hot distribution over `classes` entries.
pub fn one_hot<F: Scalar>(classes: usize, class: usize) -> Vec<F> {
    let mut t = vec![F::zero(); classes];
    t[class] = F::one();
    t
}

fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(logits[0], F::max);
    let exps: Vec<F> = logits.iter().map(|l| (*l - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct Trace<F> {
    /// Pre-activations per layer.
    pre: Vec<Vec<F>>,
    /// Activations, starting with the input itself.
    act: Vec<Vec<F>>,
}

fn forward_trace<F: Scalar>(model: &Model<F>, x: &[F]) -> Result<Trace<F>> {
    let mut pre = Vec::with_capacity(model.layer_count());
    let mut act = Vec::with_capacity(model.layer_count() + 1);
    act.push(x.to_vec());
    for (i, layer) in model.layers.iter().enumerate() {
        let mut z = Vec::new();
        layer.affine_into(act.last().unwrap(), &mut z);
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(
                format!("layer {i}"),
                "non-finite pre-activation",
            ));
        }
        let a = z.iter().map(|v| layer.activation.apply(*v)).collect();
        pre.push(z);
        act.push(a);
    }
    Ok(Trace { pre, act })
}

/// Forward pass: logits and softmax probabilities. Pure and deterministic.
pub fn forward<F: Scalar>(model: &Model<F>, x: &[F]) -> Result<PredictionBundle<F>> {
    model.check_input(x)?;
    let trace = forward_trace(model, x)?;
    let logits = trace.act.last().unwrap().clone();
    let probabilities = softmax(&logits);
    Ok(PredictionBundle {
        logits,
        probabilities,
    })
}

/// Parameter gradients, one block per layer, aligned with the model shape.
/// Frozen layers keep all-zero blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGradients<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients<F> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(model: &Model<F>) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![F::zero(); l.weights.len()],
                    bias: vec![F::zero(); l.out_dim],
                })
                .collect(),
        }
    }

    /// `self += scale * other`, used to mix forget and remain batches.
    pub fn add_scaled(&mut self, other: &Gradients<F>, scale: F) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * *y;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w *= factor;
            }
            for b in &mut l.bias {
                *b *= factor;
            }
        }
    }
}

type BackwardOutput<F> = (F, Option<Gradients<F>>, Option<Vec<F>>);

/// Shared backward pass. Returns the loss, parameter gradients (skipping
/// frozen layers) and, when requested, the gradient with respect to the
/// input.
fn backward<F: Scalar>(
    model: &Model<F>,
    x: &[F],
    target: &[F],
    want_params: bool,
    want_input: bool,
) -> Result<BackwardOutput<F>> {
    model.check_input(x)?;
    model.check_target(target)?;
    let trace = forward_trace(model, x)?;
    let logits = trace.act.last().unwrap();
    let probs = softmax(logits);
    let bundle = PredictionBundle {
        logits: logits.clone(),
        probabilities: probs.clone(),
    };
    let loss = bundle.cross_entropy(target);
    if !loss.is_finite() {
        return Err(Error::numeric(
            format!("layer {}", model.layer_count() - 1),
            "non-finite loss",
        ));
    }

    let mut grads = want_params.then(|| Gradients::zeros_like(model));

    // Softmax + cross-entropy collapse to p - t at the output, then chain
    // through the output activation.
    let last = model.layer_count() - 1;
    let mut delta: Vec<F> = probs
        .iter()
        .zip(target)
        .zip(&trace.pre[last])
        .map(|((p, t), z)| (*p - *t) * model.layers[last].activation.derivative(*z))
        .collect();

    for i in (0..model.layer_count()).rev() {
        let layer = &model.layers[i];
        if let Some(g) = grads.as_mut() {
            if !layer.frozen {
                let block = &mut g.layers[i];
                let input = &trace.act[i];
                let rows = block.weights.chunks_mut(layer.in_dim);
                for ((d, row), bias) in delta.iter().zip(rows).zip(block.bias.iter_mut()) {
                    for (w, a) in row.iter_mut().zip(input) {
                        *w = *d * *a;
                    }
                    *bias = *d;
                }
            }
        }
        let need_propagate = i > 0 || want_input;
        if need_propagate {
            let mut prev = vec![F::zero(); layer.in_dim];
            for (d, row) in delta.iter().zip(layer.weights.chunks(layer.in_dim)) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += *d * *w;
                }
            }
            if i > 0 {
                let act = model.layers[i - 1].activation;
                for (p, z) in prev.iter_mut().zip(&trace.pre[i - 1]) {
                    *p *= act.derivative(*z);
                }
            }
            delta = prev;
        }
    }

    let input_grad = want_input.then_some(delta);
    Ok((loss, grads, input_grad))
}

/// Loss and gradient with respect to all unfrozen parameters.
pub fn loss_grad_params<F: Scalar>(
    model: &Model<F>,
    x: &[F],
    target: &[F],
) -> Result<(F, Gradients<F>)> {
    let (loss, grads, _) = backward(model, x, target, true, false)?;
    Ok((loss, grads.unwrap()))
}

/// Loss and gradient with respect to the input vector.
pub fn loss_grad_input<F: Scalar>(model: &Model<F>, x: &[F], target: &[F]) -> Result<(F, Vec<F>)> {
    let (loss, _, g) = backward(model, x, target, false, true)?;
    Ok((loss, g.unwrap()))
}

/// Mean loss and mean parameter gradient over a batch of (input, target)
/// pairs.
pub fn batch_loss_grad<F: Scalar>(
    model: &Model<F>,
    batch: &[(&[F], &[F])],
) -> Result<(F, Gradients<F>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut total = Gradients::zeros_like(model);
    let mut loss = F::zero();
    for (x, t) in batch {
        let (l, g) = loss_grad_params(model, x, t)?;
        loss += l;
        total.add_scaled(&g, F::one());
    }
    let inv = F::one() / F::from_f64(batch.len() as f64);
    total.scale(inv);
    Ok((loss * inv, total))
}

/// One SGD step `w -= eta * grad` on every unfrozen layer. Frozen layers
/// are not touched at all.
pub fn sgd_step<F: Scalar>(model: &mut Model<F>, grads: &Gradients<F>, eta: f64) -> Result<()> {
    if eta <= 0.0 {
        return Err(Error::InvalidInput("learning rate must be > 0".into()));
    }
    if grads.layers.len() != model.layers.len() {
        return Err(Error::InvalidInput("gradient/model layer mismatch".into()));
    }
    let eta = F::from_f64(eta);
    for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
        if layer.frozen {
            continue;
        }
        if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
            return Err(Error::InvalidInput("gradient block shape mismatch".into()));
        }
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= eta * *gw;
        }
        for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= eta * *gb;
        }
    }
    Ok(())
}
