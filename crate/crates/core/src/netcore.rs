//! Dense feedforward representation network `g` and linear classification
//! head `h`, with analytic forward/backward passes and the three loss
//! families used throughout the crate.
//!
//! Everything operates on flat row-major `f64` buffers. The representation
//! network is a stack of dense layers (relu or identity); the head is a
//! single linear map from representation space to class logits. Gradients
//! are exact reverse-mode derivations, exercised against central finite
//! differences in the test suite.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::{argmax, atomic_write, axpy, logsumexp, matvec, matvec_t};
use crate::{Error, Result};

/// Activation applied elementwise after a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative at pre-activation `v`; relu uses 0 at the kink.
    fn grad(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `act(W x + b)` with `W` stored row-major `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut pre = matvec(&self.weights, self.out_dim, self.in_dim, x);
        for (p, b) in pre.iter_mut().zip(&self.bias) {
            *p += b;
        }
        let out = pre.iter().map(|&v| self.activation.apply(v)).collect();
        (pre, out)
    }
}

/// Linear classification head: logits = `W z + b`, `W` row-major `C x m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearHead {
    pub n_classes: usize,
    pub rep_dim: usize,
    /// Row-major `n_classes x rep_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(n_classes: usize, rep_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let head = LinearHead {
            n_classes,
            rep_dim,
            weights,
            bias,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("head needs at least 2 classes"));
        }
        if self.rep_dim == 0 {
            return Err(Error::invalid("head representation dimension must be > 0"));
        }
        if self.weights.len() != self.n_classes * self.rep_dim {
            return Err(Error::invalid(format!(
                "head weight buffer has {} entries, expected {}",
                self.weights.len(),
                self.n_classes * self.rep_dim
            )));
        }
        if self.bias.len() != self.n_classes {
            return Err(Error::invalid("head bias length must equal class count"));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::invalid("head parameters must be finite"));
        }
        Ok(())
    }

    /// Row `c` of the weight matrix.
    pub fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.rep_dim..(c + 1) * self.rep_dim]
    }

    /// Logits `W z + b`.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.rep_dim {
            return Err(Error::invalid(format!(
                "representation has dimension {}, head expects {}",
                z.len(),
                self.rep_dim
            )));
        }
        let mut l = matvec(&self.weights, self.n_classes, self.rep_dim, z);
        for (li, bi) in l.iter_mut().zip(&self.bias) {
            *li += bi;
        }
        Ok(l)
    }

    /// Predicted class: argmax of the logits, ties resolved to the lowest index.
    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(z)?))
    }
}

/// Full model: representation layers plus linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
    pub head: LinearHead,
}

/// Architecture description used to initialize [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub input_dim: usize,
    /// Hidden widths of the representation network (relu).
    pub hidden: Vec<usize>,
    /// Output dimension of the representation network (identity last layer).
    pub rep_dim: usize,
    pub n_classes: usize,
}

impl ModelShape {
    /// Desk-scale default: two hidden relu layers of width 16 feeding a
    /// 2-dimensional representation.
    pub fn desk_default(input_dim: usize, n_classes: usize) -> Self {
        ModelShape {
            input_dim,
            hidden: vec![16, 16],
            rep_dim: 2,
            n_classes,
        }
    }
}

impl ModelParams {
    /// Seeded Xavier-uniform initialization; biases start at zero. Hidden
    /// layers use relu, the final representation layer is linear.
    pub fn init(shape: &ModelShape, seed: u64) -> Result<Self> {
        if shape.input_dim == 0 || shape.rep_dim == 0 {
            return Err(Error::invalid("model dimensions must be > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![shape.input_dim];
        dims.extend(&shape.hidden);
        dims.push(shape.rep_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[w], dims[w + 1]);
            let activation = if w + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer {
                in_dim: fan_in,
                out_dim: fan_out,
                weights: xavier(&mut rng, fan_in, fan_out),
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        let head = LinearHead {
            n_classes: shape.n_classes,
            rep_dim: shape.rep_dim,
            weights: xavier(&mut rng, shape.rep_dim, shape.n_classes),
            bias: vec![0.0; shape.n_classes],
        };
        let params = ModelParams { layers, head };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(Error::invalid(format!("layer {i} has a zero dimension")));
            }
            if layer.weights.len() != layer.out_dim * layer.in_dim {
                return Err(Error::invalid(format!("layer {i} weight buffer size mismatch")));
            }
            if layer.bias.len() != layer.out_dim {
                return Err(Error::invalid(format!("layer {i} bias size mismatch")));
            }
            if !layer.weights.iter().chain(&layer.bias).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite entries")));
            }
            if i + 1 < self.layers.len() && layer.out_dim != self.layers[i + 1].in_dim {
                return Err(Error::invalid(format!(
                    "layer {i} output dimension {} does not feed layer {} input {}",
                    layer.out_dim,
                    i + 1,
                    self.layers[i + 1].in_dim
                )));
            }
        }
        if let Some(last) = self.layers.last() {
            if last.out_dim != self.head.rep_dim {
                return Err(Error::invalid(format!(
                    "representation dimension {} does not match head expectation {}",
                    last.out_dim, self.head.rep_dim
                )));
            }
        }
        self.head.validate()
    }

    /// Input dimension accepted by the representation network.
    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map(|l| l.in_dim)
            .unwrap_or(self.head.rep_dim)
    }

    /// Representation dimension produced by the network.
    pub fn rep_dim(&self) -> usize {
        self.head.rep_dim
    }
}

pub(crate) fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect()
}

/// An input-space sample with its class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: usize,
}

/// A representation-space sample with its class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepPoint {
    pub z: Vec<f64>,
    pub y: usize,
}

/// The loss families supported by certification and training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFamily {
    CrossEntropy,
    /// `max{0, 1-t} - alpha * max{0, t-1}` on the margin
    /// `t = logit_y - max_{k != y} logit_k`.
    ModifiedHinge { alpha: f64 },
    /// Classification error; gradients are undefined.
    ZeroOne,
}

impl LossFamily {
    /// Modified hinge with the default damping constant 0.1.
    pub fn modified_hinge_default() -> Self {
        LossFamily::ModifiedHinge { alpha: 0.1 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossFamily::CrossEntropy => "cross_entropy",
            LossFamily::ModifiedHinge { .. } => "modified_hinge",
            LossFamily::ZeroOne => "zero_one",
        }
    }

    /// Whether gradient-based operations accept this family.
    pub fn differentiable(&self) -> bool {
        !matches!(self, LossFamily::ZeroOne)
    }

    fn check(&self) -> Result<()> {
        if let LossFamily::ModifiedHinge { alpha } = self {
            if !(*alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::invalid("modified hinge needs alpha > 0"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Margin `t = logit_y - max_{k != y} logit_k` and the index attaining the max
/// (ties resolve to the lowest competing index).
fn margin(logits: &[f64], y: usize) -> Result<(f64, usize)> {
    if logits.len() < 2 {
        return Err(Error::invalid("margin needs at least 2 classes"));
    }
    if y >= logits.len() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            logits.len()
        )));
    }
    let mut best = usize::MAX;
    for (k, v) in logits.iter().enumerate() {
        if k != y && (best == usize::MAX || *v > logits[best]) {
            best = k;
        }
    }
    Ok((logits[y] - logits[best], best))
}

fn loss_from_logits(logits: &[f64], y: usize, family: &LossFamily) -> Result<f64> {
    family.check()?;
    if y >= logits.len() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            logits.len()
        )));
    }
    match family {
        LossFamily::CrossEntropy => Ok(logsumexp(logits) - logits[y]),
        LossFamily::ModifiedHinge { alpha } => {
            let (t, _) = margin(logits, y)?;
            Ok((1.0 - t).max(0.0) - alpha * (t - 1.0).max(0.0))
        }
        LossFamily::ZeroOne => Ok(if argmax(logits) == y { 0.0 } else { 1.0 }),
    }
}

/// Gradient of the loss with respect to the logits. For the modified hinge,
/// the right-derivative is used at the kink `t = 1` and logit ties resolve to
/// the lowest competing class, so a fixed subgradient is always returned.
pub fn dloss_dlogits(logits: &[f64], y: usize, family: &LossFamily) -> Result<Vec<f64>> {
    family.check()?;
    match family {
        LossFamily::CrossEntropy => {
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let mut g: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            g[y] -= 1.0;
            Ok(g)
        }
        LossFamily::ModifiedHinge { alpha } => {
            let (t, k) = margin(logits, y)?;
            let dt = if t < 1.0 { -1.0 } else { -alpha };
            let mut g = vec![0.0; logits.len()];
            g[y] = dt;
            g[k] = -dt;
            Ok(g)
        }
        LossFamily::ZeroOne => Err(Error::UnsupportedLoss {
            family: "zero_one",
            what: "gradients",
        }),
    }
}

/// Loss of the head at representation `z` with label `y`.
pub fn loss(head: &LinearHead, z: &[f64], y: usize, family: &LossFamily) -> Result<f64> {
    loss_from_logits(&head.logits(z)?, y, family)
}

/// Analytic gradient of the loss with respect to the representation `z`.
///
/// Rejects the 0/1 family. At hinge kinks the right-derivative is returned.
pub fn grad_loss_z(head: &LinearHead, z: &[f64], y: usize, family: &LossFamily) -> Result<Vec<f64>> {
    let dlogits = dloss_dlogits(&head.logits(z)?, y, family)?;
    Ok(matvec_t(&head.weights, head.n_classes, head.rep_dim, &dlogits))
}

/// Applies the representation network to `x`.
pub fn forward_rep(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_rep_cached(params, x)?.0)
}

/// Intermediate activations recorded during a forward pass, consumed by
/// [`rep_backprop`].
#[derive(Clone, Debug)]
pub struct RepCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    preacts: Vec<Vec<f64>>,
}

/// Forward pass through the representation network, keeping the activations
/// needed for reverse mode.
pub fn forward_rep_cached(params: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, RepCache)> {
    if x.len() != params.input_dim() {
        return Err(Error::invalid(format!(
            "input has dimension {}, network expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut preacts = Vec::with_capacity(params.layers.len());
    let mut cur = x.to_vec();
    for layer in &params.layers {
        let (pre, out) = layer.forward(&cur);
        inputs.push(std::mem::replace(&mut cur, out));
        preacts.push(pre);
    }
    Ok((cur, RepCache { inputs, preacts }))
}

/// Gradients with the same shapes as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<LayerGrads>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelGrads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            head_weights: vec![0.0; params.head.weights.len()],
            head_bias: vec![0.0; params.head.bias.len()],
        }
    }

    fn matches(&self, params: &ModelParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
            && self.head_weights.len() == params.head.weights.len()
            && self.head_bias.len() == params.head.bias.len()
    }
}

/// Backpropagates a representation-space cotangent through the layers.
///
/// Adds `scale * d(rep . cot)/d(layer params)` into `grads` (when provided)
/// and returns the gradient with respect to the input.
pub fn rep_backprop(
    params: &ModelParams,
    cache: &RepCache,
    cotangent: &[f64],
    scale: f64,
    mut grads: Option<&mut ModelGrads>,
) -> Vec<f64> {
    let mut delta = cotangent.to_vec();
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let pre = &cache.preacts[l];
        let input = &cache.inputs[l];
        let dpre: Vec<f64> = delta
            .iter()
            .zip(pre)
            .map(|(d, p)| d * layer.activation.grad(*p))
            .collect();
        if let Some(g) = grads.as_deref_mut() {
            let lg = &mut g.layers[l];
            for (o, dp) in dpre.iter().enumerate() {
                axpy(
                    &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim],
                    scale * dp,
                    input,
                );
                lg.bias[o] += scale * dp;
            }
        }
        delta = matvec_t(&layer.weights, layer.out_dim, layer.in_dim, &dpre);
    }
    delta
}

/// Exact reverse-mode gradients of the mean loss over a batch, together with
/// the mean loss itself.
pub fn backward(
    params: &ModelParams,
    batch: &[LabeledPoint],
    family: &LossFamily,
) -> Result<(ModelGrads, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("backward needs a non-empty batch"));
    }
    let mut grads = ModelGrads::zeros_like(params);
    let scale = 1.0 / batch.len() as f64;
    let mut mean_loss = 0.0;
    for point in batch {
        let (rep, cache) = forward_rep_cached(params, &point.x)?;
        let logits = params.head.logits(&rep)?;
        mean_loss += scale * loss_from_logits(&logits, point.y, family)?;
        let dlogits = dloss_dlogits(&logits, point.y, family)?;
        accumulate_head(&mut grads, &params.head, &rep, &dlogits, scale);
        let cot = matvec_t(
            &params.head.weights,
            params.head.n_classes,
            params.head.rep_dim,
            &dlogits,
        );
        rep_backprop(params, &cache, &cot, scale, Some(&mut grads));
    }
    Ok((grads, mean_loss))
}

/// Adds `scale * dlogits x z` into the head gradient buffers.
pub fn accumulate_head(
    grads: &mut ModelGrads,
    head: &LinearHead,
    z: &[f64],
    dlogits: &[f64],
    scale: f64,
) {
    for (c, dl) in dlogits.iter().enumerate() {
        axpy(
            &mut grads.head_weights[c * head.rep_dim..(c + 1) * head.rep_dim],
            scale * dl,
            z,
        );
        grads.head_bias[c] += scale * dl;
    }
}

/// Gradient of the full-model loss with respect to the input `x`.
pub fn input_gradient(
    params: &ModelParams,
    x: &[f64],
    y: usize,
    family: &LossFamily,
) -> Result<Vec<f64>> {
    let (rep, cache) = forward_rep_cached(params, x)?;
    let cot = grad_loss_z(&params.head, &rep, y, family)?;
    Ok(rep_backprop(params, &cache, &cot, 1.0, None))
}

/// One plain gradient-descent step: `params - eta * grads`, returned as a new
/// parameter snapshot.
pub fn sgd_update(params: &ModelParams, grads: &ModelGrads, eta: f64) -> Result<ModelParams> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::invalid("learning rate must be finite and >= 0"));
    }
    if !grads.matches(params) {
        return Err(Error::invalid("gradient shapes do not match parameters"));
    }
    let mut out = params.clone();
    for (layer, g) in out.layers.iter_mut().zip(&grads.layers) {
        axpy(&mut layer.weights, -eta, &g.weights);
        axpy(&mut layer.bias, -eta, &g.bias);
    }
    axpy(&mut out.head.weights, -eta, &grads.head_weights);
    axpy(&mut out.head.bias, -eta, &grads.head_bias);
    Ok(out)
}

/// Version tag written into checkpoint files.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    model: ModelParams,
}

/// Writes a versioned JSON checkpoint. Floats are serialized with shortest
/// round-trip formatting, so a load returns bit-identical parameters.
pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    params.validate()?;
    let record = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: params.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&record)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)?;
    Ok(())
}

/// Loads and validates a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path)?;
    let record: Checkpoint = serde_json::from_slice(&bytes)?;
    if record.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "checkpoint version {} unsupported (expected {})",
            record.version, CHECKPOINT_VERSION
        )));
    }
    record.model.validate()?;
    Ok(record.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_params(dim: usize, n_classes: usize) -> ModelParams {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        ModelParams {
            layers: vec![DenseLayer {
                in_dim: dim,
                out_dim: dim,
                weights: w,
                bias: vec![0.0; dim],
                activation: Activation::Identity,
            }],
            head: LinearHead {
                n_classes,
                rep_dim: dim,
                weights: vec![0.0; n_classes * dim],
                bias: vec![0.0; n_classes],
            },
        }
    }

    fn binary_head(w0: [f64; 2], w1: [f64; 2], b: [f64; 2]) -> LinearHead {
        LinearHead {
            n_classes: 2,
            rep_dim: 2,
            weights: vec![w0[0], w0[1], w1[0], w1[1]],
            bias: b.to_vec(),
        }
    }

    #[test]
    fn forward_identity_network_is_identity() {
        let params = identity_params(2, 2);
        assert_eq!(forward_rep(&params, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn forward_relu_clamps_negative_units() {
        let params = ModelParams {
            layers: vec![DenseLayer {
                in_dim: 2,
                out_dim: 2,
                weights: vec![1.0, 0.0, 0.0, -1.0],
                bias: vec![0.0, 0.0],
                activation: Activation::Relu,
            }],
            head: LinearHead {
                n_classes: 2,
                rep_dim: 2,
                weights: vec![0.0; 4],
                bias: vec![0.0; 2],
            },
        };
        assert_eq!(forward_rep(&params, &[1.0, 2.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        // Independent re-computation of the same arithmetic with bare loops,
        // no shared helpers.
        let shape = ModelShape {
            input_dim: 3,
            hidden: vec![4],
            rep_dim: 2,
            n_classes: 2,
        };
        let params = ModelParams::init(&shape, 7).unwrap();
        let x = [0.3, -1.2, 0.5];
        let got = forward_rep(&params, &x).unwrap();

        let mut cur: Vec<f64> = x.to_vec();
        for layer in &params.layers {
            let mut next = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let mut acc = layer.bias[o];
                for i in 0..layer.in_dim {
                    acc += layer.weights[o * layer.in_dim + i] * cur[i];
                }
                next[o] = match layer.activation {
                    Activation::Relu => {
                        if acc > 0.0 {
                            acc
                        } else {
                            0.0
                        }
                    }
                    Activation::Identity => acc,
                };
            }
            cur = next;
        }
        assert_eq!(got, cur);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let params = identity_params(2, 2);
        assert!(matches!(
            forward_rep(&params, &[1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let head = binary_head([0.0, 0.0], [0.0, 0.0], [0.0, 0.0]);
        let v = loss(&head, &[3.0, -1.0], 0, &LossFamily::CrossEntropy).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn modified_hinge_matches_hand_value() {
        // t = 2 with alpha = 0.1: max{0,-1} - 0.1 * max{0,1} = -0.1
        let head = binary_head([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        let v = loss(&head, &[1.0, 5.0], 0, &LossFamily::ModifiedHinge { alpha: 0.1 }).unwrap();
        assert!((v - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_one_counts_misclassification() {
        let head = binary_head([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        // logits (3, -3): argmax 0 != y=1
        assert_eq!(loss(&head, &[3.0, 0.0], 1, &LossFamily::ZeroOne).unwrap(), 1.0);
        assert_eq!(loss(&head, &[3.0, 0.0], 0, &LossFamily::ZeroOne).unwrap(), 0.0);
    }

    #[test]
    fn zero_one_tie_breaks_to_lowest_index() {
        let head = binary_head([1.0, 0.0], [1.0, 0.0], [0.0, 0.0]);
        // Equal logits everywhere: prediction is class 0.
        assert_eq!(loss(&head, &[1.0, 1.0], 0, &LossFamily::ZeroOne).unwrap(), 0.0);
        assert_eq!(loss(&head, &[1.0, 1.0], 1, &LossFamily::ZeroOne).unwrap(), 1.0);
    }

    #[test]
    fn cross_entropy_grad_matches_hand_example() {
        // softmax - onehot = (-1/2, 1/2); W^T (.) = (-1, 0)
        let head = binary_head([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        let g = grad_loss_z(&head, &[0.0, 0.0], 0, &LossFamily::CrossEntropy).unwrap();
        assert!((g[0] - (-1.0)).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn hinge_grad_far_above_margin_uses_damped_slope() {
        let head = binary_head([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        let alpha = 0.1;
        // t = 10 >> 1: gradient = -alpha * (W_0 - W_1) = -alpha * (2, 0)
        let g = grad_loss_z(&head, &[5.0, 0.0], 0, &LossFamily::ModifiedHinge { alpha }).unwrap();
        assert!((g[0] - (-0.2)).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn zero_one_gradient_is_rejected() {
        let head = binary_head([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        assert!(matches!(
            grad_loss_z(&head, &[0.0, 0.0], 0, &LossFamily::ZeroOne),
            Err(Error::UnsupportedLoss { .. })
        ));
    }

    #[test]
    fn softmax_is_stable_at_logit_magnitude_1e4() {
        let head = LinearHead {
            n_classes: 3,
            rep_dim: 1,
            weights: vec![1e4, -1e4, 0.5e4],
            bias: vec![0.0; 3],
        };
        let l = loss(&head, &[1.0], 0, &LossFamily::CrossEntropy).unwrap();
        assert!(l.is_finite() && l >= 0.0);
        let g = dloss_dlogits(&head.logits(&[1.0]).unwrap(), 0, &LossFamily::CrossEntropy).unwrap();
        // softmax sums to one, so the gradient entries sum to zero
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn modified_hinge_respects_linear_lower_bound() {
        let alpha = 0.1;
        let head = binary_head([1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]);
        for i in -20..=20 {
            let z = [i as f64 * 0.25, 0.3];
            let t = {
                let l = head.logits(&z).unwrap();
                l[0] - l[1]
            };
            let v = loss(&head, &z, 0, &LossFamily::ModifiedHinge { alpha }).unwrap();
            assert!(v >= -alpha * (t - 1.0) - 1e-12);
        }
    }

    #[test]
    fn backward_single_linear_layer_matches_logistic_closed_form() {
        // Identity representation, so the head is plain logistic regression:
        // dW = (softmax - onehot) outer z, db = softmax - onehot.
        let mut params = identity_params(2, 2);
        params.head = binary_head([0.5, -0.25], [-0.5, 0.1], [0.05, -0.05]);
        let pt = LabeledPoint {
            x: vec![1.5, -2.0],
            y: 0,
        };
        let (grads, _) = backward(&params, &[pt.clone()], &LossFamily::CrossEntropy).unwrap();
        let logits = params.head.logits(&pt.x).unwrap();
        let m = logits[0].max(logits[1]);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let s = e[0] + e[1];
        let diff = [e[0] / s - 1.0, e[1] / s];
        for c in 0..2 {
            for j in 0..2 {
                let expect = diff[c] * pt.x[j];
                assert!((grads.head_weights[c * 2 + j] - expect).abs() < 1e-12);
            }
            assert!((grads.head_bias[c] - diff[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_step_decreases_loss() {
        let shape = ModelShape {
            input_dim: 2,
            hidden: vec![8],
            rep_dim: 2,
            n_classes: 2,
        };
        let params = ModelParams::init(&shape, 3).unwrap();
        let batch = vec![
            LabeledPoint { x: vec![1.0, 0.5], y: 0 },
            LabeledPoint { x: vec![-1.0, -0.5], y: 1 },
        ];
        let (grads, before) = backward(&params, &batch, &LossFamily::CrossEntropy).unwrap();
        let stepped = sgd_update(&params, &grads, 1e-3).unwrap();
        let (_, after) = backward(&stepped, &batch, &LossFamily::CrossEntropy).unwrap();
        assert!(after < before);
    }

    #[test]
    fn backward_rejects_empty_batch() {
        let params = identity_params(2, 2);
        assert!(matches!(
            backward(&params, &[], &LossFamily::CrossEntropy),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sgd_update_edge_cases() {
        let params = identity_params(2, 2);
        let zero = ModelGrads::zeros_like(&params);
        assert_eq!(sgd_update(&params, &zero, 0.5).unwrap(), params);
        let (grads, _) = backward(
            &params,
            &[LabeledPoint { x: vec![1.0, 0.0], y: 0 }],
            &LossFamily::CrossEntropy,
        )
        .unwrap();
        assert_eq!(sgd_update(&params, &grads, 0.0).unwrap(), params);
    }

    #[test]
    fn sgd_update_scalar_arithmetic() {
        let mut params = identity_params(2, 2);
        params.head.weights = vec![1.0, 0.0, 0.0, 0.0];
        let mut grads = ModelGrads::zeros_like(&params);
        grads.head_weights[0] = 2.0;
        let out = sgd_update(&params, &grads, 0.1).unwrap();
        assert!((out.head.weights[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_update_rejects_shape_mismatch() {
        let params = identity_params(2, 2);
        let other = identity_params(3, 2);
        let grads = ModelGrads::zeros_like(&other);
        assert!(matches!(
            sgd_update(&params, &grads, 0.1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let shape = ModelShape::desk_default(2, 3);
        let params = ModelParams::init(&shape, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        for (a, b) in loaded
            .head
            .weights
            .iter()
            .zip(&params.head.weights)
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_version_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let shape = ModelShape::desk_default(2, 2);
        let params = ModelParams::init(&shape, 0).unwrap();
        save_checkpoint(&path, &params).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn init_is_deterministic() {
        let shape = ModelShape::desk_default(2, 2);
        let a = ModelParams::init(&shape, 5).unwrap();
        let b = ModelParams::init(&shape, 5).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&shape, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn input_gradient_identity_equals_rep_gradient() {
        let mut params = identity_params(2, 2);
        params.head = binary_head([1.0, 0.2], [-0.3, 0.4], [0.0, 0.1]);
        let x = [0.7, -0.2];
        let gi = input_gradient(&params, &x, 0, &LossFamily::CrossEntropy).unwrap();
        let gz = grad_loss_z(&params.head, &x, 0, &LossFamily::CrossEntropy).unwrap();
        for (a, b) in gi.iter().zip(&gz) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
