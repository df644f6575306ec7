//! Feed-forward classifier: parameter layout, forward pass, hand-derived
//! backpropagation and the stochastic gradient of the posterior energy
//!
//! `U(θ) = λ/2 ‖θ‖² − Σ_i log p(y_i | x_i, θ)`.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! row-major as `out_dim × in_dim`, followed by its `out_dim` biases. Biases are
//! ordinary coordinates and can be masked like any weight.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::SparsityMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Dimension(format!(
                "layer dimensions must be positive, got {in_dim}→{out_dim}"
            )));
        }
        Ok(LayerSpec {
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Where one layer's weights and biases sit inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerOffsets {
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
}

impl LayerOffsets {
    /// All coordinates owned by the layer (weights then biases).
    pub fn range(&self) -> Range<usize> {
        self.weight_offset..self.bias_offset + self.bias_len
    }

    pub fn weights(&self) -> Range<usize> {
        self.weight_offset..self.weight_offset + self.weight_len
    }

    pub fn biases(&self) -> Range<usize> {
        self.bias_offset..self.bias_offset + self.bias_len
    }

    pub fn len(&self) -> usize {
        self.weight_len + self.bias_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shapes and activations of a multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    num_classes: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, num_classes: usize) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Dimension("network needs at least one layer".into()));
        };
        if num_classes == 0 {
            return Err(Error::Dimension("num_classes must be positive".into()));
        }
        if last.out_dim != num_classes {
            return Err(Error::Dimension(format!(
                "last layer emits {} outputs but num_classes is {num_classes}",
                last.out_dim
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Dimension(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        for l in &layers {
            LayerSpec::new(l.in_dim, l.out_dim, l.activation)?;
        }
        Ok(NetworkSpec {
            layers,
            num_classes,
        })
    }

    /// ReLU MLP through `widths` (input, hidden..., classes) with a linear
    /// output layer.
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Dimension(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkSpec::new(layers, widths[n])
    }

    /// 784→200→200→10, the Fashion-MNIST architecture (K = 199,210).
    pub fn mlp200() -> Self {
        NetworkSpec::mlp(&[784, 200, 200, 10]).expect("static shape is valid")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// K, the total parameter count.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerSpec::num_params).sum()
    }

    pub fn layout(&self) -> Vec<LayerOffsets> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|l| {
                let weight_len = l.in_dim * l.out_dim;
                let o = LayerOffsets {
                    weight_offset: offset,
                    weight_len,
                    bias_offset: offset + weight_len,
                    bias_len: l.out_dim,
                };
                offset += weight_len + l.out_dim;
                o
            })
            .collect()
    }

    /// Widths from input to output, e.g. `[784, 200, 200, 10]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }
}

/// Flat parameter vector θ ∈ R^K with its layer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    offsets: Vec<LayerOffsets>,
}

impl ParamVector {
    pub fn zeros(net: &NetworkSpec) -> Self {
        ParamVector {
            values: vec![0.0; net.num_params()],
            offsets: net.layout(),
        }
    }

    pub fn from_values(net: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != net.num_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, network needs {}",
                values.len(),
                net.num_params()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {k} is {}", values[k])));
        }
        Ok(ParamVector {
            values,
            offsets: net.layout(),
        })
    }

    /// He-uniform weights, `U(±√(6/in_dim))` per layer, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(net: &NetworkSpec, rng: &mut R) -> Self {
        let mut p = ParamVector::zeros(net);
        for (layer, off) in net.layers().iter().zip(net.layout()) {
            let bound = (6.0 / layer.in_dim as f64).sqrt();
            for v in &mut p.values[off.weights()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn offsets(&self) -> &[LayerOffsets] {
        &self.offsets
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check(&self, net: &NetworkSpec) -> Result<()> {
        if self.values.len() != net.num_params() || self.offsets != net.layout() {
            return Err(Error::Dimension(format!(
                "parameter vector of length {} does not match network with K = {}",
                self.values.len(),
                net.num_params()
            )));
        }
        Ok(())
    }
}

/// A batch of inputs and their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Minibatch {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Dimension("minibatch is empty".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Minibatch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Isotropic Gaussian prior with precision λ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub precision: f64,
}

impl PriorConfig {
    pub fn new(precision: f64) -> Result<Self> {
        if !(precision >= 0.0 && precision.is_finite()) {
            return Err(Error::Config(format!(
                "prior precision must be a finite value ≥ 0, got {precision}"
            )));
        }
        Ok(PriorConfig { precision })
    }
}

/// Intermediate values kept by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch features.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Array2<f64>>,
    digest: u64,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.inputs[0].nrows()
    }
}

fn digest(values: &[f64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
    })
}

fn weight_view<'a>(values: &'a [f64], layer: &LayerSpec, off: &LayerOffsets) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((layer.out_dim, layer.in_dim), &values[off.weights()])
        .expect("layout matches layer shape")
}

fn bias_view<'a>(values: &'a [f64], off: &LayerOffsets) -> ArrayView1<'a, f64> {
    ArrayView1::from(&values[off.biases()])
}

fn effective_values<'a>(
    net: &NetworkSpec,
    params: &'a ParamVector,
    mask: Option<&SparsityMask>,
) -> Result<std::borrow::Cow<'a, [f64]>> {
    params.check(net)?;
    match mask {
        None => Ok(std::borrow::Cow::Borrowed(params.values())),
        Some(m) => {
            if m.len() != params.len() {
                return Err(Error::Dimension(format!(
                    "mask has {} bits, parameters have {}",
                    m.len(),
                    params.len()
                )));
            }
            Ok(std::borrow::Cow::Owned(m.apply_slice(params.values())))
        }
    }
}

fn check_features(net: &NetworkSpec, features: ArrayView2<'_, f64>) -> Result<()> {
    if features.ncols() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "inputs have {} features, network expects {}",
            features.ncols(),
            net.input_dim()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("input features contain a non-finite value".into()));
    }
    Ok(())
}

fn layer_out(
    values: &[f64],
    layer: &LayerSpec,
    off: &LayerOffsets,
    input: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let w = weight_view(values, layer, off);
    let mut z = input.dot(&w.t());
    z += &bias_view(values, off);
    z
}

fn activate(act: Activation, z: &Array2<f64>) -> Array2<f64> {
    match act {
        Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Identity => z.clone(),
    }
}

/// Logits for every row of `batch`, evaluated at `mask ⊙ params`.
pub fn forward(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    batch: &Minibatch,
) -> Result<(Array2<f64>, ForwardCache)> {
    let values = effective_values(net, params, mask)?;
    check_features(net, batch.features.view())?;

    let mut inputs = Vec::with_capacity(net.layers().len());
    let mut pre_activations = Vec::with_capacity(net.layers().len());
    let mut a = batch.features.clone();
    for (layer, off) in net.layers().iter().zip(params.offsets()) {
        let z = layer_out(&values, layer, off, a.view());
        let next = activate(layer.activation, &z);
        inputs.push(a);
        pre_activations.push(z);
        a = next;
    }
    let cache = ForwardCache {
        inputs,
        pre_activations,
        digest: digest(&values),
    };
    Ok((a, cache))
}

/// Logits without keeping a cache; used for evaluation.
pub fn logits(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    features: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let values = effective_values(net, params, mask)?;
    check_features(net, features)?;
    let offsets = params.offsets();
    let mut a = layer_out(&values, &net.layers()[0], &offsets[0], features);
    a = activate(net.layers()[0].activation, &a);
    for (layer, off) in net.layers().iter().zip(offsets).skip(1) {
        let z = layer_out(&values, layer, off, a.view());
        a = activate(layer.activation, &z);
    }
    Ok(a)
}

/// Row-wise log-softmax with the max shift.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`) and its
/// gradient with respect to the logits, `(softmax − onehot) / B`.
pub fn nll_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Dimension(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::Dimension(format!(
            "label {y} out of range for {} classes",
            logits.ncols()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logits contain a non-finite value".into()));
    }
    let b = labels.len() as f64;
    let logp = log_softmax(logits);
    let mut total = 0.0;
    let mut d = logp.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        total -= logp[[i, y]];
        d[[i, y]] -= 1.0;
    }
    d /= b;
    Ok((total / b, d))
}

/// Gradient of the mean NLL with respect to all K parameters, evaluated at
/// `mask ⊙ params`. Masked coordinates are exactly zero.
pub fn backward(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
) -> Result<ParamVector> {
    let values = effective_values(net, params, mask)?;
    let n_layers = net.layers().len();
    if cache.inputs.len() != n_layers || cache.digest != digest(&values) {
        return Err(Error::Usage(
            "forward cache does not belong to these parameters".into(),
        ));
    }
    if dlogits.dim() != (cache.batch_len(), net.num_classes()) {
        return Err(Error::Usage(format!(
            "dlogits shape {:?} does not match cached batch of {} rows",
            dlogits.dim(),
            cache.batch_len()
        )));
    }

    let mut grad = ParamVector::zeros(net);
    let mut dz = dlogits.clone();
    for l in (0..n_layers).rev() {
        let layer = &net.layers()[l];
        let off = params.offsets()[l];
        let dw = dz.t().dot(&cache.inputs[l]);
        let db = dz.sum_axis(Axis(0));
        let g = grad.values_mut();
        g[off.weights()].copy_from_slice(dw.as_slice().expect("standard layout"));
        g[off.biases()].copy_from_slice(db.as_slice().expect("standard layout"));
        if l > 0 {
            let w = weight_view(&values, layer, &off);
            let mut da = dz.dot(&w);
            if net.layers()[l - 1].activation == Activation::Relu {
                // subgradient 0 at exactly 0
                ndarray::Zip::from(&mut da)
                    .and(&cache.pre_activations[l - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            dz = da;
        }
    }
    if let Some(m) = mask {
        m.project(grad.values_mut());
    }
    Ok(grad)
}

/// Mean NLL on `batch` and its gradient, both at `mask ⊙ params`.
pub fn loss_and_grad(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    batch: &Minibatch,
) -> Result<(f64, ParamVector)> {
    let (z, cache) = forward(net, params, mask, batch)?;
    let (loss, dz) = nll_loss(&z, &batch.labels)?;
    let grad = backward(net, params, mask, &cache, &dz)?;
    Ok((loss, grad))
}

/// Minibatch estimate of ∇U restricted to the substructure:
/// `λ·(m ⊙ θ) + (N/B) Σ_batch ∇ nll_i`.
pub fn stochastic_grad_u(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    batch: &Minibatch,
    dataset_len: usize,
    prior: PriorConfig,
) -> Result<ParamVector> {
    let (_, grad) = stochastic_grad_u_with_loss(net, params, mask, batch, dataset_len, prior)?;
    Ok(grad)
}

pub(crate) fn stochastic_grad_u_with_loss(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    batch: &Minibatch,
    dataset_len: usize,
    prior: PriorConfig,
) -> Result<(f64, ParamVector)> {
    if batch.len() > dataset_len {
        return Err(Error::Dimension(format!(
            "batch of {} exceeds dataset size {dataset_len}",
            batch.len()
        )));
    }
    let (loss, mut grad) = loss_and_grad(net, params, mask, batch)?;
    let n = dataset_len as f64;
    let lambda = prior.precision;
    let theta = params.values();
    for (k, g) in grad.values_mut().iter_mut().enumerate() {
        let active = mask.is_none_or(|m| m.is_active(k));
        *g = if active { n * *g + lambda * theta[k] } else { 0.0 };
    }
    Ok((loss, grad))
}

/// Per-row class probabilities.
pub fn predict_proba(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    features: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    Ok(softmax(&logits(net, params, mask, features)?))
}

/// Convenience wrapper for a single input vector.
pub fn predict_one(
    net: &NetworkSpec,
    params: &ParamVector,
    mask: Option<&SparsityMask>,
    input: &[f64],
) -> Result<Array1<f64>> {
    let x = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(predict_proba(net, params, mask, x)?.row(0).to_owned())
}
