use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{output_shape, LayerSpec, Shape, BATCHNORM_EPSILON, BATCHNORM_MOMENTUM, INITIAL_RAW_SCALE};
use super::loss::{bernoulli_nll, bernoulli_nll_grad, elbo_loss, gaussian_kl, gaussian_kl_grad, sigmoid, softplus};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SeededRng};

/// Prior standard deviation of variational weights.
pub const DEFAULT_PRIOR_SCALE: f64 = 1.0;

static VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout and weight sampling active.
    Train,
    /// Running statistics, no dropout, variational weights at their means.
    Infer,
    /// Like `Infer`, but variational weights are sampled (Monte-Carlo prediction).
    Sample,
}

/// Source of the standard-normal and dropout draws of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Seeded(u64),
    /// ε = 0 for every weight and dropout keeps every unit unscaled.
    Zero,
}

enum NoiseGen {
    Rng(Box<SeededRng>),
    Zero,
}

impl NoiseGen {
    fn new(noise: Noise) -> Self {
        match noise {
            Noise::Seeded(seed) => NoiseGen::Rng(Box::new(rng_from_seed(seed))),
            Noise::Zero => NoiseGen::Zero,
        }
    }

    fn normals(&mut self, n: usize) -> Vec<f64> {
        match self {
            NoiseGen::Rng(rng) => (0..n).map(|_| StandardNormal.sample(rng.as_mut())).collect(),
            NoiseGen::Zero => vec![0.0; n],
        }
    }

    /// Inverted-dropout multipliers: `0` or `1/(1-rate)`.
    fn dropout_mask(&mut self, n: usize, rate: f64) -> Vec<f64> {
        match self {
            NoiseGen::Rng(rng) => {
                let keep = 1.0 / (1.0 - rate);
                (0..n)
                    .map(|_| if rng.random::<f64>() >= rate { keep } else { 0.0 })
                    .collect()
            }
            NoiseGen::Zero => vec![1.0; n],
        }
    }
}

/// A named parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
}

impl Param {
    fn new(name: &str, shape: Vec<usize>, trainable: bool, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            name: name.to_string(),
            shape,
            trainable,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub trainable: usize,
    pub total: usize,
}

/// Per-record Bernoulli success probabilities over the grid bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    probs: Vec<f64>,
}

impl PredictionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Affine {
        input: Tensor,
        weight: Vec<f64>,
        /// ε for (weight, bias) of variational layers.
        eps: Option<(Vec<f64>, Vec<f64>)>,
        pre: Vec<f64>,
        out: Vec<f64>,
    },
    BatchNorm {
        xhat: Vec<f64>,
        /// Per-channel `1/sqrt(var + eps)`.
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Pool,
    Flatten,
    Dropout {
        mask: Option<Vec<f64>>,
    },
}

/// Output of [`Model::forward`] plus everything backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    output: Tensor,
    caches: Vec<LayerCache>,
    /// Batch (mean, variance) per batchnorm layer, train mode only.
    batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    version: u64,
}

impl ForwardPass {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Row `i` of the output as a probability distribution.
    pub fn prediction(&self, i: usize) -> Result<PredictionDistribution> {
        PredictionDistribution::new(self.output.row(i).to_vec())
    }
}

/// Gradients aligned with [`Model::params`]; empty for non-trainable arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn layer(&self, layer: usize) -> &[Vec<f64>] {
        &self.grads[layer]
    }

    pub fn get(&self, layer: usize, param: usize) -> &[f64] {
        &self.grads[layer][param]
    }

    pub fn layers(&self) -> &[Vec<Vec<f64>>] {
        &self.grads
    }
}

/// Decomposed loss of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Bernoulli NLL summed over bins, averaged over the batch.
    pub nll: f64,
    pub kl: f64,
    pub kl_weight: f64,
    pub total: f64,
}

/// Sequential model over `(length, 1)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_len: usize,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    params: Vec<Vec<Param>>,
    prior_scale: f64,
    version: u64,
}

fn glorot(rng: &mut SeededRng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

fn affine_params(
    rng: &mut SeededRng,
    variational: bool,
    w_shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    units: usize,
    weight_name: &str,
) -> Vec<Param> {
    let n: usize = w_shape.iter().product();
    let w = glorot(rng, fan_in, fan_out, n);
    if variational {
        vec![
            Param::new(&format!("{weight_name}_mean"), w_shape.clone(), true, w),
            Param::new(
                &format!("{weight_name}_raw_scale"),
                w_shape,
                true,
                vec![INITIAL_RAW_SCALE; n],
            ),
            Param::new("bias_mean", vec![units], true, vec![0.0; units]),
            Param::new("bias_raw_scale", vec![units], true, vec![INITIAL_RAW_SCALE; units]),
        ]
    } else {
        vec![
            Param::new(weight_name, w_shape, true, w),
            Param::new("bias", vec![units], true, vec![0.0; units]),
        ]
    }
}

impl Model {
    /// Builds and initializes a model for inputs of shape `(input_len, 1)`.
    pub fn new(input_len: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        Self::with_prior(input_len, layers, DEFAULT_PRIOR_SCALE, seed)
    }

    pub fn with_prior(input_len: usize, layers: Vec<LayerSpec>, prior_scale: f64, seed: u64) -> Result<Self> {
        if input_len == 0 {
            return Err(Error::InvalidArgument("input length must be positive".into()));
        }
        if !(prior_scale > 0.0) {
            return Err(Error::NonPositiveScale(prior_scale));
        }
        let mut rng = rng_from_seed(seed);
        let mut shapes = vec![Shape::Seq(input_len, 1)];
        let mut params = Vec::with_capacity(layers.len());
        for spec in &layers {
            spec.validate()?;
            let input = *shapes.last().expect("non-empty");
            let output = output_shape(spec, input)?;
            let p = match (*spec, input) {
                (
                    LayerSpec::Conv1d {
                        filters, kernel_size, ..
                    }
                    | LayerSpec::Conv1dReparam {
                        filters, kernel_size, ..
                    },
                    Shape::Seq(_, cin),
                ) => affine_params(
                    &mut rng,
                    spec.is_variational(),
                    vec![kernel_size, cin, filters],
                    kernel_size * cin,
                    kernel_size * filters,
                    filters,
                    "kernel",
                ),
                (LayerSpec::Dense { units, .. } | LayerSpec::DenseVariational { units, .. }, Shape::Flat(fin)) => {
                    affine_params(
                        &mut rng,
                        spec.is_variational(),
                        vec![fin, units],
                        fin,
                        units,
                        units,
                        "weight",
                    )
                }
                (LayerSpec::BatchNorm, s) => {
                    let c = match s {
                        Shape::Seq(_, c) => c,
                        Shape::Flat(f) => f,
                    };
                    vec![
                        Param::new("gamma", vec![c], true, vec![1.0; c]),
                        Param::new("beta", vec![c], true, vec![0.0; c]),
                        Param::new("moving_mean", vec![c], false, vec![0.0; c]),
                        Param::new("moving_variance", vec![c], false, vec![1.0; c]),
                    ]
                }
                _ => Vec::new(),
            };
            params.push(p);
            shapes.push(output);
        }
        Ok(Self {
            input_len,
            layers,
            shapes,
            params,
            prior_scale,
            version: next_version(),
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("non-empty")
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn params(&self) -> &[Vec<Param>] {
        &self.params
    }

    /// Mutable access to one layer's parameters; invalidates outstanding passes.
    pub fn layer_params_mut(&mut self, layer: usize) -> &mut [Param] {
        self.version = next_version();
        &mut self.params[layer]
    }

    pub fn is_variational(&self) -> bool {
        self.layers.iter().any(LayerSpec::is_variational)
    }

    /// Trainable parameters exclude batchnorm running statistics.
    pub fn count_parameters(&self) -> ParameterCount {
        let mut count = ParameterCount { trainable: 0, total: 0 };
        for p in self.params.iter().flatten() {
            count.total += p.values.len();
            if p.trainable {
                count.trainable += p.values.len();
            }
        }
        count
    }

    /// Sets every variational `raw_scale` to `value`.
    pub fn set_raw_scales(&mut self, value: f64) {
        self.version = next_version();
        for (spec, params) in self.layers.iter().zip(&mut self.params) {
            if spec.is_variational() {
                for idx in [1, 3] {
                    params[idx].values.fill(value);
                }
            }
        }
    }

    /// Total KL divergence of all variational weights from the prior.
    pub fn kl(&self) -> Result<f64> {
        let mut total = 0.0;
        for (spec, params) in self.layers.iter().zip(&self.params) {
            if spec.is_variational() {
                for (mean, raw) in [(&params[0], &params[1]), (&params[2], &params[3])] {
                    for (&m, &r) in mean.values.iter().zip(&raw.values) {
                        total += gaussian_kl(m, softplus(r), self.prior_scale)?;
                    }
                }
            }
        }
        Ok(total)
    }

    pub fn forward(&self, input: &Tensor, mode: Mode, seed: u64) -> Result<ForwardPass> {
        self.forward_with(input, mode, Noise::Seeded(seed))
    }

    /// Runs the layer stack on a `[batch, input_len, 1]` tensor.
    pub fn forward_with(&self, input: &Tensor, mode: Mode, noise: Noise) -> Result<ForwardPass> {
        let expected = [self.input_len, 1];
        if input.shape().len() != 3 || input.shape()[1..] != expected || input.batch() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "model expects input [batch, {}, 1], got {:?}",
                self.input_len,
                input.shape()
            )));
        }
        let batch = input.batch();
        let mut noise = NoiseGen::new(noise);
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let in_shape = self.shapes[i];
            let out_shape = self.shapes[i + 1];
            let params = &self.params[i];
            let mut stats = None;
            let (y, cache) = match *spec {
                LayerSpec::Conv1d { .. }
                | LayerSpec::Conv1dReparam { .. }
                | LayerSpec::Dense { .. }
                | LayerSpec::DenseVariational { .. } => {
                    let sample = spec.is_variational() && mode != Mode::Infer;
                    let (weight, bias, eps) = effective_weights(spec, params, sample, &mut noise);
                    let pre = match (*spec, in_shape, out_shape) {
                        (
                            LayerSpec::Conv1d {
                                stride, kernel_size, ..
                            }
                            | LayerSpec::Conv1dReparam {
                                stride, kernel_size, ..
                            },
                            Shape::Seq(len, cin),
                            Shape::Seq(lout, cout),
                        ) => conv_forward(
                            x.data(),
                            &weight,
                            &bias,
                            batch,
                            len,
                            cin,
                            lout,
                            cout,
                            kernel_size,
                            stride,
                        ),
                        (_, Shape::Flat(fin), Shape::Flat(units)) => {
                            dense_forward(x.data(), &weight, &bias, batch, fin, units)
                        }
                        _ => unreachable!("shapes validated at construction"),
                    };
                    let act = spec.activation();
                    let out: Vec<f64> = pre.iter().map(|&z| act.apply(z)).collect();
                    let mut dims = vec![batch];
                    dims.extend(out_shape.dims());
                    let y = Tensor::from_raw(dims, out.clone());
                    (
                        y,
                        LayerCache::Affine {
                            input: x,
                            weight,
                            eps,
                            pre,
                            out,
                        },
                    )
                }
                LayerSpec::BatchNorm => {
                    let c = *x.shape().last().expect("rank >= 2");
                    let use_batch = mode == Mode::Train;
                    let (mean, var) = if use_batch {
                        channel_moments(x.data(), c)
                    } else {
                        (params[2].values.clone(), params[3].values.clone())
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPSILON).sqrt()).collect();
                    let (gamma, beta) = (&params[0].values, &params[1].values);
                    let mut xhat = x.data().to_vec();
                    let mut out = vec![0.0; xhat.len()];
                    for (j, (h, o)) in xhat.iter_mut().zip(&mut out).enumerate() {
                        let ch = j % c;
                        *h = (*h - mean[ch]) * inv_std[ch];
                        *o = gamma[ch] * *h + beta[ch];
                    }
                    if use_batch {
                        stats = Some((mean, var));
                    }
                    let y = Tensor::from_raw(x.shape().to_vec(), out);
                    (
                        y,
                        LayerCache::BatchNorm {
                            xhat,
                            inv_std,
                            batch_stats: use_batch,
                        },
                    )
                }
                LayerSpec::AvgPool1d { pool_size } => {
                    let (Shape::Seq(len, c), Shape::Seq(lout, _)) = (in_shape, out_shape) else {
                        unreachable!("shapes validated at construction")
                    };
                    let data = x.data();
                    let mut out = vec![0.0; batch * lout * c];
                    let inv = 1.0 / pool_size as f64;
                    for b in 0..batch {
                        for t in 0..lout {
                            for ch in 0..c {
                                let mut acc = 0.0;
                                for k in 0..pool_size {
                                    acc += data[(b * len + t * pool_size + k) * c + ch];
                                }
                                out[(b * lout + t) * c + ch] = acc * inv;
                            }
                        }
                    }
                    (Tensor::from_raw(vec![batch, lout, c], out), LayerCache::Pool)
                }
                LayerSpec::Flatten => {
                    let f = out_shape.size();
                    (x.reshaped(vec![batch, f]), LayerCache::Flatten)
                }
                LayerSpec::Dropout { rate } => {
                    if mode == Mode::Train && rate > 0.0 {
                        let mask = noise.dropout_mask(x.len(), rate);
                        let mut y = x;
                        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        (y, LayerCache::Dropout { mask: Some(mask) })
                    } else {
                        (x, LayerCache::Dropout { mask: None })
                    }
                }
            };
            caches.push(cache);
            batch_stats.push(stats);
            x = y;
        }
        Ok(ForwardPass {
            output: x,
            caches,
            batch_stats,
            version: self.version,
        })
    }

    /// Loss of a pass against `[batch, W]` multi-hot labels.
    pub fn loss(&self, pass: &ForwardPass, labels: &Tensor, kl_weight: f64) -> Result<LossBreakdown> {
        let out = pass.output();
        if out.shape() != labels.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output {:?} vs labels {:?}",
                out.shape(),
                labels.shape()
            )));
        }
        let batch = out.batch();
        let mut nll = 0.0;
        for b in 0..batch {
            nll += bernoulli_nll(out.row(b), labels.row(b))?;
        }
        nll /= batch as f64;
        let kl = if self.is_variational() { self.kl()? } else { 0.0 };
        Ok(LossBreakdown {
            nll,
            kl,
            kl_weight,
            total: elbo_loss(nll, kl, kl_weight)?,
        })
    }

    /// Gradients of `loss(pass, labels, kl_weight).total` for every trainable array.
    pub fn backward(&self, pass: &ForwardPass, labels: &Tensor, kl_weight: f64) -> Result<Gradients> {
        if pass.version != self.version || pass.caches.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let out = pass.output();
        if out.shape() != labels.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output {:?} vs labels {:?}",
                out.shape(),
                labels.shape()
            )));
        }
        let batch = out.batch();
        let mut delta = bernoulli_nll_grad(out.data(), labels.data())?;
        let inv_batch = 1.0 / batch as f64;
        delta.iter_mut().for_each(|d| *d *= inv_batch);

        let mut grads: Vec<Vec<Vec<f64>>> = self
            .params
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|p| {
                        if p.trainable {
                            vec![0.0; p.values.len()]
                        } else {
                            Vec::new()
                        }
                    })
                    .collect()
            })
            .collect();

        for i in (0..self.layers.len()).rev() {
            let spec = &self.layers[i];
            let params = &self.params[i];
            let in_shape = self.shapes[i];
            let out_shape = self.shapes[i + 1];
            let g = &mut grads[i];
            delta = match (&pass.caches[i], *spec) {
                (
                    LayerCache::Affine {
                        input,
                        weight,
                        eps,
                        pre,
                        out,
                    },
                    _,
                ) => {
                    let act = spec.activation();
                    let dz: Vec<f64> = delta
                        .iter()
                        .zip(pre.iter().zip(out))
                        .map(|(d, (&z, &a))| d * act.derivative(z, a))
                        .collect();
                    let mut dw = vec![0.0; weight.len()];
                    let mut db = vec![0.0; out_shape.dims().last().copied().unwrap_or(0)];
                    let dx = match (*spec, in_shape, out_shape) {
                        (
                            LayerSpec::Conv1d {
                                stride, kernel_size, ..
                            }
                            | LayerSpec::Conv1dReparam {
                                stride, kernel_size, ..
                            },
                            Shape::Seq(len, cin),
                            Shape::Seq(lout, cout),
                        ) => conv_backward(
                            input.data(),
                            weight,
                            &dz,
                            &mut dw,
                            &mut db,
                            batch,
                            len,
                            cin,
                            lout,
                            cout,
                            kernel_size,
                            stride,
                        ),
                        (_, Shape::Flat(fin), Shape::Flat(units)) => {
                            dense_backward(input.data(), weight, &dz, &mut dw, &mut db, batch, fin, units)
                        }
                        _ => unreachable!("shapes validated at construction"),
                    };
                    if spec.is_variational() {
                        let (ew, eb) = match eps {
                            Some((ew, eb)) => (ew.as_slice(), eb.as_slice()),
                            None => (&[][..], &[][..]),
                        };
                        variational_grads(params, 0, &dw, ew, kl_weight, self.prior_scale, g);
                        variational_grads(params, 2, &db, eb, kl_weight, self.prior_scale, g);
                    } else {
                        g[0] = dw;
                        g[1] = db;
                    }
                    dx
                }
                (
                    LayerCache::BatchNorm {
                        xhat,
                        inv_std,
                        batch_stats,
                    },
                    _,
                ) => {
                    let c = inv_std.len();
                    let gamma = &params[0].values;
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for (j, (d, h)) in delta.iter().zip(xhat).enumerate() {
                        dgamma[j % c] += d * h;
                        dbeta[j % c] += d;
                    }
                    let dx = if *batch_stats {
                        let n = (delta.len() / c) as f64;
                        // dx = γ·inv_std/n · (n·dy − Σdy − x̂·Σ(dy·x̂))
                        delta
                            .iter()
                            .zip(xhat)
                            .enumerate()
                            .map(|(j, (d, h))| {
                                let ch = j % c;
                                gamma[ch] * inv_std[ch] / n * (n * d - dbeta[ch] - h * dgamma[ch])
                            })
                            .collect()
                    } else {
                        delta
                            .iter()
                            .enumerate()
                            .map(|(j, d)| d * gamma[j % c] * inv_std[j % c])
                            .collect()
                    };
                    g[0] = dgamma;
                    g[1] = dbeta;
                    dx
                }
                (LayerCache::Pool, LayerSpec::AvgPool1d { pool_size }) => {
                    let (Shape::Seq(len, c), Shape::Seq(lout, _)) = (in_shape, out_shape) else {
                        unreachable!("shapes validated at construction")
                    };
                    let mut dx = vec![0.0; batch * len * c];
                    let inv = 1.0 / pool_size as f64;
                    for b in 0..batch {
                        for t in 0..lout {
                            for ch in 0..c {
                                let d = delta[(b * lout + t) * c + ch] * inv;
                                for k in 0..pool_size {
                                    dx[(b * len + t * pool_size + k) * c + ch] = d;
                                }
                            }
                        }
                    }
                    dx
                }
                (LayerCache::Flatten, _) => delta,
                (LayerCache::Dropout { mask }, _) => match mask {
                    Some(m) => delta.iter().zip(m).map(|(d, m)| d * m).collect(),
                    None => delta,
                },
                _ => unreachable!("cache kind matches layer kind"),
            };
        }
        Ok(Gradients { grads })
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        let mut touched = false;
        for (params, stats) in self.params.iter_mut().zip(&pass.batch_stats) {
            if let Some((mean, var)) = stats {
                touched = true;
                for (rm, m) in params[2].values.iter_mut().zip(mean) {
                    *rm = BATCHNORM_MOMENTUM * *rm + (1.0 - BATCHNORM_MOMENTUM) * m;
                }
                for (rv, v) in params[3].values.iter_mut().zip(var) {
                    *rv = BATCHNORM_MOMENTUM * *rv + (1.0 - BATCHNORM_MOMENTUM) * v;
                }
            }
        }
        if touched {
            self.version = next_version();
        }
    }

    /// Applies `update` to every trainable array with its gradient.
    pub(crate) fn for_each_trainable<F>(&mut self, grads: &Gradients, mut update: F) -> Result<()>
    where
        F: FnMut(usize, usize, &mut [f64], &[f64]) -> Result<()>,
    {
        if grads.grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient layer count differs from model".into()));
        }
        self.version = next_version();
        for (li, (params, g)) in self.params.iter_mut().zip(&grads.grads).enumerate() {
            if params.len() != g.len() {
                return Err(Error::ShapeMismatch(format!("layer {li}: gradient count differs")));
            }
            for (pi, (p, g)) in params.iter_mut().zip(g).enumerate() {
                if p.trainable {
                    if p.values.len() != g.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {li} {}: {} values vs {} gradients",
                            p.name,
                            p.values.len(),
                            g.len()
                        )));
                    }
                    update(li, pi, &mut p.values, g)?;
                }
            }
        }
        Ok(())
    }

    /// Deterministic single-record prediction (`Mode::Infer`).
    pub fn predict(&self, features: &[f64]) -> Result<PredictionDistribution> {
        let pass = self.forward(&Tensor::batch_of_sequences(&[features])?, Mode::Infer, 0)?;
        pass.prediction(0)
    }
}

type Effective = (Vec<f64>, Vec<f64>, Option<(Vec<f64>, Vec<f64>)>);

fn effective_weights(spec: &LayerSpec, params: &[Param], sample: bool, noise: &mut NoiseGen) -> Effective {
    if !spec.is_variational() {
        return (params[0].values.clone(), params[1].values.clone(), None);
    }
    if !sample {
        return (params[0].values.clone(), params[2].values.clone(), None);
    }
    let ew = noise.normals(params[0].values.len());
    let eb = noise.normals(params[2].values.len());
    let draw = |mean: &Param, raw: &Param, eps: &[f64]| -> Vec<f64> {
        mean.values
            .iter()
            .zip(&raw.values)
            .zip(eps)
            .map(|((m, r), e)| m + softplus(*r) * e)
            .collect()
    };
    let w = draw(&params[0], &params[1], &ew);
    let b = draw(&params[2], &params[3], &eb);
    (w, b, Some((ew, eb)))
}

/// Accumulates reparameterization and KL gradients for one (mean, raw_scale) pair.
fn variational_grads(
    params: &[Param],
    offset: usize,
    d_effective: &[f64],
    eps: &[f64],
    kl_weight: f64,
    prior_scale: f64,
    g: &mut [Vec<f64>],
) {
    let means = &params[offset].values;
    let raws = &params[offset + 1].values;
    let mut dmean = vec![0.0; means.len()];
    let mut draw = vec![0.0; raws.len()];
    for j in 0..means.len() {
        let scale = softplus(raws[j]);
        let (kl_dm, kl_ds) = gaussian_kl_grad(means[j], scale, prior_scale);
        let e = eps.get(j).copied().unwrap_or(0.0);
        // d softplus(r)/dr = sigmoid(r)
        let ds_dr = sigmoid(raws[j]);
        dmean[j] = d_effective[j] + kl_weight * kl_dm;
        draw[j] = (d_effective[j] * e + kl_weight * kl_ds) * ds_dr;
    }
    g[offset] = dmean;
    g[offset + 1] = draw;
}

fn channel_moments(x: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for (j, v) in x.iter().enumerate() {
        mean[j % c] += v;
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for (j, v) in x.iter().enumerate() {
        let d = v - mean[j % c];
        var[j % c] += d * d;
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    batch: usize,
    len: usize,
    cin: usize,
    lout: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * lout * cout];
    for b in 0..batch {
        for t in 0..lout {
            let o = &mut out[(b * lout + t) * cout..(b * lout + t + 1) * cout];
            o.copy_from_slice(bias);
            for k in 0..kernel {
                let row = (b * len + t * stride + k) * cin;
                for ci in 0..cin {
                    let xv = x[row + ci];
                    let wrow = &w[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                    for (ov, wv) in o.iter_mut().zip(wrow) {
                        *ov += xv * wv;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    w: &[f64],
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    batch: usize,
    len: usize,
    cin: usize,
    lout: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; batch * len * cin];
    for b in 0..batch {
        for t in 0..lout {
            let d = &dz[(b * lout + t) * cout..(b * lout + t + 1) * cout];
            for (acc, dv) in db.iter_mut().zip(d) {
                *acc += dv;
            }
            for k in 0..kernel {
                let row = (b * len + t * stride + k) * cin;
                for ci in 0..cin {
                    let xv = x[row + ci];
                    let off = (k * cin + ci) * cout;
                    let mut acc = 0.0;
                    for o in 0..cout {
                        dw[off + o] += d[o] * xv;
                        acc += d[o] * w[off + o];
                    }
                    dx[row + ci] += acc;
                }
            }
        }
    }
    dx
}

fn dense_forward(x: &[f64], w: &[f64], bias: &[f64], batch: usize, fin: usize, units: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * units];
    for b in 0..batch {
        let o = &mut out[b * units..(b + 1) * units];
        o.copy_from_slice(bias);
        for i in 0..fin {
            let xv = x[b * fin + i];
            for (ov, wv) in o.iter_mut().zip(&w[i * units..(i + 1) * units]) {
                *ov += xv * wv;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f64],
    w: &[f64],
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    batch: usize,
    fin: usize,
    units: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; batch * fin];
    for b in 0..batch {
        let d = &dz[b * units..(b + 1) * units];
        for (acc, dv) in db.iter_mut().zip(d) {
            *acc += dv;
        }
        for i in 0..fin {
            let xv = x[b * fin + i];
            let wrow = &w[i * units..(i + 1) * units];
            let dwrow = &mut dw[i * units..(i + 1) * units];
            let mut acc = 0.0;
            for u in 0..units {
                dwrow[u] += d[u] * xv;
                acc += d[u] * wrow[u];
            }
            dx[b * fin + i] = acc;
        }
    }
    dx
}
