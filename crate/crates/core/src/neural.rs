//! Fully connected feed-forward networks with exact backpropagation.
//!
//! A network maps `x ∈ R^{N_0}` to a scalar through hidden layers of
//! `affine → [batch-norm] → ELU → [dropout]` and a final affine layer with no
//! activation. The scalar output is a log-mean; the link is applied by the
//! caller.
//!
//! Weights are stored row-major with shape `(outputs, inputs)`. Trainable
//! distribution scalars (raw π, raw φ, γ) ride along in [`AuxScalars`] so that
//! one flat parameter vector covers everything an optimizer updates.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::sigmoid;

pub const BATCH_NORM_EPS: f64 = 1e-5;
/// Weight on the previous running statistic when absorbing a batch.
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

/// ELU: `z` for `z > 0`, `e^z − 1` otherwise.
#[inline]
pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Maps an unconstrained scalar into `[0, 1]`.
pub fn transform_unit(raw: f64) -> f64 {
    sigmoid(raw)
}

pub fn transform_unit_derivative(raw: f64) -> f64 {
    let p = sigmoid(raw);
    p * (1.0 - p)
}

/// Maps an unconstrained scalar to a non-negative one by squaring.
pub fn transform_positive(raw: f64) -> f64 {
    raw * raw
}

pub fn transform_positive_derivative(raw: f64) -> f64 {
    2.0 * raw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `(outputs, inputs)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn weight_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.outputs, self.inputs), &self.weights)
            .expect("dense shape checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        Self {
            scale: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// Trainable scalars outside the matrix stack. Absent entries are not trained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxScalars {
    /// π = sigmoid(raw_pi)
    pub raw_pi: Option<f64>,
    /// φ = raw_phi²
    pub raw_phi: Option<f64>,
    pub gamma: Option<f64>,
}

impl AuxScalars {
    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [self.raw_pi, self.raw_phi, self.gamma].into_iter().flatten()
    }

    fn slots_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        [&mut self.raw_pi, &mut self.raw_phi, &mut self.gamma]
            .into_iter()
            .filter_map(Option::as_mut)
    }

    fn zeroed(&self) -> Self {
        Self {
            raw_pi: self.raw_pi.map(|_| 0.0),
            raw_phi: self.raw_phi.map(|_| 0.0),
            gamma: self.gamma.map(|_| 0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which auxiliary scalars a network carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuxInit {
    pub pi: bool,
    pub phi: bool,
    pub gamma: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardMode {
    pub training: bool,
    pub dropout_rate: f64,
}

impl ForwardMode {
    pub const EVAL: ForwardMode = ForwardMode {
        training: false,
        dropout_rate: 0.0,
    };

    pub fn train(dropout_rate: f64) -> Self {
        Self {
            training: true,
            dropout_rate,
        }
    }

    fn dropout_active(&self) -> bool {
        self.training && self.dropout_rate > 0.0
    }
}

/// Per-layer state retained by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    training: bool,
    /// Input to each affine layer (the last entry feeds the output layer).
    inputs: Vec<Array2<f64>>,
    /// ELU arguments per hidden layer.
    activation_inputs: Vec<Array2<f64>>,
    /// Normalised pre-activations and inverse std per hidden layer (batch-norm only).
    normalized: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    batch_mean: Vec<Array1<f64>>,
    batch_var: Vec<Array1<f64>>,
    /// Inverted-dropout multipliers (0 or 1/(1−r)) per hidden layer.
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    /// Dropout multipliers of hidden layer `layer`, if dropout was active.
    pub fn dropout_mask(&self, layer: usize) -> Option<&Array2<f64>> {
        self.masks.get(layer).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// `[N_0, N_1, …, N_L, 1]`
    pub layer_dims: Vec<usize>,
    pub layers: Vec<Dense>,
    /// One per hidden layer when batch normalisation is enabled, else empty.
    pub norms: Vec<BatchNorm>,
    pub aux: AuxScalars,
}

impl MlpParams {
    /// He-normal weights (variance `2 / fan_in`), zero biases, identity batch-norm.
    ///
    /// When requested, raw π is drawn so that `sigmoid(raw_pi) ~ U[e^{-2}, e^{-1}]`,
    /// raw φ starts at 1 and γ at 0.
    pub fn init(layer_dims: &[usize], batch_norm: bool, aux: AuxInit, seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::domain(e.to_string()))?;
            let mut dense = Dense::zeros(fan_in, fan_out);
            dense.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            layers.push(dense);
        }
        let norms = if batch_norm {
            layer_dims[1..layer_dims.len() - 1]
                .iter()
                .map(|&w| BatchNorm::identity(w))
                .collect()
        } else {
            Vec::new()
        };
        let raw_pi = aux.pi.then(|| {
            let pi = rng.random_range((-2f64).exp()..=(-1f64).exp());
            (pi / (1.0 - pi)).ln()
        });
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            norms,
            aux: AuxScalars {
                raw_pi,
                raw_phi: aux.phi.then_some(1.0),
                gamma: aux.gamma.then_some(0.0),
            },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_dims.len() - 2
    }

    pub fn has_batch_norm(&self) -> bool {
        !self.norms.is_empty()
    }

    /// Number of weights and biases, `Σ (N_{l−1} N_l + N_l)`.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Length of the flat trainable vector (weights, biases, batch-norm scale/shift, aux).
    pub fn flat_len(&self) -> usize {
        self.weight_count()
            + self.norms.iter().map(|n| 2 * n.scale.len()).sum::<usize>()
            + self.aux.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        for n in &self.norms {
            out.extend_from_slice(&n.scale);
            out.extend_from_slice(&n.shift);
        }
        out.extend(self.aux.values());
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, network needs {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|v| *v = it.next().unwrap_or(0.0));
        for l in &mut self.layers {
            fill(&mut l.weights);
            fill(&mut l.bias);
        }
        for n in &mut self.norms {
            fill(&mut n.scale);
            fill(&mut n.shift);
        }
        for slot in self.aux.slots_mut() {
            fill(std::slice::from_mut(slot));
        }
        Ok(())
    }

    /// Same structure with every trainable entry zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self {
            layer_dims: self.layer_dims.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| BatchNorm {
                    scale: vec![0.0; n.scale.len()],
                    shift: vec![0.0; n.shift.len()],
                    running_mean: vec![0.0; n.scale.len()],
                    running_var: vec![0.0; n.scale.len()],
                })
                .collect(),
            aux: self.aux.zeroed(),
        }
    }

    /// Checks shapes against `layer_dims` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        check_dims(&self.layer_dims)?;
        if self.layers.len() != self.layer_dims.len() - 1 {
            return Err(Error::Shape("layer count does not match layer_dims".into()));
        }
        for (i, (l, pair)) in self.layers.iter().zip(self.layer_dims.windows(2)).enumerate() {
            if l.inputs != pair[0]
                || l.outputs != pair[1]
                || l.weights.len() != pair[0] * pair[1]
                || l.bias.len() != pair[1]
            {
                return Err(Error::Shape(format!("layer {i} does not match layer_dims")));
            }
        }
        if !self.norms.is_empty() {
            let hidden = &self.layer_dims[1..self.layer_dims.len() - 1];
            if self.norms.len() != hidden.len() {
                return Err(Error::Shape("batch-norm count does not match hidden layers".into()));
            }
            for (n, &w) in self.norms.iter().zip(hidden) {
                if [&n.scale, &n.shift, &n.running_mean, &n.running_var]
                    .iter()
                    .any(|v| v.len() != w)
                {
                    return Err(Error::Shape("batch-norm width mismatch".into()));
                }
            }
        }
        let running = self
            .norms
            .iter()
            .flat_map(|n| n.running_mean.iter().chain(&n.running_var));
        if self.to_flat().iter().chain(running).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "network parameters".into(),
                record: None,
            });
        }
        Ok(())
    }

    /// Evaluation-mode output for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict_batch(view)?[0])
    }

    /// Evaluation-mode outputs for a batch of rows.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_impl(x, ForwardMode::EVAL, None)?.0)
    }

    /// Forward pass keeping the cache needed by [`MlpParams::backward`].
    ///
    /// `rng` drives dropout masks and is untouched when dropout is inactive.
    pub fn forward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        mode: ForwardMode,
        rng: &mut dyn RngCore,
    ) -> Result<(Array1<f64>, ForwardCache)> {
        self.forward_impl(x, mode, Some(rng))
    }

    fn forward_impl(
        &self,
        x: ArrayView2<'_, f64>,
        mode: ForwardMode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Array1<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if !(0.0..1.0).contains(&mode.dropout_rate) {
            return Err(Error::domain(format!("dropout rate {} not in [0, 1)", mode.dropout_rate)));
        }
        let batch = x.nrows();
        let hidden = self.hidden_layers();
        let mut cache = ForwardCache {
            training: mode.training,
            inputs: Vec::with_capacity(hidden + 1),
            activation_inputs: Vec::with_capacity(hidden),
            normalized: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            masks: Vec::with_capacity(hidden),
        };
        let mut current = x.to_owned();
        for (l, layer) in self.layers[..hidden].iter().enumerate() {
            let mut z = current.dot(&layer.weight_view().t());
            z += &ArrayView1::from(&layer.bias[..]);
            let u = if let Some(norm) = self.norms.get(l) {
                let (mean, var) = if mode.training {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let var = z.var_axis(Axis(0), 0.0);
                    (mean, var)
                } else {
                    (
                        Array1::from(norm.running_mean.clone()),
                        Array1::from(norm.running_var.clone()),
                    )
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt());
                let zhat = (&z - &mean) * &inv_std;
                let u = &zhat * &ArrayView1::from(&norm.scale[..]) + ArrayView1::from(&norm.shift[..]);
                cache.normalized.push(zhat);
                cache.inv_std.push(inv_std);
                cache.batch_mean.push(mean);
                cache.batch_var.push(var);
                u
            } else {
                z
            };
            let mut h = u.mapv(elu);
            let mask = if mode.dropout_active() {
                let rng = rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::domain("dropout in training mode needs an rng"))?;
                let keep = 1.0 - mode.dropout_rate;
                let mask = Array2::from_shape_fn((batch, layer.outputs), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                h *= &mask;
                Some(mask)
            } else {
                None
            };
            cache.inputs.push(current);
            cache.activation_inputs.push(u);
            cache.masks.push(mask);
            current = h;
        }
        let out_layer = &self.layers[hidden];
        let out = current.dot(&out_layer.weight_view().t()).column(0).mapv(|v| v + out_layer.bias[0]);
        cache.inputs.push(current);
        Ok((out, cache))
    }

    /// Gradient of `Σ_i upstream_i · output_i` with respect to every trainable
    /// parameter. Aux-scalar slots come back zero; the loss fills them.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView1<'_, f64>) -> Result<MlpParams> {
        let hidden = self.hidden_layers();
        if cache.inputs.len() != hidden + 1 || upstream.len() != cache.batch_size() {
            return Err(Error::Shape("cache does not match this network or upstream".into()));
        }
        let batch = upstream.len();
        let mut grads = self.zeros_like();
        // dL/d(output pre-bias), shape (batch, 1)
        let mut delta = upstream.to_owned().insert_axis(Axis(1));
        for l in (0..=hidden).rev() {
            if l < hidden {
                // delta is dL/dh for hidden layer l
                if let Some(mask) = &cache.masks[l] {
                    delta *= mask;
                }
                let u = &cache.activation_inputs[l];
                delta.zip_mut_with(u, |d, &z| *d *= elu_derivative(z));
                if let Some(norm) = self.norms.get(l) {
                    let zhat = &cache.normalized[l];
                    let inv_std = &cache.inv_std[l];
                    let g = &mut grads.norms[l];
                    g.scale = (&delta * zhat).sum_axis(Axis(0)).to_vec();
                    g.shift = delta.sum_axis(Axis(0)).to_vec();
                    let dzhat = &delta * &ArrayView1::from(&norm.scale[..]);
                    delta = if cache.training {
                        let b = batch as f64;
                        let sum = dzhat.sum_axis(Axis(0));
                        let sum_z = (&dzhat * zhat).sum_axis(Axis(0));
                        ((&dzhat * b - &sum) - &(zhat * &sum_z)) * &(inv_std / b)
                    } else {
                        dzhat * inv_std
                    };
                }
            }
            let input = &cache.inputs[l];
            let g = &mut grads.layers[l];
            g.weights = delta.t().dot(input).into_raw_vec_and_offset().0;
            g.bias = delta.sum_axis(Axis(0)).to_vec();
            if l > 0 {
                delta = delta.dot(&self.layers[l].weight_view());
            }
        }
        Ok(grads)
    }

    /// Folds the batch statistics of a training-mode pass into the running ones.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        if !cache.training {
            return;
        }
        for (norm, (mean, var)) in self
            .norms
            .iter_mut()
            .zip(cache.batch_mean.iter().zip(&cache.batch_var))
        {
            for (r, m) in norm.running_mean.iter_mut().zip(mean) {
                *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * m;
            }
            for (r, v) in norm.running_var.iter_mut().zip(var) {
                *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * v;
            }
        }
    }

    /// Batch statistics captured by a training-mode pass, per hidden layer.
    pub fn batch_stats(cache: &ForwardCache) -> Vec<(Vec<f64>, Vec<f64>)> {
        cache
            .batch_mean
            .iter()
            .zip(&cache.batch_var)
            .map(|(m, v)| (m.to_vec(), v.to_vec()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Shape("layer_dims needs at least input and output sizes".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Shape("every layer needs at least one unit".into()));
    }
    if *dims.last().unwrap_or(&0) != 1 {
        return Err(Error::Shape("output layer must have exactly one unit".into()));
    }
    Ok(())
}
