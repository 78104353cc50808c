//! Dense feedforward networks with reverse-mode gradients and Adam.
//!
//! Everything is `f64`. A batch is an `Array2` with one sample per row, so a
//! layer computes `Z = X Wᵀ + b` with `W` stored as `(outputs, inputs)`.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT_MAGIC: &str = "icac-densenet";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
    /// Logistic squashing, used where outputs must stay inside `[0, 1]`.
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activated value `a`.
    #[inline]
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Format(format!("unknown activation `{other}`"))),
        }
    }
}

/// One affine layer followed by an elementwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// Shape `(outputs, inputs)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Activations recorded by [`DenseNet::forward_cached`]; `acts[0]` is the
/// input batch and `acts[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds at least the input")
    }

    /// Output of hidden layer `l` (0-based).
    pub fn layer_output(&self, l: usize) -> &Array2<f64> {
        &self.acts[l + 1]
    }
}

impl DenseNet {
    /// Builds a network with Glorot-uniform weights and zero biases.
    ///
    /// `layers` lists `(outputs, activation)` for every layer in order.
    pub fn new<R: Rng + ?Sized>(input: usize, layers: &[(usize, Activation)], rng: &mut R) -> Result<Self> {
        if input == 0 || layers.is_empty() || layers.iter().any(|&(n, _)| n == 0) {
            return Err(Error::ShapeMismatch(
                "networks need a positive input size and at least one non-empty layer".into(),
            ));
        }
        let mut fan_in = input;
        let mut built = Vec::with_capacity(layers.len());
        for &(fan_out, activation) in layers {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..=limit));
            built.push(Dense {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
            });
            fan_in = fan_out;
        }
        Ok(Self { layers: built })
    }

    /// Assembles a network from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: bias length {} but {} outputs",
                    layer.bias.len(),
                    layer.outputs()
                )));
            }
            if l > 0 && layers[l - 1].outputs() != layer.inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} expects {} inputs but layer {} produces {}",
                    layer.inputs(),
                    l - 1,
                    layers[l - 1].outputs()
                )));
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Bit-level digest of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for layer in &self.layers {
            layer.weights.shape().hash(&mut h);
            layer.activation.hash(&mut h);
        }
        for p in self.params() {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut current = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            current = Self::apply_layer(l, layer, &current)?;
        }
        Ok(current)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let next = Self::apply_layer(l, layer, &acts[l])?;
            acts.push(next);
        }
        Ok(ForwardCache { acts })
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), got));
        }
        Ok(())
    }

    fn apply_layer(l: usize, layer: &Dense, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut z = x.dot(&layer.weights.t());
        z += &layer.bias;
        let act = layer.activation;
        z.mapv_inplace(|v| act.apply(v));
        if z.iter().all(|v| v.is_finite()) {
            Ok(z)
        } else {
            Err(Error::NonFinite { layer: l })
        }
    }

    /// Back-propagates `d_out` (gradient of the loss w.r.t. the network
    /// output, one row per sample) and returns parameter gradients summed over
    /// the batch together with the gradient w.r.t. the input batch.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<'_, f64>) -> Result<(GradientSet, Array2<f64>)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let d_input = self.backprop(cache, d_out, true, |w, b| grads.push(LayerGrad { weights: w, bias: b }))?;
        grads.reverse();
        Ok((GradientSet { layers: grads }, d_input))
    }

    /// Parameter gradients only; skips the input-gradient product.
    pub fn param_gradient(&self, cache: &ForwardCache, d_out: ArrayView2<'_, f64>) -> Result<GradientSet> {
        let mut grads = Vec::with_capacity(self.layers.len());
        self.backprop(cache, d_out, false, |w, b| {
            grads.push(LayerGrad { weights: w, bias: b })
        })?;
        grads.reverse();
        Ok(GradientSet { layers: grads })
    }

    /// Gradient w.r.t. the input batch only.
    pub fn input_gradient(&self, cache: &ForwardCache, d_out: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.backprop(cache, d_out, true, |_, _| {})
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        need_input: bool,
        mut sink: impl FnMut(Array2<f64>, Array1<f64>),
    ) -> Result<Array2<f64>> {
        let out = cache.output();
        if d_out.dim() != out.dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                d_out.dim(),
                out.dim()
            )));
        }
        let mut delta = d_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = layer.activation;
            if act != Activation::Linear {
                Zip::from(&mut delta)
                    .and(&cache.acts[l + 1])
                    .for_each(|d, &a| *d *= act.slope(a));
            }
            sink(delta.t().dot(&cache.acts[l]), delta.sum_axis(Axis(0)));
            if l > 0 || need_input {
                delta = delta.dot(&layer.weights);
            }
        }
        Ok(delta)
    }

    /// Squared L2 error `‖net(x) − target‖²` and its exact gradient.
    pub fn mse_and_grad(&self, x: &[f64], target: &[f64]) -> Result<(f64, GradientSet)> {
        if target.len() != self.output_dim() {
            return Err(Error::dims("regression target", self.output_dim(), target.len()));
        }
        let input = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let cache = self.forward_cached(input)?;
        let diff: Array2<f64> = cache.output() - &ArrayView2::from_shape((1, target.len()), target).unwrap();
        let loss = diff.iter().map(|d| d * d).sum::<f64>();
        let grads = self.param_gradient(&cache, (diff * 2.0).view())?;
        Ok((loss, grads))
    }

    /// One bias-corrected Adam step.
    pub fn adam_update(&mut self, grads: &GradientSet, state: &mut AdamState) -> Result<()> {
        grads.check_congruent(self)?;
        state.m.check_congruent(self)?;
        state.t += 1;
        let t = state.t as i32;
        let (b1, b2) = (state.beta1, state.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (state.lr, state.eps);
        let step = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut state.m.layers)
            .zip(&mut state.v.layers)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(step);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(step);
        }
        Ok(())
    }

    /// Moves every parameter toward `online`: `p ← τ·online + (1 − τ)·p`.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) -> Result<()> {
        if !self.same_shape(online) {
            return Err(Error::ShapeMismatch(
                "soft update between different architectures".into(),
            ));
        }
        for (p, &q) in self.params_mut().zip(online.params()) {
            *p = tau * q + (1.0 - tau) * *p;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim())
    }

    /// Writes the versioned text format:
    ///
    /// ```text
    /// icac-densenet 1
    /// layers <count>
    /// dense <inputs> <outputs> <activation>
    /// <outputs lines of `inputs` weights>
    /// <one line of `outputs` biases>
    /// ```
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}")?;
        writeln!(out, "layers {}", self.layers.len())?;
        for layer in &self.layers {
            writeln!(out, "dense {} {} {}", layer.inputs(), layer.outputs(), layer.activation)?;
            for row in layer.weights.rows() {
                write_row(&mut out, row.iter())?;
            }
            write_row(&mut out, layer.bias.iter())?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = move || -> Result<String> {
            match lines.next() {
                Some(line) => Ok(line?),
                None => Err(Error::Format("unexpected end of file".into())),
            }
        };
        let header = next()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(FORMAT_MAGIC) {
            return Err(Error::Format(format!("bad header `{header}`")));
        }
        let version: u32 = parse_field(parts.next(), "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count_line = next()?;
        let count: usize = match count_line.split_whitespace().collect::<Vec<_>>()[..] {
            ["layers", n] => parse_field(Some(n), "layer count")?,
            _ => return Err(Error::Format(format!("expected layer count, got `{count_line}`"))),
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = next()?;
            let (inputs, outputs, activation) = match spec.split_whitespace().collect::<Vec<_>>()[..] {
                ["dense", i, o, a] => (
                    parse_field::<usize>(Some(i), "inputs")?,
                    parse_field::<usize>(Some(o), "outputs")?,
                    a.parse::<Activation>()?,
                ),
                _ => return Err(Error::Format(format!("expected layer spec, got `{spec}`"))),
            };
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                weights.extend(parse_row(&next()?, inputs)?);
            }
            let bias = parse_row(&next()?, outputs)?;
            layers.push(Dense {
                weights: Array2::from_shape_vec((outputs, inputs), weights)
                    .map_err(|e| Error::Format(e.to_string()))?,
                bias: Array1::from(bias),
                activation,
            });
        }
        Self::from_layers(layers)
    }
}

fn write_row<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            out.write_all(b" ")?;
        }
        write!(out, "{v:e}")?;
        first = false;
    }
    out.write_all(b"\n")?;
    Ok(())
}

fn parse_row(line: &str, expected: usize) -> Result<Vec<f64>> {
    let row = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|e| Error::Format(format!("`{tok}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if row.len() != expected {
        return Err(Error::Format(format!(
            "row has {} values, expected {expected}",
            row.len()
        )));
    }
    Ok(row)
}

fn parse_field<T: FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format(format!("missing or invalid {what}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-parameter gradients laid out like the network they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn check_congruent(&self, net: &DenseNet) -> Result<()> {
        let ok = self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len());
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("gradient set does not match network".into()))
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Self {
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}
