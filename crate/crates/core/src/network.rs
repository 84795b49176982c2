//! Fully connected network description and forward execution.
//!
//! Every node computes `y = act(sum_i x_i * w_i + b)`. Three execution modes share
//! the same parameters:
//!
//! * [`ForwardMode::Real`]: `f64` reference used for float training.
//! * [`ForwardMode::FakeQuant`]: the integer datapath viewed through dequantization,
//!   with straight-through masks recorded for QAT backprop.
//! * [`ForwardMode::Integer`]: the integer datapath, additionally returning raw
//!   accumulators and codes.
//!
//! The integer datapath per layer: quantized inputs times quantized weights plus a
//! bias quantized at the accumulator scale `s_in * s_w`, summed exactly in a wide
//! accumulator, integer ReLU on the accumulator, then [`requantize_with`] to the
//! layer's output grid.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{self, requantize_with, FixedMultiplier, QTensor, QuantParams};

/// Default input width: 100 complex samples, real parts then imaginary parts.
pub const DEFAULT_INPUT_DIM: usize = 200;
/// Default layer widths of the adapted network.
pub const DEFAULT_WIDTHS: [usize; 7] = [32, 64, 32, 32, 32, 16, 2];
/// Number of regression outputs (T1, T2).
pub const MRF_OUTPUTS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => relu(z),
            Activation::Linear => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => relu_derivative(z),
            Activation::Linear => 1.0,
        }
    }

    pub fn apply_int(self, acc: i64) -> i64 {
        match self {
            Activation::Relu => acc.max(0),
            Activation::Linear => acc,
        }
    }
}

pub fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// 1 for `z > 0`, 0 otherwise (including `z == 0`).
pub fn relu_derivative(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::from_widths(DEFAULT_INPUT_DIM, &DEFAULT_WIDTHS).expect("default widths are valid")
    }
}

impl NetworkConfig {
    /// Chain of layers with ReLU hidden layers and a linear output layer.
    pub fn from_widths(input_dim: usize, widths: &[usize]) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut n_inputs = input_dim;
        for (i, &n_outputs) in widths.iter().enumerate() {
            let activation = if i + 1 == widths.len() {
                Activation::Linear
            } else {
                Activation::Relu
            };
            layers.push(LayerSpec {
                n_inputs,
                n_outputs,
                activation,
            });
            n_inputs = n_outputs;
        }
        let cfg = Self { input_dim, layers };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks: non-empty chain, matching widths, ReLU everywhere but a
    /// linear output layer.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        let mut expected = self.input_dim;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.n_inputs == 0 || l.n_outputs == 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} has a zero dimension"
                )));
            }
            if l.n_inputs != expected {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} expects {} inputs but receives {expected}",
                    l.n_inputs
                )));
            }
            let want = if i == last {
                Activation::Linear
            } else {
                Activation::Relu
            };
            if l.activation != want {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} must use {want:?} activation"
                )));
            }
            expected = l.n_outputs;
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the two-output (T1, T2) head.
    pub fn validate_mrf(&self) -> Result<()> {
        self.validate()?;
        if self.output_dim() != MRF_OUTPUTS {
            return Err(Error::InvalidConfig(format!(
                "output layer must have {MRF_OUTPUTS} nodes, has {}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.n_outputs)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.n_outputs).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.n_inputs * l.n_outputs).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layers.iter().map(|l| l.n_outputs).sum()
    }
}

/// Real-valued weights (row-major, output-index major) and biases of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            n_inputs: spec.n_inputs,
            n_outputs: spec.n_outputs,
            weights: vec![0.0; spec.n_inputs * spec.n_outputs],
            biases: vec![0.0; spec.n_outputs],
        }
    }

    /// Uniform in `±sqrt(6 / (n_in + n_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        let limit = (6.0 / (spec.n_inputs + spec.n_outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let mut p = Self::zeros(spec);
        for w in &mut p.weights {
            *w = dist.sample(rng);
        }
        p
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.n_inputs..(o + 1) * self.n_inputs]
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    fn check(&self, spec: &LayerSpec, index: usize) -> Result<()> {
        if self.n_inputs != spec.n_inputs
            || self.n_outputs != spec.n_outputs
            || self.weights.len() != spec.n_inputs * spec.n_outputs
            || self.biases.len() != spec.n_outputs
        {
            return Err(Error::ShapeMismatch(format!(
                "layer {index}: params {}x{} (w={}, b={}) do not match layer shape {}x{}",
                self.n_outputs,
                self.n_inputs,
                self.weights.len(),
                self.biases.len(),
                spec.n_outputs,
                spec.n_inputs
            )));
        }
        Ok(())
    }
}

/// Glorot-initialized parameters for every layer of `cfg`.
pub fn init_params<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Vec<LayerParams> {
    cfg.layers
        .iter()
        .map(|l| LayerParams::glorot(l, rng))
        .collect()
}

pub fn check_params(cfg: &NetworkConfig, params: &[LayerParams]) -> Result<()> {
    if params.len() != cfg.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter sets for {} layers",
            params.len(),
            cfg.layers.len()
        )));
    }
    cfg.layers
        .iter()
        .zip(params)
        .enumerate()
        .try_for_each(|(i, (s, p))| p.check(s, i))
}

/// Quantization scheme: widths plus the calibrated activation grids. Weight scales
/// are derived from the weights themselves (`max|w| / qmax`), bias scales from
/// `s_in * s_w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub weight_bits: u32,
    pub bias_bits: u32,
    pub accumulator_bits: u32,
    pub input: QuantParams,
    /// Output grid of each layer.
    pub activations: Vec<QuantParams>,
}

impl QuantScheme {
    pub const WEIGHT_BITS: u32 = 8;
    pub const ACTIVATION_BITS: u32 = 8;
    pub const BIAS_BITS: u32 = 32;
    pub const ACCUMULATOR_BITS: u32 = 32;

    /// Default widths with activation grids from per-tensor max-abs ranges.
    pub fn from_ranges(input_max_abs: f64, activation_max_abs: &[f64]) -> Result<Self> {
        Ok(Self {
            weight_bits: Self::WEIGHT_BITS,
            bias_bits: Self::BIAS_BITS,
            accumulator_bits: Self::ACCUMULATOR_BITS,
            input: QuantParams::from_max_abs(input_max_abs, Self::ACTIVATION_BITS)?,
            activations: activation_max_abs
                .iter()
                .map(|&m| QuantParams::from_max_abs(m, Self::ACTIVATION_BITS))
                .collect::<Result<_>>()?,
        })
    }

    pub fn weight_params(&self, layer: &LayerParams) -> Result<QuantParams> {
        QuantParams::from_max_abs(layer.max_abs_weight(), self.weight_bits)
    }
}

/// Requantization constants of one node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRequant {
    pub multiplier: FixedMultiplier,
    pub output: QuantParams,
}

fn check_accumulator(acc: i128, bits: u32) -> Result<i64> {
    let (lo, hi) = (quant::qmin(bits) as i128, quant::qmax(bits) as i128);
    if acc < lo || acc > hi {
        return Err(Error::AccumulatorOverflow { value: acc, bits });
    }
    Ok(acc as i64)
}

/// One integer node: returns the exact accumulator `sum x_i w_i + b` and the
/// requantized activation.
pub fn node_forward_int(
    x: &[i32],
    w: &[i32],
    b: i64,
    activation: Activation,
    requant: &NodeRequant,
    accumulator_bits: u32,
) -> Result<(i64, i32)> {
    if x.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: x.len(),
        });
    }
    let dot: i128 = x.iter().zip(w).map(|(&a, &b)| a as i128 * b as i128).sum();
    let acc = check_accumulator(dot + b as i128, accumulator_bits)?;
    let out = requantize_with(
        activation.apply_int(acc),
        &requant.multiplier,
        &requant.output,
    );
    Ok((acc, out))
}

pub fn node_forward_real(x: &[f64], w: &[f64], b: f64, activation: Activation) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: x.len(),
        });
    }
    let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
    Ok(activation.apply(z))
}

/// Integer layer of an exported model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegerLayer {
    pub activation: Activation,
    /// Shape `[n_outputs, n_inputs]`.
    pub weights: QTensor,
    /// Shape `[n_outputs]`, on the accumulator grid.
    pub biases: QTensor,
    pub requant: NodeRequant,
}

impl IntegerLayer {
    pub fn n_outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weight_row(&self, o: usize) -> &[i32] {
        let n = self.n_inputs();
        &self.weights.values()[o * n..(o + 1) * n]
    }

    /// Real value of one accumulator unit.
    pub fn accumulator_scale(&self) -> f64 {
        self.biases.qparams().scale
    }
}

/// Integer-only network: no real arithmetic is needed to run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegerModel {
    pub config: NetworkConfig,
    pub input: QuantParams,
    pub accumulator_bits: u32,
    pub layers: Vec<IntegerLayer>,
}

/// Accumulators and output codes of each layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerTrace {
    pub input: Vec<i32>,
    pub accumulators: Vec<Vec<i64>>,
    pub outputs: Vec<Vec<i32>>,
}

impl IntegerTrace {
    pub fn output(&self) -> &[i32] {
        self.outputs.last().map_or(&self.input, |o| o)
    }
}

impl IntegerModel {
    /// Quantize `params` under `scheme`.
    pub fn build(
        cfg: &NetworkConfig,
        params: &[LayerParams],
        scheme: &QuantScheme,
    ) -> Result<Self> {
        cfg.validate()?;
        check_params(cfg, params)?;
        if scheme.activations.len() != cfg.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "scheme has {} activation grids for {} layers",
                scheme.activations.len(),
                cfg.layers.len()
            )));
        }
        let mut in_scale = scheme.input.scale;
        let mut layers = Vec::with_capacity(params.len());
        for ((spec, p), out) in cfg.layers.iter().zip(params).zip(&scheme.activations) {
            let wq = scheme.weight_params(p)?;
            let weights =
                quant::quantize(&p.weights, &wq)?.reshape(vec![spec.n_outputs, spec.n_inputs])?;
            let acc_scale = in_scale * wq.scale;
            let bq = QuantParams::new(scheme.bias_bits, acc_scale)?;
            let biases = quant::quantize(&p.biases, &bq)?;
            let multiplier = FixedMultiplier::from_ratio(acc_scale / out.scale)?;
            layers.push(IntegerLayer {
                activation: spec.activation,
                weights,
                biases,
                requant: NodeRequant {
                    multiplier,
                    output: *out,
                },
            });
            in_scale = out.scale;
        }
        Ok(Self {
            config: cfg.clone(),
            input: scheme.input,
            accumulator_bits: scheme.accumulator_bits,
            layers,
        })
    }

    /// The scheme that rebuilds this model from its real parameters.
    pub fn scheme(&self) -> QuantScheme {
        let first = self.layers.first();
        QuantScheme {
            weight_bits: first.map_or(QuantScheme::WEIGHT_BITS, |l| l.weights.qparams().bits),
            bias_bits: first.map_or(QuantScheme::BIAS_BITS, |l| l.biases.qparams().bits),
            accumulator_bits: self.accumulator_bits,
            input: self.input,
            activations: self.layers.iter().map(|l| l.requant.output).collect(),
        }
    }

    pub fn quantize_input(&self, input: &[f64]) -> Result<QTensor> {
        if input.len() != self.config.input_dim {
            return Err(Error::LengthMismatch {
                expected: self.config.input_dim,
                actual: input.len(),
            });
        }
        quant::quantize(input, &self.input)
    }

    /// Direct layer-by-layer integer execution.
    pub fn forward_codes(&self, input: &[i32]) -> Result<IntegerTrace> {
        if input.len() != self.config.input_dim {
            return Err(Error::LengthMismatch {
                expected: self.config.input_dim,
                actual: input.len(),
            });
        }
        let mut trace = IntegerTrace {
            input: input.to_vec(),
            accumulators: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let n = layer.n_outputs();
            let mut accs = Vec::with_capacity(n);
            let mut outs = Vec::with_capacity(n);
            for o in 0..n {
                let (acc, out) = node_forward_int(
                    &x,
                    layer.weight_row(o),
                    layer.biases.values()[o] as i64,
                    layer.activation,
                    &layer.requant,
                    self.accumulator_bits,
                )?;
                accs.push(acc);
                outs.push(out);
            }
            trace.accumulators.push(accs);
            trace.outputs.push(outs.clone());
            x = outs;
        }
        Ok(trace)
    }

    /// Quantize a real input, run the integer path and return dequantized outputs.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let codes = self.quantize_input(input)?;
        let trace = self.forward_codes(codes.values())?;
        let out = &self.layers.last().expect("validated").requant.output;
        Ok(trace
            .output()
            .iter()
            .map(|&q| out.dequantize_value(q))
            .collect())
    }
}

pub enum ForwardMode<'a> {
    Real,
    FakeQuant(&'a QuantScheme),
    Integer(&'a QuantScheme),
}

/// Per-layer record of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Pre-activation (weighted sum plus bias).
    pub z: Vec<f64>,
    /// Layer output as seen by the next layer.
    pub y: Vec<f64>,
    /// Straight-through gate of the output quantizer; `None` in real mode.
    pub ste: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `y^0`: the (possibly fake-quantized) network input.
    pub input: Vec<f64>,
    pub layers: Vec<LayerTrace>,
    /// Raw integer state, integer mode only.
    pub integer: Option<IntegerTrace>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map_or(&self.input, |l| &l.y)
    }

    /// `y^l` with `y^0` the input.
    pub fn activation(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].y
        }
    }
}

/// Real-valued view of the integer weights, used as `w^{l+1}` in QAT backprop.
pub fn fake_quantized_params(model: &IntegerModel) -> Vec<LayerParams> {
    model
        .layers
        .iter()
        .map(|l| LayerParams {
            n_inputs: l.n_inputs(),
            n_outputs: l.n_outputs(),
            weights: quant::dequantize(&l.weights),
            biases: quant::dequantize(&l.biases),
        })
        .collect()
}

pub fn network_forward(
    cfg: &NetworkConfig,
    params: &[LayerParams],
    input: &[f64],
    mode: ForwardMode<'_>,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    check_params(cfg, params)?;
    if input.len() != cfg.input_dim {
        return Err(Error::LengthMismatch {
            expected: cfg.input_dim,
            actual: input.len(),
        });
    }
    match mode {
        ForwardMode::Real => Ok(forward_real(cfg, params, input)),
        ForwardMode::FakeQuant(scheme) => {
            let model = IntegerModel::build(cfg, params, scheme)?;
            let mut trace = forward_quantized(&model, input)?;
            trace.integer = None;
            Ok(trace)
        }
        ForwardMode::Integer(scheme) => {
            let model = IntegerModel::build(cfg, params, scheme)?;
            forward_quantized(&model, input)
        }
    }
}

fn forward_real(cfg: &NetworkConfig, params: &[LayerParams], input: &[f64]) -> ForwardTrace {
    let mut layers = Vec::with_capacity(params.len());
    let mut x = input.to_vec();
    for (spec, p) in cfg.layers.iter().zip(params) {
        let z: Vec<f64> = (0..p.n_outputs)
            .map(|o| p.row(o).iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + p.biases[o])
            .collect();
        let y: Vec<f64> = z.iter().map(|&v| spec.activation.apply(v)).collect();
        x = y.clone();
        layers.push(LayerTrace { z, y, ste: None });
    }
    ForwardTrace {
        input: input.to_vec(),
        layers,
        integer: None,
    }
}

/// Run an integer model and express its state in real units.
pub fn forward_quantized(model: &IntegerModel, input: &[f64]) -> Result<ForwardTrace> {
    let codes = model.quantize_input(input)?;
    let itrace = model.forward_codes(codes.values())?;
    let layers = model
        .layers
        .iter()
        .zip(itrace.accumulators.iter().zip(&itrace.outputs))
        .map(|(layer, (accs, outs))| {
            let s_acc = layer.accumulator_scale();
            let out = &layer.requant.output;
            let z: Vec<f64> = accs.iter().map(|&a| a as f64 * s_acc).collect();
            let y = outs.iter().map(|&q| out.dequantize_value(q)).collect();
            let ste = z
                .iter()
                .map(|&v| {
                    if out.in_range(layer.activation.apply(v)) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            LayerTrace {
                z,
                y,
                ste: Some(ste),
            }
        })
        .collect();
    Ok(ForwardTrace {
        input: quant::dequantize(&codes),
        layers,
        integer: Some(itrace),
    })
}
