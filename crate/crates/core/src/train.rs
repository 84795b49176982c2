//! Supervised training with MSE loss, backpropagation and plain SGD.
//!
//! Backprop recursion, for layers `l = L..1`:
//!
//! ```text
//! delta^L = (2 / n_out) * (y^L - t)                    (linear output, MSE)
//! delta^l = (W^{l+1}^T delta^{l+1}) * act'(z^l)
//! dL/dW^l = delta^l (outer) y^{l-1},    dL/db^l = delta^l
//! ```
//!
//! In QAT mode the forward pass runs the integer datapath (see [`crate::network`]),
//! `W` in the recursion is the dequantized integer weight, and every quantizer is
//! crossed with the straight-through estimator: identity inside its clamp range, zero
//! outside. Gradients update the real shadow weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::{Dataset, TrainSample};
use crate::network::{
    self, fake_quantized_params, forward_quantized, ForwardMode, ForwardTrace, IntegerModel,
    LayerParams, NetworkConfig, QuantScheme,
};
use crate::quant::{self, FixedMultiplier, QuantParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Float,
    Qat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Targets are divided by these before training.
    pub t1_max_ms: f64,
    pub t2_max_ms: f64,
    /// Leading samples used to seed the QAT activation ranges.
    pub calibration_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 500,
            steps_per_epoch: 1000,
            batch_size: 1,
            seed: 0,
            mode: TrainMode::Float,
            t1_max_ms: 4000.0,
            t2_max_ms: 2000.0,
            calibration_samples: 1000,
        }
    }
}

impl TrainConfig {
    /// Workstation-sized regime: 20 epochs of 200 steps.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            steps_per_epoch: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs, steps_per_epoch and batch_size must be >= 1".into(),
            ));
        }
        if !(self.t1_max_ms > 0.0 && self.t2_max_ms > 0.0) {
            return Err(Error::InvalidConfig(
                "target maxima must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn normalize_targets(&self, s: &TrainSample) -> [f64; 2] {
        [s.t1_ms / self.t1_max_ms, s.t2_ms / self.t2_max_ms]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(params: &[LayerParams]) -> Self {
        Self {
            layers: params
                .iter()
                .map(|p| LayerGradients {
                    weights: vec![0.0; p.weights.len()],
                    biases: vec![0.0; p.biases.len()],
                    delta: vec![0.0; p.n_outputs],
                })
                .collect(),
        }
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.biases
                .iter_mut()
                .zip(&b.biases)
                .for_each(|(x, y)| *x += y);
            a.delta.iter_mut().zip(&b.delta).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(&mut l.biases)
                .chain(&mut l.delta)
                .for_each(|x| *x *= k);
        }
    }
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("prediction"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `(2 / n) * (y^L - t)`, gated by the output quantizer's STE mask when present.
pub fn output_delta(trace: &ForwardTrace, target: &[f64]) -> Result<Vec<f64>> {
    let last = trace.layers.last().ok_or(Error::Empty("forward trace"))?;
    if last.y.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: last.y.len(),
            actual: target.len(),
        });
    }
    let k = 2.0 / target.len() as f64;
    let mut delta: Vec<f64> = last
        .y
        .iter()
        .zip(target)
        .map(|(y, t)| k * (y - t))
        .collect();
    if let Some(gate) = &last.ste {
        delta.iter_mut().zip(gate).for_each(|(d, g)| *d *= g);
    }
    Ok(delta)
}

/// Backpropagate `delta_l` through a trace produced with `params` (the weights the
/// forward pass actually used).
pub fn backprop(
    cfg: &NetworkConfig,
    params: &[LayerParams],
    trace: &ForwardTrace,
    delta_l: &[f64],
) -> Result<Gradients> {
    network::check_params(cfg, params)?;
    let n = cfg.layers.len();
    if trace.layers.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "trace has {} layers, network has {n}",
            trace.layers.len()
        )));
    }
    if delta_l.len() != cfg.output_dim() {
        return Err(Error::LengthMismatch {
            expected: cfg.output_dim(),
            actual: delta_l.len(),
        });
    }
    let mut layers = Vec::with_capacity(n);
    let mut delta = delta_l.to_vec();
    for l in (0..n).rev() {
        let p = &params[l];
        let x = trace.activation(l);
        if x.len() != p.n_inputs {
            return Err(Error::ShapeMismatch(format!(
                "trace input of layer {l} has wrong width"
            )));
        }
        let mut dw = Vec::with_capacity(p.weights.len());
        for &d in &delta {
            dw.extend(x.iter().map(|&v| d * v));
        }
        let next = if l > 0 {
            let prev = &trace.layers[l - 1];
            let act = cfg.layers[l - 1].activation;
            let mut g = vec![0.0; p.n_inputs];
            for (o, &d) in delta.iter().enumerate() {
                g.iter_mut().zip(p.row(o)).for_each(|(gi, w)| *gi += w * d);
            }
            for (i, gi) in g.iter_mut().enumerate() {
                *gi *= act.derivative(prev.z[i]);
                if let Some(gate) = &prev.ste {
                    *gi *= gate[i];
                }
            }
            g
        } else {
            Vec::new()
        };
        layers.push(LayerGradients {
            weights: dw,
            biases: delta.clone(),
            delta,
        });
        delta = next;
    }
    layers.reverse();
    Ok(Gradients { layers })
}

/// `w <- w - lr * dW`, `b <- b - lr * db`.
pub fn sgd_step(params: &mut [LayerParams], grads: &Gradients, learning_rate: f64) {
    for (p, g) in params.iter_mut().zip(&grads.layers) {
        p.weights
            .iter_mut()
            .zip(&g.weights)
            .for_each(|(w, d)| *w -= learning_rate * d);
        p.biases
            .iter_mut()
            .zip(&g.biases)
            .for_each(|(b, d)| *b -= learning_rate * d);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<LayerParams>,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
    /// Final activation grids (QAT only).
    pub scheme: Option<QuantScheme>,
}

impl TrainOutcome {
    /// Integer model of the trained network. A QAT run keeps the grids it trained
    /// under, so the export reproduces its fake-quant forward exactly; a float run
    /// is calibrated post-training on `calibration`.
    pub fn integer_model(
        &self,
        cfg: &NetworkConfig,
        calibration: &[Vec<f64>],
    ) -> Result<IntegerModel> {
        match &self.scheme {
            Some(scheme) => IntegerModel::build(cfg, &self.params, scheme),
            None => export_integer_model(cfg, &self.params, calibration),
        }
    }
}

/// Running max-abs observer of the input and of every layer's activation.
#[derive(Clone, Debug)]
struct RangeObserver {
    input: f64,
    layers: Vec<f64>,
}

impl RangeObserver {
    fn new(n_layers: usize) -> Self {
        Self {
            input: 0.0,
            layers: vec![0.0; n_layers],
        }
    }

    fn observe(&mut self, cfg: &NetworkConfig, trace: &ForwardTrace, input: &[f64]) {
        self.input = input.iter().fold(self.input, |m, v| m.max(v.abs()));
        for ((m, l), spec) in self.layers.iter_mut().zip(&trace.layers).zip(&cfg.layers) {
            *m =
                l.z.iter()
                    .fold(*m, |m, &z| m.max(spec.activation.apply(z).abs()));
        }
    }

    fn scheme(&self) -> Result<QuantScheme> {
        QuantScheme::from_ranges(self.input, &self.layers)
    }
}

fn check_dataset(cfg: &NetworkConfig, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if let Some(i) = dataset
        .samples
        .iter()
        .position(|s| s.signal.len() != cfg.input_dim)
    {
        return Err(Error::ShapeMismatch(format!(
            "sample {i} has {} values, network expects {}",
            dataset.samples[i].signal.len(),
            cfg.input_dim
        )));
    }
    Ok(())
}

/// Train from Glorot initialization. Batches are drawn uniformly with replacement
/// from a ChaCha stream seeded with `tcfg.seed`, so runs are bit-reproducible.
pub fn train(cfg: &NetworkConfig, tcfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate_mrf()?;
    tcfg.validate()?;
    check_dataset(cfg, dataset)?;

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut params = network::init_params(cfg, &mut rng);
    let n = dataset.len();

    let mut observer = match tcfg.mode {
        TrainMode::Float => None,
        TrainMode::Qat => {
            let mut obs = RangeObserver::new(cfg.layers.len());
            for s in dataset.samples.iter().take(tcfg.calibration_samples.max(1)) {
                let t = network::network_forward(cfg, &params, &s.signal, ForwardMode::Real)?;
                obs.observe(cfg, &t, &s.signal);
            }
            Some(obs)
        }
    };

    let mut history = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        let mut epoch_loss = 0.0;
        for step in 0..tcfg.steps_per_epoch {
            let mut grads = Gradients::zeros_like(&params);
            let mut step_loss = 0.0;

            let quantized = match &observer {
                Some(obs) => {
                    let model = IntegerModel::build(cfg, &params, &obs.scheme()?)?;
                    let effective = fake_quantized_params(&model);
                    Some((model, effective))
                }
                None => None,
            };

            for _ in 0..tcfg.batch_size {
                let sample = &dataset.samples[rng.random_range(0..n)];
                let target = tcfg.normalize_targets(sample);
                let (trace, used) = match &quantized {
                    Some((model, effective)) => (
                        forward_quantized(model, &sample.signal)?,
                        effective.as_slice(),
                    ),
                    None => (
                        network::network_forward(cfg, &params, &sample.signal, ForwardMode::Real)?,
                        params.as_slice(),
                    ),
                };
                step_loss += mse_loss(trace.output(), &target)?;
                let delta = output_delta(&trace, &target)?;
                grads.accumulate(&backprop(cfg, used, &trace, &delta)?);
                if let Some(obs) = observer.as_mut() {
                    obs.observe(cfg, &trace, &sample.signal);
                }
            }

            step_loss /= tcfg.batch_size as f64;
            if !step_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: step_loss,
                });
            }
            grads.scale(1.0 / tcfg.batch_size as f64);
            sgd_step(&mut params, &grads, tcfg.learning_rate);
            epoch_loss += step_loss;
        }
        history.push(epoch_loss / tcfg.steps_per_epoch as f64);
    }

    let scheme = observer.map(|o| o.scheme()).transpose()?;
    Ok(TrainOutcome {
        params,
        loss_history: history,
        scheme,
    })
}

/// Freeze trained parameters into an integer-only model.
///
/// Activation grids are calibrated layer by layer with the max-abs rule: each
/// layer's range is measured on the calibration inputs after they have passed
/// through the already-quantized preceding layers.
pub fn export_integer_model(
    cfg: &NetworkConfig,
    params: &[LayerParams],
    calibration: &[Vec<f64>],
) -> Result<IntegerModel> {
    cfg.validate()?;
    network::check_params(cfg, params)?;
    if calibration.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if let Some(x) = calibration.iter().find(|x| x.len() != cfg.input_dim) {
        return Err(Error::LengthMismatch {
            expected: cfg.input_dim,
            actual: x.len(),
        });
    }
    let in_max = calibration
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let input = QuantParams::from_max_abs(in_max, QuantScheme::ACTIVATION_BITS)?;
    let mut codes: Vec<Vec<i32>> = calibration
        .iter()
        .map(|x| quant::quantize(x, &input).map(|q| q.into_values()))
        .collect::<Result<_>>()?;

    let mut scheme = QuantScheme {
        weight_bits: QuantScheme::WEIGHT_BITS,
        bias_bits: QuantScheme::BIAS_BITS,
        accumulator_bits: QuantScheme::ACCUMULATOR_BITS,
        input,
        activations: Vec::with_capacity(cfg.layers.len()),
    };
    let mut in_scale = input.scale;
    for (spec, p) in cfg.layers.iter().zip(params) {
        let wq = scheme.weight_params(p)?;
        let w = quant::quantize(&p.weights, &wq)?.into_values();
        let acc_scale = in_scale * wq.scale;
        let bq = QuantParams::new(scheme.bias_bits, acc_scale)?;
        let b = quant::quantize(&p.biases, &bq)?.into_values();

        let accs: Vec<Vec<i64>> = codes
            .iter()
            .map(|x| {
                (0..spec.n_outputs)
                    .map(|o| {
                        let row = &w[o * spec.n_inputs..(o + 1) * spec.n_inputs];
                        let dot: i64 = row.iter().zip(x).map(|(&a, &b)| a as i64 * b as i64).sum();
                        spec.activation.apply_int(dot + b[o] as i64)
                    })
                    .collect()
            })
            .collect();
        let max_acc = accs.iter().flatten().fold(0i64, |m, a| m.max(a.abs()));
        let out =
            QuantParams::from_max_abs(max_acc as f64 * acc_scale, QuantScheme::ACTIVATION_BITS)?;
        let m = FixedMultiplier::from_ratio(acc_scale / out.scale)?;
        codes = accs
            .iter()
            .map(|a| {
                a.iter()
                    .map(|&v| quant::requantize_with(v, &m, &out))
                    .collect()
            })
            .collect();
        scheme.activations.push(out);
        in_scale = out.scale;
    }
    IntegerModel::build(cfg, params, &scheme)
}
