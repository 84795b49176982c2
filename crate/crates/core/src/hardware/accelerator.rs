use std::fmt;
use std::sync::Arc;

use super::{schedule_forward, HardwareProfile};
use crate::error::{Error, Result};
use crate::network::{Activation, IntegerLayer, IntegerModel, NodeRequant};
use crate::quant::{self, FixedMultiplier, QTensor, QuantParams};

/// Final stage of a node unit: `(layer, activated accumulator, constants) -> code`.
pub type Requantizer = Arc<dyn Fn(usize, i64, &NodeRequant) -> i32 + Send + Sync>;

/// Requantizer with a floor shift instead of round-half-away-from-zero.
/// A deliberately wrong datapath, used as a negative control for verification.
pub fn truncating_requantize(acc: i64, m: &FixedMultiplier, out: &QuantParams) -> i32 {
    let v = ((acc as i128 * m.mantissa as i128) >> m.shift) as i64 + out.zero_point as i64;
    v.clamp(out.qmin(), out.qmax()) as i32
}

/// Forward datapath built from `parallel_nodes` identical node units. A layer
/// is processed in batches of at most `parallel_nodes` nodes; each batch costs
/// `cycles_per_node` cycles and runs the four node stages (multiply, adder
/// tree, bias + activation, requantize).
#[derive(Clone)]
pub struct ScheduledAccelerator {
    profile: HardwareProfile,
    requantizer: Requantizer,
}

impl fmt::Debug for ScheduledAccelerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScheduledAccelerator")
            .field("parallel_nodes", &self.profile.parallel_nodes)
            .field("cycles_per_node", &self.profile.cycles_per_node)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledRun {
    pub output: QTensor,
    /// Output codes of every layer.
    pub layer_outputs: Vec<Vec<i32>>,
    pub forward_cycles: u64,
    pub layer_batches: Vec<u64>,
}

struct NodeUnit<'a> {
    layer: &'a IntegerLayer,
    accumulator_bits: u32,
}

impl NodeUnit<'_> {
    fn multiply(x: &[i32], w: &[i32]) -> Vec<i128> {
        x.iter()
            .zip(w)
            .map(|(&a, &b)| a as i128 * b as i128)
            .collect()
    }

    fn adder_tree(mut v: Vec<i128>) -> i128 {
        if v.is_empty() {
            return 0;
        }
        while v.len() > 1 {
            v = v.chunks(2).map(|c| c.iter().sum()).collect();
        }
        v[0]
    }

    fn bias_activate(&self, sum: i128, bias: i32) -> Result<i64> {
        let acc = sum + bias as i128;
        let bits = self.accumulator_bits;
        if acc < quant::qmin(bits) as i128 || acc > quant::qmax(bits) as i128 {
            return Err(Error::AccumulatorOverflow { value: acc, bits });
        }
        Ok(match self.layer.activation {
            Activation::Relu => (acc as i64).max(0),
            Activation::Linear => acc as i64,
        })
    }
}

impl ScheduledAccelerator {
    pub fn new(profile: HardwareProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            profile,
            requantizer: Arc::new(|_, acc, r| {
                quant::requantize_with(acc, &r.multiplier, &r.output)
            }),
        })
    }

    pub fn with_requantizer(mut self, requantizer: Requantizer) -> Self {
        self.requantizer = requantizer;
        self
    }

    /// Swap in [`truncating_requantize`] on one layer.
    pub fn with_faulty_layer(self, faulty: usize) -> Self {
        self.with_requantizer(Arc::new(move |layer, acc, r| {
            if layer == faulty {
                truncating_requantize(acc, &r.multiplier, &r.output)
            } else {
                quant::requantize_with(acc, &r.multiplier, &r.output)
            }
        }))
    }

    pub fn profile(&self) -> &HardwareProfile {
        &self.profile
    }

    pub fn run(&self, model: &IntegerModel, input: &QTensor) -> Result<ScheduledRun> {
        if input.len() != model.config.input_dim {
            return Err(Error::LengthMismatch {
                expected: model.config.input_dim,
                actual: input.len(),
            });
        }
        if input.qparams() != &model.input {
            return Err(Error::Schedule(
                "input is not on the model's input grid".into(),
            ));
        }
        let p = self.profile.parallel_nodes as usize;
        let mut cycles = 0;
        let mut layer_batches = Vec::with_capacity(model.layers.len());
        let mut layer_outputs: Vec<Vec<i32>> = Vec::with_capacity(model.layers.len());
        let mut x = input.values().to_vec();
        for (l, layer) in model.layers.iter().enumerate() {
            if layer.n_inputs() != x.len() {
                return Err(Error::Schedule(format!(
                    "layer {l} expects {} inputs, buffer holds {}",
                    layer.n_inputs(),
                    x.len()
                )));
            }
            let unit = NodeUnit {
                layer,
                accumulator_bits: model.accumulator_bits,
            };
            let n = layer.n_outputs();
            let mut next = vec![0i32; n];
            let mut batches = 0;
            for first in (0..n).step_by(p) {
                let slots = first..(first + p).min(n);
                let products: Vec<Vec<i128>> = slots
                    .clone()
                    .map(|o| NodeUnit::multiply(&x, layer.weight_row(o)))
                    .collect();
                let sums: Vec<i128> = products.into_iter().map(NodeUnit::adder_tree).collect();
                let activated: Vec<i64> = slots
                    .clone()
                    .zip(sums)
                    .map(|(o, s)| unit.bias_activate(s, layer.biases.values()[o]))
                    .collect::<Result<_>>()?;
                for (o, a) in slots.zip(activated) {
                    next[o] = (self.requantizer)(l, a, &layer.requant);
                }
                batches += 1;
                cycles += self.profile.cycles_per_node;
            }
            layer_batches.push(batches);
            layer_outputs.push(next.clone());
            x = next;
        }
        let out_q = model
            .layers
            .last()
            .map_or(model.input, |l| l.requant.output);
        Ok(ScheduledRun {
            output: QTensor::from_vec(x, out_q)?,
            layer_outputs,
            forward_cycles: cycles,
            layer_batches,
        })
    }

    /// Cycles the schedule model predicts for `model`.
    pub fn expected_cycles(&self, model: &IntegerModel) -> Result<u64> {
        Ok(schedule_forward(&model.config, &self.profile)?.cycles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerParams, NetworkConfig, QuantScheme};

    fn identical_nodes(n: usize) -> (IntegerModel, QTensor) {
        let cfg = NetworkConfig::from_widths(4, &[n, 1]).unwrap();
        let row = [0.5, -0.25, 0.75, 0.1];
        let p0 = LayerParams {
            n_inputs: 4,
            n_outputs: n,
            weights: row.iter().copied().cycle().take(4 * n).collect(),
            biases: vec![0.05; n],
        };
        let p1 = LayerParams {
            n_inputs: n,
            n_outputs: 1,
            weights: vec![1.0 / n as f64; n],
            biases: vec![0.0],
        };
        let scheme = QuantScheme::from_ranges(1.0, &[2.0, 2.0]).unwrap();
        let model = IntegerModel::build(&cfg, &[p0, p1], &scheme).unwrap();
        let x = model.quantize_input(&[0.9, -0.3, 0.4, 1.0]).unwrap();
        (model, x)
    }

    #[test]
    fn sixteen_identical_nodes_agree() {
        let (model, x) = identical_nodes(16);
        let acc = ScheduledAccelerator::new(HardwareProfile::default()).unwrap();
        let run = acc.run(&model, &x).unwrap();
        let first = &run.layer_outputs[0];
        assert!(first.iter().all(|&v| v == first[0]));
        assert_eq!(run.layer_batches, vec![1, 1]);
        assert_eq!(run.forward_cycles, 8);
        let direct = model.forward_codes(x.values()).unwrap();
        assert_eq!(run.layer_outputs, direct.outputs);
    }

    #[test]
    fn batching_matches_schedule() {
        let (model, x) = identical_nodes(37);
        for p in [1, 2, 16, 37, 64] {
            let hp = HardwareProfile {
                parallel_nodes: p,
                ..Default::default()
            };
            let acc = ScheduledAccelerator::new(hp).unwrap();
            let run = acc.run(&model, &x).unwrap();
            assert_eq!(run.forward_cycles, acc.expected_cycles(&model).unwrap());
            assert_eq!(
                run.output.values(),
                model.forward_codes(x.values()).unwrap().output()
            );
        }
    }

    #[test]
    fn adder_tree_sums_any_length() {
        for n in 0..40 {
            let v: Vec<i128> = (0..n).map(|i| i * i - 7).collect();
            assert_eq!(NodeUnit::adder_tree(v.clone()), v.iter().sum::<i128>());
        }
    }

    #[test]
    fn rejects_foreign_input() {
        let (model, x) = identical_nodes(4);
        let acc = ScheduledAccelerator::new(HardwareProfile::default()).unwrap();
        let short = QTensor::from_vec(vec![1, 2], *x.qparams()).unwrap();
        assert!(acc.run(&model, &short).is_err());
        let other =
            QTensor::from_vec(x.values().to_vec(), QuantParams::new(8, 0.5).unwrap()).unwrap();
        assert!(matches!(acc.run(&model, &other), Err(Error::Schedule(_))));
    }

    #[test]
    fn truncation_differs_on_negative_ties() {
        let m = FixedMultiplier::from_ratio(0.5).unwrap();
        let out = QuantParams::new(8, 1.0).unwrap();
        assert_eq!(quant::requantize_with(-3, &m, &out), -2);
        assert_eq!(truncating_requantize(-3, &m, &out), -2);
        assert_eq!(quant::requantize_with(3, &m, &out), 2);
        assert_eq!(truncating_requantize(3, &m, &out), 1);
    }
}
