use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ScheduledAccelerator;
use crate::error::Result;
use crate::network::{init_params, IntegerModel, NetworkConfig};
use crate::quant::QTensor;
use crate::train::export_integer_model;

/// First disagreement between scheduled and direct execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub trial: usize,
    pub layer: usize,
    pub node: usize,
    pub direct: i32,
    pub scheduled: i32,
    pub direct_layer: Vec<i32>,
    pub scheduled_layer: Vec<i32>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "trial {} layer {} node {}: direct {} scheduled {}",
            self.trial, self.layer, self.node, self.direct, self.scheduled
        )?;
        writeln!(f, "  direct    {:?}", self.direct_layer)?;
        write!(f, "  scheduled {:?}", self.scheduled_layer)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub mismatched_trials: usize,
    /// Differing bits over all layer output codes of all trials.
    pub bit_mismatches: u64,
    /// Trials whose incurred cycles differ from the schedule model.
    pub cycle_mismatches: usize,
    pub first: Option<Mismatch>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.bit_mismatches == 0 && self.cycle_mismatches == 0
    }

    fn record(
        &mut self,
        trial: usize,
        acc: &ScheduledAccelerator,
        model: &IntegerModel,
        x: &QTensor,
    ) -> Result<()> {
        let direct = model.forward_codes(x.values())?;
        let run = acc.run(model, x)?;
        self.trials += 1;
        if run.forward_cycles != acc.expected_cycles(model)? {
            self.cycle_mismatches += 1;
        }
        let mut bad = false;
        for (l, (d, s)) in direct.outputs.iter().zip(&run.layer_outputs).enumerate() {
            for (n, (&a, &b)) in d.iter().zip(s).enumerate() {
                let bits = (a ^ b).count_ones();
                if bits == 0 {
                    continue;
                }
                self.bit_mismatches += bits as u64;
                bad = true;
                self.first.get_or_insert_with(|| Mismatch {
                    trial,
                    layer: l,
                    node: n,
                    direct: a,
                    scheduled: b,
                    direct_layer: d.clone(),
                    scheduled_layer: s.clone(),
                });
            }
        }
        self.mismatched_trials += bad as usize;
        Ok(())
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} trials, {} mismatched trials, {} bit mismatches, {} cycle mismatches",
            self.trials, self.mismatched_trials, self.bit_mismatches, self.cycle_mismatches
        )?;
        if let Some(m) = &self.first {
            write!(f, "\nfirst mismatch: {m}")?;
        }
        Ok(())
    }
}

fn random_input(model: &IntegerModel, rng: &mut impl Rng) -> Result<QTensor> {
    let q = model.input;
    let codes = (0..model.config.input_dim)
        .map(|_| rng.random_range(q.qmin()..=q.qmax()) as i32)
        .collect();
    QTensor::from_vec(codes, q)
}

/// A random network (1..=5 layers, widths 1..=40, input 1..=64) exported from
/// Glorot weights with a small random calibration set, plus a random input.
pub fn random_trial(rng: &mut impl Rng) -> Result<(IntegerModel, QTensor)> {
    let input_dim = rng.random_range(1..=64);
    let widths: Vec<usize> = (0..rng.random_range(1..=5))
        .map(|_| rng.random_range(1..=40))
        .collect();
    let cfg = NetworkConfig::from_widths(input_dim, &widths)?;
    let mut params = init_params(&cfg, rng);
    for p in &mut params {
        p.biases
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let amp = rng.random_range(0.05..4.0);
    let calib: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            (0..input_dim)
                .map(|_| rng.random_range(-amp..amp))
                .collect()
        })
        .collect();
    let model = export_integer_model(&cfg, &params, &calib)?;
    let x = random_input(&model, rng)?;
    Ok((model, x))
}

/// Trial `i` draws from its own ChaCha8 stream of `seed`.
fn trial_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

pub fn verify_random(acc: &ScheduledAccelerator, trials: usize, seed: u64) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for i in 0..trials {
        let (model, x) = random_trial(&mut trial_rng(seed, i))?;
        report.record(i, acc, &model, &x)?;
    }
    Ok(report)
}

/// Random input codes through a fixed model.
pub fn verify_model(
    acc: &ScheduledAccelerator,
    model: &IntegerModel,
    trials: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for i in 0..trials {
        let x = random_input(model, &mut trial_rng(seed, i))?;
        report.record(i, acc, model, &x)?;
    }
    Ok(report)
}
