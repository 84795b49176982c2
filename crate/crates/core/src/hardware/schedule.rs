use std::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::Zero;
use serde::{Serialize, Serializer};

use super::{check_config, HardwareProfile};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;

/// `ceil(width / p)` for each layer.
pub fn layer_batches(widths: impl IntoIterator<Item = usize>, p: u64) -> Vec<u64> {
    widths.into_iter().map(|w| (w as u64).div_ceil(p)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ForwardSchedule {
    pub cycles: u64,
    pub layer_batches: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleReport {
    pub forward_cycles: u64,
    /// Rational: the backward model is a calibrated linear extrapolation.
    pub backward_cycles: Ratio<u64>,
    pub layer_batches: Vec<u64>,
}

impl CycleReport {
    pub fn cycles_per_sample(&self) -> Ratio<u64> {
        self.backward_cycles + self.forward_cycles
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl Serialize for CycleReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            forward_cycles: u64,
            backward_cycles: f64,
            backward_cycles_exact: String,
            cycles_per_sample: f64,
            cycles_per_sample_exact: String,
            layer_batches: &'a [u64],
        }
        Repr {
            forward_cycles: self.forward_cycles,
            backward_cycles: ratio_f64(self.backward_cycles),
            backward_cycles_exact: self.backward_cycles.to_string(),
            cycles_per_sample: ratio_f64(self.cycles_per_sample()),
            cycles_per_sample_exact: self.cycles_per_sample().to_string(),
            layer_batches: &self.layer_batches,
        }
        .serialize(s)
    }
}

impl fmt::Display for CycleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layer batches     {:?}", self.layer_batches)?;
        writeln!(f, "forward cycles    {}", self.forward_cycles)?;
        writeln!(f, "backward cycles   {}", self.backward_cycles)?;
        write!(f, "cycles per sample {}", self.cycles_per_sample())
    }
}

pub fn schedule_forward(cfg: &NetworkConfig, hp: &HardwareProfile) -> Result<ForwardSchedule> {
    check_config(cfg)?;
    hp.validate()?;
    let layer_batches = layer_batches(cfg.widths(), hp.parallel_nodes);
    Ok(ForwardSchedule {
        cycles: layer_batches.iter().sum::<u64>() * hp.cycles_per_node,
        layer_batches,
    })
}

/// Backprop-module invocations per forward batch, fixed so the calibration
/// network at the calibration parallelism needs exactly `backward_cycles_total`.
pub fn backward_factor(hp: &HardwareProfile) -> Result<Ratio<u64>> {
    hp.validate()?;
    let calib: u64 = layer_batches(
        hp.calibration_widths.iter().copied(),
        hp.calibration_parallel_nodes,
    )
    .iter()
    .sum();
    Ok(Ratio::new(
        hp.backward_cycles_total,
        hp.cycles_per_backprop_module * calib,
    ))
}

pub fn schedule_backward(cfg: &NetworkConfig, hp: &HardwareProfile) -> Result<Ratio<u64>> {
    let batches: u64 = schedule_forward(cfg, hp)?.layer_batches.iter().sum();
    Ok(backward_factor(hp)? * (hp.cycles_per_backprop_module * batches))
}

pub fn schedule(cfg: &NetworkConfig, hp: &HardwareProfile) -> Result<CycleReport> {
    let fwd = schedule_forward(cfg, hp)?;
    Ok(CycleReport {
        forward_cycles: fwd.cycles,
        backward_cycles: schedule_backward(cfg, hp)?,
        layer_batches: fwd.layer_batches,
    })
}

/// Seconds to stream `n_samples` through one forward and one backward pass each,
/// in exact rational arithmetic.
pub fn estimate_training_time(
    n_samples: u64,
    cfg: &NetworkConfig,
    hp: &HardwareProfile,
) -> Result<BigRational> {
    let cycles = schedule(cfg, hp)?.cycles_per_sample();
    let clock_mhz = BigRational::from_float(hp.clock_mhz)
        .ok_or_else(|| Error::InvalidConfig("clock_mhz is not finite".into()))?;
    let hz = clock_mhz * BigInt::from(1_000_000u32);
    let total = BigRational::new(
        BigInt::from(n_samples) * BigInt::from(*cycles.numer()),
        BigInt::from(*cycles.denom()),
    );
    if total.is_zero() {
        return Ok(total);
    }
    Ok(total / hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkConfig, DEFAULT_INPUT_DIM};
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn net(widths: &[usize]) -> NetworkConfig {
        NetworkConfig::from_widths(DEFAULT_INPUT_DIM, widths).unwrap()
    }

    #[test]
    fn forward_examples() {
        let hp = HardwareProfile::default();
        let f = schedule_forward(&NetworkConfig::default(), &hp).unwrap();
        assert_eq!(f.layer_batches, vec![2, 4, 2, 2, 2, 1, 1]);
        assert_eq!(f.cycles, 56);
        assert_eq!(schedule_forward(&net(&[16]), &hp).unwrap().cycles, 4);
        assert_eq!(schedule_forward(&net(&[17]), &hp).unwrap().cycles, 8);
    }

    #[test]
    fn backward_examples() {
        let hp = HardwareProfile::default();
        assert_eq!(
            schedule_backward(&NetworkConfig::default(), &hp).unwrap(),
            Ratio::from_integer(104)
        );
        // one batch: 3 * 1 * 104/42
        assert_eq!(
            schedule_backward(&net(&[2]), &hp).unwrap(),
            Ratio::new(52, 7)
        );
        // linear in batch count: exact doubling needs widths that are multiples of P
        let base = schedule_backward(&net(&[32, 64, 16, 48]), &hp).unwrap();
        assert_eq!(
            schedule_backward(&net(&[64, 128, 32, 96]), &hp).unwrap(),
            base * 2
        );
        // the 2-wide output layer still fits one batch
        let doubled: Vec<usize> = crate::network::DEFAULT_WIDTHS
            .iter()
            .map(|w| 2 * w)
            .collect();
        assert_eq!(
            schedule_backward(&net(&doubled), &hp).unwrap(),
            Ratio::new(104 * 27, 14)
        );
    }

    #[test]
    fn report_totals() {
        let r = schedule(&NetworkConfig::default(), &HardwareProfile::default()).unwrap();
        assert_eq!(r.cycles_per_sample(), Ratio::from_integer(160));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["cycles_per_sample_exact"], "160");
        assert_eq!(json["forward_cycles"], 56);
    }

    #[test]
    fn empty_network_costs_nothing() {
        let cfg = NetworkConfig {
            input_dim: 4,
            layers: vec![],
        };
        let r = schedule(&cfg, &HardwareProfile::default()).unwrap();
        assert_eq!(
            (r.forward_cycles, r.backward_cycles),
            (0, Ratio::from_integer(0))
        );
    }

    #[test]
    fn training_time_examples() {
        let cfg = NetworkConfig::default();
        let mut hp = HardwareProfile::default();
        let t = estimate_training_time(250_000_000, &cfg, &hp).unwrap();
        assert_eq!(t, BigRational::from_integer(200.into()));
        assert!(estimate_training_time(0, &cfg, &hp).unwrap().is_zero());
        hp.clock_mhz = 250.0;
        let t = estimate_training_time(250_000_000, &cfg, &hp).unwrap();
        assert_eq!(t, BigRational::from_integer(160.into()));
    }

    proptest! {
        #[test]
        fn adding_a_layer_never_reduces_forward(widths in proptest::collection::vec(1usize..100, 1..8), extra in 1usize..100, p in 1u64..40) {
            let hp = HardwareProfile { parallel_nodes: p, ..Default::default() };
            let mut longer = widths.clone();
            longer.insert(0, extra);
            let a = schedule_forward(&net(&widths), &hp).unwrap().cycles;
            let b = schedule_forward(&net(&longer), &hp).unwrap().cycles;
            prop_assert!(b >= a);
        }

        #[test]
        fn more_parallelism_never_increases_forward(widths in proptest::collection::vec(1usize..100, 1..8), p in 1u64..40, dp in 1u64..40) {
            let cfg = net(&widths);
            let slow = HardwareProfile { parallel_nodes: p, ..Default::default() };
            let fast = HardwareProfile { parallel_nodes: p + dp, ..Default::default() };
            prop_assert!(schedule_forward(&cfg, &fast).unwrap().cycles <= schedule_forward(&cfg, &slow).unwrap().cycles);
        }

        #[test]
        fn time_scales_inversely_with_clock(n in 0u64..1_000_000_000, mhz in 1u32..1000) {
            let cfg = NetworkConfig::default();
            let hp = HardwareProfile { clock_mhz: mhz as f64, ..Default::default() };
            let t = estimate_training_time(n, &cfg, &hp).unwrap();
            let expect = BigRational::new(BigInt::from(n) * 160, BigInt::from(mhz) * 1_000_000);
            prop_assert_eq!(&t, &expect);
            prop_assert!(t.to_f64().unwrap() >= 0.0);
        }
    }
}
