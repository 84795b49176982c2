//! Surrogate MRF signal model.
//!
//! `s_k = exp(i*phase) * (1 - exp(-k*TR/T1)) * exp(-k*TE/T2)` for `k = 1..=L`: a
//! saturation-recovery envelope modulated by transverse decay. It is smooth and
//! injective in `(T1, T2)`, which is all the regression task needs.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalModel {
    pub tr_ms: f64,
    pub te_ms: f64,
}

impl Default for SignalModel {
    fn default() -> Self {
        Self {
            tr_ms: 10.0,
            te_ms: 2.0,
        }
    }
}

impl SignalModel {
    pub fn simulate(
        &self,
        t1_ms: f64,
        t2_ms: f64,
        phase: f64,
        len: usize,
    ) -> Result<Vec<Complex64>> {
        if !(t1_ms > 0.0 && t2_ms > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "relaxation times must be positive (t1={t1_ms}, t2={t2_ms})"
            )));
        }
        let rot = Complex64::from_polar(1.0, phase);
        Ok((1..=len)
            .map(|k| {
                let k = k as f64;
                let recovery = 1.0 - (-k * self.tr_ms / t1_ms).exp();
                let decay = (-k * self.te_ms / t2_ms).exp();
                rot * (recovery * decay)
            })
            .collect())
    }
}

/// [`SignalModel::simulate`] with the default TR = 10 ms, TE = 2 ms.
pub fn signal_model(t1_ms: f64, t2_ms: f64, phase: f64, len: usize) -> Result<Vec<Complex64>> {
    SignalModel::default().simulate(t1_ms, t2_ms, phase, len)
}

pub fn rms(signal: &[Complex64]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    (signal.iter().map(|c| c.norm_sqr()).sum::<f64>() / signal.len() as f64).sqrt()
}

/// Add circular complex Gaussian noise.
///
/// SNR is an amplitude ratio: the complex noise has RMS magnitude `rms(signal) / snr`,
/// i.e. each of the real and imaginary components has standard deviation
/// `rms(signal) / (snr * sqrt(2))`. An infinite SNR leaves the signal untouched.
pub fn add_noise<R: Rng + ?Sized>(signal: &[Complex64], snr: f64, rng: &mut R) -> Vec<Complex64> {
    let sigma = rms(signal) / snr / std::f64::consts::SQRT_2;
    signal
        .iter()
        .map(|&s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(re * sigma, im * sigma)
        })
        .collect()
}

/// Real parts followed by imaginary parts.
pub fn to_real_imag(signal: &[Complex64]) -> Vec<f64> {
    signal
        .iter()
        .map(|c| c.re)
        .chain(signal.iter().map(|c| c.im))
        .collect()
}
