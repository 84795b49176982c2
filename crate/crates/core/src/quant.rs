//! Symmetric integer quantization.
//!
//! Real values map to signed integers through `q = clamp(round(x / scale) + zero_point)`.
//! Rounding is half-away-from-zero everywhere (the behaviour of [`f64::round`] and of
//! [`FixedMultiplier::apply`]), so the float reference and the integer datapath agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported integer widths.
pub const SUPPORTED_BITS: [u32; 3] = [8, 16, 32];

/// Largest right shift a [`FixedMultiplier`] may carry. `i64` accumulator times a
/// 31-bit mantissa stays below 2^94, so shifting further always yields zero.
pub const MAX_SHIFT: u32 = 93;

const MANTISSA_BITS: u32 = 31;

pub fn qmin(bits: u32) -> i64 {
    -(1i64 << (bits - 1))
}

pub fn qmax(bits: u32) -> i64 {
    (1i64 << (bits - 1)) - 1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u32,
    /// Real units per integer step.
    pub scale: f64,
    #[serde(default)]
    pub zero_point: i32,
}

impl QuantParams {
    /// Symmetric parameters (zero point 0).
    pub fn new(bits: u32, scale: f64) -> Result<Self> {
        Self::with_zero_point(bits, scale, 0)
    }

    pub fn with_zero_point(bits: u32, scale: f64, zero_point: i32) -> Result<Self> {
        let p = Self {
            bits,
            scale,
            zero_point,
        };
        p.validate()?;
        Ok(p)
    }

    /// Calibration rule: `scale = max_abs / qmax`. A zero or non-finite range falls
    /// back to a scale of `1 / qmax` so the parameters stay valid.
    pub fn from_max_abs(max_abs: f64, bits: u32) -> Result<Self> {
        if !SUPPORTED_BITS.contains(&bits) {
            return Err(Error::InvalidQuantParams(format!(
                "unsupported width {bits}"
            )));
        }
        let qmax = qmax(bits) as f64;
        let scale = if max_abs.is_finite() && max_abs > 0.0 {
            max_abs / qmax
        } else {
            1.0 / qmax
        };
        Self::new(bits, scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_BITS.contains(&self.bits) {
            return Err(Error::InvalidQuantParams(format!(
                "unsupported width {}",
                self.bits
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidQuantParams(format!(
                "scale must be positive and finite, got {}",
                self.scale
            )));
        }
        let zp = self.zero_point as i64;
        if zp < self.qmin() || zp > self.qmax() {
            return Err(Error::InvalidQuantParams(format!(
                "zero point {} outside {}-bit range",
                self.zero_point, self.bits
            )));
        }
        Ok(())
    }

    pub fn qmin(&self) -> i64 {
        qmin(self.bits)
    }

    pub fn qmax(&self) -> i64 {
        qmax(self.bits)
    }

    /// Round to the grid without clamping. Caller guarantees `x` is finite.
    fn round_unclamped(&self, x: f64) -> f64 {
        (x / self.scale).round() + self.zero_point as f64
    }

    fn clamp(&self, v: f64) -> i32 {
        v.clamp(self.qmin() as f64, self.qmax() as f64) as i32
    }

    /// Quantize a single finite value.
    pub fn quantize_value(&self, x: f64) -> i32 {
        self.clamp(self.round_unclamped(x))
    }

    pub fn dequantize_value(&self, q: i32) -> f64 {
        (q as i64 - self.zero_point as i64) as f64 * self.scale
    }

    /// Whether `x` lands inside the representable range before clamping.
    pub fn in_range(&self, x: f64) -> bool {
        let v = self.round_unclamped(x);
        v >= self.qmin() as f64 && v <= self.qmax() as f64
    }
}

/// Integer tensor with its quantization parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTensor {
    shape: Vec<usize>,
    values: Vec<i32>,
    qparams: QuantParams,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, values: Vec<i32>, qparams: QuantParams) -> Result<Self> {
        qparams.validate()?;
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        let (lo, hi) = (qparams.qmin(), qparams.qmax());
        if let Some(v) = values.iter().find(|&&v| (v as i64) < lo || (v as i64) > hi) {
            return Err(Error::InvalidQuantParams(format!(
                "value {v} outside {}-bit range",
                qparams.bits
            )));
        }
        Ok(Self {
            shape,
            values,
            qparams,
        })
    }

    /// One-dimensional tensor.
    pub fn from_vec(values: Vec<i32>, qparams: QuantParams) -> Result<Self> {
        Self::new(vec![values.len()], values, qparams)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.values, self.qparams)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn qparams(&self) -> &QuantParams {
        &self.qparams
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<i32> {
        self.values
    }
}

fn check_finite(t: &[f64]) -> Result<()> {
    match t.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: t[index],
        }),
        None => Ok(()),
    }
}

/// Quantize a flat real tensor into a one-dimensional [`QTensor`].
pub fn quantize(t: &[f64], p: &QuantParams) -> Result<QTensor> {
    p.validate()?;
    check_finite(t)?;
    let values = t.iter().map(|&x| p.quantize_value(x)).collect();
    Ok(QTensor {
        shape: vec![t.len()],
        values,
        qparams: *p,
    })
}

pub fn dequantize(q: &QTensor) -> Vec<f64> {
    q.values
        .iter()
        .map(|&v| q.qparams.dequantize_value(v))
        .collect()
}

/// `dequantize(quantize(t, p))`. The matching backward pass is [`ste_mask`].
pub fn fake_quantize(t: &[f64], p: &QuantParams) -> Result<Vec<f64>> {
    Ok(dequantize(&quantize(t, p)?))
}

/// Straight-through estimator mask: 1 where the quantizer acts as identity
/// (inside the clamp range), 0 where it saturates.
pub fn ste_mask(t: &[f64], p: &QuantParams) -> Vec<f64> {
    t.iter()
        .map(|&x| if p.in_range(x) { 1.0 } else { 0.0 })
        .collect()
}

/// Real multiplier `mantissa * 2^-shift` with a 31-bit normalized mantissa.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMultiplier {
    /// In `[2^30, 2^31)`.
    pub mantissa: i32,
    pub shift: u32,
}

impl FixedMultiplier {
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) || !ratio.is_normal() {
            return Err(Error::UnrepresentableScale { ratio });
        }
        // frexp: ratio = frac * 2^exp, frac in [0.5, 1)
        let bits = ratio.to_bits();
        let mut exp = ((bits >> 52) & 0x7ff) as i32 - 1022;
        let frac = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1022u64 << 52));
        let mut mantissa = (frac * (1u64 << MANTISSA_BITS) as f64).round() as i64;
        if mantissa == 1i64 << MANTISSA_BITS {
            mantissa >>= 1;
            exp += 1;
        }
        let shift = MANTISSA_BITS as i32 - exp;
        if shift < 0 || shift > MAX_SHIFT as i32 {
            return Err(Error::UnrepresentableScale { ratio });
        }
        Ok(Self {
            mantissa: mantissa as i32,
            shift: shift as u32,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.mantissa as f64 * 2f64.powi(-(self.shift as i32))
    }

    /// `round(acc * mantissa / 2^shift)`, ties away from zero, unclamped.
    pub fn apply(&self, acc: i64) -> i64 {
        let prod = acc as i128 * self.mantissa as i128;
        let shifted = rounding_shift(prod, self.shift);
        shifted.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

fn rounding_shift(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let half = 1i128 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

/// Apply a precomputed multiplier and clamp into `out`.
pub fn requantize_with(acc: i64, m: &FixedMultiplier, out: &QuantParams) -> i32 {
    let v = m.apply(acc).saturating_add(out.zero_point as i64);
    v.clamp(out.qmin(), out.qmax()) as i32
}

/// Rescale an accumulator at `in_scale` to `out`'s grid with a fixed-point multiplier.
pub fn requantize(acc: i64, in_scale: f64, out: &QuantParams) -> Result<i32> {
    out.validate()?;
    let m = FixedMultiplier::from_ratio(in_scale / out.scale)?;
    Ok(requantize_with(acc, &m, out))
}
