//! Model container.
//!
//! ```text
//! "MRFN"            4-byte magic
//! u32 LE            header length in bytes
//! header            UTF-8 JSON (`ModelHeader`)
//! payload           per layer, in order: weights (row-major, output-index major)
//!                   then biases, little-endian
//! ```
//!
//! Float models store `f64` arrays. Integer models store weights and biases at
//! their declared widths (`i8` / `i16` / `i32`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    forward_quantized, network_forward, ForwardMode, IntegerLayer, IntegerModel, LayerParams,
    LayerSpec, NetworkConfig, NodeRequant, QuantScheme,
};
use crate::quant::{FixedMultiplier, QTensor, QuantParams};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MRFN";
pub const FORMAT_VERSION: u32 = 1;

/// Maps normalized network outputs back to milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub t1_max_ms: f64,
    pub t2_max_ms: f64,
}

impl Default for TargetScale {
    fn default() -> Self {
        Self {
            t1_max_ms: 4000.0,
            t2_max_ms: 2000.0,
        }
    }
}

impl From<&TrainConfig> for TargetScale {
    fn from(t: &TrainConfig) -> Self {
        Self {
            t1_max_ms: t.t1_max_ms,
            t2_max_ms: t.t2_max_ms,
        }
    }
}

impl TargetScale {
    pub fn denormalize(&self, y: &[f64]) -> Result<(f64, f64)> {
        match y {
            [t1, t2] => Ok((t1 * self.t1_max_ms, t2 * self.t2_max_ms)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected 2 outputs (T1, T2), got {}",
                y.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloatModel {
    pub config: NetworkConfig,
    pub params: Vec<LayerParams>,
    pub targets: TargetScale,
    /// Activation grids reached during QAT, if the model was trained that way.
    pub qat_scheme: Option<QuantScheme>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegerArtifact {
    pub model: IntegerModel,
    pub targets: TargetScale,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Float(FloatModel),
    Integer(IntegerArtifact),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Float,
    Integer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IntegerLayerHeader {
    weights: QuantParams,
    biases: QuantParams,
    multiplier: FixedMultiplier,
    output: QuantParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    kind: Kind,
    input_dim: usize,
    layers: Vec<LayerSpec>,
    targets: TargetScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantization: Option<QuantScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accumulator_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    integer_layers: Option<Vec<IntegerLayerHeader>>,
}

impl ModelFile {
    pub fn config(&self) -> &NetworkConfig {
        match self {
            ModelFile::Float(m) => &m.config,
            ModelFile::Integer(m) => &m.model.config,
        }
    }

    pub fn targets(&self) -> &TargetScale {
        match self {
            ModelFile::Float(m) => &m.targets,
            ModelFile::Integer(m) => &m.targets,
        }
    }

    /// `(T1, T2)` in milliseconds. Float models run in real arithmetic, integer
    /// models on the integer datapath.
    pub fn predict_ms(&self, signal: &[f64]) -> Result<(f64, f64)> {
        let y = match self {
            ModelFile::Float(m) => {
                network_forward(&m.config, &m.params, signal, ForwardMode::Real)?
                    .output()
                    .to_vec()
            }
            ModelFile::Integer(m) => forward_quantized(&m.model, signal)?.output().to_vec(),
        };
        self.targets().denormalize(&y)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = self.config();
        let mut header = ModelHeader {
            format_version: FORMAT_VERSION,
            kind: Kind::Float,
            input_dim: cfg.input_dim,
            layers: cfg.layers.clone(),
            targets: *self.targets(),
            quantization: None,
            accumulator_bits: None,
            integer_layers: None,
        };
        let mut payload = Vec::new();
        match self {
            ModelFile::Float(m) => {
                header.quantization = m.qat_scheme.clone();
                for p in &m.params {
                    for v in p.weights.iter().chain(&p.biases) {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            ModelFile::Integer(m) => {
                header.kind = Kind::Integer;
                header.quantization = Some(m.model.scheme());
                header.accumulator_bits = Some(m.model.accumulator_bits);
                header.integer_layers = Some(
                    m.model
                        .layers
                        .iter()
                        .map(|l| IntegerLayerHeader {
                            weights: *l.weights.qparams(),
                            biases: *l.biases.qparams(),
                            multiplier: l.requant.multiplier,
                            output: l.requant.output,
                        })
                        .collect(),
                );
                for l in &m.model.layers {
                    push_ints(&mut payload, &l.weights);
                    push_ints(&mut payload, &l.biases);
                }
            }
        }
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an MRFN model file".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: ModelHeader = serde_json::from_slice(json)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                header.format_version
            )));
        }
        let config = NetworkConfig {
            input_dim: header.input_dim,
            layers: header.layers.clone(),
        };
        config.validate()?;
        let mut cur = Cursor {
            buf: &bytes[8 + hlen..],
        };
        let model = match header.kind {
            Kind::Float => {
                let params = config
                    .layers
                    .iter()
                    .map(|s| {
                        Ok(LayerParams {
                            n_inputs: s.n_inputs,
                            n_outputs: s.n_outputs,
                            weights: cur.f64s(s.n_inputs * s.n_outputs)?,
                            biases: cur.f64s(s.n_outputs)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                ModelFile::Float(FloatModel {
                    config,
                    params,
                    targets: header.targets,
                    qat_scheme: header.quantization,
                })
            }
            Kind::Integer => {
                let (scheme, lhs) =
                    header
                        .quantization
                        .zip(header.integer_layers)
                        .ok_or_else(|| {
                            Error::Format("integer model without quantization header".into())
                        })?;
                if lhs.len() != config.layers.len() {
                    return Err(Error::Format("integer layer count mismatch".into()));
                }
                let layers = config
                    .layers
                    .iter()
                    .zip(lhs)
                    .map(|(s, h)| {
                        let weights = QTensor::new(
                            vec![s.n_outputs, s.n_inputs],
                            cur.ints(s.n_inputs * s.n_outputs, h.weights.bits)?,
                            h.weights,
                        )?;
                        let biases =
                            QTensor::from_vec(cur.ints(s.n_outputs, h.biases.bits)?, h.biases)?;
                        Ok(IntegerLayer {
                            activation: s.activation,
                            weights,
                            biases,
                            requant: NodeRequant {
                                multiplier: h.multiplier,
                                output: h.output,
                            },
                        })
                    })
                    .collect::<Result<_>>()?;
                ModelFile::Integer(IntegerArtifact {
                    model: IntegerModel {
                        config,
                        input: scheme.input,
                        accumulator_bits: header
                            .accumulator_bits
                            .unwrap_or(QuantScheme::ACCUMULATOR_BITS),
                        layers,
                    },
                    targets: header.targets,
                })
            }
        };
        if !cur.buf.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing payload bytes",
                cur.buf.len()
            )));
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn push_ints(out: &mut Vec<u8>, t: &QTensor) {
    for &v in t.values() {
        match t.qparams().bits {
            8 => out.extend_from_slice(&(v as i8).to_le_bytes()),
            16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            _ => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated payload".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn ints(&mut self, n: usize, bits: u32) -> Result<Vec<i32>> {
        let width = (bits / 8) as usize;
        let raw = self.take(n * width)?;
        Ok(match bits {
            8 => raw.iter().map(|&b| b as i8 as i32).collect(),
            16 => raw
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
                .collect(),
            32 => raw
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            _ => return Err(Error::Format(format!("unsupported integer width {bits}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;
    use crate::train::export_integer_model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn float_model(seed: u64, widths: &[usize]) -> FloatModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = NetworkConfig::from_widths(6, widths).unwrap();
        let mut params = init_params(&config, &mut rng);
        params[0]
            .biases
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-1.0..1.0));
        FloatModel {
            config,
            params,
            targets: TargetScale::default(),
            qat_scheme: None,
        }
    }

    #[test]
    fn float_layout_is_header_plus_f64_arrays() {
        let m = ModelFile::Float(float_model(1, &[3, 2]));
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"MRFN");
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
        assert_eq!(header["format_version"], 1);
        assert_eq!(header["kind"], "float");
        assert_eq!(header["layers"][1]["activation"], "linear");
        assert_eq!(bytes.len(), 8 + hlen + (6 * 3 + 3 + 3 * 2 + 2) * 8);
        let ModelFile::Float(fm) = &m else {
            unreachable!()
        };
        let first = f64::from_le_bytes(bytes[8 + hlen..16 + hlen].try_into().unwrap());
        assert_eq!(first, fm.params[0].weights[0]);
    }

    #[test]
    fn integer_layout_uses_declared_widths() {
        let fm = float_model(2, &[4, 2]);
        let calib = vec![vec![0.5, -0.25, 1.0, 0.0, -1.0, 0.75]];
        let model = export_integer_model(&fm.config, &fm.params, &calib).unwrap();
        let m = ModelFile::Integer(IntegerArtifact {
            model,
            targets: TargetScale::default(),
        });
        let bytes = m.to_bytes().unwrap();
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        // 8-bit weights, 32-bit biases
        assert_eq!(bytes.len(), 8 + hlen + (24 + 8) + (4 * 4 + 2 * 4));
        assert_eq!(ModelFile::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_malformed() {
        assert!(ModelFile::from_bytes(b"XXXX").is_err());
        let mut bytes = ModelFile::Float(float_model(3, &[2])).to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(
            ModelFile::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
        let mut bytes = ModelFile::Float(float_model(3, &[2])).to_bytes().unwrap();
        bytes.push(0);
        assert!(ModelFile::from_bytes(&bytes).is_err());
    }

    #[test]
    fn predictions_are_denormalized() {
        let cfg = NetworkConfig::from_widths(2, &[2]).unwrap();
        let p = LayerParams {
            n_inputs: 2,
            n_outputs: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            biases: vec![0.0, 0.0],
        };
        let m = ModelFile::Float(FloatModel {
            config: cfg,
            params: vec![p],
            targets: TargetScale::default(),
            qat_scheme: None,
        });
        assert_eq!(m.predict_ms(&[0.25, 0.5]).unwrap(), (1000.0, 1000.0));
    }

    proptest! {
        #[test]
        fn float_round_trip(seed in 0u64..1000, w0 in 1usize..8, w1 in 1usize..8) {
            let m = ModelFile::Float(float_model(seed, &[w0, w1, 2]));
            prop_assert_eq!(ModelFile::from_bytes(&m.to_bytes().unwrap()).unwrap(), m);
        }
    }
}
