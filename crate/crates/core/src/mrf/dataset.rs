//! Surrogate dataset generation and the `.qmrf` container.
//!
//! File layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "QMRF"
//! 4       4     u32 format version (1)
//! 8       8     u64 record count n
//! 16      4     u32 signal length L (complex samples)
//! 20      64    f64 pairs: t1 [min, max], t2 [min, max], snr [min, max], phase [min, max]
//! 84      8     u64 seed
//! 92      ...   n records of (2L + 2) f32: re[0..L], im[0..L], t1_ms, t2_ms
//! ```
//!
//! Records are fixed size, so record `i` lives at `92 + i * (2L + 2) * 4`.

use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::signal::{add_noise, to_real_imag, SignalModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QMRF";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 92;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    /// Real parts then imaginary parts, `2 * L` values.
    pub signal: Vec<f64>,
    pub t1_ms: f64,
    pub t2_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_samples: u64,
    pub t1_range: [f64; 2],
    pub t2_range: [f64; 2],
    pub snr_range: [f64; 2],
    pub phase_range: [f64; 2],
    pub signal_len: u32,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_samples: 50_000,
            t1_range: [100.0, 4000.0],
            t2_range: [10.0, 2000.0],
            snr_range: [20.0, 100.0],
            phase_range: [0.0, TAU],
            signal_len: 100,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::InvalidDatasetSpec(format!(
            "{name} range [{}, {}] is empty or non-finite",
            r[0], r[1]
        )));
    }
    Ok(())
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        check_range("t1", self.t1_range)?;
        check_range("t2", self.t2_range)?;
        check_range("snr", self.snr_range)?;
        check_range("phase", self.phase_range)?;
        if self.signal_len == 0 {
            return Err(Error::InvalidDatasetSpec(
                "signal length must be >= 1".into(),
            ));
        }
        if self.t1_range[0] <= 0.0 || self.t2_range[0] <= 0.0 || self.snr_range[0] <= 0.0 {
            return Err(Error::InvalidDatasetSpec(
                "t1, t2 and snr ranges must be strictly positive".into(),
            ));
        }
        if self.t2_range[0] > self.t1_range[1] {
            return Err(Error::InvalidDatasetSpec(format!(
                "t2 min {} exceeds t1 max {}: t2 <= t1 is unsatisfiable",
                self.t2_range[0], self.t1_range[1]
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.signal_len as usize
    }

    fn record_floats(&self) -> usize {
        self.input_dim() + 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<TrainSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t1_ms, s.t2_ms)).collect()
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

/// Sample `index` of the dataset described by `spec`. Depends only on
/// `(spec, index)`: each index draws from its own ChaCha stream.
pub fn generate_sample(spec: &DatasetSpec, index: u64) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let (t1, t2) = loop {
        let t1 = uniform(&mut rng, spec.t1_range);
        let t2 = uniform(&mut rng, spec.t2_range);
        // stored as f32, so compare at that precision
        if f32_round(t2) <= f32_round(t1) {
            break (f32_round(t1), f32_round(t2));
        }
    };
    let snr = uniform(&mut rng, spec.snr_range);
    let phase = uniform(&mut rng, spec.phase_range);
    let clean = SignalModel::default()
        .simulate(t1, t2, phase, spec.signal_len as usize)
        .expect("validated ranges are positive");
    let noisy = add_noise(&clean, snr, &mut rng);
    TrainSample {
        signal: to_real_imag(&noisy).into_iter().map(f32_round).collect(),
        t1_ms: t1,
        t2_ms: t2,
    }
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| generate_sample(spec, i))
        .collect();
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

fn write_header<W: Write>(w: &mut W, spec: &DatasetSpec, n: u64) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&spec.signal_len.to_le_bytes())?;
    for r in [
        spec.t1_range,
        spec.t2_range,
        spec.snr_range,
        spec.phase_range,
    ] {
        w.write_all(&r[0].to_le_bytes())?;
        w.write_all(&r[1].to_le_bytes())?;
    }
    w.write_all(&spec.seed.to_le_bytes())?;
    Ok(())
}

/// Write `dataset` to `path` atomically: the data goes to a sibling temporary
/// file that is renamed into place only after a successful flush.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let dim = dataset.spec.input_dim();
    if let Some(bad) = dataset.samples.iter().position(|s| s.signal.len() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "sample {bad} has {} signal values, expected {dim}",
            dataset.samples[bad].signal.len()
        )));
    }
    let tmp = temp_path(path);
    let result = (|| -> Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_header(&mut w, &dataset.spec, dataset.samples.len() as u64)?;
        for s in &dataset.samples {
            for &v in s.signal.iter().chain([&s.t1_ms, &s.t2_ms]) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Random-access reader over a `.qmrf` file.
pub struct DatasetReader {
    reader: BufReader<File>,
    spec: DatasetSpec,
    len: u64,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "{}: not a QMRF dataset",
                path.display()
            )));
        }
        let version = read_u32(&mut reader)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let len = read_u64(&mut reader)?;
        let signal_len = read_u32(&mut reader)?;
        let mut ranges = [[0.0; 2]; 4];
        for r in &mut ranges {
            *r = [read_f64(&mut reader)?, read_f64(&mut reader)?];
        }
        let seed = read_u64(&mut reader)?;
        let spec = DatasetSpec {
            n_samples: len,
            t1_range: ranges[0],
            t2_range: ranges[1],
            snr_range: ranges[2],
            phase_range: ranges[3],
            signal_len,
            seed,
        };
        let expected = HEADER_LEN + len * spec.record_floats() as u64 * 4;
        let actual = reader.get_ref().metadata()?.len();
        if actual != expected {
            return Err(Error::Format(format!(
                "{}: expected {expected} bytes for {len} records, found {actual}",
                path.display()
            )));
        }
        Ok(Self { reader, spec, len })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn record(&mut self, index: u64) -> Result<TrainSample> {
        if index >= self.len {
            return Err(Error::Format(format!(
                "record {index} out of bounds ({} records)",
                self.len
            )));
        }
        let rec_bytes = self.spec.record_floats() as u64 * 4;
        self.reader
            .seek(SeekFrom::Start(HEADER_LEN + index * rec_bytes))?;
        self.next_record()
    }

    fn next_record(&mut self) -> Result<TrainSample> {
        let mut buf = vec![0u8; self.spec.record_floats() * 4];
        self.reader.read_exact(&mut buf)?;
        let mut vals: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t2_ms = vals.pop().expect("record has targets");
        let t1_ms = vals.pop().expect("record has targets");
        Ok(TrainSample {
            signal: vals,
            t1_ms,
            t2_ms,
        })
    }

    pub fn read_all(mut self) -> Result<Dataset> {
        self.reader.seek(SeekFrom::Start(HEADER_LEN))?;
        let samples = (0..self.len)
            .map(|_| self.next_record())
            .collect::<Result<_>>()?;
        Ok(Dataset {
            spec: self.spec,
            samples,
        })
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    DatasetReader::open(path)?.read_all()
}
