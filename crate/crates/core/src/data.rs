//! Time-series containers, loaders, and preprocessing.
//!
//! A sample is a dense `C x T` matrix of `f64` plus a contiguous 0-based
//! class id. Loaders remap raw labels in first-seen order and keep the
//! original strings around for reporting.

use crate::error::CoreError;
use crate::rng::{self, streams};
use crate::Result;
use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Unspecified,
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    /// Channel-major values, shape `(channels, len)`.
    pub values: Array2<f64>,
    /// Contiguous 0-based class id.
    pub label: usize,
}

impl TimeSeries {
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<TimeSeries>,
    pub num_classes: usize,
    pub split: Split,
    /// Original label strings indexed by class id (first-seen order).
    pub label_map: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn channels(&self) -> usize {
        self.samples.first().map(|s| s.channels()).unwrap_or(0)
    }

    /// Common length of all samples; loaders only build uniform datasets.
    pub fn len_t(&self) -> usize {
        self.samples.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Assign contiguous ids in first-seen order.
struct LabelInterner {
    map: Vec<String>,
}

impl LabelInterner {
    fn new() -> Self {
        LabelInterner { map: Vec::new() }
    }

    fn intern(&mut self, raw: &str) -> usize {
        if let Some(pos) = self.map.iter().position(|s| s == raw) {
            pos
        } else {
            self.map.push(raw.to_string());
            self.map.len() - 1
        }
    }
}

fn check_uniform(samples: &[TimeSeries]) -> Result<()> {
    if let Some(first) = samples.first() {
        let (c, t) = (first.channels(), first.len());
        for (i, s) in samples.iter().enumerate() {
            if s.channels() != c || s.len() != t {
                return Err(CoreError::Shape(format!(
                    "sample {} has shape {}x{}, expected {}x{}",
                    i,
                    s.channels(),
                    s.len(),
                    c,
                    t
                )));
            }
        }
    }
    Ok(())
}

/// Load a univariate dataset: one series per line, `label v1 v2 ... vT`
/// separated by whitespace (tabs in the common case).
pub fn load_ucr_tsv(path: &Path) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut interner = LabelInterner::new();
    let mut samples = Vec::new();
    let mut expected_t: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let raw_label = tokens.next().expect("non-empty line has a first token");
        let values: Vec<f64> = tokens
            .enumerate()
            .map(|(col, tok)| {
                tok.parse::<f64>().map_err(|_| CoreError::Parse {
                    line: lineno,
                    msg: format!("bad value {tok:?} in column {}", col + 2),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() < 2 {
            return Err(CoreError::Shape(format!(
                "line {lineno}: series has {} points, need at least 2",
                values.len()
            )));
        }
        match expected_t {
            None => expected_t = Some(values.len()),
            Some(t) if t != values.len() => {
                return Err(CoreError::Shape(format!(
                    "line {lineno}: ragged row of length {} (first row had {})",
                    values.len(),
                    t
                )));
            }
            _ => {}
        }
        let label = interner.intern(raw_label);
        let t = values.len();
        samples.push(TimeSeries {
            values: Array2::from_shape_vec((1, t), values).expect("len checked"),
            label,
        });
    }
    if samples.is_empty() {
        return Err(CoreError::Arg(format!(
            "{}: dataset is empty",
            path.display()
        )));
    }
    Ok(Dataset {
        num_classes: interner.map.len(),
        samples,
        split: Split::Unspecified,
        label_map: interner.map,
    })
}

/// Load a multichannel dataset from comma-separated lines
/// `label,v_111,...`: after the label each line carries `C*T` values in
/// channel-major order (all of channel 0, then channel 1, ...).
pub fn load_multichannel_csv(path: &Path, channels: usize) -> Result<Dataset> {
    if channels == 0 {
        return Err(CoreError::Arg("channels must be >= 1".into()));
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut interner = LabelInterner::new();
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split(',').map(str::trim);
        let raw_label = tokens.next().expect("non-empty line has a first token");
        let values: Vec<f64> = tokens
            .enumerate()
            .map(|(col, tok)| {
                tok.parse::<f64>().map_err(|_| CoreError::Parse {
                    line: lineno,
                    msg: format!("bad value {tok:?} in column {}", col + 2),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() % channels != 0 {
            return Err(CoreError::Shape(format!(
                "line {lineno}: {} values do not divide into {} channels",
                values.len(),
                channels
            )));
        }
        let t = values.len() / channels;
        if t < 2 {
            return Err(CoreError::Shape(format!(
                "line {lineno}: series has {t} points per channel, need at least 2"
            )));
        }
        let label = interner.intern(raw_label);
        samples.push(TimeSeries {
            values: Array2::from_shape_vec((channels, t), values).expect("len checked"),
            label,
        });
    }
    if samples.is_empty() {
        return Err(CoreError::Arg(format!(
            "{}: dataset is empty",
            path.display()
        )));
    }
    check_uniform(&samples)?;
    Ok(Dataset {
        num_classes: interner.map.len(),
        samples,
        split: Split::Unspecified,
        label_map: interner.map,
    })
}

/// Write a univariate dataset in the tab-separated format `load_ucr_tsv` reads.
pub fn write_ucr_tsv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in &ds.samples {
        if s.channels() != 1 {
            return Err(CoreError::Arg(
                "write_ucr_tsv requires univariate samples; use write_multichannel_csv".into(),
            ));
        }
        out.push_str(&ds.label_map[s.label]);
        for v in s.values.row(0) {
            out.push('\t');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Write a multichannel dataset in the comma-separated channel-major format.
pub fn write_multichannel_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in &ds.samples {
        out.push_str(&ds.label_map[s.label]);
        for v in s.values.iter() {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Two-class synthetic set: class 0 is one period of a sine over the window,
/// class 1 is two periods, both with iid `N(0, sigma^2)` noise.
pub fn synth_two_class(n: usize, t: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || n % 2 != 0 {
        return Err(CoreError::Arg(format!("n must be even and >= 2, got {n}")));
    }
    if t < 8 {
        return Err(CoreError::Arg(format!("t must be >= 8, got {t}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(CoreError::Arg(format!(
            "noise_sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let mut rng = rng::stream(seed, streams::SYNTH);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < n / 2 { 0 } else { 1 };
        let freq = if label == 0 { 1.0 } else { 2.0 };
        let mut values = Array2::zeros((1, t));
        for j in 0..t {
            let phase = 2.0 * std::f64::consts::PI * freq * j as f64 / t as f64;
            let noise = if noise_sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            values[[0, j]] = phase.sin() + noise;
        }
        samples.push(TimeSeries { values, label });
    }
    Ok(Dataset {
        samples,
        num_classes: 2,
        split: Split::Unspecified,
        label_map: vec!["0".into(), "1".into()],
    })
}

/// Per-sample, per-channel z-normalization with population standard deviation.
/// Channels with (numerically) zero variance map to all zeros.
pub fn znormalize(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for (si, s) in out.samples.iter_mut().enumerate() {
        let t = s.len() as f64;
        for mut row in s.values.rows_mut() {
            let mean = row.sum() / t;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
            let std = var.sqrt();
            if std <= 1e-12 * mean.abs().max(1.0) {
                log::warn!("z-normalize: zero-variance channel in sample {si}, mapped to zeros");
                row.fill(0.0);
            } else {
                row.mapv_inplace(|v| (v - mean) / std);
            }
        }
    }
    out
}
