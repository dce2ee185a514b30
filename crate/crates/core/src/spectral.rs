//! STFT analysis, overlap-add resynthesis and soft masking.

use std::f64::consts::PI;

use ndarray::{s, Array2, Zip};
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};
use crate::nmf_core::{Activations, Dictionary};

/// Floor applied to mask denominators.
pub const MASK_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    Hamming,
    Rectangular,
}

impl WindowKind {
    /// Periodic (DFT-even) window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n as f64;
                match self {
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_length: usize,
    pub overlap_fraction: f64,
    pub window_kind: WindowKind,
    pub fft_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 2048,
            overlap_fraction: 0.75,
            window_kind: WindowKind::Hann,
            fft_length: 2048,
        }
    }
}

impl StftConfig {
    pub fn hop(&self) -> Result<usize> {
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap fraction {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        let hop = self.window_length as f64 * (1.0 - self.overlap_fraction);
        if hop < 1.0 || (hop - hop.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "hop {hop} is not a positive integer"
            )));
        }
        Ok(hop.round() as usize)
    }

    pub fn bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    pub fn window(&self) -> Vec<f64> {
        self.window_kind.coefficients(self.window_length)
    }

    /// Largest relative deviation of the squared-window overlap-add sum from
    /// its mean over one hop period.
    pub fn cola_deviation(&self) -> Result<f64> {
        let hop = self.hop()?;
        let w = self.window();
        let envelope: Vec<f64> = (0..hop)
            .map(|n| w.iter().skip(n).step_by(hop).map(|x| x * x).sum())
            .collect();
        let mean = envelope.iter().sum::<f64>() / hop as f64;
        Ok(envelope
            .iter()
            .map(|e| ((e - mean) / mean).abs())
            .fold(0.0, f64::max))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if self.fft_length < self.window_length {
            return Err(Error::Config(format!(
                "fft length {} shorter than window {}",
                self.fft_length, self.window_length
            )));
        }
        let dev = self.cola_deviation()?;
        if dev > 1e-6 {
            return Err(Error::Config(format!(
                "window/hop combination violates constant overlap-add (deviation {dev:.3e})"
            )));
        }
        Ok(())
    }

    /// Number of complete frames that fit in `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        let hop = self.hop()?;
        if len < self.window_length {
            return Ok(0);
        }
        Ok((len - self.window_length) / hop + 1)
    }

    /// Samples covered by `frames` frames.
    pub fn covered_len(&self, frames: usize) -> Result<usize> {
        if frames == 0 {
            return Ok(0);
        }
        Ok((frames - 1) * self.hop()? + self.window_length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// F x T magnitudes.
    pub magnitude: Array2<f64>,
    /// F x T phases in radians.
    pub phase: Array2<f64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitude.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitude.ncols()
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.config.fft_length as f64
    }

    pub fn with_magnitude(&self, magnitude: Array2<f64>) -> Result<Self> {
        if magnitude.dim() != self.magnitude.dim() {
            return Err(Error::ShapeMismatch(format!(
                "magnitude {:?} vs phase {:?}",
                magnitude.dim(),
                self.phase.dim()
            )));
        }
        Ok(Self {
            magnitude,
            phase: self.phase.clone(),
            config: self.config,
            sample_rate: self.sample_rate,
        })
    }
}

/// Soft time-frequency mask with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Array2<f64>,
}

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
            return Err(Error::InvalidArgument("mask entries must lie in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn ones(bins: usize, frames: usize) -> Self {
        Self {
            values: Array2::ones((bins, frames)),
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            values: self.values.mapv(|v| 1.0 - v),
        }
    }
}

/// Masks keyed by dictionary block, in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    entries: Vec<(String, Mask)>,
}

impl MaskSet {
    pub fn get(&self, name: &str) -> Option<&Mask> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mask)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Entrywise sum of all masks.
    pub fn total(&self) -> Option<Array2<f64>> {
        let mut it = self.entries.iter();
        let mut acc = it.next()?.1.values.clone();
        for (_, m) in it {
            acc += &m.values;
        }
        Some(acc)
    }
}

pub fn stft(buf: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if buf.len() < cfg.window_length {
        return Err(Error::TooShort(format!(
            "{} samples, one window needs {}",
            buf.len(),
            cfg.window_length
        )));
    }
    let hop = cfg.hop()?;
    let frames = cfg.frame_count(buf.len())?;
    let bins = cfg.bins();
    let window = cfg.window();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_length);
    let mut input = fft.make_input_vec();
    let mut output = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut magnitude = Array2::zeros((bins, frames));
    let mut phase = Array2::zeros((bins, frames));
    for t in 0..frames {
        let frame = &buf.samples[t * hop..t * hop + cfg.window_length];
        input.iter_mut().for_each(|v| *v = 0.0);
        for ((dst, x), w) in input.iter_mut().zip(frame).zip(&window) {
            *dst = x * w;
        }
        fft.process_with_scratch(&mut input, &mut output, &mut scratch)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        for (f, c) in output.iter().enumerate() {
            magnitude[[f, t]] = c.norm();
            phase[[f, t]] = c.arg();
        }
    }
    Ok(Spectrogram {
        magnitude,
        phase,
        config: *cfg,
        sample_rate: buf.sample_rate,
    })
}

/// Smallest overlap-added squared window used as a divisor in [`istft`],
/// relative to its peak.
pub const ENVELOPE_FLOOR: f64 = 0.1;

/// Weighted overlap-add resynthesis.
///
/// Each inverse frame is multiplied by the synthesis window and the sum is
/// divided by the overlap-added squared window, which equals the COLA
/// constant away from the signal ends. Near the ends the divisor is held at
/// [`ENVELOPE_FLOOR`] of its peak so that masked spectra, which are not
/// consistent STFTs, are tapered there instead of amplified. Output length
/// is `(T - 1) * hop + window_length`.
pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer> {
    let cfg = &spec.config;
    cfg.validate()?;
    if spec.magnitude.dim() != spec.phase.dim() || spec.bins() != cfg.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram {:?} / phase {:?} inconsistent with {} bins",
            spec.magnitude.dim(),
            spec.phase.dim(),
            cfg.bins()
        )));
    }
    let hop = cfg.hop()?;
    let frames = spec.frames();
    let len = cfg.covered_len(frames)?;
    let window = cfg.window();

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_length);
    let mut input = ifft.make_input_vec();
    let mut output = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let norm = 1.0 / cfg.fft_length as f64;

    let mut out = vec![0.0; len];
    let mut envelope = vec![0.0; len];
    let last = input.len() - 1;
    for t in 0..frames {
        for (f, c) in input.iter_mut().enumerate() {
            *c = Complex::from_polar(spec.magnitude[[f, t]], spec.phase[[f, t]]);
        }
        input[0].im = 0.0;
        if cfg.fft_length % 2 == 0 {
            input[last].im = 0.0;
        }
        ifft.process_with_scratch(&mut input, &mut output, &mut scratch)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let base = t * hop;
        for (i, w) in window.iter().enumerate() {
            out[base + i] += output[i] * norm * w;
            envelope[base + i] += w * w;
        }
    }
    let floor = ENVELOPE_FLOOR * envelope.iter().cloned().fold(0.0, f64::max);
    for (x, e) in out.iter_mut().zip(&envelope) {
        *x /= e.max(floor);
    }
    AudioBuffer::new(out, spec.sample_rate)
}

pub fn apply_mask(spec: &Spectrogram, mask: &Mask) -> Result<Spectrogram> {
    if spec.magnitude.dim() != mask.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram {:?} vs mask {:?}",
            spec.magnitude.dim(),
            mask.values.dim()
        )));
    }
    spec.with_magnitude(&spec.magnitude * &mask.values)
}

/// Per-block Wiener-style soft masks `W_b H_b / W H`.
///
/// Numerator and denominator carry the floor so that the masks form an exact
/// partition of unity even where the model vanishes.
pub fn build_masks(dict: &Dictionary, act: &Activations) -> Result<MaskSet> {
    if dict.blocks() != act.blocks() {
        return Err(Error::ShapeMismatch(format!(
            "dictionary blocks {:?} vs activation blocks {:?}",
            dict.blocks(),
            act.blocks()
        )));
    }
    if dict.matrix().ncols() != act.matrix().nrows() {
        return Err(Error::ShapeMismatch("inner dimensions differ".into()));
    }
    let shape = (dict.matrix().nrows(), act.matrix().ncols());
    let partials: Vec<(String, Array2<f64>)> = dict
        .blocks()
        .iter()
        .map(|b| {
            let part = if b.size == 0 {
                Array2::zeros(shape)
            } else {
                dict.block(&b.name).unwrap().dot(&act.block(&b.name).unwrap())
            };
            (b.name.clone(), part)
        })
        .collect();
    let mut total = Array2::<f64>::zeros(shape);
    for (_, p) in &partials {
        total += p;
    }
    let share = MASK_FLOOR / partials.len().max(1) as f64;
    let entries = partials
        .into_iter()
        .map(|(name, mut part)| {
            Zip::from(&mut part).and(&total).for_each(|p, &t| {
                *p = ((*p + share) / (t + MASK_FLOOR)).clamp(0.0, 1.0);
            });
            (name, Mask { values: part })
        })
        .collect();
    Ok(MaskSet { entries })
}

/// Samples of the analysed region: the part of the input covered by whole frames.
pub fn analysed_region(buf: &AudioBuffer, cfg: &StftConfig) -> Result<AudioBuffer> {
    let len = cfg.covered_len(cfg.frame_count(buf.len())?)?;
    AudioBuffer::new(buf.samples[..len].to_vec(), buf.sample_rate)
}

/// Range of samples where every overlapping frame contributes.
pub fn interior(len: usize, cfg: &StftConfig) -> Result<std::ops::Range<usize>> {
    let edge = cfg.window_length - cfg.hop()?;
    Ok(edge.min(len)..len.saturating_sub(edge).max(edge.min(len)))
}

/// Slice helper used by exporters: the magnitude of one frame.
pub fn frame_magnitude(spec: &Spectrogram, t: usize) -> Vec<f64> {
    spec.magnitude.slice(s![.., t]).to_vec()
}
