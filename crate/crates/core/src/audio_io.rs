//! Mono audio buffers, WAV input/output and preconditioning.
//!
//! Recordings are reduced to a single channel, scaled to `[-1, 1]`,
//! antialiased and resampled to the working rate, and cut into
//! fixed-length segments before analysis.

use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Rate every downstream module assumes unless configured otherwise.
pub const WORKING_RATE: u32 = 4000;

/// Passband edge of the antialiasing filter as a fraction of the lower rate.
const CUTOFF_FRACTION: f64 = 0.45;
/// Stopband attenuation the Kaiser window is designed for, in dB.
const STOPBAND_DB: f64 = 80.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Length in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a PCM (8/16/24/32-bit integer) or 32-bit float WAV file and
/// averages its channels into a mono buffer.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported | hound::Error::FormatError(_) => {
            Error::UnsupportedEncoding(format!("{}: {e}", path.display()))
        }
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedEncoding("zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {format:?} samples"
            )))
        }
    };

    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono. Samples outside `[-1, 1]` are saturated; the
/// number of saturated samples is returned.
pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<usize> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    let mut clipped = 0;
    for &x in &buf.samples {
        if x.abs() > 1.0 {
            clipped += 1;
        }
        let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(clipped)
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc lowpass evaluated at fractional offsets.
struct SincKernel {
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    /// Half-length in input samples.
    half_width: f64,
    beta: f64,
    i0_beta: f64,
}

impl SincKernel {
    fn design(src_rate: f64, target_rate: f64) -> Self {
        let low = src_rate.min(target_rate);
        let cutoff = CUTOFF_FRACTION * low / src_rate;
        // transition band spans 0.4 .. 0.5 of the lower rate
        let transition = 0.1 * low / src_rate;
        let beta = 0.1102 * (STOPBAND_DB - 8.7);
        let taps = (STOPBAND_DB - 8.0) / (2.285 * 2.0 * PI * transition);
        Self {
            cutoff,
            half_width: (taps / 2.0).ceil(),
            beta,
            i0_beta: bessel_i0(beta),
        }
    }

    fn eval(&self, offset: f64) -> f64 {
        let r = offset / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(self.beta * (1.0 - r * r).sqrt()) / self.i0_beta;
        let arg = 2.0 * self.cutoff * offset;
        let sinc = if arg.abs() < 1e-12 {
            1.0
        } else {
            (PI * arg).sin() / (PI * arg)
        };
        2.0 * self.cutoff * sinc * window
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc interpolator whose
/// passband ends at 0.4 and stopband starts at 0.5 of the lower rate.
///
/// Input samples beyond the buffer ends are treated as zero.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let src = buf.sample_rate as f64;
    let dst = target_rate as f64;
    let kernel = SincKernel::design(src, dst);
    let out_len = (buf.len() as f64 * dst / src).round() as usize;
    let step = src / dst;
    // upsampling keeps unit passband gain; the kernel already integrates to 1
    let x = &buf.samples;
    let hw = kernel.half_width as i64;
    let samples = (0..out_len)
        .map(|n| {
            let pos = n as f64 * step;
            let centre = pos.floor() as i64;
            let lo = (centre - hw).max(0);
            let hi = (centre + hw + 1).min(x.len() as i64 - 1);
            (lo..=hi)
                .map(|k| x[k as usize] * kernel.eval(pos - k as f64))
                .sum()
        })
        .collect();
    AudioBuffer::new(samples, target_rate)
}

/// Copies `round(duration * rate)` samples starting at `round(start * rate)`.
pub fn extract_segment(buf: &AudioBuffer, start: f64, duration: f64) -> Result<AudioBuffer> {
    let rate = buf.sample_rate as f64;
    let out_of_range = || Error::OutOfRange {
        start,
        end: start + duration,
        available: buf.duration(),
    };
    if !(start >= 0.0) || !(duration >= 0.0) {
        return Err(out_of_range());
    }
    let offset = (start * rate).round() as usize;
    let len = (duration * rate).round() as usize;
    if offset + len > buf.len() {
        return Err(out_of_range());
    }
    AudioBuffer::new(buf.samples[offset..offset + len].to_vec(), buf.sample_rate)
}
