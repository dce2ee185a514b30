//! Deterministic synthetic heart, lung and noise signals with exact ground
//! truth.
//!
//! Heart sounds are pairs of exponentially damped tones (S1, S2) repeating at
//! the heart rate; lung sounds are band-limited noise shaped by a single-hump
//! breath envelope; noise comes in white, babble-like, transient-burst and
//! mixed flavours. Everything is a pure function of the spec and its seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioBuffer, WORKING_RATE};
use crate::dsp;
use crate::error::{Error, Result};

/// Heart-rate range the estimators and presets work within (bpm).
pub const HEART_RATE_RANGE: (f64, f64) = (70.0, 220.0);
/// Breathing-rate range of the default preset (breaths per minute).
pub const BREATH_RATE_RANGE: (f64, f64) = (20.0, 60.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartSpec {
    pub rate_bpm: f64,
    pub amplitude: f64,
    /// Delay from S1 onset to S2 onset.
    pub s1_s2_spacing: f64,
    /// Exponential decay time constant of each pulse.
    pub pulse_decay: f64,
    pub s1_freq: f64,
    pub s2_freq: f64,
    /// S2 amplitude relative to S1.
    pub s2_gain: f64,
    /// Time of the first S1 onset.
    pub onset: f64,
}

impl Default for HeartSpec {
    fn default() -> Self {
        Self {
            rate_bpm: 120.0,
            amplitude: 1.0,
            s1_s2_spacing: 0.2,
            pulse_decay: 0.06,
            s1_freq: 90.0,
            s2_freq: 110.0,
            s2_gain: 0.8,
            onset: 0.0,
        }
    }
}

impl HeartSpec {
    /// S1-S2 spacing scaled to the beat period, capped at 0.3 s.
    pub fn spacing_for_rate(rate_bpm: f64) -> f64 {
        (0.4 * 60.0 / rate_bpm).min(0.3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LungSpec {
    /// Breaths per minute.
    pub rate_bpm: f64,
    /// Inspiration duration divided by expiration duration.
    pub ie_ratio: f64,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub amplitude: f64,
    /// 0 gives stationary band noise, 1 full breath modulation.
    pub modulation_depth: f64,
    /// Start of the first inspiration.
    pub onset: f64,
}

impl Default for LungSpec {
    fn default() -> Self {
        Self {
            rate_bpm: 40.0,
            ie_ratio: 1.0 / 1.5,
            center_hz: 350.0,
            bandwidth_hz: 300.0,
            amplitude: 0.3,
            modulation_depth: 1.0,
            onset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Babble,
    Bursts,
    /// Equal-power sum of the other three kinds.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: Option<NoiseKind>,
    /// Power ratio of heart + lung to noise.
    pub snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub heart: HeartSpec,
    pub lung: LungSpec,
    pub noise: NoiseSpec,
    pub duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            heart: HeartSpec::default(),
            lung: LungSpec::default(),
            noise: NoiseSpec {
                kind: Some(NoiseKind::Mixed),
                snr_db: 0.0,
            },
            duration: 10.0,
            sample_rate: WORKING_RATE,
            seed: 0,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = HEART_RATE_RANGE;
        if !(lo..=hi).contains(&self.heart.rate_bpm) {
            return Err(Error::InvalidArgument(format!(
                "heart rate {} bpm outside {lo}-{hi}",
                self.heart.rate_bpm
            )));
        }
        if !(self.lung.rate_bpm > 0.0) {
            return Err(Error::InvalidArgument("breathing rate must be positive".into()));
        }
        if !(self.duration > 0.0) || self.sample_rate == 0 {
            return Err(Error::InvalidArgument("duration and rate must be positive".into()));
        }
        Ok(())
    }

    /// The default randomised preset: heart 70-220 bpm, breathing 20-60
    /// breaths/min, tone and phase jitter, mixed noise at 0 dB.
    pub fn preset_default(seed: u64) -> Self {
        let mut rng = component_rng(seed, 0);
        let heart_rate = rng.random_range(HEART_RATE_RANGE.0..=HEART_RATE_RANGE.1);
        let lung_rate = rng.random_range(BREATH_RATE_RANGE.0..=BREATH_RATE_RANGE.1);
        let heart = HeartSpec {
            rate_bpm: heart_rate,
            s1_s2_spacing: HeartSpec::spacing_for_rate(heart_rate),
            s1_freq: rng.random_range(80.0..100.0),
            s2_freq: rng.random_range(100.0..130.0),
            onset: rng.random_range(0.0..60.0 / heart_rate),
            ..HeartSpec::default()
        };
        let lung = LungSpec {
            rate_bpm: lung_rate,
            center_hz: rng.random_range(330.0..370.0),
            onset: rng.random_range(0.0..60.0 / lung_rate),
            ..LungSpec::default()
        };
        Self {
            heart,
            lung,
            seed,
            ..Self::default()
        }
    }
}

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A heart-sound track and its S1 onset times.
#[derive(Debug, Clone, PartialEq)]
pub struct HeartSignal {
    pub audio: AudioBuffer,
    pub beat_times: Vec<f64>,
}

/// A lung-sound track and its breath cycles as (inspiration start,
/// expiration start) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LungSignal {
    pub audio: AudioBuffer,
    pub cycles: Vec<(f64, f64)>,
}

fn periodic_events(onset: f64, period: f64, duration: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut k = 0usize;
    loop {
        let t = onset + k as f64 * period;
        if t >= duration {
            break;
        }
        times.push(t);
        k += 1;
    }
    times
}

fn add_pulse(out: &mut [f64], rate: f64, start: f64, freq: f64, decay: f64, gain: f64) {
    let attack = 0.005;
    let first = (start * rate).ceil().max(0.0) as usize;
    let last = (((start + 8.0 * decay) * rate).ceil() as usize).min(out.len());
    for (n, v) in out.iter_mut().enumerate().take(last).skip(first) {
        let t = n as f64 / rate - start;
        let ramp = if t < attack {
            0.5 - 0.5 * (PI * t / attack).cos()
        } else {
            1.0
        };
        *v += gain * ramp * (-t / decay).exp() * (2.0 * PI * freq * t).sin();
    }
}

pub fn gen_heart(spec: &HeartSpec, duration: f64, sample_rate: u32) -> HeartSignal {
    let rate = sample_rate as f64;
    let len = (duration * rate).round() as usize;
    let mut out = vec![0.0; len];
    let period = 60.0 / spec.rate_bpm;
    let beat_times = periodic_events(spec.onset, period, duration);
    if spec.amplitude != 0.0 {
        for &t in &beat_times {
            add_pulse(&mut out, rate, t, spec.s1_freq, spec.pulse_decay, spec.amplitude);
            add_pulse(
                &mut out,
                rate,
                t + spec.s1_s2_spacing,
                spec.s2_freq,
                spec.pulse_decay,
                spec.amplitude * spec.s2_gain,
            );
        }
    }
    HeartSignal {
        audio: AudioBuffer {
            samples: out,
            sample_rate,
        },
        beat_times,
    }
}

/// Single-hump breath envelope in [0, 1] peaking at the end of inspiration.
fn breath_envelope(phase: f64, inspiration_fraction: f64) -> f64 {
    if phase < inspiration_fraction {
        (0.5 * PI * phase / inspiration_fraction).sin().powi(2)
    } else {
        (0.5 * PI * (phase - inspiration_fraction) / (1.0 - inspiration_fraction))
            .cos()
            .powi(2)
    }
}

pub fn gen_lung(spec: &LungSpec, duration: f64, sample_rate: u32, seed: u64) -> LungSignal {
    let rate = sample_rate as f64;
    let len = (duration * rate).round() as usize;
    let mut rng = component_rng(seed, 2);
    let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let lo = spec.center_hz - spec.bandwidth_hz / 2.0;
    let hi = spec.center_hz + spec.bandwidth_hz / 2.0;
    let band = dsp::fft_bandpass(&white, rate, lo, hi, 20.0);
    let band_rms = dsp::power(&band).sqrt().max(f64::MIN_POSITIVE);

    let period = 60.0 / spec.rate_bpm;
    let fi = spec.ie_ratio / (1.0 + spec.ie_ratio);
    let depth = spec.modulation_depth.clamp(0.0, 1.0);
    let samples = band
        .iter()
        .enumerate()
        .map(|(n, b)| {
            let t = n as f64 / rate;
            let phase = ((t - spec.onset) / period).rem_euclid(1.0);
            let env = (1.0 - depth) + depth * breath_envelope(phase, fi);
            spec.amplitude * env * b / band_rms
        })
        .collect();
    let cycles = periodic_events(spec.onset, period, duration)
        .into_iter()
        .map(|t| (t, t + fi * period))
        .collect();
    LungSignal {
        audio: AudioBuffer {
            samples,
            sample_rate,
        },
        cycles,
    }
}

fn unit_power(mut x: Vec<f64>) -> Vec<f64> {
    let p = dsp::power(&x);
    if p > 0.0 {
        let g = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

fn white_noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Several band-limited talkers with slow random syllabic modulation.
fn babble_noise(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for _ in 0..6 {
        let white = white_noise(rng, len);
        let lo = rng.random_range(80.0..200.0);
        let hi = rng.random_range(600.0..1500.0_f64).min(rate / 2.0 - 10.0);
        let voice = dsp::fft_bandpass(&white, rate, lo, hi, 40.0);
        let fm = rng.random_range(2.0..6.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        for (n, (o, v)) in out.iter_mut().zip(&voice).enumerate() {
            let t = n as f64 / rate;
            let env = 0.5 + 0.5 * (2.0 * PI * fm * t + phase).sin();
            *o += env * v;
        }
    }
    out
}

/// Broadband bursts of 30-150 ms at Poisson times (about 1.5 per second).
fn burst_noise(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0.0;
    let duration = len as f64 / rate;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        t += -u.ln() / 1.5;
        if t >= duration {
            break;
        }
        let width = rng.random_range(0.03..0.15);
        let gain = rng.random_range(0.5..2.0);
        let start = (t * rate) as usize;
        let n = (width * rate) as usize;
        for i in 0..n {
            if start + i >= len {
                break;
            }
            let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            let z: f64 = StandardNormal.sample(rng);
            out[start + i] += gain * env * z;
        }
    }
    out
}

/// Unit-power noise of the given kind.
pub fn gen_noise(kind: NoiseKind, duration: f64, sample_rate: u32, seed: u64) -> AudioBuffer {
    let rate = sample_rate as f64;
    let len = (duration * rate).round() as usize;
    let mut rng = component_rng(seed, 3);
    let samples = match kind {
        NoiseKind::White => unit_power(white_noise(&mut rng, len)),
        NoiseKind::Babble => unit_power(babble_noise(&mut rng, len, rate)),
        NoiseKind::Bursts => unit_power(burst_noise(&mut rng, len, rate)),
        NoiseKind::Mixed => {
            let w = unit_power(white_noise(&mut rng, len));
            let b = unit_power(babble_noise(&mut rng, len, rate));
            let t = unit_power(burst_noise(&mut rng, len, rate));
            let sum = w.iter().zip(&b).zip(&t).map(|((a, b), c)| a + b + c).collect();
            unit_power(sum)
        }
    };
    AudioBuffer {
        samples,
        sample_rate,
    }
}

/// A mixture and the stems it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: AudioBuffer,
    pub heart: AudioBuffer,
    pub lung: AudioBuffer,
    /// Noise after SNR scaling; silent when no noise was requested.
    pub noise: AudioBuffer,
    /// Gain applied to the unit noise to reach the requested SNR.
    pub noise_gain: f64,
}

/// Scales `noise` so that heart + lung sits `snr_db` above it and sums the
/// three stems.
pub fn mix(
    heart: &AudioBuffer,
    lung: &AudioBuffer,
    noise: Option<&AudioBuffer>,
    snr_db: f64,
) -> Result<Mixture> {
    if heart.len() != lung.len() || noise.is_some_and(|n| n.len() != heart.len()) {
        return Err(Error::ShapeMismatch("stems differ in length".into()));
    }
    if heart.sample_rate != lung.sample_rate {
        return Err(Error::ShapeMismatch("stems differ in sample rate".into()));
    }
    let clean: Vec<f64> = heart
        .samples
        .iter()
        .zip(&lung.samples)
        .map(|(h, l)| h + l)
        .collect();
    let (noise_stem, gain) = match noise {
        None => (AudioBuffer::silence(heart.len(), heart.sample_rate), 0.0),
        Some(n) => {
            let p_clean = dsp::power(&clean);
            let p_noise = dsp::power(&n.samples);
            if !snr_db.is_finite() {
                return Err(Error::InvalidArgument("SNR must be finite".into()));
            }
            if p_clean == 0.0 {
                return Err(Error::Degenerate(
                    "heart + lung is silent, SNR undefined".into(),
                ));
            }
            if p_noise == 0.0 {
                return Err(Error::Degenerate("noise is silent, SNR unreachable".into()));
            }
            let gain = (p_clean / p_noise / 10f64.powf(snr_db / 10.0)).sqrt();
            (n.scaled(gain), gain)
        }
    };
    let samples = if noise.is_some() {
        clean
            .iter()
            .zip(&noise_stem.samples)
            .map(|(c, n)| c + n)
            .collect()
    } else {
        clean
    };
    Ok(Mixture {
        mixture: AudioBuffer {
            samples,
            sample_rate: heart.sample_rate,
        },
        heart: heart.clone(),
        lung: lung.clone(),
        noise: noise_stem,
        noise_gain: gain,
    })
}

/// Generated mixture with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: MixSpec,
    pub mix: Mixture,
    pub beat_times: Vec<f64>,
    pub breath_cycles: Vec<(f64, f64)>,
}

impl Scene {
    pub fn heart_rate_per_10s(&self) -> f64 {
        self.spec.heart.rate_bpm / 6.0
    }

    pub fn breath_rate_per_10s(&self) -> f64 {
        self.spec.lung.rate_bpm / 6.0
    }
}

/// Builds a full scene. All stems share one gain chosen so the mixture peak
/// is at most 0.9, keeping 16-bit output unclipped.
pub fn generate(spec: &MixSpec) -> Result<Scene> {
    spec.validate()?;
    let heart = gen_heart(&spec.heart, spec.duration, spec.sample_rate);
    let lung = gen_lung(&spec.lung, spec.duration, spec.sample_rate, spec.seed);
    let noise = spec
        .noise
        .kind
        .map(|k| gen_noise(k, spec.duration, spec.sample_rate, spec.seed));
    let mut m = mix(&heart.audio, &lung.audio, noise.as_ref(), spec.noise.snr_db)?;
    let peak = m.mixture.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.9 {
        let g = 0.9 / peak;
        m.mixture = m.mixture.scaled(g);
        m.heart = m.heart.scaled(g);
        m.lung = m.lung.scaled(g);
        m.noise = m.noise.scaled(g);
        m.noise_gain *= g;
    }
    Ok(Scene {
        spec: *spec,
        mix: m,
        beat_times: heart.beat_times,
        breath_cycles: lung.cycles,
    })
}

/// Clean heart recordings with randomised rate, tones and phase, for use as
/// an exemplar database.
pub fn heart_exemplars(count: usize, duration: f64, sample_rate: u32, seed: u64) -> Vec<AudioBuffer> {
    (0..count)
        .map(|i| {
            let spec = MixSpec::preset_default(seed.wrapping_mul(1000).wrapping_add(i as u64 + 1));
            let peak_gain = 0.9;
            let h = gen_heart(&spec.heart, duration, sample_rate).audio;
            normalise_peak(h, peak_gain)
        })
        .collect()
}

/// Clean lung recordings, the counterpart of [`heart_exemplars`].
pub fn lung_exemplars(count: usize, duration: f64, sample_rate: u32, seed: u64) -> Vec<AudioBuffer> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_mul(1000).wrapping_add(500 + i as u64);
            let spec = MixSpec::preset_default(s);
            normalise_peak(gen_lung(&spec.lung, duration, sample_rate, s).audio, 0.9)
        })
        .collect()
}

fn normalise_peak(buf: AudioBuffer, target: f64) -> AudioBuffer {
    let peak = buf.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        buf.scaled(target / peak)
    } else {
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fraction of DFT energy between `lo` and `hi` Hz, by direct summation
    /// over the one-sided spectrum.
    fn band_fraction(x: &[f64], rate: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let mut inside = 0.0;
        let mut total = 0.0;
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let ph = 2.0 * PI * ((k * i) % n) as f64 / n as f64;
                re += v * ph.cos();
                im -= v * ph.sin();
            }
            let e = re * re + im * im;
            let f = k as f64 * rate / n as f64;
            total += e;
            if (lo..=hi).contains(&f) {
                inside += e;
            }
        }
        inside / total
    }

    #[test]
    fn heart_beat_count_and_spacing() {
        let spec = HeartSpec {
            rate_bpm: 120.0,
            ..HeartSpec::default()
        };
        let h = gen_heart(&spec, 10.0, 4000);
        assert_eq!(h.beat_times.len(), 20);
        for w in h.beat_times.windows(2) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-12);
        }
        assert_eq!(h.audio.len(), 40000);
    }

    #[test]
    fn zero_amplitude_heart_is_silent() {
        let spec = HeartSpec {
            amplitude: 0.0,
            ..HeartSpec::default()
        };
        assert!(gen_heart(&spec, 2.0, 4000).audio.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heart_energy_sits_in_heart_band() {
        // 2 s keeps the direct DFT cheap
        let h = gen_heart(&HeartSpec::default(), 2.0, 4000);
        let frac = band_fraction(&h.audio.samples, 4000.0, 50.0, 250.0);
        assert!(frac >= 0.9, "fraction {frac}");
    }

    #[test]
    fn lung_cycle_count() {
        let spec = LungSpec {
            rate_bpm: 30.0,
            ..LungSpec::default()
        };
        let l = gen_lung(&spec, 10.0, 4000, 1);
        assert_eq!(l.cycles.len(), 5);
        assert!(l.cycles.iter().all(|(i, e)| e > i));
    }

    #[test]
    fn unmodulated_lung_is_stationary() {
        let spec = LungSpec {
            modulation_depth: 0.0,
            ..LungSpec::default()
        };
        let l = gen_lung(&spec, 10.0, 4000, 3);
        // per-second power stays within a narrow band
        let powers: Vec<f64> = l.audio.samples.chunks(4000).map(dsp::power).collect();
        let mean = powers.iter().sum::<f64>() / powers.len() as f64;
        assert!(powers.iter().all(|p| (p / mean - 1.0).abs() < 0.15));
    }

    #[test]
    fn mix_hits_requested_snr() {
        let h = gen_heart(&HeartSpec::default(), 4.0, 4000).audio;
        let l = gen_lung(&LungSpec::default(), 4.0, 4000, 1).audio;
        for kind in [NoiseKind::White, NoiseKind::Babble, NoiseKind::Bursts, NoiseKind::Mixed] {
            let n = gen_noise(kind, 4.0, 4000, 2);
            let m = mix(&h, &l, Some(&n), 0.0).unwrap();
            let clean: Vec<f64> = h.samples.iter().zip(&l.samples).map(|(a, b)| a + b).collect();
            let ratio = dsp::power(&m.noise.samples) / dsp::power(&clean);
            assert!((ratio - 1.0).abs() < 1e-6, "{kind:?}");
        }
    }

    #[test]
    fn noiseless_mix_is_exact_sum() {
        let h = gen_heart(&HeartSpec::default(), 2.0, 4000).audio;
        let l = gen_lung(&LungSpec::default(), 2.0, 4000, 1).audio;
        let m = mix(&h, &l, None, 0.0).unwrap();
        for ((x, a), b) in m.mixture.samples.iter().zip(&h.samples).zip(&l.samples) {
            assert_eq!(*x, a + b);
        }
    }

    #[test]
    fn mix_errors() {
        let h = gen_heart(&HeartSpec::default(), 2.0, 4000).audio;
        let short = AudioBuffer::silence(10, 4000);
        assert!(mix(&h, &short, None, 0.0).is_err());
        let silent = AudioBuffer::silence(h.len(), 4000);
        let n = gen_noise(NoiseKind::White, 2.0, 4000, 1);
        assert!(matches!(
            mix(&silent, &silent, Some(&n), 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = MixSpec::preset_default(17);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let other = generate(&MixSpec::preset_default(18)).unwrap();
        assert_ne!(a.mix.mixture, other.mix.mixture);
        // stems sum to the mixture by construction
        for (i, x) in a.mix.mixture.samples.iter().enumerate() {
            let s = a.mix.heart.samples[i] + a.mix.lung.samples[i] + a.mix.noise.samples[i];
            assert!((x - s).abs() < 1e-12);
        }
    }

    #[test]
    fn presets_respect_ranges() {
        for seed in 0..50 {
            let s = MixSpec::preset_default(seed);
            assert!((70.0..=220.0).contains(&s.heart.rate_bpm));
            assert!((20.0..=60.0).contains(&s.lung.rate_bpm));
            s.validate().unwrap();
        }
        let bad = MixSpec {
            heart: HeartSpec {
                rate_bpm: 40.0,
                ..HeartSpec::default()
            },
            ..MixSpec::default()
        };
        assert!(generate(&bad).is_err());
    }
}
