//! Evaluation: heart and breathing rate estimation, ground-truth separation
//! quality, and the one-sided Wilcoxon signed-rank test used to compare
//! methods.

use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::dsp;
use crate::error::{Error, Result};

/// Detected events and the rate they imply, in events per 10 seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    /// Seconds from the start of the buffer, strictly increasing.
    pub event_times: Vec<f64>,
    /// Normalised detection envelope sampled at `envelope_rate`.
    pub envelope: Vec<f64>,
    pub envelope_rate: f64,
    pub low_confidence: bool,
}

impl RateEstimate {
    fn silent(envelope: Vec<f64>, envelope_rate: f64) -> Self {
        Self {
            rate: 0.0,
            event_times: Vec::new(),
            envelope,
            envelope_rate,
            low_confidence: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeartRateConfig {
    pub band_hz: (f64, f64),
    pub envelope_cutoff_hz: f64,
    pub envelope_rate_hz: f64,
    pub bpm_range: (f64, f64),
    /// Half-width of the per-frame beat gate in seconds.
    pub gate_half_width: f64,
}

impl Default for HeartRateConfig {
    fn default() -> Self {
        Self {
            band_hz: (25.0, 250.0),
            envelope_cutoff_hz: 20.0,
            envelope_rate_hz: 100.0,
            bpm_range: crate::synth::HEART_RATE_RANGE,
            gate_half_width: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BreathRateConfig {
    pub band_hz: (f64, f64),
    pub envelope_cutoff_hz: f64,
    pub envelope_rate_hz: f64,
    /// Minimum spacing of accepted breath peaks, seconds.
    pub min_interval: f64,
    /// Minimum peak prominence as a fraction of the envelope maximum.
    pub prominence: f64,
}

impl Default for BreathRateConfig {
    fn default() -> Self {
        Self {
            band_hz: (300.0, 450.0),
            envelope_cutoff_hz: 2.0,
            envelope_rate_hz: 50.0,
            min_interval: 0.8,
            prominence: 0.25,
        }
    }
}

const SILENCE: f64 = 1e-20;

/// Band-limited energy envelope, low-passed, decimated and scaled to a
/// maximum of one. Returns the envelope, its rate and the pre-normalisation
/// peak.
fn energy_envelope(
    buf: &AudioBuffer,
    band: (f64, f64),
    cutoff: f64,
    target_rate: f64,
) -> (Vec<f64>, f64, f64) {
    let rate = buf.sample_rate as f64;
    let taper = (0.1 * (band.1 - band.0)).min(20.0);
    let x = dsp::fft_bandpass(&buf.samples, rate, band.0, band.1, taper);
    let energy: Vec<f64> = x.iter().map(|v| v * v).collect();
    let smooth = dsp::fft_lowpass(&energy, rate, cutoff, cutoff / 4.0);
    let factor = ((rate / target_rate).round() as usize).max(1);
    let mut env = dsp::decimate_mean(&smooth, factor);
    env.iter_mut().for_each(|v| *v = v.max(0.0));
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if peak > SILENCE {
        env.iter_mut().for_each(|v| *v /= peak);
    }
    (env, rate / factor as f64, peak)
}

fn check_length(buf: &AudioBuffer, min_seconds: f64) -> Result<()> {
    if buf.duration() < min_seconds {
        return Err(Error::TooShort(format!(
            "{:.2} s of audio, need at least {min_seconds} s",
            buf.duration()
        )));
    }
    Ok(())
}

/// Biased autocorrelation of the mean-removed signal at lags `0..=max_lag`.
fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|l| c[..n - l].iter().zip(&c[l..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Vertex offset of the parabola through three equally spaced points.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let den = left - 2.0 * mid + right;
    if den.abs() < 1e-300 {
        0.0
    } else {
        (0.5 * (left - right) / den).clamp(-0.5, 0.5)
    }
}

/// Indices of strict local maxima with their prominences.
fn peaks_with_prominence(x: &[f64]) -> Vec<(usize, f64)> {
    let n = x.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // extend across a plateau
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                let peak = (i + j) / 2;
                let h = x[peak];
                let mut left_min = h;
                for k in (0..i).rev() {
                    if x[k] > h {
                        break;
                    }
                    left_min = left_min.min(x[k]);
                }
                let mut right_min = h;
                for &v in &x[j + 1..] {
                    if v > h {
                        break;
                    }
                    right_min = right_min.min(v);
                }
                out.push((peak, h - left_min.max(right_min)));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Greedy selection by height with a minimum index spacing; returned sorted.
fn suppress_close(mut peaks: Vec<usize>, x: &[f64], min_gap: usize) -> Vec<usize> {
    peaks.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        if kept.iter().all(|&q| p.abs_diff(q) >= min_gap) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

/// Heart rate from the 25-250 Hz energy envelope: the beat period is the
/// strongest envelope autocorrelation lag within the allowed bpm range, and
/// beats are envelope peaks at least 0.6 periods apart.
pub fn heart_rate(stem: &AudioBuffer) -> Result<RateEstimate> {
    heart_rate_with(stem, &HeartRateConfig::default())
}

pub fn heart_rate_with(stem: &AudioBuffer, cfg: &HeartRateConfig) -> Result<RateEstimate> {
    check_length(stem, 2.0)?;
    let (env, env_rate, peak) =
        energy_envelope(stem, cfg.band_hz, cfg.envelope_cutoff_hz, cfg.envelope_rate_hz);
    if peak <= SILENCE {
        return Ok(RateEstimate::silent(env, env_rate));
    }
    let lag_min = ((60.0 / cfg.bpm_range.1) * env_rate * 0.95).floor().max(1.0) as usize;
    let lag_max = ((60.0 / cfg.bpm_range.0) * env_rate * 1.05).ceil() as usize;
    let ac = autocorrelation(&env, lag_max + 1);
    if ac.len() < lag_max + 2 || ac[0] <= 0.0 {
        return Ok(RateEstimate::silent(env, env_rate));
    }
    let local: Vec<usize> = (lag_min..=lag_max)
        .filter(|&l| ac[l] >= ac[l - 1] && ac[l] >= ac[l + 1])
        .collect();
    let best = local
        .iter()
        .map(|&l| ac[l])
        .fold(f64::NEG_INFINITY, f64::max);
    // earliest strong peak guards against picking a multiple of the period
    let Some(&lag) = local.iter().find(|&&l| ac[l] >= 0.85 * best) else {
        return Ok(RateEstimate::silent(env, env_rate));
    };
    let refined = lag as f64 + parabolic_offset(ac[lag - 1], ac[lag], ac[lag + 1]);
    let period = (refined / env_rate).clamp(60.0 / cfg.bpm_range.1, 60.0 / cfg.bpm_range.0);
    let low_confidence = ac[lag] / ac[0] < 0.1;

    let candidates: Vec<usize> = peaks_with_prominence(&env)
        .into_iter()
        .filter(|&(i, prom)| env[i] >= 0.3 && prom >= 0.1)
        .map(|(i, _)| i)
        .collect();
    let min_gap = ((0.6 * period * env_rate).round() as usize).max(1);
    let beats = suppress_close(candidates, &env, min_gap);
    Ok(RateEstimate {
        rate: 10.0 / period,
        event_times: beats.iter().map(|&i| (i as f64 + 0.5) / env_rate).collect(),
        envelope: env,
        envelope_rate: env_rate,
        low_confidence,
    })
}

/// Breathing rate from peaks of the smoothed 300-450 Hz power envelope:
/// `10 (n - 1) / (t_last - t_first)` breaths per 10 s over `n` breath peaks.
pub fn breathing_rate(stem: &AudioBuffer) -> Result<RateEstimate> {
    breathing_rate_with(stem, &BreathRateConfig::default())
}

pub fn breathing_rate_with(stem: &AudioBuffer, cfg: &BreathRateConfig) -> Result<RateEstimate> {
    check_length(stem, 4.0)?;
    let (env, env_rate, peak) =
        energy_envelope(stem, cfg.band_hz, cfg.envelope_cutoff_hz, cfg.envelope_rate_hz);
    if peak <= SILENCE {
        return Ok(RateEstimate::silent(env, env_rate));
    }
    let candidates: Vec<usize> = peaks_with_prominence(&env)
        .into_iter()
        .filter(|&(_, prom)| prom >= cfg.prominence)
        .map(|(i, _)| i)
        .collect();
    let min_gap = ((cfg.min_interval * env_rate).round() as usize).max(1);
    let breaths = suppress_close(candidates, &env, min_gap);
    let times: Vec<f64> = breaths.iter().map(|&i| (i as f64 + 0.5) / env_rate).collect();
    let (rate, low_confidence) = match (times.first(), times.last()) {
        (Some(a), Some(b)) if times.len() >= 2 && b > a => {
            (10.0 * (times.len() - 1) as f64 / (b - a), times.len() < 3)
        }
        _ => (0.0, true),
    };
    Ok(RateEstimate {
        rate,
        event_times: times,
        envelope: env,
        envelope_rate: env_rate,
        low_confidence,
    })
}

/// Per-frame indicator of heart beats: frame `t` is 1 when some beat's
/// `±half_width` window meets the frame's hop cell centred on the frame
/// centre.
pub fn beat_gate(
    beat_times: &[f64],
    frames: usize,
    hop: usize,
    window_length: usize,
    sample_rate: u32,
    half_width: f64,
) -> Vec<f64> {
    let rate = sample_rate as f64;
    let cell = hop as f64 / rate / 2.0;
    (0..frames)
        .map(|t| {
            let centre = (t * hop) as f64 / rate + window_length as f64 / rate / 2.0;
            let hit = beat_times
                .iter()
                .any(|&b| (b - centre).abs() <= half_width + cell);
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Cap applied to SDR and SIR values, dB.
pub const DB_CAP: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(signal: f64, distortion: f64) -> f64 {
    if distortion <= 0.0 {
        return DB_CAP;
    }
    if signal <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (signal / distortion).log10()).clamp(-DB_CAP, DB_CAP)
}

fn check_pair(estimate: &AudioBuffer, reference: &AudioBuffer) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.energy() <= 0.0 {
        return Err(Error::Degenerate("reference is silent".into()));
    }
    Ok(())
}

/// Signal-to-distortion ratio after optimal scalar projection of the
/// estimate onto the reference, capped at ±100 dB.
pub fn sdr(estimate: &AudioBuffer, reference: &AudioBuffer) -> Result<f64> {
    check_pair(estimate, reference)?;
    let (e, r) = (&estimate.samples, &reference.samples);
    let alpha = dot(e, r) / dot(r, r);
    let target = alpha * alpha * dot(r, r);
    let resid: f64 = e.iter().zip(r).map(|(x, y)| (x - alpha * y).powi(2)).sum();
    Ok(ratio_db(target, resid))
}

/// Solves the small symmetric system `g x = rhs` by Gaussian elimination
/// with partial pivoting.
fn solve(mut g: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
    let n = rhs.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&a, &b| g[a][c].abs().total_cmp(&g[b][c].abs()))
            .unwrap_or(c);
        if g[p][c].abs() < 1e-300 {
            return Err(Error::Degenerate("reference signals are linearly dependent".into()));
        }
        g.swap(c, p);
        rhs.swap(c, p);
        for r in c + 1..n {
            let f = g[r][c] / g[c][c];
            for k in c..n {
                g[r][k] -= f * g[c][k];
            }
            rhs[r] -= f * rhs[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| g[c][k] * x[k]).sum();
        x[c] = (rhs[c] - s) / g[c][c];
    }
    Ok(x)
}

/// Signal-to-interference ratio: the estimate is projected onto the span of
/// the reference and the interferers; the reference-only projection is the
/// target and the remainder of the joint projection is interference.
pub fn sir(estimate: &AudioBuffer, reference: &AudioBuffer, interferers: &[&AudioBuffer]) -> Result<f64> {
    check_pair(estimate, reference)?;
    for i in interferers {
        if i.len() != estimate.len() {
            return Err(Error::ShapeMismatch("interferer length differs".into()));
        }
    }
    let e = &estimate.samples;
    let r = &reference.samples;
    let alpha = dot(e, r) / dot(r, r);
    let basis: Vec<&[f64]> = std::iter::once(r.as_slice())
        .chain(interferers.iter().map(|b| b.samples.as_slice()))
        .collect();
    let gram: Vec<Vec<f64>> = basis
        .iter()
        .map(|a| basis.iter().map(|b| dot(a, b)).collect())
        .collect();
    let rhs: Vec<f64> = basis.iter().map(|a| dot(a, e)).collect();
    let coef = solve(gram, rhs)?;
    let interference: f64 = (0..e.len())
        .map(|n| {
            let joint: f64 = basis.iter().zip(&coef).map(|(b, c)| c * b[n]).sum();
            (joint - alpha * r[n]).powi(2)
        })
        .sum();
    Ok(ratio_db(alpha * alpha * dot(r, r), interference))
}

/// Ranks of `values` starting at 1, ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Largest non-zero sample size evaluated with the exact distribution.
pub const EXACT_LIMIT: usize = 25;

/// Signed-rank statistic and its reference distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRank {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// One-sided Wilcoxon signed-rank test of `a > b` on paired samples.
///
/// Zero differences are dropped and tied magnitudes share their mean rank.
/// The p-value is `P(W+ >= observed)`, exact (conditional on the tie
/// pattern) for up to [`EXACT_LIMIT`] pairs and from the tie-corrected
/// normal approximation with continuity correction above.
pub fn wilcoxon_one_sided(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(signed_rank(a, b)?.p_value)
}

pub fn signed_rank(a: &[f64], b: &[f64]) -> Result<SignedRank> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let n = d.len();
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    if n <= EXACT_LIMIT {
        // ranks are multiples of 1/2, so doubled ranks index the distribution
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let observed = (2.0 * w_plus).round() as usize;
        let tail: f64 = counts[observed..].iter().sum();
        return Ok(SignedRank {
            w_plus,
            n,
            p_value: tail / 2f64.powi(n as i32),
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean - 0.5) / var.sqrt();
    Ok(SignedRank {
        w_plus,
        n,
        p_value: 0.5 * libm::erfc(z / std::f64::consts::SQRT_2),
        exact: false,
    })
}

/// Quantile with linear interpolation between order statistics at position
/// `q (n - 1)`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Median and interquartile range.
pub fn median_iqr(values: &[f64]) -> Option<(f64, f64)> {
    Some((
        quantile(values, 0.5)?,
        quantile(values, 0.75)? - quantile(values, 0.25)?,
    ))
}

/// Pairs needed before a Wilcoxon p-value is reported without a flag.
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodErrors {
    pub method: String,
    pub n: usize,
    pub median: f64,
    pub iqr: f64,
}

/// Outcome of testing whether `better` has smaller errors than `worse`.
#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    PValue(f64),
    /// Fewer than [`MIN_PAIRS`] pairs; the p-value is still given.
    Insufficient(f64),
    /// Every paired difference is zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTest {
    pub better: String,
    pub worse: String,
    pub result: Comparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<MethodErrors>,
    pub tests: Vec<PairwiseTest>,
}

/// One estimate scored against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSample {
    pub method: String,
    pub estimate: f64,
    pub truth: f64,
}

/// Median absolute error and IQR per method, in order of first appearance,
/// plus one-sided Wilcoxon tests over every ordered pair of methods. Errors
/// are paired by their order within each method.
pub fn rate_error_report(results: &[RateSample]) -> ErrorReport {
    let mut methods: Vec<(String, Vec<f64>)> = Vec::new();
    for s in results {
        let err = (s.estimate - s.truth).abs();
        match methods.iter_mut().find(|(m, _)| *m == s.method) {
            Some((_, v)) => v.push(err),
            None => methods.push((s.method.clone(), vec![err])),
        }
    }
    let rows = methods
        .iter()
        .map(|(m, e)| {
            let (median, iqr) = median_iqr(e).unwrap_or((f64::NAN, f64::NAN));
            MethodErrors {
                method: m.clone(),
                n: e.len(),
                median,
                iqr,
            }
        })
        .collect();
    let mut tests = Vec::new();
    for (i, (ma, ea)) in methods.iter().enumerate() {
        for (j, (mb, eb)) in methods.iter().enumerate() {
            if i == j {
                continue;
            }
            let n = ea.len().min(eb.len());
            // `ma` is better when the errors of `mb` exceed those of `ma`
            let result = match signed_rank(&eb[..n], &ea[..n]) {
                Ok(sr) if n < MIN_PAIRS => Comparison::Insufficient(sr.p_value),
                Ok(sr) => Comparison::PValue(sr.p_value),
                Err(_) => Comparison::Degenerate,
            };
            tests.push(PairwiseTest {
                better: ma.clone(),
                worse: mb.clone(),
                result,
            });
        }
    }
    ErrorReport { rows, tests }
}
