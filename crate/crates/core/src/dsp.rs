//! Whole-buffer filtering helpers shared by the generator and the rate
//! estimators.

use realfft::RealFftPlanner;

/// Zero-phase band-pass by FFT: bins outside `[lo, hi]` Hz are removed and a
/// raised-cosine taper of width `taper` Hz softens each edge.
pub fn fft_bandpass(x: &[f64], rate: f64, lo: f64, hi: f64, taper: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut input = x.to_vec();
    let mut spec = fwd.make_output_vec();
    fwd.process(&mut input, &mut spec).expect("buffer sizes come from the planner");
    let df = rate / n as f64;
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= band_gain(k as f64 * df, lo, hi, taper);
    }
    spec[0].im = 0.0;
    if n % 2 == 0 {
        let last = spec.len() - 1;
        spec[last].im = 0.0;
    }
    let mut out = inv.make_output_vec();
    inv.process(&mut spec, &mut out).expect("buffer sizes come from the planner");
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// Zero-phase low-pass; see [`fft_bandpass`].
pub fn fft_lowpass(x: &[f64], rate: f64, cutoff: f64, taper: f64) -> Vec<f64> {
    fft_bandpass(x, rate, -taper, cutoff, taper)
}

fn band_gain(f: f64, lo: f64, hi: f64, taper: f64) -> f64 {
    let edge = |d: f64| {
        if taper <= 0.0 {
            if d >= 0.0 {
                1.0
            } else {
                0.0
            }
        } else if d >= taper / 2.0 {
            1.0
        } else if d <= -taper / 2.0 {
            0.0
        } else {
            0.5 + 0.5 * (std::f64::consts::PI * d / taper).sin()
        }
    };
    edge(f - lo) * edge(hi - f)
}

/// Centred moving average of odd length `2 * half + 1`, shrinking at the ends.
pub fn moving_average(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Averages non-overlapping blocks of `factor` samples.
pub fn decimate_mean(x: &[f64], factor: usize) -> Vec<f64> {
    x.chunks(factor)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Power of a signal (mean square).
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn bandpass_keeps_inband_and_removes_outband() {
        let rate = 4000.0;
        let x: Vec<f64> = (0..4000)
            .map(|n| {
                let t = n as f64 / rate;
                (2.0 * PI * 100.0 * t).sin() + (2.0 * PI * 800.0 * t).sin()
            })
            .collect();
        let y = fft_bandpass(&x, rate, 50.0, 250.0, 10.0);
        let want: Vec<f64> = (0..4000)
            .map(|n| (2.0 * PI * 100.0 * n as f64 / rate).sin())
            .collect();
        let err: f64 = y.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err / 2000.0 < 1e-20);
    }

    #[test]
    fn moving_average_of_constant() {
        let y = moving_average(&[2.0; 9], 3);
        assert!(y.iter().all(|&v| (v - 2.0).abs() < 1e-15));
        assert_eq!(decimate_mean(&[1.0, 3.0, 5.0], 2), vec![2.0, 5.0]);
    }
}
