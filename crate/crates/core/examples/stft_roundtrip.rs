//! Analyse ten seconds of noise, resynthesise it and report the error over
//! the fully overlapped interior and the edge taper.

use chestsep::audio_io::{AudioBuffer, WORKING_RATE};
use chestsep::spectral::{self, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> chestsep::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = (0..10 * WORKING_RATE).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = AudioBuffer::new(samples, WORKING_RATE)?;

    let cfg = StftConfig::default();
    let spec = spectral::stft(&x, &cfg)?;
    println!(
        "{} bins x {} frames, hop {} samples, bin width {:.3} Hz",
        spec.bins(),
        spec.frames(),
        cfg.hop()?,
        spec.bin_hz()
    );

    let y = spectral::istft(&spec)?;
    let inner = spectral::interior(y.len(), &cfg)?;
    let err = |r: std::ops::Range<usize>| {
        let num: f64 = r.clone().map(|i| (y.samples[i] - x.samples[i]).powi(2)).sum();
        let den: f64 = r.map(|i| x.samples[i].powi(2)).sum();
        (num / den).sqrt()
    };
    println!("interior {inner:?}: relative error {:.2e}", err(inner.clone()));
    println!("first {} samples: relative error {:.2e}", inner.start, err(0..inner.start));
    Ok(())
}
