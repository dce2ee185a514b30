//! Heart SDR of every method on one synthetic mixture.

use chestsep::audio_io::WORKING_RATE;
use chestsep::cli::{separate_with, RunConfig};
use chestsep::metrics;
use chestsep::nmcf::{ExemplarDb, Method, HEART};
use chestsep::synth::{self, MixSpec};

fn main() -> chestsep::Result<()> {
    let scene = synth::generate(&MixSpec::preset_default(4))?;
    let cfg = RunConfig::default().resolved();
    let hdb = ExemplarDb::from_audio(&synth::heart_exemplars(20, 2.5, WORKING_RATE, 77), &cfg.stft)?;
    let ldb = ExemplarDb::from_audio(&synth::lung_exemplars(20, 2.5, WORKING_RATE, 77), &cfg.stft)?;

    let mixture_sdr = metrics::sdr(&scene.mix.mixture, &scene.mix.heart)?;
    println!("{:<16} {:>8.2} dB", "mixture", mixture_sdr);
    for method in Method::ALL {
        let r = separate_with(&scene.mix.mixture, method, &hdb, &ldb, &cfg)?;
        let sdr = metrics::sdr(r.stem(HEART).expect("heart stem"), &scene.mix.heart)?;
        println!("{:<16} {:>8.2} dB  ({} components)", method.name(), sdr, r.dictionary.components());
    }
    Ok(())
}
