//! Co-factorise a synthetic chest recording against generated heart and lung
//! databases, then score the stems against the known ground truth.
//!
//! Pass a seed as the first argument to pick another mixture.

use chestsep::audio_io::WORKING_RATE;
use chestsep::metrics;
use chestsep::nmcf::{self, ExemplarDb, NmcfConfig, HEART, LUNG};
use chestsep::spectral::StftConfig;
use chestsep::synth::{self, MixSpec};

fn main() -> chestsep::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let scene = synth::generate(&MixSpec::preset_default(seed))?;
    println!(
        "heart {:.0} bpm, breathing {:.0}/min, mixed noise at 0 dB",
        scene.spec.heart.rate_bpm, scene.spec.lung.rate_bpm
    );

    let stft = StftConfig::default();
    let heart_db = ExemplarDb::from_audio(&synth::heart_exemplars(20, 2.5, WORKING_RATE, 77), &stft)?;
    let lung_db = ExemplarDb::from_audio(&synth::lung_exemplars(20, 2.5, WORKING_RATE, 77), &stft)?;

    let result = nmcf::separate(&scene.mix.mixture, &heart_db, &lung_db, &NmcfConfig::default(), &stft)?;
    let heart = result.stem(HEART).expect("heart stem");
    let lung = result.stem(LUNG).expect("lung stem");

    let before = metrics::sdr(&scene.mix.mixture, &scene.mix.heart)?;
    let after = metrics::sdr(heart, &scene.mix.heart)?;
    println!("heart SDR {before:.2} dB -> {after:.2} dB");
    println!(
        "heart rate {:.2} (truth {:.2}) per 10 s",
        metrics::heart_rate(heart)?.rate,
        scene.heart_rate_per_10s()
    );
    println!(
        "breathing rate {:.2} (truth {:.2}) per 10 s",
        metrics::breathing_rate(lung)?.rate,
        scene.breath_rate_per_10s()
    );
    Ok(())
}
