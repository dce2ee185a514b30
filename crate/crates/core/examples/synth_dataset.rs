//! Write a small labelled dataset to a directory (default `./synth_out`).

use std::path::PathBuf;

use chestsep::cli;
use chestsep::synth::{self, MixSpec};

fn main() -> chestsep::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_out".into()));
    for seed in 1..=3u64 {
        let scene = synth::generate(&MixSpec::preset_default(seed))?;
        let dir = out.join(format!("mix_{seed:03}"));
        cli::write_scene(&dir, &scene)?;
        println!(
            "{}: {:.1} s, heart {:.0} bpm ({} beats), breathing {:.0}/min ({} cycles)",
            dir.display(),
            scene.mix.mixture.duration(),
            scene.spec.heart.rate_bpm,
            scene.beat_times.len(),
            scene.spec.lung.rate_bpm,
            scene.breath_cycles.len()
        );
    }
    Ok(())
}
