//! Save a short co-factorisation run, read its factors back and render the
//! heart mask as an image.

use chestsep::audio_io::WORKING_RATE;
use chestsep::cli::{self, RunConfig};
use chestsep::export;
use chestsep::nmcf::{ExemplarDb, Method, HEART};
use chestsep::synth::{self, MixSpec};

fn main() -> chestsep::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = RunConfig::default();
    cfg.nmcf.nmf.max_iter = 40;
    let cfg = cfg.resolved();

    let scene = synth::generate(&MixSpec::preset_default(2))?;
    let hdb = ExemplarDb::from_audio(&synth::heart_exemplars(6, 2.5, WORKING_RATE, 77), &cfg.stft)?;
    let ldb = ExemplarDb::from_audio(&synth::lung_exemplars(6, 2.5, WORKING_RATE, 77), &cfg.stft)?;
    let result = cli::separate_with(&scene.mix.mixture, Method::Nmcf, &hdb, &ldb, &cfg)?;
    for p in cli::write_run(dir.path(), &result, &cfg)? {
        println!("wrote {}", p.file_name().unwrap().to_string_lossy());
    }

    let saved = cli::load_run(dir.path())?;
    println!(
        "reloaded {} bins x {} components, {} frames",
        saved.dictionary.matrix().nrows(),
        saved.dictionary.matrix().ncols(),
        saved.activations.matrix().ncols()
    );
    let png = std::env::temp_dir().join("chestsep_heart_mask.png");
    export::save_mask_png(&png, &result.masks.get(HEART).expect("heart mask").values)?;
    println!("heart mask image at {}", png.display());
    Ok(())
}
