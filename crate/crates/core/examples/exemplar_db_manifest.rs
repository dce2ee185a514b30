//! Build an exemplar database on disk with per-item weights and load it back.

use chestsep::audio_io::{self, WORKING_RATE};
use chestsep::nmcf::{DbEntry, DbManifest, ExemplarDb};
use chestsep::spectral::StftConfig;
use chestsep::synth;

fn main() -> chestsep::Result<()> {
    let dir = tempfile::tempdir()?;
    let clips = synth::heart_exemplars(4, 2.5, WORKING_RATE, 9);
    let mut manifest = DbManifest::default();
    for (i, clip) in clips.iter().enumerate() {
        let name = format!("heart_{i:02}.wav");
        audio_io::write_wav(dir.path().join(&name), clip)?;
        manifest.item.push(DbEntry {
            path: name.into(),
            label: Some("normal".into()),
            weight: if i == 0 { 0.25 } else { 1.0 },
        });
    }
    manifest.write(dir.path())?;
    println!("{}", std::fs::read_to_string(dir.path().join(chestsep::nmcf::MANIFEST_NAME))?);

    let db = ExemplarDb::load(dir.path(), &StftConfig::default(), WORKING_RATE)?;
    for item in db.items() {
        println!(
            "{:?}: {} x {} spectrogram, weight {}",
            item.label,
            item.magnitude.nrows(),
            item.magnitude.ncols(),
            item.weight
        );
    }
    Ok(())
}
