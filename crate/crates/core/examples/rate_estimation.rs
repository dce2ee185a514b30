use chestsep::audio_io::WORKING_RATE;
use chestsep::metrics;
use chestsep::synth::{self, HeartSpec, LungSpec};

fn main() -> chestsep::Result<()> {
    println!("heart");
    for bpm in [70.0, 100.0, 140.0, 180.0, 220.0] {
        let spec = HeartSpec {
            rate_bpm: bpm,
            s1_s2_spacing: HeartSpec::spacing_for_rate(bpm),
            ..HeartSpec::default()
        };
        let sig = synth::gen_heart(&spec, 10.0, WORKING_RATE);
        let est = metrics::heart_rate(&sig.audio)?;
        println!(
            "  {bpm:5.0} bpm: {:6.2} per 10 s (truth {:6.2}), {} beats found",
            est.rate,
            bpm / 6.0,
            est.event_times.len()
        );
    }
    println!("breathing");
    for rate in [20.0, 30.0, 45.0, 60.0] {
        let spec = LungSpec {
            rate_bpm: rate,
            ..LungSpec::default()
        };
        let sig = synth::gen_lung(&spec, 10.0, WORKING_RATE, 5);
        let est = metrics::breathing_rate(&sig.audio)?;
        println!("  {rate:5.0}/min: {:6.2} per 10 s (truth {:6.2})", est.rate, rate / 6.0);
    }
    Ok(())
}
