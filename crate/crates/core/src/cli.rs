//! Command-line front end: `separate`, `bench`, `synth` and `inspect`.
//!
//! Settings come from built-in defaults, then an optional TOML file
//! (`--config` or `CHESTSEP_CONFIG`), then flags. The effective settings are
//! written next to every output so a run can be repeated exactly.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, AudioBuffer};
use crate::baselines::{self, BaselineConfig};
use crate::error::{Error, Result};
use crate::export;
use crate::metrics::{self, Comparison, RateSample};
use crate::nmcf::{self, DbEntry, DbManifest, ExemplarDb, Method, NmcfConfig, SeparationResult};
use crate::nmf_core::{Activations, Block, Dictionary};
use crate::spectral::{self, StftConfig};
use crate::synth::{self, MixSpec, NoiseKind};

pub const CONFIG_ENV: &str = "CHESTSEP_CONFIG";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_FILE: &str = "cost_trace.csv";
pub const DICTIONARY_FILE: &str = "dictionary.csv";
pub const ACTIVATIONS_FILE: &str = "activations.csv";
pub const SCENE_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    None,
    Csv,
    Png,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    fn png(self) -> bool {
        matches!(self, Format::Png | Format::Both)
    }
}

/// Everything needed to repeat a separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    /// Mask dumps written by `separate`.
    pub masks: Format,
    /// Directory holding a heart database `manifest.toml`.
    pub heart_db: Option<PathBuf>,
    pub lung_db: Option<PathBuf>,
    pub stft: StftConfig,
    pub nmcf: NmcfConfig,
    pub baselines: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Nmcf,
            seed: 0,
            masks: Format::None,
            heart_db: None,
            lung_db: None,
            stft: StftConfig::default(),
            nmcf: NmcfConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates the seed and method into the solver settings; baselines
    /// share the co-factorisation solver settings.
    pub fn resolved(mut self) -> Self {
        self.nmcf.nmf.seed = self.seed;
        if let Some(mode) = self.method.mode() {
            self.nmcf.mode = mode;
        }
        self.baselines.nmf = self.nmcf.nmf;
        self
    }
}

#[derive(Debug, Parser)]
#[command(name = "chestsep", version, about = "Heart, lung and noise separation of chest sounds")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Separate one recording into stems.
    Separate(SeparateArgs),
    /// Run methods over a synthetic dataset and report errors against ground truth.
    Bench(BenchArgs),
    /// Generate synthetic mixtures with ground truth and exemplar databases.
    Synth(SynthArgs),
    /// Dump the factors and masks of a finished run.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct Overrides {
    /// nmcf, supervised, semi_supervised, shah or cq.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long, value_name = "DIR")]
    pub heart_db: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub lung_db: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Input WAV; resampled to the working rate.
    #[arg(long = "in", value_name = "WAV")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "DIR")]
    pub output: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Also write masks.
    #[arg(long, value_enum)]
    pub masks: Option<Format>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset written by `synth`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long = "out", value_name = "DIR")]
    pub output: PathBuf,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "nmcf,shah,cq")]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    None,
    White,
    Babble,
    Bursts,
    Mixed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    /// Number of mixtures.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long = "out", value_name = "DIR")]
    pub output: PathBuf,
    /// Seconds per mixture.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Power of heart + lung over noise, dB.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub snr: f64,
    #[arg(long, value_enum, default_value = "mixed")]
    pub noise: NoiseArg,
    /// Recordings per exemplar database.
    #[arg(long, default_value_t = 20)]
    pub db_size: usize,
    /// Seconds per exemplar recording.
    #[arg(long, default_value_t = 2.5)]
    pub db_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Summary,
    Masks,
    Dictionary,
    Activations,
    All,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Output directory of `separate`.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "summary")]
    pub what: What,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Where dumps go; defaults to `<run>/inspect`.
    #[arg(long = "out", value_name = "DIR")]
    pub output: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command and returns the text it prints.
pub fn run(cli: &Cli) -> Result<String> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Separate(a) => cmd_separate(base, a),
        Command::Bench(a) => cmd_bench(base, a),
        Command::Synth(a) => cmd_synth(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn apply(mut cfg: RunConfig, o: &Overrides) -> RunConfig {
    if let Some(m) = o.method {
        cfg.method = m;
    }
    if let Some(p) = &o.heart_db {
        cfg.heart_db = Some(p.clone());
    }
    if let Some(p) = &o.lung_db {
        cfg.lung_db = Some(p.clone());
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(n) = o.iterations {
        cfg.nmcf.nmf.max_iter = n;
    }
    cfg.resolved()
}

/// Databases needed by `method`, loaded at `rate` with the run's STFT.
fn load_databases(cfg: &RunConfig, method: Method, rate: u32) -> Result<(ExemplarDb, ExemplarDb)> {
    let (need_heart, need_lung) = match method {
        Method::Nmcf | Method::Supervised => (true, true),
        Method::SemiSupervised | Method::Cq => (true, false),
        Method::Shah => (false, false),
    };
    let load = |needed: bool, dir: &Option<PathBuf>, what: &str| -> Result<ExemplarDb> {
        match (needed, dir) {
            (false, _) => Ok(ExemplarDb::empty()),
            (true, Some(d)) => ExemplarDb::load(d, &cfg.stft, rate),
            (true, None) => Err(Error::InvalidArgument(format!(
                "method {method} needs a {what} database: pass --{what}-db DIR with a {}",
                nmcf::MANIFEST_NAME
            ))),
        }
    };
    Ok((
        load(need_heart, &cfg.heart_db, "heart")?,
        load(need_lung, &cfg.lung_db, "lung")?,
    ))
}

/// Runs one method on a buffer already at the working rate.
pub fn separate_with(
    mixture: &AudioBuffer,
    method: Method,
    heart_db: &ExemplarDb,
    lung_db: &ExemplarDb,
    cfg: &RunConfig,
) -> Result<SeparationResult> {
    match method {
        Method::Shah => baselines::shah_separate(mixture, &cfg.baselines, &cfg.stft),
        Method::Cq => baselines::cq_separate(mixture, heart_db, &cfg.baselines, &cfg.stft),
        m => {
            let mut nm = cfg.nmcf;
            nm.mode = m.mode().expect("exemplar methods have a mode");
            nmcf::separate(mixture, heart_db, lung_db, &nm, &cfg.stft)
        }
    }
}

fn component_names(blocks: &[Block]) -> Vec<String> {
    blocks
        .iter()
        .flat_map(|b| (0..b.size).map(move |i| format!("{}_{i}", b.name)))
        .collect()
}

/// Recovers the block layout from `name_index` column names.
fn blocks_from_names(names: &[String]) -> Result<Vec<Block>> {
    let mut blocks: Vec<Block> = Vec::new();
    for n in names {
        let (name, _) = n
            .rsplit_once('_')
            .ok_or_else(|| Error::InvalidArgument(format!("bad component name {n:?}")))?;
        match blocks.last_mut() {
            Some(b) if b.name == name => b.size += 1,
            _ => blocks.push(Block::new(name, 1)),
        }
    }
    Ok(blocks)
}

fn write_masks(dir: &Path, masks: &spectral::MaskSet, format: Format) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if format == Format::None {
        return Ok(written);
    }
    fs::create_dir_all(dir)?;
    for (name, mask) in masks.iter() {
        if format.csv() {
            let p = dir.join(format!("mask_{name}.csv"));
            export::save_matrix_csv(&p, &mask.values, None)?;
            written.push(p);
        }
        if format.png() {
            let p = dir.join(format!("mask_{name}.png"));
            export::save_mask_png(&p, &mask.values)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Writes stems, factors, cost trace and the effective configuration.
pub fn write_run(dir: &Path, result: &SeparationResult, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, stem) in &result.stems {
        let p = dir.join(format!("{name}.wav"));
        let clipped = audio_io::write_wav(&p, stem)?;
        if clipped > 0 {
            eprintln!("warning: {clipped} samples of {name} clipped");
        }
        written.push(p);
    }
    let p = dir.join(TRACE_FILE);
    result.cost_trace.write_csv(fs::File::create(&p)?)?;
    written.push(p);
    let names = component_names(result.dictionary.blocks());
    let p = dir.join(DICTIONARY_FILE);
    export::save_matrix_csv(&p, result.dictionary.matrix(), Some(&names))?;
    written.push(p);
    let p = dir.join(ACTIVATIONS_FILE);
    let h_t = result.mixture_activations.matrix().t().to_owned();
    export::save_matrix_csv(&p, &h_t, Some(&names))?;
    written.push(p);
    let p = dir.join(CONFIG_FILE);
    fs::write(&p, cfg.to_toml()?)?;
    written.push(p);
    written.extend(write_masks(dir, &result.masks, cfg.masks)?);
    Ok(written)
}

fn cmd_separate(base: RunConfig, a: &SeparateArgs) -> Result<String> {
    let mut cfg = apply(base, &a.overrides);
    if let Some(m) = a.masks {
        cfg.masks = m;
    }
    cfg.stft.validate()?;
    cfg.nmcf.nmf.validate()?;
    let input = audio_io::read_wav(&a.input)?;
    let mixture = audio_io::resample(&input, audio_io::WORKING_RATE)?;
    let (hdb, ldb) = load_databases(&cfg, cfg.method, mixture.sample_rate)?;
    let result = separate_with(&mixture, cfg.method, &hdb, &ldb, &cfg)?;
    let written = write_run(&a.output, &result, &cfg)?;
    let mut out = format!(
        "{}: {} iterations, cost {:.6e} -> {:.6e}\n",
        cfg.method,
        result.cost_trace.iterations(),
        result.cost_trace.initial().unwrap_or(f64::NAN),
        result.cost_trace.last().unwrap_or(f64::NAN),
    );
    for p in written {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}

/// Ground truth stored beside each synthetic mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub heart_rate_per_10s: f64,
    pub breath_rate_per_10s: f64,
    pub beat_times: Vec<f64>,
    pub spec: MixSpec,
}

/// One mixture of a dataset with its ground-truth stems.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub name: String,
    pub mixture: AudioBuffer,
    pub heart: AudioBuffer,
    pub lung: AudioBuffer,
    pub truth: SceneManifest,
}

/// Writes `mixture.wav`, the three stems and the ground-truth manifest.
pub fn write_scene(dir: &Path, scene: &synth::Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    audio_io::write_wav(dir.join("mixture.wav"), &scene.mix.mixture)?;
    audio_io::write_wav(dir.join("heart.wav"), &scene.mix.heart)?;
    audio_io::write_wav(dir.join("lung.wav"), &scene.mix.lung)?;
    audio_io::write_wav(dir.join("noise.wav"), &scene.mix.noise)?;
    let manifest = SceneManifest {
        heart_rate_per_10s: scene.heart_rate_per_10s(),
        breath_rate_per_10s: scene.breath_rate_per_10s(),
        beat_times: scene.beat_times.clone(),
        spec: scene.spec,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(SCENE_FILE), text)?;
    Ok(())
}

fn write_database(dir: &Path, prefix: &str, clips: &[AudioBuffer]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut item = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        let name = format!("{prefix}_{:03}.wav", i + 1);
        audio_io::write_wav(dir.join(&name), clip)?;
        item.push(DbEntry {
            path: name.into(),
            label: None,
            weight: 1.0,
        });
    }
    DbManifest { item }.write(dir)
}

fn cmd_synth(a: &SynthArgs) -> Result<String> {
    if a.n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    let kind = match a.noise {
        NoiseArg::None => None,
        NoiseArg::White => Some(NoiseKind::White),
        NoiseArg::Babble => Some(NoiseKind::Babble),
        NoiseArg::Bursts => Some(NoiseKind::Bursts),
        NoiseArg::Mixed => Some(NoiseKind::Mixed),
    };
    let mut out = String::new();
    for i in 0..a.n {
        let mut spec = match a.preset {
            Preset::Default => MixSpec::preset_default(a.seed + i as u64),
        };
        spec.duration = a.duration;
        spec.noise.kind = kind;
        spec.noise.snr_db = a.snr;
        let scene = synth::generate(&spec)?;
        let dir = a.output.join(format!("mix_{:03}", i + 1));
        write_scene(&dir, &scene)?;
        let _ = writeln!(
            out,
            "{}: heart {:.1} bpm, breathing {:.1}/min",
            dir.display(),
            spec.heart.rate_bpm,
            spec.lung.rate_bpm
        );
    }
    if a.db_size > 0 {
        let rate = audio_io::WORKING_RATE;
        write_database(
            &a.output.join("heart_db"),
            "heart",
            &synth::heart_exemplars(a.db_size, a.db_duration, rate, a.seed),
        )?;
        write_database(
            &a.output.join("lung_db"),
            "lung",
            &synth::lung_exemplars(a.db_size, a.db_duration, rate, a.seed),
        )?;
        let _ = writeln!(out, "wrote {} exemplars per database", a.db_size);
    }
    Ok(out)
}

/// Loads every `mix_*` style subdirectory holding a scene manifest, sorted
/// by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SCENE_FILE).is_file() && p.join("mixture.wav").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptyDatabase(format!(
            "no mixtures with a {SCENE_FILE} under {}",
            dir.display()
        )));
    }
    dirs.iter()
        .map(|d| {
            let truth: SceneManifest = toml::from_str(&fs::read_to_string(d.join(SCENE_FILE))?)
                .map_err(|e| Error::Config(format!("{}: {e}", d.display())))?;
            let read = |f: &str| -> Result<AudioBuffer> {
                audio_io::resample(&audio_io::read_wav(d.join(f))?, audio_io::WORKING_RATE)
            };
            Ok(DatasetItem {
                name: d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                mixture: read("mixture.wav")?,
                heart: read("heart.wav")?,
                lung: read("lung.wav")?,
                truth,
            })
        })
        .collect()
}

/// Scores of one method on one mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mixture: String,
    pub method: String,
    pub heart_sdr: f64,
    pub lung_sdr: f64,
    pub heart_rate: f64,
    pub heart_rate_truth: f64,
    pub breath_rate: f64,
    pub breath_rate_truth: f64,
}

/// Name of the unprocessed-mixture row in bench reports.
pub const MIXTURE_ROW: &str = "mixture";

fn score(item: &DatasetItem, method: &str, heart: &AudioBuffer, lung: &AudioBuffer) -> Result<BenchRecord> {
    Ok(BenchRecord {
        mixture: item.name.clone(),
        method: method.to_string(),
        heart_sdr: metrics::sdr(heart, &item.heart)?,
        lung_sdr: metrics::sdr(lung, &item.lung)?,
        heart_rate: metrics::heart_rate(heart)?.rate,
        heart_rate_truth: item.truth.heart_rate_per_10s,
        breath_rate: metrics::breathing_rate(lung)?.rate,
        breath_rate_truth: item.truth.breath_rate_per_10s,
    })
}

/// Runs each method over the dataset; the unprocessed mixture is scored
/// first under [`MIXTURE_ROW`].
pub fn bench(items: &[DatasetItem], methods: &[Method], cfg: &RunConfig, heart_db: &ExemplarDb, lung_db: &ExemplarDb) -> Result<Vec<BenchRecord>> {
    let mut records: Vec<BenchRecord> = items
        .iter()
        .map(|it| score(it, MIXTURE_ROW, &it.mixture, &it.mixture))
        .collect::<Result<_>>()?;
    for &m in methods {
        let rows: Vec<BenchRecord> = items
            .par_iter()
            .map(|it| {
                let r = separate_with(&it.mixture, m, heart_db, lung_db, cfg)?;
                let heart = r.stem(nmcf::HEART).expect("every method has a heart stem");
                let lung = r.stem(nmcf::LUNG).unwrap_or(heart);
                score(it, m.name(), heart, lung)
            })
            .collect::<Result<_>>()?;
        records.extend(rows);
    }
    Ok(records)
}

fn p_cell(c: &Comparison) -> String {
    match c {
        Comparison::PValue(p) => format!("{p:.6}"),
        Comparison::Insufficient(p) => format!("{p:.6} (insufficient n)"),
        Comparison::Degenerate => "degenerate".into(),
    }
}

fn compare(a: &[f64], b: &[f64]) -> Comparison {
    match metrics::signed_rank(a, b) {
        Ok(sr) if sr.n < metrics::MIN_PAIRS || a.len() < metrics::MIN_PAIRS => {
            Comparison::Insufficient(sr.p_value)
        }
        Ok(sr) => Comparison::PValue(sr.p_value),
        Err(_) => Comparison::Degenerate,
    }
}

/// Table of median absolute rate errors with IQR, median heart SDR, mean
/// (std) SDR improvement over the mixture and one-sided Wilcoxon p-values
/// against the mixture row, as CSV and as aligned text.
pub fn bench_report(records: &[BenchRecord]) -> Result<(String, String)> {
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let of = |m: &str| -> Vec<&BenchRecord> { records.iter().filter(|r| r.method == m).collect() };
    let base = of(MIXTURE_ROW);
    let base_sdr: Vec<f64> = base.iter().map(|r| r.heart_sdr).collect();
    let base_hr_err: Vec<f64> = base.iter().map(|r| (r.heart_rate - r.heart_rate_truth).abs()).collect();

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record([
        "method",
        "n",
        "hr_mae_median",
        "hr_mae_iqr",
        "br_mae_median",
        "br_mae_iqr",
        "heart_sdr_median",
        "sdr_gain_mean",
        "sdr_gain_std",
        "p_sdr_gt_mixture",
        "p_hr_err_lt_mixture",
    ])?;
    let mut text = format!(
        "{:<16} {:>3} {:>16} {:>16} {:>10} {:>16} {:>22} {:>22}\n",
        "method", "n", "HR MAE (IQR)", "BR MAE (IQR)", "heart SDR", "SDR gain mean (std)", "p SDR > mixture", "p HR err < mixture"
    );
    for m in &methods {
        let rows = of(m);
        let hr: Vec<f64> = rows.iter().map(|r| (r.heart_rate - r.heart_rate_truth).abs()).collect();
        let br: Vec<f64> = rows.iter().map(|r| (r.breath_rate - r.breath_rate_truth).abs()).collect();
        let sdr: Vec<f64> = rows.iter().map(|r| r.heart_sdr).collect();
        let (hr_med, hr_iqr) = metrics::median_iqr(&hr).unwrap_or((f64::NAN, f64::NAN));
        let (br_med, br_iqr) = metrics::median_iqr(&br).unwrap_or((f64::NAN, f64::NAN));
        let sdr_med = metrics::quantile(&sdr, 0.5).unwrap_or(f64::NAN);
        let paired = *m != MIXTURE_ROW && sdr.len() == base_sdr.len();
        let gains: Vec<f64> = if paired {
            sdr.iter().zip(&base_sdr).map(|(a, b)| a - b).collect()
        } else {
            Vec::new()
        };
        let (gain_mean, gain_std) = mean_std(&gains);
        let (p_sdr, p_hr) = if paired {
            (p_cell(&compare(&sdr, &base_sdr)), p_cell(&compare(&base_hr_err, &hr)))
        } else {
            ("-".to_string(), "-".to_string())
        };
        csv.write_record([
            m.to_string(),
            rows.len().to_string(),
            format!("{hr_med:.4}"),
            format!("{hr_iqr:.4}"),
            format!("{br_med:.4}"),
            format!("{br_iqr:.4}"),
            format!("{sdr_med:.4}"),
            format!("{gain_mean:.4}"),
            format!("{gain_std:.4}"),
            p_sdr.clone(),
            p_hr.clone(),
        ])?;
        let _ = writeln!(
            text,
            "{:<16} {:>3} {:>16} {:>16} {:>10.2} {:>22} {:>22} {:>22}",
            m,
            rows.len(),
            format!("{hr_med:.2} ({hr_iqr:.2})"),
            format!("{br_med:.2} ({br_iqr:.2})"),
            sdr_med,
            if paired { format!("{gain_mean:.2} ({gain_std:.2})") } else { "-".into() },
            p_sdr,
            p_hr,
        );
    }

    let samples: Vec<RateSample> = records
        .iter()
        .filter(|r| r.method != MIXTURE_ROW)
        .map(|r| RateSample {
            method: r.method.clone(),
            estimate: r.heart_rate,
            truth: r.heart_rate_truth,
        })
        .collect();
    let rep = metrics::rate_error_report(&samples);
    if !rep.tests.is_empty() {
        text.push_str("\nheart SDR, one-sided Wilcoxon (row better than column):\n");
        for a in methods.iter().filter(|m| **m != MIXTURE_ROW) {
            for b in methods.iter().filter(|m| **m != MIXTURE_ROW && *m != a) {
                let sa: Vec<f64> = of(a).iter().map(|r| r.heart_sdr).collect();
                let sb: Vec<f64> = of(b).iter().map(|r| r.heart_sdr).collect();
                if sa.len() == sb.len() {
                    let _ = writeln!(text, "  {a} > {b}: p = {}", p_cell(&compare(&sa, &sb)));
                }
            }
        }
        text.push_str("\nheart-rate error, one-sided Wilcoxon (smaller error first):\n");
        for t in &rep.tests {
            let _ = writeln!(text, "  {} < {}: p = {}", t.better, t.worse, p_cell(&t.result));
        }
    }
    let csv = String::from_utf8(csv.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    Ok((csv, text))
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn write_records(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "mixture",
        "method",
        "heart_sdr",
        "lung_sdr",
        "heart_rate",
        "heart_rate_truth",
        "breath_rate",
        "breath_rate_truth",
    ])?;
    for r in records {
        w.write_record([
            r.mixture.clone(),
            r.method.clone(),
            r.heart_sdr.to_string(),
            r.lung_sdr.to_string(),
            r.heart_rate.to_string(),
            r.heart_rate_truth.to_string(),
            r.breath_rate.to_string(),
            r.breath_rate_truth.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bench(base: RunConfig, a: &BenchArgs) -> Result<String> {
    let mut cfg = apply(base, &a.overrides);
    for (slot, name) in [(&mut cfg.heart_db, "heart_db"), (&mut cfg.lung_db, "lung_db")] {
        if slot.is_none() && a.data.join(name).join(nmcf::MANIFEST_NAME).is_file() {
            *slot = Some(a.data.join(name));
        }
    }
    if a.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods selected".into()));
    }
    let items = load_dataset(&a.data)?;
    let rate = audio_io::WORKING_RATE;
    let need = |m: Method| a.methods.iter().any(|x| *x == m);
    let union = if need(Method::Nmcf) || need(Method::Supervised) {
        Method::Nmcf
    } else if need(Method::SemiSupervised) || need(Method::Cq) {
        Method::Cq
    } else {
        Method::Shah
    };
    let (hdb, ldb) = load_databases(&cfg, union, rate)?;
    let records = bench(&items, &a.methods, &cfg, &hdb, &ldb)?;
    let (csv, text) = bench_report(&records)?;
    fs::create_dir_all(&a.output)?;
    fs::write(a.output.join("report.csv"), &csv)?;
    fs::write(a.output.join("report.txt"), &text)?;
    write_records(&a.output.join("results.csv"), &records)?;
    fs::write(a.output.join(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(text)
}

/// Factors of a finished run read back from its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedRun {
    pub config: RunConfig,
    pub dictionary: Dictionary,
    pub activations: Activations,
}

pub fn load_run(dir: &Path) -> Result<SavedRun> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let (names, w) = export::load_matrix_csv(dir.join(DICTIONARY_FILE), true)?;
    let (h_names, h_t) = export::load_matrix_csv(dir.join(ACTIVATIONS_FILE), true)?;
    let names = names.unwrap_or_default();
    if h_names.as_ref() != Some(&names) {
        return Err(Error::ShapeMismatch(
            "dictionary and activation component names differ".into(),
        ));
    }
    let blocks = blocks_from_names(&names)?;
    Ok(SavedRun {
        config,
        dictionary: Dictionary::new(w, blocks.clone())?,
        activations: Activations::new(h_t.t().to_owned(), blocks)?,
    })
}

fn dump(dir: &Path, stem: &str, m: &Array2<f64>, format: Format, mask: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if format.csv() {
        let p = dir.join(format!("{stem}.csv"));
        export::save_matrix_csv(&p, m, None)?;
        out.push(p);
    }
    if format.png() {
        let p = dir.join(format!("{stem}.png"));
        if mask {
            export::save_mask_png(&p, m)?;
        } else {
            export::save_heatmap_png(&p, m)?;
        }
        out.push(p);
    }
    Ok(out)
}

fn cmd_inspect(a: &InspectArgs) -> Result<String> {
    let run = load_run(&a.run)?;
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", run.config.method);
    let _ = writeln!(
        out,
        "dictionary: {} bins x {} components; activations: {} frames",
        run.dictionary.matrix().nrows(),
        run.dictionary.components(),
        run.activations.matrix().ncols()
    );
    for b in run.dictionary.blocks() {
        let act = run.activations.block(&b.name).expect("blocks match");
        let _ = writeln!(out, "  {:<8} {:>4} components, activation sum {:.6e}", b.name, b.size, act.sum());
    }
    if a.what == What::Summary {
        return Ok(out);
    }
    let format = if a.format == Format::None { Format::Csv } else { a.format };
    let dir = a.output.clone().unwrap_or_else(|| a.run.join("inspect"));
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    if matches!(a.what, What::Masks | What::All) {
        let masks = spectral::build_masks(&run.dictionary, &run.activations)?;
        for (name, mask) in masks.iter() {
            written.extend(dump(&dir, &format!("mask_{name}"), &mask.values, format, true)?);
        }
    }
    if matches!(a.what, What::Dictionary | What::All) {
        for b in run.dictionary.blocks() {
            let w = run.dictionary.block(&b.name).expect("named block").to_owned();
            written.extend(dump(&dir, &format!("dictionary_{}", b.name), &w, format, false)?);
        }
    }
    if matches!(a.what, What::Activations | What::All) {
        for b in run.activations.blocks() {
            let h = run.activations.block(&b.name).expect("named block").to_owned();
            written.extend(dump(&dir, &format!("activations_{}", b.name), &h, format, false)?);
        }
    }
    for p in written {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}
