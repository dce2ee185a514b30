//! Non-negative matrix co-factorisation of a noisy chest recording with
//! weighted exemplar databases of clean heart and lung sounds.
//!
//! The dictionary is `[Ŵ_heart | Ŵ_lung | Ŵ_noise]`. The mixture is
//! factorised against all three blocks while every heart exemplar is
//! factorised against `Ŵ_heart` alone and every lung exemplar against
//! `Ŵ_lung` alone, each exemplar term scaled by its weight λ. The noise
//! block sees only the mixture. Separation ends with soft masks
//! `Ŵ_b H_b / Ŵ H` applied to the mixture magnitude and resynthesis with the
//! mixture phase.
//!
//! Supervised and semi-supervised NMF are provided as two-phase variants:
//! train the labelled blocks on exemplars, then freeze them while fitting the
//! mixture.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, AudioBuffer};
use crate::error::{Error, Result};
use crate::nmf_core::{
    block_range, init_factors, rng_for, uniform_matrix, Activations, Block, CostTrace, Dictionary,
    Engine, NmfConfig,
};
use crate::spectral::{self, MaskSet, Spectrogram, StftConfig};

pub const HEART: &str = "heart";
pub const LUNG: &str = "lung";
pub const NOISE: &str = "noise";

/// File name of a database manifest inside its directory.
pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub magnitude: Array2<f64>,
    pub weight: f64,
    pub label: String,
}

/// Clean reference spectrograms with per-item weights in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExemplarDb {
    items: Vec<Exemplar>,
}

impl ExemplarDb {
    pub fn new(items: Vec<Exemplar>) -> Result<Self> {
        for it in &items {
            if !(0.0..=1.0).contains(&it.weight) {
                return Err(Error::InvalidArgument(format!(
                    "exemplar {} has weight {} outside [0, 1]",
                    it.label, it.weight
                )));
            }
            if it.magnitude.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "exemplar {} has negative or non-finite magnitude",
                    it.label
                )));
            }
        }
        if let Some(first) = items.first() {
            let f = first.magnitude.nrows();
            if let Some(bad) = items.iter().find(|i| i.magnitude.nrows() != f) {
                return Err(Error::ShapeMismatch(format!(
                    "exemplar {} has {} bins, expected {f}",
                    bad.label,
                    bad.magnitude.nrows()
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Analyses each recording with `cfg`; all weights 1.
    pub fn from_audio(recordings: &[AudioBuffer], cfg: &StftConfig) -> Result<Self> {
        let items = recordings
            .iter()
            .enumerate()
            .map(|(i, buf)| {
                Ok(Exemplar {
                    magnitude: spectral::stft(buf, cfg)?.magnitude,
                    weight: 1.0,
                    label: format!("item{i:03}"),
                })
            })
            .collect::<Result<_>>()?;
        Self::new(items)
    }

    /// Loads `dir/manifest.toml`, resampling items to `rate` and analysing
    /// them with `cfg`.
    pub fn load(dir: impl AsRef<Path>, cfg: &StftConfig, rate: u32) -> Result<Self> {
        let manifest = DbManifest::read(dir.as_ref())?;
        let base = dir.as_ref();
        let items = manifest
            .item
            .iter()
            .map(|entry| {
                let buf = audio_io::read_wav(base.join(&entry.path))?;
                let buf = audio_io::resample(&buf, rate)?;
                let label = entry.label.clone().unwrap_or_else(|| {
                    entry
                        .path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                });
                Ok(Exemplar {
                    magnitude: spectral::stft(&buf, cfg)?.magnitude,
                    weight: entry.weight,
                    label,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(items)
    }

    pub fn items(&self) -> &[Exemplar] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn with_weights(mut self, weight: f64) -> Result<Self> {
        self.items.iter_mut().for_each(|i| i.weight = weight);
        Self::new(self.items)
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbEntry {
    /// WAV path relative to the manifest directory.
    pub path: PathBuf,
    pub label: Option<String>,
    /// λ weight in [0, 1].
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// Database manifest: a TOML file with one `[[item]]` table per recording.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbManifest {
    #[serde(default)]
    pub item: Vec<DbEntry>,
}

impl DbManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let text = std::fs::read_to_string(&path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_NAME), text)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cofactorise,
    Supervised,
    SemiSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Components {
    pub heart: usize,
    pub lung: usize,
    pub noise: usize,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            heart: 20,
            lung: 20,
            noise: 10,
        }
    }
}

impl Components {
    pub fn total(&self) -> usize {
        self.heart + self.lung + self.noise
    }

    /// Non-empty blocks in heart, lung, noise order.
    pub fn blocks(&self) -> Vec<Block> {
        [(HEART, self.heart), (LUNG, self.lung), (NOISE, self.noise)]
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(name, n)| Block::new(name, n))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmcfConfig {
    pub nmf: NmfConfig,
    pub components: Components,
    pub mode: Mode,
}

impl Default for NmcfConfig {
    fn default() -> Self {
        Self {
            nmf: NmfConfig::default(),
            components: Components::default(),
            mode: Mode::Cofactorise,
        }
    }
}

/// Factors produced by a co-factorisation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoFactorization {
    pub dictionary: Dictionary,
    pub activations: Activations,
    pub heart_activations: Vec<Array2<f64>>,
    pub lung_activations: Vec<Array2<f64>>,
    pub trace: CostTrace,
}

fn check_bins(v_m: &Array2<f64>, db: &ExemplarDb, what: &str) -> Result<()> {
    if let Some(bad) = db.items.iter().find(|i| i.magnitude.nrows() != v_m.nrows()) {
        return Err(Error::ShapeMismatch(format!(
            "{what} exemplar {} has {} bins, mixture has {}",
            bad.label,
            bad.magnitude.nrows(),
            v_m.nrows()
        )));
    }
    Ok(())
}

/// Stream of the generator used for exemplar activations; the dictionary and
/// mixture activations come from the default stream, exactly as in a blind
/// factorisation with the same seed.
const EXEMPLAR_STREAM: u64 = 1;
const PHASE_TWO_STREAM: u64 = 2;

/// Joint factorisation of the mixture magnitude with heart and lung exemplar
/// terms and a free noise block.
pub fn cofactorize(
    v_m: &Array2<f64>,
    heart_db: &ExemplarDb,
    lung_db: &ExemplarDb,
    cfg: &NmcfConfig,
) -> Result<CoFactorization> {
    cfg.nmf.validate()?;
    if heart_db.is_empty() || lung_db.is_empty() {
        return Err(Error::EmptyDatabase(format!(
            "co-factorisation needs heart and lung exemplars (got {} and {})",
            heart_db.len(),
            lung_db.len()
        )));
    }
    check_bins(v_m, heart_db, HEART)?;
    check_bins(v_m, lung_db, LUNG)?;
    let comps = cfg.components;
    if comps.heart == 0 || comps.lung == 0 {
        return Err(Error::InvalidArgument(
            "heart and lung blocks need at least one component".into(),
        ));
    }
    let blocks = comps.blocks();
    let (bins, frames) = v_m.dim();
    let k = comps.total();
    let heart_cols = 0..comps.heart;
    let lung_cols = comps.heart..comps.heart + comps.lung;

    let mut rng = rng_for(cfg.nmf.seed);
    let (w, h_m) = init_factors(&mut rng, bins, k, frames);
    let mut ex_rng = rng_for(cfg.nmf.seed);
    ex_rng.set_stream(EXEMPLAR_STREAM);

    let mut engine = Engine::new(w, &cfg.nmf);
    engine.set_groups(&blocks);
    engine.add_term(v_m, 0..k, 1.0, h_m)?;
    for item in heart_db.items() {
        let h = uniform_matrix(&mut ex_rng, comps.heart, item.magnitude.ncols());
        engine.add_term(&item.magnitude, heart_cols.clone(), item.weight, h)?;
    }
    for item in lung_db.items() {
        let h = uniform_matrix(&mut ex_rng, comps.lung, item.magnitude.ncols());
        engine.add_term(&item.magnitude, lung_cols.clone(), item.weight, h)?;
    }
    let trace = engine.run(cfg.nmf.max_iter, cfg.nmf.tol)?;
    let (w, mut hs) = engine.into_parts();
    let lung_activations = hs.split_off(1 + heart_db.len());
    let heart_activations = hs.split_off(1);
    let h_m = hs.remove(0);
    Ok(CoFactorization {
        dictionary: Dictionary::new(w, blocks.clone())?,
        activations: Activations::new(h_m, blocks)?,
        heart_activations,
        lung_activations,
        trace,
    })
}

/// Trains the blocks in `trained` (name, db) on their exemplars alone; the
/// returned matrix has every block's columns, untrained ones left at their
/// random initialisation.
fn train_blocks(
    bins: usize,
    comps: &Components,
    trained: &[(&str, &ExemplarDb)],
    nmf: &NmfConfig,
) -> Result<(Array2<f64>, CostTrace)> {
    let blocks = comps.blocks();
    let mut rng = rng_for(nmf.seed);
    let (w, _) = init_factors(&mut rng, bins, comps.total(), 1);
    let mut ex_rng = rng_for(nmf.seed);
    ex_rng.set_stream(EXEMPLAR_STREAM);
    let mut engine = Engine::new(w, nmf);
    engine.set_groups(&blocks);
    for (name, db) in trained {
        let cols = block_range(&blocks, name).ok_or_else(|| Error::InvalidArgument(format!("block {name} has no components")))?;
        for item in db.items() {
            let h = uniform_matrix(&mut ex_rng, cols.len(), item.magnitude.ncols());
            engine.add_term(&item.magnitude, cols.clone(), item.weight, h)?;
        }
    }
    let trace = engine.run(nmf.max_iter, nmf.tol)?;
    Ok((engine.into_parts().0, trace))
}

/// Fits mixture activations (and any unfrozen columns) with the trained
/// columns held fixed.
fn fit_with_frozen(
    v_m: &Array2<f64>,
    w: Array2<f64>,
    frozen: std::ops::Range<usize>,
    comps: &Components,
    nmf: &NmfConfig,
) -> Result<(Dictionary, Activations, CostTrace)> {
    let blocks = comps.blocks();
    let mut rng = rng_for(nmf.seed);
    rng.set_stream(PHASE_TWO_STREAM);
    let h = uniform_matrix(&mut rng, comps.total(), v_m.ncols());
    let mut engine = Engine::new(w, nmf);
    engine.set_groups(&blocks);
    engine.freeze(frozen);
    engine.add_term(v_m, 0..comps.total(), 1.0, h)?;
    let trace = engine.run(nmf.max_iter, nmf.tol)?;
    let (w, mut hs) = engine.into_parts();
    Ok((
        Dictionary::new(w, blocks.clone())?,
        Activations::new(hs.remove(0), blocks)?,
        trace,
    ))
}

/// Two-phase supervised NMF: heart and lung blocks are learned from their
/// databases, then frozen while the mixture activations are fitted. A
/// non-empty noise block stays free in the second phase.
pub fn supervised_nmf(
    v_m: &Array2<f64>,
    heart_db: &ExemplarDb,
    lung_db: &ExemplarDb,
    cfg: &NmcfConfig,
) -> Result<CoFactorization> {
    cfg.nmf.validate()?;
    if heart_db.is_empty() || lung_db.is_empty() {
        return Err(Error::EmptyDatabase(
            "supervised NMF needs heart and lung exemplars".into(),
        ));
    }
    check_bins(v_m, heart_db, HEART)?;
    check_bins(v_m, lung_db, LUNG)?;
    let comps = cfg.components;
    if comps.heart == 0 || comps.lung == 0 {
        return Err(Error::InvalidArgument(
            "heart and lung blocks need at least one component".into(),
        ));
    }
    let (w, _) = train_blocks(
        v_m.nrows(),
        &comps,
        &[(HEART, heart_db), (LUNG, lung_db)],
        &cfg.nmf,
    )?;
    let (dictionary, activations, trace) =
        fit_with_frozen(v_m, w, 0..comps.heart + comps.lung, &comps, &cfg.nmf)?;
    Ok(CoFactorization {
        dictionary,
        activations,
        heart_activations: Vec::new(),
        lung_activations: Vec::new(),
        trace,
    })
}

/// Semi-supervised NMF: only the heart block is trained (then frozen); the
/// lung and noise blocks are learned blind from the mixture.
pub fn semi_supervised_nmf(
    v_m: &Array2<f64>,
    heart_db: &ExemplarDb,
    cfg: &NmcfConfig,
) -> Result<CoFactorization> {
    cfg.nmf.validate()?;
    if heart_db.is_empty() {
        return Err(Error::EmptyDatabase(
            "semi-supervised NMF needs heart exemplars".into(),
        ));
    }
    check_bins(v_m, heart_db, HEART)?;
    let comps = cfg.components;
    if comps.heart == 0 {
        return Err(Error::InvalidArgument("heart block needs components".into()));
    }
    let (w, _) = train_blocks(v_m.nrows(), &comps, &[(HEART, heart_db)], &cfg.nmf)?;
    let (dictionary, activations, trace) =
        fit_with_frozen(v_m, w, 0..comps.heart, &comps, &cfg.nmf)?;
    Ok(CoFactorization {
        dictionary,
        activations,
        heart_activations: Vec::new(),
        lung_activations: Vec::new(),
        trace,
    })
}

/// Separation method tag carried by results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nmcf,
    Supervised,
    SemiSupervised,
    Shah,
    Cq,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Nmcf,
        Method::Supervised,
        Method::SemiSupervised,
        Method::Shah,
        Method::Cq,
    ];

    /// Factorisation mode for the exemplar-based methods.
    pub fn mode(&self) -> Option<Mode> {
        match self {
            Method::Nmcf => Some(Mode::Cofactorise),
            Method::Supervised => Some(Mode::Supervised),
            Method::SemiSupervised => Some(Mode::SemiSupervised),
            Method::Shah | Method::Cq => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Nmcf => "nmcf",
            Method::Supervised => "supervised",
            Method::SemiSupervised => "semi_supervised",
            Method::Shah => "shah",
            Method::Cq => "cq",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method {s:?}; expected one of nmcf, supervised, semi_supervised, shah, cq"
                ))
            })
    }
}

impl From<Mode> for Method {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Cofactorise => Method::Nmcf,
            Mode::Supervised => Method::Supervised,
            Mode::SemiSupervised => Method::SemiSupervised,
        }
    }
}

/// Separated stems with the factors and masks that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub method: Method,
    /// One stem per dictionary block, in block order.
    pub stems: Vec<(String, AudioBuffer)>,
    pub masks: MaskSet,
    pub dictionary: Dictionary,
    pub mixture_activations: Activations,
    pub cost_trace: CostTrace,
    pub stft: StftConfig,
    pub nmf: NmfConfig,
}

impl SeparationResult {
    pub fn stem(&self, name: &str) -> Option<&AudioBuffer> {
        self.stems.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    /// Sample-wise sum of all stems.
    pub fn stem_sum(&self) -> Option<AudioBuffer> {
        let (_, first) = self.stems.first()?;
        let mut acc = first.clone();
        for (_, s) in &self.stems[1..] {
            acc.samples
                .iter_mut()
                .zip(&s.samples)
                .for_each(|(a, b)| *a += b);
        }
        Some(acc)
    }
}

/// Masks the mixture spectrogram per block and resynthesises each stem with
/// the mixture phase. Stems are zero-padded to `len` samples, covering the
/// tail that no full frame reaches.
pub fn reconstruct(
    spec: &Spectrogram,
    dictionary: &Dictionary,
    activations: &Activations,
    len: usize,
) -> Result<(MaskSet, Vec<(String, AudioBuffer)>)> {
    let masks = spectral::build_masks(dictionary, activations)?;
    let stems = masks
        .iter()
        .map(|(name, mask)| {
            let part = spectral::apply_mask(spec, mask)?;
            let mut stem = spectral::istft(&part)?;
            stem.samples.resize(len.max(stem.len()), 0.0);
            Ok((name.to_string(), stem))
        })
        .collect::<Result<_>>()?;
    Ok((masks, stems))
}

/// Full pipeline: STFT, factorisation in the configured mode, soft masks and
/// per-stem inverse STFT.
pub fn separate(
    mixture: &AudioBuffer,
    heart_db: &ExemplarDb,
    lung_db: &ExemplarDb,
    cfg: &NmcfConfig,
    stft_cfg: &StftConfig,
) -> Result<SeparationResult> {
    let spec = spectral::stft(mixture, stft_cfg)?;
    let factors = match cfg.mode {
        Mode::Cofactorise => cofactorize(&spec.magnitude, heart_db, lung_db, cfg)?,
        Mode::Supervised => supervised_nmf(&spec.magnitude, heart_db, lung_db, cfg)?,
        Mode::SemiSupervised => semi_supervised_nmf(&spec.magnitude, heart_db, cfg)?,
    };
    let (masks, stems) = reconstruct(&spec, &factors.dictionary, &factors.activations, mixture.len())?;
    Ok(SeparationResult {
        method: cfg.mode.into(),
        stems,
        masks,
        dictionary: factors.dictionary,
        mixture_activations: factors.activations,
        cost_trace: factors.trace,
        stft: *stft_cfg,
        nmf: cfg.nmf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmf_core::{factorize_blocks, normalize_columns};
    use crate::synth;

    fn short_stft() -> StftConfig {
        StftConfig {
            window_length: 256,
            fft_length: 256,
            ..StftConfig::default()
        }
    }

    fn small_cfg(iters: usize) -> NmcfConfig {
        NmcfConfig {
            nmf: NmfConfig {
                max_iter: iters,
                ..NmfConfig::default()
            },
            components: Components {
                heart: 4,
                lung: 4,
                noise: 2,
            },
            mode: Mode::Cofactorise,
        }
    }

    fn dbs(n: usize, stft: &StftConfig) -> (ExemplarDb, ExemplarDb) {
        (
            ExemplarDb::from_audio(&synth::heart_exemplars(n, 2.5, 4000, 3), stft).unwrap(),
            ExemplarDb::from_audio(&synth::lung_exemplars(n, 2.5, 4000, 3), stft).unwrap(),
        )
    }

    fn energy_share(r: &SeparationResult, name: &str) -> f64 {
        let total: f64 = r.stems.iter().map(|(_, s)| s.energy()).sum();
        r.stem(name).unwrap().energy() / total
    }

    #[test]
    fn empty_databases_rejected() {
        let v = Array2::from_elem((129, 10), 1.0);
        let cfg = small_cfg(5);
        let (h, _) = dbs(1, &short_stft());
        let empty = ExemplarDb::empty();
        for (a, b) in [(&empty, &empty), (&h, &empty), (&empty, &h)] {
            assert!(matches!(cofactorize(&v, a, b, &cfg), Err(Error::EmptyDatabase(_))));
        }
        assert!(matches!(supervised_nmf(&v, &empty, &h, &cfg), Err(Error::EmptyDatabase(_))));
        assert!(matches!(semi_supervised_nmf(&v, &empty, &cfg), Err(Error::EmptyDatabase(_))));
    }

    #[test]
    fn bin_mismatch_rejected() {
        let v = Array2::from_elem((65, 10), 1.0);
        let (h, l) = dbs(1, &short_stft());
        assert!(matches!(
            cofactorize(&v, &h, &l, &small_cfg(5)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn weights_validated() {
        let item = |w: f64| Exemplar {
            magnitude: Array2::ones((3, 2)),
            weight: w,
            label: "x".into(),
        };
        assert!(ExemplarDb::new(vec![item(1.0), item(0.0)]).is_ok());
        assert!(ExemplarDb::new(vec![item(1.5)]).is_err());
        assert!(ExemplarDb::new(vec![item(-0.1)]).is_err());
    }

    #[test]
    fn zero_weights_reduce_to_blind_factorisation() {
        let stft = short_stft();
        let (h, l) = dbs(2, &stft);
        let (h, l) = (h.with_weights(0.0).unwrap(), l.with_weights(0.0).unwrap());
        let mix = synth::generate(&synth::MixSpec {
            duration: 2.0,
            ..synth::MixSpec::preset_default(4)
        })
        .unwrap();
        let v = spectral::stft(&mix.mix.mixture, &stft).unwrap().magnitude;
        let cfg = small_cfg(40);
        let co = cofactorize(&v, &h, &l, &cfg).unwrap();
        let blind = factorize_blocks(&v, &cfg.components.blocks(), &cfg.nmf).unwrap();
        assert_eq!(co.dictionary, blind.dictionary);
        assert_eq!(co.activations, blind.activations);
        assert_eq!(co.trace, blind.trace);
    }

    #[test]
    fn exemplar_sum_is_fitted() {
        let stft = short_stft();
        let heart = synth::heart_exemplars(1, 2.5, 4000, 9);
        let lung = synth::lung_exemplars(1, 2.5, 4000, 9);
        let (hdb, ldb) = (
            ExemplarDb::from_audio(&heart, &stft).unwrap(),
            ExemplarDb::from_audio(&lung, &stft).unwrap(),
        );
        let sum: Vec<f64> = heart[0]
            .samples
            .iter()
            .zip(&lung[0].samples)
            .map(|(a, b)| a + b)
            .collect();
        let v = spectral::stft(&AudioBuffer::new(sum, 4000).unwrap(), &stft)
            .unwrap()
            .magnitude;
        let co = cofactorize(&v, &hdb, &ldb, &small_cfg(500)).unwrap();
        let first = co.trace.initial().unwrap();
        let last = co.trace.last().unwrap();
        assert!(last <= 0.05 * first, "{last} vs {first}");
    }

    #[test]
    fn objective_non_increasing_without_sparsity() {
        let stft = short_stft();
        let (h, l) = dbs(2, &stft);
        let h = ExemplarDb::new(
            h.items()
                .iter()
                .cloned()
                .zip([1.0, 0.4])
                .map(|(mut e, w)| {
                    e.weight = w;
                    e
                })
                .collect(),
        )
        .unwrap();
        let mix = synth::generate(&synth::MixSpec {
            duration: 2.0,
            ..synth::MixSpec::preset_default(6)
        })
        .unwrap();
        let v = spectral::stft(&mix.mix.mixture, &stft).unwrap().magnitude;
        let mut cfg = small_cfg(150);
        cfg.nmf.sparsity = 0.0;
        let co = cofactorize(&v, &h, &l, &cfg).unwrap();
        assert_eq!(co.trace.non_monotone_steps(1e-9), 0);
        let w = co.dictionary.matrix();
        assert!(w.iter().all(|&x| x >= 0.0));
        for c in w.columns() {
            assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-9);
        }
        assert_eq!(normalize_columns(&co.dictionary).matrix().dim(), w.dim());
        assert_eq!(co.heart_activations.len(), 2);
        assert_eq!(co.lung_activations.len(), 2);
    }

    #[test]
    fn pure_heart_mixture_lands_in_heart_stem() {
        let stft = StftConfig::default();
        let spec = synth::MixSpec {
            noise: synth::NoiseSpec {
                kind: None,
                snr_db: 0.0,
            },
            duration: 5.0,
            ..synth::MixSpec::preset_default(12)
        };
        let heart = synth::gen_heart(&spec.heart, spec.duration, 4000).audio;
        // matched: the same heart recorded at other moments
        let recordings: Vec<AudioBuffer> = [0.13, 0.26]
            .iter()
            .map(|shift| {
                let mut h = spec.heart;
                h.onset += shift;
                synth::gen_heart(&h, 2.5, 4000).audio
            })
            .collect();
        let hdb = ExemplarDb::from_audio(&recordings, &stft).unwrap();
        let ldb = ExemplarDb::from_audio(&synth::lung_exemplars(3, 2.5, 4000, 12), &stft).unwrap();
        let cfg = NmcfConfig {
            nmf: NmfConfig {
                max_iter: 200,
                ..NmfConfig::default()
            },
            ..NmcfConfig::default()
        };
        let r = separate(&heart, &hdb, &ldb, &cfg, &stft).unwrap();
        assert!(energy_share(&r, HEART) >= 0.9, "{}", energy_share(&r, HEART));
        assert_eq!(r.stem(HEART).unwrap().len(), heart.len());
    }

    #[test]
    fn silent_input_gives_silent_stems() {
        let stft = short_stft();
        let (h, l) = dbs(1, &stft);
        let r = separate(&AudioBuffer::silence(8000, 4000), &h, &l, &small_cfg(20), &stft).unwrap();
        for (_, s) in &r.stems {
            assert!(s.energy() <= 1e-20);
        }
    }

    #[test]
    fn masks_partition_and_stems_sum() {
        let stft = short_stft();
        let (h, l) = dbs(2, &stft);
        let mix = synth::generate(&synth::MixSpec {
            duration: 2.0,
            ..synth::MixSpec::preset_default(2)
        })
        .unwrap();
        for mode in [Mode::Cofactorise, Mode::Supervised, Mode::SemiSupervised] {
            let cfg = NmcfConfig {
                mode,
                ..small_cfg(30)
            };
            let r = separate(&mix.mix.mixture, &h, &l, &cfg, &stft).unwrap();
            let total = r.masks.total().unwrap();
            assert!(total.iter().all(|v| (v - 1.0).abs() <= 1e-6));
            let spec = spectral::stft(&mix.mix.mixture, &stft).unwrap();
            let mut whole = spectral::istft(&spec).unwrap().samples;
            whole.resize(mix.mix.mixture.len(), 0.0);
            let sum = r.stem_sum().unwrap().samples;
            let err: f64 = sum.iter().zip(&whole).map(|(a, b)| (a - b).powi(2)).sum();
            let norm: f64 = whole.iter().map(|v| v * v).sum();
            assert!((err / norm).sqrt() <= 1e-4, "{mode:?}");
        }
    }

    #[test]
    fn supervised_keeps_trained_dictionary() {
        let stft = short_stft();
        let (h, l) = dbs(2, &stft);
        let mix = synth::generate(&synth::MixSpec {
            duration: 2.0,
            ..synth::MixSpec::preset_default(5)
        })
        .unwrap();
        let v = spectral::stft(&mix.mix.mixture, &stft).unwrap().magnitude;
        let cfg = NmcfConfig {
            mode: Mode::Supervised,
            ..small_cfg(30)
        };
        let comps = cfg.components;
        let (trained, _) =
            train_blocks(v.nrows(), &comps, &[(HEART, &h), (LUNG, &l)], &cfg.nmf).unwrap();
        let fit = supervised_nmf(&v, &h, &l, &cfg).unwrap();
        let fixed = comps.heart + comps.lung;
        let w = fit.dictionary.matrix();
        assert_eq!(
            w.slice(ndarray::s![.., ..fixed]),
            trained.slice(ndarray::s![.., ..fixed])
        );
        assert_eq!(fit, supervised_nmf(&v, &h, &l, &cfg).unwrap());
    }

    #[test]
    fn supervised_recognises_training_item() {
        let stft = StftConfig::default();
        let hearts = synth::heart_exemplars(3, 5.0, 4000, 21);
        let hdb = ExemplarDb::from_audio(&hearts, &stft).unwrap();
        let ldb = ExemplarDb::from_audio(&synth::lung_exemplars(3, 5.0, 4000, 21), &stft).unwrap();
        let cfg = NmcfConfig {
            mode: Mode::Supervised,
            nmf: NmfConfig {
                max_iter: 200,
                ..NmfConfig::default()
            },
            components: Components {
                heart: 20,
                lung: 20,
                noise: 0,
            },
        };
        let r = separate(&hearts[1], &hdb, &ldb, &cfg, &stft).unwrap();
        let v = &hdb.items()[1].magnitude;
        let frame_energy = v.map_axis(ndarray::Axis(0), |c| c.dot(&c));
        let peak = frame_energy.iter().cloned().fold(0.0, f64::max);
        let mask = &r.masks.get(HEART).unwrap().values;
        let (mut acc, mut n) = (0.0, 0.0);
        for t in 0..v.ncols() {
            if frame_energy[t] >= 0.1 * peak {
                // energy-weighted mean over the frame
                let col = v.column(t);
                let w: f64 = col.iter().map(|x| x * x).sum();
                acc += mask.column(t).iter().zip(col).map(|(m, x)| m * x * x).sum::<f64>() / w;
                n += 1.0;
            }
        }
        assert!(acc / n >= 0.8, "{}", acc / n);
    }

    #[test]
    fn semi_supervised_pure_heart() {
        let stft = StftConfig::default();
        let hearts = synth::heart_exemplars(3, 5.0, 4000, 31);
        let hdb = ExemplarDb::from_audio(&hearts, &stft).unwrap();
        let cfg = NmcfConfig {
            mode: Mode::SemiSupervised,
            nmf: NmfConfig {
                max_iter: 200,
                ..NmfConfig::default()
            },
            ..NmcfConfig::default()
        };
        let r = separate(&hearts[0], &hdb, &ExemplarDb::empty(), &cfg, &stft).unwrap();
        assert!(1.0 - energy_share(&r, HEART) <= 0.1, "{}", energy_share(&r, HEART));
    }

    #[test]
    fn semi_supervised_without_free_blocks() {
        let stft = short_stft();
        let (h, _) = dbs(1, &stft);
        let cfg = NmcfConfig {
            mode: Mode::SemiSupervised,
            components: Components {
                heart: 3,
                lung: 0,
                noise: 0,
            },
            ..small_cfg(10)
        };
        let mix = synth::generate(&synth::MixSpec {
            duration: 2.0,
            ..synth::MixSpec::preset_default(1)
        })
        .unwrap();
        let r = separate(&mix.mix.mixture, &h, &ExemplarDb::empty(), &cfg, &stft).unwrap();
        assert_eq!(r.masks.names(), vec![HEART]);
        assert!(r.masks.total().unwrap().iter().all(|v| (v - 1.0).abs() <= 1e-6));
        let again = separate(&mix.mix.mixture, &h, &ExemplarDb::empty(), &cfg, &stft).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn manifest_round_trip_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth::heart_exemplars(1, 1.0, 8000, 1).remove(0);
        audio_io::write_wav(dir.path().join("a.wav"), &clip).unwrap();
        let manifest = DbManifest {
            item: vec![DbEntry {
                path: "a.wav".into(),
                label: Some("first".into()),
                weight: 0.5,
            }],
        };
        manifest.write(dir.path()).unwrap();
        assert_eq!(DbManifest::read(dir.path()).unwrap(), manifest);
        let db = ExemplarDb::load(dir.path(), &short_stft(), 4000).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.items()[0].weight, 0.5);
        assert_eq!(db.items()[0].label, "first");
        // 8000 samples at 8 kHz become 4000 at the working rate
        assert_eq!(db.items()[0].magnitude.ncols(), (4000 - 256) / 64 + 1);

        std::fs::write(dir.path().join(MANIFEST_NAME), "[[item]]\npath = \"a.wav\"\n").unwrap();
        assert_eq!(DbManifest::read(dir.path()).unwrap().item[0].weight, 1.0);
        let missing = tempfile::tempdir().unwrap();
        assert!(matches!(
            ExemplarDb::load(missing.path(), &short_stft(), 4000),
            Err(Error::MissingFile(_))
        ));
    }
}
