//! Blind-NMF baselines that cluster components into heart and lung after a
//! single factorisation of the mixture.
//!
//! * Shah: 20 components, seeded by 50-250 Hz and 250-1000 Hz band power and
//!   grown greedily by cosine similarity to the cluster means.
//! * Canadas-Quesada: 119 components ranked by the sum of three min-max
//!   normalised criteria (spectral correlation with a heart database,
//!   temporal correlation with detected beats, inverted spectral roll-off);
//!   the top 55 are heart.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};
use crate::metrics::{self, HeartRateConfig};
use crate::nmcf::{self, ExemplarDb, Method, SeparationResult, HEART, LUNG};
use crate::nmf_core::{self, Activations, Block, Dictionary, NmfConfig};
use crate::spectral::{self, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Not serialised: command-line runs share the co-factorisation settings.
    #[serde(skip)]
    pub nmf: NmfConfig,
    pub shah_components: usize,
    pub cq_components: usize,
    pub cq_heart_components: usize,
    pub heart_band_hz: (f64, f64),
    pub lung_band_hz: (f64, f64),
    /// Gaussian smoothing (standard deviation, Hz) applied to bases before
    /// the Shah similarity comparison.
    pub similarity_smoothing_hz: f64,
    pub rolloff_fraction: f64,
    pub heart_rate: HeartRateConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            nmf: NmfConfig::default(),
            shah_components: 20,
            cq_components: 119,
            cq_heart_components: 55,
            heart_band_hz: (50.0, 250.0),
            lung_band_hz: (250.0, 1000.0),
            similarity_smoothing_hz: 50.0,
            rolloff_fraction: 0.85,
            heart_rate: HeartRateConfig::default(),
        }
    }
}

/// Energy of `w` in bins whose centre frequency lies in `[lo, hi)`.
pub fn band_power(w: ArrayView1<'_, f64>, bin_hz: f64, band: (f64, f64)) -> f64 {
    w.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * bin_hz;
            f >= band.0 && f < band.1
        })
        .map(|(_, v)| v * v)
        .sum()
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let den = (a.dot(&a) * b.dot(&b)).sqrt();
    if den > 0.0 {
        a.dot(&b) / den
    } else {
        0.0
    }
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let den = (saa * sbb).sqrt();
    if den > 0.0 && den.is_finite() {
        sab / den
    } else {
        0.0
    }
}

/// Gaussian smoothing of a spectrum along frequency; `sigma` in bins.
fn smooth(x: ArrayView1<'_, f64>, sigma: f64) -> Array1<f64> {
    if sigma <= 0.0 {
        return x.to_owned();
    }
    let half = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let n = x.len() as isize;
    Array1::from_iter((0..n).map(|i| {
        let mut acc = 0.0;
        for (j, k) in (-half..=half).zip(&kernel) {
            let t = i + j;
            if (0..n).contains(&t) {
                acc += k * x[t as usize];
            }
        }
        acc
    }))
}

/// Heart membership per dictionary column for the Shah clustering.
///
/// The column with the most 50-250 Hz power seeds heart and the column with
/// the most 250-1000 Hz power seeds lung, counting only columns whose power
/// in that band exceeds their power in the other one. A column winning both
/// goes to the band where it is stronger and the other band reseeds from its
/// runner-up; a band without any dominated column starts empty. Unassigned
/// columns then join clusters one at a time, always taking the highest
/// cosine similarity between any unassigned column and any cluster mean,
/// both smoothed along frequency.
pub fn shah_assign(w: &Array2<f64>, bin_hz: f64, cfg: &BaselineConfig) -> Result<Vec<bool>> {
    let k = w.ncols();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "Shah clustering needs at least two components".into(),
        ));
    }
    let hp: Vec<f64> = w
        .axis_iter(Axis(1))
        .map(|c| band_power(c, bin_hz, cfg.heart_band_hz))
        .collect();
    let lp: Vec<f64> = w
        .axis_iter(Axis(1))
        .map(|c| band_power(c, bin_hz, cfg.lung_band_hz))
        .collect();
    let best = |p: &[f64], other: &[f64], skip: Option<usize>| {
        (0..k)
            .filter(|&c| p[c] > other[c] && Some(c) != skip)
            .min_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)))
    };
    let h_seed = best(&hp, &lp, None);
    let l_seed = best(&lp, &hp, None);

    let sigma = cfg.similarity_smoothing_hz / bin_hz;
    let smoothed: Vec<Array1<f64>> = w.axis_iter(Axis(1)).map(|c| smooth(c, sigma)).collect();
    let mut label: Vec<Option<bool>> = vec![None; k];
    let mut sums = [Array1::zeros(w.nrows()), Array1::zeros(w.nrows())];
    let mut counts = [0.0, 0.0];
    for (cl, seed) in [(0, h_seed), (1, l_seed)] {
        if let Some(c) = seed {
            label[c] = Some(cl == 0);
            sums[cl] += &smoothed[c];
            counts[cl] += 1.0;
        }
    }
    if counts == [0.0, 0.0] {
        return Ok(vec![hp.iter().sum::<f64>() >= lp.iter().sum::<f64>(); k]);
    }
    while label.iter().any(Option::is_none) {
        let mut best: Option<(f64, usize, usize)> = None;
        for c in (0..k).filter(|&c| label[c].is_none()) {
            for (cl, sum) in sums.iter().enumerate().filter(|(cl, _)| counts[*cl] > 0.0) {
                let mean = sum / counts[cl];
                let s = cosine(smoothed[c].view(), mean.view());
                if best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, c, cl));
                }
            }
        }
        let (_, c, cl) = best.expect("an unassigned column exists");
        label[c] = Some(cl == 0);
        sums[cl] += &smoothed[c];
        counts[cl] += 1.0;
    }
    Ok(label.into_iter().map(|l| l.unwrap_or(false)).collect())
}

/// Per-component clustering criteria of the Canadas-Quesada baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCriteria {
    pub spectral_correlation: Vec<f64>,
    pub temporal_correlation: Vec<f64>,
    /// Hz.
    pub rolloff: Vec<f64>,
    /// Sum of the min-max normalised criteria, roll-off inverted.
    pub combined: Vec<f64>,
}

/// Maximum Pearson correlation between `w_k` and the frame-mean magnitude
/// spectrum of each database item.
pub fn spectral_correlation(w_k: ArrayView1<'_, f64>, heart_db: &ExemplarDb) -> Result<f64> {
    let means = db_mean_spectra(heart_db, w_k.len())?;
    Ok(max_correlation(w_k, &means))
}

fn db_mean_spectra(db: &ExemplarDb, bins: usize) -> Result<Vec<Array1<f64>>> {
    db.items()
        .iter()
        .map(|it| {
            if it.magnitude.nrows() != bins {
                return Err(Error::ShapeMismatch(format!(
                    "database item {} has {} bins, basis has {bins}",
                    it.label,
                    it.magnitude.nrows()
                )));
            }
            Ok(it
                .magnitude
                .mean_axis(Axis(1))
                .unwrap_or_else(|| Array1::zeros(bins)))
        })
        .collect()
}

fn max_correlation(w_k: ArrayView1<'_, f64>, means: &[Array1<f64>]) -> f64 {
    means
        .iter()
        .map(|m| pearson(w_k, m.view()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Pearson correlation between an activation row and the beat gate.
pub fn temporal_correlation(h_k: ArrayView1<'_, f64>, gate: &[f64]) -> Result<f64> {
    if h_k.len() != gate.len() {
        return Err(Error::ShapeMismatch(format!(
            "activation has {} frames, gate {}",
            h_k.len(),
            gate.len()
        )));
    }
    Ok(pearson(h_k, ArrayView1::from(gate)))
}

/// Lowest frequency at which the cumulative energy of `w_k` reaches
/// `fraction` of its total; Nyquist for an all-zero basis.
pub fn spectral_rolloff(w_k: ArrayView1<'_, f64>, fraction: f64, bin_hz: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "roll-off fraction {fraction} outside (0, 1)"
        )));
    }
    let nyquist = (w_k.len().saturating_sub(1)) as f64 * bin_hz;
    let total: f64 = w_k.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return Ok(nyquist);
    }
    let mut acc = 0.0;
    for (k, v) in w_k.iter().enumerate() {
        acc += v * v;
        if acc >= fraction * total {
            return Ok(k as f64 * bin_hz);
        }
    }
    Ok(nyquist)
}

fn min_max(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        x.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; x.len()]
    }
}

impl ClusterCriteria {
    pub fn from_raw(spectral: Vec<f64>, temporal: Vec<f64>, rolloff: Vec<f64>) -> Self {
        let (s, t, r) = (min_max(&spectral), min_max(&temporal), min_max(&rolloff));
        let combined = (0..s.len()).map(|k| s[k] + t[k] + (1.0 - r[k])).collect();
        Self {
            spectral_correlation: spectral,
            temporal_correlation: temporal,
            rolloff,
            combined,
        }
    }
}

/// Criteria for every component of a factorisation.
pub fn cluster_criteria(
    w: &Array2<f64>,
    h: &Array2<f64>,
    heart_db: &ExemplarDb,
    gate: &[f64],
    bin_hz: f64,
    fraction: f64,
) -> Result<ClusterCriteria> {
    let means = db_mean_spectra(heart_db, w.nrows())?;
    let spectral = w
        .axis_iter(Axis(1))
        .map(|c| max_correlation(c, &means))
        .collect();
    let temporal = h
        .axis_iter(Axis(0))
        .map(|r| temporal_correlation(r, gate))
        .collect::<Result<_>>()?;
    let rolloff = w
        .axis_iter(Axis(1))
        .map(|c| spectral_rolloff(c, fraction, bin_hz))
        .collect::<Result<_>>()?;
    Ok(ClusterCriteria::from_raw(spectral, temporal, rolloff))
}

/// Marks the `n_heart` best components by combined score, ties going to the
/// lower roll-off.
pub fn cq_assign(criteria: &ClusterCriteria, n_heart: usize) -> Vec<bool> {
    let k = criteria.combined.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        criteria.combined[b]
            .total_cmp(&criteria.combined[a])
            .then(criteria.rolloff[a].total_cmp(&criteria.rolloff[b]))
    });
    let mut heart = vec![false; k];
    for &c in order.iter().take(n_heart) {
        heart[c] = true;
    }
    heart
}

/// Reorders factors into a `[heart | lung]` block layout.
pub fn split_blocks(w: &Array2<f64>, h: &Array2<f64>, heart: &[bool]) -> Result<(Dictionary, Activations)> {
    let order: Vec<usize> = (0..heart.len())
        .filter(|&c| heart[c])
        .chain((0..heart.len()).filter(|&c| !heart[c]))
        .collect();
    let n_heart = heart.iter().filter(|&&x| x).count();
    let blocks = vec![Block::new(HEART, n_heart), Block::new(LUNG, heart.len() - n_heart)];
    Ok((
        Dictionary::new(w.select(Axis(1), &order), blocks.clone())?,
        Activations::new(h.select(Axis(0), &order), blocks)?,
    ))
}

fn check_mixture(mixture: &AudioBuffer, stft_cfg: &StftConfig) -> Result<()> {
    stft_cfg.validate()?;
    if mixture.len() < stft_cfg.window_length {
        return Err(Error::TooShort(format!(
            "mixture has {} samples, window is {}",
            mixture.len(),
            stft_cfg.window_length
        )));
    }
    Ok(())
}

fn finish(
    method: Method,
    mixture: &AudioBuffer,
    spec: &spectral::Spectrogram,
    dictionary: Dictionary,
    activations: Activations,
    trace: nmf_core::CostTrace,
    stft_cfg: &StftConfig,
    nmf: &NmfConfig,
) -> Result<SeparationResult> {
    let (masks, stems) = nmcf::reconstruct(spec, &dictionary, &activations, mixture.len())?;
    Ok(SeparationResult {
        method,
        stems,
        masks,
        dictionary,
        mixture_activations: activations,
        cost_trace: trace,
        stft: *stft_cfg,
        nmf: *nmf,
    })
}

/// Shah baseline: blind factorisation and band-seeded clustering.
pub fn shah_separate(
    mixture: &AudioBuffer,
    cfg: &BaselineConfig,
    stft_cfg: &StftConfig,
) -> Result<SeparationResult> {
    check_mixture(mixture, stft_cfg)?;
    let spec = spectral::stft(mixture, stft_cfg)?;
    let fact = nmf_core::factorize(&spec.magnitude, cfg.shah_components, &cfg.nmf)?;
    let (w, h) = (fact.dictionary.matrix(), fact.activations.matrix());
    let heart = shah_assign(w, spec.bin_hz(), cfg)?;
    let (d, a) = split_blocks(w, h, &heart)?;
    finish(Method::Shah, mixture, &spec, d, a, fact.trace, stft_cfg, &cfg.nmf)
}

/// Canadas-Quesada baseline: blind factorisation and criteria ranking. The
/// beat gate comes from heart-rate detection on the mixture itself.
pub fn cq_separate(
    mixture: &AudioBuffer,
    heart_db: &ExemplarDb,
    cfg: &BaselineConfig,
    stft_cfg: &StftConfig,
) -> Result<SeparationResult> {
    if heart_db.is_empty() {
        return Err(Error::EmptyDatabase(
            "Canadas-Quesada clustering needs a heart reference database".into(),
        ));
    }
    check_mixture(mixture, stft_cfg)?;
    if cfg.cq_heart_components > cfg.cq_components {
        return Err(Error::InvalidArgument(format!(
            "{} heart components requested out of {}",
            cfg.cq_heart_components, cfg.cq_components
        )));
    }
    let spec = spectral::stft(mixture, stft_cfg)?;
    let fact = nmf_core::factorize(&spec.magnitude, cfg.cq_components, &cfg.nmf)?;
    let (w, h) = (fact.dictionary.matrix(), fact.activations.matrix());
    let beats = match metrics::heart_rate_with(mixture, &cfg.heart_rate) {
        Ok(est) => est.event_times,
        Err(Error::TooShort(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    let gate = metrics::beat_gate(
        &beats,
        spec.frames(),
        stft_cfg.hop()?,
        stft_cfg.window_length,
        mixture.sample_rate,
        cfg.heart_rate.gate_half_width,
    );
    let criteria = cluster_criteria(w, h, heart_db, &gate, spec.bin_hz(), cfg.rolloff_fraction)?;
    let heart = cq_assign(&criteria, cfg.cq_heart_components);
    let (d, a) = split_blocks(w, h, &heart)?;
    finish(Method::Cq, mixture, &spec, d, a, fact.trace, stft_cfg, &cfg.nmf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmcf::Exemplar;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BIN_HZ: f64 = 4000.0 / 2048.0;

    fn bump(bins: usize, centre_hz: f64, width_hz: f64) -> Array1<f64> {
        Array1::from_iter((0..bins).map(|k| {
            let d = (k as f64 * BIN_HZ - centre_hz) / width_hz;
            (-0.5 * d * d).exp()
        }))
    }

    fn unit(v: Array1<f64>) -> Array1<f64> {
        let n = v.dot(&v).sqrt();
        v / n
    }

    #[test]
    fn rolloff_cases() {
        let mut imp = Array1::zeros(1025);
        imp[100] = 1.0;
        let r = spectral_rolloff(imp.view(), 0.85, BIN_HZ).unwrap();
        assert!((r - 100.0 * BIN_HZ).abs() < 1e-9);
        let flat = Array1::from_elem(1025, 1.0);
        let r = spectral_rolloff(flat.view(), 0.85, BIN_HZ).unwrap();
        assert!((r - 0.85 * 2000.0).abs() <= BIN_HZ);
        let zero = Array1::zeros(1025);
        assert_eq!(spectral_rolloff(zero.view(), 0.85, BIN_HZ).unwrap(), 2000.0);
        let heart = bump(1025, 120.0, 40.0);
        let lung = bump(1025, 400.0, 80.0);
        assert!(
            spectral_rolloff(heart.view(), 0.85, BIN_HZ).unwrap()
                < spectral_rolloff(lung.view(), 0.85, BIN_HZ).unwrap()
        );
        assert!(spectral_rolloff(flat.view(), 1.0, BIN_HZ).is_err());
    }

    fn db_of(spectra: &[Array1<f64>]) -> ExemplarDb {
        let items = spectra
            .iter()
            .enumerate()
            .map(|(i, s)| Exemplar {
                magnitude: s.clone().insert_axis(Axis(1)).broadcast((s.len(), 3)).unwrap().to_owned(),
                weight: 1.0,
                label: format!("h{i}"),
            })
            .collect();
        ExemplarDb::new(items).unwrap()
    }

    #[test]
    fn spectral_correlation_cases() {
        let a = bump(64, 20.0, 10.0);
        let db = db_of(&[a.clone(), bump(64, 90.0, 10.0)]);
        assert!((spectral_correlation(a.view(), &db).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spectral_correlation(Array1::from_elem(64, 0.3).view(), &db).unwrap(), 0.0);

        // remove the components along both centred item spectra
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let centre = |v: &Array1<f64>| v - v.mean().unwrap();
        let basis: Vec<Array1<f64>> = db
            .items()
            .iter()
            .map(|i| centre(&i.magnitude.column(0).to_owned()))
            .collect();
        let q0 = unit(basis[0].clone());
        let q1 = unit(&basis[1] - &(&q0 * q0.dot(&basis[1])));
        let mut v = centre(&Array1::from_iter((0..64).map(|_| rng.random::<f64>())));
        v = &v - &(&q0 * q0.dot(&v));
        v = &v - &(&q1 * q1.dot(&v));
        let w = &v - v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spectral_correlation(w.view(), &db).unwrap() <= 1e-12);
    }

    #[test]
    fn temporal_correlation_cases() {
        let gate = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let h = Array1::from(gate.to_vec());
        assert!((temporal_correlation(h.view(), &gate).unwrap() - 1.0).abs() < 1e-12);
        let inv = h.mapv(|g| 1.0 - g);
        assert!((temporal_correlation(inv.view(), &gate).unwrap() + 1.0).abs() < 1e-12);
        assert!(temporal_correlation(h.view(), &gate[..7]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let (mr, mg) = (r.iter().sum::<f64>() / 8.0, gate.iter().sum::<f64>() / 8.0);
        let mut num = 0.0;
        let mut dr = 0.0;
        let mut dg = 0.0;
        for i in 0..8 {
            num += (r[i] - mr) * (gate[i] - mg);
            dr += (r[i] - mr).powi(2);
            dg += (gate[i] - mg).powi(2);
        }
        let got = temporal_correlation(ArrayView1::from(&r[..]), &gate).unwrap();
        assert!((got - num / (dr * dg).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn combined_score_ignores_affine_rescaling() {
        let s = vec![0.1, 0.5, 0.9, 0.3];
        let t = vec![-0.2, 0.4, 0.0, 0.8];
        let r = vec![100.0, 400.0, 250.0, 900.0];
        let base = ClusterCriteria::from_raw(s.clone(), t.clone(), r.clone());
        let scaled = ClusterCriteria::from_raw(
            s.iter().map(|v| 3.0 * v - 1.0).collect(),
            t,
            r.iter().map(|v| 0.5 * v + 7.0).collect(),
        );
        for (a, b) in base.combined.iter().zip(&scaled.combined) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cq_takes_top_scores_with_rolloff_tiebreak() {
        let c = ClusterCriteria {
            spectral_correlation: vec![0.0; 4],
            temporal_correlation: vec![0.0; 4],
            rolloff: vec![300.0, 100.0, 200.0, 50.0],
            combined: vec![1.0, 2.0, 2.0, 0.5],
        };
        assert_eq!(cq_assign(&c, 1), vec![false, true, false, false]);
        assert_eq!(cq_assign(&c, 3), vec![true, true, true, false]);
    }

    fn two_band_dictionary() -> Array2<f64> {
        let cols = [
            bump(1025, 100.0, 20.0),
            bump(1025, 500.0, 60.0),
            bump(1025, 130.0, 25.0),
            bump(1025, 450.0, 50.0),
            bump(1025, 160.0, 30.0),
            bump(1025, 700.0, 80.0),
        ];
        let mut w = Array2::zeros((1025, cols.len()));
        for (i, c) in cols.into_iter().enumerate() {
            w.column_mut(i).assign(&unit(c));
        }
        w
    }

    #[test]
    fn shah_groups_by_band() {
        let w = two_band_dictionary();
        let heart = shah_assign(&w, BIN_HZ, &BaselineConfig::default()).unwrap();
        assert_eq!(heart, vec![true, false, true, false, true, false]);
    }

    #[test]
    fn shah_reseeds_when_one_column_wins_both_bands() {
        // column 0 straddles 250 Hz and leads both bands
        let mut w = Array2::zeros((1025, 3));
        w.column_mut(0).assign(&unit(bump(1025, 240.0, 30.0)));
        w.column_mut(1).assign(&unit(bump(1025, 1500.0, 400.0)));
        w.column_mut(2).assign(&unit(bump(1025, 1800.0, 400.0)));
        let cfg = BaselineConfig::default();
        let hp = band_power(w.column(0), BIN_HZ, cfg.heart_band_hz);
        let lp = band_power(w.column(0), BIN_HZ, cfg.lung_band_hz);
        assert!(hp > lp);
        assert!(lp > band_power(w.column(1), BIN_HZ, cfg.lung_band_hz));
        assert!(lp > band_power(w.column(2), BIN_HZ, cfg.lung_band_hz));
        let heart = shah_assign(&w, BIN_HZ, &cfg).unwrap();
        assert_eq!(heart, vec![true, false, false]);
    }

    #[test]
    fn shah_leaves_band_without_dominant_column_empty() {
        let mut w = Array2::zeros((1025, 4));
        for (i, f) in [95.0, 100.0, 105.0, 110.0].into_iter().enumerate() {
            w.column_mut(i).assign(&unit(bump(1025, f, 15.0)));
        }
        let heart = shah_assign(&w, BIN_HZ, &BaselineConfig::default()).unwrap();
        assert_eq!(heart, vec![true; 4]);
    }

    #[test]
    fn smoothing_preserves_mass_away_from_edges() {
        let mut x = Array1::zeros(200);
        x[100] = 1.0;
        let y = smooth(x.view(), 5.0);
        let k: f64 = (-15..=15).map(|d: i32| (-0.5 * (d as f64 / 5.0).powi(2)).exp()).sum();
        assert!((y.sum() - k).abs() < 1e-12);
        assert_eq!(y.iter().cloned().fold(0.0, f64::max), y[100]);
        assert_eq!(smooth(x.view(), 0.0), x);
    }

    #[test]
    fn assignments_follow_columns_under_permutation() {
        let w = two_band_dictionary();
        let perm = [3, 0, 5, 1, 4, 2];
        let wp = w.select(Axis(1), &perm);
        let cfg = BaselineConfig::default();
        let a = shah_assign(&w, BIN_HZ, &cfg).unwrap();
        let b = shah_assign(&wp, BIN_HZ, &cfg).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            assert_eq!(b[j], a[p]);
        }
        let crit = ClusterCriteria::from_raw(
            vec![0.9, 0.1, 0.8, 0.2, 0.7, 0.0],
            vec![0.5, 0.1, 0.4, 0.3, 0.6, 0.2],
            vec![120.0, 600.0, 150.0, 480.0, 190.0, 800.0],
        );
        let permuted = ClusterCriteria::from_raw(
            perm.iter().map(|&p| crit.spectral_correlation[p]).collect(),
            perm.iter().map(|&p| crit.temporal_correlation[p]).collect(),
            perm.iter().map(|&p| crit.rolloff[p]).collect(),
        );
        let a = cq_assign(&crit, 3);
        let b = cq_assign(&permuted, 3);
        for (j, &p) in perm.iter().enumerate() {
            assert_eq!(b[j], a[p]);
        }
    }

    #[test]
    fn split_blocks_orders_heart_first() {
        let w = Array2::from_shape_fn((2, 3), |(r, c)| (r * 3 + c) as f64 + 1.0);
        let h = Array2::from_shape_fn((3, 2), |(r, c)| (r * 2 + c) as f64 + 1.0);
        let (d, a) = split_blocks(&w, &h, &[false, true, false]).unwrap();
        assert_eq!(d.block(HEART).unwrap().column(0).to_vec(), vec![2.0, 5.0]);
        assert_eq!(a.block(LUNG).unwrap().row(1).to_vec(), vec![5.0, 6.0]);
        assert_eq!(d.matrix().dot(a.matrix()), w.dot(&h));
    }

    #[test]
    fn cq_requires_database() {
        let mix = AudioBuffer::silence(8000, 4000);
        assert!(matches!(
            cq_separate(&mix, &ExemplarDb::empty(), &BaselineConfig::default(), &StftConfig::default()),
            Err(Error::EmptyDatabase(_))
        ));
    }
}
