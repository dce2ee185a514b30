//! β-divergence objectives and sparsity-regularised multiplicative updates
//! with a column-normalised dictionary.
//!
//! The model is `V ≈ Ŵ H` where `Ŵ` has unit-L2 columns. Activations get
//! an L1 penalty `μ ||H||₁`; the dictionary update uses the normalisation
//! aware gradient split so the penalty cannot be dodged by rescaling.
//!
//! The low-level `*_step` helpers operate on raw matrices and a precomputed
//! model `Λ = Ŵ H`; both the blind driver here and the co-factoriser reuse
//! them so that degenerate configurations of the latter reproduce the former
//! bit for bit.

use std::io::Write;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FLOOR: f64 = 1e-12;

/// A named, contiguous group of dictionary columns / activation rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub size: usize,
}

impl Block {
    pub fn new(name: impl Into<String>, size: usize) -> Self {
        Self {
            name: name.into(),
            size,
        }
    }
}

fn check_blocks(blocks: &[Block], total: usize) -> Result<()> {
    let sum: usize = blocks.iter().map(|b| b.size).sum();
    if sum != total {
        return Err(Error::ShapeMismatch(format!(
            "block sizes sum to {sum}, matrix has {total} components"
        )));
    }
    for (i, b) in blocks.iter().enumerate() {
        if blocks[..i].iter().any(|o| o.name == b.name) {
            return Err(Error::InvalidArgument(format!("duplicate block name {}", b.name)));
        }
    }
    Ok(())
}

pub(crate) fn block_range(blocks: &[Block], name: &str) -> Option<Range<usize>> {
    let mut start = 0;
    for b in blocks {
        if b.name == name {
            return Some(start..start + b.size);
        }
        start += b.size;
    }
    None
}

fn check_non_negative(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// Non-negative F x K basis matrix partitioned into column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    matrix: Array2<f64>,
    blocks: Vec<Block>,
}

impl Dictionary {
    pub fn new(matrix: Array2<f64>, blocks: Vec<Block>) -> Result<Self> {
        check_non_negative(&matrix, "dictionary")?;
        check_blocks(&blocks, matrix.ncols())?;
        Ok(Self { matrix, blocks })
    }

    pub fn single(matrix: Array2<f64>) -> Result<Self> {
        let k = matrix.ncols();
        Self::new(matrix, vec![Block::new("all", k)])
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn components(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn block_range(&self, name: &str) -> Option<Range<usize>> {
        block_range(&self.blocks, name)
    }

    pub fn block(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let r = self.block_range(name)?;
        Some(self.matrix.slice(s![.., r]))
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }
}

/// Non-negative K x T activation matrix whose rows mirror dictionary blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    matrix: Array2<f64>,
    blocks: Vec<Block>,
}

impl Activations {
    pub fn new(matrix: Array2<f64>, blocks: Vec<Block>) -> Result<Self> {
        check_non_negative(&matrix, "activations")?;
        check_blocks(&blocks, matrix.nrows())?;
        Ok(Self { matrix, blocks })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_range(&self, name: &str) -> Option<Range<usize>> {
        block_range(&self.blocks, name)
    }

    pub fn block(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let r = self.block_range(name)?;
        Some(self.matrix.slice(s![r, ..]))
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmfConfig {
    /// Divergence order: 0 Itakura-Saito, 1 Kullback-Leibler, 2 Euclidean.
    pub beta: f64,
    /// L1 weight on activations.
    pub sparsity: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub floor: f64,
    /// Relative cost decrease below which iteration stops; 0 disables.
    pub tol: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            sparsity: 0.001,
            max_iter: 500,
            seed: 0,
            floor: DEFAULT_FLOOR,
            tol: 0.0,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        if !(self.sparsity >= 0.0) {
            return Err(Error::Config("sparsity must be non-negative".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("floor must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config("tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// `D_β(x | y)` for a single pair.
pub fn beta_divergence(x: f64, y: f64, beta: f64) -> Result<f64> {
    if !x.is_finite() || !y.is_finite() || !beta.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite divergence input ({x}, {y}, β={beta})"
        )));
    }
    if x < 0.0 || y <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "divergence needs x ≥ 0 and y > 0, got ({x}, {y})"
        )));
    }
    Ok(divergence_unchecked(x, y, beta))
}

#[inline]
fn divergence_unchecked(x: f64, y: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        if x == 0.0 {
            y
        } else {
            x * (x.ln() - y.ln()) + (y - x)
        }
    } else if beta == 0.0 {
        let r = x / y;
        r - r.ln() - 1.0
    } else if beta == 2.0 {
        0.5 * (x - y) * (x - y)
    } else {
        (x.powf(beta) - y.powf(beta) - beta * y.powf(beta - 1.0) * (x - y)) / (beta * (beta - 1.0))
    }
}

/// Sum of entrywise divergences between `v` and a model `lambda`.
pub(crate) fn divergence_sum(v: &Array2<f64>, lambda: &Array2<f64>, beta: f64) -> f64 {
    let mut acc = 0.0;
    Zip::from(v).and(lambda).for_each(|&x, &y| {
        acc += divergence_unchecked(x, y, beta);
    });
    acc
}

fn check_shapes(v: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> Result<()> {
    if v.nrows() != w.nrows() || w.ncols() != h.nrows() || v.ncols() != h.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "V {:?}, W {:?}, H {:?}",
            v.dim(),
            w.dim(),
            h.dim()
        )));
    }
    Ok(())
}

/// Divergence and penalty parts of the regularised objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub divergence: f64,
    pub sparsity: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.divergence + self.sparsity
    }
}

pub(crate) fn cost_terms_raw(
    v: &Array2<f64>,
    lambda: &Array2<f64>,
    h: &Array2<f64>,
    beta: f64,
    mu: f64,
) -> CostTerms {
    CostTerms {
        divergence: divergence_sum(v, lambda, beta),
        sparsity: mu * h.sum(),
    }
}

pub fn cost_terms(
    v: &Array2<f64>,
    dict: &Dictionary,
    act: &Activations,
    cfg: &NmfConfig,
) -> Result<CostTerms> {
    check_shapes(v, dict.matrix(), act.matrix())?;
    let lambda = dict.matrix().dot(act.matrix());
    Ok(cost_terms_raw(v, &lambda, act.matrix(), cfg.beta, cfg.sparsity))
}

/// `D_β(V | Ŵ H) + μ ||H||₁`.
pub fn total_cost(
    v: &Array2<f64>,
    dict: &Dictionary,
    act: &Activations,
    cfg: &NmfConfig,
) -> Result<f64> {
    Ok(cost_terms(v, dict, act, cfg)?.total())
}

/// `V ⊗ Λ^{β-2}` and, unless β = 1 (where it is all ones), `Λ^{β-1}`.
fn ratio_terms(v: &Array2<f64>, lambda: &Array2<f64>, beta: f64) -> (Array2<f64>, Option<Array2<f64>>) {
    if beta == 1.0 {
        let mut p = v.clone();
        Zip::from(&mut p).and(lambda).for_each(|p, &l| *p /= l);
        (p, None)
    } else {
        let mut p = v.clone();
        Zip::from(&mut p)
            .and(lambda)
            .for_each(|p, &l| *p *= l.powf(beta - 2.0));
        (p, Some(lambda.mapv(|l| l.powf(beta - 1.0))))
    }
}

/// One multiplicative activation step against model `lambda = W H`.
pub(crate) fn activation_step(
    v: &Array2<f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    lambda: &Array2<f64>,
    beta: f64,
    mu: f64,
    floor: f64,
) -> Array2<f64> {
    let (p, q) = ratio_terms(v, lambda, beta);
    let num = w.t().dot(&p);
    let den = match q {
        Some(q) => w.t().dot(&q),
        None => {
            // Wᵀ 1 is the column sum of W, repeated across frames
            let colsum = w.sum_axis(Axis(0));
            colsum
                .insert_axis(Axis(1))
                .broadcast((w.ncols(), h.ncols()))
                .unwrap()
                .to_owned()
        }
    };
    let mut out = h.to_owned();
    Zip::from(&mut out)
        .and(&num)
        .and(&den)
        .for_each(|o, &n, &d| *o = (*o * n / (d + mu)).max(floor));
    out
}

/// Gradient halves for the dictionary: `A = (V ⊗ Λ^{β-2}) Hᵀ` and
/// `B = Λ^{β-1} Hᵀ`, both F x K.
pub(crate) fn dictionary_stats(
    v: &Array2<f64>,
    h: ArrayView2<'_, f64>,
    lambda: &Array2<f64>,
    beta: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (p, q) = ratio_terms(v, lambda, beta);
    let a = p.dot(&h.t());
    let b = match q {
        Some(q) => q.dot(&h.t()),
        None => {
            let rowsum: Array1<f64> = h.sum_axis(Axis(1));
            rowsum
                .insert_axis(Axis(0))
                .broadcast((v.nrows(), h.nrows()))
                .unwrap()
                .to_owned()
        }
    };
    (a, b)
}

/// Normalisation-aware multiplicative dictionary step followed by column
/// normalisation:
///
/// `W ← Ŵ ⊗ (A + Ŵ ⊗ 1 1ᵀ(Ŵ ⊗ B)) / (B + Ŵ ⊗ 1 1ᵀ(Ŵ ⊗ A))`
pub(crate) fn dictionary_step(
    w: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    floor: f64,
) -> Array2<f64> {
    let wb = (w * b).sum_axis(Axis(0));
    let wa = (w * a).sum_axis(Axis(0));
    let mut out = w.clone();
    Zip::indexed(&mut out).for_each(|(f, k), x| {
        let wk = w[[f, k]];
        let num = a[[f, k]] + wk * wb[k];
        let den = b[[f, k]] + wk * wa[k];
        *x = (wk * num / den).max(floor);
    });
    normalize_matrix(&mut out, floor);
    out.mapv_inplace(|x| x.max(floor));
    out
}

fn normalize_matrix(m: &mut Array2<f64>, floor: f64) {
    let f = m.nrows();
    for mut col in m.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < floor || !norm.is_finite() {
            col.fill(1.0 / (f as f64).sqrt());
        } else {
            col.mapv_inplace(|x| x / norm);
        }
    }
}

/// Divides every column by its L2 norm; columns with negligible norm become
/// uniform `1/√F`.
pub fn normalize_columns(dict: &Dictionary) -> Dictionary {
    let mut m = dict.matrix.clone();
    normalize_matrix(&mut m, DEFAULT_FLOOR);
    Dictionary {
        matrix: m,
        blocks: dict.blocks.clone(),
    }
}

/// One activation update (μ in the denominator), floored.
pub fn update_activations(
    v: &Array2<f64>,
    dict: &Dictionary,
    act: &Activations,
    cfg: &NmfConfig,
) -> Result<Activations> {
    check_shapes(v, dict.matrix(), act.matrix())?;
    let lambda = dict.matrix().dot(act.matrix());
    let h = activation_step(
        v,
        dict.matrix().view(),
        act.matrix().view(),
        &lambda,
        cfg.beta,
        cfg.sparsity,
        cfg.floor,
    );
    Ok(Activations {
        matrix: h,
        blocks: act.blocks.clone(),
    })
}

/// One normalised dictionary update; the result has unit-norm columns.
pub fn update_dictionary(
    v: &Array2<f64>,
    dict: &Dictionary,
    act: &Activations,
    cfg: &NmfConfig,
) -> Result<Dictionary> {
    check_shapes(v, dict.matrix(), act.matrix())?;
    let lambda = dict.matrix().dot(act.matrix());
    let (a, b) = dictionary_stats(v, act.matrix().view(), &lambda, cfg.beta);
    Ok(Dictionary {
        matrix: dictionary_step(dict.matrix(), &a, &b, cfg.floor),
        blocks: dict.blocks.clone(),
    })
}

/// One row of a cost trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub cost: f64,
    pub divergence: f64,
    pub sparsity: f64,
}

/// Objective values before the first and after every iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTrace {
    pub entries: Vec<TraceEntry>,
}

impl CostTrace {
    pub fn push(&mut self, iteration: usize, terms: CostTerms) {
        self.entries.push(TraceEntry {
            iteration,
            cost: terms.total(),
            divergence: terms.divergence,
            sparsity: terms.sparsity,
        });
    }

    pub fn initial(&self) -> Option<f64> {
        self.entries.first().map(|e| e.cost)
    }

    pub fn last(&self) -> Option<f64> {
        self.entries.last().map(|e| e.cost)
    }

    pub fn iterations(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }

    /// Largest step-to-step increase relative to the previous cost.
    pub fn max_relative_increase(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].cost - w[0].cost) / w[0].cost.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// Steps whose cost rose by more than `slack` (relative).
    pub fn non_monotone_steps(&self, slack: f64) -> usize {
        self.entries
            .windows(2)
            .filter(|w| w[1].cost - w[0].cost > slack * w[0].cost.abs().max(1.0))
            .count()
    }

    /// CSV with header `iteration,cost,divergence,sparsity`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        for e in &self.entries {
            wr.serialize(e)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. uniform draws on (0, 1].
pub(crate) fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.random::<f64>())
}

/// Seeded initial factors: W first (then column-normalised), then H.
pub(crate) fn init_factors(
    rng: &mut ChaCha8Rng,
    bins: usize,
    components: usize,
    frames: usize,
) -> (Array2<f64>, Array2<f64>) {
    let mut w = uniform_matrix(rng, bins, components);
    normalize_matrix(&mut w, DEFAULT_FLOOR);
    let h = uniform_matrix(rng, components, frames);
    (w, h)
}

/// Result of a blind factorisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub dictionary: Dictionary,
    pub activations: Activations,
    pub trace: CostTrace,
}

pub(crate) fn early_stop(trace: &CostTrace, tol: f64) -> bool {
    if tol <= 0.0 || trace.entries.len() < 2 {
        return false;
    }
    let n = trace.entries.len();
    let prev = trace.entries[n - 2].cost;
    let cur = trace.entries[n - 1].cost;
    (prev - cur) / prev.abs().max(f64::MIN_POSITIVE) < tol
}

pub(crate) fn check_finite(terms: &CostTerms, iteration: usize) -> Result<()> {
    if !terms.total().is_finite() {
        return Err(Error::Numerical(format!(
            "objective became non-finite at iteration {iteration}"
        )));
    }
    Ok(())
}

/// Blind factorisation with `k` components in a single block.
pub fn factorize(v: &Array2<f64>, k: usize, cfg: &NmfConfig) -> Result<Factorization> {
    factorize_blocks(v, &[Block::new("all", k)], cfg)
}

/// Blind factorisation with a block-partitioned dictionary. Blocks only
/// label columns; every column is updated from the data.
pub fn factorize_blocks(v: &Array2<f64>, blocks: &[Block], cfg: &NmfConfig) -> Result<Factorization> {
    cfg.validate()?;
    check_non_negative(v, "V")?;
    let k: usize = blocks.iter().map(|b| b.size).sum();
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    check_blocks(blocks, k)?;
    let (bins, frames) = v.dim();
    let mut rng = rng_for(cfg.seed);
    let (w, h) = init_factors(&mut rng, bins, k, frames);
    let mut engine = Engine::new(w, cfg);
    engine.set_groups(blocks);
    engine.add_term(v, 0..k, 1.0, h)?;
    let trace = engine.run(cfg.max_iter, cfg.tol)?;
    let (w, mut hs) = engine.into_parts();
    Ok(Factorization {
        dictionary: Dictionary {
            matrix: w,
            blocks: blocks.to_vec(),
        },
        activations: Activations {
            matrix: hs.remove(0),
            blocks: blocks.to_vec(),
        },
        trace,
    })
}

/// One `weight * D(V | Ŵ[:, cols] H)` term of a joint objective.
struct Term<'a> {
    v: &'a Array2<f64>,
    cols: Range<usize>,
    weight: f64,
    h: Array2<f64>,
    lambda: Array2<f64>,
}

/// Multiplicative-update solver for a sum of weighted factorisation terms
/// sharing one column-normalised dictionary.
///
/// Each iteration updates every term's activations against the current
/// dictionary, then walks the column groups in order, updating the free
/// columns of each from the pooled, weight-scaled gradient halves of the
/// terms that use them. Terms of weight zero keep their activations moving
/// but never touch the dictionary or the objective.
pub(crate) struct Engine<'a> {
    w: Array2<f64>,
    frozen: Vec<bool>,
    groups: Vec<Range<usize>>,
    terms: Vec<Term<'a>>,
    beta: f64,
    mu: f64,
    floor: f64,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(w: Array2<f64>, cfg: &NmfConfig) -> Self {
        let k = w.ncols();
        Self {
            w,
            frozen: vec![false; k],
            groups: vec![0..k],
            terms: Vec::new(),
            beta: cfg.beta,
            mu: cfg.sparsity,
            floor: cfg.floor,
        }
    }

    /// Column groups updated one after another within an iteration, each
    /// seeing the models refreshed by the groups before it.
    pub(crate) fn set_groups(&mut self, blocks: &[Block]) {
        let mut start = 0;
        self.groups = blocks
            .iter()
            .filter(|b| b.size > 0)
            .map(|b| {
                start += b.size;
                start - b.size..start
            })
            .collect();
    }

    pub(crate) fn freeze(&mut self, cols: Range<usize>) {
        for c in cols {
            self.frozen[c] = true;
        }
    }

    pub(crate) fn add_term(
        &mut self,
        v: &'a Array2<f64>,
        cols: Range<usize>,
        weight: f64,
        h: Array2<f64>,
    ) -> Result<()> {
        let w = self.w.slice(s![.., cols.clone()]);
        check_shapes(v, &w.to_owned(), &h)?;
        check_non_negative(v, "V")?;
        let lambda = w.dot(&h);
        self.terms.push(Term {
            v,
            cols,
            weight,
            h,
            lambda,
        });
        Ok(())
    }

    fn refresh_lambda(&mut self, i: usize) {
        let t = &mut self.terms[i];
        t.lambda = self.w.slice(s![.., t.cols.clone()]).dot(&t.h);
    }

    fn cost(&self) -> CostTerms {
        let mut acc = CostTerms {
            divergence: 0.0,
            sparsity: 0.0,
        };
        for t in self.terms.iter().filter(|t| t.weight != 0.0) {
            let c = cost_terms_raw(t.v, &t.lambda, &t.h, self.beta, self.mu);
            acc.divergence += t.weight * c.divergence;
            acc.sparsity += t.weight * c.sparsity;
        }
        acc
    }

    fn iterate(&mut self) {
        for t in self.terms.iter_mut() {
            let w = self.w.slice(s![.., t.cols.clone()]);
            t.h = activation_step(t.v, w, t.h.view(), &t.lambda, self.beta, self.mu, self.floor);
        }
        for i in 0..self.terms.len() {
            self.refresh_lambda(i);
        }
        for g in 0..self.groups.len() {
            self.update_group(self.groups[g].clone());
        }
    }

    /// Updates the free columns of one group from the pooled statistics of
    /// every weighted term that uses them, then refreshes the affected models.
    fn update_group(&mut self, group: Range<usize>) {
        if group.clone().all(|c| self.frozen[c]) {
            return;
        }
        let shape = (self.w.nrows(), group.len());
        let mut a = Array2::<f64>::zeros(shape);
        let mut b = Array2::<f64>::zeros(shape);
        let mut touched = vec![false; group.len()];
        let mut users = Vec::new();
        for (i, t) in self.terms.iter().enumerate() {
            let lo = t.cols.start.max(group.start);
            let hi = t.cols.end.min(group.end);
            if lo >= hi {
                continue;
            }
            users.push(i);
            if t.weight == 0.0 {
                continue;
            }
            let h = t.h.slice(s![lo - t.cols.start..hi - t.cols.start, ..]);
            let (ta, tb) = dictionary_stats(t.v, h, &t.lambda, self.beta);
            let cols = s![.., lo - group.start..hi - group.start];
            a.slice_mut(cols).scaled_add(t.weight, &ta);
            b.slice_mut(cols).scaled_add(t.weight, &tb);
            touched[lo - group.start..hi - group.start].fill(true);
        }
        if !touched.iter().any(|&x| x) {
            return;
        }
        let current = self.w.slice(s![.., group.clone()]).to_owned();
        let updated = dictionary_step(&current, &a, &b, self.floor);
        for (j, c) in group.enumerate() {
            if touched[j] && !self.frozen[c] {
                self.w.column_mut(c).assign(&updated.column(j));
            }
        }
        for i in users {
            self.refresh_lambda(i);
        }
    }

    /// Runs up to `max_iter` iterations; the trace holds the initial
    /// objective and one entry per completed iteration.
    pub(crate) fn run(&mut self, max_iter: usize, tol: f64) -> Result<CostTrace> {
        let mut trace = CostTrace::default();
        trace.push(0, self.cost());
        for it in 1..=max_iter {
            self.iterate();
            let terms = self.cost();
            check_finite(&terms, it)?;
            trace.push(it, terms);
            if early_stop(&trace, tol) {
                break;
            }
        }
        Ok(trace)
    }

    pub(crate) fn into_parts(self) -> (Array2<f64>, Vec<Array2<f64>>) {
        (self.w, self.terms.into_iter().map(|t| t.h).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_for(seed);
        uniform_matrix(&mut rng, rows, cols)
    }

    fn normalized(rows: usize, cols: usize, seed: u64) -> Dictionary {
        normalize_columns(&Dictionary::single(random(rows, cols, seed)).unwrap())
    }

    fn acts(m: Array2<f64>) -> Activations {
        let k = m.nrows();
        Activations::new(m, vec![Block::new("all", k)]).unwrap()
    }

    fn cfg(beta: f64, mu: f64) -> NmfConfig {
        NmfConfig {
            beta,
            sparsity: mu,
            ..NmfConfig::default()
        }
    }

    // ---- scalar-loop oracles, independent of the matrix code path ----

    fn oracle_div(x: f64, y: f64, beta: f64) -> f64 {
        match beta {
            b if b == 1.0 => {
                if x == 0.0 {
                    y
                } else {
                    x * (x / y).ln() - x + y
                }
            }
            b if b == 0.0 => x / y - (x / y).ln() - 1.0,
            b => (x.powf(b) + (b - 1.0) * y.powf(b) - b * x * y.powf(b - 1.0)) / (b * (b - 1.0)),
        }
    }

    fn oracle_product(w: &Array2<f64>, h: &Array2<f64>) -> Vec<Vec<f64>> {
        let (f, k) = w.dim();
        let t = h.ncols();
        let mut out = vec![vec![0.0; t]; f];
        for i in 0..f {
            for j in 0..t {
                for c in 0..k {
                    out[i][j] += w[[i, c]] * h[[c, j]];
                }
            }
        }
        out
    }

    fn oracle_cost(v: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>, beta: f64, mu: f64) -> f64 {
        let l = oracle_product(w, h);
        let mut total = 0.0;
        for i in 0..v.nrows() {
            for j in 0..v.ncols() {
                total += oracle_div(v[[i, j]], l[i][j], beta);
            }
        }
        for x in h.iter() {
            total += mu * x;
        }
        total
    }

    fn oracle_h_update(v: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>, beta: f64, mu: f64) -> Array2<f64> {
        let l = oracle_product(w, h);
        let (f, k) = w.dim();
        let t = h.ncols();
        let mut out = h.clone();
        for c in 0..k {
            for j in 0..t {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..f {
                    num += w[[i, c]] * v[[i, j]] * l[i][j].powf(beta - 2.0);
                    den += w[[i, c]] * l[i][j].powf(beta - 1.0);
                }
                out[[c, j]] = (h[[c, j]] * num / (den + mu)).max(DEFAULT_FLOOR);
            }
        }
        out
    }

    fn oracle_w_update(v: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>, beta: f64) -> Array2<f64> {
        let l = oracle_product(w, h);
        let (f, k) = w.dim();
        let t = h.ncols();
        let mut a = vec![vec![0.0; k]; f];
        let mut b = vec![vec![0.0; k]; f];
        for i in 0..f {
            for c in 0..k {
                for j in 0..t {
                    a[i][c] += v[[i, j]] * l[i][j].powf(beta - 2.0) * h[[c, j]];
                    b[i][c] += l[i][j].powf(beta - 1.0) * h[[c, j]];
                }
            }
        }
        let mut out = w.clone();
        for c in 0..k {
            let wa: f64 = (0..f).map(|i| w[[i, c]] * a[i][c]).sum();
            let wb: f64 = (0..f).map(|i| w[[i, c]] * b[i][c]).sum();
            for i in 0..f {
                let num = a[i][c] + w[[i, c]] * wb;
                let den = b[i][c] + w[[i, c]] * wa;
                out[[i, c]] = (w[[i, c]] * num / den).max(DEFAULT_FLOOR);
            }
            let norm: f64 = (0..f).map(|i| out[[i, c]] * out[[i, c]]).sum::<f64>().sqrt();
            for i in 0..f {
                out[[i, c]] /= norm;
            }
        }
        out
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn divergence_closed_forms() {
        for beta in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
            assert_eq!(beta_divergence(1.7, 1.7, beta).unwrap().abs() < 1e-15, true);
        }
        assert!((beta_divergence(2.0, 1.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        let is = beta_divergence(1.0, 2.0, 0.0).unwrap();
        assert!((is - (2f64.ln() - 0.5)).abs() < 1e-12);
        assert!((is - 0.19315).abs() < 1e-5);
        // x = 0 uses the continuous extension of x log x
        assert_eq!(beta_divergence(0.0, 3.0, 1.0).unwrap(), 3.0);
        assert!(beta_divergence(f64::NAN, 1.0, 1.0).is_err());
        assert!(beta_divergence(1.0, f64::INFINITY, 1.0).is_err());
        assert!(beta_divergence(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn divergence_matches_oracle_on_random_points() {
        let mut rng = rng_for(42);
        for _ in 0..1000 {
            let x: f64 = rng.random::<f64>() * 10.0;
            let y: f64 = rng.random::<f64>() * 10.0 + 1e-3;
            let beta = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5][rng.random_range(0..6)];
            let got = beta_divergence(x, y, beta).unwrap();
            let want = oracle_div(x, y, beta);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "β={beta} x={x} y={y}");
        }
    }

    #[test]
    fn exact_factorisation_costs() {
        let d = normalized(6, 3, 1);
        let h = acts(random(3, 5, 2));
        let v = d.matrix().dot(h.matrix());
        assert!(total_cost(&v, &d, &h, &cfg(1.0, 0.0)).unwrap().abs() < 1e-12);
        let c = total_cost(&v, &d, &h, &cfg(1.0, 0.001)).unwrap();
        assert!((c - 0.001 * h.matrix().sum()).abs() < 1e-12);
    }

    #[test]
    fn cost_matches_scalar_oracle() {
        let v = random(8, 6, 3);
        let d = normalized(8, 3, 4);
        let h = acts(random(3, 6, 5));
        for beta in [0.0, 1.0, 1.5, 2.0] {
            let got = total_cost(&v, &d, &h, &cfg(beta, 0.01)).unwrap();
            let want = oracle_cost(&v, d.matrix(), h.matrix(), beta, 0.01);
            assert!(rel(got, want) < 1e-9, "β={beta}");
        }
        let bad = random(7, 6, 3);
        assert!(total_cost(&bad, &d, &h, &cfg(1.0, 0.0)).is_err());
    }

    #[test]
    fn updates_match_scalar_oracles() {
        for (seed, (f, k, t)) in [(10, (10, 4, 10)), (11, (5, 2, 9)), (12, (3, 1, 4))] {
            let v = random(f, t, seed);
            let d = normalized(f, k, seed + 100);
            let h = acts(random(k, t, seed + 200));
            for beta in [0.0, 1.0, 1.5, 2.0] {
                let c = cfg(beta, 0.05);
                let h1 = update_activations(&v, &d, &h, &c).unwrap();
                let oh = oracle_h_update(&v, d.matrix(), h.matrix(), beta, 0.05);
                for (a, b) in h1.matrix().iter().zip(oh.iter()) {
                    assert!(rel(*a, *b) < 1e-9, "H β={beta}");
                }
                let w1 = update_dictionary(&v, &d, &h, &c).unwrap();
                let ow = oracle_w_update(&v, d.matrix(), h.matrix(), beta);
                for (a, b) in w1.matrix().iter().zip(ow.iter()) {
                    assert!(rel(*a, *b) < 1e-9, "W β={beta}");
                }
            }
        }
    }

    #[test]
    fn exact_factorisations_are_fixed_points() {
        let d = normalized(12, 3, 7);
        let h = acts(random(3, 9, 8));
        let v = d.matrix().dot(h.matrix());
        let c = cfg(1.0, 0.0);
        let h1 = update_activations(&v, &d, &h, &c).unwrap();
        for (a, b) in h1.matrix().iter().zip(h.matrix().iter()) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
        let d1 = update_dictionary(&v, &d, &h, &c).unwrap();
        for (a, b) in d1.matrix().iter().zip(d.matrix().iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_activation_row_stays_at_floor() {
        let v = random(6, 5, 1);
        let d = normalized(6, 3, 2);
        let mut h = random(3, 5, 3);
        h.row_mut(1).fill(0.0);
        let c = cfg(1.0, 0.001);
        let h1 = update_activations(&v, &d, &acts(h), &c).unwrap();
        assert!(h1.matrix().row(1).iter().all(|&x| x == c.floor));
    }

    #[test]
    fn dictionary_update_output_is_unit_norm() {
        let v = random(9, 7, 1);
        let d = normalized(9, 4, 2);
        let h = acts(random(4, 7, 3));
        let d1 = update_dictionary(&v, &d, &h, &cfg(1.0, 0.001)).unwrap();
        for col in d1.matrix().axis_iter(Axis(1)) {
            let n = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_columns_cases() {
        let d = Dictionary::single(ndarray::arr2(&[[3.0], [4.0]])).unwrap();
        let n = normalize_columns(&d);
        assert!((n.matrix()[[0, 0]] - 0.6).abs() < 1e-12);
        assert!((n.matrix()[[1, 0]] - 0.8).abs() < 1e-12);
        let again = normalize_columns(&n);
        for (a, b) in again.matrix().iter().zip(n.matrix().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let z = Dictionary::single(Array2::zeros((4, 1))).unwrap();
        assert!(normalize_columns(&z).matrix().iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn blocks_are_validated() {
        let m = random(4, 3, 1);
        assert!(Dictionary::new(m.clone(), vec![Block::new("a", 2)]).is_err());
        assert!(Dictionary::new(m.clone(), vec![Block::new("a", 2), Block::new("a", 1)]).is_err());
        let d = Dictionary::new(m, vec![Block::new("a", 2), Block::new("b", 1)]).unwrap();
        assert_eq!(d.block_range("b"), Some(2..3));
        assert_eq!(d.block("a").unwrap().ncols(), 2);
        assert!(d.block("c").is_none());
        assert!(Dictionary::single(ndarray::arr2(&[[-1.0]])).is_err());
    }

    #[test]
    fn factorize_recovers_exact_low_rank_data() {
        let w0 = random(30, 4, 21);
        let h0 = random(4, 25, 22);
        let v = w0.dot(&h0);
        let c = NmfConfig {
            sparsity: 0.0,
            max_iter: 500,
            seed: 5,
            ..NmfConfig::default()
        };
        let fit = factorize(&v, 4, &c).unwrap();
        assert_eq!(fit.trace.iterations(), 500);
        assert!(fit.trace.last().unwrap() <= 1e-3 * fit.trace.initial().unwrap());
    }

    #[test]
    fn rank_one_outer_product() {
        let a = random(20, 1, 31);
        let b = random(1, 15, 32);
        let v = a.dot(&b);
        let c = NmfConfig {
            sparsity: 0.0,
            max_iter: 300,
            ..NmfConfig::default()
        };
        let fit = factorize(&v, 1, &c).unwrap();
        let approx = fit.dictionary.matrix().dot(fit.activations.matrix());
        let err = (&approx - &v).mapv(|x| x * x).sum().sqrt() / v.mapv(|x| x * x).sum().sqrt();
        assert!(err <= 1e-3, "relative error {err}");
    }

    #[test]
    fn factorize_is_deterministic() {
        let v = random(16, 12, 9);
        let c = NmfConfig {
            max_iter: 40,
            seed: 77,
            ..NmfConfig::default()
        };
        let a = factorize(&v, 3, &c).unwrap();
        let b = factorize(&v, 3, &c).unwrap();
        assert_eq!(a, b);
        let other = factorize(&v, 3, &NmfConfig { seed: 78, ..c }).unwrap();
        assert_ne!(a.dictionary, other.dictionary);
    }

    #[test]
    fn early_stop_shortens_run() {
        let v = random(16, 12, 9);
        let c = NmfConfig {
            max_iter: 500,
            tol: 1e-3,
            ..NmfConfig::default()
        };
        let fit = factorize(&v, 3, &c).unwrap();
        assert!(fit.trace.iterations() < 500);
    }

    #[test]
    fn trace_csv_layout() {
        let v = random(5, 4, 1);
        let fit = factorize(&v, 2, &NmfConfig { max_iter: 3, ..NmfConfig::default() }).unwrap();
        let mut out = Vec::new();
        fit.trace.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,cost,divergence,sparsity"));
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn invalid_configs_rejected() {
        let v = random(5, 4, 1);
        assert!(factorize(&v, 0, &NmfConfig::default()).is_err());
        assert!(factorize(&v, 2, &NmfConfig { max_iter: 0, ..NmfConfig::default() }).is_err());
        assert!(factorize(&v, 2, &NmfConfig { sparsity: -1.0, ..NmfConfig::default() }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn kl_updates_never_increase_cost(
            f in 2usize..12, t in 2usize..12, k in 1usize..5, seed in 0u64..1000
        ) {
            let v = random(f, t, seed);
            let c = NmfConfig { sparsity: 0.0, max_iter: 25, seed, ..NmfConfig::default() };
            let fit = factorize(&v, k, &c).unwrap();
            prop_assert_eq!(fit.trace.non_monotone_steps(1e-9), 0);
            prop_assert!(fit.dictionary.matrix().iter().all(|&x| x >= c.floor));
            prop_assert!(fit.activations.matrix().iter().all(|&x| x >= c.floor));
        }

        #[test]
        fn single_steps_do_not_increase_cost(
            f in 2usize..10, t in 2usize..10, k in 1usize..4, seed in 0u64..1000
        ) {
            let v = random(f, t, seed);
            let d = normalized(f, k, seed + 1);
            let h = acts(random(k, t, seed + 2));
            let c = cfg(1.0, 0.0);
            let before = total_cost(&v, &d, &h, &c).unwrap();
            let h1 = update_activations(&v, &d, &h, &c).unwrap();
            let mid = total_cost(&v, &d, &h1, &c).unwrap();
            prop_assert!(mid <= before + 1e-9 * before.max(1.0));
            let d1 = update_dictionary(&v, &d, &h1, &c).unwrap();
            let after = total_cost(&v, &d1, &h1, &c).unwrap();
            prop_assert!(after <= mid + 1e-9 * mid.max(1.0));
        }
    }
}
