//! Exact sampling from a u-MPS conditioned on a regular expression.
//!
//! The sampler walks the regex AST carrying a left boundary (the prefix
//! emitted so far, pushed through `E^l`) and a right boundary (everything
//! still to come, pushed through `E^r`). Concatenations are handled with one
//! right-to-left sweep that caches the right boundary of every child, so a
//! length-n concatenation costs O(n) transfer applications.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, UmpsError};
use crate::linalg::{outer, trace_of_product, Matrix, PsdMatrix};
use crate::model::Umps;
use crate::regex::Regex;
use crate::transfer::{apply_raw, compile, kraus, ClosureCache, Side};

pub const DEFAULT_MAX_STAR_REPS: usize = 1_000_000;

/// Normalized masses at or below this are treated as zero.
const ZERO_MASS: f64 = 1e-300;
/// Negative traces down to this (relative) size are rounding noise.
const NEGATIVE_SLACK: f64 = 1e-12;

/// Seedable ChaCha stream with independent substreams.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A fresh generator on substream `stream` of the original seed.
    pub fn split(&self, stream: u64) -> RandomSource {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        RandomSource { seed: self.seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[derive(Clone, Debug)]
pub struct SampleRequest {
    pub regex: Regex,
    pub max_star_reps: usize,
    pub rng_seed: u64,
}

impl SampleRequest {
    pub fn new(regex: Regex, rng_seed: u64) -> Self {
        SampleRequest {
            regex,
            max_star_reps: DEFAULT_MAX_STAR_REPS,
            rng_seed,
        }
    }
}

/// Instrumentation gathered while drawing one string.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleStats {
    /// Single-symbol Kraus applications, including closure setup.
    pub transfer_applications: usize,
    /// Right boundaries cached by concatenation sweeps.
    pub cached_right_matrices: usize,
    pub star_repetitions: usize,
}

struct Sampler<'a, R: Rng> {
    m: &'a Umps,
    cache: ClosureCache,
    rng: &'a mut R,
    max_star_reps: usize,
    stats: SampleStats,
    out: String,
}

fn normalized(mut q: Matrix) -> Result<Matrix> {
    let t = q.trace();
    if !(t > ZERO_MASS) || !t.is_finite() {
        return Err(UmpsError::ZeroMass);
    }
    q.symmetrize();
    q.scale(1.0 / t);
    Ok(q)
}

/// Index drawn by inverse CDF over nonnegative weights.
fn draw(rng: &mut impl Rng, weights: &mut [f64]) -> Result<usize> {
    let scale = weights.iter().map(|w| w.abs()).sum::<f64>();
    for w in weights.iter_mut() {
        if *w < 0.0 {
            if *w < -NEGATIVE_SLACK * scale.max(1.0) {
                log::warn!("clamping negative mass {w:e} to zero");
            }
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > ZERO_MASS) || !total.is_finite() {
        return Err(UmpsError::ZeroMass);
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

fn char_weights(m: &Umps, ql: &Matrix, qr: &Matrix) -> Vec<f64> {
    (0..m.alphabet().len())
        .map(|k| trace_of_product(ql, &kraus(m, k, qr, Side::Right)))
        .collect()
}

impl<R: Rng> Sampler<'_, R> {
    /// Appends a sample of `r` to the output and returns the updated, trace
    /// normalized left boundary.
    fn node(&mut self, r: &Regex, ql: Matrix, qr: &Matrix) -> Result<Matrix> {
        match r {
            Regex::Char(c) => {
                let k = self.m.alphabet().index_of(*c)?;
                self.cache.count(1);
                let mut w = [trace_of_product(&ql, &kraus(self.m, k, qr, Side::Right))];
                draw(self.rng, &mut w)?;
                self.emit(k, ql)
            }
            Regex::AnyChar => {
                self.cache.count(self.m.alphabet().len());
                let mut w = char_weights(self.m, &ql, qr);
                let k = draw(self.rng, &mut w)?;
                self.emit(k, ql)
            }
            Regex::Concat(cs) => {
                let parts: Vec<&Regex> = cs.iter().collect();
                self.sweep(&parts, ql, qr)
            }
            Regex::Repeat(c, n) => {
                let parts = vec![&**c; *n];
                self.sweep(&parts, ql, qr)
            }
            Regex::Union(cs) => {
                let mut w = Vec::with_capacity(cs.len());
                for c in cs {
                    let right = apply_raw(self.m, c, qr, Side::Right, &mut self.cache)?;
                    w.push(trace_of_product(&ql, &right));
                }
                let i = draw(self.rng, &mut w)?;
                self.node(&cs[i], ql, qr)
            }
            Regex::Star(body) => self.star(r, body, ql, qr),
        }
    }

    fn emit(&mut self, k: usize, ql: Matrix) -> Result<Matrix> {
        self.out.push(self.m.alphabet().symbol(k));
        self.cache.count(1);
        normalized(kraus(self.m, k, &ql, Side::Left))
    }

    fn sweep(&mut self, parts: &[&Regex], mut ql: Matrix, qr: &Matrix) -> Result<Matrix> {
        let k = parts.len();
        if k == 0 {
            return Ok(ql);
        }
        let mut rights = vec![Matrix::zeros(0, 0); k];
        rights[k - 1] = qr.clone();
        for i in (1..k).rev() {
            let next = apply_raw(self.m, parts[i], &rights[i], Side::Right, &mut self.cache)?;
            rights[i - 1] = normalized(next)?;
        }
        self.stats.cached_right_matrices += k;
        for (part, right) in parts.iter().zip(&rights) {
            ql = self.node(part, ql, right)?;
        }
        Ok(ql)
    }

    fn star(&mut self, star: &Regex, body: &Regex, mut ql: Matrix, qr: &Matrix) -> Result<Matrix> {
        let mut closed = self.cache.closure(star, Side::Right, qr);
        closed.symmetrize();
        // HALT and GO are weighed against the same unnormalized closure; the
        // body only needs it up to scale.
        let closed_norm = normalized(closed.clone())?;
        let mut reps = 0;
        loop {
            let mut w = [trace_of_product(&ql, qr), 0.0];
            w[1] = trace_of_product(&ql, &closed) - w[0];
            if draw(self.rng, &mut w)? == 0 {
                return Ok(ql);
            }
            reps += 1;
            self.stats.star_repetitions += 1;
            if reps > self.max_star_reps {
                return Err(UmpsError::StarBudget(self.max_star_reps));
            }
            ql = self.node(body, ql, &closed_norm)?;
        }
    }
}

fn run<R: Rng>(
    m: &Umps,
    r: &Regex,
    ql: Matrix,
    qr: Matrix,
    rng: &mut R,
    cache: ClosureCache,
    max_star_reps: usize,
) -> Result<(String, SampleStats)> {
    if max_star_reps == 0 {
        return Err(UmpsError::Config("max_star_reps must be positive".into()));
    }
    let ql = normalized(ql)?;
    let qr = normalized(qr)?;
    let mut s = Sampler {
        m,
        cache,
        rng,
        max_star_reps,
        stats: SampleStats::default(),
        out: String::new(),
    };
    s.node(r, ql, &qr)?;
    let mut stats = s.stats;
    stats.transfer_applications = s.cache.applications();
    Ok((s.out, stats))
}

fn prepared(m: &Umps, r: &Regex) -> Result<ClosureCache> {
    compile(m, r)?;
    let mut cache = ClosureCache::new();
    cache.prepare(m, r, Side::Right)?;
    Ok(cache)
}

fn boundaries(m: &Umps) -> (Matrix, Matrix) {
    (outer(m.alpha()).into_matrix(), outer(m.omega()).into_matrix())
}

/// Draws one string from the model conditioned on `req.regex`.
///
/// Equivalent to the first string of [`sample_many`] with the same request.
pub fn sample(m: &Umps, req: &SampleRequest) -> Result<String> {
    let mut rng = RandomSource::new(req.rng_seed).split(0);
    sample_with_stats(m, &req.regex, &mut rng, req.max_star_reps).map(|(s, _)| s)
}

/// Draws `count` strings; string `i` uses substream `i` of the seed, so the
/// output does not depend on thread scheduling.
pub fn sample_many(m: &Umps, req: &SampleRequest, count: usize) -> Result<Vec<String>> {
    let cache = prepared(m, &req.regex)?;
    let (ql, qr) = boundaries(m);
    let root = RandomSource::new(req.rng_seed);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.split(i as u64);
            run(m, &req.regex, ql.clone(), qr.clone(), &mut rng, cache.clone(), req.max_star_reps).map(|(s, _)| s)
        })
        .collect()
}

pub fn sample_with_stats<R: Rng>(m: &Umps, r: &Regex, rng: &mut R, max_star_reps: usize) -> Result<(String, SampleStats)> {
    let cache = prepared(m, r)?;
    let (ql, qr) = boundaries(m);
    run(m, r, ql, qr, rng, cache, max_star_reps)
}

/// Samples `r` between arbitrary boundaries, reusing closures in `cache`.
pub fn sample_node<R: Rng>(
    m: &Umps,
    r: &Regex,
    ql: &PsdMatrix,
    qr: &PsdMatrix,
    rng: &mut R,
    cache: &mut ClosureCache,
) -> Result<String> {
    if ql.dim() != m.bond_dim() || qr.dim() != m.bond_dim() {
        return Err(UmpsError::Dim(format!(
            "boundaries must be {}x{}",
            m.bond_dim(),
            m.bond_dim()
        )));
    }
    compile(m, r)?;
    cache.prepare(m, r, Side::Right)?;
    let (out, stats) = run(
        m,
        r,
        ql.matrix().clone(),
        qr.matrix().clone(),
        rng,
        cache.clone(),
        DEFAULT_MAX_STAR_REPS,
    )?;
    cache.count(stats.transfer_applications - cache.applications());
    Ok(out)
}

/// Distribution of the next character between boundaries `ql` and `qr`.
pub fn next_char_dist(m: &Umps, ql: &PsdMatrix, qr: &PsdMatrix) -> Result<Vec<f64>> {
    let mut w = char_weights(m, ql.matrix(), qr.matrix());
    for x in w.iter_mut() {
        *x = x.max(0.0);
    }
    let total: f64 = w.iter().sum();
    if !(total > ZERO_MASS) || !total.is_finite() {
        return Err(UmpsError::ZeroMass);
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// A length-`n` string from the fixed-length distribution `P_n`.
pub fn sample_fixed<R: Rng>(m: &Umps, n: usize, rng: &mut R) -> Result<String> {
    sample_with_stats(m, &Regex::any_of_length(n), rng, DEFAULT_MAX_STAR_REPS).map(|(s, _)| s)
}

/// Boundaries after absorbing a literal prefix (left) and suffix (right).
fn literal_boundaries(m: &Umps, prefix: &str, suffix: &str) -> Result<(Matrix, Matrix)> {
    let (mut ql, mut qr) = boundaries(m);
    for k in m.alphabet().encode(prefix)? {
        ql = normalized(kraus(m, k, &ql, Side::Left))?;
    }
    for k in m.alphabet().encode(suffix)?.into_iter().rev() {
        qr = normalized(kraus(m, k, &qr, Side::Right))?;
    }
    Ok((ql, qr))
}

/// Samples the `hole` of `prefix · hole · suffix` and returns only the hole.
pub fn complete<R: Rng>(m: &Umps, prefix: &str, suffix: &str, hole: &Regex, rng: &mut R) -> Result<String> {
    let cache = prepared(m, hole)?;
    let (ql, qr) = literal_boundaries(m, prefix, suffix)?;
    run(m, hole, ql, qr, rng, cache, DEFAULT_MAX_STAR_REPS).map(|(s, _)| s)
}

/// `count` completions, completion `i` drawn from substream `i` of `seed`.
pub fn complete_many(m: &Umps, prefix: &str, suffix: &str, hole: &Regex, seed: u64, count: usize) -> Result<Vec<String>> {
    let cache = prepared(m, hole)?;
    let (ql, qr) = literal_boundaries(m, prefix, suffix)?;
    let root = RandomSource::new(seed);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.split(i as u64);
            run(m, hole, ql.clone(), qr.clone(), &mut rng, cache.clone(), DEFAULT_MAX_STAR_REPS).map(|(s, _)| s)
        })
        .collect()
}
