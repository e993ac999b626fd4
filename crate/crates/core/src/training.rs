//! Maximum-likelihood training with exact reverse-mode gradients and Adam.
//!
//! The loss of a string is `-2 ln|f(s)| + ln Z_|s|`. Both terms are evaluated
//! on trace- or norm-rescaled intermediates; every gradient contribution is a
//! ratio in which the accumulated scale factors cancel, so long strings never
//! under- or overflow.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmpsError};
use crate::linalg::{dot, norm, outer, ClosureSolver, KrausMap, Matrix};
use crate::model::Umps;
use crate::transfer::{kraus_any, Side};

/// How per-string probabilities are normalized in the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// `P(s) = f(s)² / Z_|s|`.
    #[default]
    PerLength,
    /// `P(s) = f(s)² / Z_*`. Experimental: requires `ρ(E) < 1` throughout.
    AllStrings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub init_lr: f64,
    pub lr_floor: f64,
    pub lr_decay_factor: f64,
    pub patience_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Global gradient norm ceiling.
    pub clip_norm: f64,
    pub normalization: NormalizationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            init_lr: 1e-2,
            lr_floor: 1e-4,
            lr_decay_factor: 10.0,
            patience_epochs: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 1000,
            seed: 0,
            clip_norm: 10.0,
            normalization: NormalizationMode::PerLength,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(UmpsError::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.init_lr) {
            return bad("need 0 < lr_floor <= init_lr");
        }
        if !(self.lr_decay_factor > 1.0) {
            return bad("lr_decay_factor must exceed 1");
        }
        if self.patience_epochs == 0 {
            return bad("patience_epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Adjoints of the model parameters, one `D × D` matrix per symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub d_core: Vec<Matrix>,
    pub d_alpha: Vec<f64>,
    pub d_omega: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(m: &Umps) -> Self {
        let dim = m.bond_dim();
        Gradient {
            d_core: vec![Matrix::zeros(dim, dim); m.alphabet().len()],
            d_alpha: vec![0.0; dim],
            d_omega: vec![0.0; dim],
        }
    }

    /// Entries in the parameter order used by [`adam_step`].
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.d_core
            .iter()
            .flat_map(|m| m.as_slice())
            .chain(&self.d_alpha)
            .chain(&self.d_omega)
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.d_core
            .iter_mut()
            .flat_map(|m| m.as_mut_slice())
            .chain(&mut self.d_alpha)
            .chain(&mut self.d_omega)
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.iter_mut().for_each(|x| *x *= s);
    }

    /// Core gradient flattened like [`Umps::core_tensor`].
    pub fn core_tensor(&self) -> Vec<f64> {
        let dim = self.d_alpha.len();
        let d = self.d_core.len();
        let mut out = vec![0.0; dim * d * dim];
        for i in 0..dim {
            for (k, slice) in self.d_core.iter().enumerate() {
                for j in 0..dim {
                    out[(i * d + k) * dim + j] = slice[(i, j)];
                }
            }
        }
        out
    }
}

fn params_mut(m: &mut Umps) -> impl Iterator<Item = &mut f64> {
    let (slices, alpha, omega) = m.parts_mut();
    slices
        .iter_mut()
        .flat_map(|s| s.as_mut_slice())
        .chain(alpha.iter_mut())
        .chain(omega.iter_mut())
}

fn encode_batch(m: &Umps, batch: &[String]) -> Result<Vec<Vec<usize>>> {
    if batch.is_empty() {
        return Err(UmpsError::Config("batch must not be empty".into()));
    }
    batch.iter().map(|s| m.alphabet().encode(s)).collect()
}

fn zero_amplitude(m: &Umps, idx: &[usize]) -> UmpsError {
    UmpsError::ZeroAmplitude(m.alphabet().decode(idx))
}

/// `ln |f(s)|` by a norm-rescaled left-to-right pass.
fn log_amplitude(m: &Umps, idx: &[usize]) -> Result<f64> {
    let mut l = m.alpha().to_vec();
    let mut log_scale = 0.0;
    for &k in idx {
        let n = norm(&l);
        if n == 0.0 {
            return Err(zero_amplitude(m, idx));
        }
        log_scale += n.ln();
        l.iter_mut().for_each(|x| *x /= n);
        l = m.slice(k).vecmat(&l);
    }
    let f = dot(&l, m.omega());
    if f == 0.0 {
        return Err(zero_amplitude(m, idx));
    }
    Ok(log_scale + f.abs().ln())
}

/// Accumulates `weight · ∂(-2 ln|f(s)|)` into `g` and returns `ln|f(s)|`.
fn amplitude_grad(m: &Umps, idx: &[usize], weight: f64, g: &mut Gradient) -> Result<f64> {
    let n = idx.len();
    let mut ls = Vec::with_capacity(n + 1);
    let mut log_scale = 0.0;
    let mut l = m.alpha().to_vec();
    for &k in idx {
        let nrm = norm(&l);
        if nrm == 0.0 {
            return Err(zero_amplitude(m, idx));
        }
        log_scale += nrm.ln();
        l.iter_mut().for_each(|x| *x /= nrm);
        let next = m.slice(k).vecmat(&l);
        ls.push(l);
        l = next;
    }
    let fhat = dot(&l, m.omega());
    if fhat == 0.0 || !fhat.is_finite() {
        return Err(zero_amplitude(m, idx));
    }
    for (d, x) in g.d_omega.iter_mut().zip(&l) {
        *d -= 2.0 * weight * x / fhat;
    }
    // Every ratio below equals (∂f/∂θ)/f exactly: numerator and denominator
    // carry the same positive rescaling.
    let mut r = m.omega().to_vec();
    for k in (0..n).rev() {
        let a = m.slice(idx[k]);
        let nrm = norm(&r);
        r.iter_mut().for_each(|x| *x /= nrm);
        let ar = a.matvec(&r);
        let denom = dot(&ls[k], &ar);
        if denom == 0.0 {
            return Err(zero_amplitude(m, idx));
        }
        let s = -2.0 * weight / denom;
        let grad = g.d_core[idx[k]].as_mut_slice();
        let dim = r.len();
        for (i, li) in ls[k].iter().enumerate() {
            let row = &mut grad[i * dim..(i + 1) * dim];
            for (gij, rj) in row.iter_mut().zip(&r) {
                *gij += s * li * rj;
            }
        }
        r = ar;
    }
    let denom = dot(m.alpha(), &r);
    for (d, x) in g.d_alpha.iter_mut().zip(&r) {
        *d -= 2.0 * weight * x / denom;
    }
    Ok(log_scale + fhat.abs().ln())
}

fn trace_normalized(mut q: Matrix) -> Result<(Matrix, f64)> {
    let t = q.trace();
    if !(t > 0.0) || !t.is_finite() {
        return Err(UmpsError::NonFinite(format!("transfer trace {t}")));
    }
    q.scale(1.0 / t);
    Ok((q, t))
}

/// `ln Z_n`, adding `weight · ∂ ln Z_n` into `g` when given.
fn log_z_grad(m: &Umps, n: usize, weight: f64, g: Option<&mut Gradient>) -> Result<f64> {
    let (q0, t0) = trace_normalized(outer(m.omega()).into_matrix())?;
    let mut qs = Vec::with_capacity(n + 1);
    let mut traces = Vec::with_capacity(n);
    let mut log_z = t0.ln();
    qs.push(q0);
    for _ in 0..n {
        let (q, t) = trace_normalized(kraus_any(m, qs.last().unwrap(), Side::Right))?;
        log_z += t.ln();
        traces.push(t);
        qs.push(q);
    }
    let alpha = m.alpha();
    let qa = qs[n].matvec(alpha);
    let aqa = dot(alpha, &qa);
    if !(aqa > 0.0) {
        return Err(UmpsError::NonFinite(format!("Z_{n} vanished")));
    }
    log_z += aqa.ln();
    let Some(g) = g else {
        return Ok(log_z);
    };
    for (d, x) in g.d_alpha.iter_mut().zip(&qa) {
        *d += 2.0 * weight * x / aqa;
    }
    let (mut gk, _) = trace_normalized(outer(alpha).into_matrix())?;
    for k in (1..=n).rev() {
        let denom = traces[k - 1] * crate::linalg::trace_of_product(&gk, &qs[k]);
        let s = 2.0 * weight / denom;
        for (c, a) in m.slices().iter().enumerate() {
            let term = gk.mul_unchecked(a).mul_unchecked(&qs[k - 1]);
            g.d_core[c].add_scaled(&term, s);
        }
        gk = trace_normalized(kraus_any(m, &gk, Side::Left))?.0;
    }
    let omega = m.omega();
    let gw = gk.matvec(omega);
    let wgw = dot(omega, &gw);
    for (d, x) in g.d_omega.iter_mut().zip(&gw) {
        *d += 2.0 * weight * x / wgw;
    }
    Ok(log_z)
}

/// `ln Z_*` with its gradient scaled by `weight`, from the two closures
/// `X = (I - E)⁻¹(ωωᵀ)` and `Y = (I - E^l)⁻¹(ααᵀ)`.
fn log_z_star_grad(m: &Umps, weight: f64, g: Option<&mut Gradient>) -> Result<f64> {
    let map = KrausMap::new(m.slices().to_vec())?;
    let solver = ClosureSolver::new(&map)?;
    let x = solver.solve(outer(m.omega()).matrix());
    let alpha = m.alpha();
    let xa = x.matvec(alpha);
    let z = dot(alpha, &xa);
    if !(z > 0.0) {
        return Err(UmpsError::DivergentClosure { rho: f64::NAN });
    }
    if let Some(g) = g {
        let mut y = solver.solve_adjoint_raw(outer(alpha).matrix());
        y.symmetrize();
        let s = 2.0 * weight / z;
        for (c, a) in m.slices().iter().enumerate() {
            g.d_core[c].add_scaled(&y.mul_unchecked(a).mul_unchecked(&x), s);
        }
        for (d, v) in g.d_alpha.iter_mut().zip(&xa) {
            *d += s * v;
        }
        for (d, v) in g.d_omega.iter_mut().zip(y.matvec(m.omega())) {
            *d += s * v;
        }
    }
    Ok(z.ln())
}

fn length_counts(idx: &[Vec<usize>]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for s in idx {
        *counts.entry(s.len()).or_insert(0) += 1;
    }
    counts
}

fn loss_and_grad(m: &Umps, batch: &[String], mode: NormalizationMode, mut g: Option<&mut Gradient>) -> Result<f64> {
    let idx = encode_batch(m, batch)?;
    let w = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    for s in &idx {
        let log_f = match g.as_deref_mut() {
            Some(g) => amplitude_grad(m, s, w, g)?,
            None => log_amplitude(m, s)?,
        };
        loss -= 2.0 * w * log_f;
    }
    match mode {
        NormalizationMode::PerLength => {
            for (n, count) in length_counts(&idx) {
                let cw = count as f64 * w;
                loss += cw * log_z_grad(m, n, cw, g.as_deref_mut())?;
            }
        }
        NormalizationMode::AllStrings => loss += log_z_star_grad(m, 1.0, g)?,
    }
    Ok(loss)
}

/// Mean negative log-likelihood under per-length normalization.
pub fn nll(m: &Umps, batch: &[String]) -> Result<f64> {
    loss_and_grad(m, batch, NormalizationMode::PerLength, None)
}

pub fn nll_with(m: &Umps, batch: &[String], mode: NormalizationMode) -> Result<f64> {
    loss_and_grad(m, batch, mode, None)
}

/// [`nll`] and its exact gradient.
pub fn grad_nll(m: &Umps, batch: &[String]) -> Result<(f64, Gradient)> {
    grad_nll_with(m, batch, NormalizationMode::PerLength)
}

pub fn grad_nll_with(m: &Umps, batch: &[String], mode: NormalizationMode) -> Result<(f64, Gradient)> {
    let mut g = Gradient::zeros_like(m);
    let loss = loss_and_grad(m, batch, mode, Some(&mut g))?;
    Ok((loss, g))
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the
/// original norm.
pub fn clip_gradient(g: &mut Gradient, max_norm: f64) -> f64 {
    let n = g.norm();
    if n > max_norm {
        g.scale(max_norm / n);
    }
    n
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(m: &Umps, beta1: f64, beta2: f64, eps: f64) -> Self {
        let n = m.slices().len() * m.bond_dim() * m.bond_dim() + 2 * m.bond_dim();
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn from_config(m: &Umps, cfg: &TrainConfig) -> Self {
        Self::new(m, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(m: &mut Umps, g: &Gradient, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first.len() != g.iter().count() {
        return Err(UmpsError::Dim("optimizer state does not match the gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let moments = state.first.iter_mut().zip(state.second.iter_mut());
    for ((p, gi), (mi, vi)) in params_mut(m).zip(g.iter()).zip(moments) {
        *mi = b1 * *mi + (1.0 - b1) * gi;
        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best_val_nll(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_nll).reduce(f64::min)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Mean NLL over a whole dataset, evaluated in chunks.
fn dataset_nll(m: &Umps, data: &[String], mode: NormalizationMode) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.chunks(1024) {
        total += nll_with(m, chunk, mode)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

pub fn train(m: &Umps, train_set: &[String], val_set: &[String], cfg: &TrainConfig) -> Result<(Umps, TrainHistory)> {
    train_with_observer(m, train_set, val_set, cfg, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_with_observer(
    m: &Umps,
    train_set: &[String],
    val_set: &[String],
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<(Umps, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(UmpsError::Config("training and validation sets must be non-empty".into()));
    }
    encode_batch(m, train_set)?;
    encode_batch(m, val_set)?;

    let mut history = TrainHistory::default();
    let mut model = m.clone();
    let mut best = m.clone();
    if cfg.max_epochs == 0 {
        return Ok((best, history));
    }
    let mut best_val = f64::INFINITY;
    let mut state = AdamState::from_config(&model, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.init_lr;
    let mut stale = 0;
    let start = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<String> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, mut g) = grad_nll_with(&model, &batch, cfg.normalization)?;
            if !loss.is_finite() || !g.is_finite() {
                return Err(UmpsError::NonFinite(format!("loss {loss} in epoch {epoch}")));
            }
            clip_gradient(&mut g, cfg.clip_norm);
            adam_step(&mut model, &g, &mut state, lr)?;
        }
        let train_nll = dataset_nll(&model, train_set, cfg.normalization)?;
        let val_nll = dataset_nll(&model, val_set, cfg.normalization)?;
        let record = EpochRecord {
            epoch,
            train_nll,
            val_nll,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_nll:.5} val {val_nll:.5} lr {lr:e}"
        );
        observe(&record);
        history.records.push(record);

        if val_nll < best_val {
            best_val = val_nll;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience_epochs {
                let next = lr / cfg.lr_decay_factor;
                if next < cfg.lr_floor * (1.0 - 1e-9) {
                    break;
                }
                lr = next;
                stale = 0;
            }
        }
    }
    Ok((best, history))
}

/// Worst relative disagreement between [`grad_nll`] and central differences.
///
/// Relative error is `|g - fd| / max(|g|, |fd|, 1e-2)`, so components of
/// magnitude below `1e-2` are compared absolutely.
pub fn finite_diff_check(m: &Umps, batch: &[String], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(UmpsError::Config("finite-difference step must be positive".into()));
    }
    let (_, g) = grad_nll(m, batch)?;
    let analytic: Vec<f64> = g.iter().copied().collect();
    let mut worst: f64 = 0.0;
    let mut probe = m.clone();
    for (i, ga) in analytic.iter().enumerate() {
        let orig = *params_mut(&mut probe).nth(i).unwrap();
        *params_mut(&mut probe).nth(i).unwrap() = orig + eps;
        let up = nll(&probe, batch)?;
        *params_mut(&mut probe).nth(i).unwrap() = orig - eps;
        let down = nll(&probe, batch)?;
        *params_mut(&mut probe).nth(i).unwrap() = orig;
        let fd = (up - down) / (2.0 * eps);
        let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-2);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ChainMode;
    use crate::model::tests::{random_model, scalar_model};
    use crate::model::Alphabet;
    use approx::assert_relative_eq;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn scalar_nll_cases() {
        let m = scalar_model();
        assert_relative_eq!(nll(&m, &strings(&["0"])).unwrap(), -(0.8f64.ln()), max_relative = 1e-12);
        let both = (-(0.8f64.ln()) - 0.2f64.ln()) / 2.0;
        assert_relative_eq!(nll(&m, &strings(&["0", "1"])).unwrap(), both, max_relative = 1e-12);
    }

    #[test]
    fn nll_matches_enumeration() {
        let m = random_model(3, 3, "01", 0.8);
        let batch = strings(&["0110", "1111", "0001", "1010"]);
        let mut z4 = 0.0;
        for code in 0..16usize {
            let s: String = (0..4).map(|b| if (code >> b) & 1 == 1 { '1' } else { '0' }).collect();
            z4 += m.score(&s, ChainMode::Sequential).unwrap().powi(2);
        }
        let expect = -batch
            .iter()
            .map(|s| (m.unnorm_prob(s).unwrap() / z4).ln())
            .sum::<f64>()
            / 4.0;
        assert_relative_eq!(nll(&m, &batch).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn nll_is_order_invariant() {
        let m = random_model(4, 3, "01", 0.8);
        let a = strings(&["0", "0110", "", "111"]);
        let mut b = a.clone();
        b.reverse();
        assert_relative_eq!(nll(&m, &a).unwrap(), nll(&m, &b).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn scalar_gradient_closed_form() {
        let m = scalar_model();
        let (_, g) = grad_nll(&m, &strings(&["0"])).unwrap();
        let expect = -2.0 / 0.6 + 1.2 / 0.45;
        assert_relative_eq!(g.d_core[0][(0, 0)], expect, max_relative = 1e-12);
        let err = finite_diff_check(&m, &strings(&["0", "1", "01"]), 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn symmetric_model_has_symmetric_gradient() {
        let m = Umps::init_random(3, Alphabet::from_str_symbols("01").unwrap(), 2, 0.0).unwrap();
        let (_, g) = grad_nll(&m, &strings(&["01", "10", "0011", "1100"])).unwrap();
        for (x, y) in g.d_core[0].as_slice().iter().zip(g.d_core[1].as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, dim, syms) in [(1, 3, "01"), (2, 4, "abc"), (3, 2, "abc")] {
            let m = random_model(seed, dim, syms, 0.7);
            let alphabet: Vec<char> = syms.chars().collect();
            let batch: Vec<String> = (0..6)
                .map(|i| (0..(i + 3)).map(|j| alphabet[(i * 7 + j * 5) % alphabet.len()]).collect())
                .collect();
            let err = finite_diff_check(&m, &batch, 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn all_strings_gradient_matches_finite_differences() {
        let m = random_model(5, 3, "01", 0.35);
        let batch = strings(&["01", "1", "110"]);
        let (_, g) = grad_nll_with(&m, &batch, NormalizationMode::AllStrings).unwrap();
        let analytic: Vec<f64> = g.iter().copied().collect();
        let eps = 1e-5;
        let mut probe = m.clone();
        for (i, ga) in analytic.iter().enumerate() {
            let orig = *params_mut(&mut probe).nth(i).unwrap();
            *params_mut(&mut probe).nth(i).unwrap() = orig + eps;
            let up = nll_with(&probe, &batch, NormalizationMode::AllStrings).unwrap();
            *params_mut(&mut probe).nth(i).unwrap() = orig - eps;
            let down = nll_with(&probe, &batch, NormalizationMode::AllStrings).unwrap();
            *params_mut(&mut probe).nth(i).unwrap() = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((ga - fd).abs() <= 1e-6 * ga.abs().max(1e-2), "{i}: {ga} vs {fd}");
        }
    }

    #[test]
    fn zero_amplitude_is_reported() {
        let ab = Alphabet::from_str_symbols("ab").unwrap();
        let m = Umps::from_slices(ab, vec![Matrix::identity(1), Matrix::zeros(1, 1)], vec![1.0], vec![1.0]).unwrap();
        let err = finite_diff_check(&m, &strings(&["a", "ab"]), 1e-5).unwrap_err();
        assert!(matches!(err, UmpsError::ZeroAmplitude(ref s) if s == "ab"));
    }

    #[test]
    fn log_z_matches_direct_value() {
        let m = random_model(8, 3, "01", 0.9);
        for n in [0, 1, 5, 9] {
            let lz = log_z_grad(&m, n, 1.0, None).unwrap();
            assert_relative_eq!(lz, crate::transfer::z_fixed(&m, n).ln(), max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let m0 = random_model(1, 3, "01", 0.8);
        let mut m = m0.clone();
        let mut st = AdamState::new(&m, 0.9, 0.999, 1e-8);
        let zero = Gradient::zeros_like(&m);
        adam_step(&mut m, &zero, &mut st, 1e-2).unwrap();
        assert_eq!(m.to_bytes(), m0.to_bytes());
        let (_, g) = grad_nll(&m, &strings(&["01"])).unwrap();
        adam_step(&mut m, &g, &mut st, 0.0).unwrap();
        assert_eq!(m.to_bytes(), m0.to_bytes());
    }

    #[test]
    fn adam_first_step_closed_form() {
        let m0 = random_model(2, 2, "01", 0.8);
        let mut m = m0.clone();
        let (_, g) = grad_nll(&m, &strings(&["0110"])).unwrap();
        let mut st = AdamState::new(&m, 0.9, 0.999, 1e-8);
        adam_step(&mut m, &g, &mut st, 0.01).unwrap();
        let before: Vec<f64> = params_mut(&mut m0.clone()).map(|x| *x).collect();
        let after: Vec<f64> = params_mut(&mut m).map(|x| *x).collect();
        for ((b, a), gi) in before.iter().zip(&after).zip(g.iter()) {
            assert_relative_eq!(a - b, -0.01 * gi / (gi.abs() + 1e-8), max_relative = 1e-9, epsilon = 1e-15);
        }
    }

    #[test]
    fn adam_two_steps_match_recurrence() {
        let alphabet = Alphabet::from_str_symbols("a").unwrap();
        let mut m = Umps::from_slices(alphabet, vec![Matrix::identity(1)], vec![1.0], vec![1.0]).unwrap();
        let mut st = AdamState::new(&m, 0.9, 0.999, 1e-8);
        let mut g = Gradient::zeros_like(&m);
        let gs = [0.5, -0.25];
        let (mut p, mut m1, mut v1) = (1.0f64, 0.0f64, 0.0f64);
        for (t, gi) in gs.iter().enumerate() {
            g.d_core[0].as_mut_slice()[0] = *gi;
            adam_step(&mut m, &g, &mut st, 0.1).unwrap();
            m1 = 0.9 * m1 + 0.1 * gi;
            v1 = 0.999 * v1 + 0.001 * gi * gi;
            let mh = m1 / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v1 / (1.0 - 0.999f64.powi(t as i32 + 1));
            p -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert_relative_eq!(m.slice(0)[(0, 0)], p, max_relative = 1e-14);
    }

    #[test]
    fn clip_caps_global_norm() {
        let m = random_model(1, 2, "01", 0.8);
        let mut g = Gradient::zeros_like(&m);
        g.d_alpha = vec![30.0, 40.0];
        assert_relative_eq!(clip_gradient(&mut g, 10.0), 50.0);
        assert_relative_eq!(g.norm(), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let m = random_model(1, 2, "01", 0.8);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (out, hist) = train(&m, &strings(&["01"]), &strings(&["01"]), &cfg).unwrap();
        assert_eq!(out.to_bytes(), m.to_bytes());
        assert!(hist.records.is_empty());
    }

    #[test]
    fn scalar_training_recovers_frequencies() {
        let alphabet = Alphabet::from_str_symbols("01").unwrap();
        let m = Umps::new(alphabet, 1, &[0.5, 0.5], vec![1.0], vec![1.0]).unwrap();
        let mut data = vec!["0".to_string(); 80];
        data.extend(vec!["1".to_string(); 20]);
        let cfg = TrainConfig {
            batch_size: 10,
            max_epochs: 300,
            ..TrainConfig::default()
        };
        let (out, _) = train(&m, &data, &data, &cfg).unwrap();
        let p0 = out.unnorm_prob("0").unwrap() / crate::transfer::z_fixed(&out, 1);
        assert!((p0 - 0.8).abs() < 0.02, "p0 = {p0}");
    }

    #[test]
    fn training_is_deterministic_and_decreasing() {
        let m = Umps::init_random(3, Alphabet::from_str_symbols("01").unwrap(), 4, 0.1).unwrap();
        let data = vec!["0110".to_string(); 32];
        let cfg = TrainConfig {
            max_epochs: 10,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&m, &data, &data, &cfg).unwrap();
        let (b, hb) = train(&m, &data, &data, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let strip = |h: &TrainHistory| h.records.iter().map(|r| (r.train_nll, r.val_nll, r.lr)).collect::<Vec<_>>();
        assert_eq!(strip(&ha), strip(&hb));
        let violations = ha
            .records
            .windows(2)
            .filter(|w| w[1].train_nll > w[0].train_nll - 1e-9)
            .count();
        assert!(violations <= 1, "{:?}", strip(&ha));
    }

    #[test]
    fn history_is_json_lines() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_nll: 1.5,
                val_nll: 1.25,
                lr: 0.01,
                seconds: 0.5,
            }],
        };
        let mut buf = Vec::new();
        h.write_jsonl(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(buf.trim_ascii_end()).unwrap();
        for key in ["epoch", "train_nll", "val_nll", "lr", "seconds"] {
            assert!(v.get(key).is_some());
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr_floor: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_decay_factor: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
