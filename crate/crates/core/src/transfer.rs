//! Generalized transfer operators compiled from regular expressions.
//!
//! Each regex `R` induces a pair of CP maps, `E^r_R(Q) = Σ_{s∈R} A(s) Q A(s)ᵀ`
//! and its adjoint `E^l_R(Q) = Σ_{s∈R} A(s)ᵀ Q A(s)`, computed structurally:
//! characters are single Kraus terms, concatenation composes (in reverse
//! order on the left side), union adds, and a star is the geometric series
//! obtained by solving `(I - E_S) Q* = Q`.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UmpsError};
use crate::linalg::{
    dot, outer, power_iterate, trace_of_product, ClosureSolver, Matrix, PsdMatrix,
};
use crate::model::Umps;
use crate::regex::Regex;

/// A star closure is rejected once its spectral radius reaches `1 - DIVERGENCE_MARGIN`.
pub const DIVERGENCE_MARGIN: f64 = 1e-9;

const POWER_MAX_ITER: usize = 20_000;
const POWER_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// A single-symbol regex: one character, or any character.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symbol {
    Char(char),
    Any,
}

struct StarEntry {
    solver: ClosureSolver,
}

/// Per-call memo of solved star closures, keyed by AST node and side.
///
/// Entries depend on the model they were computed for, so a cache must never
/// outlive one top-level query. It also counts Kraus-level map applications.
/// Cloning shares the solved closures and copies the counter.
#[derive(Clone, Default)]
pub struct ClosureCache {
    stars: HashMap<(usize, Side), Arc<StarEntry>>,
    applications: usize,
}

impl ClosureCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of single-symbol transfer applications performed so far.
    pub fn applications(&self) -> usize {
        self.applications
    }

    pub(crate) fn count(&mut self, n: usize) {
        self.applications += n;
    }

    pub fn solved_closures(&self) -> usize {
        self.stars.len()
    }

    /// Solves every star closure of `r` on `side` ahead of time.
    pub(crate) fn prepare(&mut self, m: &Umps, r: &Regex, side: Side) -> Result<()> {
        match r {
            Regex::Char(_) | Regex::AnyChar => Ok(()),
            Regex::Concat(cs) | Regex::Union(cs) => cs.iter().try_for_each(|c| self.prepare(m, c, side)),
            Regex::Repeat(c, _) => self.prepare(m, c, side),
            Regex::Star(body) => {
                self.prepare(m, body, side)?;
                ensure_star(m, r, body, side, self)
            }
        }
    }

    /// `E_{S*}(q)` for a star node whose closure is already solved.
    pub(crate) fn closure(&self, star: &Regex, side: Side, q: &Matrix) -> Matrix {
        self.stars[&(node_key(star), side)].solver.solve_raw(q)
    }
}

/// `A(c) Q A(c)ᵀ` (right) or `A(c)ᵀ Q A(c)` (left) for a symbol index.
pub(crate) fn kraus(m: &Umps, k: usize, q: &Matrix, side: Side) -> Matrix {
    match side {
        Side::Right => Matrix::kraus_right(m.slice(k), q),
        Side::Left => Matrix::kraus_left(m.slice(k), q),
    }
}

/// The plain transfer operator `E_Σ`.
pub(crate) fn kraus_any(m: &Umps, q: &Matrix, side: Side) -> Matrix {
    let mut out = kraus(m, 0, q, side);
    for k in 1..m.alphabet().len() {
        out.add_scaled(&kraus(m, k, q, side), 1.0);
    }
    out
}

pub fn apply_char(m: &Umps, sym: Symbol, q: &PsdMatrix, side: Side) -> Result<PsdMatrix> {
    check_dim(m, q)?;
    let out = match sym {
        Symbol::Char(c) => kraus(m, m.alphabet().index_of(c)?, q.matrix(), side),
        Symbol::Any => kraus_any(m, q.matrix(), side),
    };
    Ok(PsdMatrix::from_symmetric(out))
}

fn check_dim(m: &Umps, q: &PsdMatrix) -> Result<()> {
    if q.dim() != m.bond_dim() {
        return Err(UmpsError::Dim(format!(
            "state is {}-dimensional, model has D={}",
            q.dim(),
            m.bond_dim()
        )));
    }
    Ok(())
}

/// Validation applied once per top-level query.
pub(crate) fn compile(m: &Umps, r: &Regex) -> Result<()> {
    r.check_alphabet(m.alphabet())?;
    r.check_stars()
}

/// Applies `E^side_R` to `q`, symmetrizing the result.
pub fn apply_transfer(m: &Umps, r: &Regex, q: &PsdMatrix, side: Side, cache: &mut ClosureCache) -> Result<PsdMatrix> {
    check_dim(m, q)?;
    compile(m, r)?;
    let out = apply_raw(m, r, q.matrix(), side, cache)?;
    Ok(PsdMatrix::from_symmetric(out))
}

/// Linear action of `E^side_R` on an arbitrary square matrix. Assumes
/// [`compile`] has accepted `r`.
pub(crate) fn apply_raw(m: &Umps, r: &Regex, q: &Matrix, side: Side, cache: &mut ClosureCache) -> Result<Matrix> {
    match r {
        Regex::Char(c) => {
            cache.count(1);
            Ok(kraus(m, m.alphabet().index_of(*c)?, q, side))
        }
        Regex::AnyChar => {
            cache.count(m.alphabet().len());
            Ok(kraus_any(m, q, side))
        }
        Regex::Concat(cs) => {
            let mut acc = q.clone();
            match side {
                Side::Right => {
                    for c in cs.iter().rev() {
                        acc = apply_raw(m, c, &acc, side, cache)?;
                    }
                }
                Side::Left => {
                    for c in cs {
                        acc = apply_raw(m, c, &acc, side, cache)?;
                    }
                }
            }
            Ok(acc)
        }
        Regex::Repeat(c, n) => {
            let mut acc = q.clone();
            for _ in 0..*n {
                acc = apply_raw(m, c, &acc, side, cache)?;
            }
            Ok(acc)
        }
        Regex::Union(cs) => {
            let mut acc = apply_raw(m, &cs[0], q, side, cache)?;
            for c in &cs[1..] {
                acc.add_scaled(&apply_raw(m, c, q, side, cache)?, 1.0);
            }
            Ok(acc)
        }
        Regex::Star(body) => {
            ensure_star(m, r, body, side, cache)?;
            Ok(cache.closure(r, side, q))
        }
    }
}

fn node_key(r: &Regex) -> usize {
    r as *const Regex as usize
}

/// Solves and memoizes the closure of `star = body*` on one side.
fn ensure_star(m: &Umps, star: &Regex, body: &Regex, side: Side, cache: &mut ClosureCache) -> Result<()> {
    let key = (node_key(star), side);
    if cache.stars.contains_key(&key) {
        return Ok(());
    }
    let dim = m.bond_dim();
    let spectral = power_iterate(dim, |x| apply_raw(m, body, x, side, cache), POWER_MAX_ITER, POWER_TOL)?;
    if spectral.rho >= 1.0 - DIVERGENCE_MARGIN {
        return Err(UmpsError::DivergentClosure { rho: spectral.rho });
    }
    let dense = materialize(dim, |x| apply_raw(m, body, x, side, cache))?;
    let solver = ClosureSolver::from_map_matrix(dense)?;
    cache.stars.insert(key, Arc::new(StarEntry { solver }));
    Ok(())
}

/// Dense `D² × D²` matrix of a fallible linear map.
fn materialize(dim: usize, mut f: impl FnMut(&Matrix) -> Result<Matrix>) -> Result<Matrix> {
    let n = dim * dim;
    let mut out = Matrix::zeros(n, n);
    let mut basis = Matrix::zeros(dim, dim);
    for col in 0..n {
        basis.as_mut_slice()[col] = 1.0;
        let image = f(&basis)?;
        basis.as_mut_slice()[col] = 0.0;
        for (row, v) in image.as_slice().iter().enumerate() {
            out[(row, col)] = *v;
        }
    }
    Ok(out)
}

/// `Z_R(Q_l, Q_r) = Tr(Q_l · E^r_R(Q_r))`.
pub fn znorm(m: &Umps, r: &Regex, ql: &PsdMatrix, qr: &PsdMatrix) -> Result<f64> {
    check_dim(m, ql)?;
    let mut cache = ClosureCache::new();
    let right = apply_transfer(m, r, qr, Side::Right, &mut cache)?;
    Ok(trace_of_product(ql.matrix(), right.matrix()))
}

/// `Z_R` with the model's own boundary conditions `ααᵀ` and `ωωᵀ`.
pub fn znorm_boundary(m: &Umps, r: &Regex) -> Result<f64> {
    znorm(m, r, &outer(m.alpha()), &outer(m.omega()))
}

/// Length-`n` normalization `Z_n = αᵀ (E^r)ⁿ(ωωᵀ) α`.
pub fn z_fixed(m: &Umps, n: usize) -> f64 {
    znorm_boundary(m, &Regex::any_of_length(n)).expect("Σⁿ is always summable")
}

/// `ln Z_n`, factoring out the trace after every transfer step so that long
/// lengths neither underflow nor overflow.
pub fn log_z_fixed(m: &Umps, n: usize) -> f64 {
    let mut q = outer(m.omega()).into_matrix();
    let mut log_scale = 0.0;
    for _ in 0..n {
        q = kraus_any(m, &q, Side::Right);
        let t = q.trace();
        if !(t > 0.0) {
            return f64::NEG_INFINITY;
        }
        q.scale(1.0 / t);
        log_scale += t.ln();
    }
    let alpha = m.alpha();
    log_scale + dot(&q.matvec(alpha), alpha).ln()
}

/// `Z_* = Tr(ααᵀ · E^r_{Σ*}(ωωᵀ))`, the mass of all strings.
pub fn z_star(m: &Umps) -> Result<f64> {
    znorm_boundary(m, &Regex::star(Regex::AnyChar))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StarReport {
    /// Canonical text of the starred subexpression, e.g. `(0|1)*`.
    pub node: String,
    pub rho: f64,
    pub converged: bool,
    /// Condition estimate of `I - E_S`, when the closure could be factored.
    pub condition: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub stars: Vec<StarReport>,
    pub ok: bool,
}

/// Spectral radius of every starred body, innermost first.
pub fn check_convergence(m: &Umps, r: &Regex) -> ConvergenceReport {
    let mut stars = Vec::new();
    let mut cache = ClosureCache::new();
    collect_stars(m, r, &mut cache, &mut stars);
    let ok = stars.iter().all(|s| s.rho < 1.0 - DIVERGENCE_MARGIN && s.condition.is_some());
    ConvergenceReport { stars, ok }
}

fn collect_stars(m: &Umps, r: &Regex, cache: &mut ClosureCache, out: &mut Vec<StarReport>) {
    match r {
        Regex::Char(_) | Regex::AnyChar => {}
        Regex::Concat(cs) | Regex::Union(cs) => cs.iter().for_each(|c| collect_stars(m, c, cache, out)),
        Regex::Repeat(c, _) => collect_stars(m, c, cache, out),
        Regex::Star(body) => {
            collect_stars(m, body, cache, out);
            let node = r.to_string();
            if body.nullable() {
                out.push(StarReport {
                    node,
                    rho: f64::INFINITY,
                    converged: false,
                    condition: None,
                });
                return;
            }
            let dim = m.bond_dim();
            let spectral = power_iterate(dim, |x| apply_raw(m, body, x, Side::Right, cache), POWER_MAX_ITER, POWER_TOL);
            let report = match spectral {
                Ok(s) => {
                    let condition = if s.rho < 1.0 - DIVERGENCE_MARGIN {
                        ensure_star(m, r, body, Side::Right, cache)
                            .ok()
                            .map(|_| cache.stars[&(node_key(r), Side::Right)].solver.condition())
                    } else {
                        None
                    };
                    StarReport {
                        node,
                        rho: s.rho,
                        converged: s.converged,
                        condition,
                    }
                }
                Err(_) => StarReport {
                    node,
                    rho: f64::INFINITY,
                    converged: false,
                    condition: None,
                },
            };
            out.push(report);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trace_product;
    use crate::model::tests::{random_model, scalar_model};
    use crate::model::Alphabet;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parse(m: &Umps, s: &str) -> Regex {
        Regex::parse(s, m.alphabet()).unwrap()
    }

    fn one() -> PsdMatrix {
        PsdMatrix::identity(1)
    }

    pub(crate) fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> PsdMatrix {
        let b = Matrix::from_vec(d, d, (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        PsdMatrix::new(b.mul_transb(&b)).unwrap()
    }

    #[test]
    fn apply_char_scalar_cases() {
        let m = scalar_model();
        let any = apply_char(&m, Symbol::Any, &one(), Side::Right).unwrap();
        assert_relative_eq!(any.matrix()[(0, 0)], 0.45);
        let zero = apply_char(&m, Symbol::Char('0'), &one(), Side::Right).unwrap();
        assert_relative_eq!(zero.matrix()[(0, 0)], 0.36);
        assert!(matches!(
            apply_char(&m, Symbol::Char('z'), &one(), Side::Right),
            Err(UmpsError::UnknownSymbol('z'))
        ));
    }

    #[test]
    fn apply_char_adjoint_identity() {
        let m = random_model(1, 3, "01", 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for sym in [Symbol::Char('0'), Symbol::Char('1'), Symbol::Any] {
            let ql = random_psd(&mut rng, 3);
            let qr = random_psd(&mut rng, 3);
            let lhs = trace_product(&ql, &apply_char(&m, sym, &qr, Side::Right).unwrap()).unwrap();
            let rhs = trace_product(&apply_char(&m, sym, &ql, Side::Left).unwrap(), &qr).unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn apply_transfer_scalar_cases() {
        let m = scalar_model();
        let mut cache = ClosureCache::new();
        let r0 = apply_transfer(&m, &parse(&m, "0"), &one(), Side::Right, &mut cache).unwrap();
        assert_relative_eq!(r0.matrix()[(0, 0)], 0.36);
        let star = apply_transfer(&m, &parse(&m, "(0|1)*"), &one(), Side::Right, &mut cache).unwrap();
        assert_relative_eq!(star.matrix()[(0, 0)], 1.0 / 0.55, max_relative = 1e-12);
    }

    #[test]
    fn finite_language_matches_direct_expansion() {
        let m = random_model(5, 2, "01", 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_psd(&mut rng, 2);
        let mut cache = ClosureCache::new();
        let got = apply_transfer(&m, &parse(&m, "01|10"), &q, Side::Right, &mut cache).unwrap();
        let mut expect = Matrix::zeros(2, 2);
        for s in ["01", "10"] {
            let a = m.string_matrix(s, crate::linalg::ChainMode::Sequential).unwrap();
            expect.add_scaled(&a.matmul(q.matrix()).unwrap().matmul(&a.transpose()).unwrap(), 1.0);
        }
        for (x, y) in got.matrix().as_slice().iter().zip(expect.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn left_concat_reverses_order() {
        let m = random_model(9, 3, "01", 0.9);
        let q = outer(&[0.3, -1.0, 0.5]);
        let mut cache = ClosureCache::new();
        let got = apply_transfer(&m, &parse(&m, "01"), &q, Side::Left, &mut cache).unwrap();
        let a = m.string_matrix("01", crate::linalg::ChainMode::Sequential).unwrap();
        let expect = a.transpose().matmul(q.matrix()).unwrap().matmul(&a).unwrap();
        for (x, y) in got.matrix().as_slice().iter().zip(expect.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn znorm_scalar_cases() {
        let m = scalar_model();
        assert_relative_eq!(znorm(&m, &Regex::AnyChar, &one(), &one()).unwrap(), 0.45);
        assert_relative_eq!(z_star(&m).unwrap(), 1.0 / 0.55, max_relative = 1e-12);
    }

    #[test]
    fn znorm_sigma_cubed_matches_enumeration() {
        let m = random_model(13, 3, "01", 0.7);
        let mut brute = 0.0;
        for code in 0..8usize {
            let s: String = (0..3).map(|b| if (code >> b) & 1 == 1 { '1' } else { '0' }).collect();
            brute += m.unnorm_prob(&s).unwrap();
        }
        let z = znorm_boundary(&m, &parse(&m, "..."));
        assert_relative_eq!(z.unwrap(), brute, max_relative = 1e-12);
    }

    #[test]
    fn z_fixed_cases() {
        let m = scalar_model();
        assert_relative_eq!(z_fixed(&m, 0), 1.0);
        assert_relative_eq!(z_fixed(&m, 2), 0.2025, max_relative = 1e-14);
        let r = random_model(17, 3, "01", 0.8);
        let ao = dot(r.alpha(), r.omega());
        assert_relative_eq!(z_fixed(&r, 0), ao * ao, max_relative = 1e-14);
        let mut brute = 0.0;
        for code in 0..32usize {
            let s: String = (0..5).map(|b| if (code >> b) & 1 == 1 { '1' } else { '0' }).collect();
            brute += r.score(&s, crate::linalg::ChainMode::Sequential).unwrap().powi(2);
        }
        assert_relative_eq!(z_fixed(&r, 5), brute, max_relative = 1e-10);
        assert_relative_eq!(log_z_fixed(&r, 5), brute.ln(), max_relative = 1e-12);
    }

    #[test]
    fn log_z_fixed_survives_long_lengths() {
        let m = Umps::init_random(4, Alphabet::from_str_symbols("01").unwrap(), 3, 0.3).unwrap();
        let lz = log_z_fixed(&m, 5000);
        assert!(lz.is_finite());
        let short = log_z_fixed(&m, 40);
        assert_relative_eq!(short, z_fixed(&m, 40).ln(), max_relative = 1e-10);
    }

    #[test]
    fn check_convergence_reports() {
        let m = scalar_model();
        let rep = check_convergence(&m, &parse(&m, "(0|1)*"));
        assert!(rep.ok);
        assert_eq!(rep.stars.len(), 1);
        assert_relative_eq!(rep.stars[0].rho, 0.45, max_relative = 1e-9);
        assert!(rep.stars[0].condition.is_some());

        let big = Umps::new(Alphabet::from_str_symbols("01").unwrap(), 1, &[1.0, 0.8], vec![1.0], vec![1.0]).unwrap();
        let rep = check_convergence(&big, &parse(&big, "(0|1)*"));
        assert!(!rep.ok);
        assert_relative_eq!(rep.stars[0].rho, 1.64, max_relative = 1e-9);

        let rep = check_convergence(&m, &parse(&m, "01|1"));
        assert!(rep.ok && rep.stars.is_empty());
    }

    #[test]
    fn divergent_and_nullable_stars_error() {
        let big = Umps::new(Alphabet::from_str_symbols("01").unwrap(), 1, &[1.0, 0.8], vec![1.0], vec![1.0]).unwrap();
        let err = znorm_boundary(&big, &Regex::parse("(0|1)*", big.alphabet()).unwrap()).unwrap_err();
        assert!(matches!(err, UmpsError::DivergentClosure { .. }));
        let m = scalar_model();
        let err = znorm_boundary(&m, &parse(&m, "(0*)*")).unwrap_err();
        assert!(matches!(err, UmpsError::NullableStar));
    }

    #[test]
    fn star_closure_matches_truncated_series() {
        let mut m = random_model(23, 3, "01", 0.5);
        // shrink until the closure converges comfortably
        let rho = check_convergence(&m, &Regex::star(Regex::AnyChar)).stars[0].rho;
        if rho > 0.8 {
            m = scale_model(&m, (0.8 / rho).sqrt());
        }
        let rho = check_convergence(&m, &Regex::star(Regex::AnyChar)).stars[0].rho;
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let q = random_psd(&mut rng, 3);
        let mut cache = ClosureCache::new();
        let solved = apply_transfer(&m, &Regex::star(Regex::AnyChar), &q, Side::Right, &mut cache).unwrap();
        let k = (1e-12f64.ln() / rho.ln()).ceil() as usize + 10;
        let mut term = q.matrix().clone();
        let mut sum = term.clone();
        for _ in 0..k {
            term = kraus_any(&m, &term, Side::Right);
            sum.add_scaled(&term, 1.0);
        }
        let mut diff = sum.clone();
        diff.add_scaled(solved.matrix(), -1.0);
        assert!(diff.frobenius_norm() <= 1e-9 * sum.frobenius_norm());
    }

    pub(crate) fn scale_model(m: &Umps, s: f64) -> Umps {
        let slices = m.slices().iter().map(|a| a.scaled(s)).collect();
        Umps::from_slices(m.alphabet().clone(), slices, m.alpha().to_vec(), m.omega().to_vec()).unwrap()
    }

    #[test]
    fn closures_are_memoized_per_node_and_side() {
        let m = scalar_model();
        let r = parse(&m, "(0|1)*1(0|1)*");
        let mut cache = ClosureCache::new();
        apply_transfer(&m, &r, &one(), Side::Right, &mut cache).unwrap();
        apply_transfer(&m, &r, &one(), Side::Right, &mut cache).unwrap();
        assert_eq!(cache.solved_closures(), 2);
        apply_transfer(&m, &r, &one(), Side::Left, &mut cache).unwrap();
        assert_eq!(cache.solved_closures(), 4);
    }
}
