//! The u-MPS parameter object and string evaluation.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmpsError};
use crate::linalg::{chain_reduce, dot, ChainMode, Matrix, Vector};

const MAGIC: &[u8; 4] = b"UMPS";
const FORMAT_VERSION: u32 = 1;

/// Ordered set of distinct symbols. Position in the list is the symbol index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(UmpsError::Config("alphabet must contain at least one symbol".into()));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(UmpsError::Config(format!("duplicate symbol {c:?} in alphabet")));
            }
        }
        Ok(Alphabet { symbols })
    }

    /// Alphabet from the characters of `s`, in order of declaration.
    pub fn from_str_symbols(s: &str) -> Result<Self> {
        Alphabet::new(s.chars().collect())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> char {
        self.symbols[index]
    }

    pub fn contains(&self, c: char) -> bool {
        self.symbols.contains(&c)
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.symbols
            .iter()
            .position(|&x| x == c)
            .ok_or(UmpsError::UnknownSymbol(c))
    }

    pub fn encode(&self, s: &str) -> Result<Vec<usize>> {
        s.chars().map(|c| self.index_of(c)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().map(|&i| self.symbols[i]).collect()
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }
}

/// Uniform matrix product state: one core tensor of shape `(D, d, D)` shared
/// by every site, plus boundary vectors `alpha` and `omega`.
///
/// The core is stored as `d` slices, slice `k` being the `D × D` matrix of
/// symbol `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Umps {
    alphabet: Alphabet,
    slices: Vec<Matrix>,
    alpha: Vector,
    omega: Vector,
}

impl Umps {
    /// Builds a model from a core tensor in `(left bond, symbol, right bond)`
    /// row-major order.
    pub fn new(alphabet: Alphabet, bond_dim: usize, core: &[f64], alpha: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        let d = alphabet.len();
        if bond_dim == 0 {
            return Err(UmpsError::Config("bond dimension must be at least 1".into()));
        }
        if core.len() != bond_dim * d * bond_dim || alpha.len() != bond_dim || omega.len() != bond_dim {
            return Err(UmpsError::Dim(format!(
                "core of {} entries and boundaries of {}/{} do not fit D={bond_dim}, d={d}",
                core.len(),
                alpha.len(),
                omega.len()
            )));
        }
        let mut slices = vec![Matrix::zeros(bond_dim, bond_dim); d];
        for i in 0..bond_dim {
            for (k, slice) in slices.iter_mut().enumerate() {
                for j in 0..bond_dim {
                    slice[(i, j)] = core[(i * d + k) * bond_dim + j];
                }
            }
        }
        Self::from_slices(alphabet, slices, alpha, omega)
    }

    /// Builds a model from one `D × D` matrix per symbol.
    pub fn from_slices(alphabet: Alphabet, slices: Vec<Matrix>, alpha: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        let dim = alpha.len();
        if dim == 0 || omega.len() != dim || slices.len() != alphabet.len() {
            return Err(UmpsError::Dim("slice count or boundary size mismatch".into()));
        }
        if slices.iter().any(|m| m.rows() != dim || m.cols() != dim) {
            return Err(UmpsError::Dim(format!("every slice must be {dim}x{dim}")));
        }
        let m = Umps {
            alphabet,
            slices,
            alpha: alpha.into(),
            omega: omega.into(),
        };
        if !m.is_finite() {
            return Err(UmpsError::Config("model parameters must be finite".into()));
        }
        Ok(m)
    }

    /// Random noisy-identity initialization.
    ///
    /// Each slice is `I/√d` plus i.i.d. `N(0, noise_scale²)` entries; `alpha`
    /// and `omega` are independent unit-norm Gaussian vectors.
    pub fn init_random(bond_dim: usize, alphabet: Alphabet, seed: u64, noise_scale: f64) -> Result<Self> {
        if bond_dim == 0 {
            return Err(UmpsError::Config("bond dimension must be at least 1".into()));
        }
        if !(noise_scale >= 0.0) {
            return Err(UmpsError::Config("noise scale must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = alphabet.len();
        let diag = 1.0 / (d as f64).sqrt();
        let noise = Normal::new(0.0, noise_scale).expect("finite non-negative std");
        let slices = (0..d)
            .map(|_| {
                let mut m = Matrix::identity(bond_dim);
                m.scale(diag);
                for x in m.as_mut_slice() {
                    *x += noise.sample(&mut rng);
                }
                m
            })
            .collect();
        let unit = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..bond_dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = crate::linalg::norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            v
        };
        let alpha = unit(&mut rng);
        let omega = unit(&mut rng);
        Self::from_slices(alphabet, slices, alpha, omega)
    }

    pub fn bond_dim(&self) -> usize {
        self.alpha.dim()
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn slices(&self) -> &[Matrix] {
        &self.slices
    }

    pub fn slice(&self, symbol: usize) -> &Matrix {
        &self.slices[symbol]
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Matrix], &mut [f64], &mut [f64]) {
        (&mut self.slices, self.alpha.as_mut_slice(), self.omega.as_mut_slice())
    }

    /// Core tensor flattened in `(left bond, symbol, right bond)` order.
    pub fn core_tensor(&self) -> Vec<f64> {
        let (dim, d) = (self.bond_dim(), self.alphabet.len());
        let mut out = vec![0.0; dim * d * dim];
        for i in 0..dim {
            for (k, slice) in self.slices.iter().enumerate() {
                for j in 0..dim {
                    out[(i * d + k) * dim + j] = slice[(i, j)];
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices.iter().all(Matrix::is_finite)
            && self.alpha.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
    }

    /// The matrix `A(c)` of a single symbol.
    pub fn char_matrix(&self, c: char) -> Result<Matrix> {
        Ok(self.slices[self.alphabet.index_of(c)?].clone())
    }

    /// `A(s) = A(s₁)⋯A(sₙ)`; the empty string maps to the identity.
    pub fn string_matrix(&self, s: &str, mode: ChainMode) -> Result<Matrix> {
        let idx = self.alphabet.encode(s)?;
        Ok(self.indices_matrix(&idx, mode))
    }

    pub(crate) fn indices_matrix(&self, idx: &[usize], mode: ChainMode) -> Matrix {
        if idx.is_empty() {
            return Matrix::identity(self.bond_dim());
        }
        let mats: Vec<Matrix> = idx.iter().map(|&k| self.slices[k].clone()).collect();
        chain_reduce(&mats, mode).expect("slices share one square shape")
    }

    /// Amplitude `f(s) = αᵀ A(s) ω`.
    ///
    /// Sequential mode contracts from the left with matrix-vector products;
    /// parallel mode forms `A(s)` by pairwise reduction first.
    pub fn score(&self, s: &str, mode: ChainMode) -> Result<f64> {
        let idx = self.alphabet.encode(s)?;
        Ok(self.score_indices(&idx, mode))
    }

    pub(crate) fn score_indices(&self, idx: &[usize], mode: ChainMode) -> f64 {
        match mode {
            ChainMode::Sequential => {
                let mut v = self.alpha.to_vec();
                for &k in idx {
                    v = self.slices[k].vecmat(&v);
                }
                dot(&v, &self.omega)
            }
            ChainMode::Parallel => {
                let m = self.indices_matrix(idx, mode);
                dot(&m.vecmat(&self.alpha), &self.omega)
            }
        }
    }

    /// Born-rule weight `P̃(s) = f(s)²`.
    pub fn unnorm_prob(&self, s: &str) -> Result<f64> {
        Ok(self.score(s, ChainMode::Sequential)?.powi(2))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (dim, d) = (self.bond_dim(), self.alphabet.len());
        let alpha = self.alphabet.as_string();
        let mut out = Vec::with_capacity(20 + alpha.len() + 8 * (dim * d * dim + 2 * dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(alpha.len() as u32).to_le_bytes());
        out.extend_from_slice(alpha.as_bytes());
        for x in self.core_tensor().iter().chain(self.alpha.iter()).chain(self.omega.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(UmpsError::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(UmpsError::Format(format!("unsupported format version {version}")));
        }
        let dim = r.u32()? as usize;
        let d = r.u32()? as usize;
        let alen = r.u32()? as usize;
        let alpha_str = std::str::from_utf8(r.take(alen)?)
            .map_err(|_| UmpsError::Format("alphabet is not valid UTF-8".into()))?;
        let alphabet = Alphabet::from_str_symbols(alpha_str).map_err(|e| UmpsError::Format(e.to_string()))?;
        if alphabet.len() != d || dim == 0 {
            return Err(UmpsError::Format(format!(
                "header declares D={dim}, d={d} but alphabet has {} symbols",
                alphabet.len()
            )));
        }
        let expected = dim
            .checked_mul(d)
            .and_then(|x| x.checked_mul(dim))
            .and_then(|x| x.checked_add(2 * dim))
            .ok_or_else(|| UmpsError::Format("shape overflow".into()))?;
        if r.remaining() != expected * 8 {
            return Err(UmpsError::Format(format!(
                "expected {} parameter bytes, found {}",
                expected * 8,
                r.remaining()
            )));
        }
        let mut vals = Vec::with_capacity(expected);
        for _ in 0..expected {
            vals.push(r.f64()?);
        }
        let omega = vals.split_off(dim * d * dim + dim);
        let alpha = vals.split_off(dim * d * dim);
        Umps::new(alphabet, dim, &vals, alpha, omega).map_err(|e| UmpsError::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(UmpsError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// D=1 model over "01" with `A(0)=0.6`, `A(1)=0.3`, `α=ω=1`.
    pub fn scalar_model() -> Umps {
        Umps::new(Alphabet::from_str_symbols("01").unwrap(), 1, &[0.6, 0.3], vec![1.0], vec![1.0]).unwrap()
    }

    pub fn random_model(seed: u64, dim: usize, symbols: &str, scale: f64) -> Umps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphabet = Alphabet::from_str_symbols(symbols).unwrap();
        let d = alphabet.len();
        let core: Vec<f64> = (0..dim * d * dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let alpha = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let omega = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Umps::new(alphabet, dim, &core, alpha, omega).unwrap()
    }

    #[test]
    fn alphabet_rejects_duplicates_and_empty() {
        assert!(Alphabet::from_str_symbols("0a0").is_err());
        assert!(Alphabet::from_str_symbols("").is_err());
        let a = Alphabet::from_str_symbols("(&)").unwrap();
        assert_eq!(a.index_of(')').unwrap(), 2);
        assert!(matches!(a.index_of('x'), Err(UmpsError::UnknownSymbol('x'))));
    }

    #[test]
    fn char_matrix_cases() {
        let m = scalar_model();
        assert_eq!(m.char_matrix('0').unwrap(), Matrix::from_rows(&[&[0.6]]));
        assert!(matches!(m.char_matrix('x'), Err(UmpsError::UnknownSymbol('x'))));
        let ident = Umps::from_slices(
            Alphabet::from_str_symbols("ab").unwrap(),
            vec![Matrix::identity(2), Matrix::identity(2)],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        assert_eq!(ident.char_matrix('b').unwrap(), Matrix::identity(2));
    }

    #[test]
    fn string_matrix_and_score_on_scalar_model() {
        let m = scalar_model();
        assert_eq!(m.string_matrix("", ChainMode::Parallel).unwrap(), Matrix::identity(1));
        assert_relative_eq!(m.string_matrix("01", ChainMode::Sequential).unwrap()[(0, 0)], 0.18);
        assert_relative_eq!(m.score("01", ChainMode::Sequential).unwrap(), 0.18);
        assert_relative_eq!(m.unnorm_prob("0").unwrap(), 0.36);
        assert!(m.score("0x", ChainMode::Sequential).is_err());
    }

    #[test]
    fn empty_string_scores_boundary_overlap() {
        let m = random_model(3, 4, "ab", 0.5);
        let ao = dot(m.alpha(), m.omega());
        for mode in [ChainMode::Sequential, ChainMode::Parallel] {
            assert_relative_eq!(m.score("", mode).unwrap(), ao);
        }
        assert_relative_eq!(m.unnorm_prob("").unwrap(), ao * ao);
    }

    #[test]
    fn modes_agree_on_long_string() {
        let m = random_model(7, 4, "01", 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: String = (0..100).map(|_| if rng.random_bool(0.5) { '0' } else { '1' }).collect();
        let a = m.string_matrix(&s, ChainMode::Sequential).unwrap();
        let b = m.string_matrix(&s, ChainMode::Parallel).unwrap();
        let mut diff = a.clone();
        diff.add_scaled(&b, -1.0);
        assert!(diff.frobenius_norm() <= 1e-12 * a.frobenius_norm());
    }

    /// Brute-force oracle: the element of the explicit order-n tensor,
    /// summing over every bond index assignment.
    fn tensor_element(m: &Umps, idx: &[usize]) -> f64 {
        let dim = m.bond_dim();
        let n = idx.len();
        let mut total = 0.0;
        let configs = dim.pow(n as u32 + 1);
        for c in 0..configs {
            let mut bonds = Vec::with_capacity(n + 1);
            let mut x = c;
            for _ in 0..=n {
                bonds.push(x % dim);
                x /= dim;
            }
            let mut term = m.alpha()[bonds[0]] * m.omega()[bonds[n]];
            for (site, &k) in idx.iter().enumerate() {
                term *= m.slice(k)[(bonds[site], bonds[site + 1])];
            }
            total += term;
        }
        total
    }

    #[test]
    fn score_matches_explicit_tensor() {
        let m = random_model(11, 3, "01", 0.8);
        for n in 0..=4 {
            for code in 0..(1usize << n) {
                let idx: Vec<usize> = (0..n).map(|b| (code >> b) & 1).collect();
                let s = m.alphabet().decode(&idx);
                let expect = tensor_element(&m, &idx);
                for mode in [ChainMode::Sequential, ChainMode::Parallel] {
                    assert_relative_eq!(m.score(&s, mode).unwrap(), expect, epsilon = 1e-12, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn init_random_properties() {
        let a = Alphabet::from_str_symbols("01").unwrap();
        let m = Umps::init_random(3, a.clone(), 0, 0.0).unwrap();
        let expect = Matrix::identity(3).scaled(1.0 / 2f64.sqrt());
        for s in m.slices() {
            for (x, y) in s.as_slice().iter().zip(expect.as_slice()) {
                assert_relative_eq!(x, y);
            }
        }
        assert_relative_eq!(crate::linalg::norm(m.alpha()), 1.0, max_relative = 1e-14);
        let m1 = Umps::init_random(3, a.clone(), 5, 0.1).unwrap();
        let m2 = Umps::init_random(3, a.clone(), 5, 0.1).unwrap();
        assert_eq!(m1.to_bytes(), m2.to_bytes());
        let m3 = Umps::init_random(3, a, 6, 0.1).unwrap();
        assert_ne!(m1.core_tensor(), m3.core_tensor());
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.umps");
        let m = random_model(21, 3, "(&)", 1.0);
        m.save(&path).unwrap();
        let back = Umps::load(&path).unwrap();
        assert_eq!(back.to_bytes(), m.to_bytes());
        assert_eq!(back, m);

        let bytes = m.to_bytes();
        assert!(matches!(Umps::from_bytes(&bytes[..bytes.len() - 3]), Err(UmpsError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Umps::from_bytes(&bad), Err(UmpsError::Format(_))));
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        assert!(matches!(Umps::from_bytes(&wrong_version), Err(UmpsError::Format(_))));
        assert!(matches!(Umps::load(dir.path().join("missing")), Err(UmpsError::Io(_))));
    }

    #[test]
    fn core_tensor_layout_round_trips() {
        let m = random_model(4, 2, "abc", 1.0);
        let core = m.core_tensor();
        // entry (i, k, j) lives at (i*d + k)*D + j
        assert_eq!(core[(1 * 3 + 2) * 2], m.slice(2)[(1, 0)]);
        let back = Umps::new(m.alphabet().clone(), 2, &core, m.alpha().to_vec(), m.omega().to_vec()).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn string_matrix_is_compositional(seed in any::<u64>(), s in "[01]{0,20}", t in "[01]{0,20}") {
                let m = random_model(seed, 3, "01", 0.9);
                let st = m.string_matrix(&format!("{s}{t}"), ChainMode::Sequential).unwrap();
                let prod = m.string_matrix(&s, ChainMode::Sequential).unwrap()
                    .matmul(&m.string_matrix(&t, ChainMode::Sequential).unwrap()).unwrap();
                let mut diff = st.clone();
                diff.add_scaled(&prod, -1.0);
                prop_assert!(diff.frobenius_norm() <= 1e-12 * st.frobenius_norm().max(f64::MIN_POSITIVE));
            }
        }
    }
}
