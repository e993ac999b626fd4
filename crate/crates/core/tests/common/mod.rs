//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use umps::{Alphabet, Matrix, PsdMatrix, Umps};

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    Matrix::from_rows(&refs)
}

pub fn na_slices(m: &Umps) -> Vec<DMatrix<f64>> {
    m.slices().iter().map(to_na).collect()
}

/// `A(s)` by naive left-to-right multiplication in nalgebra.
pub fn na_string_matrix(m: &Umps, s: &str) -> DMatrix<f64> {
    let slices = na_slices(m);
    let mut acc = DMatrix::identity(m.bond_dim(), m.bond_dim());
    for c in s.chars() {
        acc *= &slices[m.alphabet().index_of(c).unwrap()];
    }
    acc
}

pub fn na_score(m: &Umps, s: &str) -> f64 {
    let a = DVector::from_column_slice(m.alpha());
    let w = DVector::from_column_slice(m.omega());
    (a.transpose() * na_string_matrix(m, s) * w)[(0, 0)]
}

pub fn all_strings(symbols: &str, n: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..n {
        out = out
            .iter()
            .flat_map(|p| symbols.chars().map(move |c| format!("{p}{c}")))
            .collect();
    }
    out
}

pub fn strings_up_to(symbols: &str, max_len: usize) -> Vec<String> {
    (0..=max_len).flat_map(|n| all_strings(symbols, n)).collect()
}

/// Model with i.i.d. uniform entries in `[-scale, scale]` and unit-range boundaries.
pub fn random_model(seed: u64, dim: usize, symbols: &str, scale: f64) -> Umps {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = Alphabet::from_str_symbols(symbols).unwrap();
    let d = alphabet.len();
    let core: Vec<f64> = (0..dim * d * dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    let alpha = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let omega = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Umps::new(alphabet, dim, &core, alpha, omega).unwrap()
}

/// Spectral radius of `Q ↦ Σ A Q Aᵀ` from the eigenvalues of `Σ A ⊗ A`.
pub fn na_transfer_rho(slices: &[DMatrix<f64>]) -> f64 {
    let d = slices[0].nrows();
    let mut t = DMatrix::zeros(d * d, d * d);
    for a in slices {
        t += a.kronecker(a);
    }
    t.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn scale_model(m: &Umps, s: f64) -> Umps {
    let slices = m.slices().iter().map(|a| a.scaled(s)).collect();
    Umps::from_slices(m.alphabet().clone(), slices, m.alpha().to_vec(), m.omega().to_vec()).unwrap()
}

/// Rescales the slices so the plain transfer operator has spectral radius `rho`.
pub fn with_rho(m: &Umps, rho: f64) -> Umps {
    let current = na_transfer_rho(&na_slices(m));
    scale_model(m, (rho / current).sqrt())
}

pub fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> PsdMatrix {
    let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    PsdMatrix::new(from_na(&(&b * b.transpose()))).unwrap()
}

/// `Σ w_s A(s) Q A(s)ᵀ` over the given weighted strings.
pub fn na_weighted_kraus_sum(m: &Umps, q: &Matrix, weighted: &[(String, f64)]) -> DMatrix<f64> {
    let q = to_na(q);
    let mut out = DMatrix::zeros(q.nrows(), q.ncols());
    for (s, w) in weighted {
        let a = na_string_matrix(m, s);
        out += *w * &a * &q * a.transpose();
    }
    out
}

pub fn frob_rel(got: &Matrix, want: &DMatrix<f64>) -> f64 {
    let got = to_na(got);
    (got - want).norm() / want.norm()
}

/// Pearson chi-square p-value. Bins whose expected count is below 5 are
/// pooled (in order) until the pool reaches 5.
pub fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut po, mut pe) = (0.0, 0.0);
    for (o, p) in observed.iter().zip(probs) {
        po += *o as f64;
        pe += p * n as f64;
        if pe >= 5.0 {
            bins.push((po, pe));
            po = 0.0;
            pe = 0.0;
        }
    }
    if pe > 0.0 || po > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += po;
                last.1 += pe;
            }
            None => bins.push((po, pe)),
        }
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    ChiSquared::new((bins.len() - 1) as f64).unwrap().sf(stat)
}
