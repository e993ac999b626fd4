//! Python bindings: `pyumps.UMPS`, `pyumps.Regex` and the grammar helpers.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use umps::grammars::{self, GrammarId};
use umps::sampler::{self, SampleRequest, DEFAULT_MAX_STAR_REPS};
use umps::training::{self, NormalizationMode, TrainConfig};
use umps::transfer;
use umps::{Alphabet, ChainMode, Matrix, UmpsError};

create_exception!(pyumps, Error, PyException, "Base class for pyumps errors.");
create_exception!(pyumps, ParseError, Error);
create_exception!(pyumps, DivergentClosureError, Error);
create_exception!(pyumps, ZeroMassError, Error);
create_exception!(pyumps, StarBudgetError, Error);
create_exception!(pyumps, ZeroAmplitudeError, Error);
create_exception!(pyumps, EmptyLanguageError, Error);
create_exception!(pyumps, NumericError, Error);
create_exception!(pyumps, FormatError, Error);

fn to_py(e: UmpsError) -> PyErr {
    let msg = e.to_string();
    match e {
        UmpsError::Parse { .. } | UmpsError::NullableStar | UmpsError::UnknownSymbol(_) => ParseError::new_err(msg),
        UmpsError::DivergentClosure { .. } | UmpsError::IllConditioned { .. } => DivergentClosureError::new_err(msg),
        UmpsError::ZeroMass => ZeroMassError::new_err(msg),
        UmpsError::StarBudget(_) => StarBudgetError::new_err(msg),
        UmpsError::ZeroAmplitude(_) => ZeroAmplitudeError::new_err(msg),
        UmpsError::NonFinite(_) => NumericError::new_err(msg),
        UmpsError::EmptyLanguage => EmptyLanguageError::new_err(msg),
        UmpsError::Format(_) => FormatError::new_err(msg),
        UmpsError::Io(_) => PyOSError::new_err(msg),
        UmpsError::Dim(_) | UmpsError::EmptyChain | UmpsError::Config(_) => PyValueError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for umps::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.as_slice().chunks(m.cols()).map(<[f64]>::to_vec).collect()
}

fn grammar(name: &str) -> PyResult<GrammarId> {
    name.parse().py_err()
}

fn normalization(name: &str) -> PyResult<NormalizationMode> {
    match name {
        "per_length" => Ok(NormalizationMode::PerLength),
        "all_strings" => Ok(NormalizationMode::AllStrings),
        other => Err(PyValueError::new_err(format!(
            "normalization must be 'per_length' or 'all_strings', got {other:?}"
        ))),
    }
}

/// A parsed regular expression over a fixed alphabet.
#[pyclass(name = "Regex", module = "pyumps", frozen)]
struct PyRegex {
    inner: umps::Regex,
}

#[pymethods]
impl PyRegex {
    #[new]
    fn new(text: &str, alphabet: &str) -> PyResult<Self> {
        let alphabet = Alphabet::from_str_symbols(alphabet).py_err()?;
        let inner = umps::Regex::parse(text, &alphabet).py_err()?;
        Ok(PyRegex { inner })
    }

    /// Number of derivations of `s`; 1 for every member of an unambiguous regex.
    fn match_count(&self, s: &str) -> u64 {
        self.inner.match_count(s)
    }

    fn matches(&self, s: &str) -> bool {
        self.inner.match_count(s) > 0
    }

    #[getter]
    fn star_height(&self) -> usize {
        self.inner.star_height()
    }

    #[getter]
    fn length(&self) -> usize {
        self.inner.length()
    }

    #[getter]
    fn nullable(&self) -> bool {
        self.inner.nullable()
    }

    /// `(shortest, longest)` member length; `longest` is None when unbounded.
    fn length_bounds(&self) -> (usize, Option<usize>) {
        self.inner.length_bounds()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Regex({:?})", self.inner.to_string())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Uniform matrix product state: `f(s) = αᵀ A(s₁)⋯A(sₙ) ω`, `P̃(s) = f(s)²`.
#[pyclass(name = "UMPS", module = "pyumps")]
struct PyUmps {
    inner: umps::Umps,
}

impl PyUmps {
    fn regex(&self, text: &str) -> PyResult<umps::Regex> {
        umps::Regex::parse(text, self.inner.alphabet()).py_err()
    }
}

#[pymethods]
impl PyUmps {
    /// Builds a model from one `D × D` matrix per symbol.
    #[new]
    fn new(alphabet: &str, slices: Vec<Vec<Vec<f64>>>, alpha: Vec<f64>, omega: Vec<f64>) -> PyResult<Self> {
        let alphabet = Alphabet::from_str_symbols(alphabet).py_err()?;
        let mut mats = Vec::with_capacity(slices.len());
        for rows in &slices {
            if rows.iter().any(|r| r.len() != rows.len()) {
                return Err(PyValueError::new_err("every slice must be a square matrix"));
            }
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            mats.push(Matrix::from_rows(&refs));
        }
        let inner = umps::Umps::from_slices(alphabet, mats, alpha, omega).py_err()?;
        Ok(PyUmps { inner })
    }

    /// Near-identity random initialization.
    #[staticmethod]
    #[pyo3(signature = (bond_dim, alphabet, seed=0, noise=0.1))]
    fn random(bond_dim: usize, alphabet: &str, seed: u64, noise: f64) -> PyResult<Self> {
        let alphabet = Alphabet::from_str_symbols(alphabet).py_err()?;
        let inner = umps::Umps::init_random(bond_dim, alphabet, seed, noise).py_err()?;
        Ok(PyUmps { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyUmps {
            inner: umps::Umps::load(path).py_err()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py_err()
    }

    #[getter]
    fn bond_dim(&self) -> usize {
        self.inner.bond_dim()
    }

    #[getter]
    fn alphabet(&self) -> String {
        self.inner.alphabet().as_string()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha().to_vec()
    }

    #[getter]
    fn omega(&self) -> Vec<f64> {
        self.inner.omega().to_vec()
    }

    #[getter]
    fn slices(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.slices().iter().map(matrix_rows).collect()
    }

    /// Amplitude `f(s)`.
    #[pyo3(signature = (s, parallel=true))]
    fn score(&self, s: &str, parallel: bool) -> PyResult<f64> {
        let mode = if parallel { ChainMode::Parallel } else { ChainMode::Sequential };
        self.inner.score(s, mode).py_err()
    }

    /// `f(s)²`.
    fn unnorm_prob(&self, s: &str) -> PyResult<f64> {
        self.inner.unnorm_prob(s).py_err()
    }

    /// `ln P(s)` relative to all strings of the same length.
    fn log_prob(&self, s: &str) -> PyResult<f64> {
        let f = self.inner.score(s, ChainMode::Parallel).py_err()?;
        Ok(2.0 * f.abs().ln() - transfer::log_z_fixed(&self.inner, s.chars().count()))
    }

    fn z_fixed(&self, n: usize) -> f64 {
        transfer::z_fixed(&self.inner, n)
    }

    fn log_z_fixed(&self, n: usize) -> f64 {
        transfer::log_z_fixed(&self.inner, n)
    }

    /// Total unnormalized mass `Z_R` of the strings matching `regex`.
    fn znorm(&self, regex: &str) -> PyResult<f64> {
        let r = self.regex(regex)?;
        transfer::znorm_boundary(&self.inner, &r).py_err()
    }

    fn z_star(&self) -> PyResult<f64> {
        transfer::z_star(&self.inner).py_err()
    }

    /// Spectral radius report for every star in `regex`.
    fn check_convergence<'py>(&self, py: Python<'py>, regex: &str) -> PyResult<Bound<'py, PyDict>> {
        let report = transfer::check_convergence(&self.inner, &self.regex(regex)?);
        let out = PyDict::new(py);
        out.set_item("ok", report.ok)?;
        let mut stars = Vec::new();
        for s in &report.stars {
            let d = PyDict::new(py);
            d.set_item("node", &s.node)?;
            d.set_item("rho", s.rho)?;
            d.set_item("converged", s.converged)?;
            d.set_item("condition", s.condition)?;
            stars.push(d);
        }
        out.set_item("stars", stars)?;
        Ok(out)
    }

    /// `count` strings drawn exactly from `P(s | s ∈ L(regex))`.
    #[pyo3(signature = (regex, count=1, seed=0, max_star_reps=DEFAULT_MAX_STAR_REPS))]
    fn sample(&self, py: Python<'_>, regex: &str, count: usize, seed: u64, max_star_reps: usize) -> PyResult<Vec<String>> {
        let req = SampleRequest {
            regex: self.regex(regex)?,
            max_star_reps,
            rng_seed: seed,
        };
        py.detach(|| sampler::sample_many(&self.inner, &req, count)).py_err()
    }

    /// `count` fills of `hole` between `prefix` and `suffix`.
    #[pyo3(signature = (prefix, suffix, hole=".", count=1, seed=0))]
    fn complete(&self, py: Python<'_>, prefix: &str, suffix: &str, hole: &str, count: usize, seed: u64) -> PyResult<Vec<String>> {
        let hole = self.regex(hole)?;
        py.detach(|| sampler::complete_many(&self.inner, prefix, suffix, &hole, seed, count)).py_err()
    }

    #[pyo3(signature = (batch, normalization="per_length"))]
    fn nll(&self, batch: Vec<String>, normalization: &str) -> PyResult<f64> {
        training::nll_with(&self.inner, &batch, self::normalization(normalization)?).py_err()
    }

    /// `(loss, {"core": [[[..]]], "alpha": [..], "omega": [..]})`, with the
    /// core gradient laid out like `slices`.
    #[pyo3(signature = (batch, normalization="per_length"))]
    fn grad_nll<'py>(&self, py: Python<'py>, batch: Vec<String>, normalization: &str) -> PyResult<(f64, Bound<'py, PyDict>)> {
        let (loss, g) = training::grad_nll_with(&self.inner, &batch, self::normalization(normalization)?).py_err()?;
        let out = PyDict::new(py);
        out.set_item("core", g.d_core.iter().map(matrix_rows).collect::<Vec<_>>())?;
        out.set_item("alpha", g.d_alpha.clone())?;
        out.set_item("omega", g.d_omega.clone())?;
        Ok((loss, out))
    }

    fn __repr__(&self) -> String {
        format!("UMPS(bond_dim={}, alphabet={:?})", self.inner.bond_dim(), self.inner.alphabet().as_string())
    }
}

/// Trains from `model` and returns `(best_model, history)`, where history is a
/// list of per-epoch dicts. Keyword arguments override the default config.
#[pyfunction]
#[pyo3(signature = (model, train_set, val_set, **config))]
fn train<'py>(
    py: Python<'py>,
    model: &PyUmps,
    train_set: Vec<String>,
    val_set: Vec<String>,
    config: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyUmps, Vec<Bound<'py, PyDict>>)> {
    let mut cfg = TrainConfig::default();
    if let Some(kw) = config {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            match key.as_str() {
                "batch_size" => cfg.batch_size = v.extract()?,
                "init_lr" => cfg.init_lr = v.extract()?,
                "lr_floor" => cfg.lr_floor = v.extract()?,
                "lr_decay_factor" => cfg.lr_decay_factor = v.extract()?,
                "patience_epochs" => cfg.patience_epochs = v.extract()?,
                "adam_beta1" => cfg.adam_beta1 = v.extract()?,
                "adam_beta2" => cfg.adam_beta2 = v.extract()?,
                "adam_eps" => cfg.adam_eps = v.extract()?,
                "max_epochs" => cfg.max_epochs = v.extract()?,
                "seed" => cfg.seed = v.extract()?,
                "clip_norm" => cfg.clip_norm = v.extract()?,
                "normalization" => cfg.normalization = normalization(&v.extract::<String>()?)?,
                other => return Err(PyValueError::new_err(format!("unknown training option {other:?}"))),
            }
        }
    }
    let m = model.inner.clone();
    let (best, history) = py.detach(|| training::train(&m, &train_set, &val_set, &cfg)).py_err()?;
    let mut records = Vec::with_capacity(history.records.len());
    for r in &history.records {
        let d = PyDict::new(py);
        d.set_item("epoch", r.epoch)?;
        d.set_item("train_nll", r.train_nll)?;
        d.set_item("val_nll", r.val_nll)?;
        d.set_item("lr", r.lr)?;
        d.set_item("seconds", r.seconds)?;
        records.push(d);
    }
    Ok((PyUmps { inner: best }, records))
}

#[pyfunction]
fn is_member(grammar: &str, s: &str) -> PyResult<bool> {
    grammars::is_member(self::grammar(grammar)?, s).py_err()
}

#[pyfunction]
fn count_strings(grammar: &str, n: usize) -> PyResult<u128> {
    grammars::count_strings(self::grammar(grammar)?, n).py_err()
}

#[pyfunction]
#[pyo3(signature = (grammar, min_len, max_len, count, seed=0))]
fn gen_dataset(grammar: &str, min_len: usize, max_len: usize, count: usize, seed: u64) -> PyResult<Vec<String>> {
    let data = grammars::gen_dataset(self::grammar(grammar)?, min_len, max_len, count, seed).py_err()?;
    Ok(data.strings)
}

#[pyfunction]
fn grammar_accuracy(grammar: &str, samples: Vec<String>) -> PyResult<f64> {
    grammars::grammar_accuracy(self::grammar(grammar)?, &samples).py_err()
}

#[pymodule]
fn pyumps(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyUmps>()?;
    m.add_class::<PyRegex>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(is_member, m)?)?;
    m.add_function(wrap_pyfunction!(count_strings, m)?)?;
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(grammar_accuracy, m)?)?;
    m.add("Error", py.get_type::<Error>())?;
    m.add("ParseError", py.get_type::<ParseError>())?;
    m.add("DivergentClosureError", py.get_type::<DivergentClosureError>())?;
    m.add("ZeroMassError", py.get_type::<ZeroMassError>())?;
    m.add("StarBudgetError", py.get_type::<StarBudgetError>())?;
    m.add("ZeroAmplitudeError", py.get_type::<ZeroAmplitudeError>())?;
    m.add("EmptyLanguageError", py.get_type::<EmptyLanguageError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add("FormatError", py.get_type::<FormatError>())?;
    m.add("DEFAULT_MAX_STAR_REPS", DEFAULT_MAX_STAR_REPS)?;
    Ok(())
}
