//! Run configuration resolution: flags override the config file, which
//! overrides built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use umps::training::TrainConfig;
use umps::UmpsError;

use crate::error::CliError;

/// Per-command sections of a JSON config file. Every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub gen: Option<Value>,
    #[serde(default)]
    pub train: Option<Value>,
    #[serde(default)]
    pub sample: Option<Value>,
    #[serde(default)]
    pub complete: Option<Value>,
    #[serde(default)]
    pub score: Option<Value>,
    #[serde(default)]
    pub eval: Option<Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(UmpsError::from)?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
    }

    pub fn section(&self, command: &str) -> Option<&Value> {
        match command {
            "gen" => self.gen.as_ref(),
            "train" => self.train.as_ref(),
            "sample" => self.sample.as_ref(),
            "complete" => self.complete.as_ref(),
            "score" => self.score.as_ref(),
            "eval" => self.eval.as_ref(),
            _ => None,
        }
    }
}

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces what was there.
pub fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t.clone(),
    }
}

/// Defaults of `T`, then the config section, then the explicitly given flags.
pub fn resolve<T>(command: &str, flags: &impl Serialize, file: Option<&ConfigFile>) -> Result<T, CliError>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut value = to_value(&T::default())?;
    if let Some(section) = file.and_then(|f| f.section(command)) {
        if !section.is_object() {
            return Err(CliError::Usage(format!("config section {command:?} must be an object")));
        }
        merge(&mut value, section);
    }
    merge(&mut value, &to_value(flags)?);
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{command}: {e}")))
}

fn to_value(v: &impl Serialize) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenRun {
    pub grammar: Option<String>,
    pub min_len: usize,
    pub max_len: usize,
    pub count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for GenRun {
    fn default() -> Self {
        GenRun {
            grammar: None,
            min_len: 1,
            max_len: 15,
            count: 1000,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub data: Option<PathBuf>,
    /// Validation set; the training data when absent.
    pub val: Option<PathBuf>,
    pub bond_dim: usize,
    pub out: Option<PathBuf>,
    /// History file; `<out>.history.jsonl` when absent.
    pub history: Option<PathBuf>,
    /// Symbols declared up front, in model order.
    pub alphabet: Option<String>,
    pub init_noise: f64,
    pub training: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            data: None,
            val: None,
            bond_dim: 20,
            out: None,
            history: None,
            alphabet: None,
            init_noise: 0.1,
            training: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleRun {
    pub model: Option<PathBuf>,
    pub regex: Option<String>,
    pub count: usize,
    pub seed: u64,
    pub max_star_reps: usize,
    pub out: Option<PathBuf>,
}

impl Default for SampleRun {
    fn default() -> Self {
        SampleRun {
            model: None,
            regex: None,
            count: 1,
            seed: 0,
            max_star_reps: umps::sampler::DEFAULT_MAX_STAR_REPS,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompleteRun {
    pub model: Option<PathBuf>,
    pub prefix: String,
    pub suffix: String,
    pub hole: String,
    pub count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for CompleteRun {
    fn default() -> Self {
        CompleteRun {
            model: None,
            prefix: String::new(),
            suffix: String::new(),
            hole: ".".into(),
            count: 1,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Relative to all strings of the query's length.
    Fixed,
    /// Relative to all strings of every length.
    Star,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreRun {
    pub model: Option<PathBuf>,
    pub regex: Option<String>,
    pub string: Option<String>,
    pub stdin: bool,
    /// Fixed for strings and star for regexes when absent.
    pub mode: Option<ScoreMode>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    pub model: Option<PathBuf>,
    pub grammar: Option<String>,
    pub regex: String,
    pub count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            model: None,
            grammar: None,
            regex: ".{16}".into(),
            count: 1000,
            seed: 0,
            out: None,
        }
    }
}

/// Unwraps a setting that has no default.
pub fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required setting --{}", name.replace('_', "-"))))
}

/// Records the resolved configuration: next to `out` when writing a file,
/// otherwise as one JSON line on stderr.
pub fn record_run<T: Serialize>(command: &str, cfg: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut obj = Map::new();
    obj.insert("command".into(), Value::String(command.into()));
    obj.insert("config".into(), to_value(cfg)?);
    obj.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    let value = Value::Object(obj);
    match out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&value).expect("json values serialize");
            fs::write(run_path(path), text + "\n").map_err(UmpsError::from)?;
        }
        None => eprintln!("{value}"),
    }
    Ok(())
}

pub fn run_path(out: &Path) -> PathBuf {
    sibling(out, ".run.json")
}

pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}
