use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde_json::json;
use umps::grammars::{self, Dataset, GrammarId};
use umps::sampler::{self, SampleRequest};
use umps::training::{self, EpochRecord};
use umps::transfer::{log_z_fixed, z_star, znorm_boundary};
use umps::{Alphabet, ChainMode, Regex, Umps, UmpsError};

use crate::config::{
    record_run, required, sibling, CompleteRun, EvalRun, GenRun, SampleRun, ScoreMode, ScoreRun, TrainRun,
};
use crate::error::CliError;

fn grammar(name: &Option<String>) -> Result<GrammarId, CliError> {
    required(name, "grammar")?.parse::<GrammarId>().map_err(|e| CliError::Usage(e.to_string()))
}

/// Writes one line per item to `out`, or to stdout.
fn emit<I, S>(lines: I, out: Option<&Path>) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::at(p)(e.into()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for line in lines {
        writeln!(w, "{}", line.as_ref()).map_err(UmpsError::from)?;
    }
    w.flush().map_err(UmpsError::from)?;
    Ok(())
}

fn load_model(path: &Option<std::path::PathBuf>) -> Result<Umps, CliError> {
    let path = required(path, "model")?;
    Umps::load(&path).map_err(CliError::at(&path))
}

pub fn gen(cfg: GenRun) -> Result<(), CliError> {
    let g = grammar(&cfg.grammar)?;
    let out = required(&cfg.out, "out")?;
    let data = grammars::gen_dataset(g, cfg.min_len, cfg.max_len, cfg.count, cfg.seed)?;
    data.save(&out).map_err(CliError::at(&out))?;
    record_run("gen", &cfg, Some(&out))
}

fn load_nonempty(path: &Path) -> Result<Vec<String>, CliError> {
    let strings = grammars::read_strings(path).map_err(CliError::at(path))?;
    if strings.is_empty() {
        return Err(CliError::EmptyData(path.display().to_string()));
    }
    Ok(strings)
}

/// Declared symbols keep their order; symbols only seen in the data follow
/// in code point order.
pub fn infer_alphabet(declared: &[char], data: &[&[String]]) -> Result<Alphabet, CliError> {
    let mut symbols: Vec<char> = Vec::new();
    for &c in declared {
        if !symbols.contains(&c) {
            symbols.push(c);
        }
    }
    let extra: BTreeSet<char> = data
        .iter()
        .flat_map(|set| set.iter())
        .flat_map(|s| s.chars())
        .filter(|c| !symbols.contains(c))
        .collect();
    symbols.extend(extra);
    if symbols.is_empty() {
        return Err(CliError::Usage("cannot infer an alphabet: no symbols declared or present".into()));
    }
    Ok(Alphabet::new(symbols)?)
}

pub fn train(cfg: TrainRun) -> Result<(), CliError> {
    let data_path = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let data = load_nonempty(&data_path)?;
    let val = match &cfg.val {
        Some(p) => load_nonempty(p)?,
        None => data.clone(),
    };
    let declared: Vec<char> = match &cfg.alphabet {
        Some(a) => a.chars().collect(),
        None => match Dataset::load(&data_path) {
            Ok(d) => d.meta.grammar.symbols().chars().collect(),
            Err(_) => Vec::new(),
        },
    };
    let alphabet = infer_alphabet(&declared, &[&data, &val])?;
    cfg.training.validate()?;
    let init = Umps::init_random(cfg.bond_dim, alphabet, cfg.training.seed, cfg.init_noise)?;

    let history_path = cfg.history.clone().unwrap_or_else(|| sibling(&out, ".history.jsonl"));
    let file = File::create(&history_path).map_err(|e| CliError::at(&history_path)(e.into()))?;
    let mut history = BufWriter::new(file);
    let mut write_err: Option<io::Error> = None;
    let observe = |r: &EpochRecord| {
        if write_err.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("epoch records serialize");
        if let Err(e) = writeln!(history, "{line}").and_then(|_| history.flush()) {
            write_err = Some(e);
        }
    };
    let (best, hist) = training::train_with_observer(&init, &data, &val, &cfg.training, observe)?;
    if let Some(e) = write_err {
        return Err(CliError::at(&history_path)(e.into()));
    }
    best.save(&out).map_err(CliError::at(&out))?;
    record_run("train", &cfg, Some(&out))?;

    let val_nll = training::nll_with(&best, &val, cfg.training.normalization)?;
    let summary = json!({
        "model": out,
        "history": history_path,
        "alphabet": best.alphabet().as_string(),
        "bond_dim": best.bond_dim(),
        "epochs": hist.records.len(),
        "val_nll": val_nll,
    });
    println!("{summary}");
    Ok(())
}

pub fn sample(cfg: SampleRun) -> Result<(), CliError> {
    let m = load_model(&cfg.model)?;
    let regex = Regex::parse(&required(&cfg.regex, "regex")?, m.alphabet())?;
    let req = SampleRequest {
        regex,
        max_star_reps: cfg.max_star_reps,
        rng_seed: cfg.seed,
    };
    let samples = sampler::sample_many(&m, &req, cfg.count)?;
    emit(&samples, cfg.out.as_deref())?;
    record_run("sample", &cfg, cfg.out.as_deref())
}

pub fn complete(cfg: CompleteRun) -> Result<(), CliError> {
    let m = load_model(&cfg.model)?;
    let hole = Regex::parse(&cfg.hole, m.alphabet())?;
    let fills = sampler::complete_many(&m, &cfg.prefix, &cfg.suffix, &hole, cfg.seed, cfg.count)?;
    emit(&fills, cfg.out.as_deref())?;
    record_run("complete", &cfg, cfg.out.as_deref())
}

/// Log-normalizer of the chosen mode; `None` in star mode means "not yet
/// computed" so Z_* is only evaluated when a query needs it.
struct Normalizer<'a> {
    model: &'a Umps,
    log_z_star: Option<f64>,
}

impl Normalizer<'_> {
    fn log_z(&mut self, mode: ScoreMode, len: usize) -> Result<f64, CliError> {
        match mode {
            ScoreMode::Fixed => Ok(log_z_fixed(self.model, len)),
            ScoreMode::Star => {
                if self.log_z_star.is_none() {
                    self.log_z_star = Some(z_star(self.model)?.ln());
                }
                Ok(self.log_z_star.unwrap())
            }
        }
    }
}

fn mode_name(mode: ScoreMode) -> &'static str {
    match mode {
        ScoreMode::Fixed => "fixed",
        ScoreMode::Star => "star",
    }
}

fn score_string(norm: &mut Normalizer, s: &str, mode: ScoreMode) -> Result<serde_json::Value, CliError> {
    let f = norm.model.score(s, ChainMode::Parallel)?;
    let log_unnorm = 2.0 * f.abs().ln();
    let log_prob = log_unnorm - norm.log_z(mode, s.chars().count())?;
    Ok(json!({
        "query": s,
        "log_unnorm": log_unnorm,
        "log_prob": log_prob,
        "normalization_mode": mode_name(mode),
    }))
}

fn score_regex(norm: &mut Normalizer, text: &str, mode: ScoreMode) -> Result<serde_json::Value, CliError> {
    let r = Regex::parse(text, norm.model.alphabet())?;
    let len = match (mode, r.length_bounds()) {
        (ScoreMode::Star, _) => 0,
        (ScoreMode::Fixed, (lo, Some(hi))) if lo == hi => lo,
        (ScoreMode::Fixed, _) => {
            return Err(CliError::Usage(format!(
                "fixed mode needs a regex whose strings all share one length; {text:?} does not"
            )))
        }
    };
    let log_unnorm = znorm_boundary(norm.model, &r)?.ln();
    let log_prob = log_unnorm - norm.log_z(mode, len)?;
    Ok(json!({
        "query": text,
        "log_unnorm": log_unnorm,
        "log_prob": log_prob,
        "normalization_mode": mode_name(mode),
    }))
}

pub fn score(cfg: ScoreRun) -> Result<(), CliError> {
    let m = load_model(&cfg.model)?;
    let mut norm = Normalizer {
        model: &m,
        log_z_star: None,
    };
    let chosen = [cfg.regex.is_some(), cfg.string.is_some(), cfg.stdin];
    if chosen.iter().filter(|&&b| b).count() != 1 {
        return Err(CliError::Usage("give exactly one of --regex, --string or --stdin".into()));
    }
    let mut results = Vec::new();
    if let Some(text) = &cfg.regex {
        results.push(score_regex(&mut norm, text, cfg.mode.unwrap_or(ScoreMode::Star))?);
    } else if let Some(s) = &cfg.string {
        results.push(score_string(&mut norm, s, cfg.mode.unwrap_or(ScoreMode::Fixed))?);
    } else {
        for line in io::stdin().lock().lines() {
            let line = line.map_err(UmpsError::from)?;
            results.push(score_string(&mut norm, &line, cfg.mode.unwrap_or(ScoreMode::Fixed))?);
        }
    }
    emit(results.iter().map(|v| v.to_string()), cfg.out.as_deref())?;
    record_run("score", &cfg, cfg.out.as_deref())
}

pub fn eval(cfg: EvalRun) -> Result<(), CliError> {
    let g = grammar(&cfg.grammar)?;
    let m = load_model(&cfg.model)?;
    let regex = Regex::parse(&cfg.regex, m.alphabet())?;
    let samples = sampler::sample_many(&m, &SampleRequest::new(regex, cfg.seed), cfg.count)?;
    let accuracy = grammars::grammar_accuracy(g, &samples)?;
    let report = json!({
        "grammar": g.name(),
        "regex": cfg.regex,
        "count": cfg.count,
        "accuracy": accuracy,
    });
    emit([report.to_string()], cfg.out.as_deref())?;
    record_run("eval", &cfg, cfg.out.as_deref())
}
