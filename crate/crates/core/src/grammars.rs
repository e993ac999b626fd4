//! Benchmark languages: the seven Tomita grammars and the Motzkin language.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmpsError};
use crate::model::Alphabet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammarId {
    Tomita1,
    Tomita2,
    Tomita3,
    Tomita4,
    Tomita5,
    Tomita6,
    Tomita7,
    Motzkin,
}

pub const ALL_GRAMMARS: [GrammarId; 8] = [
    GrammarId::Tomita1,
    GrammarId::Tomita2,
    GrammarId::Tomita3,
    GrammarId::Tomita4,
    GrammarId::Tomita5,
    GrammarId::Tomita6,
    GrammarId::Tomita7,
    GrammarId::Motzkin,
];

const DEAD: i64 = -1;

impl GrammarId {
    pub fn name(self) -> &'static str {
        match self {
            GrammarId::Tomita1 => "tomita1",
            GrammarId::Tomita2 => "tomita2",
            GrammarId::Tomita3 => "tomita3",
            GrammarId::Tomita4 => "tomita4",
            GrammarId::Tomita5 => "tomita5",
            GrammarId::Tomita6 => "tomita6",
            GrammarId::Tomita7 => "tomita7",
            GrammarId::Motzkin => "motzkin",
        }
    }

    /// Symbols in index order: `01` for Tomita, `(&)` for Motzkin.
    pub fn symbols(self) -> &'static str {
        match self {
            GrammarId::Motzkin => "(&)",
            _ => "01",
        }
    }

    pub fn alphabet(self) -> Alphabet {
        Alphabet::from_str_symbols(self.symbols()).expect("static alphabet")
    }

    fn start(self) -> i64 {
        0
    }

    /// Transition on the symbol with index `c`; `DEAD` is absorbing.
    fn step(self, state: i64, c: usize) -> i64 {
        if state == DEAD {
            return DEAD;
        }
        match self {
            GrammarId::Tomita1 => {
                if c == 1 {
                    0
                } else {
                    DEAD
                }
            }
            // 0 expects '0', 1 expects '1'
            GrammarId::Tomita2 => match (state, c) {
                (0, 0) => 1,
                (1, 1) => 0,
                _ => DEAD,
            },
            // 0 free, 1 odd run of 1s, 2 even run of 1s,
            // 3 odd run of 0s after odd 1s, 4 even run of 0s after odd 1s
            GrammarId::Tomita3 => match (state, c) {
                (0, 0) => 0,
                (0, 1) => 1,
                (1, 1) => 2,
                (1, 0) => 3,
                (2, 1) => 1,
                (2, 0) => 0,
                (3, 0) => 4,
                (3, 1) => DEAD,
                (4, 0) => 3,
                (4, 1) => 1,
                _ => unreachable!(),
            },
            // trailing zeros
            GrammarId::Tomita4 => {
                if c == 1 {
                    0
                } else if state < 2 {
                    state + 1
                } else {
                    DEAD
                }
            }
            // bit 0: parity of 0s, bit 1: parity of 1s
            GrammarId::Tomita5 => state ^ (1 << c),
            GrammarId::Tomita6 => (state + if c == 0 { 1 } else { 2 }) % 3,
            // phase of 0*1*0*1*
            GrammarId::Tomita7 => {
                let want = (state % 2) as usize;
                if c == want {
                    state
                } else if state < 3 {
                    state + 1
                } else {
                    DEAD
                }
            }
            // nesting depth
            GrammarId::Motzkin => match c {
                0 => state + 1,
                1 => state,
                _ => {
                    if state == 0 {
                        DEAD
                    } else {
                        state - 1
                    }
                }
            },
        }
    }

    fn accepting(self, state: i64) -> bool {
        match self {
            _ if state == DEAD => false,
            GrammarId::Tomita3 => state != 3,
            GrammarId::Tomita1 | GrammarId::Tomita4 | GrammarId::Tomita7 => true,
            _ => state == 0,
        }
    }
}

impl fmt::Display for GrammarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GrammarId {
    type Err = UmpsError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ALL_GRAMMARS
            .iter()
            .copied()
            .find(|g| g.name() == lower)
            .ok_or_else(|| UmpsError::Config(format!("unknown grammar {s:?}")))
    }
}

pub fn is_member(g: GrammarId, s: &str) -> Result<bool> {
    let alphabet = g.alphabet();
    let mut state = g.start();
    for c in s.chars() {
        state = g.step(state, alphabet.index_of(c)?);
    }
    Ok(g.accepting(state))
}

/// Memoized number of accepted completions of each length from each state.
struct Counter {
    g: GrammarId,
    memo: HashMap<(i64, usize), u128>,
}

impl Counter {
    fn new(g: GrammarId) -> Self {
        Counter { g, memo: HashMap::new() }
    }

    fn completions(&mut self, state: i64, rem: usize) -> Result<u128> {
        if state == DEAD {
            return Ok(0);
        }
        // a Motzkin depth above the remaining length can never close
        if self.g == GrammarId::Motzkin && state as usize > rem {
            return Ok(0);
        }
        if rem == 0 {
            return Ok(self.g.accepting(state) as u128);
        }
        if let Some(&n) = self.memo.get(&(state, rem)) {
            return Ok(n);
        }
        let mut total: u128 = 0;
        for c in 0..self.g.symbols().chars().count() {
            let n = self.completions(self.g.step(state, c), rem - 1)?;
            total = total
                .checked_add(n)
                .ok_or_else(|| UmpsError::Config(format!("string count overflows at length {rem}")))?;
        }
        self.memo.insert((state, rem), total);
        Ok(total)
    }
}

/// `|L(g) ∩ Σⁿ|`, exact.
pub fn count_strings(g: GrammarId, n: usize) -> Result<u128> {
    Counter::new(g).completions(g.start(), n)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub grammar: GrammarId,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub strings: Vec<String>,
    pub meta: DatasetMeta,
}

/// Draws `count` strings with replacement: a length uniformly among those
/// with at least one member, then a uniform member of that length.
pub fn gen_dataset(g: GrammarId, min_len: usize, max_len: usize, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(UmpsError::Config("dataset count must be positive".into()));
    }
    if min_len > max_len {
        return Err(UmpsError::Config(format!("min_len {min_len} exceeds max_len {max_len}")));
    }
    let mut counter = Counter::new(g);
    let mut lengths = Vec::new();
    for n in min_len..=max_len {
        if counter.completions(g.start(), n)? > 0 {
            lengths.push(n);
        }
    }
    if lengths.is_empty() {
        return Err(UmpsError::EmptyLanguage);
    }
    let symbols: Vec<char> = g.symbols().chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strings = Vec::with_capacity(count);
    for _ in 0..count {
        let len = lengths[rng.random_range(0..lengths.len())];
        let mut state = g.start();
        let mut s = String::with_capacity(len);
        for pos in 0..len {
            let rem = len - pos;
            let mut r = rng.random_range(0..counter.completions(state, rem)?);
            for (c, &sym) in symbols.iter().enumerate() {
                let next = g.step(state, c);
                let n = counter.completions(next, rem - 1)?;
                if r < n {
                    state = next;
                    s.push(sym);
                    break;
                }
                r -= n;
            }
        }
        debug_assert!(g.accepting(state));
        strings.push(s);
    }
    Ok(Dataset {
        strings,
        meta: DatasetMeta {
            grammar: g,
            min_len,
            max_len,
            seed,
            count,
        },
    })
}

/// Path of the JSON metadata written next to a dataset file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

impl Dataset {
    /// Writes the strings one per line and the metadata beside them.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_strings(path, &self.strings)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(std::io::Error::from)?;
        fs::write(meta_path(path), meta + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let strings = read_strings(path)?;
        let meta = fs::read_to_string(meta_path(path))?;
        let meta = serde_json::from_str(&meta).map_err(|e| UmpsError::Format(e.to_string()))?;
        Ok(Dataset { strings, meta })
    }
}

pub fn write_strings(path: &Path, strings: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in strings {
        f.write_all(s.as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// One string per line; an empty line is the empty string.
pub fn read_strings(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Fraction of `samples` in the language. Samples with foreign symbols count
/// as non-members.
pub fn grammar_accuracy(g: GrammarId, samples: &[String]) -> Result<f64> {
    if samples.is_empty() {
        return Err(UmpsError::Config("no samples to score".into()));
    }
    let mut hits = 0usize;
    for s in samples {
        match is_member(g, s) {
            Ok(true) => hits += 1,
            Ok(false) => {}
            Err(e @ UmpsError::UnknownSymbol(_)) => log::warn!("sample {s:?}: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(g: GrammarId, s: &str) -> bool {
        is_member(g, s).unwrap()
    }

    #[test]
    fn membership_examples() {
        assert!(!member(GrammarId::Tomita4, "1000"));
        assert!(member(GrammarId::Tomita4, "0010"));
        assert!(member(GrammarId::Tomita5, "0110"));
        assert!(!member(GrammarId::Tomita5, "011"));
        assert!(!member(GrammarId::Tomita3, "10"));
        assert!(member(GrammarId::Tomita3, "110"));
        assert!(member(GrammarId::Tomita3, "1100"));
        assert!(!member(GrammarId::Tomita3, "1110"));
        assert!(member(GrammarId::Tomita3, "11100"));
        assert!(!member(GrammarId::Tomita3, "1000111"));
        assert!(member(GrammarId::Motzkin, "(&)"));
        assert!(!member(GrammarId::Motzkin, ")("));
        assert!(member(GrammarId::Tomita2, "0101"));
        assert!(!member(GrammarId::Tomita2, "0110"));
        assert!(member(GrammarId::Tomita6, "0011"));
        assert!(member(GrammarId::Tomita6, "000"));
        assert!(!member(GrammarId::Tomita6, "00"));
        assert!(member(GrammarId::Tomita7, "0011001"));
        assert!(!member(GrammarId::Tomita7, "10101"));
    }

    #[test]
    fn empty_string_policy() {
        for g in ALL_GRAMMARS {
            assert!(member(g, ""), "{g}");
            assert_eq!(count_strings(g, 0).unwrap(), 1);
        }
    }

    #[test]
    fn foreign_symbols_are_errors() {
        assert!(matches!(
            is_member(GrammarId::Tomita1, "12"),
            Err(UmpsError::UnknownSymbol('2'))
        ));
        assert!(matches!(
            is_member(GrammarId::Motzkin, "(0)"),
            Err(UmpsError::UnknownSymbol('0'))
        ));
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_strings(GrammarId::Motzkin, 3).unwrap(), 4);
        assert_eq!(count_strings(GrammarId::Tomita1, 5).unwrap(), 1);
        assert_eq!(count_strings(GrammarId::Tomita2, 5).unwrap(), 0);
        assert_eq!(count_strings(GrammarId::Tomita2, 6).unwrap(), 1);
        assert_eq!(count_strings(GrammarId::Tomita5, 2).unwrap(), 2);
        // Motzkin numbers 1, 1, 2, 4, 9, 21, 51
        let motzkin: Vec<u128> = (0..7).map(|n| count_strings(GrammarId::Motzkin, n).unwrap()).collect();
        assert_eq!(motzkin, vec![1, 1, 2, 4, 9, 21, 51]);
        assert_eq!(count_strings(GrammarId::Tomita4, 120).unwrap() > 0, true);
    }

    #[test]
    fn dataset_examples() {
        let d = gen_dataset(GrammarId::Motzkin, 15, 15, 1000, 1).unwrap();
        assert_eq!(d.strings.len(), 1000);
        assert!(d.strings.iter().all(|s| s.chars().count() == 15 && member(GrammarId::Motzkin, s)));

        let d = gen_dataset(GrammarId::Tomita1, 1, 15, 10, 2).unwrap();
        assert!(d.strings.iter().all(|s| !s.is_empty() && s.chars().all(|c| c == '1')));

        let a = gen_dataset(GrammarId::Tomita4, 1, 15, 50, 3).unwrap();
        let b = gen_dataset(GrammarId::Tomita4, 1, 15, 50, 3).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            gen_dataset(GrammarId::Tomita2, 3, 3, 5, 0),
            Err(UmpsError::EmptyLanguage)
        ));
    }

    #[test]
    fn accuracy_examples() {
        let good: Vec<String> = vec!["0101".into(), "".into()];
        assert_eq!(grammar_accuracy(GrammarId::Tomita2, &good).unwrap(), 1.0);
        let half: Vec<String> = vec!["01".into(), "11".into(), "0101".into(), "0x".into()];
        assert_eq!(grammar_accuracy(GrammarId::Tomita2, &half).unwrap(), 0.5);
        assert!(grammar_accuracy(GrammarId::Tomita2, &[]).is_err());
    }

    #[test]
    fn names_round_trip() {
        for g in ALL_GRAMMARS {
            assert_eq!(g.name().parse::<GrammarId>().unwrap(), g);
        }
        assert_eq!("Tomita4".parse::<GrammarId>().unwrap(), GrammarId::Tomita4);
        assert!("tomita8".parse::<GrammarId>().is_err());
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t4.txt");
        let d = gen_dataset(GrammarId::Tomita4, 1, 6, 20, 9).unwrap();
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 20);
        assert!(text.ends_with('\n'));
    }
}
