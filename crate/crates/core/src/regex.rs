//! Regular expressions over a model alphabet.
//!
//! Concrete syntax: literal symbols, `.` for any single symbol, `|` for union
//! (lowest precedence), juxtaposition for concatenation, postfix `*` and
//! `{n}`, parentheses for grouping and `\` to escape a metacharacter.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Result, UmpsError};
use crate::model::Alphabet;

const META: &[char] = &['.', '|', '*', '{', '}', '(', ')', '\\'];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Regex {
    Char(char),
    AnyChar,
    Concat(Vec<Regex>),
    Union(Vec<Regex>),
    Star(Box<Regex>),
    /// `n` back-to-back copies of the child; `n = 0` is the empty string.
    Repeat(Box<Regex>, usize),
}

impl Regex {
    /// Concatenation, flattening nested concatenations and collapsing a
    /// single child. Panics on an empty list.
    pub fn concat(children: Vec<Regex>) -> Regex {
        assert!(!children.is_empty(), "concatenation needs at least one child");
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Regex::Concat(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Regex::Concat(flat)
        }
    }

    /// n-ary union, flattened the same way as [`Regex::concat`].
    pub fn union(children: Vec<Regex>) -> Regex {
        assert!(!children.is_empty(), "union needs at least one child");
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Regex::Union(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Regex::Union(flat)
        }
    }

    pub fn star(child: Regex) -> Regex {
        Regex::Star(Box::new(child))
    }

    pub fn repeat(child: Regex, n: usize) -> Regex {
        Regex::Repeat(Box::new(child), n)
    }

    /// Literal match of a whole string; the empty string becomes `.{0}`.
    pub fn literal(s: &str) -> Regex {
        if s.is_empty() {
            return Regex::repeat(Regex::AnyChar, 0);
        }
        Regex::concat(s.chars().map(Regex::Char).collect())
    }

    /// `Σⁿ`
    pub fn any_of_length(n: usize) -> Regex {
        Regex::repeat(Regex::AnyChar, n)
    }

    /// Parses `text`, validating literal symbols against `alphabet`.
    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Regex> {
        let mut p = Parser {
            chars: text.char_indices().collect(),
            pos: 0,
            len: text.len(),
            alphabet,
        };
        if p.chars.is_empty() {
            return Err(p.error("empty regex"));
        }
        let r = p.union()?;
        if p.pos < p.chars.len() {
            return Err(p.error("unexpected ')'"));
        }
        Ok(r)
    }

    /// Whether the empty string belongs to the language.
    pub fn nullable(&self) -> bool {
        match self {
            Regex::Char(_) | Regex::AnyChar => false,
            Regex::Concat(cs) => cs.iter().all(Regex::nullable),
            Regex::Union(cs) => cs.iter().any(Regex::nullable),
            Regex::Star(_) => true,
            Regex::Repeat(c, n) => *n == 0 || c.nullable(),
        }
    }

    /// Rejects any star over a nullable subexpression.
    pub fn check_stars(&self) -> Result<()> {
        match self {
            Regex::Char(_) | Regex::AnyChar => Ok(()),
            Regex::Concat(cs) | Regex::Union(cs) => cs.iter().try_for_each(Regex::check_stars),
            Regex::Star(c) => {
                if c.nullable() {
                    Err(UmpsError::NullableStar)
                } else {
                    c.check_stars()
                }
            }
            Regex::Repeat(c, _) => c.check_stars(),
        }
    }

    /// Checks every literal against an alphabet.
    pub fn check_alphabet(&self, alphabet: &Alphabet) -> Result<()> {
        match self {
            Regex::Char(c) => alphabet.index_of(*c).map(|_| ()),
            Regex::AnyChar => Ok(()),
            Regex::Concat(cs) | Regex::Union(cs) => cs.iter().try_for_each(|c| c.check_alphabet(alphabet)),
            Regex::Star(c) | Regex::Repeat(c, _) => c.check_alphabet(alphabet),
        }
    }

    pub fn star_height(&self) -> usize {
        match self {
            Regex::Char(_) | Regex::AnyChar => 0,
            Regex::Concat(cs) | Regex::Union(cs) => cs.iter().map(Regex::star_height).max().unwrap_or(0),
            Regex::Star(c) => 1 + c.star_height(),
            Regex::Repeat(c, _) => c.star_height(),
        }
    }

    /// Shortest and longest string lengths in the language; `None` when unbounded.
    pub fn length_bounds(&self) -> (usize, Option<usize>) {
        match self {
            Regex::Char(_) | Regex::AnyChar => (1, Some(1)),
            Regex::Concat(cs) => cs.iter().map(Regex::length_bounds).fold((0, Some(0)), |(lo, hi), (l, h)| {
                (lo.saturating_add(l), hi.zip(h).map(|(a, b)| a.saturating_add(b)))
            }),
            Regex::Union(cs) => {
                let bounds: Vec<_> = cs.iter().map(Regex::length_bounds).collect();
                let lo = bounds.iter().map(|b| b.0).min().unwrap_or(0);
                let hi = bounds.iter().try_fold(0, |acc: usize, b| b.1.map(|h| acc.max(h)));
                (lo, hi)
            }
            Regex::Star(_) => (0, None),
            Regex::Repeat(c, n) => {
                let (lo, hi) = c.length_bounds();
                (lo.saturating_mul(*n), hi.map(|h| h.saturating_mul(*n)))
            }
        }
    }

    /// Token length of the canonical printed form with every `{n}` expanded
    /// into `n` copies. Symbols, `.`, `|`, `(`, `)` and `*` count one each; an
    /// expansion to the empty string counts as one token.
    pub fn length(&self) -> usize {
        self.expanded_length(Context::Top).max(1)
    }

    fn expanded_length(&self, ctx: Context) -> usize {
        match self {
            Regex::Char(_) | Regex::AnyChar => 1,
            Regex::Concat(cs) => {
                let inner: usize = cs.iter().map(|c| c.expanded_length(Context::Concat)).sum();
                inner + if ctx == Context::Postfix { 2 } else { 0 }
            }
            Regex::Union(cs) => {
                let inner: usize = cs.iter().map(|c| c.expanded_length(Context::Union)).sum::<usize>() + cs.len() - 1;
                inner + if matches!(ctx, Context::Concat | Context::Postfix) { 2 } else { 0 }
            }
            Regex::Star(c) => c.expanded_length(Context::Postfix) + 1,
            Regex::Repeat(c, n) => {
                if *n == 0 {
                    return 1;
                }
                let copy = c.expanded_length(Context::Concat);
                let body = n * copy;
                // n copies of a multi-part body need grouping under a postfix
                if ctx == Context::Postfix && (*n > 1 || matches!(**c, Regex::Concat(_) | Regex::Union(_))) {
                    body + 2
                } else {
                    body
                }
            }
        }
    }

    /// Number of distinct derivations of `s`. Star counts partitions into
    /// non-empty pieces only, so the recursion always terminates.
    pub fn match_count(&self, s: &str) -> u64 {
        let chars: Vec<char> = s.chars().collect();
        let mut m = Matcher {
            s: &chars,
            memo: HashMap::new(),
        };
        m.count(self, 0, chars.len())
    }

    pub fn matches(&self, s: &str) -> bool {
        self.match_count(s) > 0
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Context {
    Top,
    Union,
    Concat,
    Postfix,
}

fn write_sym(f: &mut fmt::Formatter<'_>, c: char) -> fmt::Result {
    if META.contains(&c) {
        write!(f, "\\{c}")
    } else {
        write!(f, "{c}")
    }
}

impl Regex {
    fn fmt_in(&self, f: &mut fmt::Formatter<'_>, ctx: Context) -> fmt::Result {
        match self {
            Regex::Char(c) => write_sym(f, *c),
            Regex::AnyChar => f.write_str("."),
            Regex::Concat(cs) => {
                let paren = ctx == Context::Postfix;
                if paren {
                    f.write_str("(")?;
                }
                for c in cs {
                    c.fmt_in(f, Context::Concat)?;
                }
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
            Regex::Union(cs) => {
                let paren = matches!(ctx, Context::Concat | Context::Postfix);
                if paren {
                    f.write_str("(")?;
                }
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str("|")?;
                    }
                    c.fmt_in(f, Context::Union)?;
                }
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
            Regex::Star(c) => {
                c.fmt_in(f, Context::Postfix)?;
                f.write_str("*")
            }
            Regex::Repeat(c, n) => {
                c.fmt_in(f, Context::Postfix)?;
                write!(f, "{{{n}}}")
            }
        }
    }
}

impl fmt::Display for Regex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_in(f, Context::Top)
    }
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    len: usize,
    alphabet: &'a Alphabet,
}

impl Parser<'_> {
    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.len, |c| c.0)
    }

    fn error(&self, message: &str) -> UmpsError {
        UmpsError::Parse {
            offset: self.offset(),
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn union(&mut self) -> Result<Regex> {
        let mut alts = vec![self.concat()?];
        while self.peek() == Some('|') {
            self.pos += 1;
            alts.push(self.concat()?);
        }
        Ok(Regex::union(alts))
    }

    fn concat(&mut self) -> Result<Regex> {
        let mut parts = Vec::new();
        while let Some(c) = self.peek() {
            if c == '|' || c == ')' {
                break;
            }
            parts.push(self.postfix()?);
        }
        if parts.is_empty() {
            return Err(self.error("expected an expression"));
        }
        Ok(Regex::concat(parts))
    }

    fn postfix(&mut self) -> Result<Regex> {
        let mut r = self.atom()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    r = Regex::star(r);
                }
                Some('{') => {
                    self.pos += 1;
                    let start = self.pos;
                    while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                    if start == self.pos {
                        return Err(self.error("expected a repetition count"));
                    }
                    let digits: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
                    let n = digits.parse().map_err(|_| self.error("repetition count too large"))?;
                    if self.peek() != Some('}') {
                        return Err(self.error("expected '}'"));
                    }
                    self.pos += 1;
                    r = Regex::repeat(r, n);
                }
                _ => return Ok(r),
            }
        }
    }

    fn atom(&mut self) -> Result<Regex> {
        let Some(c) = self.peek() else {
            return Err(self.error("unexpected end of regex"));
        };
        match c {
            '(' => {
                self.pos += 1;
                let r = self.union()?;
                if self.peek() != Some(')') {
                    return Err(self.error("unclosed '('"));
                }
                self.pos += 1;
                Ok(r)
            }
            '.' => {
                self.pos += 1;
                Ok(Regex::AnyChar)
            }
            '\\' => {
                self.pos += 1;
                let Some(e) = self.peek() else {
                    return Err(self.error("dangling escape"));
                };
                self.pos += 1;
                self.literal(e)
            }
            '*' | '{' | '}' | ')' | '|' => Err(self.error(&format!("unexpected '{c}'"))),
            _ => {
                self.pos += 1;
                self.literal(c)
            }
        }
    }

    fn literal(&self, c: char) -> Result<Regex> {
        self.alphabet.index_of(c)?;
        Ok(Regex::Char(c))
    }
}

struct Matcher<'a> {
    s: &'a [char],
    memo: HashMap<(usize, usize, usize), u64>,
}

impl Matcher<'_> {
    fn count(&mut self, r: &Regex, i: usize, j: usize) -> u64 {
        let key = (r as *const Regex as usize, i, j);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let v = match r {
            Regex::Char(c) => u64::from(j == i + 1 && self.s[i] == *c),
            Regex::AnyChar => u64::from(j == i + 1),
            Regex::Union(cs) => cs.iter().fold(0u64, |acc, c| acc.saturating_add(self.count(c, i, j))),
            Regex::Concat(cs) => {
                let parts: Vec<&Regex> = cs.iter().collect();
                self.sequence(&parts, i, j)
            }
            Regex::Repeat(c, n) => {
                let parts = vec![&**c; *n];
                self.sequence(&parts, i, j)
            }
            Regex::Star(c) => {
                let mut total = u64::from(i == j);
                for k in (i + 1)..=j {
                    let head = self.count(c, i, k);
                    if head > 0 {
                        total = total.saturating_add(head.saturating_mul(self.count(r, k, j)));
                    }
                }
                total
            }
        };
        self.memo.insert(key, v);
        v
    }

    /// Derivations of `s[i..j]` as the concatenation of `parts`.
    fn sequence(&mut self, parts: &[&Regex], i: usize, j: usize) -> u64 {
        // ways[p] = derivations of s[i..p] by the parts consumed so far
        let mut ways = vec![0u64; j - i + 1];
        ways[0] = 1;
        for part in parts {
            let mut next = vec![0u64; j - i + 1];
            for (a, &w) in ways.iter().enumerate() {
                if w == 0 {
                    continue;
                }
                for b in a..=(j - i) {
                    let c = self.count(part, i + a, i + b);
                    if c > 0 {
                        next[b] = next[b].saturating_add(w.saturating_mul(c));
                    }
                }
            }
            ways = next;
        }
        ways[j - i]
    }
}
