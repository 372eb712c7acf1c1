//! Reader and canonical writer for Cassandra's `.pomdp` text format.
//!
//! Parsing happens in two stages: [`parse_raw`] tokenizes the text and
//! collects the preamble and the `T:`/`O:`/`R:` declarations with their
//! source positions, then [`RawPomdpFile::resolve`] expands wildcards,
//! applies specificity-ordered overrides and builds a validated
//! [`PomdpInstance`].

mod cache;

pub use cache::{
    default_cache_dir, fetch_and_cache, fetch_and_cache_with, remote_file_name, CacheError, Fetcher, HttpFetcher, OfflineFetcher,
    DEFAULT_BASE_URL,
};

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{validate, Belief, Emission, PomdpInstance};

/// Rows whose sum is within this of one are renormalized.
pub const RENORMALIZE_BAND: f64 = 1e-4;

/// Rows closer to one than this are left untouched, which keeps
/// parse → print → parse field-exact.
const EXACT_BAND: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {message}")]
    SyntaxError { line: usize, col: usize, message: String },
    #[error("unknown {kind} `{name}` at {line}:{col}")]
    UnknownIdentifier { kind: &'static str, name: String, line: usize, col: usize },
    #[error("conflicting {table} declarations at lines {previous} and {line} for the same entry")]
    DuplicateDeclaration { table: &'static str, line: usize, previous: usize },
    #[error("{what} sums to {sum}, outside the renormalization band")]
    BadDistribution { what: String, sum: f64 },
}

fn syntax(tok: &Token, message: impl Into<String>) -> ParseError {
    ParseError::SyntaxError { line: tok.line, col: tok.col, message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub text: String,
    pub line: usize,
    pub col: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut start: Option<usize> = None;
        let flush = |start: &mut Option<usize>, end: usize, tokens: &mut Vec<Token>| {
            if let Some(s) = start.take() {
                tokens.push(Token { text: line[s..end].to_string(), line: ln + 1, col: s + 1 });
            }
        };
        for (i, ch) in line.char_indices() {
            if ch == ':' {
                flush(&mut start, i, &mut tokens);
                tokens.push(Token { text: ":".into(), line: ln + 1, col: i + 1 });
            } else if ch.is_whitespace() {
                flush(&mut start, i, &mut tokens);
            } else if start.is_none() {
                start = Some(i);
            }
        }
        flush(&mut start, line.len(), &mut tokens);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq)]
pub enum NameList {
    Count(usize),
    Names(Vec<String>),
}

impl NameList {
    fn names(&self) -> Vec<String> {
        match self {
            NameList::Count(n) => (0..*n).map(|i| i.to_string()).collect(),
            NameList::Names(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    Uniform,
    Probs(Vec<f64>),
    State(Token),
    Include(Vec<Token>),
    Exclude(Vec<Token>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    T,
    O,
    R,
}

impl Table {
    fn name(self) -> &'static str {
        match self {
            Table::T => "T",
            Table::O => "O",
            Table::R => "R",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Identity(Token),
    Uniform(Token),
    Numbers(Vec<(f64, Token)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Declaration {
    pub table: Table,
    pub indices: Vec<Token>,
    pub payload: Payload,
    pub line: usize,
}

/// Unresolved file contents.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawPomdpFile {
    pub discount: Option<f64>,
    pub cost: bool,
    pub states: Option<NameList>,
    pub actions: Option<NameList>,
    pub observations: Option<NameList>,
    pub start: Option<StartSpec>,
    pub declarations: Vec<Declaration>,
}

fn is_number(text: &str) -> bool {
    text.parse::<f64>().is_ok()
}

struct Cursor {
    tokens: Vec<Token>,
    pos: usize,
    end: Token,
}

impl Cursor {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Token> {
        self.tokens.get(self.pos + k)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect_colon(&mut self) -> Result<(), ParseError> {
        match self.next() {
            Some(t) if t.text == ":" => Ok(()),
            Some(t) => Err(syntax(&t, format!("expected `:` but found `{}`", t.text))),
            None => Err(syntax(&self.end, "expected `:` at end of input")),
        }
    }

    /// True at the start of a preamble entry or declaration.
    fn at_statement(&self) -> bool {
        let Some(t) = self.peek() else { return true };
        let colon_next = self.peek_at(1).is_some_and(|n| n.text == ":");
        match t.text.as_str() {
            "discount" | "values" | "states" | "actions" | "observations" | "T" | "O" | "R" => colon_next,
            "start" => colon_next || self.peek_at(1).is_some_and(|n| n.text == "include" || n.text == "exclude"),
            _ => false,
        }
    }

    fn words_until_statement(&mut self) -> Vec<Token> {
        let mut out = Vec::new();
        while !self.at_statement() {
            out.push(self.next().expect("checked by at_statement"));
        }
        out
    }
}

fn parse_name_list(words: Vec<Token>, at: &Token) -> Result<NameList, ParseError> {
    if words.is_empty() {
        return Err(syntax(at, "empty name list"));
    }
    if words.len() == 1 {
        if let Ok(n) = words[0].text.parse::<usize>() {
            if n == 0 {
                return Err(syntax(&words[0], "count must be positive"));
            }
            return Ok(NameList::Count(n));
        }
    }
    let mut names: Vec<String> = Vec::with_capacity(words.len());
    for w in &words {
        if !w.text.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
            return Err(syntax(w, format!("invalid name `{}`", w.text)));
        }
        if names.contains(&w.text) {
            return Err(syntax(w, format!("duplicate name `{}`", w.text)));
        }
        names.push(w.text.clone());
    }
    Ok(NameList::Names(names))
}

/// First stage: tokens to preamble and declarations.
pub fn parse_raw(text: &str) -> Result<RawPomdpFile, ParseError> {
    let tokens = tokenize(text);
    let end = tokens
        .last()
        .map(|t| Token { text: String::new(), line: t.line, col: t.col + t.text.len() })
        .unwrap_or(Token { text: String::new(), line: 1, col: 1 });
    let mut cur = Cursor { tokens, pos: 0, end };
    let mut raw = RawPomdpFile::default();
    let mut in_body = false;
    while let Some(tok) = cur.next() {
        match tok.text.as_str() {
            "T" | "O" | "R" if cur.peek().is_some_and(|t| t.text == ":") => {
                in_body = true;
                let table = match tok.text.as_str() {
                    "T" => Table::T,
                    "O" => Table::O,
                    _ => Table::R,
                };
                raw.declarations.push(parse_declaration(&mut cur, table, &tok)?);
            }
            kw @ ("discount" | "values" | "states" | "actions" | "observations" | "start") => {
                if in_body {
                    return Err(syntax(&tok, format!("`{kw}` after the first declaration")));
                }
                if kw == "start" && cur.peek().is_some_and(|t| t.text == "include" || t.text == "exclude") {
                    let mode = cur.next().expect("peeked");
                    cur.expect_colon()?;
                    let words = cur.words_until_statement();
                    if words.is_empty() {
                        return Err(syntax(&mode, "empty state list"));
                    }
                    raw.start = Some(if mode.text == "include" {
                        StartSpec::Include(words)
                    } else {
                        StartSpec::Exclude(words)
                    });
                    continue;
                }
                cur.expect_colon()?;
                let words = cur.words_until_statement();
                match kw {
                    "discount" => {
                        let [w] = words.as_slice() else {
                            return Err(syntax(&tok, "discount takes one number"));
                        };
                        raw.discount = Some(w.text.parse().map_err(|_| syntax(w, "invalid discount"))?);
                    }
                    "values" => match words.as_slice() {
                        [w] if w.text == "reward" => raw.cost = false,
                        [w] if w.text == "cost" => raw.cost = true,
                        _ => return Err(syntax(&tok, "values must be `reward` or `cost`")),
                    },
                    "states" => raw.states = Some(parse_name_list(words, &tok)?),
                    "actions" => raw.actions = Some(parse_name_list(words, &tok)?),
                    "observations" => raw.observations = Some(parse_name_list(words, &tok)?),
                    _ => {
                        raw.start = Some(match words.as_slice() {
                            [] => return Err(syntax(&tok, "empty start")),
                            [w] if w.text == "uniform" => StartSpec::Uniform,
                            [w] if !is_number(&w.text) || !start_is_probability_row(&raw, 1) => {
                                StartSpec::State(w.clone())
                            }
                            ws => {
                                let mut probs = Vec::with_capacity(ws.len());
                                for w in ws {
                                    probs.push(w.text.parse::<f64>().map_err(|_| syntax(w, "invalid probability"))?);
                                }
                                StartSpec::Probs(probs)
                            }
                        })
                    }
                }
            }
            _ => return Err(syntax(&tok, format!("unexpected token `{}`", tok.text))),
        }
    }
    Ok(raw)
}

/// A single numeric `start:` token is a state index unless there is one state.
fn start_is_probability_row(raw: &RawPomdpFile, len: usize) -> bool {
    match &raw.states {
        Some(NameList::Count(n)) => *n == len,
        Some(NameList::Names(v)) => v.len() == len,
        None => true,
    }
}

fn parse_declaration(cur: &mut Cursor, table: Table, head: &Token) -> Result<Declaration, ParseError> {
    cur.expect_colon()?;
    let max = if table == Table::R { 4 } else { 3 };
    let mut indices = Vec::new();
    loop {
        match cur.next() {
            Some(t) if t.text != ":" => indices.push(t),
            Some(t) => return Err(syntax(&t, "missing index")),
            None => return Err(syntax(&cur.end, "missing index")),
        }
        if indices.len() < max && cur.peek().is_some_and(|t| t.text == ":") {
            cur.next();
        } else {
            break;
        }
    }
    let words = cur.words_until_statement();
    let payload = match words.as_slice() {
        [w] if w.text == "identity" => Payload::Identity(w.clone()),
        [w] if w.text == "uniform" => Payload::Uniform(w.clone()),
        [] => return Err(syntax(head, format!("{}: declaration without values", table.name()))),
        ws => {
            let mut nums = Vec::with_capacity(ws.len());
            for w in ws {
                let v = w.text.parse::<f64>().map_err(|_| syntax(w, format!("expected a number, found `{}`", w.text)))?;
                nums.push((v, w.clone()));
            }
            Payload::Numbers(nums)
        }
    };
    Ok(Declaration { table, indices, payload, line: head.line })
}

/// Index selector after name resolution.
#[derive(Debug, Clone, Copy)]
enum Sel {
    All,
    One(usize),
}

impl Sel {
    fn iter(self, n: usize) -> impl Iterator<Item = usize> {
        let (lo, hi) = match self {
            Sel::All => (0, n),
            Sel::One(i) => (i, i + 1),
        };
        lo..hi
    }

    fn explicit(self) -> u8 {
        u8::from(matches!(self, Sel::One(_)))
    }
}

fn resolve_name(tok: &Token, names: &[String], kind: &'static str) -> Result<Sel, ParseError> {
    if tok.text == "*" {
        return Ok(Sel::All);
    }
    if let Some(i) = names.iter().position(|n| *n == tok.text) {
        return Ok(Sel::One(i));
    }
    if let Ok(i) = tok.text.parse::<usize>() {
        if i < names.len() {
            return Ok(Sel::One(i));
        }
    }
    Err(ParseError::UnknownIdentifier { kind, name: tok.text.clone(), line: tok.line, col: tok.col })
}

/// Value grid with per-entry specificity so that overrides do not depend
/// on declaration order.
struct Grid {
    table: &'static str,
    values: Vec<f64>,
    spec: Vec<i8>,
    line: Vec<usize>,
}

impl Grid {
    fn new(table: &'static str, len: usize) -> Self {
        Grid { table, values: vec![0.0; len], spec: vec![-1; len], line: vec![0; len] }
    }

    fn set(&mut self, idx: usize, spec: u8, value: f64, line: usize) -> Result<(), ParseError> {
        let spec = spec as i8;
        if self.spec[idx] < spec {
            self.values[idx] = value;
            self.spec[idx] = spec;
            self.line[idx] = line;
        } else if self.spec[idx] == spec && self.values[idx] != value && self.line[idx] != line {
            return Err(ParseError::DuplicateDeclaration { table: self.table, line, previous: self.line[idx] });
        }
        Ok(())
    }
}

fn expect_count(decl: &Declaration, nums: &[(f64, Token)], n: usize) -> Result<(), ParseError> {
    if nums.len() != n {
        let at = nums.first().map(|(_, t)| t.clone()).unwrap_or_else(|| decl.indices[0].clone());
        return Err(syntax(&at, format!("{}: expected {n} values, found {}", decl.table.name(), nums.len())));
    }
    Ok(())
}

fn bad_keyword(decl: &Declaration, tok: &Token) -> ParseError {
    syntax(tok, format!("`{}` is not allowed in this {}: declaration", tok.text, decl.table.name()))
}

fn normalize_row(row: &mut [f64], what: impl FnOnce() -> String) -> Result<(), ParseError> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| *p < 0.0) || !((sum - 1.0).abs() <= RENORMALIZE_BAND) {
        return Err(ParseError::BadDistribution { what: what(), sum });
    }
    if (sum - 1.0).abs() > EXACT_BAND {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

impl RawPomdpFile {
    /// Second stage: builds the instance and checks its invariants.
    pub fn resolve(&self) -> Result<PomdpInstance, ParseError> {
        let missing = |what: &str| ParseError::SyntaxError { line: 1, col: 1, message: format!("missing `{what}:` entry") };
        let states = self.states.as_ref().ok_or_else(|| missing("states"))?.names();
        let actions = self.actions.as_ref().ok_or_else(|| missing("actions"))?.names();
        let observations = self.observations.as_ref().ok_or_else(|| missing("observations"))?.names();
        let discount = self.discount.ok_or_else(|| missing("discount"))?;
        let (ns, na, no) = (states.len(), actions.len(), observations.len());

        let mut trans = Grid::new("T", na * ns * ns);
        let mut obs = Grid::new("O", na * ns * no);
        let mut rew = Grid::new("R", na * ns * ns * no);

        for decl in &self.declarations {
            let line = decl.line;
            match decl.table {
                Table::T => {
                    let a = resolve_name(&decl.indices[0], &actions, "action")?;
                    let s = decl.indices.get(1).map(|t| resolve_name(t, &states, "state")).transpose()?;
                    let t = decl.indices.get(2).map(|t| resolve_name(t, &states, "state")).transpose()?;
                    let spec = a.explicit() + s.map_or(0, Sel::explicit) + t.map_or(0, Sel::explicit);
                    let cell = |a: usize, s: usize, t: usize| (a * ns + s) * ns + t;
                    match (s, t, &decl.payload) {
                        (None, None, Payload::Identity(_)) => {
                            for a in a.iter(na) {
                                for s in 0..ns {
                                    for t in 0..ns {
                                        trans.set(cell(a, s, t), spec, f64::from(u8::from(s == t)), line)?;
                                    }
                                }
                            }
                        }
                        (_, None, Payload::Uniform(_)) => {
                            for a in a.iter(na) {
                                for s in s.unwrap_or(Sel::All).iter(ns) {
                                    for t in 0..ns {
                                        trans.set(cell(a, s, t), spec, 1.0 / ns as f64, line)?;
                                    }
                                }
                            }
                        }
                        (None, None, Payload::Numbers(nums)) => {
                            expect_count(decl, nums, ns * ns)?;
                            for a in a.iter(na) {
                                for s in 0..ns {
                                    for t in 0..ns {
                                        trans.set(cell(a, s, t), spec, nums[s * ns + t].0, line)?;
                                    }
                                }
                            }
                        }
                        (Some(s), None, Payload::Numbers(nums)) => {
                            expect_count(decl, nums, ns)?;
                            for a in a.iter(na) {
                                for s in s.iter(ns) {
                                    for t in 0..ns {
                                        trans.set(cell(a, s, t), spec, nums[t].0, line)?;
                                    }
                                }
                            }
                        }
                        (Some(s), Some(t), Payload::Numbers(nums)) => {
                            expect_count(decl, nums, 1)?;
                            for a in a.iter(na) {
                                for s in s.iter(ns) {
                                    for t in t.iter(ns) {
                                        trans.set(cell(a, s, t), spec, nums[0].0, line)?;
                                    }
                                }
                            }
                        }
                        (_, _, Payload::Identity(k) | Payload::Uniform(k)) => return Err(bad_keyword(decl, k)),
                        (None, Some(_), _) => unreachable!("indices are parsed left to right"),
                    }
                }
                Table::O => {
                    let a = resolve_name(&decl.indices[0], &actions, "action")?;
                    let s = decl.indices.get(1).map(|t| resolve_name(t, &states, "state")).transpose()?;
                    let o = decl.indices.get(2).map(|t| resolve_name(t, &observations, "observation")).transpose()?;
                    let spec = a.explicit() + s.map_or(0, Sel::explicit) + o.map_or(0, Sel::explicit);
                    let cell = |a: usize, s: usize, o: usize| (a * ns + s) * no + o;
                    match (s, o, &decl.payload) {
                        (_, None, Payload::Uniform(_)) => {
                            for a in a.iter(na) {
                                for s in s.unwrap_or(Sel::All).iter(ns) {
                                    for o in 0..no {
                                        obs.set(cell(a, s, o), spec, 1.0 / no as f64, line)?;
                                    }
                                }
                            }
                        }
                        (None, None, Payload::Identity(kw)) => {
                            if ns != no {
                                return Err(bad_keyword(decl, kw));
                            }
                            for a in a.iter(na) {
                                for s in 0..ns {
                                    for o in 0..no {
                                        obs.set(cell(a, s, o), spec, f64::from(u8::from(s == o)), line)?;
                                    }
                                }
                            }
                        }
                        (None, None, Payload::Numbers(nums)) => {
                            expect_count(decl, nums, ns * no)?;
                            for a in a.iter(na) {
                                for s in 0..ns {
                                    for o in 0..no {
                                        obs.set(cell(a, s, o), spec, nums[s * no + o].0, line)?;
                                    }
                                }
                            }
                        }
                        (Some(s), None, Payload::Numbers(nums)) => {
                            expect_count(decl, nums, no)?;
                            for a in a.iter(na) {
                                for s in s.iter(ns) {
                                    for o in 0..no {
                                        obs.set(cell(a, s, o), spec, nums[o].0, line)?;
                                    }
                                }
                            }
                        }
                        (Some(s), Some(o), Payload::Numbers(nums)) => {
                            expect_count(decl, nums, 1)?;
                            for a in a.iter(na) {
                                for s in s.iter(ns) {
                                    for o in o.iter(no) {
                                        obs.set(cell(a, s, o), spec, nums[0].0, line)?;
                                    }
                                }
                            }
                        }
                        (_, _, Payload::Identity(k) | Payload::Uniform(k)) => return Err(bad_keyword(decl, k)),
                        (None, Some(_), _) => unreachable!("indices are parsed left to right"),
                    }
                }
                Table::R => {
                    if decl.indices.len() < 2 {
                        return Err(syntax(&decl.indices[0], "R: needs at least action and start state"));
                    }
                    let a = resolve_name(&decl.indices[0], &actions, "action")?;
                    let s = resolve_name(&decl.indices[1], &states, "state")?;
                    let t = decl.indices.get(2).map(|t| resolve_name(t, &states, "state")).transpose()?;
                    let o = decl.indices.get(3).map(|t| resolve_name(t, &observations, "observation")).transpose()?;
                    let spec = a.explicit() + s.explicit() + t.map_or(0, Sel::explicit) + o.map_or(0, Sel::explicit);
                    let cell = |a: usize, s: usize, t: usize, o: usize| ((a * ns + s) * ns + t) * no + o;
                    let Payload::Numbers(nums) = &decl.payload else {
                        let (Payload::Identity(k) | Payload::Uniform(k)) = &decl.payload else { unreachable!() };
                        return Err(bad_keyword(decl, k));
                    };
                    let (rows, cols) = match (t, o) {
                        (Some(_), Some(_)) => (1, 1),
                        (Some(_), None) => (1, no),
                        (None, None) => (ns, no),
                        (None, Some(_)) => unreachable!("indices are parsed left to right"),
                    };
                    expect_count(decl, nums, rows * cols)?;
                    for a in a.iter(na) {
                        for s in s.iter(ns) {
                            for t_idx in t.unwrap_or(Sel::All).iter(ns) {
                                for o_idx in o.unwrap_or(Sel::All).iter(no) {
                                    let k = match (t, o) {
                                        (Some(_), Some(_)) => 0,
                                        (Some(_), None) => o_idx,
                                        _ => t_idx * no + o_idx,
                                    };
                                    rew.set(cell(a, s, t_idx, o_idx), spec, nums[k].0, line)?;
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut transition = vec![vec![vec![0.0; ns]; ns]; na];
        for a in 0..na {
            for s in 0..ns {
                let row = &mut transition[a][s];
                row.copy_from_slice(&trans.values[(a * ns + s) * ns..(a * ns + s + 1) * ns]);
                normalize_row(row, || format!("T row ({}, {})", actions[a], states[s]))?;
            }
        }
        let mut emission = vec![vec![vec![0.0; no]; ns]; na];
        for a in 0..na {
            for s in 0..ns {
                let row = &mut emission[a][s];
                row.copy_from_slice(&obs.values[(a * ns + s) * no..(a * ns + s + 1) * no]);
                normalize_row(row, || format!("O row ({}, {})", actions[a], states[s]))?;
            }
        }

        let sign = if self.cost { -1.0 } else { 1.0 };
        let mut reward = vec![vec![0.0; na]; ns];
        for a in 0..na {
            for s in 0..ns {
                let block = &rew.values[(a * ns + s) * ns * no..(a * ns + s + 1) * ns * no];
                // Constant blocks are copied verbatim so printed files reparse exactly.
                let r = if block.iter().all(|v| *v == block[0]) {
                    block[0]
                } else {
                    let mut acc = 0.0;
                    for t in 0..ns {
                        for o in 0..no {
                            acc += transition[a][s][t] * emission[a][t][o] * block[t * no + o];
                        }
                    }
                    acc
                };
                reward[s][a] = sign * r;
            }
        }

        let belief = match &self.start {
            None | Some(StartSpec::Uniform) => Belief::uniform(ns),
            Some(StartSpec::Probs(p)) => {
                if p.len() != ns {
                    return Err(ParseError::SyntaxError {
                        line: 1,
                        col: 1,
                        message: format!("start has {} entries, expected {ns}", p.len()),
                    });
                }
                let mut p = p.clone();
                normalize_row(&mut p, || "start belief".to_string())?;
                Belief::new(p).map_err(|e| ParseError::BadDistribution { what: e.to_string(), sum: f64::NAN })?
            }
            Some(StartSpec::State(tok)) => match resolve_name(tok, &states, "state")? {
                Sel::One(i) => Belief::point(ns, i),
                Sel::All => Belief::uniform(ns),
            },
            Some(StartSpec::Include(toks)) | Some(StartSpec::Exclude(toks)) => {
                let mut listed = vec![false; ns];
                for tok in toks {
                    for i in resolve_name(tok, &states, "state")?.iter(ns) {
                        listed[i] = true;
                    }
                }
                let include = matches!(self.start, Some(StartSpec::Include(_)));
                let weights: Vec<f64> = listed.iter().map(|&l| f64::from(u8::from(l == include))).collect();
                Belief::from_weights(&weights).map_err(|_| ParseError::BadDistribution {
                    what: "start belief excludes every state".into(),
                    sum: 0.0,
                })?
            }
        };

        let inst = PomdpInstance::from_tables(
            states,
            actions,
            observations,
            transition,
            Emission::PerAction(emission),
            reward,
            discount,
            Some(belief),
        )
        .map_err(|e| ParseError::SyntaxError { line: 1, col: 1, message: e.to_string() })?;
        let report = validate(&inst);
        if let Some(v) = report.violations.first() {
            return Err(ParseError::BadDistribution { what: format!("{v:?}"), sum: f64::NAN });
        }
        Ok(inst)
    }
}

/// Parses `.pomdp` text into a validated instance.
pub fn parse(text: &str) -> Result<PomdpInstance, ParseError> {
    parse_raw(text)?.resolve()
}

fn write_names(out: &mut String, key: &str, names: &[String]) {
    let counted = names.iter().enumerate().all(|(i, n)| *n == i.to_string());
    if counted {
        let _ = writeln!(out, "{key}: {}", names.len());
    } else {
        let _ = writeln!(out, "{key}: {}", names.join(" "));
    }
}

fn write_row(out: &mut String, row: impl IntoIterator<Item = f64>) {
    let cells: Vec<String> = row.into_iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(out, "{}", cells.join(" "));
}

/// Canonical text: full matrices for `T` and `O`, one `R` line per
/// `(a, s)` carrying the aggregated reward.
pub fn to_canonical_text(inst: &PomdpInstance) -> String {
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    let mut out = String::new();
    let _ = writeln!(out, "discount: {:?}", inst.discount());
    let _ = writeln!(out, "values: reward");
    write_names(&mut out, "states", inst.states());
    write_names(&mut out, "actions", inst.actions());
    write_names(&mut out, "observations", inst.observations());
    let _ = write!(out, "start: ");
    write_row(&mut out, inst.initial_belief().probs().iter().copied());
    for a in 0..na {
        let _ = writeln!(out, "\nT: {}", inst.actions()[a]);
        for s in 0..ns {
            write_row(&mut out, inst.transition_row(a, s).iter().copied());
        }
    }
    for a in 0..na {
        let _ = writeln!(out, "\nO: {}", inst.actions()[a]);
        for s in 0..ns {
            write_row(&mut out, (0..no).map(|o| inst.emission(a, s, o)));
        }
    }
    let _ = writeln!(out);
    for a in 0..na {
        for s in 0..ns {
            let _ = writeln!(out, "R: {} : {} : * : * {:?}", inst.actions()[a], inst.states()[s], inst.reward(s, a));
        }
    }
    out
}
