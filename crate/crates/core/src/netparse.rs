//! Interferometer networks: a line-oriented text format, the built-in
//! nine-history network, and the translation into a history space.
//!
//! ```text
//! # comment
//! source: S
//! detector: D
//! bn: 4
//! slice 0: S
//! slice 1: x1 x2
//! step 0 -> 1: S x1 0.7071067811865476
//! step 0 -> 1: S x2 0.7071067811865476 0
//! ```
//!
//! Each slice is one time; node `j` of a slice is basis vector `j` of a
//! space whose dimension is the widest slice. Slices narrower than that are
//! padded with auxiliary basis projectors that no edge ever reaches.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::histories::{HistoryError, HistorySpace, SegmentedEvolution, TimeGrid};
use crate::linalg::{Operator, Projector, ProjectorFamily, StateVector, MAX_DIM};
use crate::weakvalues::{sequential_weak_value, weak_value, TimedOperator, WeakValueError, WeakValueResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    SyntaxError,
    UnknownNode,
    UnknownSlice,
    NonAdjacentSlice,
    NonConsecutiveSlice,
    DuplicateEdge,
    DuplicateNode,
    DuplicateDirective,
    MissingDirective,
    MisplacedTerminal,
}

/// Diagnostic with a 1-based line and column.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub amplitude: C64,
}

/// A parsed network. `steps[i]` holds the edges from slice `i` to `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub slices: Vec<Vec<String>>,
    pub steps: Vec<Vec<Edge>>,
    pub source: String,
    pub detector: String,
    pub bn: Option<u32>,
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokens(s: &str, offset: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(b)) => {
                out.push(Token { text: &s[b..i], col: offset + s[..b].chars().count() + 1 });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(b) = start {
        out.push(Token { text: &s[b..], col: offset + s[..b].chars().count() + 1 });
    }
    out
}

struct StepLine<'a> {
    line: usize,
    from_slice: (usize, usize),
    to_slice: (usize, usize),
    body: Vec<Token<'a>>,
}

fn err(line: usize, col: usize, kind: ParseErrorKind, message: impl Into<String>) -> ParseError {
    ParseError { line, col, kind, message: message.into() }
}

fn parse_index(tok: &Token, line: usize) -> Result<usize, ParseError> {
    tok.text
        .parse::<usize>()
        .map_err(|_| err(line, tok.col, ParseErrorKind::SyntaxError, format!("expected a slice index, found '{}'", tok.text)))
}

fn parse_real(tok: &Token, line: usize) -> Result<f64, ParseError> {
    match tok.text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(err(line, tok.col, ParseErrorKind::SyntaxError, format!("expected a decimal amplitude, found '{}'", tok.text))),
    }
}

/// Parses the network text format.
pub fn parse(text: &str) -> Result<NetworkSpec, ParseError> {
    let mut slices: Vec<Vec<String>> = Vec::new();
    let mut source: Option<(String, usize, usize)> = None;
    let mut detector: Option<(String, usize, usize)> = None;
    let mut bn: Option<u32> = None;
    let mut step_lines = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let indent = raw[..raw.len() - trimmed.len()].chars().count();
        let Some(colon) = trimmed.find(':') else {
            return Err(err(line, indent + 1, ParseErrorKind::SyntaxError, "expected '<directive>: ...'"));
        };
        let head = tokens(&trimmed[..colon], indent);
        let body_offset = indent + trimmed[..colon + 1].chars().count();
        let body = tokens(&trimmed[colon + 1..], body_offset);
        let Some(keyword) = head.first() else {
            return Err(err(line, indent + 1, ParseErrorKind::SyntaxError, "missing directive before ':'"));
        };
        let single = |what: &str| -> Result<Token, ParseError> {
            if head.len() != 1 {
                return Err(err(line, head[1].col, ParseErrorKind::SyntaxError, format!("unexpected '{}'", head[1].text)));
            }
            match body.as_slice() {
                [t] => Ok(*t),
                [] => Err(err(line, body_offset + 1, ParseErrorKind::SyntaxError, format!("missing {what}"))),
                [_, extra, ..] => Err(err(line, extra.col, ParseErrorKind::SyntaxError, format!("unexpected '{}'", extra.text))),
            }
        };
        match keyword.text {
            "source" | "detector" => {
                let t = single("node name")?;
                let slot = if keyword.text == "source" { &mut source } else { &mut detector };
                if slot.is_some() {
                    return Err(err(line, keyword.col, ParseErrorKind::DuplicateDirective, format!("'{}' given twice", keyword.text)));
                }
                *slot = Some((t.text.to_string(), line, t.col));
            }
            "bn" => {
                let t = single("integer")?;
                if bn.is_some() {
                    return Err(err(line, keyword.col, ParseErrorKind::DuplicateDirective, "'bn' given twice"));
                }
                bn = Some(t.text.parse().map_err(|_| {
                    err(line, t.col, ParseErrorKind::SyntaxError, format!("expected a non-negative integer, found '{}'", t.text))
                })?);
            }
            "slice" => {
                let [_, idx] = head.as_slice() else {
                    return Err(err(line, keyword.col, ParseErrorKind::SyntaxError, "expected 'slice <index>:'"));
                };
                let index = parse_index(idx, line)?;
                if index != slices.len() {
                    return Err(err(
                        line,
                        idx.col,
                        ParseErrorKind::NonConsecutiveSlice,
                        format!("expected slice {}, found slice {index}", slices.len()),
                    ));
                }
                if body.is_empty() {
                    return Err(err(line, body_offset + 1, ParseErrorKind::SyntaxError, "slice has no nodes"));
                }
                let mut seen = BTreeSet::new();
                for t in &body {
                    if !seen.insert(t.text) {
                        return Err(err(line, t.col, ParseErrorKind::DuplicateNode, format!("node '{}' repeated in slice", t.text)));
                    }
                }
                slices.push(body.iter().map(|t| t.text.to_string()).collect());
            }
            "step" => {
                // Accept "i -> j", "i->j", and the arrow character.
                let joined: Vec<Token> = head[1..].to_vec();
                let mut parts: Vec<Token> = Vec::new();
                for t in joined {
                    let mut rest = t.text;
                    let mut col = t.col;
                    while !rest.is_empty() {
                        if let Some(r) = rest.strip_prefix("->") {
                            parts.push(Token { text: "->", col });
                            rest = r;
                            col += 2;
                        } else if let Some(r) = rest.strip_prefix('→') {
                            parts.push(Token { text: "->", col });
                            rest = r;
                            col += 1;
                        } else {
                            let end = rest.find("->").into_iter().chain(rest.find('→')).min().unwrap_or(rest.len());
                            parts.push(Token { text: &rest[..end], col });
                            col += rest[..end].chars().count();
                            rest = &rest[end..];
                        }
                    }
                }
                let [a, arrow, b] = parts.as_slice() else {
                    return Err(err(line, keyword.col, ParseErrorKind::SyntaxError, "expected 'step <i> -> <j>:'"));
                };
                if arrow.text != "->" {
                    return Err(err(line, arrow.col, ParseErrorKind::SyntaxError, "expected '->'"));
                }
                step_lines.push(StepLine {
                    line,
                    from_slice: (parse_index(a, line)?, a.col),
                    to_slice: (parse_index(b, line)?, b.col),
                    body,
                });
            }
            other => {
                return Err(err(line, keyword.col, ParseErrorKind::SyntaxError, format!("unknown directive '{other}'")));
            }
        }
    }

    let last_line = text.lines().count().max(1);
    if slices.len() < 2 {
        return Err(err(last_line, 1, ParseErrorKind::MissingDirective, "a network needs at least two slices"));
    }
    let (source, s_line, s_col) =
        source.ok_or_else(|| err(last_line, 1, ParseErrorKind::MissingDirective, "missing 'source:'"))?;
    let (detector, d_line, d_col) =
        detector.ok_or_else(|| err(last_line, 1, ParseErrorKind::MissingDirective, "missing 'detector:'"))?;
    let last = slices.len() - 1;
    check_terminal(&slices, &source, 0, s_line, s_col, "source")?;
    check_terminal(&slices, &detector, last, d_line, d_col, "detector")?;

    let mut steps: Vec<Vec<Edge>> = vec![Vec::new(); last];
    let mut seen: HashMap<(usize, String, String), usize> = HashMap::new();
    for s in step_lines {
        let (i, icol) = s.from_slice;
        let (j, jcol) = s.to_slice;
        for (idx, col) in [(i, icol), (j, jcol)] {
            if idx >= slices.len() {
                return Err(err(s.line, col, ParseErrorKind::UnknownSlice, format!("slice {idx} is not declared")));
            }
        }
        if j != i + 1 {
            return Err(err(s.line, jcol, ParseErrorKind::NonAdjacentSlice, format!("step {i} -> {j} skips or reverses time")));
        }
        let body = &s.body;
        if body.len() < 3 || body.len() > 4 {
            let col = body.get(4).or(body.last()).map_or(jcol, |t| t.col);
            return Err(err(s.line, col, ParseErrorKind::SyntaxError, "expected '<from> <to> <re> [<im>]'"));
        }
        for (t, slice) in [(&body[0], i), (&body[1], j)] {
            if !slices[slice].iter().any(|n| n == t.text) {
                return Err(err(s.line, t.col, ParseErrorKind::UnknownNode, format!("node '{}' is not in slice {slice}", t.text)));
            }
        }
        let re = parse_real(&body[2], s.line)?;
        let im = match body.get(3) {
            Some(t) => parse_real(t, s.line)?,
            None => 0.0,
        };
        let key = (i, body[0].text.to_string(), body[1].text.to_string());
        if let Some(first) = seen.insert(key, s.line) {
            return Err(err(
                s.line,
                body[0].col,
                ParseErrorKind::DuplicateEdge,
                format!("edge {} -> {} already given on line {first}", body[0].text, body[1].text),
            ));
        }
        steps[i].push(Edge { from: body[0].text.to_string(), to: body[1].text.to_string(), amplitude: C64::new(re, im) });
    }
    Ok(NetworkSpec { slices, steps, source, detector, bn })
}

fn check_terminal(
    slices: &[Vec<String>],
    node: &str,
    home: usize,
    line: usize,
    col: usize,
    what: &str,
) -> Result<(), ParseError> {
    for (s, nodes) in slices.iter().enumerate() {
        let present = nodes.iter().any(|n| n == node);
        if present != (s == home) {
            let msg = if s == home {
                format!("{what} '{node}' must appear in slice {home}")
            } else {
                format!("{what} '{node}' may appear only in slice {home}, found in slice {s}")
            };
            return Err(err(line, col, ParseErrorKind::MisplacedTerminal, msg));
        }
    }
    Ok(())
}

/// Writes the text format; `parse(&serialize(s)) == s`.
pub fn serialize(spec: &NetworkSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("source: {}\ndetector: {}\n", spec.source, spec.detector));
    if let Some(bn) = spec.bn {
        out.push_str(&format!("bn: {bn}\n"));
    }
    for (i, nodes) in spec.slices.iter().enumerate() {
        out.push_str(&format!("slice {i}: {}\n", nodes.join(" ")));
    }
    for (i, edges) in spec.steps.iter().enumerate() {
        for e in edges {
            out.push_str(&format!("step {i} -> {}: {} {} {}", i + 1, e.from, e.to, e.amplitude.re));
            if e.amplitude.im != 0.0 {
                out.push_str(&format!(" {}", e.amplitude.im));
            }
            out.push('\n');
        }
    }
    out
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

/// The nine-history interferometer: `S` splits into the `x1` arm, which
/// carries `bn` extra beam splitters, and the `x2` arm, which feeds two
/// nested interferometers (`x3,x4 → x5,x6 → x7,x8`) recombining at `x9`.
///
/// Every beam-splitter port contributes `±2^{-1/2}`. The signs below are the
/// assignment that gives the nested histories the amplitudes
/// `(+,-,-,-,+,-,+,+)/8` in the order
/// `(x3,x5,x7), (x3,x5,x8), (x3,x6,x7), (x3,x6,x8), (x4,x5,x7), …`.
/// The `x1` arm has amplitude `2^{-(bn+2)/2}`; its `bn` splitters are spread
/// as evenly as possible over the four `x1 → x1` steps.
pub fn fig1_builtin(bn: u32) -> NetworkSpec {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let slices = vec![
        names(&["S"]),
        names(&["x1", "x2"]),
        names(&["x1", "x3", "x4"]),
        names(&["x1", "x5", "x6"]),
        names(&["x1", "x7", "x8"]),
        names(&["x1", "x9"]),
        names(&["D"]),
    ];
    let edge = |from: &str, to: &str, a: f64| Edge { from: from.into(), to: to.into(), amplitude: C64::new(a, 0.0) };
    let arm = |step: u32| {
        let count = bn / 4 + u32::from(step < bn % 4);
        edge("x1", "x1", 0.5f64.powf(count as f64 / 2.0))
    };
    let steps = vec![
        vec![edge("S", "x1", h), edge("S", "x2", h)],
        vec![arm(0), edge("x2", "x3", h), edge("x2", "x4", h)],
        vec![arm(1), edge("x3", "x5", h), edge("x3", "x6", -h), edge("x4", "x5", h), edge("x4", "x6", h)],
        vec![arm(2), edge("x5", "x7", h), edge("x5", "x8", -h), edge("x6", "x7", h), edge("x6", "x8", h)],
        vec![arm(3), edge("x7", "x9", h), edge("x8", "x9", h)],
        vec![edge("x1", "D", h), edge("x9", "D", h)],
    ];
    NetworkSpec { slices, steps, source: "S".into(), detector: "D".into(), bn: Some(bn) }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    WeakValue(#[from] WeakValueError),
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("label '{0}' names a source or detector, not an intermediate node")]
    TerminalLabel(String),
    #[error("labels '{0}' and '{1}' refer to the same time")]
    SameTime(String, String),
}

/// A resolved label: intermediate time ordinal and node index in that slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub at: usize,
    pub index: usize,
}

/// A network as a history problem.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    slices: Vec<Vec<String>>,
    families: Vec<ProjectorFamily>,
    evolution: SegmentedEvolution,
    space: HistorySpace,
}

pub fn build_model(spec: &NetworkSpec) -> Result<NetworkModel, NetworkError> {
    let inconsistent = |m: String| NetworkError::InconsistentDimensions(m);
    if spec.slices.len() < 2 {
        return Err(inconsistent("a network needs at least two slices".into()));
    }
    if spec.steps.len() != spec.slices.len() - 1 {
        return Err(inconsistent(format!("{} slices need {} steps, found {}", spec.slices.len(), spec.slices.len() - 1, spec.steps.len())));
    }
    let dim = spec.slices.iter().map(Vec::len).max().unwrap_or(0);
    if dim == 0 || dim > MAX_DIM {
        return Err(inconsistent(format!("dimension {dim} outside 1..={MAX_DIM}")));
    }
    let position = |slice: usize, node: &str| spec.slices[slice].iter().position(|n| n == node);
    let last = spec.slices.len() - 1;
    let src = position(0, &spec.source).ok_or_else(|| inconsistent(format!("source '{}' not in slice 0", spec.source)))?;
    let det = position(last, &spec.detector)
        .ok_or_else(|| inconsistent(format!("detector '{}' not in slice {last}", spec.detector)))?;

    let mut propagators = Vec::with_capacity(spec.steps.len());
    for (i, edges) in spec.steps.iter().enumerate() {
        let mut m = nalgebra::DMatrix::<C64>::zeros(dim, dim);
        for e in edges {
            let (Some(a), Some(b)) = (position(i, &e.from), position(i + 1, &e.to)) else {
                return Err(inconsistent(format!("edge {} -> {} does not join slices {i} and {}", e.from, e.to, i + 1)));
            };
            m[(b, a)] += e.amplitude;
        }
        propagators.push(Operator::from_matrix(m).map_err(HistoryError::from)?);
    }
    let evolution = SegmentedEvolution::from_propagators(propagators)?;
    let k = last - 1;
    let family = ProjectorFamily::computational(dim).map_err(HistoryError::from)?;
    let families = vec![family; k];
    let basis = |i| StateVector::basis(dim, i).map_err(HistoryError::from);
    let space = HistorySpace::new(TimeGrid::new(k), families.clone(), basis(src)?, basis(det)?)?;
    Ok(NetworkModel { slices: spec.slices.clone(), families, evolution, space })
}

impl NetworkModel {
    pub fn space(&self) -> &HistorySpace {
        &self.space
    }

    pub fn evolution(&self) -> &SegmentedEvolution {
        &self.evolution
    }

    pub fn families(&self) -> &[ProjectorFamily] {
        &self.families
    }

    pub fn propagators(&self) -> &[Operator] {
        self.evolution.segments()
    }

    pub fn slices(&self) -> &[Vec<String>] {
        &self.slices
    }

    /// Node name for member `index` at ordinal `at`, or `aux<j>` for padding.
    pub fn node_name(&self, at: usize, index: usize) -> String {
        self.slices[at].get(index).cloned().unwrap_or_else(|| format!("aux{index}"))
    }

    /// Resolves `name` to the first intermediate slice containing it, or
    /// `name@t` to slice `t`.
    pub fn resolve(&self, label: &str) -> Result<NodeRef, NetworkError> {
        let unknown = || NetworkError::UnknownLabel(label.to_string());
        let last = self.slices.len() - 1;
        let (name, at) = match label.split_once('@') {
            Some((n, t)) => (n, Some(t.parse::<usize>().map_err(|_| unknown())?)),
            None => (label, None),
        };
        let find = |t: usize| self.slices.get(t).and_then(|s| s.iter().position(|n| n == name));
        let at = match at {
            Some(t) => {
                find(t).ok_or_else(unknown)?;
                t
            }
            None => (1..last).find(|&t| find(t).is_some()).ok_or_else(|| {
                if find(0).is_some() || find(last).is_some() {
                    NetworkError::TerminalLabel(label.to_string())
                } else {
                    unknown()
                }
            })?,
        };
        if at == 0 || at == last {
            return Err(NetworkError::TerminalLabel(label.to_string()));
        }
        Ok(NodeRef { at, index: find(at).ok_or_else(unknown)? })
    }

    fn projector(&self, r: NodeRef) -> Operator {
        Projector::basis(self.space.dim(), r.index).expect("index within dimension").operator().clone()
    }

    /// Single-time weak value of the node projector.
    pub fn weak_value(&self, label: &str) -> Result<WeakValueResult, NetworkError> {
        let r = self.resolve(label)?;
        Ok(weak_value(&self.projector(r), self.space.pre_state(), self.space.post_state(), &self.evolution, r.at)?)
    }

    /// Sequential weak value of node projectors; labels may be given in any
    /// order and are applied in time order.
    pub fn sequential_weak_value(&self, labels: &[&str]) -> Result<WeakValueResult, NetworkError> {
        let mut refs = labels.iter().map(|l| Ok((self.resolve(l)?, *l))).collect::<Result<Vec<_>, NetworkError>>()?;
        refs.sort_by_key(|(r, _)| r.at);
        for w in refs.windows(2) {
            if w[0].0.at == w[1].0.at {
                return Err(NetworkError::SameTime(w[0].1.to_string(), w[1].1.to_string()));
            }
        }
        let ops: Vec<TimedOperator> = refs.iter().map(|(r, _)| TimedOperator::new(r.at, self.projector(*r))).collect();
        Ok(sequential_weak_value(&ops, self.space.pre_state(), self.space.post_state(), &self.evolution)?)
    }
}
