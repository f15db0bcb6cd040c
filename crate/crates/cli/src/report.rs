//! Machine-readable command output.
//!
//! JSON objects have sorted keys and every float is written with 17
//! significant digits, so equal inputs give byte-identical reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use serde_json::{json, Map, Number, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Real(f64),
    Complex(C64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl Entry {
    fn to_json(&self) -> Value {
        match self {
            Entry::Real(x) => float(*x),
            Entry::Complex(z) => json!({ "re": float(z.re), "im": float(z.im) }),
            Entry::Int(i) => Value::from(*i),
            Entry::Bool(b) => Value::Bool(*b),
            Entry::Text(s) => Value::String(s.clone()),
        }
    }
}

impl From<f64> for Entry {
    fn from(x: f64) -> Self {
        Entry::Real(x)
    }
}

impl From<C64> for Entry {
    fn from(z: C64) -> Self {
        Entry::Complex(z)
    }
}

impl From<usize> for Entry {
    fn from(i: usize) -> Self {
        Entry::Int(i as i64)
    }
}

impl From<u64> for Entry {
    fn from(i: u64) -> Self {
        Entry::Int(i as i64)
    }
}

impl From<u32> for Entry {
    fn from(i: u32) -> Self {
        Entry::Int(i64::from(i))
    }
}

impl From<bool> for Entry {
    fn from(b: bool) -> Self {
        Entry::Bool(b)
    }
}

impl From<&str> for Entry {
    fn from(s: &str) -> Self {
        Entry::Text(s.to_string())
    }
}

impl From<String> for Entry {
    fn from(s: String) -> Self {
        Entry::Text(s)
    }
}

fn float(x: f64) -> Value {
    Number::from_f64(x).map_or(Value::Null, Value::Number)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub inputs: BTreeMap<String, Entry>,
    pub results: Vec<(String, Entry)>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self { command: command.to_string(), inputs: BTreeMap::new(), results: Vec::new(), checks: Vec::new() }
    }

    pub fn input(&mut self, name: &str, value: impl Into<Entry>) {
        self.inputs.insert(name.to_string(), value.into());
    }

    pub fn result(&mut self, name: impl Into<String>, value: impl Into<Entry>) {
        self.results.push((name.into(), value.into()));
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, deviation: f64) {
        self.checks.push(Check { name: name.into(), pass, deviation });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_value(&self) -> Value {
        let inputs: Map<String, Value> = self.inputs.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
        let results: Vec<Value> =
            self.results.iter().map(|(n, v)| json!({ "name": n, "value": v.to_json() })).collect();
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| json!({ "name": c.name, "pass": c.pass, "deviation": float(c.deviation) }))
            .collect();
        json!({ "command": self.command, "inputs": inputs, "results": results, "checks": checks })
    }

    pub fn to_json(&self) -> String {
        let mut out = String::new();
        write_value(&mut out, &self.to_value(), 0);
        out.push('\n');
        out
    }

    /// One row per input, result and check:
    /// `section,name,re,im,text,pass,deviation`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["section", "name", "re", "im", "text", "pass", "deviation"]).expect("in-memory write");
        let mut row = |section: &str, name: &str, e: Option<&Entry>, check: Option<&Check>| {
            let (re, im, text) = match e {
                Some(Entry::Real(x)) => (fmt_f64(*x), String::new(), String::new()),
                Some(Entry::Complex(z)) => (fmt_f64(z.re), fmt_f64(z.im), String::new()),
                Some(Entry::Int(i)) => (i.to_string(), String::new(), String::new()),
                Some(Entry::Bool(b)) => (String::new(), String::new(), b.to_string()),
                Some(Entry::Text(s)) => (String::new(), String::new(), s.clone()),
                None => (String::new(), String::new(), String::new()),
            };
            let (pass, dev) = check.map_or((String::new(), String::new()), |c| (c.pass.to_string(), fmt_f64(c.deviation)));
            w.write_record([section, name, &re, &im, &text, &pass, &dev]).expect("in-memory write");
        };
        row("command", &self.command, None, None);
        for (k, v) in &self.inputs {
            row("input", k, Some(v), None);
        }
        for (k, v) in &self.results {
            row("result", k, Some(v), None);
        }
        for c in &self.checks {
            row("check", &c.name, None, Some(c));
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// 17 significant digits in scientific notation; enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, level: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => write!(out, "{i}").unwrap(),
            (None, Some(u)) => write!(out, "{u}").unwrap(),
            _ => out.push_str(&fmt_f64(n.as_f64().unwrap_or(f64::NAN))),
        },
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&serde_json::to_string(k).expect("key"));
                out.push_str(": ");
                write_value(out, item, level + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push('}');
        }
    }
}
