//! Symbolic model notation.
//!
//! A formula has the shape `fixed terms : random terms`. Terms are joined
//! with `+`; factors inside a term are crossed with `.` and nested with `/`.
//! `A/B` expands to `A + A.B` at parse time, and `A/B/C` to
//! `A + A.B + A.B.C`. The intercept is implicit; the literal `1` denotes an
//! intercept-only fixed part.
//!
//! ```
//! use trialadj::formula::{parse_formula, render_formula};
//!
//! let spec = parse_formula("S + Y : S.Y", &["S", "Y"]).unwrap();
//! assert_eq!(spec.fixed.len(), 2);
//! assert_eq!(render_formula(&spec), "S + Y : S.Y");
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A product of one or more distinct factors.
///
/// Factors are kept in declaration order, so `S.Y` and `Y.S` are the same
/// term and both render as the declared order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    factors: Vec<String>,
}

impl Term {
    /// Builds a term, ordering factors by their position in `declared`.
    pub fn new<S: AsRef<str>>(factors: &[S], declared: &[S]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Formula("empty term".into()));
        }
        let mut idx = Vec::with_capacity(factors.len());
        for f in factors {
            let f = f.as_ref();
            let pos =
                declared.iter().position(|d| d.as_ref() == f).ok_or_else(|| Error::UnknownFactor(f.to_string()))?;
            if idx.contains(&pos) {
                return Err(Error::Formula(format!("factor '{f}' repeated within a term")));
            }
            idx.push(pos);
        }
        idx.sort_unstable();
        Ok(Term { factors: idx.into_iter().map(|i| declared[i].as_ref().to_string()).collect() })
    }

    /// Single-factor term; no ordering is involved.
    pub fn single(name: &str) -> Self {
        Term { factors: vec![name.to_string()] }
    }

    pub fn factors(&self) -> &[String] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn contains(&self, factor: &str) -> bool {
        self.factors.iter().any(|f| f == factor)
    }

    /// True when both terms name the same factor set.
    pub fn same_factors(&self, other: &Term) -> bool {
        self.factors.len() == other.factors.len() && self.factors.iter().all(|f| other.contains(f))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.factors.join("."))
    }
}

/// Parsed model: ordered fixed and random terms over declared factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fixed: Vec<Term>,
    pub random: Vec<Term>,
}

impl ModelSpec {
    /// Every factor mentioned by any term, in first-use order.
    pub fn factors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in self.fixed.iter().chain(&self.random) {
            for f in t.factors() {
                if !out.contains(f) {
                    out.push(f.clone());
                }
            }
        }
        out
    }

    pub fn has_fixed(&self, term: &Term) -> bool {
        self.fixed.iter().any(|t| t.same_factors(term))
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_formula(self))
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_termlist(text: &str, declared: &[&str], side: &str) -> Result<Vec<Term>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::Formula(format!("empty {side} term list")));
    }
    let mut out: Vec<Term> = Vec::new();
    for raw in text.split('+') {
        let raw: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
        if raw.is_empty() {
            return Err(Error::Formula(format!("empty term in {side} term list")));
        }
        let mut expanded = Vec::new();
        let mut prefix: Vec<String> = Vec::new();
        for seg in raw.split('/') {
            if seg.is_empty() {
                return Err(Error::Formula(format!("empty factor in term '{raw}'")));
            }
            for name in seg.split('.') {
                if name.is_empty() {
                    return Err(Error::Formula(format!("empty factor in term '{raw}'")));
                }
                if !is_ident(name) {
                    return Err(Error::Formula(format!("invalid factor name '{name}'")));
                }
                if prefix.iter().any(|p| p == name) {
                    return Err(Error::Formula(format!("factor '{name}' repeated within term '{raw}'")));
                }
                prefix.push(name.to_string());
            }
            expanded.push(Term::new(&prefix.iter().map(String::as_str).collect::<Vec<_>>(), declared)?);
        }
        for t in expanded {
            if out.iter().any(|o| o.same_factors(&t)) {
                return Err(Error::Formula(format!("duplicate term '{t}' in {side} term list")));
            }
            out.push(t);
        }
    }
    Ok(out)
}

/// Parses `text` against the factor names in `known_factors`.
///
/// The declaration order of `known_factors` fixes the rendering order of
/// factors inside each term.
pub fn parse_formula<S: AsRef<str>>(text: &str, known_factors: &[S]) -> Result<ModelSpec> {
    let declared: Vec<&str> = known_factors.iter().map(AsRef::as_ref).collect();
    if !text.is_ascii() {
        return Err(Error::Formula("formula must be ASCII".into()));
    }
    let mut parts = text.split(':');
    let fixed_text = parts.next().unwrap_or("");
    let random_text = parts.next();
    if parts.next().is_some() {
        return Err(Error::Formula("more than one ':' in formula".into()));
    }
    if fixed_text.trim().is_empty() {
        return Err(Error::Formula("fixed part is empty; use '1' for an intercept-only model".into()));
    }
    let fixed = if fixed_text.trim() == "1" { Vec::new() } else { parse_termlist(fixed_text, &declared, "fixed")? };
    let random = match random_text {
        None => Vec::new(),
        Some(r) => parse_termlist(r, &declared, "random")?,
    };
    if let Some(t) = random.iter().find(|r| fixed.iter().any(|f| f.same_factors(r))) {
        return Err(Error::Formula(format!("term '{t}' is both fixed and random")));
    }
    Ok(ModelSpec { fixed, random })
}

/// Canonical rendering; inverse of [`parse_formula`] for the same factors.
pub fn render_formula(spec: &ModelSpec) -> String {
    let join = |ts: &[Term]| ts.iter().map(Term::to_string).collect::<Vec<_>>().join(" + ");
    let fixed = if spec.fixed.is_empty() { "1".to_string() } else { join(&spec.fixed) };
    if spec.random.is_empty() {
        fixed
    } else {
        format!("{fixed} : {}", join(&spec.random))
    }
}
