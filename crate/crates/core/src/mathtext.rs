//! Normalisation, equivalence and similarity over mathematical text.
//!
//! Equivalence is decided in two tiers: identical canonical strings, then
//! numeric agreement when both sides evaluate as plain arithmetic. Anything
//! else falls back to a normalised edit-distance similarity. There is no
//! algebraic simplification, so `(x+1)^2` and `x^2+2x+1` are not equivalent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ABS_TOL: f64 = 1e-9;
pub const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MathTextError {
    #[error("unbalanced braces after \\boxed at byte {0}")]
    UnbalancedBraces(usize),
}

/// Payloads of every top-level `\boxed{...}` group, in order of appearance.
///
/// Escaped braces (`\{`, `\}`) do not count towards nesting. A `\boxed`
/// nested inside another box stays part of the outer payload.
pub fn extract_boxed(text: &str) -> Result<Vec<String>, MathTextError> {
    const KEY: &str = "\\boxed";
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut cursor = 0;
    while let Some(rel) = text[cursor..].find(KEY) {
        let start = cursor + rel;
        let mut i = start + KEY.len();
        // `\boxedfoo` is a different command
        if bytes.get(i).is_some_and(|b| b.is_ascii_alphabetic()) {
            cursor = i;
            continue;
        }
        while bytes.get(i).is_some_and(|b| b.is_ascii_whitespace()) {
            i += 1;
        }
        if bytes.get(i) != Some(&b'{') {
            cursor = i;
            continue;
        }
        let open = i;
        let mut depth = 0usize;
        let mut close = None;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => {
                    i += 2;
                    continue;
                }
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
            i += 1;
        }
        let close = close.ok_or(MathTextError::UnbalancedBraces(start))?;
        out.push(text[open + 1..close].to_string());
        cursor = close + 1;
    }
    Ok(out)
}

/// The last boxed payload, if any.
pub fn last_boxed(text: &str) -> Result<Option<String>, MathTextError> {
    Ok(extract_boxed(text)?.pop())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedExpr {
    pub canonical: String,
    pub numeric_value: Option<f64>,
}

/// Canonical form plus a numeric value when the text is plain arithmetic.
///
/// The rewrite rules run to a fixpoint, so the result is idempotent.
pub fn normalize(expr: &str) -> NormalizedExpr {
    let mut current = expr.to_string();
    loop {
        let next = normalize_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    let numeric_value = evaluate(&current);
    NormalizedExpr {
        canonical: current,
        numeric_value,
    }
}

fn normalize_pass(s: &str) -> String {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let s = strip_delimiters(&s);
    let s = drop_command(&s, "\\left");
    let s = drop_command(&s, "\\right");
    let s = rename_command(&s, "\\dfrac", "\\frac");
    let s = rename_command(&s, "\\tfrac", "\\frac");
    let s = s.trim_end_matches(['.', ',']);
    lowercase_words(s)
}

fn strip_delimiters(s: &str) -> String {
    for (open, close) in [("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")] {
        if s.len() >= open.len() + close.len() && s.starts_with(open) && s.ends_with(close) {
            return s[open.len()..s.len() - close.len()].to_string();
        }
    }
    s.to_string()
}

/// Occurrences of `cmd` that are not the prefix of a longer command name.
fn command_sites<'a>(s: &'a str, cmd: &'a str) -> impl Iterator<Item = usize> + 'a {
    s.match_indices(cmd).map(|(i, _)| i).filter(move |&i| {
        !s.as_bytes()
            .get(i + cmd.len())
            .is_some_and(|b| b.is_ascii_alphabetic())
    })
}

fn rename_command(s: &str, from: &str, to: &str) -> String {
    let sites: Vec<usize> = command_sites(s, from).collect();
    if sites.is_empty() {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for at in sites {
        out.push_str(&s[last..at]);
        out.push_str(to);
        last = at + from.len();
    }
    out.push_str(&s[last..]);
    out
}

fn drop_command(s: &str, cmd: &str) -> String {
    rename_command(s, cmd, "")
}

/// Lowercases ASCII letter runs of two or more characters that are not
/// command names. Single letters are variables and keep their case.
fn lowercase_words(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_alphabetic() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                i += 1;
            }
            let word = &s[start..i];
            let is_command = start > 0 && bytes[start - 1] == b'\\';
            if word.len() >= 2 && !is_command {
                out.push_str(&word.to_ascii_lowercase());
            } else {
                out.push_str(word);
            }
        } else {
            let ch = s[i..].chars().next().expect("in bounds");
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

/// Evaluates canonical text that is pure arithmetic: decimals, scientific
/// notation, `\frac`, `\sqrt`, percent, powers and the four operations.
pub fn evaluate(canonical: &str) -> Option<f64> {
    let mut parser = Arith {
        src: canonical.as_bytes(),
        pos: 0,
    };
    let value = parser.expr()?;
    (parser.pos == parser.src.len() && value.is_finite()).then_some(value)
}

struct Arith<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Arith<'_> {
    fn eat(&mut self, token: &str) -> bool {
        let t = token.as_bytes();
        if self.src[self.pos..].starts_with(t) {
            // a command must not run into more letters
            let next = self.src.get(self.pos + t.len());
            if t[0] == b'\\' && next.is_some_and(|b| b.is_ascii_alphabetic()) {
                return false;
            }
            self.pos += t.len();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Option<f64> {
        let mut acc = self.term()?;
        loop {
            if self.eat("+") {
                acc += self.term()?;
            } else if self.eat("-") {
                acc -= self.term()?;
            } else {
                return Some(acc);
            }
        }
    }

    fn term(&mut self) -> Option<f64> {
        let mut acc = self.unary()?;
        loop {
            if self.eat("*") || self.eat("\\cdot") || self.eat("\\times") {
                acc *= self.unary()?;
            } else if self.eat("/") || self.eat("\\div") {
                acc /= self.unary()?;
            } else {
                return Some(acc);
            }
        }
    }

    fn unary(&mut self) -> Option<f64> {
        if self.eat("-") {
            return Some(-self.unary()?);
        }
        if self.eat("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Option<f64> {
        let base = self.postfix()?;
        if self.eat("^") {
            let exponent = self.argument()?;
            return Some(base.powf(exponent));
        }
        Some(base)
    }

    fn postfix(&mut self) -> Option<f64> {
        let value = self.atom()?;
        if self.eat("\\%") || self.eat("%") {
            return Some(value / 100.0);
        }
        Some(value)
    }

    fn atom(&mut self) -> Option<f64> {
        if self.eat("\\frac") {
            let num = self.argument()?;
            let den = self.argument()?;
            return Some(num / den);
        }
        if self.eat("\\sqrt") {
            let radicand = self.argument()?;
            return (radicand >= 0.0).then(|| radicand.sqrt());
        }
        if self.eat("(") {
            let v = self.expr()?;
            return self.eat(")").then_some(v);
        }
        if self.eat("{") {
            let v = self.expr()?;
            return self.eat("}").then_some(v);
        }
        self.number()
    }

    /// A braced group or a single digit, as TeX macro arguments allow.
    fn argument(&mut self) -> Option<f64> {
        if self.eat("{") {
            let v = self.expr()?;
            return self.eat("}").then_some(v);
        }
        let b = *self.src.get(self.pos)?;
        if b.is_ascii_digit() {
            self.pos += 1;
            return Some(f64::from(b - b'0'));
        }
        None
    }

    fn number(&mut self) -> Option<f64> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.src.get(p.pos).is_some_and(|b| b.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        let int_digits = digits(self);
        let mut frac_digits = 0;
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            frac_digits = digits(self);
        }
        if int_digits + frac_digits == 0 {
            self.pos = start;
            return None;
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = mark;
            }
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalenceMethod {
    StringCanonical,
    Numeric,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub equivalent: bool,
    pub method: EquivalenceMethod,
    pub similarity: f64,
}

pub fn numbers_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ABS_TOL.max(REL_TOL * a.abs().max(b.abs()))
}

pub fn math_equivalent(a: &str, b: &str) -> EquivalenceVerdict {
    let na = normalize(a);
    let nb = normalize(b);
    if na.canonical == nb.canonical {
        return EquivalenceVerdict {
            equivalent: true,
            method: EquivalenceMethod::StringCanonical,
            similarity: 1.0,
        };
    }
    let similarity = canonical_similarity(&na.canonical, &nb.canonical);
    if let (Some(va), Some(vb)) = (na.numeric_value, nb.numeric_value) {
        if numbers_close(va, vb) {
            return EquivalenceVerdict {
                equivalent: true,
                method: EquivalenceMethod::Numeric,
                similarity,
            };
        }
    }
    EquivalenceVerdict {
        equivalent: false,
        method: EquivalenceMethod::None,
        similarity,
    }
}

fn canonical_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

/// `1 - edit_distance / max_len` over the canonical forms, counted in
/// Unicode scalar values.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    canonical_similarity(&normalize(a).canonical, &normalize(b).canonical)
}
