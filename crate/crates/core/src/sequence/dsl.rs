//! Line-oriented text format for pulse sequences.
//!
//! ```text
//! init S:-1/2
//! pulse optical pi/2 S:-1/2 D:-5/2 phase 0
//! pulse optical pi   S:-1/2 D:-1/2 phase 0
//! repeat 8 {
//!   wait 250us
//!   pulse rf pi phase alt(0,pi)
//!   wait 250us
//! }
//! pulse optical pi   S:-1/2 D:-5/2 phase 0
//! pulse optical pi/2 S:-1/2 D:-1/2 phase $phi_laser
//! measure
//! ```
//!
//! `alt(a,b)` takes `a` on even iterations of the innermost `repeat` and `b`
//! on odd ones; a block that alternates must repeat an even number of times.

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::{optical_ground, DLevel, Param, PulseSequence, SequenceElement};
use crate::error::{Error, Result};
use crate::state::{Level, Manifold};

#[derive(Debug, Clone)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Param(Param),
    Alt(Param, Param),
}

#[derive(Debug)]
enum Stmt {
    Init(Level, usize),
    Optical { target: DLevel, area: Expr, phase: Expr, line: usize },
    Rf { area: Expr, phase: Expr, line: usize },
    Wait { tau: Expr, line: usize },
    Measure,
    Repeat { count: usize, body: Vec<Stmt>, line: usize },
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax { line, column, message: message.into() }
}

fn semantic(line: usize, message: impl Into<String>) -> Error {
    Error::Semantic { line, message: message.into() }
}

fn tokenize(line_no: usize, line: &str) -> Result<Vec<Token<'_>>> {
    let mut out = Vec::new();
    let mut chars = line.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let column = line[..start].chars().count() + 1;
        if c == '{' || c == '}' {
            chars.next();
            out.push(Token { text: &line[start..start + 1], column });
            continue;
        }
        let mut end = start;
        let mut depth = 0i32;
        while let Some(&(i, ch)) = chars.peek() {
            if depth == 0 && (ch.is_whitespace() || ch == '{' || ch == '}') {
                break;
            }
            match ch {
                '(' => depth += 1,
                ')' => depth -= 1,
                _ => {}
            }
            end = i + ch.len_utf8();
            chars.next();
        }
        if depth != 0 {
            return Err(syntax(line_no, column, "unbalanced parentheses"));
        }
        out.push(Token { text: &line[start..end], column });
    }
    Ok(out)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `pi`, `pi/2`, `3pi/2`, `0.5pi`, `-pi`, or decimal radians.
fn parse_angle_literal(s: &str) -> Option<f64> {
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.strip_prefix('+').unwrap_or(s)),
    };
    if let Some(idx) = body.find("pi") {
        let coef = match &body[..idx] {
            "" => 1.0,
            c => c.strip_suffix('*').unwrap_or(c).parse::<f64>().ok()?,
        };
        let den = match &body[idx + 2..] {
            "" => 1.0,
            d => d.strip_prefix('/')?.parse::<u32>().ok().filter(|&d| d > 0)? as f64,
        };
        Some(sign * coef * PI / den)
    } else {
        if body.is_empty() || !body.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            return None;
        }
        body.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| sign * v)
    }
}

const UNITS: [(&str, f64); 4] = [("ns", 1e9), ("us", 1e6), ("ms", 1e3), ("s", 1.0)];

/// A duration with one of the suffixes ns/us/ms/s.
fn parse_duration_literal(s: &str) -> Option<f64> {
    let (unit, scale) = UNITS.iter().find(|(u, _)| s.ends_with(u))?;
    let number = &s[..s.len() - unit.len()];
    if number.is_empty() || number.contains(|c: char| c.is_ascii_alphabetic()) {
        return None;
    }
    // dividing by an exact power of ten keeps "250us" bit-identical to 2.5e-4
    number.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v / scale)
}

fn parse_scalar(tok: &Token<'_>, line: usize, duration: bool) -> Result<Param> {
    if let Some(name) = tok.text.strip_prefix('$') {
        if is_identifier(name) {
            return Ok(Param::Var(name.to_string()));
        }
        return Err(syntax(line, tok.column, format!("invalid variable name `{}`", tok.text)));
    }
    let value = if duration { parse_duration_literal(tok.text) } else { parse_angle_literal(tok.text) };
    value.map(Param::Value).ok_or_else(|| {
        let what = if duration { "duration (e.g. 250us)" } else { "angle (e.g. pi/2, 0.5pi, 1.2)" };
        syntax(line, tok.column, format!("expected {what}, found `{}`", tok.text))
    })
}

fn parse_expr(tok: &Token<'_>, line: usize, duration: bool) -> Result<Expr> {
    if let Some(inner) = tok.text.strip_prefix("alt(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(syntax(line, tok.column, "alt() takes exactly two arguments"));
        }
        let a = parse_scalar(&Token { text: parts[0], column: tok.column + 4 }, line, duration)?;
        let b = parse_scalar(&Token { text: parts[1], column: tok.column + 4 }, line, duration)?;
        return Ok(Expr::Alt(a, b));
    }
    parse_scalar(tok, line, duration).map(Expr::Param)
}

fn parse_level(tok: &Token<'_>, line: usize) -> Result<Level> {
    tok.text.parse::<Level>().map_err(|_| semantic(line, format!("unknown level label `{}`", tok.text)))
}

struct Parser<'a> {
    lines: Vec<(usize, Vec<Token<'a>>)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("");
            let tokens = tokenize(i + 1, content)?;
            if !tokens.is_empty() {
                lines.push((i + 1, tokens));
            }
        }
        Ok(Parser { lines, pos: 0 })
    }

    fn block(&mut self, nested: Option<usize>) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        while self.pos < self.lines.len() {
            let (line, tokens) = self.lines[self.pos].clone();
            self.pos += 1;
            let head = &tokens[0];
            let expect_len = |n: usize| -> Result<()> {
                if tokens.len() == n {
                    Ok(())
                } else if tokens.len() > n {
                    Err(syntax(line, tokens[n].column, format!("unexpected `{}`", tokens[n].text)))
                } else {
                    let col = tokens.last().map_or(1, |t| t.column + t.text.chars().count());
                    Err(syntax(line, col, format!("incomplete `{}` statement", head.text)))
                }
            };
            match head.text {
                "}" => {
                    expect_len(1)?;
                    return if nested.is_some() { Ok(out) } else { Err(syntax(line, head.column, "unmatched `}`")) };
                }
                "init" => {
                    expect_len(2)?;
                    out.push(Stmt::Init(parse_level(&tokens[1], line)?, line));
                }
                "measure" => {
                    expect_len(1)?;
                    out.push(Stmt::Measure);
                }
                "wait" => {
                    expect_len(2)?;
                    out.push(Stmt::Wait { tau: parse_expr(&tokens[1], line, true)?, line });
                }
                "repeat" => {
                    expect_len(3)?;
                    let count: usize = tokens[1].text.parse().map_err(|_| {
                        syntax(line, tokens[1].column, format!("expected repeat count, found `{}`", tokens[1].text))
                    })?;
                    if tokens[2].text != "{" {
                        return Err(syntax(line, tokens[2].column, "expected `{`"));
                    }
                    let body = self.block(Some(line))?;
                    out.push(Stmt::Repeat { count, body, line });
                }
                "pulse" => {
                    let kind =
                        tokens.get(1).ok_or_else(|| syntax(line, head.column + 5, "expected `optical` or `rf`"))?;
                    match kind.text {
                        "optical" => {
                            expect_len(7)?;
                            let area = parse_expr(&tokens[2], line, false)?;
                            let from = parse_level(&tokens[3], line)?;
                            let to = parse_level(&tokens[4], line)?;
                            if tokens[5].text != "phase" {
                                return Err(syntax(line, tokens[5].column, "expected `phase`"));
                            }
                            let phase = parse_expr(&tokens[6], line, false)?;
                            if from != optical_ground() || to.manifold != Manifold::D {
                                return Err(semantic(
                                    line,
                                    format!("optical pulses couple S:-1/2 to a D level, not {from} and {to}"),
                                ));
                            }
                            let target = DLevel::new(to.m.twice())?;
                            out.push(Stmt::Optical { target, area, phase, line });
                        }
                        "rf" => {
                            expect_len(5)?;
                            let area = parse_expr(&tokens[2], line, false)?;
                            if tokens[3].text != "phase" {
                                return Err(syntax(line, tokens[3].column, "expected `phase`"));
                            }
                            let phase = parse_expr(&tokens[4], line, false)?;
                            out.push(Stmt::Rf { area, phase, line });
                        }
                        other => return Err(syntax(line, kind.column, format!("unknown pulse kind `{other}`"))),
                    }
                }
                other => return Err(syntax(line, head.column, format!("unknown statement `{other}`"))),
            }
        }
        match nested {
            Some(open) => Err(syntax(open, 1, "`repeat` block is never closed")),
            None => Ok(out),
        }
    }
}

fn contains_alt(body: &[Stmt]) -> bool {
    body.iter().any(|s| match s {
        Stmt::Optical { area, phase, .. } | Stmt::Rf { area, phase, .. } => {
            matches!(area, Expr::Alt(..)) || matches!(phase, Expr::Alt(..))
        }
        Stmt::Wait { tau, .. } => matches!(tau, Expr::Alt(..)),
        _ => false,
    })
}

fn resolve(expr: &Expr, iteration: Option<usize>, line: usize, what: Option<&str>) -> Result<Param> {
    let p = match (expr, iteration) {
        (Expr::Param(p), _) => p.clone(),
        (Expr::Alt(a, b), Some(i)) => {
            if i % 2 == 0 {
                a.clone()
            } else {
                b.clone()
            }
        }
        (Expr::Alt(..), None) => return Err(semantic(line, "alt() used outside a repeat block")),
    };
    // phases may be negative; areas and durations may not
    if let (Param::Value(v), Some(what)) = (&p, what) {
        if *v < 0.0 {
            return Err(semantic(line, format!("negative {what} {v}")));
        }
    }
    Ok(p)
}

fn expand(
    stmts: &[Stmt],
    iteration: Option<usize>,
    initial: &mut Option<Level>,
    out: &mut Vec<SequenceElement>,
) -> Result<()> {
    for s in stmts {
        match s {
            Stmt::Init(level, line) => {
                if initial.is_some() || !out.is_empty() || iteration.is_some() {
                    return Err(semantic(*line, "`init` must appear once, before any other statement"));
                }
                *initial = Some(*level);
            }
            Stmt::Optical { target, area, phase, line } => out.push(SequenceElement::OpticalPulse {
                target: *target,
                area: resolve(area, iteration, *line, Some("pulse area"))?,
                laser_phase: resolve(phase, iteration, *line, None)?,
            }),
            Stmt::Rf { area, phase, line } => out.push(SequenceElement::RfPulse {
                area: resolve(area, iteration, *line, Some("pulse area"))?,
                rf_phase: resolve(phase, iteration, *line, None)?,
            }),
            Stmt::Wait { tau, line } => {
                out.push(SequenceElement::Wait { tau: resolve(tau, iteration, *line, Some("duration"))? })
            }
            Stmt::Measure => out.push(SequenceElement::Measure),
            Stmt::Repeat { count, body, line } => {
                if contains_alt(body) && count % 2 != 0 {
                    return Err(semantic(*line, format!("alternating repeat block needs an even count, got {count}")));
                }
                for i in 0..*count {
                    expand(body, Some(i), initial, out)?;
                }
            }
        }
    }
    Ok(())
}

/// Parses sequence text. Scan variables remain unbound.
pub fn parse_sequence_text(text: &str) -> Result<PulseSequence> {
    let mut parser = Parser::new(text)?;
    let stmts = parser.block(None)?;
    let mut initial = None;
    let mut elements = Vec::new();
    expand(&stmts, None, &mut initial, &mut elements)?;
    Ok(PulseSequence { initial: initial.unwrap_or_else(optical_ground), elements })
}

fn format_angle(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    for den in [1u32, 2, 3, 4, 6, 8, 12] {
        for num in 1..=48i32 {
            for sign in [1, -1] {
                let n = sign * num;
                let coef = match n {
                    1 => String::new(),
                    -1 => "-".into(),
                    _ => n.to_string(),
                };
                let text = if den == 1 { format!("{coef}pi") } else { format!("{coef}pi/{den}") };
                if parse_angle_literal(&text).map(f64::to_bits) == Some(v.to_bits()) {
                    return text;
                }
            }
        }
    }
    format!("{v:?}")
}

/// The shortest literal that parses back to exactly `v`.
fn format_duration(v: f64) -> String {
    UNITS
        .iter()
        .flat_map(|(unit, scale)| {
            let scaled = v * scale;
            [format!("{}{unit}", scaled.round()), format!("{scaled:?}{unit}")]
        })
        .filter(|c| parse_duration_literal(c).map(f64::to_bits) == Some(v.to_bits()))
        .min_by_key(String::len)
        .unwrap_or_else(|| format!("{v:?}s"))
}

fn format_param(p: &Param, duration: bool) -> String {
    match p {
        Param::Var(name) => format!("${name}"),
        Param::Value(v) if duration => format_duration(*v),
        Param::Value(v) => format_angle(*v),
    }
}

/// Writes a sequence as flat statements, one per line.
pub fn serialize_sequence(seq: &PulseSequence) -> String {
    let mut out = String::new();
    writeln!(out, "init {}", seq.initial).unwrap();
    for e in &seq.elements {
        match e {
            SequenceElement::OpticalPulse { target, area, laser_phase } => writeln!(
                out,
                "pulse optical {} {} {} phase {}",
                format_param(area, false),
                optical_ground(),
                target,
                format_param(laser_phase, false)
            ),
            SequenceElement::RfPulse { area, rf_phase } => {
                writeln!(out, "pulse rf {} phase {}", format_param(area, false), format_param(rf_phase, false))
            }
            SequenceElement::Wait { tau } => writeln!(out, "wait {}", format_param(tau, true)),
            SequenceElement::Measure => writeln!(out, "measure"),
        }
        .unwrap();
    }
    out
}
