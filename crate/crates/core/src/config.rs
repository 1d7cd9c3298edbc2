//! Flat `key = value` configuration documents.
//!
//! Grammar: one `key = value` per line, `[section]` headers, `#` comments.
//! Values are decimal numbers, quoted strings, `true`/`false`, or bracketed
//! lists of those. Parsing never stops at the first problem; every issue is
//! reported with its line and column.
//!
//! ```text
//! seed = 7
//! [grid]
//! nx = 32
//! [profile]
//! kind = "linear"
//! a = 1.0
//! b = 1.0
//! [physics]
//! mu = 0.01
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, Error, Result};
use crate::evolution::{DensityForm, Scheme};
use crate::experiments::{ExperimentConfig, StateSpec};
use crate::operators::Advection;
use crate::steady::{DensityProfile, PotentialKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    List(Vec<Value>),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Float(_) => "number",
            Value::Str(_) => "string",
            Value::Bool(_) => "boolean",
            Value::List(_) => "list",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: Value,
    pub line: usize,
    /// Column of the key.
    pub column: usize,
    /// Column where the value starts.
    pub value_column: usize,
}

/// Raw document: `section.key` (or bare `key` before any section) to entry.
pub type Document = BTreeMap<String, Entry>;

fn issue(line: usize, column: usize, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        line,
        column,
        message: message.into(),
    }
}

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    line: usize,
    _src: &'a str,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn col(&self) -> usize {
        self.pos + 1
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(' ' | '\t')) {
            self.pos += 1;
        }
    }

    fn value(&mut self) -> std::result::Result<Value, ConfigIssue> {
        self.skip_ws();
        let start = self.col();
        match self.peek() {
            None => Err(issue(self.line, start, "missing value")),
            Some('"') => {
                self.pos += 1;
                let mut s = String::new();
                loop {
                    match self.peek() {
                        None => return Err(issue(self.line, start, "unterminated string")),
                        Some('"') => {
                            self.pos += 1;
                            return Ok(Value::Str(s));
                        }
                        Some('\\') => {
                            self.pos += 1;
                            match self.peek() {
                                Some('n') => s.push('\n'),
                                Some('t') => s.push('\t'),
                                Some(c @ ('"' | '\\')) => s.push(c),
                                _ => return Err(issue(self.line, self.col(), "unknown escape")),
                            }
                            self.pos += 1;
                        }
                        Some(c) => {
                            s.push(c);
                            self.pos += 1;
                        }
                    }
                }
            }
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        None => return Err(issue(self.line, start, "unterminated list")),
                        _ => {}
                    }
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {}
                        _ => return Err(issue(self.line, self.col(), "expected ',' or ']' in list")),
                    }
                }
            }
            Some(_) => {
                let mut tok = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_') {
                        tok.push(c);
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                if tok.is_empty() {
                    return Err(issue(self.line, start, format!("unexpected character {:?}", self.peek().unwrap())));
                }
                match tok.as_str() {
                    "true" => return Ok(Value::Bool(true)),
                    "false" => return Ok(Value::Bool(false)),
                    _ => {}
                }
                if let Ok(i) = tok.parse::<i64>() {
                    return Ok(Value::Int(i));
                }
                match tok.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(Value::Float(x)),
                    _ => Err(issue(
                        self.line,
                        start,
                        format!("{tok:?} is not a number, boolean or quoted string"),
                    )),
                }
            }
        }
    }
}

/// Strips a trailing `#` comment outside quotes.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            '\\' if in_str => escaped = !escaped,
            '"' if !escaped => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => escaped = false,
        }
        if c != '\\' {
            escaped = false;
        }
    }
    line
}

/// Parses the syntax of a document, collecting every syntax error and duplicate key.
pub fn parse_document(text: &str) -> std::result::Result<Document, Vec<ConfigIssue>> {
    let (doc, issues) = scan(text);
    if issues.is_empty() {
        Ok(doc)
    } else {
        Err(issues)
    }
}

/// Every well-formed entry plus the syntax issues; the first occurrence of a duplicate key wins.
fn scan(text: &str) -> (Document, Vec<ConfigIssue>) {
    let mut doc = Document::new();
    let mut issues = Vec::new();
    let mut section = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = strip_comment(raw);
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = body.len() - body.trim_start().len();
        if trimmed.starts_with('[') {
            if !trimmed.ends_with(']') {
                issues.push(issue(line, lead + 1, "section header missing ']'"));
                continue;
            }
            let name = trimmed[1..trimmed.len() - 1].trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                issues.push(issue(line, lead + 1, format!("invalid section name {name:?}")));
                continue;
            }
            section = name.to_string();
            continue;
        }
        let Some(eq) = body.find('=') else {
            issues.push(issue(line, lead + 1, "expected 'key = value'"));
            continue;
        };
        let key = body[..eq].trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            issues.push(issue(line, lead + 1, format!("invalid key {key:?}")));
            continue;
        }
        let mut cur = Cursor {
            chars: body.chars().enumerate().collect(),
            pos: body[..eq + 1].chars().count(),
            line,
            _src: body,
        };
        cur.skip_ws();
        let value_column = cur.col();
        let value = match cur.value() {
            Ok(v) => v,
            Err(e) => {
                issues.push(e);
                continue;
            }
        };
        cur.skip_ws();
        if cur.peek().is_some() {
            issues.push(issue(line, cur.col(), "unexpected text after value"));
            continue;
        }
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if let Some(prev) = doc.get(&full) {
            issues.push(issue(
                line,
                lead + 1,
                format!("duplicate key '{full}' on lines {} and {line}", prev.line),
            ));
            continue;
        }
        doc.insert(
            full,
            Entry {
                value,
                line,
                column: lead + 1,
                value_column,
            },
        );
    }
    (doc, issues)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Int { min: i64 },
    Float { positive: bool },
    Str,
    Choice(&'static [&'static str]),
    IntList { min: i64 },
    FloatList { positive: bool },
}

/// Every accepted key with its type.
const SCHEMA: &[(&str, Kind)] = &[
    ("seed", Kind::Int { min: 0 }),
    ("threads", Kind::Int { min: 1 }),
    ("grid.nx", Kind::Int { min: 4 }),
    ("grid.ny", Kind::Int { min: 4 }),
    ("grid.lx", Kind::Float { positive: true }),
    ("grid.ly", Kind::Float { positive: true }),
    ("potential.kind", Kind::Choice(&["uniform_gravity", "radial", "expression"])),
    ("potential.g", Kind::Float { positive: false }),
    ("potential.center_x", Kind::Float { positive: false }),
    ("potential.center_y", Kind::Float { positive: false }),
    ("potential.strength", Kind::Float { positive: false }),
    ("potential.expression", Kind::Str),
    ("profile.kind", Kind::Choice(&["exponential", "linear", "tanh"])),
    ("profile.rho_bar", Kind::Float { positive: true }),
    ("profile.beta", Kind::Float { positive: false }),
    ("profile.a", Kind::Float { positive: false }),
    ("profile.b", Kind::Float { positive: false }),
    ("profile.mean", Kind::Float { positive: false }),
    ("profile.jump", Kind::Float { positive: false }),
    ("profile.t0", Kind::Float { positive: false }),
    ("profile.width", Kind::Float { positive: true }),
    ("physics.mu", Kind::Float { positive: true }),
    ("physics.sigma", Kind::Float { positive: true }),
    ("solver.eig_tol", Kind::Float { positive: true }),
    ("solver.max_iter", Kind::Int { min: 1 }),
    ("solver.fp_tol", Kind::Float { positive: true }),
    ("run.mode", Kind::Choice(&["linear", "nonlinear"])),
    ("run.init", Kind::Str),
    ("run.amplitude", Kind::Float { positive: true }),
    ("run.t_end", Kind::Float { positive: false }),
    ("run.dt", Kind::Float { positive: true }),
    ("run.cadence", Kind::Int { min: 1 }),
    ("run.checkpoint_every", Kind::Int { min: 0 }),
    ("run.advection", Kind::Choice(&["upwind1", "centered2_with_limiter"])),
    ("run.density_form", Kind::Choice(&["total", "perturbation"])),
    ("run.projection_tol", Kind::Float { positive: true }),
    ("run.max_projection_iter", Kind::Int { min: 1 }),
    ("experiment.resolutions", Kind::IntList { min: 4 }),
    ("experiment.deltas", Kind::FloatList { positive: true }),
    ("experiment.k", Kind::Float { positive: true }),
    ("experiment.epsilon", Kind::Float { positive: true }),
    ("experiment.fit_window", Kind::FloatList { positive: false }),
    ("experiment.escape_pad", Kind::Float { positive: true }),
    ("experiment.decay_horizon", Kind::Float { positive: true }),
    ("experiment.functional_tol", Kind::Float { positive: true }),
    ("experiment.cadence", Kind::Int { min: 1 }),
];

fn check_value(key: &str, kind: Kind, e: &Entry) -> Option<ConfigIssue> {
    let at = |m: String| Some(issue(e.line, e.value_column, format!("{key}: {m}")));
    let float = |v: &Value| match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(x) => Some(*x),
        _ => None,
    };
    match kind {
        Kind::Int { min } => match e.value {
            Value::Int(i) if i < min => at(format!("must be >= {min}, got {i}")),
            Value::Int(_) => None,
            ref v => at(format!("expected an integer, found a {}", v.type_name())),
        },
        Kind::Float { positive } => match float(&e.value) {
            Some(x) if positive && x <= 0.0 => at(format!("must be positive, got {x}")),
            Some(_) => None,
            None => at(format!("expected a number, found a {}", e.value.type_name())),
        },
        Kind::Str => match e.value {
            Value::Str(_) => None,
            ref v => at(format!("expected a quoted string, found a {}", v.type_name())),
        },
        Kind::Choice(options) => match &e.value {
            Value::Str(s) if options.contains(&s.as_str()) => None,
            Value::Str(s) => at(format!("{s:?} is not one of {options:?}")),
            v => at(format!("expected one of {options:?}, found a {}", v.type_name())),
        },
        Kind::IntList { min } => match &e.value {
            Value::List(items) if items.is_empty() => at("list must not be empty".into()),
            Value::List(items) => items.iter().find_map(|v| match v {
                Value::Int(i) if *i < min => at(format!("entries must be >= {min}, got {i}")),
                Value::Int(_) => None,
                v => at(format!("expected integers, found a {}", v.type_name())),
            }),
            v => at(format!("expected a list, found a {}", v.type_name())),
        },
        Kind::FloatList { positive } => match &e.value {
            Value::List(items) if items.is_empty() => at("list must not be empty".into()),
            Value::List(items) => items.iter().find_map(|v| match float(v) {
                Some(x) if positive && x <= 0.0 => at(format!("entries must be positive, got {x}")),
                Some(_) => None,
                None => at(format!("expected numbers, found a {}", v.type_name())),
            }),
            v => at(format!("expected a list, found a {}", v.type_name())),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eig_tol: f64,
    pub max_iter: usize,
    pub fp_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Scheme,
    pub init: String,
    pub amplitude: f64,
    pub t_end: f64,
    /// `None` selects the CFL step at unit velocity.
    pub dt: Option<f64>,
    pub cadence: usize,
    /// Diagnostic samples between field checkpoints; 0 keeps only the final state.
    pub checkpoint_every: usize,
    pub advection: Advection,
    pub density_form: DensityForm,
    pub projection_tol: f64,
    pub max_projection_iter: usize,
}

/// Fully validated configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    pub grid: GridConfig,
    pub state: StateSpec,
    pub solver: SolverConfig,
    pub run: RunConfig,
    pub experiment: ExperimentConfig,
}

struct Reader<'a> {
    doc: &'a Document,
    issues: Vec<ConfigIssue>,
    /// State keys are optional (the state comes from a saved directory).
    lenient: bool,
}

impl Reader<'_> {
    fn float(&self, key: &str) -> Option<f64> {
        match self.doc.get(key)?.value {
            Value::Int(i) => Some(i as f64),
            Value::Float(x) => Some(x),
            _ => None,
        }
    }

    fn int(&self, key: &str) -> Option<i64> {
        match self.doc.get(key)?.value {
            Value::Int(i) => Some(i),
            _ => None,
        }
    }

    fn string(&self, key: &str) -> Option<String> {
        match &self.doc.get(key)?.value {
            Value::Str(s) => Some(s.clone()),
            _ => None,
        }
    }

    fn floats(&self, key: &str) -> Option<Vec<f64>> {
        match &self.doc.get(key)?.value {
            Value::List(items) => items
                .iter()
                .map(|v| match v {
                    Value::Int(i) => Some(*i as f64),
                    Value::Float(x) => Some(*x),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    }

    fn ints(&self, key: &str) -> Option<Vec<usize>> {
        match &self.doc.get(key)?.value {
            Value::List(items) => items
                .iter()
                .map(|v| match v {
                    Value::Int(i) if *i >= 0 => Some(*i as usize),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    }

    /// A required key; a missing one is reported against the section header position.
    fn need_float(&mut self, key: &str, why: &str) -> f64 {
        match self.float(key) {
            Some(x) => x,
            None => {
                if !self.lenient && !self.doc.contains_key(key) {
                    self.issues.push(issue(0, 0, format!("missing required key '{key}' ({why})")));
                }
                f64::NAN
            }
        }
    }
}

/// Parses and validates a configuration document that describes a steady state.
pub fn parse_config(text: &str) -> Result<Config> {
    parse(text, false)
}

/// Like [`parse_config`] for commands that load the state from disk: the profile
/// and viscosity keys become optional and the `state` member is a placeholder.
pub fn parse_settings(text: &str) -> Result<Config> {
    parse(text, true)
}

fn parse(text: &str, lenient: bool) -> Result<Config> {
    let (doc, mut issues) = scan(text);
    for (key, entry) in &doc {
        match SCHEMA.iter().find(|(k, _)| k == key) {
            None => issues.push(issue(entry.line, entry.column, format!("unknown key '{key}'"))),
            Some((_, kind)) => issues.extend(check_value(key, *kind, entry)),
        }
    }
    let mut r = Reader { doc: &doc, issues, lenient };

    let nx = r.int("grid.nx").unwrap_or(32) as usize;
    let grid = GridConfig {
        nx,
        ny: r.int("grid.ny").map(|v| v as usize).unwrap_or(nx),
        lx: r.float("grid.lx").unwrap_or(1.0),
        ly: r.float("grid.ly").unwrap_or(1.0),
    };

    let potential = match r.string("potential.kind").as_deref().unwrap_or("uniform_gravity") {
        "radial" => PotentialKind::Radial {
            center: (
                r.float("potential.center_x").unwrap_or(0.5 * grid.lx),
                r.float("potential.center_y").unwrap_or(0.5 * grid.ly),
            ),
            strength: r.need_float("potential.strength", "radial potential"),
        },
        "expression" => match r.string("potential.expression") {
            Some(e) => PotentialKind::UserExpression { expression: e },
            None => {
                if !doc.contains_key("potential.expression") {
                    r.issues.push(issue(0, 0, "missing required key 'potential.expression' (expression potential)"));
                }
                PotentialKind::UserExpression { expression: String::new() }
            }
        },
        _ => PotentialKind::UniformGravity {
            g: r.float("potential.g").unwrap_or(1.0),
        },
    };

    let profile = match r.string("profile.kind").as_deref() {
        Some("exponential") => DensityProfile::Exponential {
            rho_bar: r.need_float("profile.rho_bar", "exponential profile"),
            beta: r.need_float("profile.beta", "exponential profile"),
        },
        Some("linear") => DensityProfile::Linear {
            a: r.need_float("profile.a", "linear profile"),
            b: r.need_float("profile.b", "linear profile"),
        },
        Some("tanh") => DensityProfile::Tanh {
            mean: r.need_float("profile.mean", "tanh profile"),
            jump: r.need_float("profile.jump", "tanh profile"),
            t0: r.need_float("profile.t0", "tanh profile"),
            width: r.need_float("profile.width", "tanh profile"),
        },
        _ => {
            if !r.lenient && !doc.contains_key("profile.kind") {
                r.issues.push(issue(0, 0, "missing required key 'profile.kind'"));
            }
            DensityProfile::Linear { a: 1.0, b: 0.0 }
        }
    };
    let mu = r.need_float("physics.mu", "viscosity");
    let state = StateSpec {
        length_x: grid.lx,
        length_y: grid.ly,
        potential,
        profile,
        mu,
        sigma: r.float("physics.sigma").unwrap_or(0.1),
    };

    let solver = SolverConfig {
        eig_tol: r.float("solver.eig_tol").unwrap_or(1e-10),
        max_iter: r.int("solver.max_iter").unwrap_or(10_000) as usize,
        fp_tol: r.float("solver.fp_tol").unwrap_or(1e-8),
    };

    let advection = match r.string("run.advection").as_deref() {
        Some("centered2_with_limiter") => Advection::Centered2WithLimiter,
        _ => Advection::Upwind1,
    };
    let density_form = match r.string("run.density_form").as_deref() {
        Some("perturbation") => DensityForm::Perturbation,
        _ => DensityForm::Total,
    };
    let init = r.string("run.init").unwrap_or_else(|| "eigenmode".into());
    if init != "eigenmode" && !init.starts_with("file:") {
        let e = &doc["run.init"];
        r.issues.push(issue(
            e.line,
            e.value_column,
            format!("run.init: expected \"eigenmode\" or \"file:<path>\", got {init:?}"),
        ));
    }
    let run = RunConfig {
        mode: match r.string("run.mode").as_deref() {
            Some("nonlinear") => Scheme::Nonlinear,
            _ => Scheme::Linearized,
        },
        init,
        amplitude: r.float("run.amplitude").unwrap_or(1e-3),
        t_end: r.float("run.t_end").unwrap_or(10.0),
        dt: r.float("run.dt"),
        cadence: r.int("run.cadence").unwrap_or(1) as usize,
        checkpoint_every: r.int("run.checkpoint_every").unwrap_or(0) as usize,
        advection,
        density_form,
        projection_tol: r.float("run.projection_tol").unwrap_or(1e-10),
        max_projection_iter: r.int("run.max_projection_iter").unwrap_or(500) as usize,
    };
    if run.t_end < 0.0 {
        let e = &doc["run.t_end"];
        r.issues.push(issue(e.line, e.value_column, format!("run.t_end: must be >= 0, got {}", run.t_end)));
    }

    let defaults = ExperimentConfig::default();
    let fit_window = match r.floats("experiment.fit_window") {
        Some(w) if w.len() == 2 && w[0] >= 0.0 && w[1] > w[0] => (w[0], w[1]),
        Some(_) => {
            let e = &doc["experiment.fit_window"];
            r.issues.push(issue(
                e.line,
                e.value_column,
                "experiment.fit_window: expected [lo, hi] with 0 <= lo < hi",
            ));
            defaults.fit_window
        }
        None => defaults.fit_window,
    };
    let experiment = ExperimentConfig {
        state: state.clone(),
        resolutions: r.ints("experiment.resolutions").unwrap_or(defaults.resolutions),
        deltas: r.floats("experiment.deltas").unwrap_or(defaults.deltas),
        k_gauge: r.float("experiment.k").unwrap_or(defaults.k_gauge),
        epsilon: r.float("experiment.epsilon"),
        fit_window,
        seed: r.int("seed").unwrap_or(0) as u64,
        advection,
        density_form,
        escape_pad: r.float("experiment.escape_pad").unwrap_or(defaults.escape_pad),
        decay_horizon: r.float("experiment.decay_horizon"),
        functional_tol: r.float("experiment.functional_tol").unwrap_or(defaults.functional_tol),
        cadence: r.int("experiment.cadence").unwrap_or(1) as usize,
        threads: r.int("threads").unwrap_or(1) as usize,
    };

    if !r.issues.is_empty() {
        let mut issues = r.issues;
        issues.sort_by_key(|i| (i.line, i.column));
        return Err(Error::Config(issues));
    }
    Ok(Config {
        seed: experiment.seed,
        threads: experiment.threads,
        grid,
        state,
        solver,
        run,
        experiment,
    })
}

impl Config {
    /// JSON echo of the effective configuration.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[profile]\nkind = \"linear\"\na = 1\nb = 0.5\n[physics]\nmu = 0.01\n";

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match parse_config(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.grid.nx, 32);
        assert_eq!(c.grid.ny, 32);
        assert_eq!(c.state.profile, DensityProfile::Linear { a: 1.0, b: 0.5 });
        assert_eq!(c.run.mode, Scheme::Linearized);
        assert_eq!(c.experiment.deltas, vec![1e-3, 1e-4, 1e-5]);
        let echo = c.echo();
        assert_eq!(echo["grid"]["nx"], 32);
        assert_eq!(echo["solver"]["fp_tol"], 1e-8);
    }

    #[test]
    fn negative_nx_names_the_key() {
        let v = issues(&format!("[grid]\nnx = -4\n{MINIMAL}"));
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].line, v[0].column), (2, 6));
        assert!(v[0].message.contains("grid.nx"));
    }

    #[test]
    fn duplicate_key_lists_both_lines() {
        let v = issues(&format!("{MINIMAL}mu = 0.02\n"));
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("lines 6 and 7"), "{}", v[0].message);
    }

    #[test]
    fn syntax_and_schema_errors_together() {
        let v = issues(&format!("[grid]\nnx = -4\nnx = 5\nny = [1,\n{MINIMAL}"));
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v[0].message.contains("grid.nx: must be >= 4"));
        assert!(v[1].message.contains("lines 2 and 3"));
        assert!(v[2].message.contains("unterminated list"));
    }

    #[test]
    fn all_errors_are_reported() {
        let text = "bogus = 1\n[grid]\nnx = \"big\"\n[profile]\nkind = \"cubic\"\n[physics]\nsigma = 0\n";
        let v = issues(text);
        let msgs: Vec<&str> = v.iter().map(|i| i.message.as_str()).collect();
        assert!(msgs.iter().any(|m| m.contains("unknown key 'bogus'")));
        assert!(msgs.iter().any(|m| m.contains("grid.nx: expected an integer")));
        assert!(msgs.iter().any(|m| m.contains("\"cubic\" is not one of")));
        assert!(msgs.iter().any(|m| m.contains("physics.sigma: must be positive")));
        assert!(msgs.iter().any(|m| m.contains("missing required key 'physics.mu'")));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let v = match parse_document("a = 1\n[grid\nb = \"open\nc 3\n") {
            Err(v) => v,
            Ok(_) => panic!(),
        };
        assert_eq!(v.iter().map(|i| i.line).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(v[1].column, 5);
    }

    #[test]
    fn lists_comments_and_strings() {
        let doc = parse_document("xs = [1, 2.5, -3e-2] # trailing\ns = \"a # not a comment\"\n").unwrap();
        assert_eq!(
            doc["xs"].value,
            Value::List(vec![Value::Int(1), Value::Float(2.5), Value::Float(-3e-2)])
        );
        assert_eq!(doc["s"].value, Value::Str("a # not a comment".into()));
    }

    #[test]
    fn settings_do_not_need_a_state() {
        let c = parse_settings("[run]\nmode = \"nonlinear\"\nt_end = 2\n").unwrap();
        assert_eq!(c.run.mode, Scheme::Nonlinear);
        assert_eq!(c.run.t_end, 2.0);
        assert!(parse_settings("").is_ok());
        assert!(parse_config("").is_err());
    }

    #[test]
    fn profile_parameters_are_required_per_kind() {
        let v = issues("[profile]\nkind = \"tanh\"\nmean = 1\n[physics]\nmu = 0.1\n");
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|i| i.message.contains("tanh profile")));
    }
}
