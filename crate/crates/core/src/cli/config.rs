//! The run configuration language: top-level settings followed by one block
//! per switch, each holding constraint blocks that list features.
//!
//! ```text
//! objective minimize
//! target 0.98
//! step 1s
//! trace builtin 60s
//!
//! switch1 {
//!     src(42.0.0.0/8) { burst_size burst_duration }
//!     src(13.37.0.0/16) & proto(TCP) { packet_size@0.95 }
//!     * { inter_arrival_time }
//! }
//! ```
//!
//! Newlines are not significant and `#` starts a comment. A feature may carry
//! its own target accuracy after `@`; otherwise `target` applies.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::controller::{ControllerConfig, MonitoringTask, Objective};
use crate::dataplane::{
    parse_proto, proto_name, Constraint, FeatureKind, FieldMatch, Ipv4Prefix, PortRange, DEFAULT_FLOWLET_TIMEOUT_NS,
};
use crate::TaskId;

pub const DEFAULT_TARGET: f64 = 0.95;
pub const DEFAULT_STEP_NS: u64 = 1_000_000_000;
pub const DEFAULT_BUILTIN_DURATION_NS: u64 = 60_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    /// The built-in two-class synthetic trace.
    Builtin { duration_ns: u64 },
    /// A packet trace in the CSV schema of the data plane.
    Csv(PathBuf),
    /// A TOML trace spec to synthesize from.
    Spec(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tasks: Vec<MonitoringTask>,
    pub objective: Objective,
    pub step_ns: u64,
    pub subsamples: usize,
    pub flowlet_timeout_ns: u64,
    pub trace: TraceSource,
    pub seed: u64,
    pub steps: Option<u64>,
    pub min_rate: u64,
    pub max_rate: u64,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            objective: self.objective,
            subsamples: self.subsamples,
            min_rate: self.min_rate,
            max_rate: self.max_rate,
            seed: self.seed,
            threads: self.threads,
            ..ControllerConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {col}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Amp,
    At,
    Star,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "._/-:+".contains(c)
}

fn lex(text: &str) -> Result<(Vec<Token>, (usize, usize)), ConfigError> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1, 1);
    let err = |line, col, message: String| ConfigError { line, col, message };
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        let single = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '&' => Some(Tok::Amp),
            '@' => Some(Tok::At),
            '*' => Some(Tok::Star),
            _ => None,
        };
        if let Some(tok) = single {
            bump(&mut chars);
            tokens.push(Token { tok, line: tl, col: tc });
        } else if c.is_whitespace() {
            bump(&mut chars);
        } else if c == '#' {
            while chars.peek().is_some_and(|&c| c != '\n') {
                bump(&mut chars);
            }
        } else if c == '"' {
            bump(&mut chars);
            let mut s = String::new();
            loop {
                match bump(&mut chars) {
                    Some('"') => break,
                    Some('\\') => match bump(&mut chars) {
                        Some(e @ ('"' | '\\')) => s.push(e),
                        Some('n') => s.push('\n'),
                        _ => return Err(err(tl, tc, "bad escape in string".into())),
                    },
                    Some(c) => s.push(c),
                    None => return Err(err(tl, tc, "unterminated string".into())),
                }
            }
            tokens.push(Token {
                tok: Tok::Str(s),
                line: tl,
                col: tc,
            });
        } else if is_word_char(c) {
            let mut w = String::new();
            while chars.peek().is_some_and(|&c| is_word_char(c)) {
                w.push(bump(&mut chars).expect("peeked"));
            }
            tokens.push(Token {
                tok: Tok::Word(w),
                line: tl,
                col: tc,
            });
        } else {
            return Err(err(tl, tc, format!("unexpected character `{c}`")));
        }
    }
    Ok((tokens, (line, col)))
}

/// Parses a duration such as `500ms`, `1.5s`, `250us` or `40ns` into nanoseconds.
pub fn parse_duration(s: &str) -> Option<u64> {
    let split = s.find(|c: char| c.is_ascii_alphabetic())?;
    let (num, unit) = s.split_at(split);
    let scale = match unit {
        "ns" => 1.0,
        "us" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        "m" | "min" => 60e9,
        _ => return None,
    };
    let v: f64 = num.parse().ok()?;
    let ns = (v * scale).round();
    (v >= 0.0 && ns.is_finite() && ns < u64::MAX as f64).then_some(ns as u64)
}

/// The largest unit that represents `ns` exactly.
pub fn render_duration(ns: u64) -> String {
    for (unit, scale) in [("s", 1_000_000_000), ("ms", 1_000_000), ("us", 1_000)] {
        if ns != 0 && ns.is_multiple_of(scale) {
            return format!("{}{unit}", ns / scale);
        }
    }
    format!("{ns}ns")
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map_or(self.end, |t| (t.line, t.col))
    }

    fn fail<T>(&self, at: (usize, usize), message: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError {
            line: at.0,
            col: at.1,
            message: message.into(),
        })
    }

    fn next(&mut self, what: &str) -> Result<Token, ConfigError> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => self.fail(self.end, format!("expected {what}, found end of input")),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ConfigError> {
        let t = self.next(what)?;
        if t.tok == tok {
            Ok(())
        } else {
            self.fail((t.line, t.col), format!("expected {what}"))
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, (usize, usize)), ConfigError> {
        let t = self.next(what)?;
        match t.tok {
            Tok::Word(w) => Ok((w, (t.line, t.col))),
            _ => self.fail((t.line, t.col), format!("expected {what}")),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, ConfigError> {
        let t = self.next(what)?;
        match t.tok {
            Tok::Str(s) => Ok(s),
            _ => self.fail((t.line, t.col), format!("expected {what} as a quoted string")),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ConfigError> {
        let (w, at) = self.word(what)?;
        w.parse().or_else(|_| self.fail(at, format!("expected {what}, found `{w}`")))
    }

    fn duration(&mut self, what: &str) -> Result<u64, ConfigError> {
        let (w, at) = self.word(what)?;
        parse_duration(&w).map_or_else(|| self.fail(at, format!("expected {what} such as `500ms`, found `{w}`")), Ok)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek().is_some_and(|t| t.tok == *tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn field(&mut self) -> Result<FieldMatch, ConfigError> {
        let (name, _) = self.word("a constraint such as `src(10.0.0.0/8)`")?;
        self.expect(Tok::LParen, "`(`")?;
        let (arg, at) = self.word("a constraint argument")?;
        self.expect(Tok::RParen, "`)`")?;
        let prefix = |p: &Parser| arg.parse::<Ipv4Prefix>().or_else(|e| p.fail(at, format!("malformed prefix: {e}")));
        let ports = |p: &Parser| {
            let range = match arg.split_once('-') {
                Some((lo, hi)) => lo.parse().ok().zip(hi.parse().ok()),
                None => arg.parse().ok().map(|v| (v, v)),
            };
            match range {
                Some((lo, hi)) if lo <= hi => Ok(PortRange { lo, hi }),
                _ => p.fail(at, format!("malformed port range `{arg}`")),
            }
        };
        Ok(match name.as_str() {
            "src" => FieldMatch::Src(prefix(self)?),
            "dst" => FieldMatch::Dst(prefix(self)?),
            "proto" => FieldMatch::Proto(parse_proto(&arg).map_or_else(|| self.fail(at, format!("unknown protocol `{arg}`")), Ok)?),
            "sport" => FieldMatch::Sport(ports(self)?),
            "dport" => FieldMatch::Dport(ports(self)?),
            _ => return self.fail(at, format!("unknown constraint field `{name}`")),
        })
    }

    fn constraint(&mut self) -> Result<Constraint, ConfigError> {
        if self.eat(&Tok::Star) {
            return Ok(Constraint::default());
        }
        let mut fields = vec![self.field()?];
        while self.eat(&Tok::Amp) {
            fields.push(self.field()?);
        }
        Ok(Constraint::new(fields))
    }
}

struct Pending {
    location: String,
    feature: FeatureKind,
    constraint: Constraint,
    target: Option<(f64, (usize, usize))>,
}

#[derive(Default)]
struct Settings {
    objective: Option<Objective>,
    target: Option<f64>,
    step_ns: Option<u64>,
    subsamples: Option<usize>,
    flowlet_timeout_ns: Option<u64>,
    trace: Option<TraceSource>,
    seed: Option<u64>,
    steps: Option<u64>,
    min_rate: Option<u64>,
    max_rate: Option<u64>,
    threads: Option<usize>,
    output: Option<PathBuf>,
}

fn set<T>(slot: &mut Option<T>, value: T, key: &str, at: (usize, usize)) -> Result<(), ConfigError> {
    if slot.replace(value).is_some() {
        return Err(ConfigError {
            line: at.0,
            col: at.1,
            message: format!("setting `{key}` given twice"),
        });
    }
    Ok(())
}

fn target_value(p: &Parser, v: f64, at: (usize, usize)) -> Result<f64, ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        p.fail(at, format!("target accuracy {v} must lie in (0, 1)"))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let (tokens, end) = lex(text)?;
    let mut p = Parser { tokens, pos: 0, end };
    let mut s = Settings::default();
    let mut pending: Vec<Pending> = Vec::new();
    let mut objective_at = (1, 1);

    while p.peek().is_some() {
        let (key, at) = p.word("a setting or a switch name")?;
        if p.eat(&Tok::LBrace) {
            while !p.eat(&Tok::RBrace) {
                let block_at = p.here();
                let constraint = p.constraint()?;
                p.expect(Tok::LBrace, "`{` opening the feature list")?;
                let before = pending.len();
                while !p.eat(&Tok::RBrace) {
                    let (name, fat) = p.word("a feature name")?;
                    let feature = FeatureKind::parse(&name).or_else(|e| p.fail(fat, e.to_string()))?;
                    let target = if p.eat(&Tok::At) {
                        let tat = p.here();
                        let v = p.number("a target accuracy")?;
                        Some((target_value(&p, v, tat)?, tat))
                    } else {
                        None
                    };
                    pending.push(Pending {
                        location: key.clone(),
                        feature,
                        constraint: constraint.clone(),
                        target,
                    });
                }
                if pending.len() == before {
                    return p.fail(block_at, "constraint block lists no features");
                }
            }
            continue;
        }
        match key.as_str() {
            "objective" => {
                objective_at = at;
                let (kind, kat) = p.word("`minimize` or `maximize`")?;
                let objective = match kind.as_str() {
                    "minimize" => Objective::MinimizeResources,
                    "maximize" => {
                        let (w, wat) = p.word("`budget`")?;
                        if w != "budget" {
                            return p.fail(wat, "expected `budget` after `maximize`");
                        }
                        Objective::MaximizeAccuracy {
                            budget: p.number("a per-step sample budget")?,
                        }
                    }
                    _ => return p.fail(kat, format!("unknown objective `{kind}`")),
                };
                set(&mut s.objective, objective, &key, at)?;
            }
            "target" => {
                let tat = p.here();
                let v = p.number("a target accuracy")?;
                let v = target_value(&p, v, tat)?;
                set(&mut s.target, v, &key, at)?;
            }
            "step" => {
                let v = p.duration("a step length")?;
                if v == 0 {
                    return p.fail(at, "step length must be positive");
                }
                set(&mut s.step_ns, v, &key, at)?;
            }
            "flowlet_timeout" => {
                let v = p.duration("a flowlet timeout")?;
                set(&mut s.flowlet_timeout_ns, v, &key, at)?;
            }
            "subsamples" => {
                let v = p.number("a subsample count")?;
                set(&mut s.subsamples, v, &key, at)?;
            }
            "seed" => {
                let v = p.number("a seed")?;
                set(&mut s.seed, v, &key, at)?;
            }
            "steps" => {
                let v = p.number("a step count")?;
                set(&mut s.steps, v, &key, at)?;
            }
            "min_rate" => {
                let v = p.number("a rate")?;
                set(&mut s.min_rate, v, &key, at)?;
            }
            "max_rate" => {
                let v = p.number("a rate")?;
                set(&mut s.max_rate, v, &key, at)?;
            }
            "threads" => {
                let v = p.number("a thread count")?;
                set(&mut s.threads, v, &key, at)?;
            }
            "output" => {
                let v = p.string("an output directory")?;
                set(&mut s.output, PathBuf::from(v), &key, at)?;
            }
            "trace" => {
                let (kind, kat) = p.word("`builtin`, `csv` or `spec`")?;
                let source = match kind.as_str() {
                    "builtin" => TraceSource::Builtin {
                        duration_ns: p.duration("a trace duration")?,
                    },
                    "csv" => TraceSource::Csv(p.string("a trace path")?.into()),
                    "spec" => TraceSource::Spec(p.string("a trace spec path")?.into()),
                    _ => return p.fail(kat, format!("unknown trace source `{kind}`")),
                };
                set(&mut s.trace, source, &key, at)?;
            }
            _ => return p.fail(at, format!("unknown setting `{key}`")),
        }
    }

    if pending.is_empty() {
        return p.fail(end, "no tasks");
    }
    let objective = s.objective.unwrap_or(Objective::MinimizeResources);
    let minimize = objective == Objective::MinimizeResources;
    let mut tasks = Vec::with_capacity(pending.len());
    for (i, t) in pending.into_iter().enumerate() {
        let target_accuracy = match (minimize, t.target) {
            (true, Some((v, _))) => Some(v),
            (true, None) => Some(s.target.unwrap_or(DEFAULT_TARGET)),
            (false, Some((_, at))) => return p.fail(at, "per-task targets only apply to `objective minimize`"),
            (false, None) => None,
        };
        tasks.push(MonitoringTask {
            id: TaskId(i as u32 + 1),
            location: t.location,
            feature: t.feature,
            constraint: t.constraint,
            target_accuracy,
        });
    }
    let config = RunConfig {
        objective,
        step_ns: s.step_ns.unwrap_or(DEFAULT_STEP_NS),
        subsamples: s.subsamples.unwrap_or(ControllerConfig::default().subsamples),
        flowlet_timeout_ns: s.flowlet_timeout_ns.unwrap_or(DEFAULT_FLOWLET_TIMEOUT_NS),
        trace: s.trace.unwrap_or(TraceSource::Builtin {
            duration_ns: DEFAULT_BUILTIN_DURATION_NS,
        }),
        seed: s.seed.unwrap_or(0),
        steps: s.steps,
        min_rate: s.min_rate.unwrap_or(ControllerConfig::default().min_rate),
        max_rate: s.max_rate.unwrap_or(ControllerConfig::default().max_rate),
        threads: s.threads,
        output: s.output,
        tasks,
    };
    config
        .controller_config()
        .validate(config.tasks.len())
        .or_else(|e| p.fail(objective_at, e.to_string()))?;
    Ok(config)
}

fn quote(s: &str) -> String {
    let mut out = String::from('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn render_ports(r: PortRange) -> String {
    if r.lo == r.hi {
        r.lo.to_string()
    } else {
        format!("{}-{}", r.lo, r.hi)
    }
}

pub fn render_constraint(c: &Constraint) -> String {
    if c.fields.is_empty() {
        return "*".into();
    }
    c.fields
        .iter()
        .map(|f| match *f {
            FieldMatch::Src(p) => format!("src({p})"),
            FieldMatch::Dst(p) => format!("dst({p})"),
            FieldMatch::Proto(p) => match proto_name(p) {
                Some(n) => format!("proto({n})"),
                None => format!("proto({p})"),
            },
            FieldMatch::Sport(r) => format!("sport({})", render_ports(r)),
            FieldMatch::Dport(r) => format!("dport({})", render_ports(r)),
        })
        .collect::<Vec<_>>()
        .join(" & ")
}

/// Renders `config` so that [`parse_config`] gives it back, provided task ids
/// run from 1 in order.
pub fn render_config(config: &RunConfig) -> String {
    let mut out = String::new();
    match config.objective {
        Objective::MinimizeResources => out.push_str("objective minimize\n"),
        Objective::MaximizeAccuracy { budget } => writeln!(out, "objective maximize budget {budget}").unwrap(),
    }
    writeln!(out, "step {}", render_duration(config.step_ns)).unwrap();
    writeln!(out, "subsamples {}", config.subsamples).unwrap();
    writeln!(out, "flowlet_timeout {}", render_duration(config.flowlet_timeout_ns)).unwrap();
    writeln!(out, "seed {}", config.seed).unwrap();
    if let Some(steps) = config.steps {
        writeln!(out, "steps {steps}").unwrap();
    }
    writeln!(out, "min_rate {}", config.min_rate).unwrap();
    writeln!(out, "max_rate {}", config.max_rate).unwrap();
    if let Some(threads) = config.threads {
        writeln!(out, "threads {threads}").unwrap();
    }
    match &config.trace {
        TraceSource::Builtin { duration_ns } => writeln!(out, "trace builtin {}", render_duration(*duration_ns)),
        TraceSource::Csv(p) => writeln!(out, "trace csv {}", quote(&p.to_string_lossy())),
        TraceSource::Spec(p) => writeln!(out, "trace spec {}", quote(&p.to_string_lossy())),
    }
    .unwrap();
    if let Some(output) = &config.output {
        writeln!(out, "output {}", quote(&output.to_string_lossy())).unwrap();
    }

    let mut i = 0;
    let tasks = &config.tasks;
    while i < tasks.len() {
        let location = &tasks[i].location;
        writeln!(out, "\n{location} {{").unwrap();
        while i < tasks.len() && tasks[i].location == *location {
            let constraint = &tasks[i].constraint;
            write!(out, "    {} {{", render_constraint(constraint)).unwrap();
            while i < tasks.len() && tasks[i].location == *location && tasks[i].constraint == *constraint {
                write!(out, " {}", tasks[i].feature.name()).unwrap();
                if let Some(t) = tasks[i].target_accuracy {
                    write!(out, "@{t}").unwrap();
                }
                i += 1;
            }
            out.push_str(" }\n");
        }
        out.push_str("}\n");
    }
    out
}
