//! Plain-text sectioned format for environments, oracle solutions and
//! experiment configs.
//!
//! A document is a list of `[section]` headers, each followed by either
//! `key = value` lines or whitespace-separated rows of numbers. `#` starts a
//! comment; blank lines are ignored. Environments use these sections:
//!
//! ```text
//! [meta]
//! kind = tabular          # or: linear
//! S = 2
//! A = 2
//! d = 4                   # linear only
//! initial_state = 0
//!
//! [transition]            # tabular: one row of S probabilities per (s, a), s-major
//! [reward]                # tabular: one row of A rewards per state
//! [features]              # linear: one row of d entries per (s, a), s-major
//! [measures]              # linear: one row of S entries per coordinate j
//! [theta]                 # linear: one row of d entries
//! ```
//!
//! Floats are written with 17 significant digits so every value survives a
//! write/read cycle bit for bit.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::mdp::{LinearMdpEnv, TabularMdp};
use crate::oracle::OracleSolution;

/// 17 significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, Default)]
pub struct Section {
    pub name: String,
    pub header_line: usize,
    lines: Vec<(usize, String)>,
}

impl Section {
    /// `key = value` pairs in file order.
    pub fn entries(&self) -> Result<Vec<(usize, &str, &str)>> {
        self.lines
            .iter()
            .map(|(no, line)| {
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: *no,
                    msg: format!("expected `key = value` in [{}]", self.name),
                })?;
                Ok((*no, k.trim(), v.trim()))
            })
            .collect()
    }

    pub fn get(&self, key: &str) -> Result<Option<(usize, &str)>> {
        Ok(self
            .entries()?
            .into_iter()
            .rev()
            .find(|(_, k, _)| *k == key)
            .map(|(no, _, v)| (no, v)))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key)? {
            None => Ok(None),
            Some((no, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: no,
                msg: format!("cannot parse `{key} = {v}`"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse_value(key)?.ok_or_else(|| Error::Parse {
            line: self.header_line,
            msg: format!("[{}] is missing `{key}`", self.name),
        })
    }

    pub fn rows(&self) -> Result<Vec<Vec<f64>>> {
        self.lines
            .iter()
            .map(|(no, line)| {
                line.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|_| Error::Parse {
                            line: *no,
                            msg: format!("bad number `{tok}` in [{}]", self.name),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push(Section {
                    name: name.trim().to_string(),
                    header_line: no,
                    lines: Vec::new(),
                });
                continue;
            }
            let section = sections.last_mut().ok_or_else(|| Error::Parse {
                line: no,
                msg: "content before the first [section]".into(),
            })?;
            section.lines.push((no, line.to_string()));
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing section [{name}]"),
        })
    }
}

/// Incremental writer for the same dialect.
#[derive(Default)]
pub struct Writer {
    out: String,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        let _ = writeln!(self.out, "[{name}]");
        self
    }

    pub fn entry(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn row(&mut self, values: &[f64]) -> &mut Self {
        let line: Vec<String> = values.iter().map(|&x| format_float(x)).collect();
        self.out.push_str(&line.join(" "));
        self.out.push('\n');
        self
    }

    pub fn rows<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) -> &mut Self {
        for r in rows {
            self.row(r);
        }
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub fn write_tabular(mdp: &TabularMdp) -> String {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut w = Writer::new();
    w.section("meta")
        .entry("kind", "tabular")
        .entry("S", ns)
        .entry("A", na)
        .entry("initial_state", mdp.initial_state());
    w.section("transition").rows(mdp.transitions().chunks(ns));
    w.section("reward").rows(mdp.rewards().chunks(na));
    w.finish()
}

pub fn write_linear(env: &LinearMdpEnv) -> String {
    let (d, ns) = (env.dim(), env.num_states());
    let mut w = Writer::new();
    w.section("meta")
        .entry("kind", "linear")
        .entry("S", ns)
        .entry("A", env.num_actions())
        .entry("d", d)
        .entry("initial_state", env.initial_state());
    w.section("features").rows(env.features().chunks(d));
    w.section("measures").rows(env.measures().chunks(ns));
    w.section("theta").row(env.theta());
    w.finish()
}

pub fn write_env(env: &Env) -> String {
    match env {
        Env::Tabular(mdp) => write_tabular(mdp),
        Env::Linear(env) => write_linear(env),
    }
}

fn flat_rows(doc: &Document, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let section = doc.require_section(name)?;
    let data = section.rows()?;
    if data.len() != rows || data.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse {
            line: section.header_line,
            msg: format!("[{name}] must have {rows} rows of {cols} numbers"),
        });
    }
    Ok(data.concat())
}

pub fn read_env(text: &str) -> Result<Env> {
    let doc = Document::parse(text)?;
    let meta = doc.require_section("meta")?;
    let kind: String = meta.require("kind")?;
    let ns: usize = meta.require("S")?;
    let na: usize = meta.require("A")?;
    let initial: usize = meta.parse_value("initial_state")?.unwrap_or(0);
    match kind.as_str() {
        "tabular" => {
            let transition = flat_rows(&doc, "transition", ns * na, ns)?;
            let reward = flat_rows(&doc, "reward", ns, na)?;
            Ok(Env::Tabular(TabularMdp::new(ns, na, transition, reward, initial)?))
        }
        "linear" => {
            let d: usize = meta.require("d")?;
            let features = flat_rows(&doc, "features", ns * na, d)?;
            let measures = flat_rows(&doc, "measures", d, ns)?;
            let theta = flat_rows(&doc, "theta", 1, d)?;
            Ok(Env::Linear(LinearMdpEnv::new(
                d, ns, na, features, measures, theta, initial,
            )?))
        }
        other => Err(Error::Parse {
            line: meta.header_line,
            msg: format!("unknown environment kind `{other}`"),
        }),
    }
}

pub fn write_oracle(sol: &OracleSolution) -> String {
    let ns = sol.v_star.len();
    let na = sol.q_star.len().checked_div(ns).unwrap_or(0);
    let mut w = Writer::new();
    w.section("oracle")
        .entry("S", ns)
        .entry("A", na)
        .entry("j_star", format_float(sol.j_star))
        .entry("span_v_star", format_float(sol.span_v_star))
        .entry("gamma", format_float(sol.gamma_used));
    w.section("v_star").row(&sol.v_star);
    w.section("q_star").rows(sol.q_star.chunks(na.max(1)));
    w.section("discounted_v_star").row(&sol.discounted_v_star);
    w.section("discounted_q_star")
        .rows(sol.discounted_q_star.chunks(na.max(1)));
    w.finish()
}

pub fn read_oracle(text: &str) -> Result<OracleSolution> {
    let doc = Document::parse(text)?;
    let head = doc.require_section("oracle")?;
    let ns: usize = head.require("S")?;
    let na: usize = head.require("A")?;
    Ok(OracleSolution {
        j_star: head.require("j_star")?,
        span_v_star: head.require("span_v_star")?,
        gamma_used: head.require("gamma")?,
        v_star: flat_rows(&doc, "v_star", 1, ns)?,
        q_star: flat_rows(&doc, "q_star", ns, na)?,
        discounted_v_star: flat_rows(&doc, "discounted_v_star", 1, ns)?,
        discounted_q_star: flat_rows(&doc, "discounted_q_star", ns, na)?,
    })
}
