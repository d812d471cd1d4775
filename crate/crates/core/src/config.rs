//! Experiment configuration: a line-oriented `key = value` format with `[section]` headers.
//!
//! ```text
//! # comment
//! [operator]
//! preset = custom          # heat | langevin | kinetic | kinetic_<n> | custom
//! n = 2                    # space dimension for heat, block size for kinetic
//! B = 0 0; 1 0             # rows separated by ';' (custom only)
//! m0 = 1
//! lambda = 2
//! q = 5
//!
//! [coefficients]
//! a11 = 1 + 0.5*sin(x1)    # a_ij, i, j <= m0
//! b1 = x1                  # b_i, i <= m0
//! a1 = 0                   # a_i, i <= m0
//! c = -0.5*abs(sin(3*x1))
//!
//! [domain]
//! lo = -1, -1, -1          # x1..xN, t
//! hi = 1, 1, 1
//! resolutions = 16, 24, 32
//! rho = 0.5
//! r = 1
//!
//! [experiment]
//! run = structure, kernel, moser
//! p = 1, -1
//! seed = 42
//! ```
//!
//! Every problem found is reported with its line and column; parsing never stops at the first.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::operator::{CoefficientField, OperatorSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Structure,
    Kernel,
    Potentials,
    Sobolev,
    Caccioppoli,
    Moser,
    MoserOneside,
    Representation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Structure,
        ExperimentKind::Kernel,
        ExperimentKind::Potentials,
        ExperimentKind::Sobolev,
        ExperimentKind::Caccioppoli,
        ExperimentKind::Moser,
        ExperimentKind::MoserOneside,
        ExperimentKind::Representation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Structure => "structure",
            ExperimentKind::Kernel => "kernel",
            ExperimentKind::Potentials => "potentials",
            ExperimentKind::Sobolev => "sobolev",
            ExperimentKind::Caccioppoli => "caccioppoli",
            ExperimentKind::Moser => "moser",
            ExperimentKind::MoserOneside => "moser_oneside",
            ExperimentKind::Representation => "representation",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum Preset {
    Heat(usize),
    Langevin,
    Kinetic(usize),
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub n: usize,
    pub m0: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub lambda: f64,
    pub q: f64,
    /// Coefficient name (`a11`, `a1`, `b1`, `c`) to source expression.
    pub coefficients: BTreeMap<String, String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolutions: Vec<usize>,
    pub rho: f64,
    pub r: f64,
    pub p: Vec<f64>,
    pub seed: u64,
    pub experiments: Vec<ExperimentKind>,
}

impl ExperimentConfig {
    /// Defaults for a preset operator; the domain is `[-1, 1]^{N+1}`.
    pub fn for_operator(preset: Preset, op: &OperatorSpec) -> Self {
        let n = op.n;
        ExperimentConfig {
            preset,
            n,
            m0: op.m0,
            b: (0..n).map(|i| (0..n).map(|j| op.b[(i, j)]).collect()).collect(),
            lambda: op.lambda,
            q: op.q,
            coefficients: BTreeMap::new(),
            lo: vec![-1.0; n + 1],
            hi: vec![1.0; n + 1],
            resolutions: vec![16, 24, 32],
            rho: 0.5,
            r: 1.0,
            p: vec![1.0],
            seed: 42,
            experiments: vec![ExperimentKind::Structure],
        }
    }

    pub fn langevin() -> Self {
        Self::for_operator(Preset::Langevin, &OperatorSpec::langevin())
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.b[i][j])
    }

    /// Builds the operator, attaching the configured coefficient expressions.
    pub fn operator(&self) -> Result<OperatorSpec> {
        let mut op = OperatorSpec::principal(self.b_matrix(), self.m0, self.q)?;
        op.lambda = self.lambda;
        for (name, src) in &self.coefficients {
            let field = CoefficientField::parse(self.n, src)?;
            match coefficient_slot(name, self.m0) {
                Ok(Slot::Diffusion(i, j)) => {
                    op.diffusion[i][j] = field.clone();
                    op.diffusion[j][i] = field;
                }
                Ok(Slot::DriftA(i)) => op.drift_a[i] = field,
                Ok(Slot::DriftB(i)) => op.drift_b[i] = field,
                Ok(Slot::Zero) => op.zero_order = field,
                Err(msg) => return Err(Error::Domain(msg)),
            }
        }
        Ok(op)
    }
}

enum Slot {
    Diffusion(usize, usize),
    DriftA(usize),
    DriftB(usize),
    Zero,
}

fn coefficient_slot(name: &str, m0: usize) -> std::result::Result<Slot, String> {
    let index = |s: &str| -> Option<usize> { s.parse::<usize>().ok().filter(|&i| i >= 1 && i <= m0).map(|i| i - 1) };
    if name == "c" {
        return Ok(Slot::Zero);
    }
    let bad = || format!("unknown coefficient '{name}' (expected a<i><j>, a<i>, b<i> with indices 1..={m0}, or c)");
    if let Some(rest) = name.strip_prefix('a') {
        if rest.len() == 2 && m0 < 10 {
            let (i, j) = (index(&rest[..1]), index(&rest[1..]));
            return match (i, j) {
                (Some(i), Some(j)) => Ok(Slot::Diffusion(i, j)),
                _ => Err(bad()),
            };
        }
        return index(rest).map(Slot::DriftA).ok_or_else(bad);
    }
    if let Some(rest) = name.strip_prefix('b') {
        return index(rest).map(Slot::DriftB).ok_or_else(bad);
    }
    Err(bad())
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    key_col: usize,
    val_col: usize,
}

struct Collector {
    errors: Vec<ConfigError>,
}

impl Collector {
    fn push(&mut self, line: usize, col: usize, msg: impl Into<String>) {
        self.errors.push(ConfigError { line, col, msg: msg.into() });
    }
}

fn split_entries(text: &str, errs: &mut Collector) -> Vec<Entry> {
    const SECTIONS: [&str; 4] = ["operator", "coefficients", "domain", "experiment"];
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len() + 1;
        if let Some(rest) = trimmed.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if SECTIONS.contains(&name.trim()) => section = Some(name.trim().to_string()),
                Some(name) => {
                    errs.push(line, indent, format!("unknown section [{}]", name.trim()));
                    section = Some(String::new());
                }
                None => errs.push(line, indent, "unterminated section header"),
            }
            continue;
        }
        let Some(eq) = content.find('=') else {
            errs.push(line, indent, "expected 'key = value'");
            continue;
        };
        let key = content[..eq].trim();
        let value_raw = &content[eq + 1..];
        let value = value_raw.trim();
        let val_col = eq + 2 + (value_raw.len() - value_raw.trim_start().len());
        match &section {
            None => errs.push(line, indent, format!("key '{key}' outside any section")),
            Some(s) if s.is_empty() => {}
            Some(s) => out.push(Entry {
                section: s.clone(),
                key: key.to_string(),
                value: value.to_string(),
                line,
                key_col: indent,
                val_col,
            }),
        }
    }
    out
}

fn parse_list<T: std::str::FromStr>(e: &Entry, errs: &mut Collector, what: &str) -> Option<Vec<T>> {
    let mut out = Vec::new();
    let mut ok = true;
    let mut offset = 0;
    for part in e.value.split(',') {
        let lead = part.len() - part.trim_start().len();
        match part.trim().parse::<T>() {
            Ok(v) => out.push(v),
            Err(_) => {
                errs.push(e.line, e.val_col + offset + lead, format!("'{}' is not {what}", part.trim()));
                ok = false;
            }
        }
        offset += part.len() + 1;
    }
    ok.then_some(out)
}

fn parse_one<T: std::str::FromStr>(e: &Entry, errs: &mut Collector, what: &str) -> Option<T> {
    match e.value.parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            errs.push(e.line, e.val_col, format!("'{}' is not {what}", e.value));
            None
        }
    }
}

fn parse_matrix(e: &Entry, errs: &mut Collector) -> Option<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut ok = true;
    let mut offset = 0;
    for row in e.value.split(';') {
        let mut r = Vec::new();
        let mut inner = 0;
        for tok in row.split([' ', ',', '\t']) {
            if !tok.is_empty() {
                match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() => r.push(v),
                    _ => {
                        errs.push(e.line, e.val_col + offset + inner, format!("'{tok}' is not a finite number"));
                        ok = false;
                    }
                }
            }
            inner += tok.len() + 1;
        }
        rows.push(r);
        offset += row.len() + 1;
    }
    if !ok {
        return None;
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        errs.push(e.line, e.val_col, format!("B must be square; got {n} rows of lengths {:?}", rows.iter().map(Vec::len).collect::<Vec<_>>()));
        return None;
    }
    Some(rows)
}

/// Parses and validates a configuration, collecting every error found.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, Vec<ConfigError>> {
    let mut errs = Collector { errors: Vec::new() };
    let entries = split_entries(text, &mut errs);
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    for e in &entries {
        if let Some(prev) = seen.insert((e.section.clone(), e.key.clone()), e.line) {
            errs.push(e.line, e.key_col, format!("duplicate key '{}' (first set on line {prev})", e.key));
        }
    }
    let find = |sec: &str, key: &str| entries.iter().rev().find(|e| e.section == sec && e.key == key);

    // [operator]
    let mut preset_name = "langevin".to_string();
    let mut preset_pos = (0, 0);
    let mut size: Option<usize> = None;
    let mut b: Option<Vec<Vec<f64>>> = None;
    let mut b_pos = (0, 0);
    let mut m0: Option<usize> = None;
    let mut m0_pos = (0, 0);
    let mut lambda = 1.0;
    let mut q: Option<f64> = None;
    for e in entries.iter().filter(|e| e.section == "operator") {
        match e.key.as_str() {
            "preset" => {
                preset_name = e.value.clone();
                preset_pos = (e.line, e.val_col);
            }
            "n" | "N" => size = parse_one(e, &mut errs, "a positive integer"),
            "B" | "b" => {
                b = parse_matrix(e, &mut errs);
                b_pos = (e.line, e.key_col);
            }
            "m0" => {
                m0 = parse_one(e, &mut errs, "a positive integer");
                m0_pos = (e.line, e.val_col);
            }
            "lambda" => match parse_one::<f64>(e, &mut errs, "a number") {
                Some(v) if v > 0.0 && v.is_finite() => lambda = v,
                Some(_) => errs.push(e.line, e.val_col, "lambda must be positive"),
                None => {}
            },
            "q" => q = parse_one(e, &mut errs, "a number"),
            _ => errs.push(e.line, e.key_col, format!("unknown key '{}' in [operator]", e.key)),
        }
    }
    let preset = match preset_name.as_str() {
        "langevin" => Some(Preset::Langevin),
        "heat" => Some(Preset::Heat(size.unwrap_or(1))),
        "kinetic" => Some(Preset::Kinetic(size.unwrap_or(1))),
        "custom" => Some(Preset::Custom),
        s => match s.strip_prefix("kinetic_").and_then(|k| k.parse::<usize>().ok()) {
            Some(k) => Some(Preset::Kinetic(k)),
            None => {
                errs.push(preset_pos.0, preset_pos.1, format!("unknown preset '{s}' (heat, langevin, kinetic_<n>, custom)"));
                None
            }
        },
    };
    let mut base: Option<OperatorSpec> = None;
    match preset {
        Some(Preset::Custom) => match (&b, m0) {
            (Some(rows), Some(m)) => {
                let n = rows.len();
                if m == 0 {
                    errs.push(m0_pos.0, m0_pos.1, "m0 must be at least 1");
                } else if m > n {
                    errs.push(m0_pos.0, m0_pos.1, format!("m0 exceeds dimension ({m} > {n})"));
                } else {
                    let bm = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                    match OperatorSpec::principal(bm, m, q.unwrap_or(0.0)) {
                        Ok(mut op) => {
                            if q.is_none() {
                                op.q = match op.blocks() {
                                    Ok(bl) if 5.0 > 0.75 * (bl.q_dim as f64 + 2.0) => 5.0,
                                    Ok(bl) => bl.q_dim as f64 + 2.0,
                                    Err(_) => 5.0,
                                };
                            }
                            base = Some(op)
                        }
                        Err(err) => errs.push(b_pos.0, b_pos.1, err.to_string()),
                    }
                }
            }
            (None, _) => errs.push(preset_pos.0, preset_pos.1, "custom preset requires B"),
            (_, None) => errs.push(preset_pos.0, preset_pos.1, "custom preset requires m0"),
        },
        Some(p) => {
            if b.is_some() {
                errs.push(b_pos.0, b_pos.1, format!("B conflicts with preset '{preset_name}' (use preset = custom)"));
            }
            let built = match p {
                Preset::Langevin => Ok(OperatorSpec::langevin()),
                Preset::Heat(n) => OperatorSpec::heat(n),
                Preset::Kinetic(n) => OperatorSpec::kinetic(n),
                Preset::Custom => unreachable!(),
            };
            match built {
                Ok(mut op) => {
                    if let Some(m) = m0 {
                        if m != op.m0 {
                            errs.push(m0_pos.0, m0_pos.1, format!("m0 = {m} conflicts with preset '{preset_name}' (m0 = {})", op.m0));
                        }
                    }
                    if let Some(q) = q {
                        op.q = q;
                    }
                    base = Some(op);
                }
                Err(err) => errs.push(preset_pos.0, preset_pos.1, err.to_string()),
            }
        }
        None => {}
    }
    if let (Some(op), Some(qv)) = (&base, q) {
        if !(qv.is_finite() || qv == f64::INFINITY) || qv <= 1.0 {
            errs.push(find("operator", "q").map_or(0, |e| e.line), find("operator", "q").map_or(0, |e| e.val_col), "q must exceed 1");
        } else if let Ok(bl) = op.blocks() {
            if qv <= (bl.q_dim as f64 + 2.0) / 2.0 {
                let e = find("operator", "q").expect("q entry present");
                errs.push(e.line, e.val_col, format!("q = {qv} must exceed (Q+2)/2 = {}", (bl.q_dim as f64 + 2.0) / 2.0));
            }
        }
    }
    let n = base.as_ref().map_or(0, |op| op.n);
    let m0v = base.as_ref().map_or(0, |op| op.m0);

    // [coefficients]
    let mut coefficients = BTreeMap::new();
    for e in entries.iter().filter(|e| e.section == "coefficients") {
        if base.is_some() {
            if let Err(msg) = coefficient_slot(&e.key, m0v) {
                errs.push(e.line, e.key_col, msg);
                continue;
            }
        }
        match Expr::parse(&e.value) {
            Ok(ex) => {
                let k = ex.max_spatial_index();
                if base.is_some() && k > n {
                    errs.push(e.line, e.val_col, format!("variable x{k} exceeds dimension {n}"));
                } else {
                    coefficients.insert(e.key.clone(), e.value.clone());
                }
            }
            Err(crate::expr::ExprError::Syntax { col, msg }) => errs.push(e.line, e.val_col + col.saturating_sub(1), msg),
            Err(other) => errs.push(e.line, e.val_col, other.to_string()),
        }
    }

    // [domain]
    let mut lo = vec![-1.0; n + 1];
    let mut hi = vec![1.0; n + 1];
    let mut resolutions = vec![16, 24, 32];
    let mut rho = 0.5;
    let mut r = 1.0;
    for e in entries.iter().filter(|e| e.section == "domain") {
        match e.key.as_str() {
            "lo" | "hi" => {
                if let Some(v) = parse_list::<f64>(e, &mut errs, "a number") {
                    if base.is_some() && v.len() != n + 1 {
                        errs.push(e.line, e.val_col, format!("{} needs {} entries (x1..x{n}, t)", e.key, n + 1));
                    } else if e.key == "lo" {
                        lo = v;
                    } else {
                        hi = v;
                    }
                }
            }
            "resolutions" | "resolution" => {
                if let Some(v) = parse_list::<usize>(e, &mut errs, "a positive integer") {
                    if v.is_empty() || v.iter().any(|&k| k < crate::grid::MIN_RESOLUTION) {
                        errs.push(e.line, e.val_col, format!("resolutions must be at least {}", crate::grid::MIN_RESOLUTION));
                    } else {
                        resolutions = v;
                    }
                }
            }
            "rho" => rho = parse_one(e, &mut errs, "a number").unwrap_or(rho),
            "r" => r = parse_one(e, &mut errs, "a number").unwrap_or(r),
            _ => errs.push(e.line, e.key_col, format!("unknown key '{}' in [domain]", e.key)),
        }
    }
    if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
        let e = find("domain", "hi").or(find("domain", "lo"));
        errs.push(e.map_or(0, |e| e.line), e.map_or(0, |e| e.val_col), "every lo entry must be below the matching hi entry");
    }
    if !(0.0 < rho && rho < r) {
        let e = find("domain", "rho").or(find("domain", "r"));
        errs.push(e.map_or(0, |e| e.line), e.map_or(0, |e| e.val_col), format!("need 0 < rho < r (rho = {rho}, r = {r})"));
    }

    // [experiment]
    let mut p = vec![1.0];
    let mut seed = 42;
    let mut experiments = vec![ExperimentKind::Structure];
    for e in entries.iter().filter(|e| e.section == "experiment") {
        match e.key.as_str() {
            "p" => {
                if let Some(v) = parse_list::<f64>(e, &mut errs, "a number") {
                    if v.iter().any(|&x| x == 0.0 || !x.is_finite()) {
                        errs.push(e.line, e.val_col, "p values must be finite and nonzero");
                    } else {
                        p = v;
                    }
                }
            }
            "seed" => seed = parse_one(e, &mut errs, "a non-negative integer").unwrap_or(seed),
            "run" => {
                let mut list = Vec::new();
                let mut offset = 0;
                for part in e.value.split(',') {
                    let lead = part.len() - part.trim_start().len();
                    match ExperimentKind::from_name(part.trim()) {
                        Some(k) => list.push(k),
                        None => errs.push(
                            e.line,
                            e.val_col + offset + lead,
                            format!("unknown experiment '{}'", part.trim()),
                        ),
                    }
                    offset += part.len() + 1;
                }
                experiments = list;
            }
            _ => errs.push(e.line, e.key_col, format!("unknown key '{}' in [experiment]", e.key)),
        }
    }

    if !errs.errors.is_empty() {
        errs.errors.sort_by_key(|e| (e.line, e.col));
        return Err(errs.errors);
    }
    let op = base.expect("operator built when no errors were recorded");
    let mut cfg = ExperimentConfig::for_operator(preset.expect("preset resolved"), &op);
    cfg.coefficients = coefficients;
    cfg.lambda = lambda;
    cfg.lo = lo;
    cfg.hi = hi;
    cfg.resolutions = resolutions;
    cfg.rho = rho;
    cfg.r = r;
    cfg.p = p;
    cfg.seed = seed;
    cfg.experiments = experiments;
    if let Err(err) = cfg.operator() {
        return Err(vec![ConfigError { line: 0, col: 0, msg: err.to_string() }]);
    }
    Ok(cfg)
}

/// [`parse_config`] with the error list folded into [`Error::Config`].
pub fn load(text: &str) -> Result<ExperimentConfig> {
    parse_config(text).map_err(Error::Config)
}
