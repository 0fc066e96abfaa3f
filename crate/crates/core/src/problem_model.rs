//! Problem definition, the problem-file format and node-wise validation.
//!
//! Modes are numbered from 1 in files, CSV output and diagnostics, and from 0
//! everywhere inside the library.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ambiguity::AmbiguityModel;
use crate::exec::Execution;
use crate::expr::{self, EvalError, Expr, ParseError};
use crate::lattice::{node_index, nodes_through, Lattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Arithmetic,
    Geometric,
}

/// Constant-coefficient factor dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorModel {
    pub kind: FactorKind,
    pub x0: f64,
    pub drift: f64,
    pub vol: f64,
}

impl FactorModel {
    pub fn new(kind: FactorKind, x0: f64, drift: f64, vol: f64) -> Result<Self, SpecError> {
        if !(x0.is_finite() && drift.is_finite()) {
            return Err(SpecError::Range("factor x0 and drift must be finite".into()));
        }
        if !(vol.is_finite() && vol > 0.0) {
            return Err(SpecError::Range(format!("vol must be positive, got {vol}")));
        }
        if kind == FactorKind::Geometric && x0 <= 0.0 {
            return Err(SpecError::Range(format!("geometric factor needs x0 > 0, got {x0}")));
        }
        Ok(FactorModel { kind, x0, drift, vol })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    /// Running utility `psi(t, x)`.
    pub psi: Expr,
    /// Terminal reward, evaluated at `t = T`.
    pub xi: Expr,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("format error: {0}")]
    Format(String),
    #[error("expression error in {location}: {source}")]
    Expr {
        location: String,
        #[source]
        source: ParseError,
    },
    #[error("range error: {0}")]
    Range(String),
}

impl SpecError {
    pub fn code(&self) -> &'static str {
        match self {
            SpecError::Format(_) => "FormatError",
            SpecError::Expr { .. } => "ExprError",
            SpecError::Range(_) => "RangeError",
        }
    }
}

/// An expression failed to evaluate at a lattice node.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{what} at node (n={n}, k={k}): {source}")]
pub struct NodeEvalError {
    pub what: String,
    pub n: usize,
    pub k: usize,
    #[source]
    pub source: EvalError,
}

/// Switching costs evaluated at one node; `None` off the switch graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    modes: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(modes: usize) -> Self {
        CostMatrix {
            modes,
            data: vec![f64::INFINITY; modes * modes],
        }
    }

    pub fn from_fn(modes: usize, f: impl Fn(usize, usize) -> Option<f64>) -> Self {
        let mut m = CostMatrix::new(modes);
        for j in 0..modes {
            for i in 0..modes {
                if let Some(c) = f(j, i) {
                    m.set(j, i, c);
                }
            }
        }
        m
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn set(&mut self, from: usize, to: usize, cost: f64) {
        self.data[from * self.modes + to] = cost;
    }

    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        let c = self.data[from * self.modes + to];
        (c != f64::INFINITY).then_some(c)
    }

    /// Row-major costs, `+inf` off the switch graph.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Raw cost with `+inf` standing for a forbidden switch.
    #[inline]
    pub fn raw(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.modes + to]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    horizon: f64,
    start_mode: usize,
    modes: Vec<ModeSpec>,
    costs: Vec<Option<Expr>>,
    switch_sets: Vec<Vec<usize>>,
    factor: FactorModel,
    ambiguity: AmbiguityModel,
}

impl ProblemSpec {
    /// `costs` lists `(from, to, c)` with 0-based modes; the switch sets are
    /// exactly the listed pairs.
    pub fn new(
        horizon: f64,
        start_mode: usize,
        modes: Vec<ModeSpec>,
        costs: Vec<(usize, usize, Expr)>,
        factor: FactorModel,
        ambiguity: AmbiguityModel,
    ) -> Result<Self, SpecError> {
        let m = modes.len();
        if m < 1 {
            return Err(SpecError::Range("modes must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SpecError::Range(format!("T must be positive, got {horizon}")));
        }
        if start_mode >= m {
            return Err(SpecError::Range(format!(
                "start_mode {} outside 1..{m}",
                start_mode + 1
            )));
        }
        let mut table = vec![None; m * m];
        for (j, i, c) in costs {
            if j >= m || i >= m {
                return Err(SpecError::Format(format!(
                    "cost {}->{} refers to a mode outside 1..{m}",
                    j + 1,
                    i + 1
                )));
            }
            if j == i {
                return Err(SpecError::Format(format!("cost {}->{} is a self switch", j + 1, i + 1)));
            }
            if table[j * m + i].replace(c).is_some() {
                return Err(SpecError::Format(format!("cost {}->{} given twice", j + 1, i + 1)));
            }
        }
        let switch_sets = (0..m)
            .map(|j| (0..m).filter(|&i| table[j * m + i].is_some()).collect())
            .collect();
        Ok(ProblemSpec {
            horizon,
            start_mode,
            modes,
            costs: table,
            switch_sets,
            factor,
            ambiguity,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn start_mode(&self) -> usize {
        self.start_mode
    }

    pub fn mode(&self, j: usize) -> &ModeSpec {
        &self.modes[j]
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn factor(&self) -> &FactorModel {
        &self.factor
    }

    pub fn ambiguity(&self) -> &AmbiguityModel {
        &self.ambiguity
    }

    pub fn switch_set(&self, j: usize) -> &[usize] {
        &self.switch_sets[j]
    }

    pub fn switch_sets(&self) -> &[Vec<usize>] {
        &self.switch_sets
    }

    pub fn cost_expr(&self, from: usize, to: usize) -> Option<&Expr> {
        self.costs[from * self.modes.len() + to].as_ref()
    }

    pub fn with_start_mode(mut self, start_mode: usize) -> Self {
        assert!(start_mode < self.modes.len());
        self.start_mode = start_mode;
        self
    }

    pub fn with_ambiguity(mut self, ambiguity: AmbiguityModel) -> Self {
        self.ambiguity = ambiguity;
        self
    }

    /// Applies `f` to every mode definition.
    pub fn map_modes(mut self, f: impl Fn(usize, ModeSpec) -> ModeSpec) -> Self {
        let modes = std::mem::take(&mut self.modes);
        self.modes = modes.into_iter().enumerate().map(|(j, s)| f(j, s)).collect();
        self
    }

    pub fn psi_at(&self, j: usize, t: f64, x: f64) -> Result<f64, EvalError> {
        self.modes[j].psi.eval(t, x)
    }

    pub fn xi_at(&self, j: usize, x: f64) -> Result<f64, EvalError> {
        self.modes[j].xi.eval(self.horizon, x)
    }

    pub fn costs_at(&self, t: f64, x: f64) -> Result<CostMatrix, (usize, usize, EvalError)> {
        let m = self.modes.len();
        let mut out = CostMatrix::new(m);
        for j in 0..m {
            for &i in &self.switch_sets[j] {
                let c = self.costs[j * m + i]
                    .as_ref()
                    .expect("switch set entry without cost")
                    .eval(t, x)
                    .map_err(|e| (j, i, e))?;
                out.set(j, i, c);
            }
        }
        Ok(out)
    }

    /// Running utilities, terminal values and costs evaluated at node `(n, k)`.
    pub fn node_data(&self, lat: &Lattice, n: usize, k: usize) -> Result<NodeData, NodeEvalError> {
        let t = lat.time(n);
        let x = lat.state(n, k);
        let at = |what: String, source| NodeEvalError { what, n, k, source };
        let mut psi = Vec::with_capacity(self.modes.len());
        for j in 0..self.modes.len() {
            psi.push(
                self.psi_at(j, t, x)
                    .map_err(|e| at(format!("psi of mode {}", j + 1), e))?,
            );
        }
        let costs = self
            .costs_at(t, x)
            .map_err(|(j, i, e)| at(format!("cost {}->{}", j + 1, i + 1), e))?;
        Ok(NodeData { t, x, psi, costs })
    }

    pub fn terminal_values(&self, lat: &Lattice, k: usize) -> Result<Vec<f64>, NodeEvalError> {
        let n = lat.steps();
        let x = lat.state(n, k);
        (0..self.modes.len())
            .map(|j| {
                self.xi_at(j, x).map_err(|source| NodeEvalError {
                    what: format!("xi of mode {}", j + 1),
                    n,
                    k,
                    source,
                })
            })
            .collect()
    }

    /// Renders the problem in the file format read by [`load_spec`].
    pub fn to_spec_text(&self) -> String {
        let mut s = String::new();
        let m = self.modes.len();
        let _ = writeln!(s, "[problem]");
        let _ = writeln!(s, "T = {:?}", self.horizon);
        let _ = writeln!(s, "modes = {m}");
        let _ = writeln!(s, "start_mode = {}", self.start_mode + 1);
        let _ = writeln!(s, "\n[factor]");
        let model = match self.factor.kind {
            FactorKind::Arithmetic => "arithmetic",
            FactorKind::Geometric => "geometric",
        };
        let _ = writeln!(s, "model = \"{model}\"");
        let _ = writeln!(s, "x0 = {:?}", self.factor.x0);
        let _ = writeln!(s, "drift = {:?}", self.factor.drift);
        let _ = writeln!(s, "vol = {:?}", self.factor.vol);
        let _ = writeln!(s, "\n[ambiguity]");
        match &self.ambiguity {
            AmbiguityModel::KappaIgnorance { kappa } => {
                let _ = writeln!(s, "kind = \"kappa_ignorance\"");
                let _ = writeln!(s, "kappa = {kappa:?}");
            }
            AmbiguityModel::FiniteSet { values } => {
                let _ = writeln!(s, "kind = \"finite_set\"");
                let vals: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "values = [{}]", vals.join(", "));
            }
        }
        for (j, mode) in self.modes.iter().enumerate() {
            let _ = writeln!(s, "\n[mode.{}]", j + 1);
            let _ = writeln!(s, "psi = \"{}\"", mode.psi);
            let _ = writeln!(s, "xi = \"{}\"", mode.xi);
        }
        for j in 0..m {
            for &i in &self.switch_sets[j] {
                let _ = writeln!(s, "\n[cost.{}.{}]", j + 1, i + 1);
                let _ = writeln!(s, "c = \"{}\"", self.cost_expr(j, i).unwrap());
            }
        }
        s
    }
}

/// Per-node evaluation of the problem functions.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub t: f64,
    pub x: f64,
    pub psi: Vec<f64>,
    pub costs: CostMatrix,
}

/// Problem functions evaluated once on every lattice node, stored node-major.
///
/// `psi` covers layers `0..N`, `costs` layers `0..=N` (forbidden switches are
/// `+inf`) and `terminal` holds `xi` on layer `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTables {
    modes: usize,
    steps: usize,
    psi: Vec<f64>,
    costs: Vec<f64>,
    terminal: Vec<f64>,
}

impl NodeTables {
    pub fn build(spec: &ProblemSpec, lat: &Lattice, exec: Execution) -> Result<Self, NodeEvalError> {
        let m = spec.mode_count();
        let steps = lat.steps();
        let nodes = nodes_through(steps);
        let per_node = exec.try_map(nodes, 256, |idx| {
            let (n, k) = node_coords(idx);
            let data = spec.node_data(lat, n, k)?;
            Ok::<_, NodeEvalError>((data.psi, data.costs.data))
        })?;
        let interior = nodes_through(steps - 1);
        let mut psi = Vec::with_capacity(interior * m);
        let mut costs = Vec::with_capacity(nodes * m * m);
        for (idx, (p, c)) in per_node.into_iter().enumerate() {
            if idx < interior {
                psi.extend_from_slice(&p);
            }
            costs.extend_from_slice(&c);
        }
        let mut terminal = Vec::with_capacity((steps + 1) * m);
        for k in 0..=steps {
            terminal.extend(spec.terminal_values(lat, k)?);
        }
        Ok(NodeTables {
            modes: m,
            steps,
            psi,
            costs,
            terminal,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn psi(&self, n: usize, k: usize) -> &[f64] {
        let at = node_index(n, k) * self.modes;
        &self.psi[at..at + self.modes]
    }

    /// Row-major `m x m` cost block of node `(n, k)`.
    #[inline]
    pub fn costs(&self, n: usize, k: usize) -> &[f64] {
        let mm = self.modes * self.modes;
        let at = node_index(n, k) * mm;
        &self.costs[at..at + mm]
    }

    #[inline]
    pub fn terminal(&self, k: usize) -> &[f64] {
        &self.terminal[k * self.modes..(k + 1) * self.modes]
    }
}

/// Inverse of [`node_index`].
pub fn node_coords(idx: usize) -> (usize, usize) {
    let mut n = (((8 * idx + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    while node_index(n + 1, 0) <= idx {
        n += 1;
    }
    while node_index(n, 0) > idx {
        n -= 1;
    }
    (n, idx - node_index(n, 0))
}

// ---------------------------------------------------------------------------
// File format

fn fmt_err(msg: impl Into<String>) -> SpecError {
    SpecError::Format(msg.into())
}

fn get_number(table: &toml::Table, section: &str, key: &str) -> Result<Option<f64>, SpecError> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(toml::Value::Float(f)) => Ok(Some(*f)),
        Some(other) => Err(fmt_err(format!(
            "[{section}] {key} must be a number, got {}",
            other.type_str()
        ))),
    }
}

fn require_number(table: &toml::Table, section: &str, key: &str) -> Result<f64, SpecError> {
    get_number(table, section, key)?.ok_or_else(|| fmt_err(format!("[{section}] missing key `{key}`")))
}

fn get_string<'a>(table: &'a toml::Table, section: &str, key: &str) -> Result<&'a str, SpecError> {
    match table.get(key) {
        Some(toml::Value::String(s)) => Ok(s),
        Some(other) => Err(fmt_err(format!(
            "[{section}] {key} must be a string, got {}",
            other.type_str()
        ))),
        None => Err(fmt_err(format!("[{section}] missing key `{key}`"))),
    }
}

fn get_expr(table: &toml::Table, section: &str, key: &str) -> Result<Expr, SpecError> {
    let text = match table.get(key) {
        Some(toml::Value::String(s)) => s.clone(),
        Some(toml::Value::Integer(i)) => i.to_string(),
        Some(toml::Value::Float(f)) => format!("{f:?}"),
        Some(other) => {
            return Err(fmt_err(format!(
                "[{section}] {key} must be an expression string or number, got {}",
                other.type_str()
            )))
        }
        None => return Err(fmt_err(format!("[{section}] missing key `{key}`"))),
    };
    expr::parse(&text).map_err(|source| SpecError::Expr {
        location: format!("[{section}] {key}"),
        source,
    })
}

fn section<'a>(root: &'a toml::Table, name: &str) -> Result<&'a toml::Table, SpecError> {
    match root.get(name) {
        Some(toml::Value::Table(t)) => Ok(t),
        Some(_) => Err(fmt_err(format!("`{name}` must be a section"))),
        None => Err(fmt_err(format!("missing section [{name}]"))),
    }
}

fn reject_unknown(table: &toml::Table, section: &str, allowed: &[&str]) -> Result<(), SpecError> {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(fmt_err(format!("[{section}] unknown key `{key}`")));
        }
    }
    Ok(())
}

fn parse_index(s: &str, what: &str) -> Result<usize, SpecError> {
    s.parse::<usize>()
        .map_err(|_| fmt_err(format!("bad {what} index `{s}`")))
}

/// Reads a problem file.
///
/// ```text
/// [problem]   T, modes, start_mode
/// [factor]    model = "arithmetic" | "geometric", x0, drift, vol
/// [ambiguity] kind = "kappa_ignorance" (kappa) | "finite_set" (values)
/// [mode.J]    psi, xi
/// [cost.J.I]  c
/// ```
pub fn load_spec(text: &str) -> Result<ProblemSpec, SpecError> {
    let root: toml::Table = text.parse().map_err(|e: toml::de::Error| fmt_err(e.to_string()))?;
    for key in root.keys() {
        if !["problem", "factor", "ambiguity", "mode", "cost"].contains(&key.as_str()) {
            return Err(fmt_err(format!("unknown section [{key}]")));
        }
    }

    let problem = section(&root, "problem")?;
    reject_unknown(problem, "problem", &["T", "modes", "start_mode"])?;
    let horizon = require_number(problem, "problem", "T")?;
    let modes_raw = require_number(problem, "problem", "modes")?;
    if modes_raw.fract() != 0.0 || modes_raw < 1.0 {
        return Err(SpecError::Range(format!(
            "modes must be an integer >= 1, got {modes_raw}"
        )));
    }
    let m = modes_raw as usize;
    let start_raw = get_number(problem, "problem", "start_mode")?.unwrap_or(1.0);
    if start_raw.fract() != 0.0 || start_raw < 1.0 || start_raw > m as f64 {
        return Err(SpecError::Range(format!(
            "start_mode must be in 1..{m}, got {start_raw}"
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SpecError::Range(format!("T must be positive, got {horizon}")));
    }

    let factor_t = section(&root, "factor")?;
    reject_unknown(factor_t, "factor", &["model", "x0", "drift", "vol"])?;
    let kind = match get_string(factor_t, "factor", "model")? {
        "arithmetic" => FactorKind::Arithmetic,
        "geometric" => FactorKind::Geometric,
        other => return Err(fmt_err(format!("[factor] unknown model `{other}`"))),
    };
    let factor = FactorModel::new(
        kind,
        require_number(factor_t, "factor", "x0")?,
        get_number(factor_t, "factor", "drift")?.unwrap_or(0.0),
        require_number(factor_t, "factor", "vol")?,
    )?;

    let amb_t = section(&root, "ambiguity")?;
    let ambiguity = match get_string(amb_t, "ambiguity", "kind")? {
        "kappa_ignorance" => {
            reject_unknown(amb_t, "ambiguity", &["kind", "kappa"])?;
            let kappa = require_number(amb_t, "ambiguity", "kappa")?;
            AmbiguityModel::kappa(kappa).map_err(|e| SpecError::Range(e.to_string()))?
        }
        "finite_set" => {
            reject_unknown(amb_t, "ambiguity", &["kind", "values"])?;
            let values = match amb_t.get("values") {
                Some(toml::Value::Array(a)) => a
                    .iter()
                    .map(|v| match v {
                        toml::Value::Integer(i) => Ok(*i as f64),
                        toml::Value::Float(f) => Ok(*f),
                        _ => Err(fmt_err("[ambiguity] values must be numbers")),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                Some(_) => return Err(fmt_err("[ambiguity] values must be an array")),
                None => return Err(fmt_err("[ambiguity] missing key `values`")),
            };
            AmbiguityModel::finite(values).map_err(|e| SpecError::Range(e.to_string()))?
        }
        other => return Err(fmt_err(format!("[ambiguity] unknown kind `{other}`"))),
    };

    let mode_root = section(&root, "mode")?;
    let mut mode_tables = BTreeMap::new();
    for (key, value) in mode_root {
        let j = parse_index(key, "mode")?;
        if j < 1 || j > m {
            return Err(fmt_err(format!("[mode.{j}] outside 1..{m}")));
        }
        match value {
            toml::Value::Table(t) => {
                mode_tables.insert(j, t);
            }
            _ => return Err(fmt_err(format!("`mode.{key}` must be a section"))),
        }
    }
    let mut modes = Vec::with_capacity(m);
    for j in 1..=m {
        let name = format!("mode.{j}");
        let t = mode_tables
            .get(&j)
            .ok_or_else(|| fmt_err(format!("missing section [{name}]")))?;
        reject_unknown(t, &name, &["psi", "xi"])?;
        modes.push(ModeSpec {
            psi: get_expr(t, &name, "psi")?,
            xi: get_expr(t, &name, "xi")?,
        });
    }

    let mut costs = Vec::new();
    if let Some(cost_root) = root.get("cost") {
        let cost_root = match cost_root {
            toml::Value::Table(t) => t,
            _ => return Err(fmt_err("`cost` must be a section")),
        };
        for (jk, inner) in cost_root {
            let j = parse_index(jk, "cost")?;
            let inner = match inner {
                toml::Value::Table(t) => t,
                _ => return Err(fmt_err(format!("`cost.{jk}` must be a section"))),
            };
            for (ik, body) in inner {
                let i = parse_index(ik, "cost")?;
                let name = format!("cost.{j}.{i}");
                let body = match body {
                    toml::Value::Table(t) => t,
                    _ => return Err(fmt_err(format!("`{name}` must be a section"))),
                };
                reject_unknown(body, &name, &["c"])?;
                if j < 1 || j > m || i < 1 || i > m {
                    return Err(fmt_err(format!("[{name}] refers to a mode outside 1..{m}")));
                }
                costs.push((j - 1, i - 1, get_expr(body, &name, "c")?));
            }
        }
    }

    ProblemSpec::new(horizon, start_raw as usize - 1, modes, costs, factor, ambiguity)
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FindingCode {
    NegativeCost,
    FreeLoop,
    SwitchSetNotClosed,
    TriangleViolated,
    TerminalInconsistent,
    EvalFailure,
    ZeroCost,
}

impl FindingCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::NegativeCost => "NegativeCost",
            FindingCode::FreeLoop => "FreeLoop",
            FindingCode::SwitchSetNotClosed => "SwitchSetNotClosed",
            FindingCode::TriangleViolated => "TriangleViolated",
            FindingCode::TerminalInconsistent => "TerminalInconsistent",
            FindingCode::EvalFailure => "EvalFailure",
            FindingCode::ZeroCost => "ZeroCost",
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub code: FindingCode,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn is_accepted(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            let sev = match finding.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "{sev} {} at {}: {}", finding.code, finding.location, finding.message)?;
        }
        let n_err = self.errors().count();
        write!(
            f,
            "{} error(s), {} warning(s): {}",
            n_err,
            self.findings.len() - n_err,
            if n_err == 0 { "accepted" } else { "rejected" }
        )
    }
}

/// Collapses repeated node-wise failures of the same kind into one finding
/// carrying the first offending node and an occurrence count.
#[derive(Default)]
struct FindingSink {
    entries: BTreeMap<(FindingCode, String), (Severity, String, String, usize)>,
}

impl FindingSink {
    fn push(&mut self, severity: Severity, code: FindingCode, subject: String, node: String, message: String) {
        self.entries
            .entry((code, subject))
            .and_modify(|e| e.3 += 1)
            .or_insert((severity, node, message, 1));
    }

    fn into_report(self) -> ValidationReport {
        let mut findings: Vec<Finding> = self
            .entries
            .into_iter()
            .map(|((code, subject), (severity, node, message, count))| {
                let location = if node.is_empty() {
                    subject
                } else {
                    format!("{subject} {node}")
                };
                let message = if count > 1 {
                    format!("{message} ({count} nodes)")
                } else {
                    message
                };
                Finding {
                    severity,
                    code,
                    location,
                    message,
                }
            })
            .collect();
        findings.sort_by(|a, b| a.severity.cmp(&b.severity).then(a.code.cmp(&b.code)));
        ValidationReport { findings }
    }
}

fn cycle_label(cycle: &[usize]) -> String {
    let mut parts: Vec<String> = cycle.iter().map(|j| (j + 1).to_string()).collect();
    parts.push((cycle[0] + 1).to_string());
    format!("cycle {}", parts.join("->"))
}

/// Every simple directed cycle of the switch graph, each listed once starting
/// from its smallest mode.
pub fn simple_cycles(switch_sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    fn dfs(
        start: usize,
        v: usize,
        sets: &[Vec<usize>],
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<usize>>,
    ) {
        for &w in &sets[v] {
            if w == start {
                out.push(path.clone());
            } else if w > start && !on_path[w] {
                on_path[w] = true;
                path.push(w);
                dfs(start, w, sets, path, on_path, out);
                path.pop();
                on_path[w] = false;
            }
        }
    }
    let m = switch_sets.len();
    let mut out = Vec::new();
    for s in 0..m {
        let mut on_path = vec![false; m];
        on_path[s] = true;
        let mut path = vec![s];
        dfs(s, s, switch_sets, &mut path, &mut on_path, &mut out);
    }
    out
}

/// A cycle made only of non-positive edges, if one exists.
pub fn free_cycle_in_subgraph(costs: &CostMatrix, switch_sets: &[Vec<usize>]) -> Option<Vec<usize>> {
    let m = switch_sets.len();
    let free: Vec<Vec<usize>> = (0..m)
        .map(|j| {
            switch_sets[j]
                .iter()
                .copied()
                .filter(|&i| costs.raw(j, i) <= 0.0)
                .collect()
        })
        .collect();
    // iterative colouring DFS
    let mut colour = vec![0u8; m];
    let mut parent = vec![usize::MAX; m];
    for root in 0..m {
        if colour[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        colour[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < free[v].len() {
                let w = free[v][*next];
                *next += 1;
                match colour[w] {
                    0 => {
                        colour[w] = 1;
                        parent[w] = v;
                        stack.push((w, 0));
                    }
                    1 => {
                        let mut cycle = vec![v];
                        let mut cur = v;
                        while cur != w {
                            cur = parent[cur];
                            cycle.push(cur);
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                colour[v] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Maximum mode count for which cycles are enumerated one by one.
pub const CYCLE_ENUMERATION_LIMIT: usize = 8;

/// Checks the structural and node-wise hypotheses the solver relies on.
pub fn validate(spec: &ProblemSpec, lat: &Lattice) -> ValidationReport {
    let m = spec.mode_count();
    let sets = spec.switch_sets();
    let mut sink = FindingSink::default();

    for j in 0..m {
        for &i in &sets[j] {
            for &k in &sets[i] {
                if k != j && !sets[j].contains(&k) {
                    sink.push(
                        Severity::Error,
                        FindingCode::SwitchSetNotClosed,
                        format!("modes {}->{}->{}", j + 1, i + 1, k + 1),
                        String::new(),
                        format!(
                            "{} is reachable from {} through {} but not allowed directly",
                            k + 1,
                            j + 1,
                            i + 1
                        ),
                    );
                }
            }
        }
    }

    let cycles = if m <= CYCLE_ENUMERATION_LIMIT {
        simple_cycles(sets)
    } else {
        Vec::new()
    };

    for n in 0..=lat.steps() {
        let t = lat.time(n);
        for k in 0..=n {
            let x = lat.state(n, k);
            let node = format!("(n={n}, k={k})");
            let costs = match spec.costs_at(t, x) {
                Ok(c) => c,
                Err((j, i, e)) => {
                    sink.push(
                        Severity::Error,
                        FindingCode::EvalFailure,
                        format!("cost {}->{}", j + 1, i + 1),
                        node,
                        e.to_string(),
                    );
                    continue;
                }
            };
            let mut any_free_edge = false;
            for (j, set) in sets.iter().enumerate() {
                for &i in set {
                    let c = costs.raw(j, i);
                    if c < 0.0 {
                        sink.push(
                            Severity::Error,
                            FindingCode::NegativeCost,
                            format!("cost {}->{}", j + 1, i + 1),
                            node.clone(),
                            format!("switching cost {c} is negative"),
                        );
                    } else if c == 0.0 {
                        sink.push(
                            Severity::Warning,
                            FindingCode::ZeroCost,
                            format!("cost {}->{}", j + 1, i + 1),
                            node.clone(),
                            "switching cost is zero".into(),
                        );
                    }
                    any_free_edge |= c <= 0.0;
                }
            }

            // A cycle can only be free when one of its edges costs nothing.
            if any_free_edge {
                if m <= CYCLE_ENUMERATION_LIMIT {
                    for cycle in &cycles {
                        let total: f64 = (0..cycle.len())
                            .map(|p| costs.raw(cycle[p], cycle[(p + 1) % cycle.len()]))
                            .sum();
                        if total <= 0.0 {
                            sink.push(
                                Severity::Error,
                                FindingCode::FreeLoop,
                                cycle_label(cycle),
                                node.clone(),
                                format!("instantaneous switching cycle has total cost {total}"),
                            );
                        }
                    }
                } else if let Some(cycle) = free_cycle_in_subgraph(&costs, sets) {
                    sink.push(
                        Severity::Error,
                        FindingCode::FreeLoop,
                        cycle_label(&cycle),
                        node.clone(),
                        "instantaneous switching cycle has zero total cost".into(),
                    );
                }
            }

            for j in 0..m {
                for &i in &sets[j] {
                    for &kk in &sets[i] {
                        if kk == j || !sets[j].contains(&kk) {
                            continue;
                        }
                        let direct = costs.raw(j, kk);
                        let via = costs.raw(j, i) + costs.raw(i, kk);
                        if direct >= via || direct.is_nan() || via.is_nan() {
                            sink.push(
                                Severity::Error,
                                FindingCode::TriangleViolated,
                                format!("modes {}->{}->{}", j + 1, i + 1, kk + 1),
                                node.clone(),
                                format!("direct cost {direct} is not below {via} via mode {}", i + 1),
                            );
                        }
                    }
                }
            }

            if n == lat.steps() {
                let xi: Result<Vec<f64>, _> = (0..m).map(|j| spec.xi_at(j, x)).collect();
                match xi {
                    Ok(xi) => {
                        for j in 0..m {
                            for &i in &sets[j] {
                                let reachable = xi[i] - costs.raw(j, i);
                                if xi[j] < reachable {
                                    sink.push(
                                        Severity::Error,
                                        FindingCode::TerminalInconsistent,
                                        format!("terminal {}->{}", j + 1, i + 1),
                                        node.clone(),
                                        format!("xi_{} = {} is below xi_{} - c = {}", j + 1, xi[j], i + 1, reachable),
                                    );
                                }
                            }
                        }
                    }
                    Err(e) => sink.push(
                        Severity::Error,
                        FindingCode::EvalFailure,
                        "terminal".into(),
                        node.clone(),
                        e.to_string(),
                    ),
                }
            }
            if n < lat.steps() {
                for j in 0..m {
                    if let Err(e) = spec.psi_at(j, t, x) {
                        sink.push(
                            Severity::Error,
                            FindingCode::EvalFailure,
                            format!("psi of mode {}", j + 1),
                            node.clone(),
                            e.to_string(),
                        );
                    }
                }
            }
        }
    }
    sink.into_report()
}
