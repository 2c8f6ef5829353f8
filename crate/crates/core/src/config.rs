//! TOML run configuration: schema, validation and translation into a
//! [`RunConfig`] plus initial state.
//!
//! ```toml
//! schema = 1
//!
//! [growth]
//! kind = "isotropic-exponential"   # static | isotropic-logistic | per-axis | table
//! rho = 0.1
//! horizon = 1.0
//!
//! [model]
//! builtin = "reversible-reaction"
//! kf = 1.0
//! kr = 1.0
//! d = [1.0, 1.0, 1.0]
//!
//! [grid]
//! extents = [1.0, 1.0]
//! nodes = [33, 33]
//!
//! [initial]
//! values = ["1 + 0.1*cos(pi*x)", "1", "1"]
//!
//! [time]
//! t_end = 1.0
//! ```

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::diagnostics::LyapunovParams;
use crate::expr::{Expr, Scope};
use crate::grid::{Grid, StateField};
use crate::growth::{GrowthKind, GrowthLaw, JacobianMode, Table};
use crate::models::{Builtin, Certificate, ReactionModel};
use crate::operator::FluxConvention;
use crate::solver::{RunConfig, Stepper, TimeStep};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("cannot serialize configuration: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthKindName {
    Static,
    IsotropicExponential,
    IsotropicLogistic,
    PerAxis,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSection {
    pub kind: GrowthKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<f64>,
    /// Per-axis `λ_i(t)` expressions in `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<String>>,
    /// CSV with columns `t, lambda1, …, lambdan`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub jacobian: JacobianMode,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinName {
    BrusselatorSurface,
    ReversibleReaction,
    Example3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<BuiltinName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    pub d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    pub extents: Vec<f64>,
    pub nodes: Vec<usize>,
}

/// Initial data: either expressions in `x1..xn` (aliases `x, y, z`) or a
/// snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSetting {
    Auto(Auto),
    Fixed(f64),
}

impl Default for DtSetting {
    fn default() -> Self {
        DtSetting::Auto(Auto::Auto)
    }
}

fn default_safety() -> f64 {
    0.9
}
fn default_overshoot() -> f64 {
    1e-8
}
fn default_max_steps() -> usize {
    10_000_000
}
fn default_every() -> usize {
    1
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    #[serde(default)]
    pub stepper: Stepper,
    #[serde(default)]
    pub dt: DtSetting,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_overshoot")]
    pub overshoot_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup_threshold: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default)]
    pub convention: FluxConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_p: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_theta: Option<Vec<f64>>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            every: default_every(),
            convention: FluxConvention::default(),
            weights: None,
            lyapunov_p: None,
            lyapunov_theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Keep a snapshot every this many steps (0: initial and final only).
    #[serde(default)]
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub schema: u32,
    pub growth: GrowthSection,
    pub model: ModelSection,
    pub grid: GridSection,
    pub initial: InitialSection,
    pub time: TimeSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative paths are resolved against (the config file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates configuration text; relative paths resolve against `base_dir`.
pub fn parse_config(src: &str, base_dir: &Path) -> Result<AppConfig, ConfigError> {
    let mut cfg: AppConfig = toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(src, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.base_dir = base_dir.to_path_buf();
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

pub fn load_config(path: &Path) -> Result<AppConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&src, &base)
}

pub fn config_to_string(cfg: &AppConfig) -> Result<String, ConfigError> {
    toml::to_string_pretty(cfg).map_err(|e| ConfigError::Serialize(e.to_string()))
}

pub fn write_config(cfg: &AppConfig, path: &Path) -> Result<(), ConfigError> {
    let text = config_to_string(cfg)?;
    std::fs::write(path, text).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl AppConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn components(&self) -> usize {
        self.model.d.len()
    }

    /// Every problem found, each naming the offending keys.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema != SCHEMA_VERSION {
            errs.push(format!(
                "schema = {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        let n = self.grid.extents.len();
        self.validate_growth(n, &mut errs);
        self.validate_model(&mut errs);
        self.validate_grid(&mut errs);
        self.validate_initial(&mut errs);
        self.validate_time(&mut errs);
        self.validate_diagnostics(&mut errs);
        errs
    }

    fn validate_growth(&self, n: usize, errs: &mut Vec<String>) {
        let g = &self.growth;
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            errs.push(format!("growth.horizon = {} must be positive", g.horizon));
        }
        let need = |errs: &mut Vec<String>, present: bool, key: &str| {
            if !present {
                errs.push(format!("growth.kind = {:?} requires growth.{key}", g.kind));
            }
        };
        match g.kind {
            GrowthKindName::Static => {}
            GrowthKindName::IsotropicExponential => need(errs, g.rho.is_some(), "rho"),
            GrowthKindName::IsotropicLogistic => {
                need(errs, g.rho.is_some(), "rho");
                need(errs, g.saturation.is_some(), "saturation");
            }
            GrowthKindName::PerAxis => {
                need(errs, g.lambda.is_some(), "lambda");
                if let Some(l) = &g.lambda {
                    if l.len() != n {
                        errs.push(format!(
                            "growth.lambda has {} entries but grid.extents has {n}",
                            l.len()
                        ));
                    }
                }
            }
            GrowthKindName::Table => {
                need(errs, g.table.is_some(), "table");
                if let Some(p) = &g.table {
                    let full = self.resolve(p);
                    if !full.is_file() {
                        errs.push(format!("growth.table: file {} does not exist", full.display()));
                    }
                }
            }
        }
    }

    fn validate_model(&self, errs: &mut Vec<String>) {
        let m = &self.model;
        match (m.builtin, m.f.is_some() || m.g.is_some()) {
            (Some(_), true) => {
                errs.push("model.builtin and model.f/model.g are mutually exclusive".into())
            }
            (None, false) => errs.push("model needs either builtin or f and g".into()),
            (Some(b), false) => {
                let comps = match b {
                    BuiltinName::ReversibleReaction => 3,
                    _ => 2,
                };
                if m.d.len() != comps {
                    errs.push(format!(
                        "model.d has {} entries but model.builtin = {b:?} has {comps} components",
                        m.d.len()
                    ));
                }
                let keys: &[(&str, Option<f64>)] = match b {
                    BuiltinName::ReversibleReaction => &[("kf", m.kf), ("kr", m.kr)],
                    _ => &[("alpha", m.alpha), ("beta", m.beta)],
                };
                for (k, v) in keys {
                    if v.is_none() {
                        errs.push(format!("model.builtin = {b:?} requires model.{k}"));
                    }
                }
            }
            (None, true) => {
                for (key, rows) in [("f", &m.f), ("g", &m.g)] {
                    match rows {
                        None => errs.push(format!("model.{key} is missing")),
                        Some(r) if r.len() != m.d.len() => errs.push(format!(
                            "model.{key} has {} entries but model.d has {}",
                            r.len(),
                            m.d.len()
                        )),
                        _ => {}
                    }
                }
            }
        }
        if m.d.is_empty() {
            errs.push("model.d must list at least one diffusivity".into());
        }
        for (i, d) in m.d.iter().enumerate() {
            if !(*d > 0.0 && d.is_finite()) {
                errs.push(format!("model.d[{i}] = {d} must be positive"));
            }
        }
    }

    fn validate_grid(&self, errs: &mut Vec<String>) {
        let g = &self.grid;
        let n = g.extents.len();
        if !(1..=3).contains(&n) {
            errs.push(format!("grid.extents has {n} entries; dimension must be 1, 2 or 3"));
        }
        if g.nodes.len() != n {
            errs.push(format!(
                "grid.nodes has {} entries but grid.extents has {n}",
                g.nodes.len()
            ));
        }
        if let Some(d) = g.dims {
            if d != n {
                errs.push(format!("grid.dims = {d} but grid.extents has {n} entries"));
            }
        }
        for (i, e) in g.extents.iter().enumerate() {
            if !(*e > 0.0 && e.is_finite()) {
                errs.push(format!("grid.extents[{i}] = {e} must be positive"));
            }
        }
        for (i, c) in g.nodes.iter().enumerate() {
            if *c < 3 {
                errs.push(format!("grid.nodes[{i}] = {c} must be at least 3"));
            }
        }
    }

    fn validate_initial(&self, errs: &mut Vec<String>) {
        let i = &self.initial;
        match (&i.values, &i.snapshot) {
            (Some(_), Some(_)) => {
                errs.push("initial.values and initial.snapshot are mutually exclusive".into())
            }
            (None, None) => errs.push("initial needs either values or snapshot".into()),
            (Some(v), None) => {
                if v.len() != self.model.d.len() {
                    errs.push(format!(
                        "initial.values has {} entries but model.d has {}",
                        v.len(),
                        self.model.d.len()
                    ));
                }
            }
            (None, Some(p)) => {
                let full = self.resolve(p);
                if !full.is_file() {
                    errs.push(format!("initial.snapshot: file {} does not exist", full.display()));
                }
            }
        }
    }

    fn validate_time(&self, errs: &mut Vec<String>) {
        let t = &self.time;
        if !(t.t_end > 0.0 && t.t_end.is_finite()) {
            errs.push(format!("time.t_end = {} must be positive", t.t_end));
        } else if t.t_end > self.growth.horizon {
            errs.push(format!(
                "time.t_end = {} exceeds growth.horizon = {}",
                t.t_end, self.growth.horizon
            ));
        }
        if let DtSetting::Fixed(dt) = t.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                errs.push(format!("time.dt = {dt} must be positive or \"auto\""));
            }
        }
        if !(t.safety > 0.0 && t.safety <= 1.0) {
            errs.push(format!("time.safety = {} must lie in (0, 1]", t.safety));
        }
        if !(t.overshoot_tol >= 0.0) {
            errs.push(format!("time.overshoot_tol = {} must be nonnegative", t.overshoot_tol));
        }
        if let Some(b) = t.blowup_threshold {
            if !(b > 0.0) {
                errs.push(format!("time.blowup_threshold = {b} must be positive"));
            }
        }
        if t.max_steps == 0 {
            errs.push("time.max_steps must be positive".into());
        }
    }

    fn validate_diagnostics(&self, errs: &mut Vec<String>) {
        let d = &self.diagnostics;
        let m = self.model.d.len();
        if let Some(w) = &d.weights {
            if w.len() != m {
                errs.push(format!(
                    "diagnostics.weights has {} entries but model.d has {m}",
                    w.len()
                ));
            }
        }
        match (&d.lyapunov_p, &d.lyapunov_theta) {
            (Some(_), None) | (None, Some(_)) => errs.push(
                "diagnostics.lyapunov_p and diagnostics.lyapunov_theta must be given together"
                    .into(),
            ),
            (Some(p), Some(theta)) => {
                let params = LyapunovParams {
                    p: *p,
                    theta: theta.clone(),
                };
                if let Err(e) = params.validate(m) {
                    errs.push(format!("diagnostics.lyapunov_*: {e}"));
                }
            }
            (None, None) => {}
        }
    }

    pub fn build_law(&self) -> Result<GrowthLaw, ConfigError> {
        let g = &self.growth;
        let n = self.grid.extents.len();
        let invalid = |e: &dyn fmt::Display| ConfigError::Invalid(vec![format!("growth: {e}")]);
        let law = match g.kind {
            GrowthKindName::Static => Ok(GrowthLaw::stationary(n, g.horizon)),
            GrowthKindName::IsotropicExponential => {
                GrowthLaw::isotropic_exponential(g.rho.unwrap_or_default(), n, g.horizon)
            }
            GrowthKindName::IsotropicLogistic => GrowthLaw::new(
                GrowthKind::IsotropicLogistic {
                    rho: g.rho.unwrap_or_default(),
                    saturation: g.saturation.unwrap_or_default(),
                },
                n,
                g.horizon,
            ),
            GrowthKindName::PerAxis => {
                GrowthLaw::per_axis(g.lambda.as_deref().unwrap_or_default(), g.horizon)
            }
            GrowthKindName::Table => {
                let path = self.resolve(g.table.as_deref().unwrap_or(Path::new("")));
                let table = read_growth_table(&path)?;
                GrowthLaw::tabulated(table, g.horizon)
            }
        }
        .map_err(|e| invalid(&e))?;
        Ok(law.with_jacobian(g.jacobian))
    }

    pub fn build_model(&self) -> Result<ReactionModel, ConfigError> {
        let m = &self.model;
        let invalid = |e: &dyn fmt::Display| ConfigError::Invalid(vec![format!("model: {e}")]);
        let model = match m.builtin {
            Some(b) => {
                let which = match b {
                    BuiltinName::BrusselatorSurface => Builtin::BrusselatorSurface {
                        alpha: m.alpha.unwrap_or_default(),
                        beta: m.beta.unwrap_or_default(),
                    },
                    BuiltinName::ReversibleReaction => Builtin::ReversibleReaction {
                        kf: m.kf.unwrap_or_default(),
                        kr: m.kr.unwrap_or_default(),
                    },
                    BuiltinName::Example3 => Builtin::Example3 {
                        alpha: m.alpha.unwrap_or_default(),
                        beta: m.beta.unwrap_or_default(),
                    },
                };
                ReactionModel::builtin(which, m.d.clone())
            }
            None => ReactionModel::from_expressions(
                m.name.as_deref().unwrap_or("custom"),
                m.f.as_deref().unwrap_or_default(),
                m.g.as_deref().unwrap_or_default(),
                &m.constants,
                m.d.clone(),
            ),
        }
        .map_err(|e| invalid(&e))?;
        Ok(match &m.certificate {
            Some(c) => model.with_certificate(c.clone()),
            None => model,
        })
    }

    pub fn build_grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(&self.grid.extents, &self.grid.nodes)
            .map_err(|e| ConfigError::Invalid(vec![format!("grid: {e}")]))
    }

    pub fn build_initial(&self, grid: &Grid) -> Result<StateField, ConfigError> {
        if let Some(p) = &self.initial.snapshot {
            let path = self.resolve(p);
            let (header, state) = crate::io::read_snapshot(&path).map_err(|e| {
                ConfigError::Invalid(vec![format!("initial.snapshot: {e}")])
            })?;
            if header.counts != grid.counts() || header.m != self.components() {
                return Err(ConfigError::Invalid(vec![format!(
                    "initial.snapshot: shape m={} N={:?} does not match model.d / grid.nodes",
                    header.m, header.counts
                )]));
            }
            return Ok(StateField::new(0.0, state.components));
        }
        let n = grid.dim();
        let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let mut scope = Scope::new(&names).with_constants(&self.model.constants);
        for (i, alias) in ["x", "y", "z"].iter().take(n).enumerate() {
            scope.alias(alias, i);
        }
        let exprs = self
            .initial
            .values
            .as_deref()
            .unwrap_or_default()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Expr::parse(s, &scope).map_err(|e| format!("initial.values[{i}]: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::Invalid(vec![e]))?;
        let components = exprs.iter().map(|e| grid.sample(|x| e.eval(x))).collect();
        Ok(StateField::new(0.0, components))
    }

    /// Solver configuration and initial state; cross-checks that need the
    /// built objects (blow-up threshold above the initial sup norm) happen here.
    pub fn build(&self) -> Result<(RunConfig, StateField), ConfigError> {
        let mut errs = Vec::new();
        let law = collect_err(self.build_law(), &mut errs);
        let model = collect_err(self.build_model(), &mut errs);
        let grid = collect_err(self.build_grid(), &mut errs);
        let initial = match &grid {
            Some(g) => collect_err(self.build_initial(g), &mut errs),
            None => None,
        };
        let (Some(law), Some(model), Some(grid), Some(initial)) = (law, model, grid, initial)
        else {
            return Err(ConfigError::Invalid(errs));
        };
        let mut errs = Vec::new();
        if let Some(b) = self.time.blowup_threshold {
            let sup = initial.sup_norm();
            if !(b > sup) {
                errs.push(format!(
                    "time.blowup_threshold = {b} must exceed the initial sup norm {sup}"
                ));
            }
        }
        let mut cfg = RunConfig::new(law, model, grid, self.time.t_end);
        cfg.stepper = self.time.stepper;
        cfg.dt = match self.time.dt {
            DtSetting::Auto(_) => TimeStep::Auto,
            DtSetting::Fixed(dt) => TimeStep::Fixed(dt),
        };
        cfg.safety = self.time.safety;
        cfg.overshoot_tol = self.time.overshoot_tol;
        cfg.blowup_threshold = self.time.blowup_threshold;
        cfg.max_steps = self.time.max_steps;
        cfg.snapshot_every = self.output.snapshot_every;
        cfg.diagnostics_every = self.diagnostics.every;
        cfg.convention = self.diagnostics.convention;
        cfg.weights = self.diagnostics.weights.clone();
        cfg.lyapunov = match (&self.diagnostics.lyapunov_p, &self.diagnostics.lyapunov_theta) {
            (Some(p), Some(theta)) => Some(LyapunovParams {
                p: *p,
                theta: theta.clone(),
            }),
            _ => None,
        };
        if let Err(e) = cfg.validate() {
            errs.push(e.to_string());
        }
        if errs.is_empty() {
            Ok((cfg, initial))
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

fn collect_err<T>(r: Result<T, ConfigError>, errs: &mut Vec<String>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(ConfigError::Invalid(e)) => {
            errs.extend(e);
            None
        }
        Err(e) => {
            errs.push(e.to_string());
            None
        }
    }
}

/// Reads a growth table CSV with header `t, lambda1, …, lambdan`.
pub fn read_growth_table(path: &Path) -> Result<Table, ConfigError> {
    let fail = |message: String| ConfigError::Io {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let cols = rdr.headers().map_err(|e| fail(e.to_string()))?.len();
    if cols < 2 {
        return Err(fail("growth table needs a t column and at least one lambda column".into()));
    }
    let mut times = Vec::new();
    let mut samples = vec![Vec::new(); cols - 1];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, ConfigError> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| fail(format!("row {}, column {}: {e}", row + 2, i + 1)))
        };
        times.push(parse(0)?);
        for (i, col) in samples.iter_mut().enumerate() {
            col.push(parse(i + 1)?);
        }
    }
    Table::new(times, samples).map_err(|e| ConfigError::Invalid(vec![format!("growth.table: {e}")]))
}
