//! System definitions read from TOML files.
//!
//! ```toml
//! [system]
//! name = "charged"
//! dim = 3
//! lagrangian = "0.5*m*(v1^2+v2^2+v3^2) + q*0.5*B*(x1*v2 - x2*v1)"
//! # per-chart representatives: lagrangian_0 = "...", lagrangian_1 = "..."
//! # optional forcing: force1 = "...", ..., forcen = "..."
//!
//! [constants]
//! m = 1.0
//!
//! [atlas]
//! kind = "euclidean"        # or "circle" with g01 = "..." and optional g10 = "..."
//!
//! [gauge]
//! chi = "sin(x1)*cos(x2)"   # named gauge functions
//!
//! [section]
//! phi = "sin(x1)"           # or phi_0, phi_1 on the circle
//!
//! [[curve]]                 # one table per segment of the chart schedule
//! chart = 0
//! t0 = 0
//! t1 = 1
//! x1 = "t"
//! ```
//!
//! Numeric fields accept numbers or expression strings over the constants.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;
use toml::{Table, Value};

use crate::dynamics::{Forcing, GaugeClassLagrangian};
use crate::error::Error;
use crate::exprlang::{coordinate_names, parse, phase_names, Ast, Constants, Expr};
use crate::geometry::{AVSection, Atlas, CurveSpec, GaugeFunction, DEFAULT_OVERLAP_SAMPLES};

/// Tolerance for the atlas antisymmetry and cocycle checks.
pub const ATLAS_TOL: f64 = 1e-12;
/// Tolerance for sampled Lagrangian overlap compatibility.
pub const LAGRANGIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("validation failed: {invariant} at {location}: {message}")]
    Validation {
        invariant: String,
        location: String,
        message: String,
        defect: Option<f64>,
    },
}

impl ConfigError {
    fn invalid(invariant: &str, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            invariant: invariant.into(),
            location: location.into(),
            message: message.into(),
            defect: None,
        }
    }

    fn from_core(location: &str, e: Error) -> Self {
        match e {
            Error::Validation { invariant, location: at, defect } => Self::Validation {
                invariant,
                location: format!("{location}, {at}"),
                message: format!("defect {defect:e}"),
                defect: Some(defect),
            },
            other => Self::invalid("well-formed definition", location, other.to_string()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NamedGauge {
    pub name: String,
    pub source: String,
    pub function: GaugeFunction,
}

/// A validated system definition.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    pub name: String,
    pub dim: usize,
    pub constants: Constants,
    pub atlas: Arc<Atlas>,
    pub lagrangian: GaugeClassLagrangian,
    pub gauges: Vec<NamedGauge>,
    pub forcing: Option<Forcing>,
    pub curve: Option<CurveSpec>,
    pub section: Option<AVSection>,
}

pub fn load_config(path: &Path) -> Result<SystemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn expect_table<'a>(root: &'a Table, key: &str, required: bool) -> Result<Option<&'a Table>, ConfigError> {
    match root.get(key) {
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(ConfigError::invalid("section layout", key, "must be a table")),
        None if required => Err(ConfigError::invalid("section layout", key, "missing section")),
        None => Ok(None),
    }
}

fn string<'a>(table: &'a Table, key: &str, section: &str) -> Result<Option<&'a str>, ConfigError> {
    match table.get(key) {
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ConfigError::invalid("value type", format!("{section}.{key}"), "expected a string")),
        None => Ok(None),
    }
}

fn number(value: &Value, consts: &Constants, location: &str) -> Result<f64, ConfigError> {
    match value {
        Value::Integer(i) => Ok(*i as f64),
        Value::Float(f) => Ok(*f),
        Value::String(s) => {
            let e = Expr::parse(s, &[], consts)
                .map_err(|e| ConfigError::invalid("expression", location, e.to_string()))?;
            e.eval::<f64>(&[]).map_err(|e| ConfigError::invalid("expression", location, e.to_string()))
        }
        _ => Err(ConfigError::invalid("value type", location, "expected a number")),
    }
}

fn index(value: &Value, location: &str) -> Result<usize, ConfigError> {
    let parsed = match value {
        Value::Integer(i) => usize::try_from(*i).ok(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    parsed.ok_or_else(|| ConfigError::invalid("value type", location, "expected a non-negative integer"))
}

fn expression(src: &str, allowed: &BTreeSet<String>, location: &str) -> Result<Ast, ConfigError> {
    let ast = parse(src).map_err(|e| ConfigError::invalid("expression", location, e.to_string()))?;
    if let Some(v) = ast.free_variables().into_iter().find(|v| !allowed.contains(v)) {
        return Err(ConfigError::invalid("free variables", location, format!("unbound variable {v}")));
    }
    Ok(ast)
}

fn reject_unknown(table: &Table, section: &str, known: impl Fn(&str) -> bool) -> Result<(), ConfigError> {
    match table.keys().find(|k| !known(k)) {
        Some(k) => Err(ConfigError::invalid("known keys", format!("{section}.{k}"), "unknown key")),
        None => Ok(()),
    }
}

/// Per-chart expressions from `key` or `key_0`, `key_1`, ...
fn per_chart(
    table: &Table,
    key: &str,
    section: &str,
    charts: usize,
    allowed: &BTreeSet<String>,
) -> Result<Option<Vec<Ast>>, ConfigError> {
    if let Some(src) = string(table, key, section)? {
        return Ok(Some(vec![expression(src, allowed, &format!("{section}.{key}"))?]));
    }
    let mut out = Vec::new();
    for c in 0..charts {
        let k = format!("{key}_{c}");
        match string(table, &k, section)? {
            Some(src) => out.push(expression(src, allowed, &format!("{section}.{k}"))?),
            None if c == 0 => return Ok(None),
            None => {
                return Err(ConfigError::invalid(
                    "per-chart representatives",
                    format!("{section}.{k}"),
                    "missing representative",
                ))
            }
        }
    }
    Ok(Some(out))
}

pub fn parse_config(src: &str) -> Result<SystemConfig, ConfigError> {
    let root: Table = src.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(src, s.start));
        ConfigError::Syntax { line, column, message: e.message().to_string() }
    })?;
    reject_unknown(&root, "top level", |k| {
        matches!(k, "system" | "constants" | "atlas" | "gauge" | "section" | "curve")
    })?;

    let mut constants = Constants::new();
    if let Some(table) = expect_table(&root, "constants", false)? {
        for (name, value) in table {
            if parse(name).ok() != Some(Ast::Var(name.clone())) {
                return Err(ConfigError::invalid("constant names", format!("constants.{name}"), "not an identifier"));
            }
            let x = number(value, &constants, &format!("constants.{name}"))?;
            constants.insert(name.clone(), x);
        }
    }

    let system = expect_table(&root, "system", true)?.expect("required");
    let dim_value = system
        .get("dim")
        .ok_or_else(|| ConfigError::invalid("section layout", "system.dim", "missing key"))?;
    let dim = index(dim_value, "system.dim")?;
    if dim == 0 {
        return Err(ConfigError::invalid("dimension", "system.dim", "must be at least 1"));
    }
    reject_unknown(system, "system", |k| {
        k == "name"
            || k == "dim"
            || k == "lagrangian"
            || k.strip_prefix("lagrangian_").is_some_and(|c| c.parse::<usize>().is_ok())
            || k.strip_prefix("force").is_some_and(|c| c.parse::<usize>().is_ok_and(|i| (1..=dim).contains(&i)))
    })?;
    let name = string(system, "name", "system")?.unwrap_or("system").to_string();

    let names = |list: Vec<String>| -> BTreeSet<String> {
        list.into_iter().chain(constants.names().map(str::to_string)).collect()
    };
    let coords = names(coordinate_names(dim));
    let phase = names(phase_names(dim));

    let atlas_table = expect_table(&root, "atlas", false)?;
    let kind = match atlas_table {
        Some(t) => string(t, "kind", "atlas")?.unwrap_or("euclidean"),
        None => "euclidean",
    };
    let atlas = match kind {
        "euclidean" => {
            if let Some(t) = atlas_table {
                reject_unknown(t, "atlas", |k| k == "kind")?;
            }
            Atlas::euclidean(dim, constants.clone()).map_err(|e| ConfigError::from_core("atlas", e))?
        }
        "circle" => {
            let t = atlas_table.expect("kind came from the table");
            reject_unknown(t, "atlas", |k| matches!(k, "kind" | "g01" | "g10"))?;
            if dim != 1 {
                return Err(ConfigError::invalid("circle dimension", "atlas.kind", "the circle atlas needs dim = 1"));
            }
            let g01 = match string(t, "g01", "atlas")? {
                Some(s) => expression(s, &coords, "atlas.g01")?,
                None => Ast::Number(0.0),
            };
            let g10 = string(t, "g10", "atlas")?.map(|s| expression(s, &coords, "atlas.g10")).transpose()?;
            Atlas::circle(&g01, g10.as_ref(), constants.clone())
                .map_err(|e| ConfigError::invalid("expression", "atlas", e.to_string()))?
        }
        other => {
            return Err(ConfigError::invalid("atlas kind", "atlas.kind", format!("unknown atlas `{other}`")))
        }
    };
    atlas
        .validate(DEFAULT_OVERLAP_SAMPLES, ATLAS_TOL)
        .map_err(|e| ConfigError::from_core("atlas", e))?;
    let atlas = Arc::new(atlas);
    let charts = atlas.charts().len();

    let reps = per_chart(system, "lagrangian", "system", charts, &phase)?
        .ok_or_else(|| ConfigError::invalid("section layout", "system.lagrangian", "missing Lagrangian"))?;
    let lagrangian =
        GaugeClassLagrangian::new(atlas.clone(), reps).map_err(|e| ConfigError::from_core("system.lagrangian", e))?;
    lagrangian
        .validate(DEFAULT_OVERLAP_SAMPLES, LAGRANGIAN_TOL)
        .map_err(|e| ConfigError::from_core("system.lagrangian", e))?;

    let force_keys: Vec<String> = (1..=dim).map(|i| format!("force{i}")).collect();
    let present = force_keys.iter().filter(|k| system.contains_key(k.as_str())).count();
    let forcing = match present {
        0 => None,
        n if n == dim => {
            let comps = force_keys
                .iter()
                .map(|k| {
                    let src = string(system, k, "system")?.expect("present");
                    expression(src, &phase, &format!("system.{k}"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(Forcing::new(&atlas, comps).map_err(|e| ConfigError::from_core("system.force", e))?)
        }
        _ => {
            return Err(ConfigError::invalid(
                "forcing components",
                "system.force",
                format!("give all of force1..force{dim} or none"),
            ))
        }
    };

    let mut gauges = Vec::new();
    if let Some(t) = expect_table(&root, "gauge", false)? {
        for (key, value) in t {
            let location = format!("gauge.{key}");
            let Value::String(src) = value else {
                return Err(ConfigError::invalid("value type", location, "expected a string"));
            };
            let ast = expression(src, &coords, &location)?;
            let function = GaugeFunction::new(&atlas, vec![ast]).map_err(|e| ConfigError::from_core(&location, e))?;
            let defect = function
                .compatibility_defect(&atlas, DEFAULT_OVERLAP_SAMPLES)
                .map_err(|e| ConfigError::from_core(&location, e))?;
            if defect > LAGRANGIAN_TOL {
                return Err(ConfigError::Validation {
                    invariant: "gauge function agrees on overlaps".into(),
                    location,
                    message: format!("defect {defect:e}"),
                    defect: Some(defect),
                });
            }
            gauges.push(NamedGauge { name: key.clone(), source: src.clone(), function });
        }
    }

    let section = match expect_table(&root, "section", false)? {
        Some(t) => {
            reject_unknown(t, "section", |k| k == "phi" || k.strip_prefix("phi_").is_some())?;
            let reps = per_chart(t, "phi", "section", charts, &coords)?
                .ok_or_else(|| ConfigError::invalid("section layout", "section.phi", "missing representative"))?;
            let phi = AVSection::new(&atlas, reps).map_err(|e| ConfigError::from_core("section", e))?;
            let defect = phi
                .compatibility_defect(&atlas, DEFAULT_OVERLAP_SAMPLES)
                .map_err(|e| ConfigError::from_core("section", e))?;
            if defect > LAGRANGIAN_TOL {
                return Err(ConfigError::Validation {
                    invariant: "section compatibility phi_i - phi_j = g_ij".into(),
                    location: "section".into(),
                    message: format!("defect {defect:e}"),
                    defect: Some(defect),
                });
            }
            Some(phi)
        }
        None => None,
    };

    let curve = match root.get("curve") {
        None => None,
        Some(Value::Array(items)) => Some(parse_curve(items, dim, &atlas, &constants)?),
        Some(_) => return Err(ConfigError::invalid("section layout", "curve", "use [[curve]] tables")),
    };

    Ok(SystemConfig { name, dim, constants, atlas, lagrangian, gauges, forcing, curve, section })
}

fn parse_curve(items: &[Value], dim: usize, atlas: &Atlas, constants: &Constants) -> Result<CurveSpec, ConfigError> {
    let allowed: BTreeSet<String> =
        std::iter::once("t".to_string()).chain(constants.names().map(str::to_string)).collect();
    let mut pieces = Vec::new();
    for (k, item) in items.iter().enumerate() {
        let location = format!("curve[{k}]");
        let Value::Table(t) = item else {
            return Err(ConfigError::invalid("section layout", location, "must be a table"));
        };
        let coord_keys = coordinate_names(dim);
        reject_unknown(t, &location, |key| matches!(key, "chart" | "t0" | "t1") || coord_keys.iter().any(|c| c == key))?;
        let get = |key: &str| {
            t.get(key).ok_or_else(|| ConfigError::invalid("section layout", format!("{location}.{key}"), "missing key"))
        };
        let chart = match t.get("chart") {
            Some(v) => index(v, &format!("{location}.chart"))?,
            None => 0,
        };
        let t0 = number(get("t0")?, constants, &format!("{location}.t0"))?;
        let t1 = number(get("t1")?, constants, &format!("{location}.t1"))?;
        let coords = coord_keys
            .iter()
            .map(|c| {
                let loc = format!("{location}.{c}");
                match get(c)? {
                    Value::String(s) => expression(s, &allowed, &loc),
                    other => Ok(Ast::Number(number(other, constants, &loc)?)),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        pieces.push((chart, t0, t1, coords));
    }
    CurveSpec::new(atlas, pieces).map_err(|e| ConfigError::from_core("curve", e))
}
