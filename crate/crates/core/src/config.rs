//! Run configuration: a TOML tree with dotted-key overrides, resolved
//! against scenario defaults and validated in full.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptivity::{AdaptConfig, AdaptSpaces};
use crate::dg::Weight;
use crate::error::{Error, Result};
use crate::integrators::{integrators, FieldModel, IntegratorConfig};
use crate::lowrank::Truncation;
use crate::poisson::poisson_strategies;
use crate::scenarios::{scenarios, PerturbedMaxwellian, Scenario};

#[derive(Debug, Clone, Default)]
struct RawConfig {
    scenario: Option<String>,
    threads: Option<usize>,
    mesh: RawMesh,
    time: RawTime,
    integrator: RawIntegrator,
    field: RawField,
    adaptivity: RawAdapt,
    output: RawOutput,
    custom: Option<PerturbedMaxwellian>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    dim: Option<usize>,
    x_domain: Option<Vec<[f64; 2]>>,
    v_domain: Option<Vec<[f64; 2]>>,
    n_x: Option<Vec<usize>>,
    n_v: Option<Vec<usize>>,
    degree: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    tau: Option<f64>,
    t_final: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    scheme: Option<String>,
    alpha: Option<f64>,
    m: Option<usize>,
    weight: Option<Weight>,
    truncation: Option<Truncation>,
    max_rank: Option<usize>,
    min_rank: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    model: Option<FieldModel>,
    solver: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdapt {
    enabled: Option<bool>,
    epsilon: Option<f64>,
    c: Option<f64>,
    max_level: Option<u8>,
    spaces: Option<AdaptSpaces>,
    stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    stride: Option<usize>,
    checkpoint_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub dim: usize,
    pub x_domain: Vec<[f64; 2]>,
    pub v_domain: Vec<[f64; 2]>,
    pub n_x: Vec<usize>,
    pub n_v: Vec<usize>,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: String,
    pub alpha: f64,
    pub m: usize,
    pub weight: Weight,
    pub truncation: Truncation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub model: FieldModel,
    pub solver: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptivityConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub c: f64,
    pub max_level: u8,
    pub spaces: AdaptSpaces,
    /// Adapt every `stride` steps.
    pub stride: usize,
}

impl AdaptivityConfig {
    pub fn adapt(&self) -> AdaptConfig {
        AdaptConfig { epsilon: self.epsilon, c: self.c, max_level: self.max_level, spaces: self.spaces }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub stride: usize,
    /// Write an intermediate checkpoint every this many steps (0: never).
    pub checkpoint_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    pub tau: f64,
    pub t_final: f64,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub integrator: SchemeConfig,
    pub field: FieldConfig,
    pub adaptivity: AdaptivityConfig,
    pub output: OutputConfig,
    pub custom: PerturbedMaxwellian,
}

impl SimConfig {
    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            tau: self.time.tau,
            alpha: self.integrator.alpha,
            truncation: self.integrator.truncation,
            max_rank: self.integrator.max_rank,
        }
    }

    pub fn scenario_impl(&self) -> Result<Box<dyn Scenario>> {
        scenarios().get(&self.scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved configurations serialize")
    }
}

/// Parses `value` as a TOML value, falling back to a plain string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

const SECTIONS: [(&str, &[&str]); 7] = [
    ("mesh", &["dim", "x_domain", "v_domain", "n_x", "n_v", "degree"]),
    ("time", &["tau", "t_final"]),
    ("integrator", &["scheme", "alpha", "m", "weight", "truncation", "max_rank", "min_rank"]),
    ("field", &["model", "solver"]),
    ("adaptivity", &["enabled", "epsilon", "c", "max_level", "spaces", "stride"]),
    ("output", &["dir", "stride", "checkpoint_stride"]),
    ("custom", &["amplitude", "wavenumber", "v_mean", "v_sigma"]),
];

fn section<T: serde::de::DeserializeOwned + Default>(
    table: &toml::Table,
    name: &str,
    errors: &mut Vec<String>,
) -> Option<T> {
    let value = table.get(name)?;
    let Some(inner) = value.as_table() else {
        errors.push(format!("{name} must be a table"));
        return None;
    };
    let known = SECTIONS.iter().find(|(n, _)| *n == name).map(|(_, k)| *k).unwrap_or(&[]);
    let unknown: Vec<&str> = inner.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
    if !unknown.is_empty() {
        errors.push(format!("{name}: unknown keys {} (known: {})", unknown.join(", "), known.join(", ")));
        return None;
    }
    match value.clone().try_into() {
        Ok(v) => Some(v),
        Err(e) => {
            let e: toml::de::Error = e;
            errors.push(format!("{name}: {}", e.message().trim()));
            None
        }
    }
}

/// Deserializes each section on its own so that every problem is reported.
fn parse_sections(table: toml::Table) -> (RawConfig, Vec<String>) {
    let mut errors = Vec::new();
    for key in table.keys() {
        if key != "scenario" && key != "threads" && !SECTIONS.iter().any(|(n, _)| n == key) {
            errors.push(format!("unknown top-level key `{key}`"));
        }
    }
    let scenario = match table.get("scenario") {
        None => None,
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(v) => {
            errors.push(format!("scenario must be a string, got {v}"));
            None
        }
    };
    let threads = match table.get("threads") {
        None => None,
        Some(toml::Value::Integer(n)) if *n >= 0 => Some(*n as usize),
        Some(v) => {
            errors.push(format!("threads must be a non-negative integer, got {v}"));
            None
        }
    };
    let raw = RawConfig {
        scenario,
        threads,
        mesh: section(&table, "mesh", &mut errors).unwrap_or_default(),
        time: section(&table, "time", &mut errors).unwrap_or_default(),
        integrator: section(&table, "integrator", &mut errors).unwrap_or_default(),
        field: section(&table, "field", &mut errors).unwrap_or_default(),
        adaptivity: section(&table, "adaptivity", &mut errors).unwrap_or_default(),
        output: section(&table, "output", &mut errors).unwrap_or_default(),
        custom: section(&table, "custom", &mut errors),
    };
    (raw, errors)
}

/// Applies `key.path=value` to a TOML table.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

pub fn load_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Resolves a TOML tree against scenario defaults and validates it, listing
/// every violation.
pub fn resolve(table: toml::Table) -> Result<SimConfig> {
    let (raw, mut errors) = parse_sections(table);
    let name = raw.scenario.clone().unwrap_or_else(|| "landau_1d".to_string());
    let scenario = match scenarios().get(&name) {
        Ok(s) => s,
        Err(e) => {
            errors.push(format!("scenario: {e}"));
            return Err(Error::Config(errors.join("; ")));
        }
    };
    let d = scenario.defaults();

    let dim = if name == "custom" {
        raw.mesh
            .dim
            .or(raw.mesh.n_x.as_ref().map(|n| n.len()))
            .unwrap_or(d.dim)
    } else {
        if raw.mesh.dim.is_some_and(|x| x != d.dim) {
            errors.push(format!("mesh.dim: scenario {name} is {}-dimensional", d.dim));
        }
        d.dim
    };
    let widen = |v: &[usize]| if v.len() == 1 && dim == 2 { vec![v[0]; 2] } else { v.to_vec() };
    let pairs = |v: &[(f64, f64)]| {
        let x: Vec<[f64; 2]> = v.iter().map(|(a, b)| [*a, *b]).collect();
        if x.len() == 1 && dim == 2 {
            vec![x[0]; 2]
        } else {
            x
        }
    };
    let mesh = MeshConfig {
        dim,
        x_domain: raw.mesh.x_domain.unwrap_or_else(|| pairs(&d.x_domain)),
        v_domain: raw.mesh.v_domain.unwrap_or_else(|| pairs(&d.v_domain)),
        n_x: raw.mesh.n_x.map(|v| widen(&v)).unwrap_or_else(|| widen(&d.n_x)),
        n_v: raw.mesh.n_v.map(|v| widen(&v)).unwrap_or_else(|| widen(&d.n_v)),
        degree: raw.mesh.degree.unwrap_or(d.degree),
    };
    if !(1..=2).contains(&dim) {
        errors.push(format!("mesh.dim must be 1 or 2, got {dim}"));
    }
    for (label, dom) in [("mesh.x_domain", &mesh.x_domain), ("mesh.v_domain", &mesh.v_domain)] {
        if dom.len() != dim {
            errors.push(format!("{label} needs {dim} intervals, got {}", dom.len()));
        }
        if dom.iter().any(|[a, b]| !(b > a) || !a.is_finite() || !b.is_finite()) {
            errors.push(format!("{label} intervals must satisfy lo < hi"));
        }
    }
    for (label, n) in [("mesh.n_x", &mesh.n_x), ("mesh.n_v", &mesh.n_v)] {
        if n.len() != dim {
            errors.push(format!("{label} needs {dim} entries, got {}", n.len()));
        }
        if n.iter().any(|&k| k == 0) {
            errors.push(format!("{label} entries must be positive"));
        }
    }
    if mesh.degree == 0 {
        errors.push("mesh.degree must be >= 1".to_string());
    }

    let time = TimeConfig {
        tau: raw.time.tau.unwrap_or(d.tau),
        t_final: raw.time.t_final.unwrap_or(d.t_final),
    };
    if !(time.tau > 0.0) || !time.tau.is_finite() {
        errors.push(format!("time.tau must be > 0, got {}", time.tau));
    }
    if !(time.t_final > 0.0) || !time.t_final.is_finite() {
        errors.push(format!("time.t_final must be > 0, got {}", time.t_final));
    }

    let adapt_enabled = raw.adaptivity.enabled.unwrap_or(d.adaptive);
    let mut m = raw.integrator.m.unwrap_or(d.m);
    let mut weight = raw.integrator.weight.unwrap_or(if d.weighted { Weight::Gaussian } else { Weight::Unweighted });
    if adapt_enabled && m > 0 {
        log::warn!("adaptivity does not conserve moments; forcing integrator.m = 0 (was {m})");
        m = 0;
    }
    if adapt_enabled && raw.integrator.weight.is_none() {
        weight = Weight::Unweighted;
    }
    let integrator = SchemeConfig {
        scheme: raw.integrator.scheme.unwrap_or_else(|| d.integrator.to_string()),
        alpha: raw.integrator.alpha.unwrap_or(d.alpha),
        m,
        weight,
        truncation: raw.integrator.truncation.unwrap_or(d.truncation),
        max_rank: raw.integrator.max_rank,
        min_rank: raw.integrator.min_rank,
    };
    if !integrators().contains(&integrator.scheme) {
        errors.push(format!(
            "integrator.scheme: unknown `{}` (available: {})",
            integrator.scheme,
            integrators().names().join(", ")
        ));
    }
    if !(0.0..=1.0).contains(&integrator.alpha) {
        errors.push(format!("integrator.alpha must lie in [0, 1], got {}", integrator.alpha));
    }
    if integrator.m > dim + 2 {
        errors.push(format!("integrator.m must be <= {} in {dim} dimensions, got {}", dim + 2, integrator.m));
    }
    if integrator.m > 0 && integrator.weight == Weight::Unweighted {
        errors.push("integrator.m > 0 needs integrator.weight = \"gaussian\"".to_string());
    }
    match integrator.truncation {
        Truncation::Tolerance { epsilon } if !(epsilon >= 0.0) => {
            errors.push(format!("integrator.truncation.epsilon must be >= 0, got {epsilon}"))
        }
        Truncation::FixedRank { rank } if rank < integrator.m.max(1) => errors.push(format!(
            "integrator.truncation.rank must be >= max(m, 1) = {}, got {rank}",
            integrator.m.max(1)
        )),
        _ => {}
    }
    if let Some(cap) = integrator.max_rank {
        if cap <= integrator.m {
            errors.push(format!("integrator.max_rank must exceed m = {}, got {cap}", integrator.m));
        }
    }
    if integrator.scheme == "ksl" && adapt_enabled {
        errors.push("integrator.scheme = \"ksl\" runs at fixed rank and cannot be combined with adaptivity".into());
    }

    let field = FieldConfig {
        model: raw.field.model.unwrap_or(d.field),
        solver: raw.field.solver.unwrap_or_else(|| "dense_cholesky".to_string()),
    };
    if !poisson_strategies().contains(&field.solver) {
        errors.push(format!(
            "field.solver: unknown `{}` (available: {})",
            field.solver,
            poisson_strategies().names().join(", ")
        ));
    }

    let adaptivity = AdaptivityConfig {
        enabled: adapt_enabled,
        epsilon: raw.adaptivity.epsilon.unwrap_or(d.adapt_epsilon),
        c: raw.adaptivity.c.unwrap_or(d.adapt_c),
        max_level: raw.adaptivity.max_level.unwrap_or(3),
        spaces: raw.adaptivity.spaces.unwrap_or(AdaptSpaces::Spatial),
        stride: raw.adaptivity.stride.unwrap_or(1),
    };
    if !(adaptivity.epsilon > 0.0) {
        errors.push(format!("adaptivity.epsilon must be > 0, got {}", adaptivity.epsilon));
    }
    if !(adaptivity.c > 0.0 && adaptivity.c < 1.0) {
        errors.push(format!("adaptivity.c must lie in (0, 1), got {}", adaptivity.c));
    }
    if adaptivity.stride == 0 {
        errors.push("adaptivity.stride must be >= 1".to_string());
    }

    let output = OutputConfig {
        dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("output")),
        stride: raw.output.stride.unwrap_or(1),
        checkpoint_stride: raw.output.checkpoint_stride.unwrap_or(0),
    };
    if output.stride == 0 {
        errors.push("output.stride must be >= 1".to_string());
    }
    if raw.threads == Some(0) {
        errors.push("threads must be >= 1".to_string());
    }
    let custom = raw.custom.unwrap_or_default();
    if name == "custom" && !(custom.v_sigma > 0.0) {
        errors.push(format!("custom.v_sigma must be > 0, got {}", custom.v_sigma));
    }

    if !errors.is_empty() {
        return Err(Error::Config(errors.join("; ")));
    }
    Ok(SimConfig {
        scenario: name,
        threads: raw.threads,
        mesh,
        time,
        integrator,
        field,
        adaptivity,
        output,
        custom,
    })
}

/// Loads `path` (if given), applies overrides and resolves.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<SimConfig> {
    let mut table = match path {
        Some(p) => load_table(p)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    resolve(table)
}
