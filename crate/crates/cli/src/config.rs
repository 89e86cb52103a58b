//! Experiment configuration: JSON schema, `--set` overrides and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mmpart::contraction::SampleMethod;
use mmpart::embedding::ControlCoupling;
use mmpart::interval::{IntervalVector, ToleranceVector};
use mmpart::models::{builtin_network, DoubleIntegrator, Plant, Scenario, VehicleSystem};
use mmpart::nn::MlpNetwork;
use mmpart::partition::{evenly_spaced_instants, AlgorithmParams};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// A configuration problem, located by key path and, when known, source line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.path.is_empty()) {
            (Some(l), false) => write!(f, "line {l}: {}: {}", self.path, self.message),
            (Some(l), true) => write!(f, "line {l}: {}", self.message),
            (None, false) => write!(f, "{}: {}", self.path, self.message),
            (None, true) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `vehicle` or `double-integrator`.
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_instants: Option<Vec<f64>>,
    pub dt: f64,
    pub final_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// Per-coordinate tolerance; entries may be `"inf"`. Ignored in
    /// non-adaptive mode.
    #[serde(default, with = "eps_serde", skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub max_depth: usize,
    #[serde(default)]
    pub nn_depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Adaptive,
    /// Uniform partitioning to `max_depth` at the start, no tolerance trigger.
    NonAdaptiveUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    #[default]
    Faces,
    FullBox,
}

impl From<Coupling> for ControlCoupling {
    fn from(c: Coupling) -> Self {
        match c {
            Coupling::Faces => ControlCoupling::Faces,
            Coupling::FullBox => ControlCoupling::FullBox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trajectories: default_trajectories(),
            slack: default_slack(),
        }
    }
}

/// Everything one experiment needs. Paths in `network` are relative to the
/// configuration file; `builtin:<name>` selects a bundled network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub network: String,
    pub initial_set: BoxConfig,
    #[serde(default)]
    pub disturbance_set: BoxConfig,
    pub time: TimeConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub diagnostics: SampleMethod,
}

fn one() -> f64 {
    1.0
}

fn default_trajectories() -> usize {
    200
}

fn default_slack() -> f64 {
    1e-9
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_repetitions() -> usize {
    20
}

mod eps_serde {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let v = v.as_ref().expect("skipped when absent");
        let items: Vec<Value> = v
            .iter()
            .map(|&e| {
                if e.is_infinite() {
                    Value::from("inf")
                } else {
                    Value::from(e)
                }
            })
            .collect();
        items.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw: Vec<Entry> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|e| match e {
                Entry::Num(x) => Ok(x),
                Entry::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity") => {
                    Ok(f64::INFINITY)
                }
                Entry::Text(t) => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{t}\""
                ))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

/// Line (1-based) of the key at dotted `path` in `src`, found by scanning
/// for each key in turn.
fn locate(src: &str, path: &str) -> Option<usize> {
    let mut pos = 0;
    let mut found = false;
    for seg in path.split('.') {
        if seg.parse::<usize>().is_ok() {
            continue;
        }
        let key = format!("\"{seg}\"");
        pos += src[pos..].find(&key)?;
        found = true;
    }
    found.then(|| src[..pos].matches('\n').count() + 1)
}

/// Applies one `key=value` override. The value is read as JSON when it
/// parses, otherwise as a string; numeric segments index arrays.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        ConfigError::at(
            "",
            format!("override `{spec}` is not of the form key=value"),
        )
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segs: Vec<&str> = key.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::at(key, "empty key segment"));
    }
    let mut cur = root;
    for (k, seg) in segs.iter().enumerate() {
        let last = k + 1 == segs.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| ConfigError::at(key, format!("`{seg}` is not an array index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    ConfigError::at(key, format!("index {idx} out of range (length {len})"))
                })?
            }
            Value::Object(map) => {
                if !map.contains_key(*seg) {
                    map.insert(
                        seg.to_string(),
                        if last {
                            Value::Null
                        } else {
                            Value::Object(Default::default())
                        },
                    );
                }
                map.get_mut(*seg).unwrap()
            }
            _ => return Err(ConfigError::at(key, format!("cannot descend into `{seg}`"))),
        };
    }
    *cur = value;
    Ok(())
}

/// Parses configuration text and applies overrides. Line numbers in errors
/// refer to `src`, or to the canonical rendering when overrides were given.
pub fn parse_config(src: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let syntax = |e: serde_json::Error, text: &str| {
        let line = if e.line() > 0 { Some(e.line()) } else { None };
        let msg = e.to_string();
        // serde_json appends " at line L column C"; keep only the message
        let msg = msg
            .rsplit_once(" at line ")
            .map_or(msg.as_str(), |p| p.0)
            .to_string();
        let path = unknown_field_path(&msg, text).unwrap_or_default();
        ConfigError {
            path,
            line,
            message: msg,
        }
    };
    let (cfg, text) = if overrides.is_empty() {
        (
            serde_json::from_str::<ExperimentConfig>(src).map_err(|e| syntax(e, src))?,
            src.to_string(),
        )
    } else {
        let mut v: Value = serde_json::from_str(src).map_err(|e| syntax(e, src))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let text = serde_json::to_string_pretty(&v).expect("values serialize");
        (
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| syntax(e, &text))?,
            text,
        )
    };
    cfg.check().map_err(|mut e| {
        e.line = locate(&text, &e.path);
        e
    })?;
    Ok(cfg)
}

fn unknown_field_path(msg: &str, _text: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}

/// Canonical JSON rendering; parsing it back yields an equal configuration.
pub fn canonical_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("configs serialize")
}

fn system_dims(name: &str) -> Option<(usize, usize, usize)> {
    match name {
        "vehicle" => Some((4, 2, 0)),
        "double-integrator" => Some((2, 1, 0)),
        _ => None,
    }
}

impl ExperimentConfig {
    /// Checks everything that does not need the network file.
    pub fn check(&self) -> Result<(), ConfigError> {
        let (n, _, q) = system_dims(&self.system.name).ok_or_else(|| {
            ConfigError::at(
                "system.name",
                format!(
                    "unknown system `{}` (expected vehicle or double-integrator)",
                    self.system.name
                ),
            )
        })?;
        let allowed: &[&str] = if self.system.name == "vehicle" {
            &["l_f", "l_r"]
        } else {
            &[]
        };
        for (k, v) in &self.system.params {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::at(
                    &format!("system.params.{k}"),
                    format!("unknown parameter for {}", self.system.name),
                ));
            }
            if !(v.is_finite() && *v > 0.0) {
                return Err(ConfigError::at(
                    &format!("system.params.{k}"),
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        check_box(&self.initial_set, n, "initial_set")?;
        check_box(&self.disturbance_set, q, "disturbance_set")?;
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return Err(ConfigError::at(
                "time.dt",
                format!("must be positive, got {}", t.dt),
            ));
        }
        if self.system.name == "double-integrator" && t.dt != 1.0 {
            return Err(ConfigError::at(
                "time.dt",
                "the double integrator is discrete-time and needs dt = 1",
            ));
        }
        match (&t.control_period, &t.control_instants) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::at(
                    "time.control_instants",
                    "give either control_period or control_instants, not both",
                ))
            }
            (None, None) => {
                return Err(ConfigError::at(
                    "time",
                    "control_period or control_instants is required",
                ))
            }
            (Some(p), None) if !(*p > 0.0 && p.is_finite()) => {
                return Err(ConfigError::at(
                    "time.control_period",
                    format!("must be positive, got {p}"),
                ))
            }
            (None, Some(v)) if v.first() != Some(&t.t0) && t.t0 != 0.0 => {
                return Err(ConfigError::at(
                    "time.t0",
                    "t0 must match the first control instant",
                ))
            }
            _ => {}
        }
        if !(t.final_time.is_finite()
            && t.final_time >= self.instants().first().copied().unwrap_or(t.t0))
        {
            return Err(ConfigError::at(
                "time.final_time",
                format!("must be finite and not before t0, got {}", t.final_time),
            ));
        }
        let a = &self.algorithm;
        if !(a.gamma > 0.0 && a.gamma <= 1.0) {
            return Err(ConfigError::at(
                "algorithm.gamma",
                format!("must lie in (0, 1], got {}", a.gamma),
            ));
        }
        match (&a.eps, self.mode) {
            (None, Mode::Adaptive) => {
                return Err(ConfigError::at(
                    "algorithm",
                    "adaptive mode needs algorithm.eps",
                ))
            }
            (Some(e), _) if e.len() != n => {
                return Err(ConfigError::at(
                    "algorithm.eps",
                    format!("expected {n} entries, got {}", e.len()),
                ))
            }
            (Some(e), _) if e.iter().any(|v| v.is_nan() || *v < 0.0) => {
                return Err(ConfigError::at(
                    "algorithm.eps",
                    "entries must be nonnegative or \"inf\"",
                ))
            }
            _ => {}
        }
        if self.repetitions == 0 {
            return Err(ConfigError::at("repetitions", "must be at least 1"));
        }
        if !(self.monte_carlo.slack >= 0.0) {
            return Err(ConfigError::at("monte_carlo.slack", "must be nonnegative"));
        }
        if matches!(
            self.diagnostics,
            SampleMethod::Grid(0)
                | SampleMethod::Sample(0)
                | SampleMethod::GridAndSample(0, _)
                | SampleMethod::GridAndSample(_, 0)
        ) {
            return Err(ConfigError::at(
                "diagnostics",
                "sample sizes must be positive",
            ));
        }
        self.params()
            .validate()
            .map_err(|e| ConfigError::at("time", e.to_string()))?;
        Ok(())
    }

    pub fn instants(&self) -> Vec<f64> {
        let t = &self.time;
        match (&t.control_instants, t.control_period) {
            (Some(v), _) => v.clone(),
            (None, Some(p)) => evenly_spaced_instants(t.t0, p, t.final_time),
            (None, None) => vec![],
        }
    }

    /// Tolerances actually used: all zero in non-adaptive mode.
    pub fn effective_eps(&self) -> Vec<f64> {
        let n = self.initial_set.lo.len();
        match self.mode {
            Mode::NonAdaptiveUniform => vec![0.0; n],
            Mode::Adaptive => self.algorithm.eps.clone().unwrap_or_default(),
        }
    }

    pub fn params(&self) -> AlgorithmParams {
        let eps = ToleranceVector::new(self.effective_eps())
            .unwrap_or_else(|_| ToleranceVector::uniform(0, 0.0).expect("empty"));
        AlgorithmParams::with_instants(eps, self.instants(), self.time.final_time, self.time.dt)
            .with_gamma(self.algorithm.gamma)
            .with_depths(self.algorithm.max_depth, self.algorithm.nn_depth)
    }

    /// Loads the network and assembles the scenario. `base` resolves
    /// relative network paths.
    pub fn build(&self, base: &Path) -> Result<Experiment, ConfigError> {
        self.check()?;
        let net = self.load_network(base)?;
        let (n, p, _) = system_dims(&self.system.name).expect("checked");
        if net.input_dim() != n || net.output_dim() != p {
            return Err(ConfigError::at(
                "network",
                format!(
                    "network maps {} -> {}, system needs {n} -> {p}",
                    net.input_dim(),
                    net.output_dim()
                ),
            ));
        }
        let net = Arc::new(net);
        let mut scenario = match self.system.name.as_str() {
            "vehicle" => {
                let get = |k: &str| self.system.params.get(k).copied().unwrap_or(1.0);
                let mut s = Scenario::vehicle(net);
                s.plant = Plant::Continuous(Arc::new(VehicleSystem::new(get("l_f"), get("l_r"))));
                s
            }
            _ => {
                let mut s = Scenario::double_integrator(net);
                s.plant = Plant::DiscreteLti(DoubleIntegrator::default());
                s
            }
        };
        let to_box =
            |b: &BoxConfig| IntervalVector::new(b.lo.clone(), b.hi.clone()).expect("checked");
        scenario.initial = to_box(&self.initial_set);
        scenario.disturbance = to_box(&self.disturbance_set);
        scenario.control_instants = self.instants();
        scenario.dt = self.time.dt;
        scenario.final_time = self.time.final_time;
        scenario.coupling = self.coupling.into();
        let params = self.params();
        let warnings = params
            .validate()
            .map_err(|e| ConfigError::at("time", e.to_string()))?;
        Ok(Experiment {
            config: self.clone(),
            scenario,
            params,
            warnings,
        })
    }

    fn load_network(&self, base: &Path) -> Result<MlpNetwork, ConfigError> {
        if let Some(name) = self.network.strip_prefix("builtin:") {
            return builtin_network(name).ok_or_else(|| {
                ConfigError::at("network", format!("no bundled network named `{name}`"))
            });
        }
        let path = base.join(&self.network);
        MlpNetwork::load(&path)
            .map_err(|e| ConfigError::at("network", format!("{}: {e}", path.display())))
    }
}

fn check_box(b: &BoxConfig, n: usize, key: &str) -> Result<(), ConfigError> {
    if b.lo.len() != n || b.hi.len() != n {
        return Err(ConfigError::at(
            &format!("{key}.lo"),
            format!(
                "expected {n} entries in lo and hi, got {} and {}",
                b.lo.len(),
                b.hi.len()
            ),
        ));
    }
    for i in 0..n {
        if !(b.lo[i].is_finite() && b.hi[i].is_finite() && b.lo[i] <= b.hi[i]) {
            return Err(ConfigError::at(
                &format!("{key}.hi"),
                format!(
                    "component {i}: need finite lo <= hi, got [{}, {}]",
                    b.lo[i], b.hi[i]
                ),
            ));
        }
    }
    Ok(())
}

/// A validated configuration with its network loaded.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub params: AlgorithmParams,
    pub warnings: Vec<String>,
}

impl Experiment {
    /// Reads, overrides, validates and builds the experiment in `path`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("", format!("{}: {e}", path.display())))?;
        let cfg = parse_config(&src, overrides)?;
        cfg.build(&config_dir(path))
    }
}

/// Directory used to resolve paths inside the configuration file at `path`.
pub fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."))
}
