//! Experiment configuration: a JSON file merged with command-line overrides
//! and validated against the published schema.

use std::collections::BTreeMap;
use std::path::{Path as FsPath, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Error;
use crate::geometry::FamilySpec;
use crate::ldp::ContainmentOptions;
use crate::sampler::{BuiltinTestFunction, Simulator};

/// The schema every merged configuration must satisfy.
pub const SCHEMA: &str = include_str!("../schema/config.schema.json");

/// Environment variable supplying the seed when neither the config nor the
/// flags do.
pub const SEED_VAR: &str = "EVOLVEBM_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Event {
    #[default]
    Tube,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainmentOverrides {
    pub half_width: Option<f64>,
    pub points: Option<usize>,
    pub smoothing: Option<f64>,
    pub times: Option<usize>,
}

impl ContainmentOverrides {
    pub fn options(&self) -> ContainmentOptions {
        let d = ContainmentOptions::default();
        ContainmentOptions {
            half_width: self.half_width.unwrap_or(d.half_width),
            points: self.points.unwrap_or(d.points),
            smoothing: self.smoothing.unwrap_or(d.smoothing),
            times: self.times.unwrap_or(d.times),
        }
    }
}

/// Everything a subcommand may read. Absent fields take per-subcommand
/// defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub subcommand: Option<String>,
    pub family: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub dim: Option<usize>,
    pub n_steps: Option<usize>,
    pub epsilon: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub n_samples: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub x1: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub radius: Option<f64>,
    pub t0: Option<f64>,
    pub h: Option<f64>,
    pub substeps: Option<usize>,
    pub slices: Option<usize>,
    pub simulator: Option<Simulator>,
    pub event: Option<Event>,
    pub test_function: Option<BuiltinTestFunction>,
    pub path: Option<PathBuf>,
    pub control: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub gradient_tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub reorthonormalize_every: Option<usize>,
    #[serde(default)]
    pub containment: ContainmentOverrides,
}

impl ExperimentConfig {
    pub fn family_spec(&self) -> Option<FamilySpec> {
        self.family.as_ref().map(|f| FamilySpec { family: f.clone(), params: self.params.clone(), dim: self.dim })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

/// Why a configuration could not be produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// Every violation found, one message each.
    Invalid(Vec<String>),
    /// The config file could not be read.
    Io(Error),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Invalid(v) => {
                writeln!(f, "invalid configuration ({} violation{}):", v.len(), if v.len() == 1 { "" } else { "s" })?;
                for m in v {
                    writeln!(f, "  - {m}")?;
                }
                Ok(())
            }
            ConfigError::Io(e) => write!(f, "{e}"),
        }
    }
}

fn compiled_schema() -> &'static jsonschema::JSONSchema {
    static SCHEMA_CELL: OnceLock<jsonschema::JSONSchema> = OnceLock::new();
    SCHEMA_CELL.get_or_init(|| {
        let schema: Value = serde_json::from_str(SCHEMA).expect("embedded schema is valid JSON");
        jsonschema::JSONSchema::compile(&schema).expect("embedded schema compiles")
    })
}

/// All schema violations of `value`, sorted for stable output.
pub fn schema_violations(value: &Value) -> Vec<String> {
    let mut out: Vec<String> = match compiled_schema().validate(value) {
        Ok(()) => Vec::new(),
        Err(errors) => errors
            .map(|e| {
                let at = e.instance_path.to_string();
                format!("{}: {e}", if at.is_empty() { "(root)".to_string() } else { at })
            })
            .collect(),
    };
    out.sort();
    out.dedup();
    out
}

/// Overlays `flags` on `base`. Nested objects merge key by key; everything
/// else is replaced.
pub fn merge(base: &mut Map<String, Value>, flags: Map<String, Value>) {
    for (k, v) in flags {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(dst)), Value::Object(src)) => dst.extend(src),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn read_config_file(path: &FsPath) -> Result<Map<String, Value>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io(Error::Io { path: path.display().to_string(), message: e.to_string() }))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ConfigError::Invalid(vec![format!("{}: top level must be a JSON object", path.display())])),
        Err(e) => Err(ConfigError::Invalid(vec![format!("{}: {e}", path.display())])),
    }
}

/// Merges the optional config file with `flags`, fills the seed from
/// `env_seed` if still absent, validates and deserializes.
pub fn resolve(
    file: Option<&FsPath>,
    flags: Map<String, Value>,
    env_seed: Option<&str>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut merged = match file {
        Some(p) => read_config_file(p)?,
        None => Map::new(),
    };
    merge(&mut merged, flags);
    let mut violations = Vec::new();
    if !merged.contains_key("seed") {
        if let Some(s) = env_seed {
            match s.trim().parse::<u64>() {
                Ok(v) => {
                    merged.insert("seed".into(), v.into());
                }
                Err(_) => violations.push(format!("{SEED_VAR}: `{s}` is not a nonnegative integer")),
            }
        }
    }
    let value = Value::Object(merged);
    violations.extend(schema_violations(&value));
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }
    serde_json::from_value(value).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn flags_win_and_objects_merge() {
        let mut base = obj(json!({"epsilon": 0.5, "params": {"a": 1.0, "b": 2.0}, "seed": 3}));
        merge(&mut base, obj(json!({"epsilon": 0.1, "params": {"b": 5.0}})));
        assert_eq!(Value::Object(base), json!({"epsilon": 0.1, "params": {"a": 1.0, "b": 5.0}, "seed": 3}));
    }

    #[test]
    fn every_violation_is_listed() {
        let flags = obj(json!({"epsilon": -1.0, "n_steps": 0, "family": "klein_bottle", "bogus": true}));
        let Err(ConfigError::Invalid(v)) = resolve(None, flags, None) else { panic!() };
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("/epsilon")));
        assert!(v.iter().any(|m| m.starts_with("/n_steps")));
        assert!(v.iter().any(|m| m.starts_with("/family")));
        assert!(v.iter().any(|m| m.contains("bogus")));
    }

    #[test]
    fn seed_precedence() {
        let cfg = resolve(None, Map::new(), Some("42")).unwrap();
        assert_eq!(cfg.seed(), 42);
        let cfg = resolve(None, obj(json!({"seed": 7})), Some("42")).unwrap();
        assert_eq!(cfg.seed(), 7);
        assert_eq!(resolve(None, Map::new(), None).unwrap().seed(), DEFAULT_SEED);
        assert!(matches!(resolve(None, Map::new(), Some("x")), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn typed_fields_deserialize() {
        let cfg = resolve(
            None,
            obj(json!({
                "family": "scalar1d", "params": {"a": 1, "b": 1},
                "test_function": {"kind": "coordinate", "index": 1},
                "simulator": "scalar-reference", "event": "exit",
                "containment": {"points": 11}
            })),
            None,
        )
        .unwrap();
        assert_eq!(cfg.family_spec().unwrap(), FamilySpec::new("scalar1d", &[("a", 1.0), ("b", 1.0)]));
        assert_eq!(cfg.test_function, Some(BuiltinTestFunction::Coordinate { index: 1 }));
        assert_eq!(cfg.simulator, Some(Simulator::ScalarReference));
        assert_eq!(cfg.event, Some(Event::Exit));
        assert_eq!(cfg.containment.options().points, 11);
        assert_eq!(cfg.containment.options().half_width, 3.0);
    }

    #[test]
    fn config_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "[1]").unwrap();
        assert!(matches!(resolve(Some(&p), Map::new(), None), Err(ConfigError::Invalid(_))));
        assert!(matches!(resolve(Some(&dir.path().join("none.json")), Map::new(), None), Err(ConfigError::Io(_))));
    }
}
