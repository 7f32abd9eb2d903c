//! JSON run configuration: file, then `--set key=value` overrides, then
//! typed validation with unknown keys rejected.

use anyhow::{anyhow, bail, Context, Result};
use hypergaussians::hypergauss::SCHEMA_VERSION;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

pub type Object = Map<String, Value>;

/// Reads `path` (if any) as a JSON object and applies the overrides in order.
///
/// An override value is parsed as JSON when possible and taken as a plain
/// string otherwise, so `preset=blink` and `n_list=[8]` both work.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Object> {
    let mut obj = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            match serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", p.display()))? {
                Value::Object(o) => o,
                _ => bail!("config {} must be a JSON object", p.display()),
            }
        }
        None => Object::new(),
    };
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("override `{s}` is not of the form key=value"))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("override `{s}` has an empty key");
        }
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        obj.insert(k.to_string(), v);
    }
    Ok(obj)
}

/// Moves the listed keys out of `obj` into a new object.
pub fn take(obj: &mut Object, keys: &[&str]) -> Object {
    keys.iter().filter_map(|k| obj.remove_entry(*k)).collect()
}

pub fn typed<T: DeserializeOwned>(obj: Object, what: &str) -> Result<T> {
    serde_json::from_value(Value::Object(obj)).with_context(|| format!("invalid {what} config"))
}

/// Serializes `parts` into a single object; later parts win on collisions.
pub fn merged(parts: &[&dyn erased::Json]) -> Value {
    let mut out = Object::new();
    for p in parts {
        if let Value::Object(o) = p.json() {
            out.extend(o);
        }
    }
    Value::Object(out)
}

mod erased {
    pub trait Json {
        fn json(&self) -> serde_json::Value;
    }

    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> serde_json::Value {
            serde_json::to_value(self).expect("config serializes")
        }
    }
}

pub fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        bail!("schema_version {v} is not supported (expected {SCHEMA_VERSION})");
    }
    Ok(())
}

fn schema() -> u32 {
    SCHEMA_VERSION
}

fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn blink() -> String {
    "blink".into()
}

fn grad_eps() -> f64 {
    1e-5
}

fn grad_tol() -> f64 {
    1e-4
}

fn all_ops() -> Vec<String> {
    hypergaussians::gradients::GradOp::ALL.iter().map(|o| o.name().to_string()).collect()
}

/// Keys shared by every subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Common {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default = "out_dir")]
    pub output_dir: PathBuf,
}

pub const COMMON_KEYS: [&str; 2] = ["schema_version", "output_dir"];

/// Scene selection for `fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneChoice {
    /// JSON scene description; overrides `preset`.
    #[serde(default)]
    pub scene_file: Option<PathBuf>,
    #[serde(default = "blink")]
    pub preset: String,
}

pub const SCENE_KEYS: [&str; 2] = ["scene_file", "preset"];

/// Inputs of `render` and `uncertainty`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRun {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default = "out_dir")]
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Single frame; all frames when absent.
    #[serde(default)]
    pub frame: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckRun {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default = "out_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    #[serde(default = "one")]
    pub seeds: u64,
    #[serde(default = "grad_eps")]
    pub eps: f64,
    #[serde(default = "all_ops")]
    pub ops: Vec<String>,
    #[serde(default = "grad_tol")]
    pub tolerance: f64,
}

fn one() -> u64 {
    1
}
