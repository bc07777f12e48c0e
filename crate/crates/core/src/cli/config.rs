use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{DatasetSpec, OodKind};
use crate::dynamics::{Activation, DriftSpec, DynamicsSpec, HiddenSpec, OuPrior};
use crate::error::{Error, Result};
use crate::inference::{AdamConfig, InitConfig, ModelConfig, TrainConfig};
use crate::solvers::{HorizontalCut, JumpMode, RegimeSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_train_frac() -> f64 {
    0.6
}
fn default_val_frac() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}
fn one() -> usize {
    1
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_frac: default_train_frac(),
            val_frac: default_val_frac(),
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub ood_kind: OodKind,
    /// OOD sample count; defaults to the test split size.
    #[serde(default)]
    pub ood_n: Option<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_hist_bins")]
    pub hist_bins: usize,
}

fn default_samples() -> usize {
    8
}
fn default_bins() -> usize {
    crate::metrics::DEFAULT_ECE_BINS
}
fn default_hist_bins() -> usize {
    30
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ood_kind: OodKind::UniformNoise,
            ood_n: None,
            samples: default_samples(),
            ece_bins: default_bins(),
            hist_bins: default_hist_bins(),
        }
    }
}

/// A complete training run. All randomness derives from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// A weight-path sampling setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub name: String,
    pub model: ModelConfig,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    10
}

pub const RUN_PRESETS: &[&str] = &["ode", "sde", "sdefirst", "sdefirst-fixw2", "odefirst", "horcut"];
pub const PATH_PRESETS: &[&str] = &["fig1-fixed", "fig1-continue", "fig2-coupled", "fig2-split", "zero"];

/// Stochasticity ratio of the vertical presets.
pub const PRESET_RATIO: f64 = 0.1;
/// Fraction of stochastic weights in the horizontal preset.
pub const HORCUT_RATIO: f64 = 0.5;

fn two_moons_model(schedule: RegimeSchedule, drift: DriftSpec) -> ModelConfig {
    ModelConfig {
        dynamics: DynamicsSpec {
            input_dim: 2,
            augment_dim: 2,
            hidden: Some(HiddenSpec {
                hidden: vec![16],
                activation: Activation::Softplus,
            }),
            drift,
            prior: OuPrior::default(),
            weight_dim: None,
        },
        schedule,
        sigma: 0.2,
        num_classes: 2,
        init: InitConfig::default(),
    }
}

/// Named run presets on two moons with 60 solver steps and `σ = 0.2`.
pub fn run_preset(name: &str) -> Result<RunConfig> {
    let steps = 60;
    let mlp = DriftSpec::Mlp {
        hidden: vec![32],
        activation: Activation::Softplus,
        prior_residual: false,
    };
    let (schedule, drift) = match name {
        "ode" => (RegimeSchedule::deterministic(steps), mlp),
        "sde" => (RegimeSchedule::full_sde(steps), mlp),
        "sdefirst" => (RegimeSchedule::sde_first(PRESET_RATIO, steps), mlp),
        "sdefirst-fixw2" => (
            RegimeSchedule {
                jump_mode: JumpMode::Learnable,
                ..RegimeSchedule::sde_first(PRESET_RATIO, steps)
            },
            mlp,
        ),
        "odefirst" => (RegimeSchedule::ode_first(PRESET_RATIO, steps), mlp),
        "horcut" => (
            RegimeSchedule {
                horizontal: Some(HorizontalCut::Ratio { ratio: HORCUT_RATIO }),
                ..RegimeSchedule::full_sde(steps)
            },
            DriftSpec::Split {
                hidden_s: vec![32],
                hidden_d: vec![32],
                activation: Activation::Softplus,
            },
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (run presets: {})",
                RUN_PRESETS.join(", ")
            )))
        }
    };
    Ok(RunConfig {
        name: name.to_string(),
        seed: 0,
        threads: 1,
        dataset: DatasetSpec::TwoMoons { n: 1000, noise_std: 0.1 },
        split: SplitConfig::default(),
        model: two_moons_model(schedule, drift),
        train: TrainConfig {
            epochs: 200,
            batch_size: 128,
            adam: AdamConfig::default(),
            ..TrainConfig::default()
        },
        eval: EvalConfig::default(),
    })
}

fn weight_only(weight_dim: usize, drift: DriftSpec, schedule: RegimeSchedule, sigma: f64, w0: Vec<f64>) -> ModelConfig {
    ModelConfig {
        dynamics: DynamicsSpec {
            input_dim: 0,
            augment_dim: 0,
            hidden: None,
            drift,
            prior: OuPrior::default(),
            weight_dim: Some(weight_dim),
        },
        schedule,
        sigma,
        num_classes: 0,
        init: InitConfig {
            w0: Some(w0),
            ..InitConfig::default()
        },
    }
}

/// Toy weight-path setups: `f_q = cos(20t)` off the window `(0.3, 0.6)` with
/// `σ = 1` inside, and the two-coordinate horizontal example.
pub fn paths_preset(name: &str) -> Result<PathsConfig> {
    let fig1 = |jump_mode| {
        weight_only(
            1,
            DriftSpec::Cosine {
                freq: 20.0,
                quiet_window: Some((0.3, 0.6)),
            },
            RegimeSchedule {
                t1: 0.3,
                t2: 0.6,
                jump_mode,
                ..RegimeSchedule::deterministic(100)
            },
            1.0,
            vec![0.0],
        )
    };
    let fig2 = |coupled| {
        weight_only(
            2,
            DriftSpec::TwoBlock { coupled },
            RegimeSchedule {
                horizontal: Some(HorizontalCut::Leading { m1: 1 }),
                ..RegimeSchedule::full_sde(60)
            },
            1.0,
            vec![1.0, 0.0],
        )
    };
    let model = match name {
        "fig1-fixed" => fig1(JumpMode::FixedAPriori),
        "fig1-continue" => fig1(JumpMode::Continue),
        "fig2-coupled" => fig2(true),
        "fig2-split" => fig2(false),
        "zero" => weight_only(2, DriftSpec::Zero, RegimeSchedule::deterministic(20), 0.0, vec![0.5, -1.5]),
        other => {
            return Err(Error::Config(format!(
                "unknown path preset `{other}` (path presets: {})",
                PATH_PRESETS.join(", ")
            )))
        }
    };
    Ok(PathsConfig {
        name: name.to_string(),
        model,
        seeds: default_seeds(),
    })
}

/// Applies `a.b.c=value`; `value` is parsed as JSON, falling back to a
/// string. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{path}`")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{key}` is not inside an object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("override `{path}` does not address an object field")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Recursively merges `patch` into `base` (objects merge, everything else
/// replaces).
pub fn deep_merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Resolves `spec` as a JSON file path, or else as a preset name. A file
/// may name a base preset with `"preset": "<name>"`; its other fields are
/// merged over the preset.
pub fn load_value<F>(spec: &str, preset: F) -> Result<Value>
where
    F: Fn(&str) -> Result<Value>,
{
    let path = Path::new(spec);
    if !path.exists() {
        return preset(spec);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(Value::String(base)) = value.as_object_mut().and_then(|o| o.remove("preset")) {
        let mut merged = preset(&base)?;
        deep_merge(&mut merged, &value);
        value = merged;
    }
    Ok(value)
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Config(e.to_string()))
}

pub fn from_value<T: for<'de> Deserialize<'de>>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid {what}: {e}")))
}

pub fn load_run_config(spec: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value = load_value(spec, |name| to_value(&run_preset(name)?))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    from_value(value, "run config")
}

pub fn load_paths_config(spec: &str, overrides: &[String]) -> Result<PathsConfig> {
    let mut value = load_value(spec, |name| to_value(&paths_preset(name)?))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    from_value(value, "path config")
}
