//! Flat `key = value` configuration files with documented, validated schemas.
//! Lines starting with `#` are comments; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::graph::FrameMode;
use crate::train::{NoiseReference, TrainConfig};

/// Parsed key/value file.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if entries.insert(key.clone(), value).is_some() {
                return Err(CoreError::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CoreError::Config(format!(
                    "unknown key '{key}' (allowed: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CoreError::Config(format!("key '{key}': {e}"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CoreError::Config(format!("key '{key}': {e}"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CoreError::Config(format!("key '{key}': {e}"))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.entries.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => Err(CoreError::Config(format!(
                "key '{key}': expected true/false, got '{other}'"
            ))),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let trimmed = part.trim();
                    if trimmed.is_empty() {
                        continue;
                    }
                    out.push(trimmed.parse().map_err(|e| {
                        CoreError::Config(format!("key '{key}', entry '{trimmed}': {e}"))
                    })?);
                }
                Ok(Some(out))
            }
        }
    }
}

/// Keys understood by `generate` (and the generation half of `pipeline`).
pub const GENERATE_KEYS: &[&str] = &[
    "length_m",
    "element_size_m",
    "e_pa",
    "rho",
    "nu",
    "width_m",
    "height_m",
    "freq_hz",
    "amplitude_m",
    "actuator_pos_m",
    "total_time_s",
    "dt_s",
    "margin_m",
    "seed",
];

/// Keys understood by `train` (and the training half of `pipeline`).
pub const TRAIN_KEYS: &[&str] = &[
    "batch_size",
    "steps",
    "noise_fraction",
    "penalty_s",
    "radius_multiple",
    "message_steps",
    "lr",
    "seed",
    "mode",
    "lr_final",
    "history",
    "validation_cadence",
    "val_rollout_steps",
    "layer_norm",
    "residual",
    "noise_reference",
];

/// Extra keys only meaningful to `pipeline`.
pub const PIPELINE_ONLY_KEYS: &[&str] = &["rollout_steps"];

/// Beam-and-excitation settings for dataset generation.
#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub length_m: f64,
    pub element_size_m: f64,
    pub e_pa: f64,
    pub rho: f64,
    pub nu: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub freq_hz: f64,
    pub amplitude_m: f64,
    pub actuator_pos_m: Vec<f64>,
    pub total_time_s: f64,
    pub dt_s: f64,
    pub margin_m: f64,
    pub seed: u64,
}

impl Default for GenerateConfig {
    /// The reference setup: 320 mm aluminium-like strip, 0.8 mm elements,
    /// 50 kHz single-cycle pulse of 1 um, 100 us span at 0.1 us steps, six
    /// actuator positions inside the reflection-free window.
    fn default() -> Self {
        Self {
            length_m: 0.32,
            element_size_m: 0.0008,
            e_pa: 72e9,
            rho: 2900.0,
            nu: 0.3,
            width_m: 0.005,
            height_m: 0.001,
            freq_hz: 50e3,
            amplitude_m: 1e-6,
            actuator_pos_m: vec![0.112, 0.1296, 0.1472, 0.1728, 0.1904, 0.208],
            total_time_s: 1e-4,
            dt_s: 1e-7,
            margin_m: 0.07,
            seed: 0,
        }
    }
}

impl GenerateConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        map.validate_keys(GENERATE_KEYS)?;
        Self::from_map_unchecked(map)
    }

    fn from_map_unchecked(map: &ConfigMap) -> Result<Self> {
        let d = GenerateConfig::default();
        Ok(Self {
            length_m: map.get_f64("length_m", d.length_m)?,
            element_size_m: map.get_f64("element_size_m", d.element_size_m)?,
            e_pa: map.get_f64("e_pa", d.e_pa)?,
            rho: map.get_f64("rho", d.rho)?,
            nu: map.get_f64("nu", d.nu)?,
            width_m: map.get_f64("width_m", d.width_m)?,
            height_m: map.get_f64("height_m", d.height_m)?,
            freq_hz: map.get_f64("freq_hz", d.freq_hz)?,
            amplitude_m: map.get_f64("amplitude_m", d.amplitude_m)?,
            actuator_pos_m: map
                .get_f64_list("actuator_pos_m")?
                .unwrap_or(d.actuator_pos_m),
            total_time_s: map.get_f64("total_time_s", d.total_time_s)?,
            dt_s: map.get_f64("dt_s", d.dt_s)?,
            margin_m: map.get_f64("margin_m", d.margin_m)?,
            seed: map.get_u64("seed", d.seed)?,
        })
    }

    pub fn section(&self) -> Result<crate::fem::MaterialSection> {
        crate::fem::MaterialSection::new(self.e_pa, self.rho, self.nu, self.width_m, self.height_m)
    }
}

/// Build a [`TrainConfig`] from a key/value map, rejecting unknown keys.
pub fn train_config_from_map(map: &ConfigMap) -> Result<TrainConfig> {
    map.validate_keys(TRAIN_KEYS)?;
    train_config_from_map_unchecked(map)
}

fn train_config_from_map_unchecked(map: &ConfigMap) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        batch_size: map.get_usize("batch_size", d.batch_size)?,
        steps: map.get_usize("steps", d.steps)?,
        noise_fraction: map.get_f64("noise_fraction", d.noise_fraction)?,
        penalty_s: map.get_f64("penalty_s", d.penalty_s)?,
        radius_multiple: map.get_f64("radius_multiple", d.radius_multiple)?,
        message_steps: map.get_usize("message_steps", d.message_steps)?,
        history: map.get_usize("history", d.history)?,
        lr: map.get_f64("lr", d.lr)?,
        lr_final: map.get_f64("lr_final", d.lr_final)?,
        seed: map.get_u64("seed", d.seed)?,
        validation_cadence: map.get_usize("validation_cadence", d.validation_cadence)?,
        val_rollout_steps: map.get_usize("val_rollout_steps", d.val_rollout_steps)?,
        mode: match map.get("mode") {
            None => d.mode,
            Some(s) => FrameMode::parse(s)?,
        },
        layer_norm: map.get_bool("layer_norm", d.layer_norm)?,
        residual: map.get_bool("residual", d.residual)?,
        noise_reference: match map.get("noise_reference") {
            None => d.noise_reference,
            Some(s) => NoiseReference::parse(s)?,
        },
        checkpoint_dir: None,
    })
}

/// End-to-end pipeline configuration: one file carrying generation keys,
/// training keys, and the rollout step count.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub generate: GenerateConfig,
    pub train: TrainConfig,
    /// Frames for the test rollout (0 = full test trajectory).
    pub rollout_steps: usize,
}

impl PipelineConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let allowed: Vec<&str> = GENERATE_KEYS
            .iter()
            .chain(TRAIN_KEYS.iter())
            .chain(PIPELINE_ONLY_KEYS.iter())
            .copied()
            .collect();
        map.validate_keys(&allowed)?;
        Ok(Self {
            generate: GenerateConfig::from_map_unchecked(map)?,
            train: train_config_from_map_unchecked(map)?,
            rollout_steps: map.get_usize("rollout_steps", 0)?,
        })
    }
}
