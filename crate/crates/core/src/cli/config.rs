//! Flat `key=value` run configuration.
//!
//! Resolution order: built-in defaults, then the preset named by the merged
//! file and flag values, then the file, then flags. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{AugmentSpec, SyntheticSpec};
use crate::engine::SearchConfig;
use crate::error::{Error, Result};
use crate::searchspace::{ArchDescription, ResNetShape};

/// CIFAR-10 channel statistics used for normalization by default.
pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Full,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: String,
    pub classes: usize,
    pub width_divisor: usize,
    pub small_input_stem: bool,
    pub search: SearchConfig,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub synthetic_size: usize,
    pub synthetic_hw: usize,
    pub synthetic_noise: f64,
    pub train_fraction: f64,
    /// Cap on training images loaded (0 = all).
    pub train_limit: usize,
    /// Cap on evaluation images loaded (0 = all).
    pub eval_limit: usize,
    pub augment: Option<AugmentSpec>,
    pub precision: Precision,
    pub out: PathBuf,
}

/// Every accepted key, in the order `to_resolved` writes them.
pub const KEYS: &[&str] = &[
    "preset",
    "model",
    "classes",
    "width_divisor",
    "small_input_stem",
    "scope",
    "epochs",
    "seed",
    "batch_size",
    "weight_lr",
    "weight_momentum",
    "weight_decay",
    "arch_lr",
    "arch_decay",
    "alternation",
    "stop_patience",
    "stop_threshold",
    "dataset",
    "data_dir",
    "synthetic_size",
    "synthetic_hw",
    "synthetic_noise",
    "train_fraction",
    "train_limit",
    "eval_limit",
    "augment",
    "resize",
    "crop_scale_min",
    "crop_scale_max",
    "flip_prob",
    "mean",
    "std",
    "precision",
    "out",
];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let full = RunConfig {
            preset,
            model: "resnet50".into(),
            classes: 10,
            width_divisor: 1,
            small_input_stem: false,
            search: SearchConfig::default(),
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            synthetic_size: 2000,
            synthetic_hw: 32,
            synthetic_noise: 0.1,
            train_fraction: 0.8,
            train_limit: 0,
            eval_limit: 0,
            augment: Some(AugmentSpec {
                mean: CIFAR10_MEAN,
                std: CIFAR10_STD,
                ..AugmentSpec::default()
            }),
            precision: Precision::F32,
            out: PathBuf::from("scoped-dnas-out"),
        };
        match preset {
            Preset::Full => full,
            Preset::Desk => {
                let mut c = full;
                c.width_divisor = 16;
                c.small_input_stem = true;
                c.search.epochs = 3;
                c.search.batch_size = 16;
                c.dataset = DatasetKind::Synthetic;
                c.synthetic_size = 240;
                c.synthetic_hw = 16;
                c.train_fraction = 0.5;
                c.train_limit = 2000;
                c.eval_limit = 500;
                if let Some(a) = c.augment.as_mut() {
                    a.resize = 16;
                }
                c
            }
        }
    }

    /// Architecture without search units described by the model settings.
    pub fn base_architecture(&self) -> Result<ArchDescription> {
        if self.model != "resnet50" {
            return Err(Error::Config(format!("unknown model `{}` (supported: resnet50)", self.model)));
        }
        ResNetShape::resnet50_scaled(self.classes, self.small_input_stem, self.width_divisor)?.build()
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            size: self.synthetic_size,
            image_hw: self.synthetic_hw,
            noise: self.synthetic_noise,
            seed: self.search.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        self.base_architecture().map(|_| ())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => self.preset = parse_preset(v)?,
            "model" => self.model = v.to_string(),
            "classes" => self.classes = num(key, v)?,
            "width_divisor" => self.width_divisor = num(key, v)?,
            "small_input_stem" => self.small_input_stem = boolean(key, v)?,
            "scope" => self.search.scope = v.parse().map_err(|_| mismatch(key, "one of s, m, l, f, none", v))?,
            "epochs" => self.search.epochs = num(key, v)?,
            "seed" => self.search.seed = num(key, v)?,
            "batch_size" => self.search.batch_size = num(key, v)?,
            "weight_lr" => self.search.weight_opt.lr = num(key, v)?,
            "weight_momentum" => self.search.weight_opt.momentum = num(key, v)?,
            "weight_decay" => self.search.weight_opt.weight_decay = num(key, v)?,
            "arch_lr" => self.search.arch_opt.lr = num(key, v)?,
            "arch_decay" => self.search.arch_opt.weight_decay = num(key, v)?,
            "alternation" => {
                let (a, b) = v.split_once(':').ok_or_else(|| mismatch(key, "`weight:arch` like 1:1", v))?;
                self.search.alternation = (num(key, a)?, num(key, b)?);
            }
            "stop_patience" => self.search.stop.patience = num(key, v)?,
            "stop_threshold" => self.search.stop.threshold = num(key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "cifar10" => DatasetKind::Cifar10,
                    "synthetic" => DatasetKind::Synthetic,
                    _ => return Err(mismatch(key, "cifar10 or synthetic", v)),
                }
            }
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "synthetic_size" => self.synthetic_size = num(key, v)?,
            "synthetic_hw" => self.synthetic_hw = num(key, v)?,
            "synthetic_noise" => self.synthetic_noise = num(key, v)?,
            "train_fraction" => self.train_fraction = num(key, v)?,
            "train_limit" => self.train_limit = num(key, v)?,
            "eval_limit" => self.eval_limit = num(key, v)?,
            "augment" => match (boolean(key, v)?, self.augment.is_some()) {
                (true, false) => {
                    self.augment = Some(AugmentSpec {
                        mean: CIFAR10_MEAN,
                        std: CIFAR10_STD,
                        ..AugmentSpec::default()
                    })
                }
                (false, _) => self.augment = None,
                (true, true) => {}
            },
            "resize" | "crop_scale_min" | "crop_scale_max" | "flip_prob" | "mean" | "std" => {
                let a = self
                    .augment
                    .as_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}` set while augment=false")))?;
                match key {
                    "resize" => a.resize = num(key, v)?,
                    "crop_scale_min" => a.scale.0 = num(key, v)?,
                    "crop_scale_max" => a.scale.1 = num(key, v)?,
                    "flip_prob" => a.flip_prob = num(key, v)?,
                    "mean" => a.mean = triple(key, v)?,
                    _ => a.std = triple(key, v)?,
                }
            }
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(mismatch(key, "f32 or f64", v)),
                }
            }
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every effective setting as `key=value` lines; feeding the result back
    /// through `parse_config` yields an equal config.
    pub fn to_resolved(&self) -> String {
        let mut s = String::new();
        for &key in KEYS {
            if let Some(v) = self.value_of(key) {
                let _ = writeln!(s, "{key}={v}");
            }
        }
        s
    }

    fn value_of(&self, key: &str) -> Option<String> {
        let sc = &self.search;
        let a = self.augment.as_ref();
        let joined = |t: [f32; 3]| t.map(|x| x.to_string()).join(",");
        Some(match key {
            "preset" => match self.preset {
                Preset::Full => "full".into(),
                Preset::Desk => "desk".into(),
            },
            "model" => self.model.clone(),
            "classes" => self.classes.to_string(),
            "width_divisor" => self.width_divisor.to_string(),
            "small_input_stem" => self.small_input_stem.to_string(),
            "scope" => sc.scope.code().into(),
            "epochs" => sc.epochs.to_string(),
            "seed" => sc.seed.to_string(),
            "batch_size" => sc.batch_size.to_string(),
            "weight_lr" => sc.weight_opt.lr.to_string(),
            "weight_momentum" => sc.weight_opt.momentum.to_string(),
            "weight_decay" => sc.weight_opt.weight_decay.to_string(),
            "arch_lr" => sc.arch_opt.lr.to_string(),
            "arch_decay" => sc.arch_opt.weight_decay.to_string(),
            "alternation" => format!("{}:{}", sc.alternation.0, sc.alternation.1),
            "stop_patience" => sc.stop.patience.to_string(),
            "stop_threshold" => sc.stop.threshold.to_string(),
            "dataset" => match self.dataset {
                DatasetKind::Cifar10 => "cifar10".into(),
                DatasetKind::Synthetic => "synthetic".into(),
            },
            "data_dir" => self.data_dir.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "synthetic_size" => self.synthetic_size.to_string(),
            "synthetic_hw" => self.synthetic_hw.to_string(),
            "synthetic_noise" => self.synthetic_noise.to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "train_limit" => self.train_limit.to_string(),
            "eval_limit" => self.eval_limit.to_string(),
            "augment" => a.is_some().to_string(),
            "resize" => a?.resize.to_string(),
            "crop_scale_min" => a?.scale.0.to_string(),
            "crop_scale_max" => a?.scale.1.to_string(),
            "flip_prob" => a?.flip_prob.to_string(),
            "mean" => joined(a?.mean),
            "std" => joined(a?.std),
            "precision" => match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }
}

fn mismatch(key: &str, expected: &str, got: &str) -> Error {
    Error::Config(format!("config key `{key}`: expected {expected}, got `{got}`"))
}

fn num<N: FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| mismatch(key, std::any::type_name::<N>(), v))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(mismatch(key, "a boolean", v)),
    }
}

fn triple(key: &str, v: &str) -> Result<[f32; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(mismatch(key, "three comma-separated numbers", v));
    }
    Ok([num(key, parts[0])?, num(key, parts[1])?, num(key, parts[2])?])
}

fn parse_preset(v: &str) -> Result<Preset> {
    match v {
        "full" => Ok(Preset::Full),
        "desk" => Ok(Preset::Desk),
        _ => Err(mismatch("preset", "full or desk", v)),
    }
}

/// Parses a `key=value` document into ordered pairs, rejecting unknown keys
/// and duplicates.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value, got `{line}`", i + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown config key `{k}` (line {})", i + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("config key `{k}` given twice")));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolves a configuration from an optional file body and flag overrides
/// (already in `key=value` form).
pub fn parse_config(file: Option<&str>, flags: &[(String, String)]) -> Result<RunConfig> {
    let mut merged: BTreeMap<String, String> = BTreeMap::new();
    if let Some(text) = file {
        merged.extend(parse_pairs(text)?);
    }
    for (k, v) in flags {
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown config key `{k}`")));
        }
        merged.insert(k.clone(), v.clone());
    }
    let preset = merged.get("preset").map_or(Ok(Preset::Full), |v| parse_preset(v.trim()))?;
    let mut config = RunConfig::preset(preset);
    // augmentation switches before its fields, so `augment=true` does not
    // overwrite an explicit resize
    if let Some(v) = merged.get("augment") {
        config.apply("augment", v)?;
    }
    for (k, v) in &merged {
        if k != "augment" {
            config.apply(k, v)?;
        }
    }
    let explicit_synthetic = merged.get("dataset").map(|v| v.trim()) == Some("synthetic");
    let has_dir = config.data_dir.is_some();
    if explicit_synthetic && has_dir {
        return Err(Error::Config(
            "both dataset sources specified: dataset=synthetic and data_dir".into(),
        ));
    }
    if has_dir {
        config.dataset = DatasetKind::Cifar10;
    }
    config.validate()?;
    Ok(config)
}

/// Reads and resolves a config file plus flag overrides.
pub fn load_config(path: Option<&Path>, flags: &[(String, String)]) -> Result<RunConfig> {
    let text = path
        .map(|p| std::fs::read_to_string(p).map_err(|e| Error::io(p, e)))
        .transpose()?;
    parse_config(text.as_deref(), flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config(Some(""), &[]).unwrap();
        assert_eq!(c.search.weight_opt.lr, 0.05);
        assert_eq!(c.search.weight_opt.momentum, 0.9);
        assert_eq!(c.search.weight_opt.weight_decay, 4e-5);
        assert_eq!(c.search.arch_opt.lr, 0.001);
        assert_eq!(c.search.arch_opt.weight_decay, 0.0);
        assert_eq!(c.search.batch_size, 64);
        assert_eq!(c.search.epochs, 500);
        assert_eq!(c.search.alternation, (1, 1));
    }

    #[test]
    fn flags_override_file() {
        let c = parse_config(Some("epochs=10\n# comment\n"), &flags(&[("epochs", "3")])).unwrap();
        assert_eq!(c.search.epochs, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config(Some("learning_rte=0.1\n"), &[]).unwrap_err();
        assert!(e.to_string().contains("learning_rte"), "{e}");
    }

    #[test]
    fn type_mismatch() {
        let e = parse_config(Some("epochs=ten\n"), &[]).unwrap_err();
        assert!(e.to_string().contains("epochs"), "{e}");
    }

    #[test]
    fn both_sources_rejected() {
        assert!(parse_config(Some("dataset=synthetic\ndata_dir=/tmp\n"), &[]).is_err());
        let c = parse_config(None, &flags(&[("preset", "desk"), ("data_dir", "/tmp/x")])).unwrap();
        assert_eq!(c.dataset, DatasetKind::Cifar10);
    }

    #[test]
    fn resolved_round_trip() {
        for preset in ["full", "desk"] {
            let c = parse_config(None, &flags(&[("preset", preset), ("scope", "l"), ("alternation", "2:1")])).unwrap();
            let again = parse_config(Some(&c.to_resolved()), &[]).unwrap();
            assert_eq!(c, again);
        }
        let c = parse_config(Some("augment=false\n"), &[]).unwrap();
        assert_eq!(parse_config(Some(&c.to_resolved()), &[]).unwrap(), c);
    }
}
