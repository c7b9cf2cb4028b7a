use std::fs;
use std::path::{Path, PathBuf};

use arm_core::data::{generate_synthetic, load_csv, split, MultimodalDataset, SynthConfig};
use arm_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything one experiment needs. Every key is optional; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Output directory.
    pub out: PathBuf,
    /// Training seeds; each gives one run.
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    /// CSV dataset to use instead of generating one.
    pub data: Option<PathBuf>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out: PathBuf::from("runs"),
            seeds: vec![0],
            train_fraction: 0.8,
            data: None,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Strategy switch named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Toggle {
    Dff,
    Bmml,
    Dsr,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub data_seed: Option<u64>,
    pub toggles: Vec<(Toggle, bool)>,
    pub slope: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

/// Parses `dff=on`, `bmml=off`, ...
pub fn parse_toggle(s: &str) -> std::result::Result<(Toggle, bool), String> {
    let (name, state) = s
        .split_once('=')
        .ok_or_else(|| format!("expected <dff|bmml|dsr>=<on|off>, got `{s}`"))?;
    let toggle = match name.trim() {
        "dff" => Toggle::Dff,
        "bmml" => Toggle::Bmml,
        "dsr" => Toggle::Dsr,
        other => return Err(format!("unknown strategy `{other}` (expected dff, bmml or dsr)")),
    };
    let on = match state.trim() {
        "on" => true,
        "off" => false,
        other => return Err(format!("unknown state `{other}` (expected on or off)")),
    };
    Ok((toggle, on))
}

impl ExperimentConfig {
    /// Defaults, overlaid by the file when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|source| CliError::io(path, source))?;
        toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if !o.seeds.is_empty() {
            self.seeds = o.seeds.clone();
        }
        if let Some(s) = o.data_seed {
            self.synth.seed = s;
        }
        for &(t, on) in &o.toggles {
            match t {
                Toggle::Dff => self.train.toggles.dff = on,
                Toggle::Bmml => self.train.toggles.bmml = on,
                Toggle::Dsr => self.train.toggles.dsr = on,
            }
        }
        if let Some(k) = o.slope {
            self.train.slope = k;
        }
        if let Some(l) = o.lambda1 {
            self.train.lambda1 = l;
        }
        if let Some(l) = o.lambda2 {
            self.train.lambda2 = l;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds", "at least one seed is required"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::config(
                "train_fraction",
                format!("must be in (0, 1), got {}", self.train_fraction),
            ));
        }
        if self.data.is_none() {
            self.synth
                .validate()
                .map_err(|e| CliError::config("synth", e.to_string()))?;
        }
        self.train.validate()?;
        Ok(())
    }

    /// Full dataset: the CSV when configured, otherwise the synthetic one.
    pub fn dataset(&self) -> Result<MultimodalDataset> {
        match &self.data {
            Some(path) => Ok(load_csv(path, None)?),
            None => Ok(generate_synthetic(&self.synth)?),
        }
    }

    /// Stratified train/test split, seeded by the dataset seed so every
    /// training seed sees the same test set.
    pub fn splits(&self) -> Result<(MultimodalDataset, MultimodalDataset)> {
        Ok(split(&self.dataset()?, self.train_fraction, self.synth.seed)?)
    }

    /// Training settings for one seed.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}
