//! Run configuration: a TOML file with `[data]`, `[model]`, `[train]` and
//! `[eval]` sections, overridable key by key from the command line.

use serde::{Deserialize, Serialize};
use vqflow_core::model::{Components, ModelConfig, ScaleGeometry};
use vqflow_core::score::{DensityMode, EvalOptions, ImageScore};
use vqflow_core::synth::SynthSpec;
use vqflow_core::train::{LossWeights, TrainConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub seed: u64,
    pub classes: usize,
    pub channels: Vec<usize>,
    pub size: usize,
    pub train: usize,
    pub test: usize,
    pub anomalous_fraction: f64,
    pub signature: f64,
    pub pattern: f64,
    pub noise: f64,
    pub patch_min: usize,
    pub patch_max: usize,
    pub magnitude: f64,
    pub confusion: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        DataSection {
            seed: 7,
            classes: s.classes,
            channels: s.channels,
            size: s.size,
            train: s.train,
            test: s.test,
            anomalous_fraction: s.anomalous_fraction,
            signature: s.signature,
            pattern: s.pattern,
            noise: s.noise,
            patch_min: s.patch_min,
            patch_max: s.patch_max,
            magnitude: s.magnitude,
            confusion: s.confusion,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

/// Unset sizes come from the preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub d_cp: Option<usize>,
    pub d_pe: Option<usize>,
    pub d_csp: Option<usize>,
    pub k_cp: Option<usize>,
    pub k_csp: Option<usize>,
    pub blocks: Option<usize>,
    pub cpc_hidden: Option<usize>,
    pub head_hidden: Option<usize>,
    pub cadm: bool,
    pub cpc: bool,
    pub cspc: bool,
    pub pe: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: Preset::Desk,
            d_cp: None,
            d_pe: None,
            d_csp: None,
            k_cp: None,
            k_csp: None,
            blocks: None,
            cpc_hidden: None,
            head_hidden: None,
            cadm: true,
            cpc: true,
            cspc: true,
            pe: true,
        }
    }
}

/// Unset `lr` and `epochs` come from the model preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Seeds model initialization and batch order.
    pub seed: u64,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub revive_threshold: u64,
    pub checkpoint_every: usize,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub gamma: Vec<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            seed: 0,
            lr: None,
            epochs: None,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            revive_threshold: t.revive_threshold,
            checkpoint_every: t.checkpoint_every,
            alpha: Vec::new(),
            beta: 1.0,
            gamma: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    #[default]
    Dedicated,
    Mixture,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub density: Density,
    pub image_score: Reduce,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { density: Density::Dedicated, image_score: Reduce::Max, batch_size: 16 }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

impl RunConfig {
    /// Parses `text` (empty for all defaults) and applies `section.key`
    /// overrides in order.
    pub fn load(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        for (key, value) in overrides {
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override `{key}` must be `section.key`")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let sec = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{section}` is not a section")))?;
            sec.insert(field.to_string(), parse_value(value));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let d = &self.data;
        SynthSpec {
            classes: d.classes,
            channels: d.channels.clone(),
            size: d.size,
            train: d.train,
            test: d.test,
            anomalous_fraction: d.anomalous_fraction,
            signature: d.signature,
            pattern: d.pattern,
            noise: d.noise,
            patch_min: d.patch_min,
            patch_max: d.patch_max,
            magnitude: d.magnitude,
            confusion: d.confusion,
        }
    }

    /// The positional embedding is part of the pattern-codebook condition,
    /// so it only takes effect together with `cspc`.
    pub fn components(&self) -> Components {
        let m = &self.model;
        Components { cadm: m.cadm, cpc: m.cpc, cspc: m.cspc, pe: m.pe && m.cspc }
    }

    /// Architecture for feature maps of the given geometry.
    pub fn model_config(&self, scales: Vec<ScaleGeometry>) -> Result<ModelConfig> {
        let m = &self.model;
        let base = match m.preset {
            Preset::Desk => ModelConfig::desk(scales),
            Preset::Paper => ModelConfig::paper(scales),
        };
        let cfg = ModelConfig {
            d_cp: m.d_cp.unwrap_or(base.d_cp),
            d_pe: m.d_pe.unwrap_or(base.d_pe),
            d_csp: m.d_csp.unwrap_or(base.d_csp),
            k_cp: m.k_cp.unwrap_or(base.k_cp),
            k_csp: m.k_csp.unwrap_or(base.k_csp),
            blocks: m.blocks.unwrap_or(base.blocks),
            cpc_hidden: m.cpc_hidden.unwrap_or(base.cpc_hidden),
            head_hidden: m.head_hidden.unwrap_or(base.head_hidden),
            components: self.components(),
            seed: self.train.seed,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let base = match self.model.preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::default(),
        };
        TrainConfig {
            lr: t.lr.unwrap_or(base.lr),
            epochs: t.epochs.unwrap_or(base.epochs),
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            revive_threshold: t.revive_threshold,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
            weights: LossWeights { alpha: t.alpha.clone(), beta: t.beta, gamma: t.gamma.clone() },
            ..base
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            density: match self.eval.density {
                Density::Dedicated => DensityMode::Dedicated,
                Density::Mixture => DensityMode::Mixture,
            },
            image_score: match self.eval.image_score {
                Reduce::Max => ImageScore::Max,
                Reduce::Mean => ImageScore::Mean,
            },
            batch_size: self.eval.batch_size,
        }
    }

    /// Copy with every preset-derived value written out, so the file alone
    /// replays the run.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        let base = match self.model.preset {
            Preset::Desk => ModelConfig::desk(Vec::new()),
            Preset::Paper => ModelConfig::paper(Vec::new()),
        };
        let m = &mut out.model;
        m.pe = m.pe && m.cspc;
        m.d_cp.get_or_insert(base.d_cp);
        m.d_pe.get_or_insert(base.d_pe);
        m.d_csp.get_or_insert(base.d_csp);
        m.k_cp.get_or_insert(base.k_cp);
        m.k_csp.get_or_insert(base.k_csp);
        m.blocks.get_or_insert(base.blocks);
        m.cpc_hidden.get_or_insert(base.cpc_hidden);
        m.head_hidden.get_or_insert(base.head_hidden);
        let t = self.train_config();
        out.train.lr = Some(t.lr);
        out.train.epochs = Some(t.epochs);
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
