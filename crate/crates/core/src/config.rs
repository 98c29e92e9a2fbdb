//! Training configuration: every hyperparameter in one flat record.
//!
//! The on-disk form is flat TOML whose keys are exactly the field names.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of feature layers in each patch discriminator.
pub const DISC_LAYERS: usize = 5;

/// Which discriminator layers enter the feature-matching term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FmKind {
    /// Layers `m..=M`.
    #[serde(rename = "wFM")]
    Weak,
    /// Layers `1..=M`.
    #[serde(rename = "oFM")]
    Full,
    /// No feature matching.
    #[serde(rename = "nFM")]
    Off,
    /// Layers `1..m`.
    #[serde(rename = "wFM_bar")]
    Early,
}

impl FmKind {
    pub fn name(self) -> &'static str {
        match self {
            FmKind::Weak => "wFM",
            FmKind::Full => "oFM",
            FmKind::Off => "nFM",
            FmKind::Early => "wFM_bar",
        }
    }
}

impl fmt::Display for FmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wFM" => Ok(FmKind::Weak),
            "oFM" => Ok(FmKind::Full),
            "nFM" => Ok(FmKind::Off),
            "wFM_bar" => Ok(FmKind::Early),
            other => Err(Error::Config(format!(
                "unknown fm_variant {other:?} (expected wFM, oFM, nFM or wFM_bar)"
            ))),
        }
    }
}

/// A feature-matching variant together with its start layer `m`
/// (1-based; layers are numbered `1..=M`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FmVariant {
    pub kind: FmKind,
    pub start_layer: usize,
}

impl FmVariant {
    pub fn new(kind: FmKind, start_layer: usize, layers: usize) -> Result<Self> {
        let needs_split = matches!(kind, FmKind::Weak | FmKind::Early);
        if needs_split && !(2..=layers).contains(&start_layer) {
            return Err(Error::Config(format!(
                "fm_start_layer out of range: {kind} needs 2 <= m <= {layers}, got {start_layer}"
            )));
        }
        if !(1..=layers).contains(&start_layer) {
            return Err(Error::Config(format!(
                "fm_start_layer out of range: need 1 <= m <= {layers}, got {start_layer}"
            )));
        }
        Ok(Self { kind, start_layer })
    }

    /// Whether 1-based `layer` contributes to the loss.
    pub fn includes(&self, layer: usize) -> bool {
        match self.kind {
            FmKind::Weak => layer >= self.start_layer,
            FmKind::Full => true,
            FmKind::Off => false,
            FmKind::Early => layer < self.start_layer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_id: f64,
    pub lambda_recon: f64,
    pub lambda_gp: f64,
    pub lambda_fm: f64,
    /// Weight of the generator's adversarial term; 1 in every preset.
    pub lambda_adv: f64,
    pub fm_variant: FmKind,
    pub fm_start_layer: usize,
    pub n_id_blocks: usize,
    pub n_discriminators: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Identity vector dimension `d`.
    pub id_dim: usize,
    /// Total optimization steps (one D and one G update each).
    pub steps: u64,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub embedder_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_id: 10.0,
            lambda_recon: 10.0,
            lambda_gp: 1e-5,
            lambda_fm: 10.0,
            lambda_adv: 1.0,
            fm_variant: FmKind::Weak,
            fm_start_layer: DISC_LAYERS - 1,
            n_id_blocks: 9,
            n_discriminators: 2,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            learning_rate: 5e-5,
            batch_size: 2,
            image_size: 64,
            seed: 0,
            id_dim: 64,
            steps: 3000,
            checkpoint_every: 500,
            embedder_epochs: 10,
        }
    }
}

/// Encoder downsampling depth; image sides must be multiples of `2^ENCODER_DEPTH`.
pub const ENCODER_DEPTH: u32 = 3;

impl TrainConfig {
    pub fn fm(&self) -> FmVariant {
        FmVariant {
            kind: self.fm_variant,
            start_layer: self.fm_start_layer,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Panics for configs that fail [`TrainConfig::validate`] on integer range.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("validated config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Applies one `key = value` override using the TOML value syntax, so
    /// `fm_variant` accepts both `oFM` and `"oFM"`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).expect("config is a table");
        if !table.contains_key(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        let parsed = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key v present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let parsed = match (&table[key], parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        Ok(())
    }

    /// Returns the config unchanged when every invariant holds.
    pub fn validate(self) -> Result<Self> {
        let weights = [
            ("lambda_id", self.lambda_id),
            ("lambda_recon", self.lambda_recon),
            ("lambda_gp", self.lambda_gp),
            ("lambda_fm", self.lambda_fm),
            ("lambda_adv", self.lambda_adv),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {w}")));
            }
        }
        FmVariant::new(self.fm_variant, self.fm_start_layer, DISC_LAYERS)?;
        if self.n_id_blocks < 1 {
            return Err(Error::Config("n_id_blocks must be ≥ 1".into()));
        }
        if self.n_discriminators < 1 {
            return Err(Error::Config("n_discriminators must be ≥ 1".into()));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        let unit = 1usize << ENCODER_DEPTH;
        if self.image_size == 0 || self.image_size % unit != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of {unit}, got {}",
                self.image_size
            )));
        }
        // The coarsest discriminator needs at least 16 pixels for its four
        // stride-2 convolutions.
        let coarsest = self.image_size >> (self.n_discriminators - 1);
        if coarsest < 16 {
            return Err(Error::Config(format!(
                "image_size {} too small for {} discriminator scales",
                self.image_size, self.n_discriminators
            )));
        }
        if self.id_dim < 1 {
            return Err(Error::Config("id_dim must be ≥ 1".into()));
        }
        // TOML integers are signed 64-bit.
        for (name, v) in [
            ("seed", self.seed),
            ("steps", self.steps),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v > i64::MAX as u64 {
                return Err(Error::Config(format!(
                    "{name} must be ≤ {}, got {v}",
                    i64::MAX
                )));
            }
        }
        Ok(self)
    }
}
