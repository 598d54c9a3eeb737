//! Run configuration: TOML schema, validation, and unit conversions.
//!
//! Configs are written with human units (degrees, dBm); conversion to the
//! library's radians/mW happens once at load. Angles carry a `_deg` suffix,
//! powers a `_dbm` suffix. Unknown keys are rejected. A fully resolved
//! config (defaults materialized, derived seeds pinned) is what manifests
//! store, so re-running a manifest reproduces a run exactly.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use beamalign::channel::{ArrayConfig, ClusterConfig, SceneConfig};
use beamalign::learning::TrainConfig;
use beamalign::metrics::{dbm_to_mw, noise_power_dbm};
use beamalign::rng::substream_seed;

// Stream ids for seeds derived from the master seed.
const SEED_SCENE: u64 = 0x10;
const SEED_TRAIN: u64 = 0x20;
const SEED_EVAL: u64 = 0x30;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_master_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub num_elements: usize,
    pub element_spacing_ratio: f64,
    pub carrier_frequency_ghz: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self { num_elements: 16, element_spacing_ratio: 0.5, carrier_frequency_ghz: 28.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub mean_azimuth_deg: f64,
    pub angular_spread_deg: f64,
    pub mean_gain_db: f64,
    pub gain_spread_db: f64,
    pub path_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub clusters: Vec<ClusterSection>,
    pub los_probability: f64,
    /// Derived from the master seed when absent.
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            clusters: vec![
                ClusterSection {
                    mean_azimuth_deg: -38.0,
                    angular_spread_deg: 6.0,
                    mean_gain_db: 3.0,
                    gain_spread_db: 2.0,
                    path_count: 2,
                },
                ClusterSection {
                    mean_azimuth_deg: 30.0,
                    angular_spread_deg: 14.0,
                    mean_gain_db: -2.0,
                    gain_spread_db: 3.0,
                    path_count: 3,
                },
            ],
            los_probability: 0.85,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub count: usize,
    /// File name, relative to the output directory unless absolute.
    pub file: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { count: 20_000, file: "dataset.bacd".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub transmit_power_dbm: f64,
    /// Noise power on the physical (pre-normalization) channel scale. When
    /// absent it is derived from `noise_psd_dbm_per_hz` and `bandwidth_hz`.
    #[serde(default)]
    pub noise_power_dbm: Option<f64>,
    #[serde(default)]
    pub noise_psd_dbm_per_hz: Option<f64>,
    #[serde(default)]
    pub bandwidth_hz: Option<f64>,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            transmit_power_dbm: 0.0,
            noise_power_dbm: Some(-8.65),
            noise_psd_dbm_per_hz: None,
            bandwidth_hz: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub train_with_noise: bool,
    /// Narrow-beam codebook size `N_V`.
    pub n_narrow: usize,
    /// Probing codebook size `N_W`.
    pub n_probing: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub rng_seed: Option<u64>,
    pub model_file: String,
    pub history_file: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 512,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            train_with_noise: true,
            n_narrow: 32,
            n_probing: 6,
            hidden_sizes: vec![128, 128],
            rng_seed: None,
            model_file: "model.bamd".into(),
            history_file: "history.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Strategy names: proposed, exhaustive, two_tier, binary, genie.
    pub strategies: Vec<String>,
    /// Wide-tier sizes for the two-tier baseline.
    pub n_wide: Vec<usize>,
    /// Candidate-list sizes for the proposed strategy.
    pub k: Vec<usize>,
    /// Measurement-noise grid (physical scale). Empty means the radio
    /// section's noise power.
    pub noise_levels_dbm: Vec<f64>,
    #[serde(default)]
    pub rng_seed: Option<u64>,
    pub results_file: String,
    pub csv_file: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            strategies: vec![
                "proposed".into(),
                "exhaustive".into(),
                "two_tier".into(),
                "binary".into(),
                "genie".into(),
            ],
            n_wide: vec![8],
            k: vec![1, 3],
            noise_levels_dbm: Vec::new(),
            rng_seed: None,
            results_file: "results.json".into(),
            csv_file: "results.csv".into(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: default_master_seed(),
            array: ArraySection::default(),
            scene: SceneSection::default(),
            dataset: DatasetSection::default(),
            radio: RadioSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

pub const PRESET_DESK: &str = include_str!("../presets/desk.toml");
pub const PRESET_PAPER: &str = include_str!("../presets/paper.toml");

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let text = match name {
            "desk" => PRESET_DESK,
            "paper" => PRESET_PAPER,
            other => bail!("unknown preset '{other}' (expected 'desk' or 'paper')"),
        };
        Self::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("config does not match the schema")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Pin derived seeds and check every section; the result round-trips
    /// through a manifest unchanged.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<RunConfig> {
        if let Some(seed) = seed_override {
            self.master_seed = seed;
            // A new master seed invalidates previously pinned derived seeds.
            self.scene.rng_seed = None;
            self.train.rng_seed = None;
            self.eval.rng_seed = None;
        }
        self.scene.rng_seed =
            Some(self.scene.rng_seed.unwrap_or(substream_seed(self.master_seed, SEED_SCENE)));
        self.train.rng_seed =
            Some(self.train.rng_seed.unwrap_or(substream_seed(self.master_seed, SEED_TRAIN)));
        self.eval.rng_seed =
            Some(self.eval.rng_seed.unwrap_or(substream_seed(self.master_seed, SEED_EVAL)));
        let radio = &mut self.radio;
        if radio.noise_power_dbm.is_none() {
            match (radio.noise_psd_dbm_per_hz, radio.bandwidth_hz) {
                (Some(psd), Some(bw)) => {
                    radio.noise_power_dbm = Some(noise_power_dbm(psd, bw)?);
                }
                _ => bail!("radio needs noise_power_dbm or both noise_psd_dbm_per_hz and bandwidth_hz"),
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.array_config().context("invalid [array]")?;
        self.scene_config().context("invalid [scene]")?.validate().context("invalid [scene]")?;
        if self.dataset.count < 1 {
            bail!("dataset.count must be at least 1");
        }
        self.train_config(1.0).context("invalid [train]")?.validate().context("invalid [train]")?;
        if self.train.n_narrow < 1 {
            bail!("train.n_narrow must be positive");
        }
        for name in &self.eval.strategies {
            strategy_from_name(name)?;
        }
        for &k in &self.eval.k {
            if k < 1 || k > self.train.n_narrow {
                bail!("eval.k entry {k} outside [1, n_narrow]");
            }
        }
        for &nw in &self.eval.n_wide {
            if nw < 2 || !self.train.n_narrow.is_multiple_of(nw) {
                bail!("eval.n_wide entry {nw} must divide n_narrow and be >= 2");
            }
        }
        Ok(())
    }

    pub fn array_config(&self) -> Result<ArrayConfig> {
        Ok(ArrayConfig::new(
            self.array.num_elements,
            self.array.element_spacing_ratio,
            self.array.carrier_frequency_ghz,
        )?)
    }

    pub fn scene_config(&self) -> Result<SceneConfig> {
        let rng_seed = self
            .scene
            .rng_seed
            .unwrap_or(substream_seed(self.master_seed, SEED_SCENE));
        Ok(SceneConfig {
            clusters: self
                .scene
                .clusters
                .iter()
                .map(|c| ClusterConfig {
                    mean_azimuth_rad: c.mean_azimuth_deg.to_radians(),
                    angular_spread_rad: c.angular_spread_deg.to_radians(),
                    mean_gain_db: c.mean_gain_db,
                    gain_spread_db: c.gain_spread_db,
                    path_count: c.path_count,
                })
                .collect(),
            los_probability: self.scene.los_probability,
            rng_seed,
        })
    }

    /// Library training config with the noise power rescaled onto the
    /// normalized channel scale: σ²_normalized = σ²_physical / factor².
    pub fn train_config(&self, normalization_factor: f64) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            train_fraction: t.train_fraction,
            val_fraction: t.val_fraction,
            test_fraction: t.test_fraction,
            rng_seed: t.rng_seed.unwrap_or(substream_seed(self.master_seed, SEED_TRAIN)),
            noise_power_mw: self.noise_power_mw()? / (normalization_factor * normalization_factor),
            transmit_power_mw: dbm_to_mw(self.radio.transmit_power_dbm),
            train_with_noise: t.train_with_noise,
            n_probing: t.n_probing,
            hidden_sizes: t.hidden_sizes.clone(),
        })
    }

    pub fn noise_power_mw(&self) -> Result<f64> {
        match (self.radio.noise_power_dbm, self.radio.noise_psd_dbm_per_hz, self.radio.bandwidth_hz) {
            (Some(dbm), _, _) => Ok(dbm_to_mw(dbm)),
            (None, Some(psd), Some(bw)) => Ok(dbm_to_mw(noise_power_dbm(psd, bw)?)),
            _ => bail!("radio needs noise_power_dbm or both noise_psd_dbm_per_hz and bandwidth_hz"),
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.rng_seed.unwrap_or(substream_seed(self.master_seed, SEED_EVAL))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

pub fn strategy_from_name(name: &str) -> Result<beamalign::alignment::Strategy> {
    use beamalign::alignment::Strategy;
    Ok(match name {
        "proposed" => Strategy::Proposed,
        "exhaustive" => Strategy::Exhaustive,
        "two_tier" => Strategy::TwoTier,
        "binary" => Strategy::Binary,
        "genie" => Strategy::Genie,
        other => bail!("unknown strategy '{other}'"),
    })
}
