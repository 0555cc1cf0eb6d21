//! Versioned experiment configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackSpec};
use crate::data::{default_device_profiles, DeviceProfile};
use crate::error::{Error, Result};
use crate::fl::{Aggregation, AggregationMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingConfig {
    pub building_id: String,
    pub num_rps: usize,
    pub num_aps: usize,
    pub path_loss_exponent: f64,
    pub ref_power_dbm: f64,
    pub shadowing_sigma_db: f64,
}

impl Default for BuildingConfig {
    /// Desk-scale default building: fewer reference points than a full
    /// campus survey, but the full 203-AP feature width so the 62-unit
    /// latent space stays a genuine bottleneck.
    fn default() -> Self {
        BuildingConfig {
            building_id: "synthetic-1".into(),
            num_rps: 24,
            num_aps: 203,
            path_loss_exponent: 3.0,
            ref_power_dbm: -40.0,
            shadowing_sigma_db: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_samples_per_rp: usize,
    pub test_samples_per_rp: usize,
    pub client_samples_per_rp: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_samples_per_rp: 5,
            test_samples_per_rp: 3,
            client_samples_per_rp: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub pretrain_epochs: usize,
    pub pretrain_lr: f32,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            pretrain_epochs: 200,
            pretrain_lr: 0.001,
            finetune_epochs: 5,
            finetune_lr: 0.0001,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub clients: usize,
    pub malicious: usize,
    pub rounds: usize,
    pub tau: f32,
    pub aggregation: Aggregation,
    pub mode: AggregationMode,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: 6,
            malicious: 1,
            rounds: 10,
            tau: 0.1,
            aggregation: Aggregation::Saliency,
            mode: AggregationMode::Normalized,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f32,
    pub alpha: f32,
    pub iterations: usize,
    pub mask_fraction: f32,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon: 0.5,
            alpha: 0.9,
            iterations: 10,
            mask_fraction: 0.25,
        }
    }
}

impl AttackConfig {
    pub fn to_spec(&self, seed: u64) -> AttackSpec {
        AttackSpec {
            kind: self.kind,
            epsilon: self.epsilon,
            alpha: self.alpha,
            iterations: self.iterations,
            mask_fraction: self.mask_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub tau_grid: Vec<f32>,
    pub epsilon_grid: Vec<f32>,
    /// `(total_clients, poisoned_clients)` grid points; the default is a
    /// linear poisoned-client schedule between (6, 1) and (24, 12).
    pub client_grid: Vec<(usize, usize)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            // 0.05 .. 0.5 in steps of 0.05.
            tau_grid: (1..=10).map(|i| i as f32 * 0.05).collect(),
            // 0.01 .. 0.09 in steps of 0.01, then 0.1 .. 1.0 in steps of 0.1.
            epsilon_grid: (1..=9)
                .map(|i| i as f32 * 0.01)
                .chain((1..=10).map(|i| i as f32 * 0.1))
                .collect(),
            client_grid: vec![(6, 1), (12, 5), (18, 8), (24, 12)],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub building: BuildingConfig,
    pub devices: Vec<DeviceProfile>,
    pub train_device: String,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub federation: FederationConfig,
    pub attack: AttackConfig,
    pub sweeps: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            master_seed: 65,
            building: BuildingConfig::default(),
            devices: default_device_profiles(),
            train_device: "motorola-z2".into(),
            data: DataConfig::default(),
            training: TrainingConfig::default(),
            federation: FederationConfig::default(),
            attack: AttackConfig::default(),
            sweeps: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Schema(format!("{path:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Paper-scale server training (700 epochs).
    pub fn with_paper_scale(mut self) -> Self {
        self.training.pretrain_epochs = 700;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.building.num_rps < 2 {
            return Err(Error::Config("building.num_rps must be >= 2".into()));
        }
        if self.building.num_aps < 1 {
            return Err(Error::Config("building.num_aps must be >= 1".into()));
        }
        if self.devices.len() < 2 {
            return Err(Error::Config("need at least 2 device profiles".into()));
        }
        if !self
            .devices
            .iter()
            .any(|d| d.device_id == self.train_device)
        {
            return Err(Error::Config(format!(
                "train_device '{}' not in device table",
                self.train_device
            )));
        }
        if self.devices.iter().any(|d| d.gain_scale <= 0.0) {
            return Err(Error::Config("device gain_scale must be > 0".into()));
        }
        if self.federation.clients == 0 {
            return Err(Error::Config("federation.clients must be >= 1".into()));
        }
        if self.federation.malicious > self.federation.clients {
            return Err(Error::Config(
                "federation.malicious must not exceed federation.clients".into(),
            ));
        }
        if self.federation.tau < 0.0 {
            return Err(Error::Config("federation.tau must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.attack.epsilon) {
            return Err(Error::Config("attack.epsilon must be in [0, 1]".into()));
        }
        self.attack.to_spec(0).validate()?;
        if self.sweeps.tau_grid.is_empty()
            || self.sweeps.epsilon_grid.is_empty()
            || self.sweeps.client_grid.is_empty()
        {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        for &(total, poisoned) in &self.sweeps.client_grid {
            if poisoned > total || total == 0 {
                return Err(Error::Config(format!(
                    "bad client grid point ({total}, {poisoned})"
                )));
            }
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}
