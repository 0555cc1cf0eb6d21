//! Synthetic Wi-Fi RSS fingerprints: log-distance path loss with spatial
//! shadowing, per-device gain/offset/noise, and the 0..-100 dBm normalization.

mod csv;

pub use csv::{export_csv, ingest_csv, IngestOutcome};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;
use crate::rng::{derive_seed, seeded_rng};

pub const RSS_FLOOR_DBM: f64 = -100.0;
pub const RSS_CEIL_DBM: f64 = 0.0;

/// `[-100, 0] dBm -> [0, 1]`, computed in f64 so CSV round trips are exact.
pub fn normalize_dbm(rss_dbm: f64) -> f32 {
    ((rss_dbm + 100.0) / 100.0) as f32
}

/// `[0, 1] -> [-100, 0] dBm`.
pub fn denormalize(feature: f32) -> f64 {
    f64::from(feature) * 100.0 - 100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FloorplanConfig {
    pub building_id: String,
    pub num_rps: usize,
    pub num_aps: usize,
    /// RP positions in meters, 1 m apart along a serpentine corridor.
    pub rp_coords: Vec<(f32, f32)>,
    pub ap_coords: Vec<(f32, f32)>,
    pub path_loss_exponent: f64,
    pub ref_power_dbm: f64,
    pub shadowing_sigma_db: f64,
    /// Seed for the per-(RP, AP) shadowing field; all devices observe the
    /// same building.
    pub shadowing_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub gain_offset_db: f64,
    pub gain_scale: f64,
    pub noise_sigma_db: f64,
}

/// The six default device profiles. Offsets and scales are invented
/// plumbing standing in for real hardware variation.
pub fn default_device_profiles() -> Vec<DeviceProfile> {
    let spec: [(&str, f64, f64, f64); 6] = [
        ("samsung-galaxy-s7", 2.0, 1.03, 6.0),
        ("oneplus-3", -3.0, 0.97, 4.8),
        ("motorola-z2", 0.0, 1.00, 4.0),
        ("lg-v20", 3.5, 1.04, 5.2),
        ("blu-vivo-8", -6.0, 0.92, 8.0),
        ("htc-u11", 7.0, 1.12, 5.8),
    ];
    spec.iter()
        .map(|&(id, off, scale, noise)| DeviceProfile {
            device_id: id.to_string(),
            gain_offset_db: off,
            gain_scale: scale,
            noise_sigma_db: noise,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintSet {
    /// `[N x num_aps]`, normalized to [0, 1].
    pub features: DenseMatrix,
    /// RP index per row.
    pub labels: Vec<usize>,
    /// RP index -> (x, y) meters.
    pub rp_coords: Vec<(f32, f32)>,
    pub building_id: String,
    pub device_id: String,
}

impl FingerprintSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_rps(&self) -> usize {
        self.rp_coords.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.labels.len() {
            return Err(Error::dimension(
                "FingerprintSet",
                self.features.rows(),
                self.labels.len(),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.rp_coords.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: self.rp_coords.len(),
            });
        }
        if !self
            .features
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v))
        {
            return Err(Error::Config("features must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Same fingerprints with different labels (self-labeling, label flips).
    pub fn with_labels(&self, labels: Vec<usize>) -> FingerprintSet {
        assert_eq!(labels.len(), self.labels.len());
        FingerprintSet {
            labels,
            ..self.clone()
        }
    }

    /// Same labels with replaced fingerprints (perturbation attacks).
    pub fn with_features(&self, features: DenseMatrix) -> FingerprintSet {
        assert_eq!(features.rows(), self.features.rows());
        FingerprintSet {
            features,
            ..self.clone()
        }
    }
}

/// RPs on a serpentine corridor at 1 m spacing; APs uniform in the bounding box.
pub fn generate_floorplan(
    building_id: &str,
    num_rps: usize,
    num_aps: usize,
    seed: u64,
) -> Result<FloorplanConfig> {
    if num_rps < 2 {
        return Err(Error::Config("num_rps must be >= 2".into()));
    }
    if num_aps < 1 {
        return Err(Error::Config("num_aps must be >= 1".into()));
    }
    let width = (num_rps as f64).sqrt().ceil() as usize;
    let mut rp_coords = Vec::with_capacity(num_rps);
    for i in 0..num_rps {
        let row = i / width;
        let col = i % width;
        let x = if row % 2 == 0 { col } else { width - 1 - col };
        rp_coords.push((x as f32, row as f32));
    }
    let num_rows = num_rps.div_ceil(width);
    let max_x = (width - 1).max(1) as f32;
    let max_y = (num_rows - 1).max(1) as f32;
    let mut rng = seeded_rng(seed, &format!("floorplan/{building_id}"));
    let ap_coords: Vec<(f32, f32)> = (0..num_aps)
        .map(|_| (rng.gen::<f32>() * max_x, rng.gen::<f32>() * max_y))
        .collect();
    Ok(FloorplanConfig {
        building_id: building_id.to_string(),
        num_rps,
        num_aps,
        rp_coords,
        ap_coords,
        path_loss_exponent: 3.0,
        ref_power_dbm: -40.0,
        shadowing_sigma_db: 4.0,
        shadowing_seed: derive_seed(seed, &format!("shadowing/{building_id}")),
    })
}

/// Log-distance path loss plus the floorplan's fixed shadowing field.
fn mean_rss_dbm(floorplan: &FloorplanConfig, shadowing: &[f64], rp: usize, ap: usize) -> f64 {
    let (rx, ry) = floorplan.rp_coords[rp];
    let (ax, ay) = floorplan.ap_coords[ap];
    let d = f64::from(rx - ax).hypot(f64::from(ry - ay)).max(1.0);
    floorplan.ref_power_dbm - 10.0 * floorplan.path_loss_exponent * d.log10()
        + shadowing[rp * floorplan.num_aps + ap]
}

fn shadowing_field(floorplan: &FloorplanConfig) -> Vec<f64> {
    let mut rng = seeded_rng(floorplan.shadowing_seed, "field");
    if floorplan.shadowing_sigma_db == 0.0 {
        return vec![0.0; floorplan.num_rps * floorplan.num_aps];
    }
    let normal = Normal::new(0.0, floorplan.shadowing_sigma_db).expect("sigma >= 0");
    (0..floorplan.num_rps * floorplan.num_aps)
        .map(|_| normal.sample(&mut rng))
        .collect()
}

/// Synthesizes `samples_per_rp` fingerprints per RP for one device.
pub fn synthesize_fingerprints(
    floorplan: &FloorplanConfig,
    device: &DeviceProfile,
    samples_per_rp: usize,
    seed: u64,
) -> Result<FingerprintSet> {
    if samples_per_rp < 1 {
        return Err(Error::Config("samples_per_rp must be >= 1".into()));
    }
    let shadowing = shadowing_field(floorplan);
    let mut rng = seeded_rng(seed, &format!("device/{}", device.device_id));
    let noise = if device.noise_sigma_db > 0.0 {
        Some(Normal::new(0.0, device.noise_sigma_db).expect("sigma > 0"))
    } else {
        None
    };
    let n = floorplan.num_rps * samples_per_rp;
    let mut data = Vec::with_capacity(n * floorplan.num_aps);
    let mut labels = Vec::with_capacity(n);
    for rp in 0..floorplan.num_rps {
        for _ in 0..samples_per_rp {
            labels.push(rp);
            for ap in 0..floorplan.num_aps {
                let raw = mean_rss_dbm(floorplan, &shadowing, rp, ap);
                let mut rss = device.gain_scale * raw + device.gain_offset_db;
                if let Some(dist) = &noise {
                    rss += dist.sample(&mut rng);
                }
                let clamped = rss.clamp(RSS_FLOOR_DBM, RSS_CEIL_DBM);
                data.push(normalize_dbm(clamped));
            }
        }
    }
    Ok(FingerprintSet {
        features: DenseMatrix::from_vec(n, floorplan.num_aps, data)?,
        labels,
        rp_coords: floorplan.rp_coords.clone(),
        building_id: floorplan.building_id.clone(),
        device_id: device.device_id.clone(),
    })
}

/// One training device at 5 fingerprints per RP; every other device
/// contributes a 1-per-RP test set.
pub fn split_train_test(
    floorplan: &FloorplanConfig,
    devices: &[DeviceProfile],
    train_device_id: &str,
    seed: u64,
) -> Result<(FingerprintSet, Vec<FingerprintSet>)> {
    if devices.len() < 2 {
        return Err(Error::Config("need at least 2 device profiles".into()));
    }
    let train_device = devices
        .iter()
        .find(|d| d.device_id == train_device_id)
        .ok_or_else(|| Error::Config(format!("unknown train device '{train_device_id}'")))?;
    let train =
        synthesize_fingerprints(floorplan, train_device, 5, derive_seed(seed, "split/train"))?;
    let mut tests = Vec::new();
    for device in devices.iter().filter(|d| d.device_id != train_device_id) {
        tests.push(synthesize_fingerprints(
            floorplan,
            device,
            1,
            derive_seed(seed, &format!("split/test/{}", device.device_id)),
        )?);
    }
    Ok((train, tests))
}
