//! Deterministic CSV/TOML report writers. No timestamps or host details:
//! two identical runs must produce byte-identical output trees.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::run::{ClientSweepRow, EpsilonSweepRow, TauSweepRow};
use crate::eval::RoundReport;

pub const ROUNDS_HEADER: &str =
    "round,aggregation,mean_error_m,best_error_m,worst_error_m,rce_mean,rce_max,denoise_triggers";
pub const PER_DEVICE_HEADER: &str = "round,device_id,mean_error_m,best_error_m,worst_error_m";
pub const TAU_SWEEP_HEADER: &str = "tau,mean_error_m,denoise_fraction";
pub const EPSILON_SWEEP_HEADER: &str = "attack,epsilon,mean_error_m";
pub const CLIENT_SWEEP_HEADER: &str = "clients,malicious,mean_error_m";

pub fn rounds_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            r.aggregation,
            r.mean_error_m,
            r.best_error_m,
            r.worst_error_m,
            r.rce_mean,
            r.rce_max,
            r.total_denoise_triggers()
        ));
    }
    out
}

pub fn per_device_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from(PER_DEVICE_HEADER);
    out.push('\n');
    for r in reports {
        for d in &r.per_device {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.round, d.device_id, d.mean_error_m, d.best_error_m, d.worst_error_m
            ));
        }
    }
    out
}

pub fn tau_sweep_csv(rows: &[TauSweepRow]) -> String {
    let mut out = String::from(TAU_SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.tau, r.mean_error_m, r.denoise_fraction
        ));
    }
    out
}

pub fn epsilon_sweep_csv(rows: &[EpsilonSweepRow]) -> String {
    let mut out = String::from(EPSILON_SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.attack, r.epsilon, r.mean_error_m));
    }
    out
}

pub fn client_sweep_csv(rows: &[ClientSweepRow]) -> String {
    let mut out = String::from(CLIENT_SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.clients, r.malicious, r.mean_error_m
        ));
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    config: &'a ExperimentConfig,
}

/// TOML manifest embedding the exact configuration the run used.
pub fn manifest_toml(config: &ExperimentConfig) -> Result<String> {
    toml::to_string_pretty(&Manifest {
        format_version: 1,
        config,
    })
    .map_err(|e| Error::Schema(format!("manifest serialization: {e}")))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::DeviceErrorStats;

    fn sample_report() -> RoundReport {
        RoundReport {
            round: 3,
            aggregation: "saliency".into(),
            mean_error_m: 1.5,
            best_error_m: 0.0,
            worst_error_m: 4.0,
            per_device: vec![DeviceErrorStats {
                device_id: "oneplus-3".into(),
                mean_error_m: 1.5,
                best_error_m: 0.0,
                worst_error_m: 4.0,
            }],
            rce_mean: 0.02,
            rce_max: 0.09,
            denoise_triggers: vec![("client-00".into(), 2), ("client-01".into(), 1)],
        }
    }

    #[test]
    fn rounds_csv_golden() {
        let text = rounds_csv(&[sample_report()]);
        assert_eq!(
            text,
            format!("{ROUNDS_HEADER}\n3,saliency,1.5,0,4,0.02,0.09,3\n")
        );
    }

    #[test]
    fn per_device_csv_golden() {
        let text = per_device_csv(&[sample_report()]);
        assert_eq!(text, format!("{PER_DEVICE_HEADER}\n3,oneplus-3,1.5,0,4\n"));
    }

    #[test]
    fn manifest_round_trips_config() {
        let config = ExperimentConfig::default();
        let text = manifest_toml(&config).unwrap();
        assert!(text.contains("format_version = 1"));
        let value: toml::Value = toml::from_str(&text).unwrap();
        assert_eq!(
            value["config"]["master_seed"].as_integer(),
            Some(config.master_seed as i64)
        );
    }

    #[test]
    fn identical_inputs_yield_identical_bytes() {
        let a = rounds_csv(&[sample_report()]);
        let b = rounds_csv(&[sample_report()]);
        assert_eq!(a, b);
    }
}
