//! Config-driven experiment runner: data synthesis, server pre-training,
//! the federated round loop, and the three sweep protocols.

use std::path::Path;

use rayon::prelude::*;

use crate::attacks::AttackKind;
use crate::config::{AttackConfig, ExperimentConfig};
use crate::data::{generate_floorplan, synthesize_fingerprints, FingerprintSet, FloorplanConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, report, RoundReport};
use crate::fl::{run_round, ClientConfig, RoundOptions};
use crate::fused::{save_checkpoint, server_pretrain, FusedParams, PretrainOutcome, TrainConfig};
use crate::rng::derive_seed;

/// Everything expensive that sweeps share: the synthesized building, the
/// train/test split, and the pre-trained global model.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub floorplan: FloorplanConfig,
    pub train_set: FingerprintSet,
    pub test_sets: Vec<FingerprintSet>,
    pub pretrain: PretrainOutcome,
}

/// The synthesized building and train/test split, before any training.
pub struct DatasetBundle {
    pub floorplan: FloorplanConfig,
    pub train_set: FingerprintSet,
    pub test_sets: Vec<FingerprintSet>,
}

/// Synthesizes the floorplan, the training-device survey, and one test set
/// per remaining device, all derived from the master seed.
pub fn synthesize_datasets(config: &ExperimentConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let mut floorplan = generate_floorplan(
        &config.building.building_id,
        config.building.num_rps,
        config.building.num_aps,
        derive_seed(config.master_seed, "floorplan"),
    )?;
    floorplan.path_loss_exponent = config.building.path_loss_exponent;
    floorplan.ref_power_dbm = config.building.ref_power_dbm;
    floorplan.shadowing_sigma_db = config.building.shadowing_sigma_db;

    let train_device = config
        .devices
        .iter()
        .find(|d| d.device_id == config.train_device)
        .expect("validated");
    let train_set = synthesize_fingerprints(
        &floorplan,
        train_device,
        config.data.train_samples_per_rp,
        derive_seed(config.master_seed, "split/train"),
    )?;
    let test_sets = config
        .devices
        .iter()
        .filter(|d| d.device_id != config.train_device)
        .map(|device| {
            synthesize_fingerprints(
                &floorplan,
                device,
                config.data.test_samples_per_rp,
                derive_seed(
                    config.master_seed,
                    &format!("split/test/{}", device.device_id),
                ),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DatasetBundle {
        floorplan,
        train_set,
        test_sets,
    })
}

impl Workbench {
    pub fn prepare(config: &ExperimentConfig) -> Result<Workbench> {
        let data = synthesize_datasets(config)?;
        let pretrain_cfg = TrainConfig {
            epochs: config.training.pretrain_epochs,
            learning_rate: config.training.pretrain_lr,
            batch_size: config.training.batch_size,
            seed: derive_seed(config.master_seed, "pretrain"),
        };
        let pretrain = server_pretrain(&data.train_set, &pretrain_cfg)?;
        Ok(Workbench {
            config: config.clone(),
            floorplan: data.floorplan,
            train_set: data.train_set,
            test_sets: data.test_sets,
            pretrain,
        })
    }

    /// Local fingerprints for client `i`; devices cycle through the profile
    /// table so heterogeneity shows up with any client count.
    pub fn client_data(&self, i: usize) -> Result<FingerprintSet> {
        let device = &self.config.devices[i % self.config.devices.len()];
        synthesize_fingerprints(
            &self.floorplan,
            device,
            self.config.data.client_samples_per_rp,
            derive_seed(self.config.master_seed, &format!("client-data/{i}")),
        )
    }

    /// `total` clients, the last `malicious` of them running `attack`.
    /// Malicious clients report the last device profile in the table.
    pub fn build_clients(
        &self,
        total: usize,
        malicious: usize,
        attack: &AttackConfig,
    ) -> Result<Vec<ClientConfig>> {
        if malicious > total {
            return Err(Error::Config(format!(
                "{malicious} malicious clients exceed {total} total"
            )));
        }
        let attacker_device = self.config.devices.last().expect("validated").clone();
        (0..total)
            .map(|i| {
                let client_id = format!("client-{i:03}");
                let is_malicious = i >= total - malicious;
                let local_data = self.client_data(i)?;
                let (device_id, attack_spec) = if is_malicious {
                    let seed = derive_seed(self.config.master_seed, &format!("attack/{client_id}"));
                    (
                        attacker_device.device_id.clone(),
                        Some(attack.to_spec(seed)),
                    )
                } else {
                    (
                        self.config.devices[i % self.config.devices.len()]
                            .device_id
                            .clone(),
                        None,
                    )
                };
                Ok(ClientConfig {
                    client_id,
                    device_id,
                    malicious: is_malicious,
                    attack: attack_spec,
                    local_data,
                })
            })
            .collect()
    }

    /// Runs `rounds` federated rounds from the pre-trained model and returns
    /// the final GM with one report per round (numbered from 1), evaluated on
    /// the held-out test sets.
    pub fn run_rounds(
        &self,
        clients: &[ClientConfig],
        rounds: usize,
        tau: f32,
    ) -> Result<(FusedParams, Vec<RoundReport>)> {
        self.run_rounds_on(clients, rounds, tau, &self.test_sets)
    }

    /// As [`Workbench::run_rounds`], but evaluating each round's model on
    /// `eval_sets` instead of the clean test sets.
    pub fn run_rounds_on(
        &self,
        clients: &[ClientConfig],
        rounds: usize,
        tau: f32,
        eval_sets: &[FingerprintSet],
    ) -> Result<(FusedParams, Vec<RoundReport>)> {
        let mut gm = self.pretrain.params.clone();
        let mut reports = Vec::with_capacity(rounds);
        for round in 1..=rounds {
            let opts = RoundOptions {
                aggregation: self.config.federation.aggregation,
                mode: self.config.federation.mode,
                tau,
                round_seed: derive_seed(self.config.master_seed, &format!("round/{round}")),
                finetune_epochs: self.config.training.finetune_epochs,
                finetune_lr: self.config.training.finetune_lr,
                batch_size: self.config.training.batch_size,
            };
            let (next_gm, mut report) = run_round(&gm, clients, &opts, eval_sets)?;
            report.round = round;
            gm = next_gm;
            reports.push(report);
        }
        Ok((gm, reports))
    }

    /// Round-0 evaluation of the pre-trained model, before any federation.
    pub fn baseline_report(&self, tau: f32) -> Result<RoundReport> {
        let mut report = evaluate_model(&self.pretrain.params, &self.test_sets, tau)?;
        report.aggregation = "pretrain".into();
        Ok(report)
    }
}

fn mean_over_rounds(reports: &[RoundReport]) -> f32 {
    let values: Vec<f32> = reports.iter().map(|r| r.mean_error_m).collect();
    super::mean_f32(&values)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub baseline: RoundReport,
    pub rounds: Vec<RoundReport>,
    pub final_error_m: f32,
}

/// Full experiment: prepare the workbench, run the configured rounds, and
/// write `rounds.csv`, `per_device.csv`, `manifest.toml`, and `model.ckpt`
/// into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let workbench = Workbench::prepare(config)?;
    let clients = workbench.build_clients(
        config.federation.clients,
        config.federation.malicious,
        &config.attack,
    )?;
    let baseline = workbench.baseline_report(config.federation.tau)?;
    let (gm, rounds) =
        workbench.run_rounds(&clients, config.federation.rounds, config.federation.tau)?;

    let mut all_rows = vec![baseline.clone()];
    all_rows.extend(rounds.iter().cloned());
    report::write_text(out_dir, "rounds.csv", &report::rounds_csv(&all_rows))?;
    report::write_text(
        out_dir,
        "per_device.csv",
        &report::per_device_csv(&all_rows),
    )?;
    report::write_text(out_dir, "manifest.toml", &report::manifest_toml(config)?)?;
    save_checkpoint(&gm, &out_dir.join("model.ckpt"))?;

    let final_error_m = rounds
        .last()
        .map(|r| r.mean_error_m)
        .unwrap_or(baseline.mean_error_m);
    Ok(RunSummary {
        baseline,
        rounds,
        final_error_m,
    })
}

#[derive(Debug, Clone)]
pub struct TauSweepRow {
    pub tau: f32,
    /// Mean over rounds of the mean localization error.
    pub mean_error_m: f32,
    /// Fraction of client samples routed through the de-noise path.
    pub denoise_fraction: f32,
}

/// Sweeps the routing threshold: one federated run per (τ, attack kind) with
/// the configured ε and client split, all sharing the same derived seeds.
/// Each row reports the mean localization error over the five attacks.
pub fn sweep_tau(workbench: &Workbench) -> Result<Vec<TauSweepRow>> {
    let config = &workbench.config;
    // One client roster per attack, shared by every τ.
    let rosters = AttackKind::ALL
        .iter()
        .map(|&kind| {
            let attack = AttackConfig {
                kind,
                ..config.attack.clone()
            };
            workbench.build_clients(
                config.federation.clients,
                config.federation.malicious,
                &attack,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let samples_per_round: usize = rosters[0].iter().map(|c| c.local_data.len()).sum();

    config
        .sweeps
        .tau_grid
        .par_iter()
        .map(|&tau| {
            let mut error_sum = 0.0f64;
            let mut triggered = 0usize;
            let mut total = 0usize;
            for clients in &rosters {
                let (_, reports) = workbench.run_rounds(clients, config.federation.rounds, tau)?;
                error_sum += f64::from(mean_over_rounds(&reports));
                triggered += reports
                    .iter()
                    .map(|r| r.total_denoise_triggers())
                    .sum::<usize>();
                total += samples_per_round * reports.len();
            }
            Ok(TauSweepRow {
                tau,
                mean_error_m: (error_sum / rosters.len() as f64) as f32,
                denoise_fraction: if total > 0 {
                    triggered as f32 / total as f32
                } else {
                    0.0
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EpsilonSweepRow {
    pub attack: String,
    pub epsilon: f32,
    pub mean_error_m: f32,
}

/// Sweeps attack strength for one attack kind, including an epsilon = 0
/// column that must coincide with an attack-free run.
pub fn sweep_epsilon(workbench: &Workbench, kind: AttackKind) -> Result<Vec<EpsilonSweepRow>> {
    let config = &workbench.config;
    let mut grid = vec![0.0f32];
    grid.extend(&config.sweeps.epsilon_grid);
    grid.par_iter()
        .map(|&epsilon| {
            let attack = AttackConfig {
                kind,
                epsilon,
                ..config.attack.clone()
            };
            let clients = workbench.build_clients(
                config.federation.clients,
                config.federation.malicious,
                &attack,
            )?;
            let (_, reports) =
                workbench.run_rounds(&clients, config.federation.rounds, config.federation.tau)?;
            Ok(EpsilonSweepRow {
                attack: kind.name().to_string(),
                epsilon,
                mean_error_m: mean_over_rounds(&reports),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ClientSweepRow {
    pub clients: usize,
    pub malicious: usize,
    pub mean_error_m: f32,
}

/// Sweeps the `(total, poisoned)` client grid with the configured attack.
pub fn sweep_clients(workbench: &Workbench) -> Result<Vec<ClientSweepRow>> {
    let config = &workbench.config;
    config
        .sweeps
        .client_grid
        .par_iter()
        .map(|&(total, malicious)| {
            let clients = workbench.build_clients(total, malicious, &config.attack)?;
            let (_, reports) =
                workbench.run_rounds(&clients, config.federation.rounds, config.federation.tau)?;
            Ok(ClientSweepRow {
                clients: total,
                malicious,
                mean_error_m: mean_over_rounds(&reports),
            })
        })
        .collect()
}
