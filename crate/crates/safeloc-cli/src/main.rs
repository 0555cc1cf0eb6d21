//! `safeloc`: config-driven front end for the federated indoor-localization
//! simulator. Every subcommand is deterministic in the configured seed.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use safeloc_core::attacks::AttackKind;
use safeloc_core::config::ExperimentConfig;
use safeloc_core::data::export_csv;
use safeloc_core::eval::report;
use safeloc_core::eval::{
    run_experiment, sweep_clients, sweep_epsilon, sweep_tau, synthesize_datasets, Workbench,
};
use safeloc_core::fl::{Aggregation, AggregationMode};
use safeloc_core::fused::save_checkpoint;

#[derive(Parser)]
#[command(
    name = "safeloc",
    version,
    about = "Federated Wi-Fi localization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that builds an experiment.
#[derive(Args)]
struct CommonOpts {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Aggregation rule: saliency | fedavg.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Saliency update rule: normalized | paper-literal.
    #[arg(long)]
    mode: Option<AggregationMode>,
    /// Use the full-scale server training schedule (700 epochs).
    #[arg(long)]
    paper_scale: bool,
}

impl CommonOpts {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load_toml(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        }
        if let Some(aggregation) = self.aggregation {
            config.federation.aggregation = aggregation;
        }
        if let Some(mode) = self.mode {
            config.federation.mode = mode;
        }
        if self.paper_scale {
            config = config.with_paper_scale();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize fingerprint CSVs for every configured device.
    GenData(CommonOpts),
    /// Pre-train the global model and save a checkpoint.
    Pretrain(CommonOpts),
    /// Run the configured federated experiment end to end.
    Simulate(CommonOpts),
    /// Sweep the routing threshold grid.
    SweepTau(CommonOpts),
    /// Sweep attack strength for one attack kind.
    SweepEps {
        #[command(flatten)]
        common: CommonOpts,
        /// Attack kind: clb | fgsm | pgd | mim | label_flip.
        #[arg(long)]
        attack: AttackKind,
    },
    /// Sweep the (total, poisoned) client grid.
    SweepClients(CommonOpts),
    /// Summarize a previously written rounds.csv.
    Report {
        /// Directory containing rounds.csv (as written by `simulate`).
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(common) => gen_data(&common),
        Command::Pretrain(common) => pretrain(&common),
        Command::Simulate(common) => simulate(&common),
        Command::SweepTau(common) => run_sweep_tau(&common),
        Command::SweepEps { common, attack } => run_sweep_eps(&common, attack),
        Command::SweepClients(common) => run_sweep_clients(&common),
        Command::Report { out } => summarize(&out),
    }
}

fn gen_data(common: &CommonOpts) -> Result<()> {
    let config = common.resolve()?;
    let data = synthesize_datasets(&config)?;
    std::fs::create_dir_all(&common.out)?;
    let train_path = common
        .out
        .join(format!("train-{}.csv", config.train_device));
    export_csv(&data.train_set, &train_path)?;
    println!("wrote {}", train_path.display());
    for set in &data.test_sets {
        let path = common.out.join(format!("test-{}.csv", set.device_id));
        export_csv(set, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn pretrain(common: &CommonOpts) -> Result<()> {
    let config = common.resolve()?;
    let workbench = Workbench::prepare(&config)?;
    std::fs::create_dir_all(&common.out)?;
    let ckpt = common.out.join("model.ckpt");
    save_checkpoint(&workbench.pretrain.params, &ckpt)?;
    let baseline = workbench.baseline_report(config.federation.tau)?;
    println!("wrote {}", ckpt.display());
    println!(
        "pretrain: {} epochs, final loss {:.6}, baseline error {:.4} m",
        config.training.pretrain_epochs,
        workbench
            .pretrain
            .epoch_losses
            .last()
            .copied()
            .unwrap_or(f32::NAN),
        baseline.mean_error_m,
    );
    Ok(())
}

fn simulate(common: &CommonOpts) -> Result<()> {
    let config = common.resolve()?;
    let summary = run_experiment(&config, &common.out)?;
    println!(
        "baseline {:.4} m, final {:.4} m after {} rounds ({})",
        summary.baseline.mean_error_m,
        summary.final_error_m,
        summary.rounds.len(),
        config.federation.aggregation.name(),
    );
    println!("results in {}", common.out.display());
    Ok(())
}

fn run_sweep_tau(common: &CommonOpts) -> Result<()> {
    let config = common.resolve()?;
    let workbench = Workbench::prepare(&config)?;
    let rows = sweep_tau(&workbench)?;
    report::write_text(&common.out, "tau_sweep.csv", &report::tau_sweep_csv(&rows))?;
    for row in &rows {
        println!(
            "tau {:.2}: {:.4} m, denoise fraction {:.3}",
            row.tau, row.mean_error_m, row.denoise_fraction
        );
    }
    Ok(())
}

fn run_sweep_eps(common: &CommonOpts, attack: AttackKind) -> Result<()> {
    let config = common.resolve()?;
    let workbench = Workbench::prepare(&config)?;
    let rows = sweep_epsilon(&workbench, attack)?;
    let name = format!("epsilon_sweep_{}.csv", attack.name());
    report::write_text(&common.out, &name, &report::epsilon_sweep_csv(&rows))?;
    for row in &rows {
        println!(
            "{} eps {:.2}: {:.4} m",
            row.attack, row.epsilon, row.mean_error_m
        );
    }
    Ok(())
}

fn run_sweep_clients(common: &CommonOpts) -> Result<()> {
    let config = common.resolve()?;
    let workbench = Workbench::prepare(&config)?;
    let rows = sweep_clients(&workbench)?;
    report::write_text(
        &common.out,
        "client_sweep.csv",
        &report::client_sweep_csv(&rows),
    )?;
    for row in &rows {
        println!(
            "{} clients / {} poisoned: {:.4} m",
            row.clients, row.malicious, row.mean_error_m
        );
    }
    Ok(())
}

fn summarize(out: &std::path::Path) -> Result<()> {
    let path = out.join("rounds.csv");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let Some(_header) = lines.next() else {
        bail!("{} is empty", path.display());
    };
    println!(
        "{:>5}  {:>12}  {:>10}  {:>10}  {:>10}",
        "round", "aggregation", "mean (m)", "best (m)", "worst (m)"
    );
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            bail!("malformed row in {}: {line}", path.display());
        }
        println!(
            "{:>5}  {:>12}  {:>10}  {:>10}  {:>10}",
            fields[0], fields[1], fields[2], fields[3], fields[4]
        );
    }
    Ok(())
}
