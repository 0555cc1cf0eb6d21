//! Federated round loop: GM distribution, honest and malicious client
//! behavior, upload, and aggregation.

mod aggregate;

pub use aggregate::{
    adjust_update, aggregate_fedavg, aggregate_saliency, deviation_matrix, saliency_map,
    Aggregation, AggregationMode, SaliencyMaps,
};

use rayon::prelude::*;

use crate::attacks::{attack_label_flip, poison_features, AttackKind, AttackSpec};
use crate::data::FingerprintSet;
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, RoundReport};
use crate::fused::{
    client_finetune, route_and_classify, FusedParams, NamedTensor, RoutePath, TrainConfig,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub client_id: String,
    pub device_id: String,
    /// Ground-truth bookkeeping only; the server never reads this flag.
    pub malicious: bool,
    pub attack: Option<AttackSpec>,
    pub local_data: FingerprintSet,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.malicious != self.attack.is_some() {
            return Err(Error::Config(format!(
                "client {}: malicious flag must match attack presence",
                self.client_id
            )));
        }
        self.local_data.validate()
    }
}

/// One client's post-training upload.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: String,
    pub tensors: Vec<NamedTensor>,
    pub sample_count: usize,
}

#[derive(Debug, Clone)]
pub struct RoundOptions {
    pub aggregation: Aggregation,
    pub mode: AggregationMode,
    pub tau: f32,
    pub round_seed: u64,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub batch_size: usize,
}

struct ClientOutcome {
    update: ClientUpdate,
    denoise_triggers: usize,
    rce_sum: f64,
    rce_max: f32,
    sample_count: usize,
}

fn client_step(
    gm: &FusedParams,
    client: &ClientConfig,
    opts: &RoundOptions,
) -> Result<ClientOutcome> {
    client.validate()?;
    let seed = derive_seed(opts.round_seed, &format!("client/{}", client.client_id));
    let num_rps = client.local_data.num_rps();

    // Perturbation attackers poison their fingerprints before evaluating them.
    let features = match &client.attack {
        Some(spec) if spec.kind.perturbs_features() => {
            let attack_seed = derive_seed(
                spec.seed,
                &format!("round/{}/{}", opts.round_seed, client.client_id),
            );
            poison_features(
                gm,
                &client.local_data.features,
                &client.local_data.labels,
                &spec.with_seed(attack_seed),
            )?
        }
        _ => client.local_data.features.clone(),
    };

    // Self-labeling through the routed classifier. Samples flagged by the
    // RCE check re-train on their de-noised reconstruction instead of the
    // raw fingerprint, so a larger tau admits more raw poison into the LM.
    let routing = route_and_classify(&features, gm, opts.tau)?;
    let mut labels = routing.predicted_labels();
    let mut features = features;
    for (r, path) in routing.path.iter().enumerate() {
        if *path == RoutePath::Denoise {
            features
                .row_mut(r)
                .copy_from_slice(routing.reconstructed.row(r));
        }
    }

    // Label-flipping attackers flip the predicted labels before retraining.
    if let Some(spec) = &client.attack {
        if spec.kind == AttackKind::LabelFlip {
            let attack_seed = derive_seed(
                spec.seed,
                &format!("round/{}/{}", opts.round_seed, client.client_id),
            );
            labels = attack_label_flip(&labels, num_rps, &spec.with_seed(attack_seed))?;
        }
    }

    let local_set = client
        .local_data
        .with_features(features)
        .with_labels(labels);
    let config = TrainConfig {
        epochs: opts.finetune_epochs,
        learning_rate: opts.finetune_lr,
        batch_size: opts.batch_size,
        seed,
    };
    let lm = client_finetune(gm, &local_set, &config)?;

    let rce_sum: f64 = routing.rce.iter().map(|&v| f64::from(v)).sum();
    let rce_max = routing.rce.iter().copied().fold(0.0f32, f32::max);
    Ok(ClientOutcome {
        update: ClientUpdate {
            client_id: client.client_id.clone(),
            tensors: lm.to_named_tensors(),
            sample_count: local_set.len(),
        },
        denoise_triggers: routing.denoise_count(),
        rce_sum,
        rce_max,
        sample_count: local_set.len(),
    })
}

/// Executes one federated round and evaluates the new GM on the held-out
/// test sets. Clients run independently (in parallel) with seeds derived
/// from `(round_seed, client_id)`, so scheduling order cannot change results.
pub fn run_round(
    gm: &FusedParams,
    clients: &[ClientConfig],
    opts: &RoundOptions,
    test_sets: &[FingerprintSet],
) -> Result<(FusedParams, RoundReport)> {
    if clients.is_empty() {
        return Err(Error::Config("round needs at least one client".into()));
    }
    let mut ordered: Vec<&ClientConfig> = clients.iter().collect();
    ordered.sort_by(|a, b| a.client_id.cmp(&b.client_id));

    let outcomes: Vec<ClientOutcome> = ordered
        .par_iter()
        .map(|client| client_step(gm, client, opts))
        .collect::<Result<_>>()?;

    let updates: Vec<ClientUpdate> = outcomes.iter().map(|o| o.update.clone()).collect();
    let new_gm = match opts.aggregation {
        Aggregation::Saliency => aggregate_saliency(gm, &updates, opts.mode)?,
        Aggregation::Fedavg => aggregate_fedavg(gm, &updates)?,
    };

    let total_samples: usize = outcomes.iter().map(|o| o.sample_count).sum();
    let rce_mean = if total_samples > 0 {
        (outcomes.iter().map(|o| o.rce_sum).sum::<f64>() / total_samples as f64) as f32
    } else {
        0.0
    };
    let rce_max = outcomes.iter().map(|o| o.rce_max).fold(0.0f32, f32::max);
    let denoise_triggers: Vec<(String, usize)> = ordered
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| (c.client_id.clone(), o.denoise_triggers))
        .collect();

    let mut report = evaluate_model(&new_gm, test_sets, opts.tau)?;
    report.rce_mean = rce_mean;
    report.rce_max = rce_max;
    report.denoise_triggers = denoise_triggers;
    report.aggregation = opts.aggregation.name().to_string();
    Ok((new_gm, report))
}
