//! Server pre-training and client fine-tuning of the fused network.

use rand::seq::SliceRandom;

use crate::data::FingerprintSet;
use crate::error::{Error, Result};
use crate::fused::{joint_loss_and_grads, per_sample_rce, FusedParams};
use crate::nn::AdamState;
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Server-side defaults: lr 0.001, mini-batch 32. Desk-scale epoch count;
    /// 700 epochs stays one config flag away.
    pub fn pretrain_default(seed: u64) -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.001,
            batch_size: 32,
            seed,
        }
    }

    /// Lightweight local training: lr 0.0001, 5 epochs.
    pub fn finetune_default(seed: u64) -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.0001,
            batch_size: 32,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: FusedParams,
    /// Per-sample RCE of the trained model on its own training set; used to
    /// validate the routing threshold.
    pub clean_rce: Vec<f32>,
    /// Mean joint loss per epoch.
    pub epoch_losses: Vec<f32>,
}

fn train_in_place(
    params: &mut FusedParams,
    set: &FingerprintSet,
    config: &TrainConfig,
) -> Result<Vec<f32>> {
    if set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    set.validate()?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut adam = AdamState::new(params.parameter_count(), config.learning_rate);
    let mut rng = seeded_rng(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut flat = params.to_flat();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_acc = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let x = set.features.gather_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| set.labels[i]).collect();
            let (loss, grads) = joint_loss_and_grads(params, &x, &labels)?;
            loss_acc += f64::from(loss.total) * batch.len() as f64;
            adam.step(&mut flat, &grads.to_flat())?;
            params.copy_from_flat(&flat)?;
        }
        epoch_losses.push((loss_acc / set.len() as f64) as f32);
    }
    Ok(epoch_losses)
}

/// Joint training of encoder, classifier, and decoder biases on the server's
/// training set. Returns the trained model together with its clean-set RCE
/// distribution.
pub fn server_pretrain(
    train_set: &FingerprintSet,
    config: &TrainConfig,
) -> Result<PretrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("pre-training set is empty".into()));
    }
    let mut params = FusedParams::new(
        train_set.features.cols(),
        train_set.num_rps(),
        derive_seed(config.seed, "init"),
    )?;
    let epoch_losses = train_in_place(&mut params, train_set, config)?;
    let recon = crate::fused::decode(
        &crate::fused::encode(&train_set.features, &params)?,
        &params,
    )?;
    let clean_rce = per_sample_rce(&train_set.features, &recon)?;
    Ok(PretrainOutcome {
        params,
        clean_rce,
        epoch_losses,
    })
}

/// Five short epochs at the reduced learning rate; the input params are left
/// untouched.
pub fn client_finetune(
    params: &FusedParams,
    local_set: &FingerprintSet,
    config: &TrainConfig,
) -> Result<FusedParams> {
    if local_set.is_empty() {
        return Err(Error::Config("local set is empty".into()));
    }
    let mut updated = params.clone();
    train_in_place(&mut updated, local_set, config)?;
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_device_profiles, generate_floorplan, synthesize_fingerprints};

    fn small_set() -> FingerprintSet {
        let floorplan = generate_floorplan("train", 6, 10, 3).unwrap();
        let device = default_device_profiles().remove(2);
        synthesize_fingerprints(&floorplan, &device, 4, 8).unwrap()
    }

    #[test]
    fn empty_set_is_config_error() {
        let set = small_set();
        let empty = FingerprintSet {
            features: crate::nn::DenseMatrix::zeros(0, 10),
            labels: vec![],
            ..set
        };
        let cfg = TrainConfig::pretrain_default(1);
        assert!(server_pretrain(&empty, &cfg).is_err());
    }

    #[test]
    fn finetune_is_pure_and_deterministic() {
        let set = small_set();
        let cfg = TrainConfig {
            epochs: 8,
            ..TrainConfig::pretrain_default(1)
        };
        let outcome = server_pretrain(&set, &cfg).unwrap();
        let before = outcome.params.to_flat();
        let ft_cfg = TrainConfig::finetune_default(5);
        let a = client_finetune(&outcome.params, &set, &ft_cfg).unwrap();
        let b = client_finetune(&outcome.params, &set, &ft_cfg).unwrap();
        assert_eq!(outcome.params.to_flat(), before);
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), before);
    }

    #[test]
    fn pretrain_loss_decreases() {
        let set = small_set();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::pretrain_default(2)
        };
        let outcome = server_pretrain(&set, &cfg).unwrap();
        let first = outcome.epoch_losses[0];
        let last = *outcome.epoch_losses.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }
}
