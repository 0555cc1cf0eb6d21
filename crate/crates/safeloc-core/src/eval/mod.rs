//! Evaluation: localization-error metrics, per-round reports, and the
//! config-driven experiment runner with its sweep protocols.

pub mod report;
mod run;

pub use run::{
    run_experiment, sweep_clients, sweep_epsilon, sweep_tau, synthesize_datasets, ClientSweepRow,
    DatasetBundle, EpsilonSweepRow, RunSummary, TauSweepRow, Workbench,
};

use crate::data::FingerprintSet;
use crate::error::{Error, Result};
use crate::fused::{argmax_rows, route_and_classify, FusedParams};
use crate::nn::DenseMatrix;

/// Localization error statistics for one device's test set.
#[derive(Debug, Clone)]
pub struct DeviceErrorStats {
    pub device_id: String,
    pub mean_error_m: f32,
    pub best_error_m: f32,
    pub worst_error_m: f32,
}

/// Per-round report: localization error in meters, RCE statistics, and
/// de-noise trigger counts per client.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub aggregation: String,
    pub mean_error_m: f32,
    pub best_error_m: f32,
    pub worst_error_m: f32,
    pub per_device: Vec<DeviceErrorStats>,
    pub rce_mean: f32,
    pub rce_max: f32,
    pub denoise_triggers: Vec<(String, usize)>,
}

impl RoundReport {
    pub fn total_denoise_triggers(&self) -> usize {
        self.denoise_triggers.iter().map(|(_, n)| n).sum()
    }
}

/// Euclidean distance in meters between the argmax-predicted RP and the true
/// RP, per sample. Argmax ties break to the lowest class index.
pub fn localization_error(
    logits: &DenseMatrix,
    true_labels: &[usize],
    rp_coords: &[(f32, f32)],
) -> Result<(f32, f32, f32, Vec<f32>)> {
    if true_labels.len() != logits.rows() {
        return Err(Error::dimension(
            "localization_error",
            logits.rows(),
            true_labels.len(),
        ));
    }
    if logits.cols() > rp_coords.len() {
        return Err(Error::Config(format!(
            "missing coordinates: {} classes but {} RP coords",
            logits.cols(),
            rp_coords.len()
        )));
    }
    for &label in true_labels {
        if label >= rp_coords.len() {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: rp_coords.len(),
            });
        }
    }
    let predictions = argmax_rows(logits);
    let per_sample: Vec<f32> = predictions
        .iter()
        .zip(true_labels)
        .map(|(&pred, &truth)| {
            let (px, py) = rp_coords[pred];
            let (tx, ty) = rp_coords[truth];
            (px - tx).hypot(py - ty)
        })
        .collect();
    Ok((
        mean_f32(&per_sample),
        per_sample.iter().copied().fold(f32::INFINITY, f32::min),
        per_sample.iter().copied().fold(0.0f32, f32::max),
        per_sample,
    ))
}

pub(crate) fn mean_f32(values: &[f32]) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64) as f32
}

/// Runs the routed classifier over every test set and collects error stats,
/// overall and per device.
pub fn evaluate_model(
    params: &FusedParams,
    test_sets: &[FingerprintSet],
    tau: f32,
) -> Result<RoundReport> {
    let mut all_errors: Vec<f32> = Vec::new();
    let mut per_device = Vec::with_capacity(test_sets.len());
    for set in test_sets {
        let routing = route_and_classify(&set.features, params, tau)?;
        let (mean, best, worst, per_sample) =
            localization_error(&routing.logits, &set.labels, &set.rp_coords)?;
        per_device.push(DeviceErrorStats {
            device_id: set.device_id.clone(),
            mean_error_m: mean,
            best_error_m: best,
            worst_error_m: worst,
        });
        all_errors.extend(per_sample);
    }
    Ok(RoundReport {
        round: 0,
        aggregation: String::new(),
        mean_error_m: mean_f32(&all_errors),
        best_error_m: all_errors.iter().copied().fold(f32::INFINITY, f32::min),
        worst_error_m: all_errors.iter().copied().fold(0.0f32, f32::max),
        per_device,
        rce_mean: 0.0,
        rce_max: 0.0,
        denoise_triggers: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_coords(n: usize) -> Vec<(f32, f32)> {
        (0..n).map(|i| (i as f32, 0.0)).collect()
    }

    fn one_hot_logits(predictions: &[usize], classes: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(predictions.len(), classes);
        for (r, &p) in predictions.iter().enumerate() {
            m.set(r, p, 1.0);
        }
        m
    }

    #[test]
    fn perfect_predictions_give_zero_error() {
        let coords = line_coords(4);
        let logits = one_hot_logits(&[0, 1, 2, 3], 4);
        let (mean, best, worst, _) = localization_error(&logits, &[0, 1, 2, 3], &coords).unwrap();
        assert_eq!((mean, best, worst), (0.0, 0.0, 0.0));
    }

    #[test]
    fn adjacent_rp_is_one_meter() {
        let coords = line_coords(4);
        let logits = one_hot_logits(&[1], 4);
        let (mean, _, _, per) = localization_error(&logits, &[0], &coords).unwrap();
        assert_eq!(mean, 1.0);
        assert_eq!(per, vec![1.0]);
    }

    #[test]
    fn mixed_batch_statistics() {
        let coords = line_coords(4);
        let logits = one_hot_logits(&[0, 1, 3], 4);
        let (mean, best, worst, _) = localization_error(&logits, &[0, 1, 0], &coords).unwrap();
        assert_eq!((mean, best, worst), (1.0, 0.0, 3.0));
    }

    #[test]
    fn argmax_ties_break_low() {
        let coords = line_coords(3);
        let logits = DenseMatrix::from_vec(1, 3, vec![0.5, 0.5, 0.0]).unwrap();
        let (_, _, _, per) = localization_error(&logits, &[0], &coords).unwrap();
        assert_eq!(per, vec![0.0]);
    }

    #[test]
    fn missing_coordinates_is_config_error() {
        let logits = DenseMatrix::zeros(1, 5);
        assert!(localization_error(&logits, &[0], &line_coords(3)).is_err());
    }
}
