//! Data-poisoning attack generators: clean-label backdoor, FGSM, PGD, MIM,
//! and label flipping. The perturbation attacks operate on the victim
//! model's classification-loss gradient with respect to the fingerprints and
//! keep every output inside `[0, 1]` and inside the L-inf ball of radius
//! epsilon around the original samples.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fused::{classification_input_gradient, FusedParams};
use crate::nn::DenseMatrix;
use crate::rng::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Clb,
    Fgsm,
    Pgd,
    Mim,
    LabelFlip,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Clb,
        AttackKind::Fgsm,
        AttackKind::Pgd,
        AttackKind::Mim,
        AttackKind::LabelFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Clb => "clb",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Mim => "mim",
            AttackKind::LabelFlip => "label_flip",
        }
    }

    pub fn perturbs_features(self) -> bool {
        self != AttackKind::LabelFlip
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Perturbation magnitude in normalized-RSS units; for label flipping,
    /// the fraction of samples whose labels are flipped.
    pub epsilon: f32,
    /// MIM momentum decay.
    pub alpha: f32,
    /// PGD/MIM iteration count.
    pub iterations: usize,
    /// CLB: fraction of features perturbed per sample.
    pub mask_fraction: f32,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, epsilon: f32, seed: u64) -> Self {
        AttackSpec {
            kind,
            epsilon,
            alpha: 0.9,
            iterations: 10,
            mask_fraction: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return Err(Error::Config("mask_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Gradient of the victim's clean-path classification loss with respect to
/// the fingerprints; same shape as `x`.
pub fn input_gradient(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
) -> Result<DenseMatrix> {
    classification_input_gradient(params, x, labels)
}

fn clamp_unit(x: &mut DenseMatrix) {
    for v in x.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// `x + epsilon * sign(grad)`, clamped to `[0, 1]`. `sign(0) = 0`.
pub fn attack_fgsm(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<DenseMatrix> {
    spec.validate()?;
    let grad = input_gradient(params, x, labels)?;
    let mut out = x.clone();
    for (v, &g) in out.data_mut().iter_mut().zip(grad.data()) {
        *v += spec.epsilon * sign(g);
    }
    clamp_unit(&mut out);
    Ok(out)
}

#[inline]
fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn row_l2(row: &[f32]) -> f32 {
    row.iter().map(|&v| v * v).sum::<f32>().sqrt()
}

/// Shared PGD/MIM iterate: per-sample L2-normalized gradient steps of size
/// `epsilon / iterations`, projected onto the L-inf ball of radius epsilon
/// around the original samples and clamped to `[0, 1]`. With `momentum`
/// present the normalized gradients accumulate into a decayed buffer first.
fn iterative_attack<F>(
    mut grad_fn: F,
    x: &DenseMatrix,
    epsilon: f32,
    iterations: usize,
    momentum: Option<f32>,
) -> Result<DenseMatrix>
where
    F: FnMut(&DenseMatrix) -> Result<DenseMatrix>,
{
    let step = epsilon / iterations as f32;
    let mut current = x.clone();
    let mut buffer = momentum.map(|_| DenseMatrix::zeros(x.rows(), x.cols()));
    for _ in 0..iterations {
        let grad = grad_fn(&current)?;
        for r in 0..x.rows() {
            let direction: Vec<f32> = match (&mut buffer, momentum) {
                (Some(buf), Some(alpha)) => {
                    let gnorm = row_l2(grad.row(r));
                    let buf_row = buf.row_mut(r);
                    for (m, &g) in buf_row.iter_mut().zip(grad.row(r)) {
                        *m = alpha * *m + if gnorm > 0.0 { g / gnorm } else { 0.0 };
                    }
                    let mnorm = row_l2(buf_row);
                    if mnorm == 0.0 {
                        continue; // zero-norm accumulator: skip this row's step
                    }
                    buf_row.iter().map(|&m| m / mnorm).collect()
                }
                _ => {
                    let gnorm = row_l2(grad.row(r));
                    if gnorm == 0.0 {
                        continue; // zero-norm gradient: skip, no division
                    }
                    grad.row(r).iter().map(|&g| g / gnorm).collect()
                }
            };
            let cur = current.row_mut(r);
            let orig = x.row(r);
            for ((c, d), &o) in cur.iter_mut().zip(direction).zip(orig) {
                let moved = *c + step * d;
                *c = moved.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
            }
        }
    }
    Ok(current)
}

/// Projected gradient descent, recomputing the gradient each iteration.
pub fn attack_pgd(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<DenseMatrix> {
    spec.validate()?;
    iterative_attack(
        |cur| input_gradient(params, cur, labels),
        x,
        spec.epsilon,
        spec.iterations,
        None,
    )
}

/// Momentum iterative method; with `alpha = 0` this degenerates to PGD.
pub fn attack_mim(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<DenseMatrix> {
    spec.validate()?;
    iterative_attack(
        |cur| input_gradient(params, cur, labels),
        x,
        spec.epsilon,
        spec.iterations,
        Some(spec.alpha),
    )
}

/// Clean-label backdoor: perturbs the `mask_fraction` features with the
/// largest gradient magnitude per sample (ties to the lowest feature index)
/// by `epsilon * sign(grad)`; labels stay untouched.
pub fn attack_clb(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<DenseMatrix> {
    spec.validate()?;
    let grad = input_gradient(params, x, labels)?;
    let dim = x.cols();
    let k = ((spec.mask_fraction as f64) * dim as f64).ceil() as usize;
    let mut out = x.clone();
    for r in 0..x.rows() {
        let grow = grad.row(r);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            grow[b]
                .abs()
                .partial_cmp(&grow[a].abs())
                .expect("finite gradients")
                .then(a.cmp(&b))
        });
        let row = out.row_mut(r);
        for &idx in order.iter().take(k) {
            row[idx] += spec.epsilon * sign(grow[idx]);
        }
    }
    clamp_unit(&mut out);
    Ok(out)
}

/// Flips a `spec.epsilon` fraction of labels to a uniformly random different
/// class; fingerprints are never modified.
pub fn attack_label_flip(
    labels: &[usize],
    num_classes: usize,
    spec: &AttackSpec,
) -> Result<Vec<usize>> {
    spec.validate()?;
    if num_classes < 2 {
        return Err(Error::Config("label flipping needs >= 2 classes".into()));
    }
    for &label in labels {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
    }
    let n = labels.len();
    let flip_count = ((f64::from(spec.epsilon) * n as f64).round() as usize).min(n);
    let mut rng = seeded_rng(spec.seed, "label-flip");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut flipped = labels.to_vec();
    for &i in order.iter().take(flip_count) {
        let draw = rng.gen_range(0..num_classes - 1);
        flipped[i] = if draw >= labels[i] { draw + 1 } else { draw };
    }
    Ok(flipped)
}

/// Dispatch for the feature-perturbing attacks.
pub fn poison_features(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<DenseMatrix> {
    match spec.kind {
        AttackKind::Clb => attack_clb(params, x, labels, spec),
        AttackKind::Fgsm => attack_fgsm(params, x, labels, spec),
        AttackKind::Pgd => attack_pgd(params, x, labels, spec),
        AttackKind::Mim => attack_mim(params, x, labels, spec),
        AttackKind::LabelFlip => Err(Error::Config("label_flip does not perturb features".into())),
    }
}
