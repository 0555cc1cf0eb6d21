//! Shared f64 reference implementation of the fused forward pass plus
//! central-difference gradient checkers. The reference shares no code with
//! the crate's backward pass, so agreement validates the analytic gradients.
//!
//! Check points are screened to sit away from ReLU/clamp kinks, so central
//! differences are well defined.

#![allow(dead_code)]

use safeloc_core::fused::{classification_input_gradient, joint_loss_and_grads, FusedParams};
use safeloc_core::nn::{dense_backward, Activation, DenseMatrix, LayerParams};

pub const FD_STEP: f64 = 1e-3;
/// Minimum distance of any pre-activation (or raw reconstruction value) from
/// its kink; FD_STEP perturbations move pre-activations by O(1e-3) here.
pub const KINK_MARGIN: f64 = 2e-2;

// ---------------------------------------------------------------------------
// f64 reference forward pass
// ---------------------------------------------------------------------------

pub struct Dims {
    pub input: usize,
    pub hidden: [usize; 3],
    pub classes: usize,
}

/// Flat layout mirror of `FusedParams::to_flat`.
struct Unpacked<'a> {
    enc_w: [&'a [f64]; 3],
    enc_b: [&'a [f64]; 3],
    clf_w: &'a [f64],
    clf_b: &'a [f64],
    dec_b: [&'a [f64]; 2],
}

fn unpack<'a>(flat: &'a [f64], dims: &Dims) -> Unpacked<'a> {
    let sizes = [
        dims.input * dims.hidden[0],
        dims.hidden[0],
        dims.hidden[0] * dims.hidden[1],
        dims.hidden[1],
        dims.hidden[1] * dims.hidden[2],
        dims.hidden[2],
        dims.hidden[2] * dims.classes,
        dims.classes,
        dims.hidden[1],
        dims.hidden[0],
    ];
    let mut parts = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for s in sizes {
        parts.push(&flat[offset..offset + s]);
        offset += s;
    }
    assert_eq!(offset, flat.len());
    Unpacked {
        enc_w: [parts[0], parts[2], parts[4]],
        enc_b: [parts[1], parts[3], parts[5]],
        clf_w: parts[6],
        clf_b: parts[7],
        dec_b: [parts[8], parts[9]],
    }
}

/// `out[r] = x[r] · W + b` with W row-major `[fan_in x fan_out]`.
fn affine(x: &[Vec<f64>], w: &[f64], b: &[f64], fan_in: usize) -> Vec<Vec<f64>> {
    let fan_out = b.len();
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), fan_in);
            (0..fan_out)
                .map(|j| {
                    b[j] + row
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| v * w[i * fan_out + j])
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// `out[r] = x[r] · Wᵀ + b` for the tied decoder layers; W is
/// `[fan_out x fan_in]` row-major and an empty `b` means no bias.
fn affine_transposed(x: &[Vec<f64>], w: &[f64], b: &[f64], fan_out: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let fan_in = row.len();
            (0..fan_out)
                .map(|j| {
                    b.get(j).copied().unwrap_or(0.0)
                        + row
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| v * w[j * fan_in + i])
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn relu_rows(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter()
        .map(|r| r.iter().map(|&v| v.max(0.0)).collect())
        .collect()
}

pub struct ReferenceForward {
    pub pre_activations: Vec<f64>,
    pub raw: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub recon_loss: f64,
    pub class_loss: f64,
}

pub fn reference_forward(
    flat: &[f64],
    dims: &Dims,
    x: &[Vec<f64>],
    labels: &[usize],
) -> ReferenceForward {
    let p = unpack(flat, dims);
    let mut pre = Vec::new();
    let mut record = |layers: &[Vec<f64>]| {
        for row in layers {
            pre.extend_from_slice(row);
        }
    };

    let z0 = affine(x, p.enc_w[0], p.enc_b[0], dims.input);
    record(&z0);
    let a0 = relu_rows(&z0);
    let z1 = affine(&a0, p.enc_w[1], p.enc_b[1], dims.hidden[0]);
    record(&z1);
    let a1 = relu_rows(&z1);
    let z2 = affine(&a1, p.enc_w[2], p.enc_b[2], dims.hidden[1]);
    record(&z2);
    let a2 = relu_rows(&z2);

    let logits = affine(&a2, p.clf_w, p.clf_b, dims.hidden[2]);

    let zd0 = affine_transposed(&a2, p.enc_w[2], p.dec_b[0], dims.hidden[1]);
    record(&zd0);
    let ad0 = relu_rows(&zd0);
    let zd1 = affine_transposed(&ad0, p.enc_w[1], p.dec_b[1], dims.hidden[0]);
    record(&zd1);
    let ad1 = relu_rows(&zd1);
    let raw = affine_transposed(&ad1, p.enc_w[0], &[], dims.input);

    let total = (x.len() * dims.input) as f64;
    let recon_loss: f64 = raw
        .iter()
        .zip(x)
        .flat_map(|(rr, xr)| {
            rr.iter().zip(xr).map(|(&r, &v)| {
                let d = r.clamp(0.0, 1.0) - v;
                d * d
            })
        })
        .sum::<f64>()
        / total;

    let class_loss: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            lse - row[label]
        })
        .sum::<f64>()
        / labels.len() as f64;

    ReferenceForward {
        pre_activations: pre,
        raw,
        logits,
        recon_loss,
        class_loss,
    }
}

pub fn reference_joint_loss(flat: &[f64], dims: &Dims, x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let fwd = reference_forward(flat, dims, x, labels);
    fwd.recon_loss + fwd.class_loss
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

pub fn dims() -> Dims {
    Dims {
        input: 5,
        hidden: [6, 5, 4],
        classes: 3,
    }
}

pub fn sample_batch(dims: &Dims) -> (DenseMatrix, Vec<usize>) {
    let rows = 3;
    let data: Vec<f32> = (0..rows * dims.input)
        .map(|i| 0.05 + 0.9 * ((i * 37 + 11) % 19) as f32 / 19.0)
        .collect();
    let labels: Vec<usize> = (0..rows).map(|r| r % dims.classes).collect();
    (
        DenseMatrix::from_vec(rows, dims.input, data).unwrap(),
        labels,
    )
}

fn to_f64_rows(x: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|r| x.row(r).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Finds a seed whose parameters place every pre-activation and raw
/// reconstruction value safely away from the ReLU/clamp kinks, so central
/// differences see a locally smooth function.
pub fn kink_free_instance() -> (FusedParams, DenseMatrix, Vec<usize>) {
    let dims = dims();
    let (x, labels) = sample_batch(&dims);
    let x64 = to_f64_rows(&x);
    for seed in 0..20_000u64 {
        let params = FusedParams::with_hidden(dims.input, dims.classes, dims.hidden, seed).unwrap();
        let flat: Vec<f64> = params.to_flat().iter().map(|&v| f64::from(v)).collect();
        let fwd = reference_forward(&flat, &dims, &x64, &labels);
        let kinks_ok = fwd.pre_activations.iter().all(|&z| z.abs() > KINK_MARGIN)
            && fwd
                .raw
                .iter()
                .flatten()
                .all(|&r| r.abs() > KINK_MARGIN && (r - 1.0).abs() > KINK_MARGIN);
        // Rule out runaway logits; they would make the CE reference unstable.
        let logits_ok = fwd.logits.iter().flatten().all(|&v| v.abs() < 50.0);
        if kinks_ok && logits_ok {
            return (params, x, labels);
        }
    }
    panic!("no kink-free seed found in 0..20000");
}

/// Relative error between an analytic gradient entry and its finite
/// difference, normalized by the larger magnitude (floor 1.0).
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (1.0 + analytic.abs().max(fd.abs()))
}

pub fn assert_close(analytic: f64, fd: f64, what: &str) {
    assert!(
        relative_error(analytic, fd) <= 1e-4,
        "{what}: analytic {analytic} vs finite-difference {fd}"
    );
}

// ---------------------------------------------------------------------------
// Composite checks (shared by the gradcheck and acceptance suites)
// ---------------------------------------------------------------------------

pub fn check_joint_loss_against_reference() {
    let (params, x, labels) = kink_free_instance();
    let dims = dims();
    let flat: Vec<f64> = params.to_flat().iter().map(|&v| f64::from(v)).collect();
    let x64 = to_f64_rows(&x);
    let reference = reference_forward(&flat, &dims, &x64, &labels);
    let (loss, _) = joint_loss_and_grads(&params, &x, &labels).unwrap();
    assert_close(
        f64::from(loss.reconstruction),
        reference.recon_loss,
        "reconstruction loss",
    );
    assert_close(
        f64::from(loss.classification),
        reference.class_loss,
        "classification loss",
    );
    assert_close(
        f64::from(loss.total),
        reference.recon_loss + reference.class_loss,
        "total loss",
    );
}

/// Checks every parameter of the fused graph; returns the max relative error.
pub fn check_joint_gradients() -> f64 {
    let (params, x, labels) = kink_free_instance();
    let dims = dims();
    let (_, grads) = joint_loss_and_grads(&params, &x, &labels).unwrap();
    let analytic = grads.to_flat();
    let flat: Vec<f64> = params.to_flat().iter().map(|&v| f64::from(v)).collect();
    let x64 = to_f64_rows(&x);
    assert_eq!(analytic.len(), flat.len());

    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += FD_STEP;
        let mut minus = flat.clone();
        minus[i] -= FD_STEP;
        let fd = (reference_joint_loss(&plus, &dims, &x64, &labels)
            - reference_joint_loss(&minus, &dims, &x64, &labels))
            / (2.0 * FD_STEP);
        assert_close(f64::from(analytic[i]), fd, &format!("parameter {i}"));
        worst = worst.max(relative_error(f64::from(analytic[i]), fd));
    }
    worst
}

/// Checks the input gradient of the classification path; returns the max
/// relative error.
pub fn check_input_gradient() -> f64 {
    let (params, x, labels) = kink_free_instance();
    let dims = dims();
    let flat: Vec<f64> = params.to_flat().iter().map(|&v| f64::from(v)).collect();
    let analytic = classification_input_gradient(&params, &x, &labels).unwrap();
    let x64 = to_f64_rows(&x);

    let class_loss =
        |x_probe: &[Vec<f64>]| reference_forward(&flat, &dims, x_probe, &labels).class_loss;
    let mut worst = 0.0f64;
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let mut plus = x64.clone();
            plus[r][c] += FD_STEP;
            let mut minus = x64.clone();
            minus[r][c] -= FD_STEP;
            let fd = (class_loss(&plus) - class_loss(&minus)) / (2.0 * FD_STEP);
            assert_close(
                f64::from(analytic.get(r, c)),
                fd,
                &format!("input ({r}, {c})"),
            );
            worst = worst.max(relative_error(f64::from(analytic.get(r, c)), fd));
        }
    }
    worst
}

/// Checks a standalone dense layer with loss `sum(C ⊙ relu(x·W + b))`.
pub fn check_single_dense_layer() {
    let layer = LayerParams {
        weights: DenseMatrix::from_rows(&[vec![0.4, -0.3, 0.8], vec![-0.6, 0.9, 0.2]]).unwrap(),
        biases: vec![0.15, -0.1, 0.3],
    };
    let x = DenseMatrix::from_rows(&[vec![0.7, -0.4], vec![-0.2, 0.9]]).unwrap();
    let coeff = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.25, 1.5, -1.0]]).unwrap();

    let loss = |w: &[f64], b: &[f64], xin: &[f64]| -> f64 {
        let mut total = 0.0;
        for r in 0..2 {
            for j in 0..3 {
                let z = b[j] + (0..2).map(|i| xin[r * 2 + i] * w[i * 3 + j]).sum::<f64>();
                total += f64::from(coeff.get(r, j)) * z.max(0.0);
            }
        }
        total
    };

    let grads = dense_backward(&coeff, &x, &layer, Activation::Relu).unwrap();
    let w64: Vec<f64> = layer.weights.data().iter().map(|&v| f64::from(v)).collect();
    let b64: Vec<f64> = layer.biases.iter().map(|&v| f64::from(v)).collect();
    let x64: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();

    for i in 0..w64.len() {
        let (mut p, mut m) = (w64.clone(), w64.clone());
        p[i] += FD_STEP;
        m[i] -= FD_STEP;
        let fd = (loss(&p, &b64, &x64) - loss(&m, &b64, &x64)) / (2.0 * FD_STEP);
        assert_close(
            f64::from(grads.weights.data()[i]),
            fd,
            &format!("weight {i}"),
        );
    }
    for i in 0..b64.len() {
        let (mut p, mut m) = (b64.clone(), b64.clone());
        p[i] += FD_STEP;
        m[i] -= FD_STEP;
        let fd = (loss(&w64, &p, &x64) - loss(&w64, &m, &x64)) / (2.0 * FD_STEP);
        assert_close(f64::from(grads.biases[i]), fd, &format!("bias {i}"));
    }
    for i in 0..x64.len() {
        let (mut p, mut m) = (x64.clone(), x64.clone());
        p[i] += FD_STEP;
        m[i] -= FD_STEP;
        let fd = (loss(&w64, &b64, &p) - loss(&w64, &b64, &m)) / (2.0 * FD_STEP);
        assert_close(f64::from(grads.input.data()[i]), fd, &format!("input {i}"));
    }
}
