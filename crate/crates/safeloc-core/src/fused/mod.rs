//! Fused network: a three-layer encoder whose latent space feeds both a
//! classification head and a tied-weight de-noising decoder.
//!
//! The decoder reuses the transposes of encoder layers 3 and 2 (plus its own
//! biases) and a final transposed projection of encoder layer 1 back to the
//! input dimension, clamped to `[0, 1]`. Reconstruction error (RCE) against a
//! threshold `tau` routes each sample either straight to the classifier
//! (clean) or through reconstruct-then-re-encode (denoise).

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{client_finetune, server_pretrain, PretrainOutcome, TrainConfig};

use crate::error::{Error, Result};
use crate::nn::{
    dense_backward, dense_forward, mse_loss, softmax_cross_entropy, Activation, DenseMatrix,
    LayerParams,
};
use crate::rng::seeded_rng;

pub const DEFAULT_HIDDEN: [usize; 3] = [128, 89, 62];

#[derive(Debug, Clone, PartialEq)]
pub struct FusedParams {
    input_dim: usize,
    num_rps: usize,
    hidden: [usize; 3],
    /// input_dim -> hidden[0] -> hidden[1] -> hidden[2], all ReLU.
    pub encoder: [LayerParams; 3],
    /// hidden[2] -> num_rps, identity (logits).
    pub classifier: LayerParams,
    /// Decoder biases for the hidden[2]->hidden[1] and hidden[1]->hidden[0]
    /// layers. Decoder weights are tied to the encoder transposes and the
    /// final projection back to input_dim carries no bias.
    pub decoder_biases: [Vec<f32>; 2],
}

impl FusedParams {
    pub fn new(input_dim: usize, num_rps: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(input_dim, num_rps, DEFAULT_HIDDEN, seed)
    }

    pub fn with_hidden(
        input_dim: usize,
        num_rps: usize,
        hidden: [usize; 3],
        seed: u64,
    ) -> Result<Self> {
        if input_dim < 1 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if num_rps < 2 {
            return Err(Error::Config("num_rps must be >= 2".into()));
        }
        let mut rng = seeded_rng(seed, "fused-init");
        let encoder = [
            LayerParams::init(input_dim, hidden[0], &mut rng),
            LayerParams::init(hidden[0], hidden[1], &mut rng),
            LayerParams::init(hidden[1], hidden[2], &mut rng),
        ];
        let classifier = LayerParams::init(hidden[2], num_rps, &mut rng);
        Ok(FusedParams {
            input_dim,
            num_rps,
            hidden,
            encoder,
            classifier,
            decoder_biases: [vec![0.0; hidden[1]], vec![0.0; hidden[0]]],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_rps(&self) -> usize {
        self.num_rps
    }

    pub fn hidden(&self) -> [usize; 3] {
        self.hidden
    }

    /// Exact count of trainable scalars. Tied decoder weights are not
    /// counted twice; only the two decoder bias vectors are decoder-owned.
    pub fn parameter_count(&self) -> usize {
        let enc: usize = self
            .encoder
            .iter()
            .map(|l| l.fan_in() * l.fan_out() + l.fan_out())
            .sum();
        let clf = self.classifier.fan_in() * self.classifier.fan_out() + self.classifier.fan_out();
        let dec: usize = self.decoder_biases.iter().map(Vec::len).sum();
        enc + clf + dec
    }

    /// Materializes the tied decoder weight for layer `k` (0 or 1 for the two
    /// hidden decoder layers, 2 for the output projection) as an explicit
    /// transpose of the corresponding encoder weight.
    pub fn decoder_weight(&self, k: usize) -> DenseMatrix {
        let enc = &self.encoder[2 - k].weights;
        let mut out = DenseMatrix::zeros(enc.cols(), enc.rows());
        for r in 0..enc.rows() {
            for c in 0..enc.cols() {
                out.set(c, r, enc.get(r, c));
            }
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f32> {
        let mut flat = Vec::with_capacity(self.parameter_count());
        for layer in &self.encoder {
            flat.extend_from_slice(layer.weights.data());
            flat.extend_from_slice(&layer.biases);
        }
        flat.extend_from_slice(self.classifier.weights.data());
        flat.extend_from_slice(&self.classifier.biases);
        for bias in &self.decoder_biases {
            flat.extend_from_slice(bias);
        }
        flat
    }

    pub fn copy_from_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::dimension(
                "copy_from_flat",
                self.parameter_count(),
                flat.len(),
            ));
        }
        let mut offset = 0usize;
        let mut take = |dst: &mut [f32]| {
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        };
        for layer in &mut self.encoder {
            take(layer.weights.data_mut());
            take(&mut layer.biases);
        }
        take(self.classifier.weights.data_mut());
        take(&mut self.classifier.biases);
        for bias in &mut self.decoder_biases {
            take(bias);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutePath {
    Clean,
    Denoise,
}

/// Per-sample routing result for one batch.
#[derive(Debug, Clone)]
pub struct RoutingOutcome {
    pub rce: Vec<f32>,
    pub path: Vec<RoutePath>,
    pub logits: DenseMatrix,
    pub reconstructed: DenseMatrix,
}

impl RoutingOutcome {
    pub fn denoise_count(&self) -> usize {
        self.path
            .iter()
            .filter(|p| **p == RoutePath::Denoise)
            .count()
    }

    /// Argmax prediction per sample; ties break to the lowest class index.
    pub fn predicted_labels(&self) -> Vec<usize> {
        argmax_rows(&self.logits)
    }
}

pub(crate) fn argmax_rows(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Three ReLU encoder layers in order.
pub fn encode(x: &DenseMatrix, params: &FusedParams) -> Result<DenseMatrix> {
    let a0 = dense_forward(x, &params.encoder[0], Activation::Relu)?;
    let a1 = dense_forward(&a0, &params.encoder[1], Activation::Relu)?;
    dense_forward(&a1, &params.encoder[2], Activation::Relu)
}

fn clamp_unit(m: &mut DenseMatrix) {
    for v in m.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Tied-transpose decoder: two ReLU layers plus the output projection back
/// to `input_dim`, clamped to `[0, 1]`.
pub fn decode(latent: &DenseMatrix, params: &FusedParams) -> Result<DenseMatrix> {
    if latent.cols() != params.hidden[2] {
        return Err(Error::dimension("decode", params.hidden[2], latent.cols()));
    }
    let mut z1 = latent.matmul_transpose_rhs(&params.encoder[2].weights)?;
    z1.add_bias_row(&params.decoder_biases[0])?;
    for v in z1.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut z2 = z1.matmul_transpose_rhs(&params.encoder[1].weights)?;
    z2.add_bias_row(&params.decoder_biases[1])?;
    for v in z2.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut raw = z2.matmul_transpose_rhs(&params.encoder[0].weights)?;
    clamp_unit(&mut raw);
    Ok(raw)
}

/// Batch-mean reconstruction error (MSE over all elements).
pub fn reconstruction_error(x: &DenseMatrix, reconstruction: &DenseMatrix) -> Result<f32> {
    let (loss, _) = mse_loss(reconstruction, x)?;
    Ok(loss)
}

/// Per-sample MSE between rows of `x` and `reconstruction`.
pub fn per_sample_rce(x: &DenseMatrix, reconstruction: &DenseMatrix) -> Result<Vec<f32>> {
    if x.rows() != reconstruction.rows() || x.cols() != reconstruction.cols() {
        return Err(Error::dimension(
            "per_sample_rce",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", reconstruction.rows(), reconstruction.cols()),
        ));
    }
    let n = x.cols() as f64;
    Ok((0..x.rows())
        .map(|r| {
            let acc: f64 = x
                .row(r)
                .iter()
                .zip(reconstruction.row(r))
                .map(|(&a, &b)| {
                    let d = f64::from(a - b);
                    d * d
                })
                .sum();
            (acc / n) as f32
        })
        .collect())
}

/// Per-sample routing: clean samples classify from the latent space, flagged
/// samples from a re-encoding of their reconstruction.
pub fn route_and_classify(
    x: &DenseMatrix,
    params: &FusedParams,
    tau: f32,
) -> Result<RoutingOutcome> {
    if tau < 0.0 {
        return Err(Error::Config("tau must be >= 0".into()));
    }
    let latent = encode(x, params)?;
    let reconstructed = decode(&latent, params)?;
    let rce = per_sample_rce(x, &reconstructed)?;
    let path: Vec<RoutePath> = rce
        .iter()
        .map(|&e| {
            if e <= tau {
                RoutePath::Clean
            } else {
                RoutePath::Denoise
            }
        })
        .collect();

    let mut logits = dense_forward(&latent, &params.classifier, Activation::Identity)?;
    let denoise_rows: Vec<usize> = path
        .iter()
        .enumerate()
        .filter(|(_, p)| **p == RoutePath::Denoise)
        .map(|(i, _)| i)
        .collect();
    if !denoise_rows.is_empty() {
        let recon_subset = reconstructed.gather_rows(&denoise_rows);
        let latent2 = encode(&recon_subset, params)?;
        let logits2 = dense_forward(&latent2, &params.classifier, Activation::Identity)?;
        for (k, &row) in denoise_rows.iter().enumerate() {
            logits.row_mut(row).copy_from_slice(logits2.row(k));
        }
    }
    Ok(RoutingOutcome {
        rce,
        path,
        logits,
        reconstructed,
    })
}

/// Gradients mirroring the trainable tensors of `FusedParams`.
#[derive(Debug, Clone)]
pub struct FusedGrads {
    pub encoder: [(DenseMatrix, Vec<f32>); 3],
    pub classifier: (DenseMatrix, Vec<f32>),
    pub decoder_biases: [Vec<f32>; 2],
}

impl FusedGrads {
    pub fn to_flat(&self) -> Vec<f32> {
        let mut flat = Vec::new();
        for (w, b) in &self.encoder {
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b);
        }
        flat.extend_from_slice(self.classifier.0.data());
        flat.extend_from_slice(&self.classifier.1);
        for b in &self.decoder_biases {
            flat.extend_from_slice(b);
        }
        flat
    }
}

pub(crate) struct JointForward {
    pub a: [DenseMatrix; 3],
    pub ad: [DenseMatrix; 2],
    pub raw: DenseMatrix,
    pub recon: DenseMatrix,
    pub logits: DenseMatrix,
}

pub(crate) fn joint_forward(params: &FusedParams, x: &DenseMatrix) -> Result<JointForward> {
    let a0 = dense_forward(x, &params.encoder[0], Activation::Relu)?;
    let a1 = dense_forward(&a0, &params.encoder[1], Activation::Relu)?;
    let a2 = dense_forward(&a1, &params.encoder[2], Activation::Relu)?;
    let logits = dense_forward(&a2, &params.classifier, Activation::Identity)?;

    let mut zd0 = a2.matmul_transpose_rhs(&params.encoder[2].weights)?;
    zd0.add_bias_row(&params.decoder_biases[0])?;
    for v in zd0.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut zd1 = zd0.matmul_transpose_rhs(&params.encoder[1].weights)?;
    zd1.add_bias_row(&params.decoder_biases[1])?;
    for v in zd1.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let raw = zd1.matmul_transpose_rhs(&params.encoder[0].weights)?;
    let mut recon = raw.clone();
    clamp_unit(&mut recon);
    Ok(JointForward {
        a: [a0, a1, a2],
        ad: [zd0, zd1],
        raw,
        recon,
        logits,
    })
}

/// Loss components of one joint forward pass.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub total: f32,
    pub reconstruction: f32,
    pub classification: f32,
}

/// Joint loss `mse(x, decode(encode(x))) + cross_entropy(classifier(encode(x)), labels)`
/// and its gradients. Reconstruction gradients flow into the encoder weights
/// through both the encoder path and the tied decoder path; the decoder owns
/// only its bias gradients.
pub fn joint_loss_and_grads(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
) -> Result<(JointLoss, FusedGrads)> {
    let fwd = joint_forward(params, x)?;
    let (ce, g_logits) = softmax_cross_entropy(&fwd.logits, labels)?;
    let (mse, g_recon) = mse_loss(&fwd.recon, x)?;

    // Clamp passes gradient only strictly inside [0, 1].
    let mut g_raw = g_recon;
    for (g, &r) in g_raw.data_mut().iter_mut().zip(fwd.raw.data()) {
        if !(0.0..=1.0).contains(&r) || r == 0.0 || r == 1.0 {
            *g = 0.0;
        }
    }

    // Output projection (tied to encoder layer 0, no bias).
    let mut g_e0_w = g_raw.matmul_transpose_lhs(&fwd.ad[1])?;
    let g_ad1 = g_raw.matmul(&params.encoder[0].weights)?;

    // Decoder hidden layer 1 (tied to encoder layer 1).
    let mut gz = g_ad1;
    for (g, &a) in gz.data_mut().iter_mut().zip(fwd.ad[1].data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    let gb_d1 = gz.column_sums();
    let mut g_e1_w = gz.matmul_transpose_lhs(&fwd.ad[0])?;
    let g_ad0 = gz.matmul(&params.encoder[1].weights)?;

    // Decoder hidden layer 0 (tied to encoder layer 2).
    let mut gz = g_ad0;
    for (g, &a) in gz.data_mut().iter_mut().zip(fwd.ad[0].data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    let gb_d0 = gz.column_sums();
    let mut g_e2_w = gz.matmul_transpose_lhs(&fwd.a[2])?;
    let g_latent_recon = gz.matmul(&params.encoder[2].weights)?;

    // Classifier head.
    let clf = dense_backward(
        &g_logits,
        &fwd.a[2],
        &params.classifier,
        Activation::Identity,
    )?;
    let mut g_latent = clf.input;
    g_latent.add_assign(&g_latent_recon)?;

    // Encoder stack, accumulating the tied decoder contributions.
    let e2 = dense_backward(&g_latent, &fwd.a[1], &params.encoder[2], Activation::Relu)?;
    g_e2_w.add_assign(&e2.weights)?;
    let e1 = dense_backward(&e2.input, &fwd.a[0], &params.encoder[1], Activation::Relu)?;
    g_e1_w.add_assign(&e1.weights)?;
    let e0 = dense_backward(&e1.input, x, &params.encoder[0], Activation::Relu)?;
    g_e0_w.add_assign(&e0.weights)?;

    Ok((
        JointLoss {
            total: mse + ce,
            reconstruction: mse,
            classification: ce,
        },
        FusedGrads {
            encoder: [
                (g_e0_w, e0.biases),
                (g_e1_w, e1.biases),
                (g_e2_w, e2.biases),
            ],
            classifier: (clf.weights, clf.biases),
            decoder_biases: [gb_d0, gb_d1],
        },
    ))
}

/// Gradient of the clean-path classification loss with respect to the input.
pub fn classification_input_gradient(
    params: &FusedParams,
    x: &DenseMatrix,
    labels: &[usize],
) -> Result<DenseMatrix> {
    let a0 = dense_forward(x, &params.encoder[0], Activation::Relu)?;
    let a1 = dense_forward(&a0, &params.encoder[1], Activation::Relu)?;
    let a2 = dense_forward(&a1, &params.encoder[2], Activation::Relu)?;
    let logits = dense_forward(&a2, &params.classifier, Activation::Identity)?;
    let (_, g_logits) = softmax_cross_entropy(&logits, labels)?;
    let clf = dense_backward(&g_logits, &a2, &params.classifier, Activation::Identity)?;
    let e2 = dense_backward(&clf.input, &a1, &params.encoder[2], Activation::Relu)?;
    let e1 = dense_backward(&e2.input, &a0, &params.encoder[1], Activation::Relu)?;
    let e0 = dense_backward(&e1.input, x, &params.encoder[0], Activation::Relu)?;
    Ok(e0.input)
}

/// Named tensor view used by the FL aggregation and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl NamedTensor {
    fn matrix(name: &str, m: &DenseMatrix) -> Self {
        NamedTensor {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }

    fn vector(name: &str, v: &[f32]) -> Self {
        NamedTensor {
            name: name.to_string(),
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }
}

impl FusedParams {
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let mut tensors = Vec::with_capacity(10);
        for (i, layer) in self.encoder.iter().enumerate() {
            tensors.push(NamedTensor::matrix(
                &format!("encoder.{i}.weight"),
                &layer.weights,
            ));
            tensors.push(NamedTensor::vector(
                &format!("encoder.{i}.bias"),
                &layer.biases,
            ));
        }
        tensors.push(NamedTensor::matrix(
            "classifier.weight",
            &self.classifier.weights,
        ));
        tensors.push(NamedTensor::vector(
            "classifier.bias",
            &self.classifier.biases,
        ));
        for (i, bias) in self.decoder_biases.iter().enumerate() {
            tensors.push(NamedTensor::vector(&format!("decoder.{i}.bias"), bias));
        }
        tensors
    }

    pub fn from_named_tensors(
        input_dim: usize,
        num_rps: usize,
        hidden: [usize; 3],
        tensors: &[NamedTensor],
    ) -> Result<Self> {
        let mut params = FusedParams::with_hidden(input_dim, num_rps, hidden, 0)?;
        let expected = params.to_named_tensors();
        if tensors.len() != expected.len() {
            return Err(Error::Protocol(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut flat = Vec::with_capacity(params.parameter_count());
        for (given, want) in tensors.iter().zip(&expected) {
            if given.name != want.name || given.rows != want.rows || given.cols != want.cols {
                return Err(Error::Protocol(format!(
                    "tensor mismatch: expected {} [{}x{}], got {} [{}x{}]",
                    want.name, want.rows, want.cols, given.name, given.rows, given.cols
                )));
            }
            flat.extend_from_slice(&given.data);
        }
        params.copy_from_flat(&flat)?;
        Ok(params)
    }
}
