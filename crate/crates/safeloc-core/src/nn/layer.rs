//! Fully connected layer: forward pass and analytic backward pass.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Weights are `[fan_in x fan_out]`, biases `[fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: DenseMatrix,
    pub biases: Vec<f32>,
}

impl LayerParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let dist = Uniform::new_inclusive(-limit, limit);
        let data: Vec<f32> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        LayerParams {
            weights: DenseMatrix::from_vec(fan_in, fan_out, data).expect("sized above"),
            biases: vec![0.0; fan_out],
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams {
            weights: DenseMatrix::zeros(fan_in, fan_out),
            biases: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

fn apply_activation(z: &mut DenseMatrix, activation: Activation) {
    if activation == Activation::Relu {
        for v in z.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// `activation(input · W + b)`
pub fn dense_forward(
    input: &DenseMatrix,
    layer: &LayerParams,
    activation: Activation,
) -> Result<DenseMatrix> {
    if input.cols() != layer.fan_in() {
        return Err(Error::dimension(
            "dense_forward",
            layer.fan_in(),
            input.cols(),
        ));
    }
    let mut out = input.matmul(&layer.weights)?;
    out.add_bias_row(&layer.biases)?;
    apply_activation(&mut out, activation);
    debug_assert!(out.all_finite());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: DenseMatrix,
    pub weights: DenseMatrix,
    pub biases: Vec<f32>,
}

/// Backward pass for a dense layer. `cached_input` is the forward input;
/// the pre-activation is recomputed to apply the ReLU mask.
pub fn dense_backward(
    grad_output: &DenseMatrix,
    cached_input: &DenseMatrix,
    layer: &LayerParams,
    activation: Activation,
) -> Result<DenseGrads> {
    if cached_input.cols() != layer.fan_in() {
        return Err(Error::dimension(
            "dense_backward",
            layer.fan_in(),
            cached_input.cols(),
        ));
    }
    if grad_output.rows() != cached_input.rows() || grad_output.cols() != layer.fan_out() {
        return Err(Error::dimension(
            "dense_backward",
            format!("{}x{}", cached_input.rows(), layer.fan_out()),
            format!("{}x{}", grad_output.rows(), grad_output.cols()),
        ));
    }
    let grad_z = match activation {
        Activation::Identity => grad_output.clone(),
        Activation::Relu => {
            let mut z = cached_input.matmul(&layer.weights)?;
            z.add_bias_row(&layer.biases)?;
            let mut g = grad_output.clone();
            for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                if zv <= 0.0 {
                    *gv = 0.0;
                }
            }
            g
        }
    };
    let grad_weights = cached_input.matmul_transpose_lhs(&grad_z)?;
    let grad_biases = grad_z.column_sums();
    let grad_input = grad_z.matmul_transpose_rhs(&layer.weights)?;
    Ok(DenseGrads {
        input: grad_input,
        weights: grad_weights,
        biases: grad_biases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer() -> LayerParams {
        LayerParams {
            weights: DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            biases: vec![0.0, 0.0],
        }
    }

    #[test]
    fn relu_identity_weights() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = dense_forward(&x, &identity_layer(), Activation::Relu).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = DenseMatrix::from_rows(&[vec![-1.0, -1.0]]).unwrap();
        let y = dense_forward(&x, &identity_layer(), Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn affine_relu_hand_evaluation() {
        // input [[1,1]], W=[[2,0],[0,3]], b=[1,-5], relu -> [[3,0]]
        let x = DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let layer = LayerParams {
            weights: DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap(),
            biases: vec![1.0, -5.0],
        };
        let y = dense_forward(&x, &layer, Activation::Relu).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let x = DenseMatrix::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let layer = identity_layer();
        let g = DenseMatrix::zeros(1, 2);
        let grads = dense_backward(&g, &x, &layer, Activation::Relu).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.biases.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_activation_closed_form_weight_grad() {
        // grad_weights = inputᵀ · grad_output
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let g = DenseMatrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let layer = identity_layer();
        let grads = dense_backward(&g, &x, &layer, Activation::Identity).unwrap();
        let expected = x.matmul_transpose_lhs(&g).unwrap();
        assert_eq!(grads.weights.data(), expected.data());
    }

    #[test]
    fn forward_shape_mismatch_errors() {
        let x = DenseMatrix::zeros(1, 3);
        assert!(dense_forward(&x, &identity_layer(), Activation::Relu).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let mut a = crate::rng::seeded_rng(7, "init");
        let mut b = crate::rng::seeded_rng(7, "init");
        let la = LayerParams::init(8, 4, &mut a);
        let lb = LayerParams::init(8, 4, &mut b);
        assert_eq!(la.weights.data(), lb.weights.data());
    }
}
