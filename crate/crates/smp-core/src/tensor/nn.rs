//! Small multilayer perceptrons applied row-wise, plus seeded weight
//! initialization.

use rand::Rng;

use super::{DiffTensor, Result, TensorError};

/// Hidden-layer activation. The output layer is always identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One affine layer `x W + 1 b^T`.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub w: DiffTensor,
    pub b: DiffTensor,
}

impl LinearParams {
    pub fn new(w: DiffTensor, b: DiffTensor) -> Self {
        LinearParams { w, b }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let w = glorot_uniform(&format!("{name}.w"), d_in, d_out, rng);
        let b = DiffTensor::param(&format!("{name}.b"), vec![d_out], vec![0.0; d_out])
            .expect("bias shape");
        LinearParams { w, b }
    }
}

/// Weights of a row-wise MLP: ReLU between layers, identity output.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<LinearParams>,
    pub hidden_activation: Activation,
}

impl MlpParams {
    pub fn new(layers: Vec<LinearParams>) -> Self {
        for pair in layers.windows(2) {
            assert_eq!(
                pair[0].out_dim(),
                pair[1].in_dim(),
                "consecutive layer dimensions must chain"
            );
        }
        MlpParams {
            layers,
            hidden_activation: Activation::Relu,
        }
    }

    /// A two-layer perceptron `d_in -> hidden -> d_out` with ReLU.
    pub fn two_layer(name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self::new(vec![
            LinearParams::init(&format!("{name}.0"), d_in, hidden, rng),
            LinearParams::init(&format!("{name}.1"), hidden, d_out, rng),
        ])
    }

    /// A single affine layer, no nonlinearity.
    pub fn single(layer: LinearParams) -> Self {
        Self::new(vec![layer])
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("empty MLP").in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("empty MLP").out_dim()
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a DiffTensor)) {
        for layer in &self.layers {
            f(&layer.w);
            f(&layer.b);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut DiffTensor)) {
        for layer in &mut self.layers {
            f(&mut layer.w);
            f(&mut layer.b);
        }
    }
}

/// Applies the MLP independently to every row of `x` (`[.., d_in]`),
/// recording ops for backprop.
pub fn mlp_forward(x: &DiffTensor, p: &MlpParams) -> Result<DiffTensor> {
    if x.shape().last().copied() != Some(p.in_dim()) {
        return Err(TensorError::ShapeMismatch {
            op: "mlp_forward",
            lhs: x.shape().to_vec(),
            rhs: vec![p.in_dim()],
        });
    }
    let last = p.layers.len() - 1;
    let mut h = x.clone();
    for (k, layer) in p.layers.iter().enumerate() {
        h = h.matmul(&layer.w)?.add_bias(&layer.b)?;
        if k < last && p.hidden_activation == Activation::Relu {
            h = h.relu();
        }
    }
    Ok(h)
}

/// Uniform in `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
pub fn glorot_uniform(name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> DiffTensor {
    let bound = (6.0 / (d_in + d_out) as f64).sqrt();
    let values: Vec<f64> = (0..d_in * d_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    DiffTensor::param(name, vec![d_in, d_out], values).expect("weight shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backprop;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_with_zero_biases_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = MlpParams::two_layer("mlp", 3, 4, 2, &mut rng);
        let x = DiffTensor::zeros(vec![2, 3]);
        let y = mlp_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let p = MlpParams::single(LinearParams::new(
            DiffTensor::identity(3),
            DiffTensor::zeros(vec![3]),
        ));
        let x = DiffTensor::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let y = mlp_forward(&x, &p).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn hand_computed_single_layer() {
        let p = MlpParams::single(LinearParams::new(
            DiffTensor::from_rows(&[vec![2.0], vec![0.0], vec![0.0]]),
            DiffTensor::leaf(vec![1], vec![1.0]).unwrap(),
        ));
        let x = DiffTensor::from_rows(&[vec![1.0, 5.0, 5.0]]);
        let y = mlp_forward(&x, &p).unwrap();
        assert_eq!(y.values(), &[3.0]);
    }

    #[test]
    fn input_width_mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::two_layer("mlp", 3, 4, 2, &mut rng);
        let x = DiffTensor::zeros(vec![2, 5]);
        assert!(mlp_forward(&x, &p).is_err());
    }

    #[test]
    fn gradients_reach_all_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::two_layer("mlp", 2, 3, 1, &mut rng);
        let x = DiffTensor::from_rows(&[vec![0.5, -0.25]]);
        let loss = mlp_forward(&x, &p).unwrap().sum_all();
        backprop(&loss).unwrap();
        for layer in &p.layers {
            assert!(layer.w.grad().is_some());
            assert!(layer.b.grad().is_some());
        }
    }
}
