//! The equivariant linear block applied to each local context:
//!
//! ```text
//! U_hat_i = U_i W1  +  (1/r) 1 1^T U_i W2  +  1 c^T  +  (1/r) e_i 1^T U_i W3
//! ```
//!
//! where `e_i` is the indicator column of the context's own row and `r` the
//! number of rows (n one-hot, chi colored).

use rand::Rng;

use super::LocalContext;
use crate::tensor::{glorot_uniform, DiffTensor, Result};

/// Weights of the block. All three matrices are `[c_in, c_out]`; `c` is the
/// `[c_out]` bias shared by every row.
#[derive(Debug, Clone)]
pub struct EquivLinearParams {
    pub w1: DiffTensor,
    pub w2: DiffTensor,
    pub w3: DiffTensor,
    pub c: DiffTensor,
}

/// Initialization gain for the context path. The fast layer's residual
/// update multiplies context norms by roughly `1 + deg/d_avg` per round
/// and its multiplicative message squares them, so plain Glorot weights
/// make an 8-layer stack diverge on the forward pass alone; damping the
/// block keeps the stack approximately non-expanding at the start.
pub(crate) const CONTEXT_INIT_GAIN: f64 = 0.3;

impl EquivLinearParams {
    pub fn init(name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        EquivLinearParams {
            w1: glorot_uniform(&format!("{name}.w1"), c_in, c_out, rng).scale_values(CONTEXT_INIT_GAIN),
            w2: glorot_uniform(&format!("{name}.w2"), c_in, c_out, rng).scale_values(CONTEXT_INIT_GAIN),
            w3: glorot_uniform(&format!("{name}.w3"), c_in, c_out, rng).scale_values(CONTEXT_INIT_GAIN),
            c: DiffTensor::param(&format!("{name}.c"), vec![c_out], vec![0.0; c_out])
                .expect("bias shape"),
        }
    }

    /// W1 = I, W2 = W3 = 0, c = 0: the block becomes the identity.
    pub fn identity_passthrough(c: usize) -> Self {
        EquivLinearParams {
            w1: DiffTensor::identity(c),
            w2: DiffTensor::zeros(vec![c, c]),
            w3: DiffTensor::zeros(vec![c, c]),
            c: DiffTensor::zeros(vec![c]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a DiffTensor)) {
        f(&self.w1);
        f(&self.w2);
        f(&self.w3);
        f(&self.c);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut DiffTensor)) {
        f(&mut self.w1);
        f(&mut self.w2);
        f(&mut self.w3);
        f(&mut self.c);
    }
}

/// Applies the block to every context in the stack at once.
pub fn equivariant_linear_stack(u: &LocalContext, p: &EquivLinearParams) -> Result<LocalContext> {
    let r = u.rows();
    // (1/r) 1^T U_i is the mean over rows; reused by the W2 and W3 terms.
    let row_mean = u.tensor.sum_axis1()?.scale(1.0 / r as f64);
    let term1 = u.tensor.matmul(&p.w1)?;
    let term2 = row_mean.matmul(&p.w2)?.broadcast_rows(r)?;
    let term3 = row_mean.matmul(&p.w3)?.expand_to_rows(&u.row_of, r)?;
    let out = term1.add(&term2)?.add(&term3)?.add_bias(&p.c)?;
    u.with_tensor(out)
}

/// The block on a single context matrix `[r, c_in]` whose owner occupies
/// `owner_row`.
pub fn equivariant_linear(
    u_i: &DiffTensor,
    owner_row: usize,
    p: &EquivLinearParams,
) -> Result<DiffTensor> {
    let (r, c) = match u_i.shape() {
        [r, c] => (*r, *c),
        _ => {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "equivariant_linear",
                lhs: u_i.shape().to_vec(),
                rhs: vec![p.in_dim()],
            })
        }
    };
    let stacked = LocalContext::new(
        u_i.reshape(vec![1, r, c])?,
        std::rc::Rc::new(vec![owner_row]),
    )?;
    let out = equivariant_linear_stack(&stacked, p)?;
    let c_out = out.channels();
    out.tensor.reshape(vec![r, c_out])
}
