//! The SMP architecture: local contexts, the equivariant linear block,
//! Fast/Default SMP layers, pooling extractors, an MPNN baseline and the
//! construction embedding any MPNN into SMP.

pub(crate) mod equiv;
mod lift;
mod mpnn;
mod pool;
mod smp;

pub use equiv::{equivariant_linear, equivariant_linear_stack, EquivLinearParams};
pub use lift::{lift_mpnn_to_smp, GATE_BOUND};
pub use mpnn::{mpnn_layer, MpnnLayerParams};
pub use pool::{graph_extract, node_pool, NodePoolParams};
pub use smp::{
    smp_default_layer, smp_fast_layer, smp_fast_layer_per_edge, smp_layer, sum_propagation_power,
    SmpLayerParams, SmpVariant,
};

use std::rc::Rc;

use crate::graph::Graph;
use crate::tensor::{DiffTensor, Result, RowIndex, TensorError};

/// The stacked local contexts of a graph: an `[n, r, c]` tensor whose slice
/// `U[i, :, :]` is node i's context matrix. In the standard one-hot setting
/// `r = n` and node j occupies row j of every context; with compressed
/// identifiers (coloring) `r` is the number of colors and node j occupies
/// row `row_of[j]`.
#[derive(Debug, Clone)]
pub struct LocalContext {
    pub tensor: DiffTensor,
    pub row_of: RowIndex,
}

impl LocalContext {
    pub fn new(tensor: DiffTensor, row_of: RowIndex) -> Result<Self> {
        match tensor.shape() {
            [n, _, _] if *n == row_of.len() => Ok(LocalContext { tensor, row_of }),
            _ => Err(TensorError::ShapeMismatch {
                op: "local_context",
                lhs: tensor.shape().to_vec(),
                rhs: vec![row_of.len()],
            }),
        }
    }

    pub fn n(&self) -> usize {
        self.tensor.shape()[0]
    }

    /// Row count of each context matrix (n one-hot, chi colored).
    pub fn rows(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[2]
    }

    /// Same row assignment, new tensor.
    pub fn with_tensor(&self, tensor: DiffTensor) -> Result<Self> {
        Self::new(tensor, self.row_of.clone())
    }

    /// The value `U[i, row_of(j), k]`, for tests and inspection.
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        let (r, c) = (self.rows(), self.channels());
        self.tensor.values()[(i * r + self.row_of[j]) * c + k]
    }
}

/// One-hot initialization: `U[i, i, 0] = 1` and, when node features exist,
/// `U[i, i, 1..] = x_i`; every other entry is zero. Each node starts out
/// with a unique identifier plus its own features on its own row.
pub fn init_local_context(g: &Graph) -> LocalContext {
    let n = g.n();
    let c = 1 + g.node_feature_width();
    let mut values = vec![0.0; n * n * c];
    for i in 0..n {
        let base = (i * n + i) * c;
        values[base] = 1.0;
        if let Some(x) = g.node_features() {
            values[base + 1..base + c].copy_from_slice(&x[i]);
        }
    }
    let tensor = DiffTensor::leaf(vec![n, n, c], values).expect("init shape");
    LocalContext {
        tensor,
        row_of: Rc::new((0..n).collect()),
    }
}

/// Pure one-hot context (single channel, no features): `U = I_n`.
pub fn init_one_hot(g: &Graph) -> LocalContext {
    let n = g.n();
    LocalContext {
        tensor: DiffTensor::identity(n).reshape(vec![n, n, 1]).expect("square"),
        row_of: Rc::new((0..n).collect()),
    }
}

/// Node features as a plain `[n, c]` leaf for the MPNN baseline; nodes
/// without features get a constant 1 channel.
pub fn node_feature_matrix(g: &Graph) -> DiffTensor {
    let n = g.n();
    match g.node_features() {
        Some(x) => {
            let c = g.node_feature_width();
            let mut values = Vec::with_capacity(n * c);
            for row in x {
                values.extend_from_slice(row);
            }
            DiffTensor::leaf(vec![n, c], values).expect("feature shape")
        }
        None => DiffTensor::leaf(vec![n, 1], vec![1.0; n]).expect("feature shape"),
    }
}

/// Directed edge endpoint lists `(targets, sources)`: each undirected edge
/// (i, j) contributes i<-j and j<-i, in sorted edge order.
pub(crate) fn directed_edges(g: &Graph) -> (RowIndex, RowIndex) {
    let mut tgt = Vec::with_capacity(2 * g.edge_count());
    let mut src = Vec::with_capacity(2 * g.edge_count());
    for &(i, j) in g.edges() {
        tgt.push(i);
        src.push(j);
        tgt.push(j);
        src.push(i);
    }
    (Rc::new(tgt), Rc::new(src))
}

/// Per-directed-edge feature tensor `[2m, rows, c_y]`, broadcasting each
/// `y_ij` to all rows so messages stay row-wise equivariant.
pub(crate) fn edge_feature_rows(
    g: &Graph,
    tgt: &[usize],
    src: &[usize],
    rows: usize,
) -> Option<DiffTensor> {
    let c_y = g.edge_feature_width();
    if c_y == 0 {
        return None;
    }
    let e = tgt.len();
    let mut values = vec![0.0; e * rows * c_y];
    for (k, (&i, &j)) in tgt.iter().zip(src).enumerate() {
        let y = g.edge_feature(i, j).expect("features on every edge");
        for row in 0..rows {
            values[(k * rows + row) * c_y..(k * rows + row + 1) * c_y].copy_from_slice(y);
        }
    }
    Some(DiffTensor::leaf(vec![e, rows, c_y], values).expect("edge feature shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Permutation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_without_features_is_one_hot() {
        let g = Graph::path(3);
        let ctx = init_local_context(&g);
        assert_eq!(ctx.tensor.shape(), &[3, 3, 1]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(ctx.value(i, j, 0), f64::from(u8::from(i == j)));
            }
        }
    }

    #[test]
    fn init_appends_features_on_the_diagonal() {
        let g = Graph::new(2, &[(0, 1)])
            .unwrap()
            .with_node_features(vec![vec![0.5], vec![-1.0]])
            .unwrap();
        let ctx = init_local_context(&g);
        assert_eq!(ctx.value(0, 0, 0), 1.0);
        assert_eq!(ctx.value(0, 0, 1), 0.5);
        assert_eq!(ctx.value(0, 1, 0), 0.0);
        assert_eq!(ctx.value(0, 1, 1), 0.0);
        assert_eq!(ctx.value(1, 1, 1), -1.0);
    }

    #[test]
    fn init_commutes_with_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.random_range(2..8);
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
            let g = Graph::random_er(n, 0.4, &mut rng)
                .with_node_features(x)
                .unwrap();
            let p = Permutation::random(n, &mut rng);
            let init_then_permute = p
                .apply_tensor3(init_local_context(&g).tensor.values(), n, 2)
                .unwrap();
            let permute_then_init = init_local_context(&p.apply_graph(&g).unwrap());
            assert_eq!(permute_then_init.tensor.values(), &init_then_permute[..]);
        }
    }
}
