//! Pooling extractors that turn local contexts into node features or a
//! graph-level vector.

use rand::Rng;

use super::LocalContext;
use crate::tensor::{mlp_forward, DiffTensor, LinearParams, MlpParams, Result};

/// Node extractor weights: a row-wise MLP followed by a final linear layer
/// over the pooled `[mean ∥ max ∥ own-row]` features.
#[derive(Debug, Clone)]
pub struct NodePoolParams {
    pub mlp: MlpParams,
    pub out: LinearParams,
}

impl NodePoolParams {
    pub fn init(name: &str, c_in: usize, hidden: usize, c_node: usize, rng: &mut impl Rng) -> Self {
        NodePoolParams {
            mlp: MlpParams::two_layer(&format!("{name}.mlp"), c_in, hidden, hidden, rng),
            out: LinearParams::init(&format!("{name}.out"), 3 * hidden, c_node, rng),
        }
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a DiffTensor)) {
        self.mlp.visit_params(f);
        f(&self.out.w);
        f(&self.out.b);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut DiffTensor)) {
        self.mlp.visit_params_mut(f);
        f(&mut self.out.w);
        f(&mut self.out.b);
    }
}

/// Per-node features from a context stack: an MLP over every row, then
/// mean pooling, max pooling and extraction of the node's own row,
/// concatenated and mapped through the output layer. Equivariant: permuting
/// the graph permutes the output rows.
pub fn node_pool(u: &LocalContext, p: &NodePoolParams) -> Result<DiffTensor> {
    let h = mlp_forward(&u.tensor, &p.mlp)?;
    let r = u.rows();
    let mean = h.sum_axis1()?.scale(1.0 / r as f64);
    let max = h.max_axis1()?;
    let own = h.gather_rows(&u.row_of)?;
    let features = DiffTensor::concat_last(&[mean, max, own])?;
    features.matmul(&p.out.w)?.add_bias(&p.out.b)
}

/// Graph-level readout: concatenates the trace `sum_i U[i, own_row(i), :]`
/// and the total sum over the first two axes, then applies the MLP. The
/// output is permutation invariant.
pub fn graph_extract(u: &LocalContext, p: &MlpParams) -> Result<DiffTensor> {
    let trace = u.tensor.gather_rows(&u.row_of)?.sum_leading();
    let total = u.tensor.sum_leading();
    let features = DiffTensor::concat_last(&[trace, total])?;
    mlp_forward(&features, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Permutation};
    use crate::layers::init_local_context;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_pool(c: usize) -> NodePoolParams {
        // MLP = identity, output layer = identity on [mean ∥ max ∥ own].
        NodePoolParams {
            mlp: MlpParams::single(LinearParams::new(
                DiffTensor::identity(c),
                DiffTensor::zeros(vec![c]),
            )),
            out: LinearParams::new(DiffTensor::identity(3 * c), DiffTensor::zeros(vec![3 * c])),
        }
    }

    #[test]
    fn one_hot_pooling_by_hand() {
        // One-hot init on 4 nodes: mean = 1/4, max = 1, own row = 1.
        let g = Graph::new(4, &[]).unwrap();
        let u = init_local_context(&g);
        let out = node_pool(&u, &identity_pool(1)).unwrap();
        for i in 0..4 {
            assert_eq!(&out.values()[3 * i..3 * i + 3], &[0.25, 1.0, 1.0]);
        }
    }

    #[test]
    fn constant_context_pools_to_the_constant() {
        let rows = Rc::new(vec![0usize, 1]);
        let tensor = DiffTensor::leaf(vec![2, 2, 1], vec![0.7; 4]).unwrap();
        let u = LocalContext::new(tensor, rows).unwrap();
        let out = node_pool(&u, &identity_pool(1)).unwrap();
        assert_eq!(out.values(), &[0.7, 0.7, 0.7, 0.7, 0.7, 0.7]);
    }

    use std::rc::Rc;

    #[test]
    fn node_pool_rows_permute_with_the_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = Graph::random_er(5, 0.5, &mut rng);
        let p = NodePoolParams::init("pool", 1, 3, 2, &mut rng);
        let base = node_pool(&init_local_context(&g), &p).unwrap();
        let perm = Permutation::random(5, &mut rng);
        let permuted = node_pool(&init_local_context(&perm.apply_graph(&g).unwrap()), &p).unwrap();
        let expected = perm.apply_flat_rows(base.values(), 5, 2).unwrap();
        for (a, b) in permuted.values().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn graph_extract_counts_the_one_hot_diagonal() {
        // One-hot init on 5 nodes, identity MLP: trace part 5, sum part 5.
        let g = Graph::new(5, &[]).unwrap();
        let u = init_local_context(&g);
        let p = MlpParams::single(LinearParams::new(
            DiffTensor::identity(2),
            DiffTensor::zeros(vec![2]),
        ));
        let out = graph_extract(&u, &p).unwrap();
        assert_eq!(out.values(), &[5.0, 5.0]);
    }

    #[test]
    fn graph_extract_is_exactly_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = Graph::random_er(6, 0.4, &mut rng);
        let p = MlpParams::two_layer("head", 2, 4, 3, &mut rng);
        let base = graph_extract(&init_local_context(&g), &p).unwrap();
        for _ in 0..5 {
            let perm = Permutation::random(6, &mut rng);
            let permuted =
                graph_extract(&init_local_context(&perm.apply_graph(&g).unwrap()), &p).unwrap();
            assert_eq!(base.values(), permuted.values());
        }
    }

    #[test]
    fn zero_context_extracts_the_bias_path() {
        let rows = Rc::new(vec![0usize, 1, 2]);
        let u = LocalContext::new(DiffTensor::zeros(vec![3, 3, 1]), rows).unwrap();
        let p = MlpParams::single(LinearParams::new(
            DiffTensor::zeros(vec![2, 1]),
            DiffTensor::leaf(vec![1], vec![0.25]).unwrap(),
        ));
        let out = graph_extract(&u, &p).unwrap();
        assert_eq!(out.values(), &[0.25]);
    }
}
