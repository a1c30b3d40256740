//! Baseline message-passing layer on plain node feature vectors.

use rand::Rng;

use super::directed_edges;
use crate::graph::Graph;
use crate::tensor::{mlp_forward, DiffTensor, MlpParams, Result};

/// Message and update MLPs of one MPNN layer:
/// `x_i' = update([x_i ∥ sum over j in N_i of message([x_i ∥ x_j ∥ y_ij]) / d_avg])`.
#[derive(Debug, Clone)]
pub struct MpnnLayerParams {
    pub message_mlp: MlpParams,
    pub update_mlp: MlpParams,
}

impl MpnnLayerParams {
    pub fn init(name: &str, c_in: usize, c_out: usize, c_y: usize, rng: &mut impl Rng) -> Self {
        MpnnLayerParams {
            message_mlp: MlpParams::two_layer(
                &format!("{name}.message"),
                2 * c_in + c_y,
                c_out,
                c_out,
                rng,
            ),
            update_mlp: MlpParams::two_layer(&format!("{name}.update"), c_in + c_out, c_out, c_out, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.update_mlp.in_dim() - self.message_mlp.out_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.update_mlp.out_dim()
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a DiffTensor)) {
        self.message_mlp.visit_params(f);
        self.update_mlp.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut DiffTensor)) {
        self.message_mlp.visit_params_mut(f);
        self.update_mlp.visit_params_mut(f);
    }
}

/// One MPNN layer over `[n, c]` node features.
pub fn mpnn_layer(x: &DiffTensor, g: &Graph, p: &MpnnLayerParams) -> Result<DiffTensor> {
    let n = g.n();
    let d_avg = g.d_avg();
    let aggregate = if d_avg == 0.0 {
        DiffTensor::zeros(vec![n, p.message_mlp.out_dim()])
    } else {
        let (tgt, src) = directed_edges(g);
        let x_i = x.gather_nodes(&tgt)?;
        let x_j = x.gather_nodes(&src)?;
        let message_in = match edge_feature_vectors(g, &tgt, &src) {
            Some(y) => DiffTensor::concat_last(&[x_i, x_j, y])?,
            None => DiffTensor::concat_last(&[x_i, x_j])?,
        };
        let messages = mlp_forward(&message_in, &p.message_mlp)?;
        messages.scatter_sum(&tgt, n)?.scale(1.0 / d_avg)
    };
    mlp_forward(
        &DiffTensor::concat_last(&[x.clone(), aggregate])?,
        &p.update_mlp,
    )
}

/// Per-directed-edge `[2m, c_y]` feature leaf.
fn edge_feature_vectors(g: &Graph, tgt: &[usize], src: &[usize]) -> Option<DiffTensor> {
    let c_y = g.edge_feature_width();
    if c_y == 0 {
        return None;
    }
    let mut values = vec![0.0; tgt.len() * c_y];
    for (k, (&i, &j)) in tgt.iter().zip(src).enumerate() {
        values[k * c_y..(k + 1) * c_y]
            .copy_from_slice(g.edge_feature(i, j).expect("features on every edge"));
    }
    Some(DiffTensor::leaf(vec![tgt.len(), c_y], values).expect("edge feature shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_on_regular_graph_stays_constant() {
        // All nodes of a 2-regular graph see identical messages, the seed of
        // the Weisfeiler-Lehman limitation.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::cycle(6);
        let p = MpnnLayerParams::init("l0", 1, 4, 0, &mut rng);
        let x = DiffTensor::leaf(vec![6, 1], vec![1.0; 6]).unwrap();
        let y = mpnn_layer(&x, &g, &p).unwrap();
        let first = &y.values()[..4];
        for row in y.values().chunks(4) {
            assert_eq!(row, first);
        }
    }

    #[test]
    fn edgeless_graph_updates_with_zero_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::new(3, &[]).unwrap();
        let p = MpnnLayerParams::init("l0", 2, 3, 0, &mut rng);
        let x = DiffTensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let out = mpnn_layer(&x, &g, &p).unwrap();
        let manual = mlp_forward(
            &DiffTensor::concat_last(&[x.clone(), DiffTensor::zeros(vec![3, 3])]).unwrap(),
            &p.update_mlp,
        )
        .unwrap();
        assert_eq!(out.values(), manual.values());
    }

    #[test]
    fn two_regular_graphs_are_indistinguishable_with_uniform_features() {
        // C6 versus two triangles: every node state coincides at every
        // layer, so any invariant readout (mean over nodes) agrees.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c6 = Graph::cycle(6);
        let triangles = Graph::complete(3).disjoint_union(&Graph::complete(3));
        for _ in 0..10 {
            let p1 = MpnnLayerParams::init("l0", 1, 4, 0, &mut rng);
            let p2 = MpnnLayerParams::init("l1", 4, 4, 0, &mut rng);
            let readout = |g: &Graph| -> Vec<f64> {
                let x = DiffTensor::leaf(vec![6, 1], vec![1.0; 6]).unwrap();
                let h = mpnn_layer(&x, g, &p1).unwrap();
                let h = mpnn_layer(&h, g, &p2).unwrap();
                h.sum_leading().scale(1.0 / 6.0).values().to_vec()
            };
            let a = readout(&c6);
            let b = readout(&triangles);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
