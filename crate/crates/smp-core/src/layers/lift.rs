//! Embedding an arbitrary MPNN into Default-SMP layers.
//!
//! The constructed layers maintain the invariant that node i's context is
//! `e_i [1, x_i^(l)]^T`: the MPNN state lives on the diagonal (channels
//! 1..), channel 0 carries the node indicator, and every off-diagonal entry
//! is exactly zero. Each layer
//!
//! 1. broadcasts `[1, x_i]` to every row through the mean term of the
//!    equivariant block (`W2 = n I`, which is why the construction needs
//!    the graph size) and re-derives the indicator column through `W1`;
//! 2. runs the MPNN's message and update MLPs row-wise, with their input
//!    columns rewired to the broadcast layout, so that every row of every
//!    context computes the same MPNN update;
//! 3. re-extracts the diagonal inside the update MLP with a ReLU gate
//!    `relu(z + M d - M) - relu(-z + M d - M)`, where `d` is the indicator
//!    channel: exact `z` on the owner row, exact zero elsewhere, for all
//!    `|z| < M`.

use super::{EquivLinearParams, MpnnLayerParams, SmpLayerParams, SmpVariant};
use crate::tensor::{DiffTensor, LinearParams, MlpParams};

/// Gate saturation bound `M`. Values of the simulated MPNN must stay below
/// it in magnitude; the gate adds a rounding error of order `M * 1e-16` on
/// the diagonal, so the bound trades headroom against precision.
pub const GATE_BOUND: f64 = 1e4;

/// Builds Default-SMP layers that reproduce the given MPNN on graphs with
/// `n` nodes: after any prefix of layers, the context diagonal holds
/// `[1, x_i]` for the corresponding MPNN state and all other entries are 0.
pub fn lift_mpnn_to_smp(params: &[MpnnLayerParams], n: usize) -> Vec<SmpLayerParams> {
    params
        .iter()
        .map(|layer| lift_layer(layer, n))
        .collect()
}

fn lift_layer(p: &MpnnLayerParams, n: usize) -> SmpLayerParams {
    let c_in = p.in_dim();
    let c_out = p.out_dim();
    let c_m = p.message_mlp.out_dim();
    let c_y = p.message_mlp.in_dim() - 2 * c_in;
    let ctx_in = 1 + c_in; // [1, x]
    let hat = ctx_in + 1; // [1, x, indicator]
    let idx_const = 0usize;
    let idx_x = 1usize;
    let idx_ind = ctx_in;

    // Equivariant block: broadcast the context column sums (= the single
    // nonzero row) to channels 0..ctx_in, move channel 0 to the indicator
    // slot via W1.
    let mut w1 = vec![0.0; ctx_in * hat];
    w1[idx_const * hat + idx_ind] = 1.0;
    let mut w2 = vec![0.0; ctx_in * hat];
    for a in 0..ctx_in {
        w2[a * hat + a] = n as f64;
    }
    let equiv = EquivLinearParams {
        w1: DiffTensor::leaf(vec![ctx_in, hat], w1).expect("w1 shape"),
        w2: DiffTensor::leaf(vec![ctx_in, hat], w2).expect("w2 shape"),
        w3: DiffTensor::zeros(vec![ctx_in, hat]),
        c: DiffTensor::zeros(vec![hat]),
    };

    // Message MLP over [hat_i ∥ hat_j ∥ y-rows]: rewire the first layer's
    // input columns to the broadcast layout, keep the rest verbatim.
    let mut message_layers = Vec::with_capacity(p.message_mlp.layers.len());
    {
        let first = &p.message_mlp.layers[0];
        let h = first.out_dim();
        let mut w = vec![0.0; (2 * hat + c_y) * h];
        let copy_block = |w: &mut Vec<f64>, src_rows: std::ops::Range<usize>, dst_row0: usize| {
            for (off, a) in src_rows.enumerate() {
                for q in 0..h {
                    w[(dst_row0 + off) * h + q] = first.w.values()[a * h + q];
                }
            }
        };
        copy_block(&mut w, 0..c_in, idx_x); // x_i inside hat_i
        copy_block(&mut w, c_in..2 * c_in, hat + idx_x); // x_j inside hat_j
        copy_block(&mut w, 2 * c_in..2 * c_in + c_y, 2 * hat); // y block
        message_layers.push(LinearParams::new(
            DiffTensor::leaf(vec![2 * hat + c_y, h], w).expect("message shape"),
            clone_leaf(&first.b),
        ));
        for layer in &p.message_mlp.layers[1..] {
            message_layers.push(LinearParams::new(clone_leaf(&layer.w), clone_leaf(&layer.b)));
        }
    }

    // Update MLP over [hat_i ∥ aggregate]: the update's hidden layers run
    // with an extra unit carrying the indicator (ReLU-stable, it is 0/1),
    // the final linear is folded into the gate layer, and a last layer
    // combines the gate pair and regenerates the constant channel.
    let u_layers = &p.update_mlp.layers;
    let last = u_layers.len() - 1;
    let mut update_layers: Vec<LinearParams> = Vec::new();
    // Column map of the update input inside [hat_i ∥ aggregate].
    let map_update_col = |a: usize| if a < c_in { idx_x + a } else { hat + (a - c_in) };
    let gate_in; // width of the gate layer's input
    let gate_map: Vec<usize>; // u's final-layer input columns
    let gate_ind; // indicator column
    if last == 0 {
        gate_in = hat + c_m;
        gate_map = (0..c_in + c_m).map(map_update_col).collect();
        gate_ind = idx_ind;
    } else {
        // First hidden layer, rewired, plus the indicator unit.
        let first = &u_layers[0];
        let h0 = first.out_dim();
        let mut w = vec![0.0; (hat + c_m) * (h0 + 1)];
        for a in 0..first.in_dim() {
            let row = map_update_col(a);
            for q in 0..h0 {
                w[row * (h0 + 1) + q] = first.w.values()[a * h0 + q];
            }
        }
        w[idx_ind * (h0 + 1) + h0] = 1.0;
        let mut b = first.b.values().to_vec();
        b.push(0.0);
        update_layers.push(LinearParams::new(
            DiffTensor::leaf(vec![hat + c_m, h0 + 1], w).expect("update shape"),
            DiffTensor::leaf(vec![h0 + 1], b).expect("bias shape"),
        ));
        // Remaining hidden layers carry the indicator unit along.
        for layer in &u_layers[1..last] {
            let (hi, ho) = (layer.in_dim(), layer.out_dim());
            let mut w = vec![0.0; (hi + 1) * (ho + 1)];
            for a in 0..hi {
                for q in 0..ho {
                    w[a * (ho + 1) + q] = layer.w.values()[a * ho + q];
                }
            }
            w[hi * (ho + 1) + ho] = 1.0;
            let mut b = layer.b.values().to_vec();
            b.push(0.0);
            update_layers.push(LinearParams::new(
                DiffTensor::leaf(vec![hi + 1, ho + 1], w).expect("update shape"),
                DiffTensor::leaf(vec![ho + 1], b).expect("bias shape"),
            ));
        }
        let h_last = u_layers[last].in_dim();
        gate_in = h_last + 1;
        gate_map = (0..h_last).collect();
        gate_ind = h_last;
    }

    // Gate layer: relu(±z_q + M d - M) for every output channel q of the
    // update, plus one unit regenerating the constant channel.
    let final_w = &u_layers[last].w;
    let final_b = &u_layers[last].b;
    let gates = 2 * c_out + 1;
    let mut w = vec![0.0; gate_in * gates];
    let mut b = vec![0.0; gates];
    for q in 0..c_out {
        for (a, &row) in gate_map.iter().enumerate() {
            let v = final_w.values()[a * c_out + q];
            w[row * gates + 2 * q] = v;
            w[row * gates + 2 * q + 1] = -v;
        }
        w[gate_ind * gates + 2 * q] = GATE_BOUND;
        w[gate_ind * gates + 2 * q + 1] = GATE_BOUND;
        b[2 * q] = final_b.values()[q] - GATE_BOUND;
        b[2 * q + 1] = -final_b.values()[q] - GATE_BOUND;
    }
    w[gate_ind * gates + 2 * c_out] = GATE_BOUND;
    b[2 * c_out] = 1.0 - GATE_BOUND;
    update_layers.push(LinearParams::new(
        DiffTensor::leaf(vec![gate_in, gates], w).expect("gate shape"),
        DiffTensor::leaf(vec![gates], b).expect("gate bias shape"),
    ));

    // Combine layer: out[0] = const gate, out[1 + q] = pos_q - neg_q.
    let out_w = {
        let mut w = vec![0.0; gates * (1 + c_out)];
        w[2 * c_out * (1 + c_out)] = 1.0;
        for q in 0..c_out {
            w[(2 * q) * (1 + c_out) + 1 + q] = 1.0;
            w[(2 * q + 1) * (1 + c_out) + 1 + q] = -1.0;
        }
        w
    };
    update_layers.push(LinearParams::new(
        DiffTensor::leaf(vec![gates, 1 + c_out], out_w).expect("combine shape"),
        DiffTensor::zeros(vec![1 + c_out]),
    ));

    SmpLayerParams {
        equiv,
        variant: SmpVariant::Default {
            message_mlp: MlpParams::new(message_layers),
            update_mlp: MlpParams::new(update_layers),
        },
    }
}

fn clone_leaf(t: &DiffTensor) -> DiffTensor {
    DiffTensor::leaf(t.shape().to_vec(), t.values().to_vec()).expect("clone shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Permutation};
    use crate::layers::{init_local_context, mpnn_layer, node_feature_matrix, smp_default_layer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run_both(g: &Graph, mpnn: &[MpnnLayerParams]) -> (Vec<f64>, crate::layers::LocalContext) {
        let mut x = node_feature_matrix(g);
        for p in mpnn {
            x = mpnn_layer(&x, g, p).unwrap();
        }
        let lifted = lift_mpnn_to_smp(mpnn, g.n());
        let mut u = init_local_context(g);
        for p in &lifted {
            u = smp_default_layer(&u, g, p).unwrap();
        }
        (x.values().to_vec(), u)
    }

    #[test]
    fn lifted_diagonal_tracks_the_mpnn() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..15 {
            let n = rng.random_range(3..8);
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let g = Graph::random_er(n, 0.5, &mut rng)
                .with_node_features(x)
                .unwrap();
            let depth = rng.random_range(1..4);
            let mut widths = vec![2usize];
            for _ in 0..depth {
                widths.push(rng.random_range(1..4));
            }
            let mpnn: Vec<MpnnLayerParams> = (0..depth)
                .map(|l| MpnnLayerParams::init(&format!("m{l}"), widths[l], widths[l + 1], 0, &mut rng))
                .collect();
            let (mpnn_out, u) = run_both(&g, &mpnn);
            let c_out = *widths.last().unwrap();
            for i in 0..n {
                assert!((u.value(i, i, 0) - 1.0).abs() <= 1e-9, "constant channel");
                for q in 0..c_out {
                    let diff = (u.value(i, i, 1 + q) - mpnn_out[i * c_out + q]).abs();
                    assert!(diff <= 1e-9, "diag mismatch {diff}");
                }
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    for q in 0..=c_out {
                        assert!(u.value(i, j, q).abs() <= 1e-12, "off-diagonal leak");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_layer_lift_is_the_plain_init() {
        let g = Graph::path(4)
            .with_node_features(vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4]])
            .unwrap();
        let lifted = lift_mpnn_to_smp(&[], 4);
        assert!(lifted.is_empty());
        let u = init_local_context(&g);
        let x = g.node_features().unwrap();
        for i in 0..4 {
            assert_eq!(u.value(i, i, 0), 1.0);
            assert_eq!(u.value(i, i, 1), x[i][0]);
        }
    }

    #[test]
    fn lift_commutes_with_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 6;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let g = Graph::random_er(n, 0.5, &mut rng)
            .with_node_features(x)
            .unwrap();
        let mpnn = vec![MpnnLayerParams::init("m0", 1, 2, 0, &mut rng)];
        let (_, u) = run_both(&g, &mpnn);
        let perm = Permutation::random(n, &mut rng);
        let (_, u_perm) = run_both(&perm.apply_graph(&g).unwrap(), &mpnn);
        let expected = perm
            .apply_tensor3(u.tensor.values(), n, u.channels())
            .unwrap();
        for (a, b) in u_perm.tensor.values().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
