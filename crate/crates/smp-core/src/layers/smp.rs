//! Fast and Default SMP layers.

use rand::Rng;

use super::{
    directed_edges, edge_feature_rows, equivariant_linear_stack, EquivLinearParams, LocalContext,
};
use crate::graph::Graph;
use crate::tensor::{mlp_forward, DiffTensor, MlpParams, Result};

/// Message/update parameterization of one SMP layer on top of the shared
/// equivariant linear block.
#[derive(Debug, Clone)]
pub enum SmpVariant {
    /// Pointwise-product messages, one aggregation per node:
    /// `U_i' = U_hat_i + (sum_j U_hat_j + (U_hat_i W4) ⊙ sum_j U_hat_j W5) / d_avg`.
    Fast { w4: DiffTensor, w5: DiffTensor },
    /// MLP messages computed per edge, MLP update:
    /// `U_i' = MLP([U_hat_i ∥ sum_j MLP([U_hat_i ∥ U_hat_j ∥ 1 y_ij^T]) / d_avg])`.
    Default {
        message_mlp: MlpParams,
        update_mlp: MlpParams,
    },
}

/// Weights of one SMP layer.
#[derive(Debug, Clone)]
pub struct SmpLayerParams {
    pub equiv: EquivLinearParams,
    pub variant: SmpVariant,
}

impl SmpLayerParams {
    /// Fast layer `c_in -> c_out`, square W4/W5 of width `c_out`.
    pub fn init_fast(name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        SmpLayerParams {
            equiv: EquivLinearParams::init(&format!("{name}.equiv"), c_in, c_out, rng),
            variant: SmpVariant::Fast {
                w4: crate::tensor::glorot_uniform(&format!("{name}.w4"), c_out, c_out, rng)
                    .scale_values(super::equiv::CONTEXT_INIT_GAIN),
                w5: crate::tensor::glorot_uniform(&format!("{name}.w5"), c_out, c_out, rng)
                    .scale_values(super::equiv::CONTEXT_INIT_GAIN),
            },
        }
    }

    /// Default layer `c_in -> c_out`; the message MLP reads
    /// `[U_hat_i ∥ U_hat_j ∥ y_ij]`, the update MLP `[U_hat_i ∥ aggregate]`.
    pub fn init_default(
        name: &str,
        c_in: usize,
        c_out: usize,
        c_y: usize,
        rng: &mut impl Rng,
    ) -> Self {
        SmpLayerParams {
            equiv: EquivLinearParams::init(&format!("{name}.equiv"), c_in, c_out, rng),
            variant: SmpVariant::Default {
                message_mlp: MlpParams::two_layer(
                    &format!("{name}.message"),
                    2 * c_out + c_y,
                    c_out,
                    c_out,
                    rng,
                ),
                update_mlp: MlpParams::two_layer(
                    &format!("{name}.update"),
                    2 * c_out,
                    c_out,
                    c_out,
                    rng,
                ),
            },
        }
    }

    pub fn in_dim(&self) -> usize {
        self.equiv.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        match &self.variant {
            SmpVariant::Fast { .. } => self.equiv.out_dim(),
            SmpVariant::Default { update_mlp, .. } => update_mlp.out_dim(),
        }
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a DiffTensor)) {
        self.equiv.visit_params(f);
        match &self.variant {
            SmpVariant::Fast { w4, w5 } => {
                f(w4);
                f(w5);
            }
            SmpVariant::Default {
                message_mlp,
                update_mlp,
            } => {
                message_mlp.visit_params(f);
                update_mlp.visit_params(f);
            }
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut DiffTensor)) {
        self.equiv.visit_params_mut(f);
        match &mut self.variant {
            SmpVariant::Fast { w4, w5 } => {
                f(w4);
                f(w5);
            }
            SmpVariant::Default {
                message_mlp,
                update_mlp,
            } => {
                message_mlp.visit_params_mut(f);
                update_mlp.visit_params_mut(f);
            }
        }
    }
}

/// Applies whichever variant the parameters carry.
pub fn smp_layer(u: &LocalContext, g: &Graph, p: &SmpLayerParams) -> Result<LocalContext> {
    match &p.variant {
        SmpVariant::Fast { .. } => smp_fast_layer(u, g, p),
        SmpVariant::Default { .. } => smp_default_layer(u, g, p),
    }
}

/// Fast SMP layer. Edge features are ignored by design (this variant is
/// defined for graphs without them). An edgeless graph leaves the
/// aggregate empty, so the layer reduces to the equivariant block.
pub fn smp_fast_layer(u: &LocalContext, g: &Graph, p: &SmpLayerParams) -> Result<LocalContext> {
    let SmpVariant::Fast { w4, w5 } = &p.variant else {
        return Err(crate::tensor::TensorError::InvalidArgument(
            "fast layer called with default-variant parameters".into(),
        ));
    };
    let hat = equivariant_linear_stack(u, &p.equiv)?;
    let d_avg = g.d_avg();
    if d_avg == 0.0 {
        return Ok(hat);
    }
    let adj = std::rc::Rc::new(g.adjacency().to_vec());
    let sum_hat = hat.tensor.neighbor_sum(&adj)?;
    let product = hat
        .tensor
        .matmul(w4)?
        .hadamard(&hat.tensor.matmul(w5)?.neighbor_sum(&adj)?)?;
    let out = hat
        .tensor
        .add(&sum_hat.add(&product)?.scale(1.0 / d_avg))?;
    u.with_tensor(out)
}

/// Reference implementation of the Fast layer that materializes one message
/// per directed edge instead of aggregating once per node. Exists solely as
/// the second route of the equality check; keep in lockstep with
/// [`smp_fast_layer`].
pub fn smp_fast_layer_per_edge(
    u: &LocalContext,
    g: &Graph,
    p: &SmpLayerParams,
) -> Result<LocalContext> {
    let SmpVariant::Fast { w4, w5 } = &p.variant else {
        return Err(crate::tensor::TensorError::InvalidArgument(
            "fast layer called with default-variant parameters".into(),
        ));
    };
    let hat = equivariant_linear_stack(u, &p.equiv)?;
    let d_avg = g.d_avg();
    if d_avg == 0.0 {
        return Ok(hat);
    }
    let (tgt, src) = directed_edges(g);
    let hat_i = hat.tensor.gather_nodes(&tgt)?;
    let hat_j = hat.tensor.gather_nodes(&src)?;
    // m(U_hat_i, U_hat_j) = U_hat_j + (U_hat_i W4) ⊙ (U_hat_j W5), per edge.
    let messages = hat_j.add(&hat_i.matmul(w4)?.hadamard(&hat_j.matmul(w5)?)?)?;
    let aggregate = messages.scatter_sum(&tgt, g.n())?.scale(1.0 / d_avg);
    let out = hat.tensor.add(&aggregate)?;
    u.with_tensor(out)
}

/// Default SMP layer with per-edge MLP messages.
pub fn smp_default_layer(u: &LocalContext, g: &Graph, p: &SmpLayerParams) -> Result<LocalContext> {
    let SmpVariant::Default {
        message_mlp,
        update_mlp,
    } = &p.variant
    else {
        return Err(crate::tensor::TensorError::InvalidArgument(
            "default layer called with fast-variant parameters".into(),
        ));
    };
    let hat = equivariant_linear_stack(u, &p.equiv)?;
    let n = g.n();
    let c_out = hat.channels();
    let d_avg = g.d_avg();
    let aggregate = if d_avg == 0.0 {
        DiffTensor::zeros(vec![n, hat.rows(), message_mlp.out_dim()])
    } else {
        let (tgt, src) = directed_edges(g);
        let hat_i = hat.tensor.gather_nodes(&tgt)?;
        let hat_j = hat.tensor.gather_nodes(&src)?;
        let message_in = match edge_feature_rows(g, &tgt, &src, hat.rows()) {
            Some(y) => DiffTensor::concat_last(&[hat_i, hat_j, y])?,
            None => DiffTensor::concat_last(&[hat_i, hat_j])?,
        };
        let messages = mlp_forward(&message_in, message_mlp)?;
        messages.scatter_sum(&tgt, n)?.scale(1.0 / d_avg)
    };
    let update_in = DiffTensor::concat_last(&[hat.tensor.clone(), aggregate])?;
    let out = mlp_forward(&update_in, update_mlp)?;
    debug_assert_eq!(out.shape(), &[n, hat.rows(), update_mlp.out_dim()]);
    let _ = c_out;
    u.with_tensor(out)
}

/// Pure sum propagation from the one-hot context:
/// `U_i^(k+1) = sum over j in N_i of U_j^(k)`. After l rounds the stacked
/// tensor equals the integer matrix power A^l.
pub fn sum_propagation_power(g: &Graph, l: usize) -> Result<LocalContext> {
    assert!(l >= 1, "at least one propagation round");
    let mut ctx = super::init_one_hot(g);
    let adj = std::rc::Rc::new(g.adjacency().to_vec());
    for _ in 0..l {
        let next = ctx.tensor.neighbor_sum(&adj)?;
        ctx = ctx.with_tensor(next)?;
    }
    Ok(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init_local_context;
    use crate::tensor::LinearParams;

    fn passthrough_fast(c: usize) -> SmpLayerParams {
        SmpLayerParams {
            equiv: EquivLinearParams::identity_passthrough(c),
            variant: SmpVariant::Fast {
                w4: DiffTensor::zeros(vec![c, c]),
                w5: DiffTensor::zeros(vec![c, c]),
            },
        }
    }

    #[test]
    fn fast_layer_residual_plus_normalized_sum_on_path() {
        // P3, one-hot init, identity equivariant block, W4 = W5 = 0:
        // U_1' = delta_1 + (3/4)(delta_0 + delta_2) since d_avg = 4/3.
        let g = Graph::path(3);
        let u = init_local_context(&g);
        let out = smp_fast_layer(&u, &g, &passthrough_fast(1)).unwrap();
        assert_eq!(out.value(1, 0, 0), 0.75);
        assert_eq!(out.value(1, 1, 0), 1.0);
        assert_eq!(out.value(1, 2, 0), 0.75);
        // End node: U_0' = delta_0 + (3/4) delta_1.
        assert_eq!(out.value(0, 0, 0), 1.0);
        assert_eq!(out.value(0, 1, 0), 0.75);
        assert_eq!(out.value(0, 2, 0), 0.0);
    }

    #[test]
    fn edgeless_graph_reduces_to_the_equivariant_block() {
        let g = Graph::new(3, &[]).unwrap();
        let u = init_local_context(&g);
        let out = smp_fast_layer(&u, &g, &passthrough_fast(1)).unwrap();
        assert_eq!(out.tensor.values(), u.tensor.values());
    }

    #[test]
    fn default_layer_collapses_to_fast_with_projection_weights() {
        // Message MLP = projection onto the U_hat_j block, update MLP = sum
        // of its two blocks: the layer reduces to U_hat_i + sum_j U_hat_j / d_avg,
        // which is the fast layer with W4 = W5 = 0.
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let g = Graph::random_er(6, 0.5, &mut rng);
        let u = init_local_context(&g);
        let c = 1;
        let mut proj = vec![0.0; 2 * c * c];
        proj[c * c] = 1.0; // picks the second block
        let message = MlpParams::single(LinearParams::new(
            DiffTensor::leaf(vec![2 * c, c], proj).unwrap(),
            DiffTensor::zeros(vec![c]),
        ));
        let mut sum = vec![0.0; 2 * c * c];
        sum[0] = 1.0;
        sum[c * c] = 1.0;
        let update = MlpParams::single(LinearParams::new(
            DiffTensor::leaf(vec![2 * c, c], sum).unwrap(),
            DiffTensor::zeros(vec![c]),
        ));
        let default_params = SmpLayerParams {
            equiv: EquivLinearParams::identity_passthrough(c),
            variant: SmpVariant::Default {
                message_mlp: message,
                update_mlp: update,
            },
        };
        let via_default = smp_default_layer(&u, &g, &default_params).unwrap();
        let via_fast = smp_fast_layer(&u, &g, &passthrough_fast(c)).unwrap();
        for (a, b) in via_default
            .tensor
            .values()
            .iter()
            .zip(via_fast.tensor.values())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_layer_on_edgeless_graph_updates_with_zero_aggregate() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let g = Graph::new(4, &[]).unwrap();
        let u = init_local_context(&g);
        let p = SmpLayerParams::init_default("l0", 1, 3, 0, &mut rng);
        let out = smp_default_layer(&u, &g, &p).unwrap();
        let SmpVariant::Default { update_mlp, .. } = &p.variant else {
            unreachable!()
        };
        let hat = equivariant_linear_stack(&u, &p.equiv).unwrap();
        let manual = mlp_forward(
            &DiffTensor::concat_last(&[hat.tensor.clone(), DiffTensor::zeros(vec![4, 4, 3])])
                .unwrap(),
            update_mlp,
        )
        .unwrap();
        assert_eq!(out.tensor.values(), manual.values());
    }

    #[test]
    fn per_edge_route_matches_single_aggregation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let n = 4 + (rng.random::<u32>() % 6) as usize;
            let g = Graph::random_er(n, 0.4, &mut rng);
            let u = init_local_context(&g);
            let p = SmpLayerParams::init_fast("l0", 1, 4, &mut rng);
            let a = smp_fast_layer(&u, &g, &p).unwrap();
            let b = smp_fast_layer_per_edge(&u, &g, &p).unwrap();
            for (x, y) in a.tensor.values().iter().zip(b.tensor.values()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sum_propagation_matches_hand_computed_square() {
        // P3: A^2 = [[1,0,1],[0,2,0],[1,0,1]].
        let g = Graph::path(3);
        let ctx = sum_propagation_power(&g, 2).unwrap();
        let expected = [1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(ctx.tensor.values(), &expected);
    }

    #[test]
    fn one_round_of_propagation_is_the_adjacency() {
        let g = Graph::cycle(5);
        let ctx = sum_propagation_power(&g, 1).unwrap();
        assert_eq!(ctx.tensor.values(), &g.adjacency_matrix()[..]);
    }

    #[test]
    fn hexagon_cube_has_zero_diagonal() {
        let g = Graph::cycle(6);
        let ctx = sum_propagation_power(&g, 3).unwrap();
        let mut trace = 0.0;
        for i in 0..6 {
            trace += ctx.value(i, i, 0);
        }
        assert_eq!(trace, 0.0);
        assert_eq!(trace as i64, crate::graph::trace_power(&g, 3));
    }
}
