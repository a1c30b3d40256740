//! Model assembly: an SMP or MPNN backbone plus task heads, with named
//! parameters for optimization and checkpointing.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::coloring::color_nodes;
use crate::graph::Graph;
use crate::layers::{
    graph_extract, init_local_context, mpnn_layer, node_feature_matrix, node_pool, smp_layer,
    MpnnLayerParams, NodePoolParams, SmpLayerParams,
};
use crate::tensor::{mlp_forward, save_tensors, Checkpoint, DiffTensor, MlpParams};

/// Epsilon of the head-input RMS normalization.
const HEAD_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SmpFast,
    SmpDefault,
    Mpnn,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        match name {
            "smp-fast" => Ok(ModelKind::SmpFast),
            "smp-default" => Ok(ModelKind::SmpDefault),
            "mpnn" => Ok(ModelKind::Mpnn),
            other => Err(HarnessError::Config(format!("unknown model `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SmpFast => "smp-fast",
            ModelKind::SmpDefault => "smp-default",
            ModelKind::Mpnn => "mpnn",
        }
    }
}

/// Static shape of a model, persisted in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layers: usize,
    pub width: usize,
    /// Input width: context channels (1 + c_x) for SMP, feature width for
    /// the MPNN baseline.
    pub in_channels: usize,
    pub edge_channels: usize,
    /// Node-target output width (0 = no node head).
    pub node_out: usize,
    /// Graph-target output width (0 = no graph head).
    pub graph_out: usize,
    /// Coloring horizon L; 0 runs with plain one-hot identifiers.
    pub coloring: usize,
    /// Sum head outputs over every layer's state instead of reading only
    /// the final one. Multi-scale readout: distance-l structure appears
    /// exactly at layer l.
    pub per_layer_readout: bool,
}

impl ModelSpec {
    /// Input widths implied by a dataset's graphs.
    pub fn input_widths(kind: ModelKind, g: &Graph) -> (usize, usize) {
        let c_x = g.node_feature_width();
        let c_in = match kind {
            ModelKind::Mpnn => c_x.max(1),
            _ => 1 + c_x,
        };
        (c_in, g.edge_feature_width())
    }
}

pub enum Backbone {
    Smp(Vec<SmpLayerParams>),
    Mpnn(Vec<MpnnLayerParams>),
}

pub enum NodeHead {
    /// Pooling extractor over local contexts.
    Pool(NodePoolParams),
    /// Row-wise MLP over node features.
    Mlp(MlpParams),
}

pub struct Model {
    pub spec: ModelSpec,
    pub backbone: Backbone,
    pub node_head: Option<NodeHead>,
    pub graph_head: Option<MlpParams>,
}

/// Forward outputs: `[n, node_out]` per-node predictions and/or a
/// `[graph_out]` graph-level vector.
pub struct Outputs {
    pub node: Option<DiffTensor>,
    pub graph: Option<DiffTensor>,
}

impl Model {
    pub fn init(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = spec.width;
        let backbone = match spec.kind {
            ModelKind::SmpFast => Backbone::Smp(
                (0..spec.layers)
                    .map(|l| {
                        let c_in = if l == 0 { spec.in_channels } else { w };
                        SmpLayerParams::init_fast(&format!("l{l}"), c_in, w, &mut rng)
                    })
                    .collect(),
            ),
            ModelKind::SmpDefault => Backbone::Smp(
                (0..spec.layers)
                    .map(|l| {
                        let c_in = if l == 0 { spec.in_channels } else { w };
                        SmpLayerParams::init_default(
                            &format!("l{l}"),
                            c_in,
                            w,
                            spec.edge_channels,
                            &mut rng,
                        )
                    })
                    .collect(),
            ),
            ModelKind::Mpnn => Backbone::Mpnn(
                (0..spec.layers)
                    .map(|l| {
                        let c_in = if l == 0 { spec.in_channels } else { w };
                        MpnnLayerParams::init(&format!("l{l}"), c_in, w, spec.edge_channels, &mut rng)
                    })
                    .collect(),
            ),
        };
        let node_head = (spec.node_out > 0).then(|| match spec.kind {
            ModelKind::Mpnn => {
                NodeHead::Mlp(MlpParams::two_layer("node_head", w, w, spec.node_out, &mut rng))
            }
            _ => NodeHead::Pool(NodePoolParams::init("node_head", w, w, spec.node_out, &mut rng)),
        });
        let graph_head = (spec.graph_out > 0)
            .then(|| MlpParams::two_layer("graph_head", 2 * w, w, spec.graph_out, &mut rng));
        Model {
            spec,
            backbone,
            node_head,
            graph_head,
        }
    }

    pub fn forward(&self, g: &Graph) -> Result<Outputs, HarnessError> {
        match &self.backbone {
            Backbone::Smp(layers) => {
                let mut ctx = if self.spec.coloring > 0 {
                    let assignment = color_nodes(g, self.spec.coloring);
                    crate::coloring::init_colored_context(g, &assignment)
                        .map_err(|e| HarnessError::Config(e.to_string()))?
                } else {
                    init_local_context(g)
                };
                let mut node_sum: Option<DiffTensor> = None;
                let mut graph_sum: Option<DiffTensor> = None;
                let last = layers.len().saturating_sub(1);
                for (l, p) in layers.iter().enumerate() {
                    ctx = smp_layer(&ctx, g, p)?;
                    if self.spec.per_layer_readout {
                        // Contexts compound by roughy 1 + deg/d_avg per
                        // round; rescaling between layers keeps magnitudes
                        // comparable across graphs of different densities.
                        ctx = ctx.with_tensor(ctx.tensor.rms_normalize(HEAD_NORM_EPS))?;
                    }
                    if !self.spec.per_layer_readout && l != last {
                        continue;
                    }
                    let readout = &ctx;
                    if let Some(NodeHead::Pool(p)) = &self.node_head {
                        let out = node_pool(readout, p)?;
                        node_sum = Some(match node_sum {
                            Some(acc) => acc.add(&out)?,
                            None => out,
                        });
                    }
                    if let Some(p) = &self.graph_head {
                        let out = graph_extract(readout, p)?;
                        graph_sum = Some(match graph_sum {
                            Some(acc) => acc.add(&out)?,
                            None => out,
                        });
                    }
                }
                Ok(Outputs {
                    node: node_sum,
                    graph: graph_sum,
                })
            }
            Backbone::Mpnn(layers) => {
                let mut x = node_feature_matrix(g);
                let mut node_sum: Option<DiffTensor> = None;
                let mut graph_sum: Option<DiffTensor> = None;
                let last = layers.len().saturating_sub(1);
                for (l, p) in layers.iter().enumerate() {
                    x = mpnn_layer(&x, g, p)?;
                    if self.spec.per_layer_readout {
                        x = x.rms_normalize(HEAD_NORM_EPS);
                    }
                    if !self.spec.per_layer_readout && l != last {
                        continue;
                    }
                    let readout = &x;
                    if let Some(NodeHead::Mlp(p)) = &self.node_head {
                        let out = mlp_forward(readout, p)?;
                        node_sum = Some(match node_sum {
                            Some(acc) => acc.add(&out)?,
                            None => out,
                        });
                    }
                    if let Some(p) = &self.graph_head {
                        // Invariant readout [mean ∥ sum], the feature-vector
                        // counterpart of the context extractor.
                        let sum = readout.sum_leading();
                        let mean = sum.scale(1.0 / g.n().max(1) as f64);
                        let features = DiffTensor::concat_last(&[mean, sum])?;
                        let out = mlp_forward(&features, p)?;
                        graph_sum = Some(match graph_sum {
                            Some(acc) => acc.add(&out)?,
                            None => out,
                        });
                    }
                }
                Ok(Outputs {
                    node: node_sum,
                    graph: graph_sum,
                })
            }
        }
    }

    /// Parameters in a stable traversal order.
    pub fn params(&self) -> Vec<DiffTensor> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.push(t.clone()));
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a DiffTensor)) {
        match &self.backbone {
            Backbone::Smp(layers) => {
                for layer in layers {
                    layer.visit_params(f);
                }
            }
            Backbone::Mpnn(layers) => {
                for layer in layers {
                    layer.visit_params(f);
                }
            }
        }
        match &self.node_head {
            Some(NodeHead::Pool(p)) => p.visit_params(f),
            Some(NodeHead::Mlp(p)) => p.visit_params(f),
            None => {}
        }
        if let Some(p) = &self.graph_head {
            p.visit_params(f);
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut DiffTensor)) {
        match &mut self.backbone {
            Backbone::Smp(layers) => {
                for layer in layers {
                    layer.visit_params_mut(f);
                }
            }
            Backbone::Mpnn(layers) => {
                for layer in layers {
                    layer.visit_params_mut(f);
                }
            }
        }
        match &mut self.node_head {
            Some(NodeHead::Pool(p)) => p.visit_params_mut(f),
            Some(NodeHead::Mlp(p)) => p.visit_params_mut(f),
            None => {}
        }
        if let Some(p) = &mut self.graph_head {
            p.visit_params_mut(f);
        }
    }

    /// Replaces parameters in traversal order (the counterpart of
    /// [`Model::params`], used after an optimizer step).
    pub fn set_params(&mut self, new: Vec<DiffTensor>) {
        let mut it = new.into_iter();
        self.visit_mut(&mut |slot| {
            *slot = it.next().expect("parameter count mismatch");
        });
        assert!(it.next().is_none(), "parameter count mismatch");
    }

    pub fn zero_grads(&self) {
        self.visit(&mut |t| t.zero_grad());
    }

    /// Current parameter values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.values().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        let params = self.params();
        assert_eq!(params.len(), snapshot.len(), "snapshot size mismatch");
        let rebuilt: Vec<DiffTensor> = params
            .iter()
            .zip(snapshot)
            .map(|(p, values)| match p.name() {
                Some(name) => DiffTensor::param(name, p.shape().to_vec(), values.clone()),
                None => DiffTensor::leaf(p.shape().to_vec(), values.clone()),
            })
            .collect::<Result<_, _>>()
            .expect("snapshot shapes match");
        self.set_params(rebuilt);
    }

    /// Writes spec metadata, all parameters and optional normalization
    /// statistics to the binary checkpoint format.
    pub fn save(
        &self,
        path: &Path,
        extra_meta: &BTreeMap<String, String>,
        stats: Option<&super::train::TargetStats>,
    ) -> Result<(), HarnessError> {
        let mut meta = extra_meta.clone();
        meta.insert("kind".into(), self.spec.kind.name().into());
        meta.insert("layers".into(), self.spec.layers.to_string());
        meta.insert("width".into(), self.spec.width.to_string());
        meta.insert("in_channels".into(), self.spec.in_channels.to_string());
        meta.insert("edge_channels".into(), self.spec.edge_channels.to_string());
        meta.insert("node_out".into(), self.spec.node_out.to_string());
        meta.insert("graph_out".into(), self.spec.graph_out.to_string());
        meta.insert("coloring".into(), self.spec.coloring.to_string());
        meta.insert(
            "per_layer_readout".into(),
            usize::from(self.spec.per_layer_readout).to_string(),
        );

        let params = self.params();
        let mut named: Vec<(String, &DiffTensor)> = Vec::with_capacity(params.len() + 2);
        for (idx, p) in params.iter().enumerate() {
            let name = p
                .name()
                .map_or_else(|| format!("param{idx}"), str::to_string);
            named.push((name, p));
        }
        let stat_tensors = stats.map(|s| {
            (
                DiffTensor::leaf(vec![s.mean.len()], s.mean.clone()).expect("stats shape"),
                DiffTensor::leaf(vec![s.std.len()], s.std.clone()).expect("stats shape"),
            )
        });
        if let Some((mean, std)) = &stat_tensors {
            named.push(("norm.mean".into(), mean));
            named.push(("norm.std".into(), std));
        }
        save_tensors(path, &meta, &named)?;
        Ok(())
    }

    /// Rebuilds a model (and normalization stats, when present) from a
    /// checkpoint.
    pub fn load(ckpt: &Checkpoint) -> Result<(Self, Option<super::train::TargetStats>), HarnessError> {
        let meta = |key: &str| -> Result<&str, HarnessError> {
            ckpt.meta
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| HarnessError::Checkpoint(format!("missing metadata `{key}`")))
        };
        let parse = |key: &str| -> Result<usize, HarnessError> {
            meta(key)?
                .parse()
                .map_err(|_| HarnessError::Checkpoint(format!("bad metadata `{key}`")))
        };
        let spec = ModelSpec {
            kind: ModelKind::parse(meta("kind")?)?,
            layers: parse("layers")?,
            width: parse("width")?,
            in_channels: parse("in_channels")?,
            edge_channels: parse("edge_channels")?,
            node_out: parse("node_out")?,
            graph_out: parse("graph_out")?,
            coloring: parse("coloring")?,
            per_layer_readout: parse("per_layer_readout")? != 0,
        };
        let mut model = Model::init(spec, 0);
        let mut replacement: Vec<DiffTensor> = Vec::new();
        for p in model.params() {
            let name = p
                .name()
                .ok_or_else(|| HarnessError::Checkpoint("unnamed parameter".into()))?;
            let (shape, values) = ckpt.tensor(name).ok_or_else(|| {
                HarnessError::Checkpoint(format!("checkpoint is missing tensor `{name}`"))
            })?;
            if shape != p.shape() {
                return Err(HarnessError::Checkpoint(format!(
                    "tensor `{name}` has shape {shape:?}, expected {:?}",
                    p.shape()
                )));
            }
            replacement.push(
                DiffTensor::param(name, shape.to_vec(), values.to_vec())
                    .map_err(|e| HarnessError::Checkpoint(e.to_string()))?,
            );
        }
        model.set_params(replacement);
        let stats = match (ckpt.tensor("norm.mean"), ckpt.tensor("norm.std")) {
            (Some((_, mean)), Some((_, std))) => Some(super::train::TargetStats {
                mean: mean.to_vec(),
                std: std.to_vec(),
            }),
            _ => None,
        };
        Ok((model, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            layers: 2,
            width: 4,
            in_channels: 1,
            edge_channels: 0,
            node_out: 0,
            graph_out: 1,
            coloring: 0,
            per_layer_readout: false,
        }
    }

    #[test]
    fn forward_shapes_for_all_kinds() {
        let g = Graph::cycle(5);
        for kind in [ModelKind::SmpFast, ModelKind::SmpDefault, ModelKind::Mpnn] {
            let model = Model::init(tiny_spec(kind), 3);
            let out = model.forward(&g).unwrap();
            assert!(out.node.is_none());
            assert_eq!(out.graph.unwrap().shape(), &[1]);
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_forward_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let g = Graph::cycle(6);
        let model = Model::init(tiny_spec(ModelKind::SmpFast), 11);
        let before = model.forward(&g).unwrap().graph.unwrap();
        model.save(&path, &BTreeMap::new(), None).unwrap();
        let ckpt = crate::tensor::load_tensors(&path).unwrap();
        let (loaded, stats) = Model::load(&ckpt).unwrap();
        assert!(stats.is_none());
        let after = loaded.forward(&g).unwrap().graph.unwrap();
        assert_eq!(before.item().to_bits(), after.item().to_bits());
    }

    #[test]
    fn snapshot_restore_roundtrips() {
        let g = Graph::path(4);
        let mut model = Model::init(tiny_spec(ModelKind::Mpnn), 5);
        let snap = model.snapshot();
        let before = model.forward(&g).unwrap().graph.unwrap().item();
        // Clobber and restore.
        let zeros: Vec<DiffTensor> = model
            .params()
            .iter()
            .map(|p| DiffTensor::zeros(p.shape().to_vec()))
            .collect();
        model.set_params(zeros);
        model.restore(&snap);
        let after = model.forward(&g).unwrap().graph.unwrap().item();
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn colored_model_runs_forward() {
        // A long path with 2 layers: coloring compresses the rows.
        let g = Graph::path(12);
        let spec = ModelSpec {
            coloring: 2,
            ..tiny_spec(ModelKind::SmpFast)
        };
        let model = Model::init(spec, 7);
        let out = model.forward(&g).unwrap();
        assert_eq!(out.graph.unwrap().shape(), &[1]);
    }
}
