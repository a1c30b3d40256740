//! Training loop, loss functions, metrics and checkpoint evaluation.
//!
//! Everything downstream of the seed is deterministic: the validation
//! split, per-epoch shuffles and weight initialization all derive from
//! `RunConfig::seed`, graphs are processed in fixed order and gradients
//! reduce in parameter order, so one (config, seed) pair fixes every
//! reported metric exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Model, ModelKind, ModelSpec, RunConfig};
use crate::datasets::{read_dataset, Dataset, Label, Record, TaskKind};
use crate::tensor::{adam_update, backprop, AdamHyper, AdamState, DiffTensor};

/// Target order of the multitask vectors: three node-level, three
/// graph-level.
pub const TARGET_NAMES: [&str; 6] = ["dist", "ecc", "lap", "connected", "diameter", "radius"];

/// Per-target standardization statistics computed on the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetStats {
    /// Pools node targets over all nodes and graph targets over graphs.
    pub fn from_train(dataset: &Dataset) -> Self {
        let mut sums = vec![0.0f64; 6];
        let mut sqs = vec![0.0f64; 6];
        let mut counts = vec![0.0f64; 6];
        for record in &dataset.records {
            let Label::Multitask(t) = &record.label else {
                continue;
            };
            let graph_values = [
                f64::from(t.connected),
                t.diameter,
                t.radius,
            ];
            for (k, node_values) in [&t.dist, &t.ecc, &t.lap].into_iter().enumerate() {
                for &v in node_values {
                    sums[k] += v;
                    sqs[k] += v * v;
                    counts[k] += 1.0;
                }
            }
            for (k, v) in graph_values.into_iter().enumerate() {
                sums[3 + k] += v;
                sqs[3 + k] += v * v;
                counts[3 + k] += 1.0;
            }
        }
        let mean: Vec<f64> = (0..6).map(|k| sums[k] / counts[k].max(1.0)).collect();
        let std: Vec<f64> = (0..6)
            .map(|k| {
                let var = sqs[k] / counts[k].max(1.0) - mean[k] * mean[k];
                var.max(0.0).sqrt().max(1e-8)
            })
            .collect();
        TargetStats { mean, std }
    }

    fn node_targets(&self, record: &Record) -> DiffTensor {
        let Label::Multitask(t) = &record.label else {
            unreachable!("multitask record")
        };
        let n = record.graph.n();
        let mut values = Vec::with_capacity(n * 3);
        for i in 0..n {
            values.push((t.dist[i] - self.mean[0]) / self.std[0]);
            values.push((t.ecc[i] - self.mean[1]) / self.std[1]);
            values.push((t.lap[i] - self.mean[2]) / self.std[2]);
        }
        DiffTensor::leaf(vec![n, 3], values).expect("target shape")
    }

    fn graph_targets(&self, record: &Record) -> DiffTensor {
        let Label::Multitask(t) = &record.label else {
            unreachable!("multitask record")
        };
        let values = vec![
            (f64::from(t.connected) - self.mean[3]) / self.std[3],
            (t.diameter - self.mean[4]) / self.std[4],
            (t.radius - self.mean[5]) / self.std[5],
        ];
        DiffTensor::leaf(vec![3], values).expect("target shape")
    }
}

/// Final report of a training or evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub config_hash: String,
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub test_metrics: BTreeMap<String, f64>,
    pub wall_clock_secs: f64,
}

pub struct TrainOutcome {
    pub report: MetricsReport,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub report_json: PathBuf,
}

fn task_of(cfg: &RunConfig) -> Result<TaskKind, HarnessError> {
    match cfg.task.as_str() {
        "cycles" => Ok(TaskKind::Cycles { k: cfg.k }),
        "multitask" => Ok(TaskKind::Multitask),
        other => Err(HarnessError::Config(format!("unknown task `{other}`"))),
    }
}

fn check_dataset(task: &TaskKind, dataset: &Dataset, what: &str) -> Result<(), HarnessError> {
    if dataset.records.is_empty() {
        return Err(HarnessError::Config(format!("{what} dataset is empty")));
    }
    let compatible = matches!(
        (task, &dataset.task),
        (TaskKind::Cycles { .. }, TaskKind::Cycles { .. }) | (TaskKind::Multitask, TaskKind::Multitask)
    );
    if !compatible {
        return Err(HarnessError::Config(format!(
            "{what} dataset task does not match the run task"
        )));
    }
    Ok(())
}

/// Per-graph loss. Cycles: binary cross-entropy of the single logit,
/// `softplus(z) - y z`. Multitask: squared error summed over the six
/// standardized targets, node targets averaged over nodes.
fn record_loss(
    model: &Model,
    record: &Record,
    stats: Option<&TargetStats>,
) -> Result<DiffTensor, HarnessError> {
    let outputs = model.forward(&record.graph)?;
    match &record.label {
        Label::Cycle(label) => {
            let logit = outputs
                .graph
                .ok_or_else(|| HarnessError::Config("cycles model without graph head".into()))?;
            let y = f64::from(*label);
            Ok(logit.softplus().sub(&logit.scale(y))?.sum_all())
        }
        Label::Multitask(_) => {
            let stats = stats.expect("multitask training requires target stats");
            let n = record.graph.n();
            let node_pred = outputs
                .node
                .ok_or_else(|| HarnessError::Config("multitask model without node head".into()))?;
            let graph_pred = outputs
                .graph
                .ok_or_else(|| HarnessError::Config("multitask model without graph head".into()))?;
            let node_diff = node_pred.sub(&stats.node_targets(record))?;
            let node_loss = node_diff
                .hadamard(&node_diff)?
                .sum_all()
                .scale(1.0 / n as f64);
            let graph_diff = graph_pred.sub(&stats.graph_targets(record))?;
            let graph_loss = graph_diff.hadamard(&graph_diff)?.sum_all();
            Ok(node_loss.add(&graph_loss)?)
        }
    }
}

/// Test metrics on a whole dataset. Cycles: accuracy (logit > 0) and mean
/// BCE. Multitask: per-target MSE on standardized targets, its log10, the
/// mean log10 over all six targets and over the distance/eccentricity/
/// diameter subset.
fn evaluate_on(
    model: &Model,
    dataset: &Dataset,
    stats: Option<&TargetStats>,
) -> Result<BTreeMap<String, f64>, HarnessError> {
    let mut metrics = BTreeMap::new();
    match dataset.task {
        TaskKind::Cycles { .. } => {
            let mut correct = 0usize;
            let mut bce = 0.0;
            for record in &dataset.records {
                let Label::Cycle(label) = &record.label else {
                    unreachable!()
                };
                let logit = model.forward(&record.graph)?.graph.ok_or_else(|| {
                    HarnessError::Checkpoint("model produces no graph output".into())
                })?;
                let z = logit.item();
                if (z > 0.0) == *label {
                    correct += 1;
                }
                let y = f64::from(*label);
                bce += (z.max(0.0) + (-z.abs()).exp().ln_1p()) - y * z;
            }
            let count = dataset.records.len() as f64;
            metrics.insert("accuracy".into(), correct as f64 / count);
            metrics.insert("bce".into(), bce / count);
        }
        TaskKind::Multitask => {
            let stats = stats.ok_or_else(|| {
                HarnessError::Checkpoint("multitask evaluation requires target stats".into())
            })?;
            let mut sq = vec![0.0f64; 6];
            let mut counts = vec![0.0f64; 6];
            for record in &dataset.records {
                let outputs = model.forward(&record.graph)?;
                let node_pred = outputs
                    .node
                    .ok_or_else(|| HarnessError::Checkpoint("missing node head".into()))?;
                let graph_pred = outputs
                    .graph
                    .ok_or_else(|| HarnessError::Checkpoint("missing graph head".into()))?;
                let node_t = stats.node_targets(record);
                for (p, t) in node_pred.values().chunks(3).zip(node_t.values().chunks(3)) {
                    for k in 0..3 {
                        sq[k] += (p[k] - t[k]).powi(2);
                        counts[k] += 1.0;
                    }
                }
                let graph_t = stats.graph_targets(record);
                for k in 0..3 {
                    sq[3 + k] += (graph_pred.values()[k] - graph_t.values()[k]).powi(2);
                    counts[3 + k] += 1.0;
                }
            }
            let mut logs = Vec::with_capacity(6);
            for k in 0..6 {
                let mse = sq[k] / counts[k].max(1.0);
                let log = mse.max(1e-300).log10();
                metrics.insert(format!("mse_{}", TARGET_NAMES[k]), mse);
                metrics.insert(format!("log_mse_{}", TARGET_NAMES[k]), log);
                logs.push(log);
            }
            metrics.insert("log_mse_mean".into(), logs.iter().sum::<f64>() / 6.0);
            // Distance, eccentricity, diameter: the structural subset.
            metrics.insert(
                "log_mse_struct_mean".into(),
                (logs[0] + logs[1] + logs[4]) / 3.0,
            );
        }
    }
    Ok(metrics)
}

/// Validation score where larger is better.
fn validation_score(metrics: &BTreeMap<String, f64>, task: &TaskKind) -> f64 {
    match task {
        TaskKind::Cycles { .. } => {
            // Accuracy first, lower BCE as tie-break.
            metrics["accuracy"] - 1e-4 * metrics["bce"]
        }
        TaskKind::Multitask => -metrics["log_mse_mean"],
    }
}

/// Trains per the config, writes `metrics.csv`, `report.json` and
/// `model.ckpt` into `out_dir`, and returns the final report. Keeps the
/// best-validation parameters; halves the learning rate (floor
/// `lr_floor`) when validation stalls for `lr_patience` epochs.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let task = task_of(cfg)?;
    let train_set = read_dataset(&cfg.train)?;
    let test_set = read_dataset(&cfg.test)?;
    check_dataset(&task, &train_set, "train")?;
    check_dataset(&task, &test_set, "test")?;

    let stats = match task {
        TaskKind::Multitask => Some(TargetStats::from_train(&train_set)),
        TaskKind::Cycles { .. } => None,
    };

    // Validation split: seeded shuffle, first `val_fraction` of the records.
    let mut order: Vec<usize> = (0..train_set.records.len()).collect();
    shuffle(&mut order, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ SPLIT_SALT));
    let val_len = ((train_set.records.len() as f64) * cfg.val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(val_len);
    let val_set = subset(&train_set, val_idx);
    let mut train_idx: Vec<usize> = train_idx.to_vec();

    let (in_channels, edge_channels) =
        ModelSpec::input_widths(ModelKind::parse(&cfg.model)?, &train_set.records[0].graph);
    let (node_out, graph_out) = match task {
        TaskKind::Cycles { .. } => (0, 1),
        TaskKind::Multitask => (3, 3),
    };
    let spec = ModelSpec {
        kind: ModelKind::parse(&cfg.model)?,
        layers: cfg.layers,
        width: cfg.width,
        in_channels,
        edge_channels,
        node_out,
        graph_out,
        coloring: cfg.coloring,
        // Multi-scale structural targets read every layer's state.
        per_layer_readout: matches!(task, TaskKind::Multitask),
    };
    let mut model = Model::init(spec, cfg.seed);

    let mut adam = AdamState::new(AdamHyper {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    });

    std::fs::create_dir_all(&cfg.out_dir)?;
    let metrics_csv = cfg.out_dir.join("metrics.csv");
    let mut csv = File::create(&metrics_csv)?;
    writeln!(csv, "epoch,split,metric,value")?;

    let mut best_score = f64::NEG_INFINITY;
    let mut best_snapshot = model.snapshot();
    let mut epochs_since_best = 0usize;
    let mut train_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle(
            &mut train_idx,
            &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ EPOCH_SALT ^ epoch as u64),
        );
        let mut epoch_loss = 0.0;
        for (step, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            model.zero_grads();
            let mut batch_loss: Option<DiffTensor> = None;
            for &idx in batch {
                let loss = record_loss(&model, &train_set.records[idx], stats.as_ref())?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => acc.add(&loss)?,
                    None => loss,
                });
            }
            let batch_loss = batch_loss.expect("non-empty batch").scale(1.0 / batch.len() as f64);
            if !batch_loss.item().is_finite() {
                return Err(HarnessError::NanLoss { epoch, step });
            }
            epoch_loss += batch_loss.item() * batch.len() as f64;
            backprop(&batch_loss)?;
            let params = model.params();
            let mut grads: Vec<Vec<f64>> = params.iter().map(DiffTensor::grad_or_zeros).collect();
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            let updated = adam_update(&params, &grads, &mut adam)?;
            model.set_params(updated);
        }
        let epoch_loss = epoch_loss / train_idx.len().max(1) as f64;
        train_losses.push(epoch_loss);
        writeln!(csv, "{epoch},train,loss,{epoch_loss}")?;

        if !val_set.records.is_empty() {
            let val_metrics = evaluate_on(&model, &val_set, stats.as_ref())?;
            for (name, value) in &val_metrics {
                writeln!(csv, "{epoch},val,{name},{value}")?;
            }
            let score = validation_score(&val_metrics, &task);
            if score > best_score {
                best_score = score;
                best_snapshot = model.snapshot();
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
                if epochs_since_best >= cfg.lr_patience {
                    adam.hyper.lr = (adam.hyper.lr * 0.5).max(cfg.lr_floor);
                    epochs_since_best = 0;
                }
            }
        } else {
            best_snapshot = model.snapshot();
        }
    }

    model.restore(&best_snapshot);
    let test_metrics = evaluate_on(&model, &test_set, stats.as_ref())?;
    for (name, value) in &test_metrics {
        writeln!(csv, "{},test,{name},{value}", cfg.epochs.saturating_sub(1))?;
    }

    let report = MetricsReport {
        task: cfg.task.clone(),
        model: cfg.model.clone(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        epochs_run: cfg.epochs,
        train_loss: train_losses,
        test_metrics,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };

    let checkpoint = cfg.out_dir.join("model.ckpt");
    let mut meta = BTreeMap::new();
    meta.insert("task".into(), cfg.task.clone());
    meta.insert("cycle_k".into(), cfg.k.to_string());
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("config_hash".into(), report.config_hash.clone());
    model.save(&checkpoint, &meta, stats.as_ref())?;

    let report_json = cfg.out_dir.join("report.json");
    std::fs::write(&report_json, serde_json::to_string_pretty(&report).map_err(io_err)?)?;

    Ok(TrainOutcome {
        report,
        checkpoint,
        metrics_csv,
        report_json,
    })
}

/// Inference-only evaluation of a checkpoint on a dataset (possibly of a
/// different graph size; the models are size-agnostic).
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset_path: &Path,
) -> Result<MetricsReport, HarnessError> {
    let started = Instant::now();
    let ckpt = crate::tensor::load_tensors(checkpoint)?;
    let (model, stats) = Model::load(&ckpt)?;
    let dataset = read_dataset(dataset_path)?;
    if dataset.records.is_empty() {
        return Err(HarnessError::Config("dataset is empty".into()));
    }
    let (expect_in, expect_edge) =
        ModelSpec::input_widths(model.spec.kind, &dataset.records[0].graph);
    if expect_in != model.spec.in_channels || expect_edge != model.spec.edge_channels {
        return Err(HarnessError::Checkpoint(format!(
            "checkpoint expects input widths ({}, {}), dataset provides ({expect_in}, {expect_edge})",
            model.spec.in_channels, model.spec.edge_channels
        )));
    }
    let test_metrics = evaluate_on(&model, &dataset, stats.as_ref())?;
    Ok(MetricsReport {
        task: ckpt.meta.get("task").cloned().unwrap_or_default(),
        model: model.spec.kind.name().into(),
        seed: ckpt
            .meta
            .get("seed")
            .and_then(|s| s.parse().ok())
            .unwrap_or_default(),
        config_hash: ckpt.meta.get("config_hash").cloned().unwrap_or_default(),
        epochs_run: 0,
        train_loss: Vec::new(),
        test_metrics,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Rescales gradients so their global l2 norm is at most `max_norm`
/// (no-op when `max_norm` is 0). The quadratic context layers produce
/// occasional huge mini-batch gradients that would otherwise poison the
/// Adam moments for many steps.
fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

const SPLIT_SALT: u64 = 0x51ee_7000_dead_beef;
const EPOCH_SALT: u64 = 0xe60c_4a11_0000_0001;

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

fn subset(dataset: &Dataset, indices: &[usize]) -> Dataset {
    Dataset {
        task: dataset.task.clone(),
        records: indices.iter().map(|&i| dataset.records[i].clone()).collect(),
        seed: dataset.seed,
        config: dataset.config.clone(),
    }
}

fn io_err(e: serde_json::Error) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e))
}
