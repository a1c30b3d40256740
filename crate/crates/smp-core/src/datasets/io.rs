//! JSON-lines persistence: one metadata line, then one graph per line.
//!
//! Graph lines follow the shared schema
//! `{"n": int, "edges": [[i,j],...], "x": [[..],..] | null,
//!   "y": [[i,j,[..]],...] | null, "label": ...}` with edges sorted, i < j.
//! Edges arriving as `[j, i]` with j > i are normalized on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dataset, GenConfig, Label, Record, TaskKind};
use crate::graph::{EdgeFeatures, Graph, MultitaskTargets};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("generation error: {0}")]
    Generation(String),
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    smp_dataset: MetaBody,
}

#[derive(Serialize, Deserialize)]
struct MetaBody {
    task: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_max: Option<usize>,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphLine {
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Option<Vec<Vec<f64>>>,
    y: Option<Vec<(usize, usize, Vec<f64>)>>,
    label: LabelJson,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LabelJson {
    Cycle(bool),
    Multitask {
        dist: Vec<f64>,
        ecc: Vec<f64>,
        lap: Vec<f64>,
        connected: bool,
        diameter: f64,
        radius: f64,
    },
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    let meta = MetaLine {
        smp_dataset: match dataset.config {
            GenConfig::Cycles { k, n, count } => MetaBody {
                task: "cycles".into(),
                seed: dataset.seed,
                k: Some(k),
                n: Some(n),
                n_min: None,
                n_max: None,
                count,
            },
            GenConfig::Multitask {
                count,
                n_min,
                n_max,
            } => MetaBody {
                task: "multitask".into(),
                seed: dataset.seed,
                k: None,
                n: None,
                n_min: Some(n_min),
                n_max: Some(n_max),
                count,
            },
        },
    };
    serde_json::to_writer(&mut out, &meta).map_err(io_err)?;
    out.write_all(b"\n")?;
    for record in &dataset.records {
        let g = &record.graph;
        let line = GraphLine {
            n: g.n(),
            edges: g.edges().to_vec(),
            x: g.node_features().map(<[Vec<f64>]>::to_vec),
            y: g.edge_features().map(|y| {
                y.iter()
                    .map(|(&(i, j), f)| (i, j, f.clone()))
                    .collect::<Vec<_>>()
            }),
            label: match &record.label {
                Label::Cycle(b) => LabelJson::Cycle(*b),
                Label::Multitask(t) => LabelJson::Multitask {
                    dist: t.dist.clone(),
                    ecc: t.ecc.clone(),
                    lap: t.lap.clone(),
                    connected: t.connected,
                    diameter: t.diameter,
                    radius: t.radius,
                },
            },
        };
        serde_json::to_writer(&mut out, &line).map_err(io_err)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn io_err(e: serde_json::Error) -> DataError {
    DataError::Io(std::io::Error::other(e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| DataError::Parse {
            line: 1,
            message: "empty dataset file".into(),
        })?;
    let first = first?;
    let meta: MetaLine = serde_json::from_str(&first).map_err(|e| DataError::Parse {
        line: 1,
        message: format!("bad metadata line: {e}"),
    })?;
    let body = meta.smp_dataset;
    let (task, config) = match body.task.as_str() {
        "cycles" => {
            let k = body.k.unwrap_or(4);
            (
                TaskKind::Cycles { k },
                GenConfig::Cycles {
                    k,
                    n: body.n.unwrap_or(0),
                    count: body.count,
                },
            )
        }
        "multitask" => (
            TaskKind::Multitask,
            GenConfig::Multitask {
                count: body.count,
                n_min: body.n_min.unwrap_or(0),
                n_max: body.n_max.unwrap_or(0),
            },
        ),
        other => {
            return Err(DataError::Parse {
                line: 1,
                message: format!("unknown task `{other}`"),
            })
        }
    };

    let mut records = Vec::new();
    for (zero_idx, line) in lines {
        let line_no = zero_idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: GraphLine = serde_json::from_str(&text).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut g = Graph::new(parsed.n, &parsed.edges).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(x) = parsed.x {
            g = g.with_node_features(x).map_err(|e| DataError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        if let Some(y) = parsed.y {
            let features: EdgeFeatures = y
                .into_iter()
                .map(|(i, j, f)| ((i.min(j), i.max(j)), f))
                .collect();
            g = g.with_edge_features(features).map_err(|e| DataError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        let label = match parsed.label {
            LabelJson::Cycle(b) => Label::Cycle(b),
            LabelJson::Multitask {
                dist,
                ecc,
                lap,
                connected,
                diameter,
                radius,
            } => Label::Multitask(MultitaskTargets {
                dist,
                ecc,
                lap,
                connected,
                diameter,
                radius,
            }),
        };
        records.push(Record { graph: g, label });
    }
    Ok(Dataset {
        task,
        records,
        seed: body.seed,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_cycle_dataset, generate_multitask_dataset};

    #[test]
    fn roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        for dataset in [
            generate_cycle_dataset(4, 12, 8, 1).unwrap(),
            generate_multitask_dataset(8, 4, 9, 2).unwrap(),
        ] {
            let path = dir.path().join("data.jsonl");
            write_dataset(&dataset, &path).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(back, dataset);
        }
    }

    #[test]
    fn serialization_is_byte_identical_for_equal_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_dataset(&generate_cycle_dataset(4, 12, 10, 7).unwrap(), &p1).unwrap();
        write_dataset(&generate_cycle_dataset(4, 12, 10, 7).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn missing_edges_key_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"smp_dataset\":{\"task\":\"cycles\",\"seed\":0,\"k\":4,\"n\":6,\"count\":1}}\n\
             {\"n\":3,\"x\":null,\"y\":null,\"label\":true}\n",
        )
        .unwrap();
        match read_dataset(&path).unwrap_err() {
            DataError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("edges"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn reversed_edges_are_normalized_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rev.jsonl");
        std::fs::write(
            &path,
            "{\"smp_dataset\":{\"task\":\"cycles\",\"seed\":0,\"k\":4,\"n\":3,\"count\":1}}\n\
             {\"n\":3,\"edges\":[[2,0],[1,0]],\"x\":null,\"y\":null,\"label\":false}\n",
        )
        .unwrap();
        let d = read_dataset(&path).unwrap();
        assert_eq!(d.records[0].graph.edges(), &[(0, 1), (0, 2)]);
    }
}
