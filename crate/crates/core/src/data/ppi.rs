use super::npy::{parse_npy, NpyArray};
use super::{GraphDataset, GraphSample, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::Task;
use crate::tensor::Tensor;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Deserialize)]
struct NodeLink {
    nodes: Vec<NodeRecord>,
    links: Vec<LinkRecord>,
}

#[derive(Deserialize)]
struct NodeRecord {
    id: usize,
}

#[derive(Deserialize)]
struct LinkRecord {
    source: usize,
    target: usize,
}

fn read_npy(path: &Path) -> Result<NpyArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_npy(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn matrix(a: &NpyArray, rows: usize, path: &Path) -> Result<(usize, Vec<f32>)> {
    match a.shape.as_slice() {
        [r, c] if *r == rows => Ok((*c, a.data.iter().map(|&v| v as f32).collect())),
        s => Err(Error::validation(format!(
            "{} has shape {s:?}, expected {rows} rows",
            path.display()
        ))),
    }
}

/// Converts the public PPI release layout into a [`GraphDataset`].
///
/// `dir` must hold, for each prefix `train`, `valid` and `test`:
/// `<prefix>_graph.json` (node-link JSON over split-global node ids),
/// `<prefix>_feats.npy` (`[N×F]`), `<prefix>_labels.npy` (`[N×C]`, 0/1) and
/// `<prefix>_graph_id.npy` (`[N]`, graph membership). Each distinct graph id
/// becomes one graph with nodes in ascending id order; links are treated as
/// undirected.
pub fn convert_ppi_dir(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let mut graphs = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (prefix, split) in [
        ("train", Split::Train),
        ("valid", Split::Val),
        ("test", Split::Test),
    ] {
        let graph_path = dir.join(format!("{prefix}_graph.json"));
        let text = std::fs::read_to_string(&graph_path).map_err(|e| Error::io(&graph_path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let nl: NodeLink = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            location: format!("{}: {}", graph_path.display(), e.path()),
            message: e.inner().to_string(),
        })?;

        let ids_path = dir.join(format!("{prefix}_graph_id.npy"));
        let ids = read_npy(&ids_path)?;
        let n = ids.data.len();
        if ids.shape.len() != 1 {
            return Err(Error::validation(format!(
                "{} must be one-dimensional",
                ids_path.display()
            )));
        }
        let feats_path = dir.join(format!("{prefix}_feats.npy"));
        let (f, feats) = matrix(&read_npy(&feats_path)?, n, &feats_path)?;
        let labels_path = dir.join(format!("{prefix}_labels.npy"));
        let (c, labels) = matrix(&read_npy(&labels_path)?, n, &labels_path)?;
        match dims {
            None => dims = Some((f, c)),
            Some(d) if d != (f, c) => {
                return Err(Error::validation(format!(
                    "{prefix} split has {f} features and {c} labels, earlier splits {} and {}",
                    d.0, d.1
                )))
            }
            _ => {}
        }
        if let Some(node) = nl.nodes.iter().find(|r| r.id >= n) {
            return Err(Error::validation(format!(
                "{}: node id {} out of range for {n} nodes",
                graph_path.display(),
                node.id
            )));
        }

        // graph id -> split-global node ids in ascending order
        let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (v, &g) in ids.data.iter().enumerate() {
            members.entry(g as i64).or_default().push(v);
        }
        let mut local = vec![(0usize, 0usize); n];
        for (gi, nodes) in members.values().enumerate() {
            for (li, &v) in nodes.iter().enumerate() {
                local[v] = (gi, li);
            }
        }
        let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); members.len()];
        for (k, l) in nl.links.iter().enumerate() {
            if l.source >= n || l.target >= n {
                return Err(Error::validation(format!(
                    "{}: links[{k}] = ({}, {}) out of range for {n} nodes",
                    graph_path.display(),
                    l.source,
                    l.target
                )));
            }
            let (gs, s) = local[l.source];
            let (gt, t) = local[l.target];
            if gs != gt {
                return Err(Error::validation(format!(
                    "{}: links[{k}] joins nodes of different graphs",
                    graph_path.display()
                )));
            }
            edges[gs].push((s, t));
        }
        for (nodes, edges) in members.values().zip(edges) {
            let pick = |src: &[f32], w: usize| -> Vec<f32> {
                nodes
                    .iter()
                    .flat_map(|&v| src[v * w..(v + 1) * w].iter().copied())
                    .collect()
            };
            graphs.push(GraphSample {
                split,
                graph: Graph::build(nodes.len(), &edges, true)?,
                features: Tensor::matrix(nodes.len(), f, pick(&feats, f))?,
                labels: Tensor::matrix(nodes.len(), c, pick(&labels, c))?,
            });
        }
    }
    let (feature_dim, label_dim) = dims.unwrap_or((0, 0));
    let ds = GraphDataset {
        feature_dim,
        label_dim,
        task: Task::Multilabel,
        graphs,
    };
    ds.validate()?;
    Ok(ds)
}
