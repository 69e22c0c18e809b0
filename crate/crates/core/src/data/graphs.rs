use super::Split;
use crate::error::{Error, Result};
use crate::graph::{Graph, Neighborhoods};
use crate::layers::Task;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One graph with node features and labels.
///
/// `labels` is `[n×C]` of 0/1 for multilabel tasks and `[n×1]` holding the
/// class index for multiclass tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub split: Split,
    pub graph: Graph,
    pub features: Tensor,
    pub labels: Tensor,
}

impl GraphSample {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Class index per node (multiclass labels).
    pub fn class_labels(&self) -> Vec<usize> {
        self.labels.data().iter().map(|&v| v as usize).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub feature_dim: usize,
    /// Label count (multilabel) or class count (multiclass).
    pub label_dim: usize,
    pub task: Task,
    pub graphs: Vec<GraphSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    feature_dim: usize,
    label_dim: usize,
    task: Task,
    graphs: Vec<GraphRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRepr {
    split: Split,
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f32>>,
    labels: Vec<Vec<f32>>,
}

impl GraphDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &GraphSample> {
        self.graphs.iter().filter(move |g| g.split == split)
    }

    /// Checks widths, label values and finiteness of every graph.
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.label_dim == 0 {
            return Err(Error::validation(
                "feature_dim and label_dim must be positive",
            ));
        }
        let label_width = match self.task {
            Task::Multilabel => self.label_dim,
            Task::Multiclass => 1,
        };
        for (gi, g) in self.graphs.iter().enumerate() {
            let n = g.num_nodes();
            if g.features.shape() != [n, self.feature_dim] {
                return Err(Error::validation(format!(
                    "graphs[{gi}].features has shape {:?}, expected [{n}, {}]",
                    g.features.shape(),
                    self.feature_dim
                )));
            }
            if g.labels.shape() != [n, label_width] {
                return Err(Error::validation(format!(
                    "graphs[{gi}].labels has shape {:?}, expected [{n}, {label_width}]",
                    g.labels.shape()
                )));
            }
            if let Some(k) = g.features.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "graphs[{gi}].features[{}][{}] is not finite",
                    k / self.feature_dim,
                    k % self.feature_dim
                )));
            }
            for (k, &v) in g.labels.data().iter().enumerate() {
                let ok = match self.task {
                    Task::Multilabel => v == 0.0 || v == 1.0,
                    Task::Multiclass => {
                        v >= 0.0 && v.fract() == 0.0 && (v as usize) < self.label_dim
                    }
                };
                if !ok {
                    return Err(Error::validation(format!(
                        "graphs[{gi}].labels[{}][{}] = {v} is not a valid {} label",
                        k / label_width,
                        k % label_width,
                        match self.task {
                            Task::Multilabel => "binary",
                            Task::Multiclass => "class",
                        }
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fails unless every split named in `splits` has at least one graph.
    pub fn require_splits(&self, splits: &[Split]) -> Result<()> {
        for &s in splits {
            if self.split(s).next().is_none() {
                return Err(Error::validation(format!("split {s} has no graphs")));
            }
        }
        Ok(())
    }

    /// Z-scores every feature with mean and deviation taken over the train split.
    /// Constant features are only centered.
    pub fn standardize(&mut self) -> Result<()> {
        self.require_splits(&[Split::Train])?;
        let f = self.feature_dim;
        let mut sum = vec![0f64; f];
        let mut sq = vec![0f64; f];
        let mut count = 0usize;
        for g in self.split(Split::Train) {
            for i in 0..g.num_nodes() {
                for (c, &v) in g.features.row(i).iter().enumerate() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
                count += 1;
            }
        }
        let count = count.max(1) as f64;
        let stats: Vec<(f64, f64)> = (0..f)
            .map(|c| {
                let mean = sum[c] / count;
                let var = (sq[c] / count - mean * mean).max(0.0);
                let std = var.sqrt();
                (mean, if std > 0.0 { std } else { 1.0 })
            })
            .collect();
        for g in &mut self.graphs {
            for (k, v) in g.features.data_mut().iter_mut().enumerate() {
                let (mean, std) = stats[k % f];
                *v = ((*v as f64 - mean) / std) as f32;
            }
        }
        Ok(())
    }

    fn to_repr(&self) -> FileRepr {
        let rows = |t: &Tensor| (0..t.rows()).map(|i| t.row(i).to_vec()).collect();
        FileRepr {
            feature_dim: self.feature_dim,
            label_dim: self.label_dim,
            task: self.task,
            graphs: self
                .graphs
                .iter()
                .map(|g| GraphRepr {
                    split: g.split,
                    num_nodes: g.num_nodes(),
                    edges: g
                        .graph
                        .edges()
                        .filter(|&(s, r)| s <= r)
                        .map(|(s, r)| [s, r])
                        .collect(),
                    features: rows(&g.features),
                    labels: rows(&g.labels),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_repr()).expect("dataset serializes")
    }
}

fn rows_to_tensor(rows: &[Vec<f32>], width: usize, what: &str, gi: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::validation(format!(
                "graphs[{gi}].{what}[{i}] has width {}, but the declared width is {width}",
                r.len()
            )));
        }
        if let Some(c) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "graphs[{gi}].{what}[{i}][{c}] is not finite"
            )));
        }
        data.extend_from_slice(r);
    }
    Tensor::new(vec![rows.len(), width], data)
}

/// Parses and validates a graph dataset from JSON text.
pub fn parse_graph_dataset(text: &str) -> Result<GraphDataset> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let repr: FileRepr = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        location: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let label_width = match repr.task {
        Task::Multilabel => repr.label_dim,
        Task::Multiclass => 1,
    };
    let mut graphs = Vec::with_capacity(repr.graphs.len());
    for (gi, g) in repr.graphs.iter().enumerate() {
        let n = g.num_nodes;
        for (k, &[s, r]) in g.edges.iter().enumerate() {
            if s >= n || r >= n {
                return Err(Error::validation(format!(
                    "graphs[{gi}].edges[{k}] = [{s}, {r}] out of range for {n} nodes"
                )));
            }
        }
        for (what, len) in [("features", g.features.len()), ("labels", g.labels.len())] {
            if len != n {
                return Err(Error::validation(format!(
                    "graphs[{gi}].{what} has {len} rows for {n} nodes"
                )));
            }
        }
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|&[s, r]| (s, r)).collect();
        graphs.push(GraphSample {
            split: g.split,
            graph: Graph::build(n, &edges, true)?,
            features: rows_to_tensor(&g.features, repr.feature_dim, "features", gi)?,
            labels: rows_to_tensor(&g.labels, label_width, "labels", gi)?,
        });
    }
    let ds = GraphDataset {
        feature_dim: repr.feature_dim,
        label_dim: repr.label_dim,
        task: repr.task,
        graphs,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn load_graph_dataset(path: impl AsRef<Path>) -> Result<GraphDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph_dataset(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes the JSON form; undirected edges are written once.
pub fn save_graph_dataset(ds: &GraphDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ds.to_json()).map_err(|e| Error::io(path, e))
}

/// Planted-partition multilabel corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthGraphConfig {
    pub seed: u64,
    pub n_graphs: usize,
    pub nodes_per_graph: usize,
    pub feature_dim: usize,
    pub label_dim: usize,
    pub communities: usize,
}

impl Default for SynthGraphConfig {
    fn default() -> Self {
        SynthGraphConfig {
            seed: 0,
            n_graphs: 20,
            nodes_per_graph: 200,
            feature_dim: 16,
            label_dim: 8,
            communities: 4,
        }
    }
}

const P_INTRA: f64 = 0.3;
const P_INTER: f64 = 0.02;
const FEATURE_NOISE: f32 = 0.5;
const P_LABEL_ON: f64 = 0.95;
const P_LABEL_OFF: f64 = 0.05;

/// Random graphs whose communities determine both features and labels.
///
/// Each community has a Gaussian prototype feature vector and a random
/// on/off pattern over the labels; a node draws each label with probability
/// 0.95 when its community's pattern is on and 0.05 otherwise. The last
/// tenth of the graphs (at least one) is the test split and the tenth
/// before it the validation split; with fewer than three graphs all are
/// training graphs.
pub fn synth_multilabel_graphs(cfg: &SynthGraphConfig) -> Result<GraphDataset> {
    let SynthGraphConfig {
        seed,
        n_graphs,
        nodes_per_graph: n,
        feature_dim: f,
        label_dim: c,
        communities,
    } = *cfg;
    if n_graphs == 0 || n == 0 || f == 0 || c == 0 || communities == 0 {
        return Err(Error::validation("synthetic graph sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f32>> = (0..communities)
        .map(|_| (0..f).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let patterns: Vec<Vec<bool>> = (0..communities)
        .map(|_| (0..c).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let held_out = if n_graphs >= 3 {
        (n_graphs / 10).max(1)
    } else {
        0
    };

    let mut graphs = Vec::with_capacity(n_graphs);
    for gi in 0..n_graphs {
        let community: Vec<usize> = (0..n).map(|_| rng.random_range(0..communities)).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if community[i] == community[j] {
                    P_INTRA
                } else {
                    P_INTER
                };
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        let mut features = Vec::with_capacity(n * f);
        let mut labels = Vec::with_capacity(n * c);
        for &k in &community {
            for &p in &prototypes[k] {
                let noise: f32 = rng.sample(StandardNormal);
                features.push(p + FEATURE_NOISE * noise);
            }
            for &on in &patterns[k] {
                let p = if on { P_LABEL_ON } else { P_LABEL_OFF };
                labels.push(if rng.random_bool(p) { 1.0 } else { 0.0 });
            }
        }
        let split = if gi + held_out >= n_graphs {
            Split::Test
        } else if gi + 2 * held_out >= n_graphs {
            Split::Val
        } else {
            Split::Train
        };
        graphs.push(GraphSample {
            split,
            graph: Graph::build(n, &edges, true)?,
            features: Tensor::matrix(n, f, features)?,
            labels: Tensor::matrix(n, c, labels)?,
        });
    }
    Ok(GraphDataset {
        feature_dim: f,
        label_dim: c,
        task: Task::Multilabel,
        graphs,
    })
}
