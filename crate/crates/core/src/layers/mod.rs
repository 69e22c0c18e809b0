//! GAT and DGCNN models assembled from [`GatLayer`] and [`EdgeConvLayer`].

mod edgeconv;
mod gat;
mod params;

pub use edgeconv::EdgeConvLayer;
pub use gat::{GatLayer, HeadMerge, Skip};
pub use params::{initialize as initialize_params, Bound, Init, ParamSet, ParamShape};

use crate::autodiff::{Index, Var};
use crate::error::{Error, Result};
use crate::graph::{knn_graph_blocks, Graph};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Skip-connection convention for GAT layers after the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipRule {
    None,
    /// Identity when the input width equals the merged head width, else a projection.
    Projected,
    /// Projection whenever the input width differs from the per-head width
    /// (the rule of the reference GAT implementation used for the PPI models).
    Legacy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatSpec {
    pub in_dim: usize,
    /// Attention heads per layer.
    pub heads: Vec<usize>,
    /// Per-head output width per layer; the last entry is the label count.
    pub hidden: Vec<usize>,
    pub skip: SkipRule,
    pub negative_slope: f32,
    pub dropout: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgcnnSpec {
    pub in_dim: usize,
    /// EdgeConv widths followed by the pointwise embedding width.
    pub widths: Vec<usize>,
    /// Hidden widths of the classifier MLP.
    pub mlp: Vec<usize>,
    pub classes: usize,
    pub k: usize,
    pub negative_slope: f32,
    pub dropout: f32,
}

/// Architecture of a teacher or student model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Gat(GatSpec),
    Dgcnn(DgcnnSpec),
}

/// Prediction task, which selects the loss and metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multilabel,
    Multiclass,
}

impl GatSpec {
    /// PPI teacher: heads 4,4,6; widths 256,256,121.
    pub fn ppi_teacher() -> Self {
        GatSpec {
            in_dim: 50,
            heads: vec![4, 4, 6],
            hidden: vec![256, 256, 121],
            skip: SkipRule::Legacy,
            negative_slope: 0.2,
            dropout: 0.0,
        }
    }

    /// PPI student: five layers of two heads, widths 68,68,68,68,121.
    pub fn ppi_student() -> Self {
        GatSpec {
            in_dim: 50,
            heads: vec![2; 5],
            hidden: vec![68, 68, 68, 68, 121],
            skip: SkipRule::Legacy,
            negative_slope: 0.2,
            dropout: 0.0,
        }
    }

    /// Same depth and heads as `self`, hidden widths divided by `divisor`,
    /// re-targeted to `in_dim` inputs and `labels` outputs.
    pub fn scaled(&self, in_dim: usize, labels: usize, divisor: usize) -> Self {
        let mut hidden: Vec<usize> = self
            .hidden
            .iter()
            .map(|&w| (w / divisor.max(1)).max(1))
            .collect();
        *hidden.last_mut().unwrap() = labels;
        GatSpec {
            in_dim,
            hidden,
            ..self.clone()
        }
    }
}

impl DgcnnSpec {
    /// ModelNet40 teacher: k=20, edge widths 64,64,128,256, embedding 1024.
    pub fn modelnet_teacher(classes: usize) -> Self {
        DgcnnSpec {
            in_dim: 3,
            widths: vec![64, 64, 128, 256, 1024],
            mlp: vec![512, 256],
            classes,
            k: 20,
            negative_slope: 0.2,
            dropout: 0.0,
        }
    }

    /// ModelNet40 student: k=10, edge widths 32,32,64, embedding 128.
    pub fn modelnet_student(classes: usize) -> Self {
        DgcnnSpec {
            in_dim: 3,
            widths: vec![32, 32, 64, 128],
            mlp: vec![256],
            classes,
            k: 10,
            negative_slope: 0.2,
            dropout: 0.0,
        }
    }

    /// Widths divided by `divisor`, keeping depth and `k`.
    pub fn scaled(&self, divisor: usize) -> Self {
        let d = divisor.max(1);
        DgcnnSpec {
            widths: self.widths.iter().map(|&w| (w / d).max(1)).collect(),
            mlp: self.mlp.iter().map(|&w| (w / d).max(1)).collect(),
            ..self.clone()
        }
    }
}

impl ModelSpec {
    pub fn in_dim(&self) -> usize {
        match self {
            ModelSpec::Gat(s) => s.in_dim,
            ModelSpec::Dgcnn(s) => s.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ModelSpec::Gat(s) => *s.hidden.last().unwrap_or(&0),
            ModelSpec::Dgcnn(s) => s.classes,
        }
    }

    pub fn dropout(&self) -> f32 {
        match self {
            ModelSpec::Gat(s) => s.dropout,
            ModelSpec::Dgcnn(s) => s.dropout,
        }
    }

    /// Number of graph-convolution layers (the ones that expose features).
    pub fn graph_layers(&self) -> usize {
        match self {
            ModelSpec::Gat(s) => s.hidden.len(),
            ModelSpec::Dgcnn(s) => s.widths.len().saturating_sub(1),
        }
    }

    /// Output width of every graph-convolution layer.
    pub fn layer_widths(&self) -> Vec<usize> {
        match self {
            ModelSpec::Gat(s) => {
                let last = s.hidden.len() - 1;
                (0..=last)
                    .map(|l| {
                        if l == last {
                            s.hidden[l]
                        } else {
                            s.heads[l] * s.hidden[l]
                        }
                    })
                    .collect()
            }
            ModelSpec::Dgcnn(s) => s.widths[..s.widths.len() - 1].to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        match self {
            ModelSpec::Gat(s) => {
                if s.hidden.is_empty() || s.heads.len() != s.hidden.len() {
                    return bad(format!(
                        "gat spec needs matching non-empty heads/hidden, got {} and {}",
                        s.heads.len(),
                        s.hidden.len()
                    ));
                }
                if s.in_dim == 0 || s.heads.contains(&0) || s.hidden.contains(&0) {
                    return bad("gat widths and heads must be positive".into());
                }
            }
            ModelSpec::Dgcnn(s) => {
                if s.widths.len() < 2 {
                    return bad(
                        "dgcnn spec needs at least one EdgeConv width and an embedding width"
                            .into(),
                    );
                }
                if s.in_dim == 0
                    || s.classes == 0
                    || s.k == 0
                    || s.widths.contains(&0)
                    || s.mlp.contains(&0)
                {
                    return bad("dgcnn widths, classes and k must be positive".into());
                }
            }
        }
        let p = self.dropout();
        if !(0.0..1.0).contains(&p) {
            return bad(format!("dropout {p} outside [0, 1)"));
        }
        Ok(())
    }
}

/// Input of one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum ModelInput<'a> {
    /// Node features with a static graph (self-loops are added for aggregation).
    Graph {
        features: &'a Tensor,
        graph: &'a Graph,
    },
    /// A batch of point clouds stacked row-wise; `cloud_sizes` gives the row blocks.
    Points {
        points: &'a Tensor,
        cloud_sizes: &'a [usize],
    },
}

impl ModelInput<'_> {
    pub fn num_nodes(&self) -> usize {
        match self {
            ModelInput::Graph { features, .. } => features.rows(),
            ModelInput::Points { points, .. } => points.rows(),
        }
    }
}

/// Everything a distiller may need from a forward pass.
pub struct ForwardOutput<'t> {
    pub logits: Var<'t>,
    /// Output of every graph-convolution layer, in order.
    pub features: Vec<Var<'t>>,
    /// Graph each graph-convolution layer aggregated over.
    pub graphs: Vec<Rc<Graph>>,
    /// Per-layer `[E×heads]` attention (GAT only).
    pub attention: Vec<Tensor>,
}

enum Layers {
    Gat(Vec<GatLayer>),
    Dgcnn {
        edge: Vec<EdgeConvLayer>,
        embed_in: usize,
        embed_out: usize,
        mlp: Vec<(usize, usize)>,
        head: (usize, usize),
    },
}

/// A model architecture, ready to initialize parameters and run forward passes.
pub struct Model {
    spec: ModelSpec,
    layers: Layers,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layers = match &spec {
            ModelSpec::Gat(s) => {
                let depth = s.hidden.len();
                let mut in_dim = s.in_dim;
                let mut layers = Vec::with_capacity(depth);
                for l in 0..depth {
                    let (heads, head_dim) = (s.heads[l], s.hidden[l]);
                    let wide = heads * head_dim;
                    let skip = match s.skip {
                        _ if l == 0 => Skip::None,
                        SkipRule::None => Skip::None,
                        SkipRule::Projected if in_dim == wide => Skip::Identity,
                        SkipRule::Projected => Skip::Projection,
                        SkipRule::Legacy if in_dim == head_dim && in_dim == wide => Skip::Identity,
                        SkipRule::Legacy => Skip::Projection,
                    };
                    let layer = GatLayer {
                        name: format!("gat{l}"),
                        in_dim,
                        heads,
                        head_dim,
                        merge: if l + 1 == depth {
                            HeadMerge::Average
                        } else {
                            HeadMerge::Concat
                        },
                        skip,
                        negative_slope: s.negative_slope,
                    };
                    in_dim = layer.out_dim();
                    layers.push(layer);
                }
                Layers::Gat(layers)
            }
            ModelSpec::Dgcnn(s) => {
                let (edge_widths, embed) = s.widths.split_at(s.widths.len() - 1);
                let mut in_dim = s.in_dim;
                let edge = edge_widths
                    .iter()
                    .enumerate()
                    .map(|(l, &w)| {
                        let layer = EdgeConvLayer {
                            name: format!("edge{l}"),
                            in_dim,
                            out_dim: w,
                            negative_slope: s.negative_slope,
                        };
                        in_dim = w;
                        layer
                    })
                    .collect();
                let embed_in: usize = edge_widths.iter().sum();
                let mut mlp = Vec::new();
                let mut d = 2 * embed[0];
                for &w in &s.mlp {
                    mlp.push((d, w));
                    d = w;
                }
                Layers::Dgcnn {
                    edge,
                    embed_in,
                    embed_out: embed[0],
                    mlp,
                    head: (d, s.classes),
                }
            }
        };
        Ok(Model { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let linear = |name: &str, fan_in: usize, fan_out: usize| {
            vec![
                ParamShape {
                    name: format!("{name}.weight"),
                    shape: vec![fan_in, fan_out],
                    init: Init::Glorot { fan_in, fan_out },
                },
                ParamShape {
                    name: format!("{name}.bias"),
                    shape: vec![fan_out],
                    init: Init::Zeros,
                },
            ]
        };
        match &self.layers {
            Layers::Gat(layers) => layers.iter().flat_map(GatLayer::param_shapes).collect(),
            Layers::Dgcnn {
                edge,
                embed_in,
                embed_out,
                mlp,
                head,
            } => {
                let mut shapes: Vec<ParamShape> =
                    edge.iter().flat_map(EdgeConvLayer::param_shapes).collect();
                shapes.extend(linear("embed", *embed_in, *embed_out));
                for (i, &(a, b)) in mlp.iter().enumerate() {
                    shapes.extend(linear(&format!("mlp{i}"), a, b));
                }
                shapes.extend(linear("head", head.0, head.1));
                shapes
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params::initialize(&self.param_shapes(), &mut rng)
    }

    /// Checks that `params` has exactly the names and shapes this model expects.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Integrity(format!(
                "model expects {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (want, (name, t)) in shapes.iter().zip(params.entries()) {
            if &want.name != name || want.shape.as_slice() != t.shape() {
                return Err(Error::Integrity(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    want.name,
                    want.shape
                )));
            }
        }
        Ok(())
    }

    /// Runs the model. `dropout_rng` enables dropout (training mode); pass
    /// `None` for deterministic inference.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        input: &ModelInput<'_>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput<'t>> {
        let tape = params
            .vars()
            .first()
            .map(|v| v.tape())
            .ok_or_else(|| Error::Integrity("empty parameter set".into()))?;
        let p = self.spec.dropout();
        let mut dropout = |x: Var<'t>| -> Result<Var<'t>> {
            match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<f32> = (0..x.value().numel())
                        .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
                        .collect();
                    x.mul(&tape.constant(Tensor::new(x.shape(), mask)?))
                }
                _ => Ok(x),
            }
        };

        match (&self.layers, input) {
            (Layers::Gat(layers), ModelInput::Graph { features, graph }) => {
                if features.cols() != self.spec.in_dim() {
                    return Err(Error::Shape {
                        op: "model_forward",
                        lhs: features.shape().to_vec(),
                        rhs: vec![features.rows(), self.spec.in_dim()],
                    });
                }
                let g = Rc::new(graph.add_self_loops());
                let mut h = tape.constant((*features).clone());
                let mut out = ForwardOutput {
                    logits: h,
                    features: Vec::new(),
                    graphs: Vec::new(),
                    attention: Vec::new(),
                };
                for (l, layer) in layers.iter().enumerate() {
                    h = dropout(h)?;
                    let (z, att) = layer.forward(params, h, &g)?;
                    h = if l + 1 < layers.len() { z.elu() } else { z };
                    out.features.push(h);
                    out.graphs.push(g.clone());
                    out.attention.push(att);
                }
                out.logits = h;
                Ok(out)
            }
            (
                Layers::Dgcnn { edge, mlp, .. },
                ModelInput::Points {
                    points,
                    cloud_sizes,
                },
            ) => {
                let ModelSpec::Dgcnn(s) = &self.spec else {
                    unreachable!()
                };
                if points.cols() != s.in_dim {
                    return Err(Error::Shape {
                        op: "model_forward",
                        lhs: points.shape().to_vec(),
                        rhs: vec![points.rows(), s.in_dim],
                    });
                }
                let segment: Index = Rc::from(
                    cloud_sizes
                        .iter()
                        .enumerate()
                        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
                        .collect::<Vec<_>>(),
                );
                if segment.len() != points.rows() {
                    return Err(Error::contract(format!(
                        "cloud sizes sum to {} but there are {} points",
                        segment.len(),
                        points.rows()
                    )));
                }
                let clouds = cloud_sizes.len();
                let mut h = tape.constant((*points).clone());
                let mut features = Vec::with_capacity(edge.len());
                let mut graphs = Vec::with_capacity(edge.len());
                for layer in edge {
                    let g = Rc::new(knn_graph_blocks(&h.value(), cloud_sizes, s.k)?);
                    h = layer.forward(params, h, &g)?;
                    features.push(h);
                    graphs.push(g);
                }
                let mut cat = features[0];
                for f in &features[1..] {
                    cat = cat.concat_cols(f)?;
                }
                let emb = cat
                    .matmul(&params.get("embed.weight")?)?
                    .add_row(&params.get("embed.bias")?)?
                    .leaky_relu(s.negative_slope);
                let max_pool = emb.segment_max_rows(&segment, clouds)?;
                let inv_sizes = tape.constant(Tensor::vector(
                    cloud_sizes.iter().map(|&n| 1.0 / n as f32).collect(),
                ));
                let mean_pool = emb
                    .scatter_add_rows(&segment, clouds)?
                    .row_scale(&inv_sizes)?;
                let mut z = max_pool.concat_cols(&mean_pool)?;
                for i in 0..mlp.len() {
                    z = z
                        .matmul(&params.get(&format!("mlp{i}.weight"))?)?
                        .add_row(&params.get(&format!("mlp{i}.bias"))?)?
                        .leaky_relu(s.negative_slope);
                    z = dropout(z)?;
                }
                let logits = z
                    .matmul(&params.get("head.weight")?)?
                    .add_row(&params.get("head.bias")?)?;
                Ok(ForwardOutput {
                    logits,
                    features,
                    graphs,
                    attention: Vec::new(),
                })
            }
            _ => Err(Error::contract(
                "input kind does not match model family (gat takes graphs, dgcnn takes points)",
            )),
        }
    }
}

/// Set-level readout modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

/// Coordinate-wise reduction over all rows of `[n×F]`, giving `[F]`.
pub fn global_pool<'t>(features: Var<'t>, mode: PoolMode) -> Result<Var<'t>> {
    let shape = features.shape();
    if shape.first().copied().unwrap_or(0) == 0 {
        return Err(Error::contract("global_pool over an empty node set"));
    }
    let f = features.value().cols();
    let pooled = match mode {
        PoolMode::Max => features.max_rows()?,
        PoolMode::Mean => features
            .scatter_add_rows(&Rc::from(vec![0usize; shape[0]]), 1)?
            .scale(1.0 / shape[0] as f32),
    };
    pooled.reshape(vec![f])
}
