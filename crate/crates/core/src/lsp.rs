//! Local structure preserving distillation.
//!
//! For every node `i` with neighbors `j` (in-edges `(j, i)`, self-loops
//! excluded) the local structure is the distribution
//! `LS_ij = exp(SIM(z_i, z_j)) / Σ_j exp(SIM(z_i, z_j))`.
//! The LSP loss is the mean over nodes of `KL(LS_i^student ‖ LS_i^teacher)`.
//!
//! Note that with the plain squared-distance similarity ([`Kernel::L2Norm`])
//! farther neighbors receive *more* probability mass; the RBF kernel
//! reverses that ordering.

use crate::autodiff::{Index, Tape, Var, LOG_EPS};
use crate::error::{Error, Result};
use crate::graph::{edge_union, Graph, Neighborhoods};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

/// Similarity function fed into the local-structure softmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `‖z_i − z_j‖²`
    L2Norm,
    /// `(z_iᵀz_j + offset)^degree`
    Poly { degree: u32, offset: f32 },
    /// `exp(−‖z_i − z_j‖² / 2σ²)`
    Rbf { sigma: f32 },
    /// `z_iᵀz_j`
    Linear,
}

impl Kernel {
    pub const POLY: Kernel = Kernel::Poly {
        degree: 2,
        offset: 0.0,
    };
    pub const RBF: Kernel = Kernel::Rbf { sigma: 1.0 };
    pub const ALL: [Kernel; 4] = [Kernel::L2Norm, Kernel::POLY, Kernel::RBF, Kernel::Linear];

    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Rbf { sigma } if !(sigma > 0.0) => Err(Error::validation(format!(
                "rbf sigma must be positive, got {sigma}"
            ))),
            Kernel::Poly { degree: 0, .. } => Err(Error::validation("poly degree must be >= 1")),
            _ => Ok(()),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Kernel::L2Norm => "l2",
            Kernel::Poly { .. } => "poly",
            Kernel::Rbf { .. } => "rbf",
            Kernel::Linear => "linear",
        }
    }

    /// Per-edge similarities between rows `recv[e]` and `send[e]` of `z`.
    pub fn edge_similarity<'t>(&self, z: Var<'t>, recv: &Index, send: &Index) -> Result<Var<'t>> {
        let zi = z.gather_rows(recv)?;
        let zj = z.gather_rows(send)?;
        let sq_dist = || -> Result<Var<'t>> {
            let d = zi.sub(&zj)?;
            d.row_dot(&d)
        };
        Ok(match *self {
            Kernel::L2Norm => sq_dist()?,
            Kernel::Linear => zi.row_dot(&zj)?,
            Kernel::Poly { degree, offset } => {
                zi.row_dot(&zj)?.add_scalar(offset).powi(degree as i32)
            }
            Kernel::Rbf { sigma } => sq_dist()?.scale(-1.0 / (2.0 * sigma * sigma)).exp(),
        })
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "l2norm" => Ok(Kernel::L2Norm),
            "poly" => Ok(Kernel::POLY),
            "rbf" => Ok(Kernel::RBF),
            "linear" => Ok(Kernel::Linear),
            other => Err(Error::validation(format!(
                "unknown kernel {other:?} (expected l2, poly, rbf or linear)"
            ))),
        }
    }
}

/// Evaluates a kernel on two feature vectors.
pub fn kernel_eval(zi: &[f32], zj: &[f32], kernel: Kernel) -> Result<f32> {
    if zi.len() != zj.len() {
        return Err(Error::Shape {
            op: "kernel_eval",
            lhs: vec![zi.len()],
            rhs: vec![zj.len()],
        });
    }
    let dot = || {
        zi.iter()
            .zip(zj)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum::<f64>()
    };
    let sq = || {
        zi.iter()
            .zip(zj)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
    };
    let v = match kernel {
        Kernel::L2Norm => sq(),
        Kernel::Linear => dot(),
        Kernel::Poly { degree, offset } => (dot() + offset as f64).powi(degree as i32),
        Kernel::Rbf { sigma } => (-sq() / (2.0 * (sigma as f64).powi(2))).exp(),
    };
    Ok(v as f32)
}

/// Whether teacher and student share one graph or are compared over the union.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    Static,
    Union,
}

impl FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(GraphMode::Static),
            "union" => Ok(GraphMode::Union),
            other => Err(Error::validation(format!(
                "unknown lsp mode {other:?} (expected static or union)"
            ))),
        }
    }
}

/// Which (teacher layer, student layer) feature maps are matched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LspPairing {
    pub pairs: Vec<(usize, usize)>,
    pub mode: GraphMode,
}

impl LspPairing {
    /// Last graph-convolution layer of each model.
    pub fn last_layers(teacher_layers: usize, student_layers: usize, mode: GraphMode) -> Self {
        LspPairing {
            pairs: vec![(teacher_layers - 1, student_layers - 1)],
            mode,
        }
    }

    /// Parses `t:s[,t:s...]`.
    pub fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
        s.split(',')
            .map(|p| {
                let (t, st) = p
                    .split_once(':')
                    .ok_or_else(|| Error::validation(format!("layer pair {p:?} is not t:s")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::validation(format!("bad layer index in {p:?}")))
                };
                Ok((parse(t)?, parse(st)?))
            })
            .collect()
    }

    pub fn validate(&self, teacher_layers: usize, student_layers: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::validation("lsp pairing is empty"));
        }
        for &(t, s) in &self.pairs {
            if t >= teacher_layers || s >= student_layers {
                return Err(Error::validation(format!(
                    "lsp pair {t}:{s} out of range for {teacher_layers} teacher and {student_layers} student layers"
                )));
            }
        }
        Ok(())
    }
}

/// Per-node neighbor lists and their local-structure distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStructureSet {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    probs: Vec<f32>,
}

impl LocalStructureSet {
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// `LS_i`, aligned with [`LocalStructureSet::neighbors`]; empty for isolated nodes.
    pub fn distribution(&self, i: usize) -> &[f32] {
        &self.probs[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Edge arrays over the neighborhoods with self-loops dropped, plus the
/// number of nodes that keep at least one neighbor.
struct StructureEdges {
    n: usize,
    recv: Index,
    send: Index,
    non_empty: usize,
}

fn structure_edges<N: Neighborhoods + ?Sized>(nb: &N) -> StructureEdges {
    let n = nb.num_nodes();
    let mut recv = Vec::new();
    let mut send = Vec::new();
    let mut non_empty = 0;
    for i in 0..n {
        let before = recv.len();
        for &j in nb.senders(i).iter().filter(|&&j| j != i) {
            recv.push(i);
            send.push(j);
        }
        if recv.len() > before {
            non_empty += 1;
        }
    }
    StructureEdges {
        n,
        recv: Rc::from(recv),
        send: Rc::from(send),
        non_empty,
    }
}

fn distributions<'t>(z: Var<'t>, edges: &StructureEdges, kernel: Kernel) -> Result<Var<'t>> {
    let rows = z.value().rows();
    if rows != edges.n {
        return Err(Error::contract(format!(
            "features have {rows} rows but the graph has {} nodes",
            edges.n
        )));
    }
    kernel
        .edge_similarity(z, &edges.recv, &edges.send)?
        .segment_softmax(&edges.recv, edges.n)
}

/// Local structure of feature matrix `z` (`[n×F]`) over `nb`.
pub fn local_structure<N: Neighborhoods + ?Sized>(
    z: &Tensor,
    nb: &N,
    kernel: Kernel,
) -> Result<LocalStructureSet> {
    kernel.validate()?;
    let edges = structure_edges(nb);
    let tape = Tape::new();
    let probs = distributions(tape.constant(z.clone()), &edges, kernel)?;
    let mut offsets = vec![0; edges.n + 1];
    for &r in edges.recv.iter() {
        offsets[r + 1] += 1;
    }
    for i in 0..edges.n {
        offsets[i + 1] += offsets[i];
    }
    let probs = probs.value().data().to_vec();
    Ok(LocalStructureSet {
        offsets,
        neighbors: edges.send.to_vec(),
        probs,
    })
}

/// `KL(student ‖ teacher) = Σ_j s_j · ln(s_j / t_j)`, both logs clamped at `1e-10`.
pub fn kl_per_node(student: &[f32], teacher: &[f32]) -> Result<f32> {
    if student.len() != teacher.len() {
        return Err(Error::contract(format!(
            "local structures are not aligned: {} vs {} neighbors",
            student.len(),
            teacher.len()
        )));
    }
    let eps = LOG_EPS as f64;
    let kl: f64 = student
        .iter()
        .zip(teacher)
        .map(|(&s, &t)| {
            let (s, t) = (s as f64, t as f64);
            s * (s.max(eps).ln() - t.max(eps).ln())
        })
        .sum();
    Ok(kl as f32)
}

/// Differentiable LSP loss between student features `z_s` and (detached)
/// teacher features `z_t`.
///
/// `Static` requires both graphs to be identical. `Union` computes both
/// distributions over the per-node union of the two graphs' in-edges.
pub fn lsp_loss<'t>(
    z_s: Var<'t>,
    g_s: &Graph,
    z_t: &Tensor,
    g_t: &Graph,
    kernel: Kernel,
    mode: GraphMode,
) -> Result<Var<'t>> {
    kernel.validate()?;
    let tape = z_s.tape();
    let edges = match mode {
        GraphMode::Static => {
            if g_s != g_t {
                return Err(Error::contract(
                    "static LSP needs identical teacher and student graphs; use union mode",
                ));
            }
            structure_edges(g_s)
        }
        GraphMode::Union => structure_edges(&edge_union(g_t, g_s)?),
    };
    if edges.non_empty == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let p_s = distributions(z_s, &edges, kernel)?;
    let p_t = distributions(tape.constant(z_t.clone()), &edges, kernel)?;
    let log_ratio = p_s.log().sub(&p_t.log())?;
    Ok(p_s
        .mul(&log_ratio)?
        .sum()
        .scale(1.0 / edges.non_empty as f32))
}

/// `task + λ·lsp`; with `λ = 0` the task loss is returned unchanged.
pub fn total_loss<'t>(task: Var<'t>, lsp: Var<'t>, lambda: f32) -> Result<Var<'t>> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(task);
    }
    task.add(&lsp.scale(lambda))
}
