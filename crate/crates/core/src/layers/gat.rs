use super::params::{Bound, Init, ParamShape};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::{Graph, Neighborhoods};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// How the per-head outputs of a GAT layer are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    Concat,
    Average,
}

/// Skip connection added to each head's aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skip {
    None,
    Identity,
    Projection,
}

/// One multi-head graph attention layer.
///
/// Per head `h`: `w = x·W_h`, score `e_ij = LeakyReLU(a_dst·w_i + a_src·w_j)`
/// (a single linear map over the concatenated pair), attention is the
/// per-receiver softmax of the scores, and node `i` receives the
/// attention-weighted sum of its senders' `w_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer {
    pub name: String,
    pub in_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub merge: HeadMerge,
    pub skip: Skip,
    pub negative_slope: f32,
}

impl GatLayer {
    pub fn out_dim(&self) -> usize {
        match self.merge {
            HeadMerge::Concat => self.heads * self.head_dim,
            HeadMerge::Average => self.head_dim,
        }
    }

    fn key(&self, part: &str) -> String {
        format!("{}.{part}", self.name)
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let wide = self.heads * self.head_dim;
        let mut shapes = vec![
            ParamShape {
                name: self.key("weight"),
                shape: vec![self.in_dim, wide],
                init: Init::Glorot {
                    fan_in: self.in_dim,
                    fan_out: wide,
                },
            },
            ParamShape {
                name: self.key("att_dst"),
                shape: vec![self.head_dim, self.heads],
                init: Init::Glorot {
                    fan_in: self.head_dim,
                    fan_out: 1,
                },
            },
            ParamShape {
                name: self.key("att_src"),
                shape: vec![self.head_dim, self.heads],
                init: Init::Glorot {
                    fan_in: self.head_dim,
                    fan_out: 1,
                },
            },
        ];
        if self.skip == Skip::Projection {
            shapes.push(ParamShape {
                name: self.key("skip"),
                shape: vec![self.in_dim, wide],
                init: Init::Glorot {
                    fan_in: self.in_dim,
                    fan_out: wide,
                },
            });
        }
        shapes
    }

    /// Returns the merged output and the `[E×heads]` attention coefficients,
    /// edges in the graph's receiver-major order.
    pub fn forward<'t>(
        &self,
        params: &Bound<'t>,
        x: Var<'t>,
        g: &Graph,
    ) -> Result<(Var<'t>, Tensor)> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim || shape[0] != g.num_nodes() {
            return Err(Error::Shape {
                op: "gat_forward",
                lhs: shape,
                rhs: vec![g.num_nodes(), self.in_dim],
            });
        }
        if !g.has_self_loops() {
            return Err(Error::contract(
                "GAT aggregation requires a self-loop on every node",
            ));
        }
        let n = shape[0];
        let (recv, send) = g.edge_index();
        let w = params.get(&self.key("weight"))?;
        let att_dst = params.get(&self.key("att_dst"))?;
        let att_src = params.get(&self.key("att_src"))?;
        let wx = x.matmul(&w)?;
        let skip = match self.skip {
            Skip::None => None,
            Skip::Identity => Some(x),
            Skip::Projection => Some(x.matmul(&params.get(&self.key("skip"))?)?),
        };

        let mut head_outputs = Vec::with_capacity(self.heads);
        let mut attention = Tensor::zeros(&[recv.len(), self.heads]);
        for h in 0..self.heads {
            let (lo, hi) = (h * self.head_dim, (h + 1) * self.head_dim);
            let wx_h = wx.slice_cols(lo, hi)?;
            let s_dst = wx_h.matmul(&att_dst.slice_cols(h, h + 1)?)?;
            let s_src = wx_h.matmul(&att_src.slice_cols(h, h + 1)?)?;
            let scores = s_dst
                .gather_rows(&recv)?
                .add(&s_src.gather_rows(&send)?)?
                .leaky_relu(self.negative_slope)
                .reshape(vec![recv.len()])?;
            let alpha = scores.segment_softmax(&recv, n)?;
            for (e, &a) in alpha.value().data().iter().enumerate() {
                attention.data_mut()[e * self.heads + h] = a;
            }
            let mut out_h = wx_h
                .gather_rows(&send)?
                .row_scale(&alpha)?
                .scatter_add_rows(&recv, n)?;
            if let Some(s) = skip {
                out_h = out_h.add(&s.slice_cols(lo, hi)?)?;
            }
            head_outputs.push(out_h);
        }

        let merged = match self.merge {
            HeadMerge::Concat => {
                let mut acc = head_outputs[0];
                for o in &head_outputs[1..] {
                    acc = acc.concat_cols(o)?;
                }
                acc
            }
            HeadMerge::Average => {
                let mut acc = head_outputs[0];
                for o in &head_outputs[1..] {
                    acc = acc.add(o)?;
                }
                acc.scale(1.0 / self.heads as f32)
            }
        };
        Ok((merged, attention))
    }
}
