use super::params::{Bound, Init, ParamShape};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::{Graph, Neighborhoods};

/// EdgeConv: `out_i = max_{j ∈ senders(i)} LeakyReLU(W·(x_i ‖ x_j − x_i) + b)`,
/// max taken per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeConvLayer {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub negative_slope: f32,
}

impl EdgeConvLayer {
    fn key(&self, part: &str) -> String {
        format!("{}.{part}", self.name)
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        vec![
            ParamShape {
                name: self.key("weight"),
                shape: vec![2 * self.in_dim, self.out_dim],
                init: Init::Glorot {
                    fan_in: 2 * self.in_dim,
                    fan_out: self.out_dim,
                },
            },
            ParamShape {
                name: self.key("bias"),
                shape: vec![self.out_dim],
                init: Init::Zeros,
            },
        ]
    }

    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>, g: &Graph) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim || shape[0] != g.num_nodes() {
            return Err(Error::Shape {
                op: "edgeconv_forward",
                lhs: shape,
                rhs: vec![g.num_nodes(), self.in_dim],
            });
        }
        if let Some(i) = (0..g.num_nodes()).find(|&i| g.in_degree(i) == 0) {
            return Err(Error::contract(format!("EdgeConv node {i} has no senders")));
        }
        let n = shape[0];
        let (recv, send) = g.edge_index();
        let w = params.get(&self.key("weight"))?;
        let b = params.get(&self.key("bias"))?;
        // W·(x_i ‖ x_j − x_i) = x_i·(W_top − W_bottom) + x_j·W_bottom
        let w_top = w.slice_rows(0, self.in_dim)?;
        let w_bottom = w.slice_rows(self.in_dim, 2 * self.in_dim)?;
        let center = x.matmul(&w_top.sub(&w_bottom)?)?;
        let neighbor = x.matmul(&w_bottom)?;
        center
            .gather_rows(&recv)?
            .add(&neighbor.gather_rows(&send)?)?
            .add_row(&b)?
            .leaky_relu(self.negative_slope)
            .segment_max_rows(&recv, n)
    }
}
