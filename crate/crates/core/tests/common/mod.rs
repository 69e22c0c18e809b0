#![allow(dead_code)]

use lspd_core::autodiff::Index;
use lspd_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::rc::Rc;

pub const GRAD_TOL: f32 = 1e-3;
pub const GRAD_STEP: f32 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f32, _>(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Entries uniform in `±[lo, hi]`, keeping clear of kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f32, hi: f32) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn index(v: Vec<usize>) -> Index {
    Rc::from(v)
}

/// Random directed graph where each ordered pair is an edge with probability `p`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for s in 0..n {
        for r in 0..n {
            if s != r && rng.random_bool(p) {
                edges.push((s, r));
            }
        }
    }
    Graph::build(n, &edges, false).unwrap()
}

/// Sender sets as a dense adjacency matrix `adj[receiver][sender]`.
pub fn dense_adjacency(g: &Graph) -> Vec<Vec<bool>> {
    use lspd_core::Neighborhoods;
    let n = g.num_nodes();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for &j in g.senders(i) {
            adj[i][j] = true;
        }
    }
    adj
}
