//! Directed graphs stored by receiver, kNN construction, and teacher/student
//! edge unions for dynamic-graph models.

use crate::autodiff::Index;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Anything that can list, for each node, the senders of its in-edges.
pub trait Neighborhoods {
    fn num_nodes(&self) -> usize;
    fn senders(&self, i: usize) -> &[usize];
}

/// Directed graph in CSR form keyed by receiver.
///
/// `senders(i)` is the sorted, duplicate-free list `{j : (j, i) ∈ E}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    senders: Vec<usize>,
}

impl Graph {
    /// Builds a graph from `(sender, receiver)` pairs. Duplicates collapse;
    /// `undirected` inserts every edge in both directions.
    pub fn build(n: usize, edges: &[(usize, usize)], undirected: bool) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &(s, r)) in edges.iter().enumerate() {
            if s >= n || r >= n {
                return Err(Error::validation(format!(
                    "edge {k} = ({s}, {r}) out of range for {n} nodes"
                )));
            }
            lists[r].push(s);
            if undirected {
                lists[s].push(r);
            }
        }
        Ok(Self::from_lists(lists))
    }

    /// Builds from per-receiver sender lists (sorted and deduplicated here).
    pub fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut senders = Vec::new();
        offsets.push(0);
        for list in lists.iter_mut() {
            list.sort_unstable();
            list.dedup();
            senders.extend_from_slice(list);
            offsets.push(senders.len());
        }
        Graph {
            n,
            offsets,
            senders,
        }
    }

    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            offsets: vec![0; n + 1],
            senders: Vec::new(),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// True when every node has a self-loop.
    pub fn has_self_loops(&self) -> bool {
        (0..self.n).all(|i| self.senders(i).binary_search(&i).is_ok())
    }

    /// All edges as `(sender, receiver)`, ordered by receiver then sender.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.senders(i).iter().map(move |&j| (j, i)))
    }

    /// Parallel `(receivers, senders)` index arrays in edge order.
    pub fn edge_index(&self) -> (Index, Index) {
        let (recv, send): (Vec<usize>, Vec<usize>) = self.edges().map(|(s, r)| (r, s)).unzip();
        (Rc::from(recv), Rc::from(send))
    }

    /// Adds a self-loop to every node that lacks one. Idempotent.
    pub fn add_self_loops(&self) -> Graph {
        let lists = (0..self.n)
            .map(|i| {
                let mut l = self.senders(i).to_vec();
                l.push(i);
                l
            })
            .collect();
        Graph::from_lists(lists)
    }

    pub fn without_self_loops(&self) -> Graph {
        let lists = (0..self.n)
            .map(|i| {
                self.senders(i)
                    .iter()
                    .copied()
                    .filter(|&j| j != i)
                    .collect()
            })
            .collect();
        Graph::from_lists(lists)
    }

    /// Block-diagonal union; node ids of part `k` are offset by the sizes of parts before it.
    pub fn disjoint_union(parts: &[Graph]) -> Graph {
        let mut lists = Vec::new();
        let mut base = 0;
        for g in parts {
            for i in 0..g.n {
                lists.push(g.senders(i).iter().map(|&j| j + base).collect());
            }
            base += g.n;
        }
        Graph::from_lists(lists)
    }

    /// Edge list reversed: `(j, i)` becomes `(i, j)`.
    pub fn reversed(&self) -> Graph {
        let mut lists = vec![Vec::new(); self.n];
        for (s, r) in self.edges() {
            lists[s].push(r);
        }
        Graph::from_lists(lists)
    }

    /// Number of weakly connected components.
    pub fn weak_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (s, r) in self.edges() {
            let (a, b) = (find(&mut parent, s), find(&mut parent, r));
            if a != b {
                parent[a] = b;
            }
        }
        (0..self.n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

impl Neighborhoods for Graph {
    fn num_nodes(&self) -> usize {
        self.n
    }

    fn senders(&self, i: usize) -> &[usize] {
        &self.senders[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Squared Euclidean distance with `f64` accumulation.
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Directed kNN graph: `senders(i)` are the `k` points nearest to `i`
/// (excluding `i`), ties broken toward the smaller index.
pub fn knn_graph(points: &Tensor, k: usize) -> Result<Graph> {
    let n = points.rows();
    if k >= n {
        return Err(Error::contract(format!(
            "knn_graph needs k < n, got k={k}, n={n}"
        )));
    }
    if !points.is_finite() {
        return Err(Error::Numeric(
            "knn_graph received non-finite features".into(),
        ));
    }
    let mut lists = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let pi = points.row(i);
        cand.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(pi, points.row(j)), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        let mut chosen: Vec<usize> = cand[..k].iter().map(|c| c.1).collect();
        chosen.sort_unstable();
        lists.push(chosen);
    }
    Ok(Graph::from_lists(lists))
}

/// kNN graphs built independently over consecutive row blocks of `points`,
/// returned as one block-diagonal graph.
pub fn knn_graph_blocks(points: &Tensor, block_sizes: &[usize], k: usize) -> Result<Graph> {
    let mut parts = Vec::with_capacity(block_sizes.len());
    let mut start = 0;
    for &size in block_sizes {
        parts.push(knn_graph(&points.slice_rows(start, start + size), k)?);
        start += size;
    }
    if start != points.rows() {
        return Err(Error::contract(format!(
            "block sizes sum to {start} but there are {} rows",
            points.rows()
        )));
    }
    Ok(Graph::disjoint_union(&parts))
}

/// Which input graph(s) an edge of an [`EdgeUnionView`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    TeacherOnly,
    StudentOnly,
    Both,
}

/// Per-node union of teacher and student in-edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeUnionView {
    merged: Graph,
    provenance: Vec<Provenance>,
}

impl EdgeUnionView {
    pub fn graph(&self) -> &Graph {
        &self.merged
    }

    /// Provenance tags aligned with `senders(i)`.
    pub fn provenance(&self, i: usize) -> &[Provenance] {
        &self.provenance[self.merged.offsets[i]..self.merged.offsets[i + 1]]
    }

    pub fn num_edges(&self) -> usize {
        self.merged.num_edges()
    }
}

impl Neighborhoods for EdgeUnionView {
    fn num_nodes(&self) -> usize {
        self.merged.n
    }

    fn senders(&self, i: usize) -> &[usize] {
        self.merged.senders(i)
    }
}

/// Merges the sender lists of two graphs over the same node set.
pub fn edge_union(teacher: &Graph, student: &Graph) -> Result<EdgeUnionView> {
    if teacher.n != student.n {
        return Err(Error::contract(format!(
            "edge_union over different node counts: teacher {} vs student {}",
            teacher.n, student.n
        )));
    }
    let mut offsets = Vec::with_capacity(teacher.n + 1);
    let mut senders = Vec::with_capacity(teacher.num_edges().max(student.num_edges()));
    let mut provenance = Vec::with_capacity(senders.capacity());
    offsets.push(0);
    for i in 0..teacher.n {
        let (t, s) = (teacher.senders(i), student.senders(i));
        let (mut a, mut b) = (0, 0);
        while a < t.len() || b < s.len() {
            let next = match (t.get(a), s.get(b)) {
                (Some(&x), Some(&y)) if x == y => {
                    a += 1;
                    b += 1;
                    (x, Provenance::Both)
                }
                (Some(&x), Some(&y)) if x < y => {
                    a += 1;
                    (x, Provenance::TeacherOnly)
                }
                (Some(&x), None) => {
                    a += 1;
                    (x, Provenance::TeacherOnly)
                }
                (_, Some(&y)) => {
                    b += 1;
                    (y, Provenance::StudentOnly)
                }
                (None, None) => unreachable!(),
            };
            senders.push(next.0);
            provenance.push(next.1);
        }
        offsets.push(senders.len());
    }
    Ok(EdgeUnionView {
        merged: Graph {
            n: teacher.n,
            offsets,
            senders,
        },
        provenance,
    })
}
