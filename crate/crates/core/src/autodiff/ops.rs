use super::{accumulate, Index, Node, Op, Var, LOG_EPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::rc::Rc;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn rows_shape(like: &Tensor, rows: usize) -> Vec<usize> {
    let mut s = like.shape().to_vec();
    if s.is_empty() {
        s.push(rows);
    } else {
        s[0] = rows;
    }
    s
}

pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let av = av as f64;
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o += av * bv as f64;
            }
        }
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = v as f32;
        }
    }
    out
}

impl<'t> Var<'t> {
    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.record(value, op)
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err("matmul", &a, &b));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?
        };
        Ok(self.unary(value, Op::MatMul(self.id, other.id)))
    }

    fn binary_same(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.shape() != b.shape() {
                return Err(shape_err(name, &a, &b));
            }
            zip(&a, &b, f)
        };
        Ok(self.unary(value, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    /// Adds a length-`n` row vector to every row of an `[m×n]` matrix.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(row);
        let value = {
            let (a, b) = (self.value(), row.value());
            let n = a.cols();
            if b.numel() != n {
                return Err(shape_err("add_row", &a, &b));
            }
            let mut out = a.clone();
            for chunk in out.data_mut().chunks_mut(n) {
                chunk.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
            }
            out
        };
        Ok(self.unary(value, Op::AddRow(self.id, row.id)))
    }

    pub fn scale(&self, c: f32) -> Var<'t> {
        let value = map(&self.value(), |x| x * c);
        self.unary(value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f32) -> Var<'t> {
        let value = map(&self.value(), |x| x + c);
        self.unary(value, Op::AddScalar(self.id))
    }

    /// Multiplies every element by a one-element var.
    pub fn mul_scalar(&self, s: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(s);
        let value = {
            let (a, b) = (self.value(), s.value());
            if b.numel() != 1 {
                return Err(shape_err("mul_scalar", &a, &b));
            }
            let c = b.item();
            map(&a, |x| x * c)
        };
        Ok(self.unary(value, Op::MulScalar(self.id, s.id)))
    }

    pub fn exp(&self) -> Var<'t> {
        let value = map(&self.value(), f32::exp);
        self.unary(value, Op::Exp(self.id))
    }

    /// Natural log with the input clamped below at [`LOG_EPS`].
    pub fn log(&self) -> Var<'t> {
        let value = map(&self.value(), |x| x.max(LOG_EPS).ln());
        self.unary(value, Op::Log(self.id))
    }

    pub fn leaky_relu(&self, slope: f32) -> Var<'t> {
        let value = map(&self.value(), |x| if x > 0.0 { x } else { slope * x });
        self.unary(value, Op::LeakyRelu(self.id, slope))
    }

    pub fn elu(&self) -> Var<'t> {
        let value = map(&self.value(), |x| if x > 0.0 { x } else { x.exp_m1() });
        self.unary(value, Op::Elu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let value = map(&self.value(), sigmoid);
        self.unary(value, Op::Sigmoid(self.id))
    }

    pub fn abs(&self) -> Var<'t> {
        let value = map(&self.value(), f32::abs);
        self.unary(value, Op::Abs(self.id))
    }

    pub fn powi(&self, p: i32) -> Var<'t> {
        let value = map(&self.value(), |x| x.powi(p));
        self.unary(value, Op::Powi(self.id, p))
    }

    pub fn sqrt(&self) -> Var<'t> {
        let value = map(&self.value(), f32::sqrt);
        self.unary(value, Op::Sqrt(self.id))
    }

    /// Horizontal concatenation of `[m×p]` and `[m×q]`.
    pub fn concat_cols(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.rows() != b.rows() {
                return Err(shape_err("concat_cols", &a, &b));
            }
            let (m, p, q) = (a.rows(), a.cols(), b.cols());
            let mut data = Vec::with_capacity(m * (p + q));
            for i in 0..m {
                data.extend_from_slice(a.row(i));
                data.extend_from_slice(b.row(i));
            }
            Tensor::new(vec![m, p + q], data)?
        };
        Ok(self.unary(value, Op::ConcatCols(self.id, other.id)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let c = a.cols();
            if start > end || end > c {
                return Err(Error::contract(format!(
                    "slice_cols {start}..{end} out of range for width {c}"
                )));
            }
            let m = a.rows();
            let mut data = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                data.extend_from_slice(&a.row(i)[start..end]);
            }
            Tensor::new(vec![m, end - start], data)?
        };
        Ok(self.unary(value, Op::SliceCols(self.id, start)))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if start > end || end > a.rows() {
                return Err(Error::contract(format!(
                    "slice_rows {start}..{end} out of range for {} rows",
                    a.rows()
                )));
            }
            a.slice_rows(start, end)
        };
        Ok(self.unary(value, Op::SliceRows(self.id, start)))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let value = self.to_tensor().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.value().data().iter().map(|&v| v as f64).sum();
        self.unary(Tensor::scalar(s as f32), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let value = {
            let a = self.value();
            let s: f64 = a.data().iter().map(|&v| v as f64).sum();
            Tensor::scalar((s / a.numel().max(1) as f64) as f32)
        };
        self.unary(value, Op::Mean(self.id))
    }

    /// Per-row sum of an `[m×n]` matrix, giving `[m]`.
    pub fn row_sum(&self) -> Var<'t> {
        let value = {
            let a = self.value();
            let n = a.cols();
            Tensor::vector(
                a.data()
                    .chunks(n.max(1))
                    .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() as f32)
                    .collect(),
            )
        };
        self.unary(value, Op::RowSum(self.id))
    }

    /// Picks rows `idx[0], idx[1], ...`; adjoint of [`Var::scatter_add_rows`].
    pub fn gather_rows(&self, idx: &Index) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (m, c) = (a.rows(), a.cols());
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                if i >= m {
                    return Err(Error::contract(format!(
                        "gather_rows index {i} out of range for {m} rows"
                    )));
                }
                data.extend_from_slice(a.row(i));
            }
            Tensor::new(rows_shape(&a, idx.len()), data)?
        };
        Ok(self.unary(value, Op::GatherRows(self.id, idx.clone())))
    }

    /// Sums row `r` of the input into output row `idx[r]`, producing `n` rows.
    pub fn scatter_add_rows(&self, idx: &Index, n: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if a.rows() != idx.len() {
                return Err(Error::contract(format!(
                    "scatter_add_rows: {} rows but {} indices",
                    a.rows(),
                    idx.len()
                )));
            }
            let c = a.cols();
            let mut acc = vec![0.0f64; n * c];
            for (r, &i) in idx.iter().enumerate() {
                if i >= n {
                    return Err(Error::contract(format!(
                        "scatter_add_rows index {i} out of range for {n} rows"
                    )));
                }
                for (o, &v) in acc[i * c..(i + 1) * c].iter_mut().zip(a.row(r)) {
                    *o += v as f64;
                }
            }
            Tensor::new(
                rows_shape(&a, n),
                acc.into_iter().map(|v| v as f32).collect(),
            )?
        };
        Ok(self.unary(value, Op::ScatterAddRows(self.id, idx.clone())))
    }

    /// Softmax over groups of a length-`E` score vector; `segment[e]` names
    /// the group of entry `e`. Groups are max-shifted before exponentiation.
    pub fn segment_softmax(&self, segment: &Index, n: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if a.numel() != segment.len() {
                return Err(Error::contract(format!(
                    "segment_softmax: {} scores but {} segment ids",
                    a.numel(),
                    segment.len()
                )));
            }
            if !a.is_finite() {
                return Err(Error::Numeric(
                    "segment_softmax received a non-finite score".into(),
                ));
            }
            Tensor::new(
                a.shape().to_vec(),
                segment_softmax_raw(a.data(), segment, n)?,
            )?
        };
        Ok(self.unary(value, Op::SegmentSoftmax(self.id, segment.clone())))
    }

    /// Column-wise max over the rows of each segment; `[E×F]` to `[n×F]`.
    /// Segments without rows produce zeros.
    pub fn segment_max_rows(&self, segment: &Index, n: usize) -> Result<Var<'t>> {
        let (value, argmax) = {
            let a = self.value();
            if a.rows() != segment.len() {
                return Err(Error::contract(format!(
                    "segment_max_rows: {} rows but {} segment ids",
                    a.rows(),
                    segment.len()
                )));
            }
            let c = a.cols();
            let mut out = vec![f32::NEG_INFINITY; n * c];
            let mut arg = vec![usize::MAX; n * c];
            for (r, &s) in segment.iter().enumerate() {
                if s >= n {
                    return Err(Error::contract(format!(
                        "segment id {s} out of range for {n}"
                    )));
                }
                let row = a.row(r);
                for j in 0..c {
                    let slot = s * c + j;
                    if row[j] > out[slot] || arg[slot] == usize::MAX {
                        out[slot] = row[j];
                        arg[slot] = r;
                    }
                }
            }
            for (o, &g) in out.iter_mut().zip(&arg) {
                if g == usize::MAX {
                    *o = 0.0;
                }
            }
            (Tensor::new(vec![n, c], out)?, arg)
        };
        Ok(self.unary(value, Op::SegmentMaxRows(self.id, Rc::from(argmax))))
    }

    /// Column-wise max over all rows, `[m×F]` to `[1×F]`.
    pub fn max_rows(&self) -> Result<Var<'t>> {
        let m = self.value().rows();
        if m == 0 {
            return Err(Error::contract("max_rows over zero rows"));
        }
        let seg: Index = Rc::from(vec![0usize; m]);
        self.segment_max_rows(&seg, 1)
    }

    /// Scales row `i` of an `[m×n]` matrix by `w[i]`.
    pub fn row_scale(&self, w: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(w);
        let value = {
            let (a, b) = (self.value(), w.value());
            if b.numel() != a.rows() {
                return Err(shape_err("row_scale", &a, &b));
            }
            let c = a.cols();
            let mut out = a.clone();
            for (chunk, &s) in out.data_mut().chunks_mut(c.max(1)).zip(b.data()) {
                chunk.iter_mut().for_each(|x| *x *= s);
            }
            out
        };
        Ok(self.unary(value, Op::RowScale(self.id, w.id)))
    }

    /// Row-wise inner products of two `[m×n]` matrices, giving `[m]`.
    pub fn row_dot(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let (a, b) = (self.value(), other.value());
            if a.shape() != b.shape() {
                return Err(shape_err("row_dot", &a, &b));
            }
            let c = a.cols().max(1);
            Tensor::vector(
                a.data()
                    .chunks(c)
                    .zip(b.data().chunks(c))
                    .map(|(x, y)| {
                        x.iter()
                            .zip(y)
                            .map(|(&p, &q)| p as f64 * q as f64)
                            .sum::<f64>() as f32
                    })
                    .collect(),
            )
        };
        Ok(self.unary(value, Op::RowDot(self.id, other.id)))
    }

    /// Row-wise log-softmax of an `[m×C]` matrix.
    pub fn log_softmax_rows(&self) -> Var<'t> {
        let value = {
            let a = self.value();
            let c = a.cols().max(1);
            let mut out = a.clone();
            for row in out.data_mut().chunks_mut(c) {
                let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let lse = row
                    .iter()
                    .map(|&v| ((v - mx) as f64).exp())
                    .sum::<f64>()
                    .ln() as f32;
                row.iter_mut().for_each(|v| *v = *v - mx - lse);
            }
            out
        };
        self.unary(value, Op::LogSoftmaxRows(self.id))
    }

    /// Elementwise binary cross-entropy on logits against `targets` (same shape),
    /// in the overflow-free form `max(x,0) - x*y + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&self, targets: Rc<Tensor>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if a.shape() != targets.shape() {
                return Err(shape_err("bce_with_logits", &a, &targets));
            }
            zip(&a, &targets, |x, y| {
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
        };
        Ok(self.unary(value, Op::BceWithLogits(self.id, targets)))
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn segment_softmax_raw(scores: &[f32], segment: &[usize], n: usize) -> Result<Vec<f32>> {
    let mut mx = vec![f32::NEG_INFINITY; n];
    for (&s, &g) in scores.iter().zip(segment) {
        if g >= n {
            return Err(Error::contract(format!(
                "segment id {g} out of range for {n}"
            )));
        }
        mx[g] = mx[g].max(s);
    }
    let mut denom = vec![0.0f64; n];
    let ex: Vec<f64> = scores
        .iter()
        .zip(segment)
        .map(|(&s, &g)| {
            let e = ((s - mx[g]) as f64).exp();
            denom[g] += e;
            e
        })
        .collect();
    Ok(ex
        .iter()
        .zip(segment)
        .map(|(&e, &g)| (e / denom[g]) as f32)
        .collect())
}

/// Applies the backward rule of node `id` given its output gradient `g`.
pub(crate) fn backward_step(nodes: &[Node], id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    let mut push = |i: usize, contribution: Vec<f32>| {
        if nodes[i].requires_grad {
            accumulate(grads, i, contribution);
        }
    };
    let elementwise = |x: &Tensor, f: &dyn Fn(f32, f32, f32) -> f32| -> Vec<f32> {
        x.data()
            .iter()
            .zip(out.data())
            .zip(g)
            .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
            .collect()
    };

    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if wants(*a) {
                let mut da = vec![0.0f32; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv.data()[p * n..(p + 1) * n];
                        da[i * k + p] = grow
                            .iter()
                            .zip(brow)
                            .map(|(&x, &y)| x as f64 * y as f64)
                            .sum::<f64>() as f32;
                    }
                }
                push(*a, da);
            }
            if wants(*b) {
                let mut db = vec![0.0f64; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let s = av.data()[i * k + p];
                        if s == 0.0 {
                            continue;
                        }
                        let s = s as f64;
                        for (o, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += s * gv as f64;
                        }
                    }
                }
                push(*b, db.into_iter().map(|v| v as f32).collect());
            }
        }
        Op::Add(a, b) => {
            push(*a, g.to_vec());
            push(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            push(*a, g.to_vec());
            push(*b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                push(*a, g.iter().zip(bv.data()).map(|(x, y)| x * y).collect());
            }
            if wants(*b) {
                push(*b, g.iter().zip(av.data()).map(|(x, y)| x * y).collect());
            }
        }
        Op::AddRow(a, b) => {
            push(*a, g.to_vec());
            if wants(*b) {
                let n = out.cols();
                let mut db = vec![0.0f64; n];
                for chunk in g.chunks(n) {
                    db.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v as f64);
                }
                push(*b, db.into_iter().map(|v| v as f32).collect());
            }
        }
        Op::Scale(a, c) => push(*a, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(a) | Op::Reshape(a) => push(*a, g.to_vec()),
        Op::MulScalar(a, s) => {
            let (av, sv) = (val(*a), val(*s));
            if wants(*a) {
                let c = sv.item();
                push(*a, g.iter().map(|v| v * c).collect());
            }
            if wants(*s) {
                let d: f64 = g
                    .iter()
                    .zip(av.data())
                    .map(|(&x, &y)| x as f64 * y as f64)
                    .sum();
                push(*s, vec![d as f32]);
            }
        }
        Op::Exp(a) => push(*a, elementwise(val(*a), &|_, y, gv| gv * y)),
        Op::Log(a) => push(
            *a,
            elementwise(val(*a), &|x, _, gv| if x > LOG_EPS { gv / x } else { 0.0 }),
        ),
        Op::LeakyRelu(a, slope) => push(
            *a,
            elementwise(val(*a), &|x, _, gv| if x > 0.0 { gv } else { gv * slope }),
        ),
        Op::Elu(a) => push(
            *a,
            elementwise(val(*a), &|x, y, gv| {
                if x > 0.0 {
                    gv
                } else {
                    gv * (y + 1.0)
                }
            }),
        ),
        Op::Sigmoid(a) => push(*a, elementwise(val(*a), &|_, y, gv| gv * y * (1.0 - y))),
        Op::Abs(a) => push(
            *a,
            elementwise(val(*a), &|x, _, gv| {
                if x > 0.0 {
                    gv
                } else if x < 0.0 {
                    -gv
                } else {
                    0.0
                }
            }),
        ),
        Op::Powi(a, p) => {
            let p = *p;
            push(
                *a,
                elementwise(val(*a), &|x, _, gv| gv * p as f32 * x.powi(p - 1)),
            )
        }
        Op::Sqrt(a) => push(*a, elementwise(val(*a), &|_, y, gv| gv * 0.5 / y)),
        Op::ConcatCols(a, b) => {
            let (p, q) = (val(*a).cols(), val(*b).cols());
            let w = p + q;
            if wants(*a) {
                push(*a, g.chunks(w).flat_map(|r| r[..p].to_vec()).collect());
            }
            if wants(*b) {
                push(*b, g.chunks(w).flat_map(|r| r[p..].to_vec()).collect());
            }
        }
        Op::SliceCols(a, start) => {
            let av = val(*a);
            let (m, c) = (av.rows(), av.cols());
            let w = out.cols();
            let mut da = vec![0.0f32; m * c];
            for i in 0..m {
                da[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            push(*a, da);
        }
        Op::SliceRows(a, start) => {
            let av = val(*a);
            let c = av.cols();
            let mut da = vec![0.0f32; av.numel()];
            da[start * c..start * c + g.len()].copy_from_slice(g);
            push(*a, da);
        }
        Op::Sum(a) => push(*a, vec![g[0]; val(*a).numel()]),
        Op::Mean(a) => {
            let n = val(*a).numel();
            push(*a, vec![g[0] / n.max(1) as f32; n]);
        }
        Op::RowSum(a) => {
            let c = val(*a).cols();
            push(
                *a,
                g.iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect(),
            );
        }
        Op::GatherRows(a, idx) => {
            let av = val(*a);
            let c = av.cols();
            let mut da = vec![0.0f64; av.numel()];
            for (r, &i) in idx.iter().enumerate() {
                for (o, &v) in da[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(&g[r * c..(r + 1) * c])
                {
                    *o += v as f64;
                }
            }
            push(*a, da.into_iter().map(|v| v as f32).collect());
        }
        Op::ScatterAddRows(a, idx) => {
            let c = out.cols();
            let mut da = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                da.extend_from_slice(&g[i * c..(i + 1) * c]);
            }
            push(*a, da);
        }
        Op::SegmentSoftmax(a, seg) => {
            let n = seg.iter().copied().max().map_or(0, |m| m + 1);
            let mut dot = vec![0.0f64; n];
            for ((&y, &gv), &s) in out.data().iter().zip(g).zip(seg.iter()) {
                dot[s] += y as f64 * gv as f64;
            }
            let da = out
                .data()
                .iter()
                .zip(g)
                .zip(seg.iter())
                .map(|((&y, &gv), &s)| (y as f64 * (gv as f64 - dot[s])) as f32)
                .collect();
            push(*a, da);
        }
        Op::SegmentMaxRows(a, argmax) => {
            let av = val(*a);
            let c = av.cols();
            let mut da = vec![0.0f32; av.numel()];
            for (slot, &r) in argmax.iter().enumerate() {
                if r != usize::MAX {
                    da[r * c + slot % c] += g[slot];
                }
            }
            push(*a, da);
        }
        Op::RowScale(a, w) => {
            let (av, wv) = (val(*a), val(*w));
            let c = av.cols().max(1);
            if wants(*a) {
                let mut da = g.to_vec();
                for (chunk, &s) in da.chunks_mut(c).zip(wv.data()) {
                    chunk.iter_mut().for_each(|x| *x *= s);
                }
                push(*a, da);
            }
            if wants(*w) {
                let dw = g
                    .chunks(c)
                    .zip(av.data().chunks(c))
                    .map(|(x, y)| {
                        x.iter()
                            .zip(y)
                            .map(|(&p, &q)| p as f64 * q as f64)
                            .sum::<f64>() as f32
                    })
                    .collect();
                push(*w, dw);
            }
        }
        Op::RowDot(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let c = av.cols().max(1);
            let scaled = |other: &Tensor| -> Vec<f32> {
                other
                    .data()
                    .chunks(c)
                    .zip(g)
                    .flat_map(|(row, &gv)| row.iter().map(move |&v| v * gv))
                    .collect()
            };
            if wants(*a) {
                push(*a, scaled(bv));
            }
            if wants(*b) {
                push(*b, scaled(av));
            }
        }
        Op::LogSoftmaxRows(a) => {
            let c = out.cols().max(1);
            let mut da = Vec::with_capacity(out.numel());
            for (yrow, grow) in out.data().chunks(c).zip(g.chunks(c)) {
                let gs: f64 = grow.iter().map(|&v| v as f64).sum();
                da.extend(
                    yrow.iter()
                        .zip(grow)
                        .map(|(&y, &gv)| (gv as f64 - (y as f64).exp() * gs) as f32),
                );
            }
            push(*a, da);
        }
        Op::BceWithLogits(a, targets) => {
            let av = val(*a);
            let da = av
                .data()
                .iter()
                .zip(targets.data())
                .zip(g)
                .map(|((&x, &y), &gv)| gv * (sigmoid(x) - y))
                .collect();
            push(*a, da);
        }
    }
}
