use super::kernels::{self, gelu, gelu_grad};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Sqrt(Var),
    Powf(Var, f64),
    ClampMin(Var, f64),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    MeanRows(Var),
    Diag(Var),
    SelectRows(Var, Vec<usize>),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SoftmaxNeg {
        x: Var,
        offsets: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<f64>,
        geom: AttnGeom,
        key_valid: Vec<bool>,
    },
}

#[derive(Debug, Clone, Copy)]
struct AttnGeom {
    n_seq: usize,
    seq_len: usize,
    heads: usize,
    d_model: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records executed operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a leaf. Its `requires_grad` flag decides whether a gradient
    /// is produced for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad;
        let mut value = tensor;
        value.grad = None;
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        match *self.shape(a) {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, self.shape(a), &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, the shape of a dense layer with weights stored `[out×in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nt(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", a)?;
        let out = kernels::transpose(self.data(a), r, c);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    /// Adds a length-`n` row vector to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("add_row", x)?;
        if self.value(row).numel() != n {
            return Err(Error::shape("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.data(row);
        let mut out = self.data(x).to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.any_grad(&[x, row]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRow(x, row), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.map(a, |x| x.powf(p), Op::Powf(a, p))
    }

    /// `max(x, floor)` elementwise; entries at the floor pass no gradient.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. The mask is
    /// drawn from `rng`, so replaying with an identically seeded stream
    /// reproduces it exactly. Callers skip this op in evaluation mode.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0,1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        let out = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Column means of an `[m×n]` matrix, as a length-`n` vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("mean_rows", a)?;
        let mut out = vec![0.0; n];
        let x = self.data(a);
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&x[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::vector(out), Op::MeanRows(a), rg))
    }

    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("diag", a)?;
        if r != c {
            return Err(Error::shape("diag", self.shape(a), &[r, r]));
        }
        let out = (0..r).map(|i| self.data(a)[i * r + i]).collect();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::vector(out), Op::Diag(a), rg))
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let (m, n) = self.matrix_dims("select_rows", a)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::shape("select_rows", self.shape(a), &[bad]));
        }
        let x = self.data(a);
        let out: Vec<f64> = rows
            .iter()
            .flat_map(|&r| x[r * n..(r + 1) * n].iter().copied())
            .collect();
        let value = Tensor::matrix(rows.len(), n, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SelectRows(a, rows), rg))
    }

    pub fn embedding(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let (v, d) = self.matrix_dims("embedding", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("embedding", self.shape(table), &[bad]));
        }
        let t = self.data(table);
        let out: Vec<f64> = ids
            .iter()
            .flat_map(|&i| t[i * d..(i + 1) * d].iter().copied())
            .collect();
        let value = Tensor::matrix(ids.len(), d, out)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(value, Op::Embedding { table, ids }, rg))
    }

    /// `P_i ∝ exp(-x_i)` over a single vector.
    pub fn softmax_neg(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.segment_softmax_neg(x, vec![0, n])
    }

    /// `P_i ∝ exp(-x_i)` normalized independently within each segment
    /// `offsets[u]..offsets[u+1]`.
    pub fn segment_softmax_neg(&mut self, x: Var, offsets: Vec<usize>) -> Result<Var> {
        let n = self.value(x).numel();
        let valid = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().unwrap() == n
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::shape("softmax_neg", self.shape(x), &offsets));
        }
        let xs = self.data(x);
        if !xs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("softmax_neg"));
        }
        let mut out = vec![0.0; n];
        for w in offsets.windows(2) {
            let seg = &xs[w[0]..w[1]];
            let lo = seg.iter().copied().fold(f64::INFINITY, f64::min);
            let mut total = 0.0;
            for (o, &s) in out[w[0]..w[1]].iter_mut().zip(seg) {
                *o = (lo - s).exp();
                total += *o;
            }
            out[w[0]..w[1]].iter_mut().for_each(|o| *o /= total);
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SoftmaxNeg { x, offsets }, rg))
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, d) = self.matrix_dims("layer_norm", x)?;
        if d < 2 || self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::matrix(m, d, out)?;
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product self-attention over a batch of
    /// `n_seq` padded sequences stacked as `[n_seq·seq_len × d]` rows.
    /// Keys with `key_valid == false` receive exactly zero weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        n_seq: usize,
        seq_len: usize,
        heads: usize,
        key_valid: Vec<bool>,
    ) -> Result<Var> {
        let (rows, d) = self.matrix_dims("attention", q)?;
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        if rows != n_seq * seq_len || key_valid.len() != rows || heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", self.shape(q), &[n_seq, seq_len, heads]));
        }
        let geom = AttnGeom {
            n_seq,
            seq_len,
            heads,
            d_model: d,
        };
        let dh = d / heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; n_seq * heads * seq_len * seq_len];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; seq_len];
        for b in 0..n_seq {
            let base = b * seq_len;
            let valid = &key_valid[base..base + seq_len];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq_len {
                    let qi = &qs[(base + i) * d + off..(base + i) * d + off + dh];
                    let mut hi = f64::NEG_INFINITY;
                    for j in 0..seq_len {
                        if valid[j] {
                            let kj = &ks[(base + j) * d + off..(base + j) * d + off + dh];
                            scores[j] = kernels::dot(qi, kj) * inv_sqrt;
                            hi = hi.max(scores[j]);
                        }
                    }
                    let p = &mut probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let mut total = 0.0;
                    for j in 0..seq_len {
                        if valid[j] {
                            p[j] = (scores[j] - hi).exp();
                            total += p[j];
                        }
                    }
                    if total > 0.0 {
                        p.iter_mut().for_each(|x| *x /= total);
                    }
                    let o = &mut out[(base + i) * d + off..(base + i) * d + off + dh];
                    for j in 0..seq_len {
                        if p[j] != 0.0 {
                            let vj = &vs[(base + j) * d + off..(base + j) * d + off + dh];
                            for (ov, vv) in o.iter_mut().zip(vj) {
                                *ov += p[j] * vv;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::matrix(rows, d, out)?;
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                probs,
                geom,
                key_valid,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar root. Nodes are visited in exact reverse
    /// execution order. The tape is cleared afterwards and cannot be reused
    /// for another backward pass.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let root_shape = self.shape(root).to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        self.consumed = true;
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }

        for idx in (0..nodes.len()).rev() {
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop(&nodes, idx, &g, &mut grads);
        }

        for (node, g) in nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], var: Var, contrib: Vec<f64>) {
    if !nodes[var.0].requires_grad {
        return;
    }
    match &mut grads[var.0] {
        Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
        slot => *slot = Some(contrib),
    }
}

fn backprop(nodes: &[Node], idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| nodes[v.0].value.data();
    let dims = |v: Var| nodes[v.0].value.dims2();
    let needs = |v: Var| nodes[v.0].requires_grad;
    let out = nodes[idx].value.data();

    match &nodes[idx].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = dims(a);
            let n = dims(b).1;
            if needs(a) {
                let mut da = vec![0.0; m * k];
                kernels::gemm_nt(g, val(b), &mut da, m, n, k);
                accumulate(nodes, grads, a, da);
            }
            if needs(b) {
                let mut db = vec![0.0; k * n];
                kernels::gemm_tn(val(a), g, &mut db, k, m, n);
                accumulate(nodes, grads, b, db);
            }
        }
        &Op::MatMulNt(a, b) => {
            let (m, k) = dims(a);
            let n = dims(b).0;
            if needs(a) {
                let mut da = vec![0.0; m * k];
                kernels::gemm_nn(g, val(b), &mut da, m, n, k);
                accumulate(nodes, grads, a, da);
            }
            if needs(b) {
                let mut db = vec![0.0; n * k];
                kernels::gemm_tn(g, val(a), &mut db, n, m, k);
                accumulate(nodes, grads, b, db);
            }
        }
        &Op::Transpose(a) => {
            let (r, c) = dims(a);
            accumulate(nodes, grads, a, kernels::transpose(g, c, r));
        }
        &Op::Reshape(a) => accumulate(nodes, grads, a, g.to_vec()),
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.to_vec());
            accumulate(nodes, grads, b, g.to_vec());
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, g.to_vec());
            accumulate(nodes, grads, b, g.iter().map(|x| -x).collect());
        }
        &Op::Mul(a, b) => {
            if needs(a) {
                accumulate(nodes, grads, a, g.iter().zip(val(b)).map(|(x, y)| x * y).collect());
            }
            if needs(b) {
                accumulate(nodes, grads, b, g.iter().zip(val(a)).map(|(x, y)| x * y).collect());
            }
        }
        &Op::Scale(a, c) => accumulate(nodes, grads, a, g.iter().map(|x| x * c).collect()),
        &Op::AddScalar(a) => accumulate(nodes, grads, a, g.to_vec()),
        &Op::AddRow(x, row) => {
            accumulate(nodes, grads, x, g.to_vec());
            if needs(row) {
                let (m, n) = dims(x);
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for (d, gv) in dr.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *d += gv;
                    }
                }
                accumulate(nodes, grads, row, dr);
            }
        }
        &Op::Gelu(a) => {
            let d = g.iter().zip(val(a)).map(|(gv, &x)| gv * gelu_grad(x)).collect();
            accumulate(nodes, grads, a, d);
        }
        &Op::Tanh(a) => {
            let d = g.iter().zip(out).map(|(gv, y)| gv * (1.0 - y * y)).collect();
            accumulate(nodes, grads, a, d);
        }
        &Op::Sqrt(a) => {
            let d = g.iter().zip(out).map(|(gv, y)| gv * 0.5 / y).collect();
            accumulate(nodes, grads, a, d);
        }
        &Op::Powf(a, p) => {
            let d = g.iter().zip(val(a)).map(|(gv, &x)| gv * p * x.powf(p - 1.0)).collect();
            accumulate(nodes, grads, a, d);
        }
        &Op::ClampMin(a, floor) => {
            let d = g
                .iter()
                .zip(val(a))
                .map(|(gv, &x)| if x > floor { *gv } else { 0.0 })
                .collect();
            accumulate(nodes, grads, a, d);
        }
        Op::Dropout(a, mask) => {
            let d = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
            accumulate(nodes, grads, *a, d);
        }
        &Op::Sum(a) => {
            let n = nodes[a.0].value.numel();
            accumulate(nodes, grads, a, vec![g[0]; n]);
        }
        &Op::MeanRows(a) => {
            let (m, n) = dims(a);
            let mut d = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    d[i * n + j] = g[j] / m as f64;
                }
            }
            accumulate(nodes, grads, a, d);
        }
        &Op::Diag(a) => {
            let (r, _) = dims(a);
            let mut d = vec![0.0; r * r];
            for i in 0..r {
                d[i * r + i] = g[i];
            }
            accumulate(nodes, grads, a, d);
        }
        Op::SelectRows(a, rows) => {
            let (m, n) = dims(*a);
            let mut d = vec![0.0; m * n];
            for (k, &r) in rows.iter().enumerate() {
                for j in 0..n {
                    d[r * n + j] += g[k * n + j];
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Embedding { table, ids } => {
            let (v, d) = dims(*table);
            let mut dt = vec![0.0; v * d];
            for (k, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] += g[k * d + j];
                }
            }
            accumulate(nodes, grads, *table, dt);
        }
        Op::SoftmaxNeg { x, offsets } => {
            let mut d = vec![0.0; out.len()];
            for w in offsets.windows(2) {
                let r = w[0]..w[1];
                let inner: f64 = out[r.clone()].iter().zip(&g[r.clone()]).map(|(p, gv)| p * gv).sum();
                for i in r {
                    d[i] = -out[i] * (g[i] - inner);
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (m, d) = dims(*x);
            let gv = val(*gain);
            if needs(*x) {
                let mut dx = vec![0.0; m * d];
                for i in 0..m {
                    let gr = &g[i * d..(i + 1) * d];
                    let xh = &xhat[i * d..(i + 1) * d];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let scale = inv_std[i] / d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gv[j];
                        dx[i * d + j] = scale * (d as f64 * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
            if needs(*gain) || needs(*bias) {
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for i in 0..m {
                    for j in 0..d {
                        dg[j] += g[i * d + j] * xhat[i * d + j];
                        db[j] += g[i * d + j];
                    }
                }
                accumulate(nodes, grads, *gain, dg);
                accumulate(nodes, grads, *bias, db);
            }
        }
        Op::Attention {
            q,
            k,
            v,
            probs,
            geom,
            key_valid,
        } => {
            let AttnGeom {
                n_seq,
                seq_len,
                heads,
                d_model: d,
            } = *geom;
            let dh = d / heads;
            let inv_sqrt = 1.0 / (dh as f64).sqrt();
            let (qs, ks, vs) = (val(*q), val(*k), val(*v));
            let rows = n_seq * seq_len;
            let mut dq = vec![0.0; rows * d];
            let mut dk = vec![0.0; rows * d];
            let mut dv = vec![0.0; rows * d];
            let mut dp = vec![0.0; seq_len];
            for b in 0..n_seq {
                let base = b * seq_len;
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..seq_len {
                        let p = &probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                        let gi = &g[(base + i) * d + off..(base + i) * d + off + dh];
                        let mut inner = 0.0;
                        for j in 0..seq_len {
                            if !key_valid[base + j] {
                                dp[j] = 0.0;
                                continue;
                            }
                            let vj = &vs[(base + j) * d + off..(base + j) * d + off + dh];
                            dp[j] = kernels::dot(gi, vj);
                            inner += p[j] * dp[j];
                            let dvj = &mut dv[(base + j) * d + off..(base + j) * d + off + dh];
                            for (x, y) in dvj.iter_mut().zip(gi) {
                                *x += p[j] * y;
                            }
                        }
                        for j in 0..seq_len {
                            if p[j] == 0.0 {
                                continue;
                            }
                            let ds = p[j] * (dp[j] - inner) * inv_sqrt;
                            let (qi_at, kj_at) = ((base + i) * d + off, (base + j) * d + off);
                            for t in 0..dh {
                                dq[qi_at + t] += ds * ks[kj_at + t];
                                dk[kj_at + t] += ds * qs[qi_at + t];
                            }
                        }
                    }
                }
            }
            accumulate(nodes, grads, *q, dq);
            accumulate(nodes, grads, *k, dk);
            accumulate(nodes, grads, *v, dv);
        }
    }
}
