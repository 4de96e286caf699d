//! Dynamically recorded computation tape with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse recording order, so forward evaluation order
//! defines the backward schedule. Nodes that do not depend on a trainable
//! parameter are marked constant and skipped during the backward sweep.

use std::collections::{HashMap, HashSet};

use super::matrix::{matmul_t, softmax_in_place};
use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Lower/upper clamp applied to probabilities inside the binary cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Mul { a: Var, b: Var },
    MulRow { a: Var, row: Var },
    Scale { a: Var, s: f64 },
    Relu { a: Var },
    Sigmoid { a: Var },
    SoftmaxRows { a: Var, scale: f64 },
    LayerNorm { a: Var, inv_std: Vec<f64> },
    ConcatCols { a: Var, b: Var },
    MeanRows { a: Var },
    BroadcastRows { a: Var },
    GatherRows { a: Var, idx: Vec<usize> },
    Conv3x3 {
        input: Var,
        kernel: Var,
        height: usize,
        width: usize,
        at: Vec<usize>,
        patches: Option<Matrix>,
    },
    CrossEntropy { logits: Var, labels: Vec<Option<usize>>, probs: Matrix, valid: usize },
    Bce { probs: Var, label: f64 },
    Mean { a: Var },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Clone)]
enum Trainable {
    All,
    Only(HashSet<ParamId>),
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    bound_order: Vec<ParamId>,
    trainable: Trainable,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    /// Every bound parameter is trainable.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bound: HashMap::new(),
            bound_order: Vec::new(),
            trainable: Trainable::All,
        }
    }

    /// Only the listed parameters receive gradients.
    pub fn with_trainable(ids: &[ParamId]) -> Self {
        Tape {
            trainable: Trainable::Only(ids.iter().copied().collect()),
            ..Tape::new()
        }
    }

    /// No parameter receives gradients.
    pub fn inference() -> Self {
        Self::with_trainable(&[])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a stored parameter; repeated binds of the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let trainable = match &self.trainable {
            Trainable::All => true,
            Trainable::Only(set) => set.contains(&id),
        };
        let v = self.push(store.value(id).clone(), Op::Param, trainable);
        self.bound.insert(id, v);
        self.bound_order.push(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a)·op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = matmul_t(self.value(a), ta, self.value(b), tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn row_compatible(&self, a: Var, row: Var, what: &str) -> Result<()> {
        let (sa, sr) = (self.value(a).shape(), self.value(row).shape());
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Error::shape(format!("{what}: row {sr:?} for matrix {sa:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Adds a 1×C row to every row of an N×C matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_compatible(a, row, "add_row")?;
        let mut value = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow { a, row }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut value = self.value(a).clone();
        for (x, y) in value.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *x *= y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    /// Multiplies every row of an N×C matrix elementwise by a 1×C row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_compatible(a, row, "mul_row")?;
        let mut value = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..value.rows() {
            for (x, s) in value.row_mut(i).iter_mut().zip(&r) {
                *x *= s;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::MulRow { a, row }, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale { a, s }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu { a }, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid { a }, rg)
    }

    /// Row-wise `softmax(a[r] / scale)`.
    pub fn softmax_rows(&mut self, a: Var, scale: f64) -> Result<Var> {
        let value = super::softmax_rows(self.value(a), scale)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SoftmaxRows { a, scale }, rg))
    }

    /// Per-row standardisation to zero mean, unit variance over the columns.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (n, f) = x.shape();
        let mut value = x.clone();
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(value, Op::LayerNorm { a, inv_std }, rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (self.value(a), self.value(b));
        if xa.rows() != xb.rows() {
            return Err(Error::shape(format!(
                "concat_cols: {:?} vs {:?}",
                xa.shape(),
                xb.shape()
            )));
        }
        let (n, ca, cb) = (xa.rows(), xa.cols(), xb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(xa.row(r));
            data.extend_from_slice(xb.row(r));
        }
        let value = Matrix::from_vec(n, ca + cb, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols { a, b }, rg))
    }

    /// Column means as a 1×C row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::shape("mean_rows of an empty matrix"));
        }
        let mut out = Matrix::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.scale_in_place(1.0 / x.rows() as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MeanRows { a }, rg))
    }

    /// Repeats a 1×C row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(Error::shape(format!("broadcast_rows of {:?}", x.shape())));
        }
        let mut data = Vec::with_capacity(n * x.cols());
        for _ in 0..n {
            data.extend_from_slice(x.as_slice());
        }
        let value = Matrix::from_vec(n, x.cols(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::BroadcastRows { a }, rg))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::shape(format!("gather row {bad} of {} rows", x.rows())));
        }
        let value = x.select_rows(idx);
        let rg = self.rg(a);
        Ok(self.push(
            value,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// 3×3 convolution, stride 1, zero padding, evaluated at the output pixels `at`.
    ///
    /// `input` is an (H·W)×Cin feature map in row-major pixel order and
    /// `kernel` is (9·Cin)×Cout with row index `(ky·3 + kx)·Cin + c`.
    /// The result has one row per entry of `at`.
    pub fn conv3x3(
        &mut self,
        input: Var,
        kernel: Var,
        height: usize,
        width: usize,
        at: &[usize],
    ) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let cin = x.cols();
        if x.rows() != height * width {
            return Err(Error::shape(format!(
                "conv input has {} rows for a {height}x{width} map",
                x.rows()
            )));
        }
        if k.rows() != 9 * cin {
            return Err(Error::shape(format!(
                "conv kernel {:?} for {cin} input channels",
                k.shape()
            )));
        }
        if let Some(&bad) = at.iter().find(|&&p| p >= height * width) {
            return Err(Error::shape(format!("conv output pixel {bad} out of range")));
        }
        let patches = im2col(x, height, width, at);
        let value = matmul_t(&patches, false, k, false)?;
        let rg_k = self.rg(kernel);
        let rg = rg_k || self.rg(input);
        Ok(self.push(
            value,
            Op::Conv3x3 {
                input,
                kernel,
                height,
                width,
                at: at.to_vec(),
                patches: rg_k.then_some(patches),
            },
            rg,
        ))
    }

    /// Mean cross-entropy of row-wise softmax(logits) over non-ignored labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[Option<usize>]) -> Result<Var> {
        let x = self.value(logits);
        let (n, c) = x.shape();
        if labels.len() != n {
            return Err(Error::shape(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        let mut probs = x.clone();
        let mut total = 0.0;
        let mut valid = 0usize;
        for (r, label) in labels.iter().enumerate() {
            let row = probs.row_mut(r);
            softmax_in_place(row, 1.0);
            if let Some(l) = *label {
                if l >= c {
                    return Err(Error::shape(format!("label {l} for {c} classes")));
                }
                // log-sum-exp route keeps the loss finite for saturated rows
                let xr = x.row(r);
                let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + xr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - xr[l];
                valid += 1;
            }
        }
        if valid == 0 {
            return Err(Error::NoValidPoints);
        }
        let value = Matrix::from_vec(1, 1, vec![total / valid as f64])?;
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                valid,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities against a constant label.
    pub fn bce(&mut self, probs: Var, label: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.is_empty() {
            return Err(Error::shape("bce of an empty probability vector"));
        }
        let mut total = 0.0;
        for &v in p.as_slice() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite probability {v}")));
            }
            let c = v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total -= label * c.ln() + (1.0 - label) * (1.0 - c).ln();
        }
        let value = Matrix::from_vec(1, 1, vec![total / p.len() as f64])?;
        let rg = self.rg(probs);
        Ok(self.push(value, Op::Bce { probs, label }, rg))
    }

    /// Mean of all entries as a 1×1 value.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean of an empty matrix"));
        }
        let value = Matrix::from_vec(1, 1, vec![x.as_slice().iter().sum::<f64>() / x.len() as f64])?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Mean { a }, rg))
    }

    /// Reverse sweep from a 1×1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let send = |v: Var, d: Matrix, grads: &mut [Option<Matrix>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let da = if *ta {
                        matmul_t(vb, *tb, g, true)?
                    } else {
                        matmul_t(g, false, vb, !*tb)?
                    };
                    send(*a, da, grads);
                }
                if self.rg(*b) {
                    let db = if *tb {
                        matmul_t(g, true, va, *ta)?
                    } else {
                        matmul_t(va, !*ta, g, false)?
                    };
                    send(*b, db, grads);
                }
            }
            Op::Add { a, b } => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::AddRow { a, row } => {
                send(*a, g.clone(), grads);
                if self.rg(*row) {
                    send(*row, column_sums(g), grads);
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    send(*a, hadamard(g, self.value(*b)), grads);
                }
                if self.rg(*b) {
                    send(*b, hadamard(g, self.value(*a)), grads);
                }
            }
            Op::MulRow { a, row } => {
                let r = self.value(*row).as_slice();
                if self.rg(*a) {
                    let mut da = g.clone();
                    for i in 0..da.rows() {
                        for (x, s) in da.row_mut(i).iter_mut().zip(r) {
                            *x *= s;
                        }
                    }
                    send(*a, da, grads);
                }
                if self.rg(*row) {
                    send(*row, column_sums(&hadamard(g, self.value(*a))), grads);
                }
            }
            Op::Scale { a, s } => send(*a, g.map(|x| x * s), grads),
            Op::Relu { a } => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, &xv) in d.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                send(*a, d, grads);
            }
            Op::Sigmoid { a } => {
                let mut d = g.clone();
                for (dv, &y) in d.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                    *dv *= y * (1.0 - y);
                }
                send(*a, d, grads);
            }
            Op::SoftmaxRows { a, scale } => {
                let y = &node.value;
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (dv, &yv) in d.row_mut(r).iter_mut().zip(yr) {
                        *dv = yv * (*dv - dot) / scale;
                    }
                }
                send(*a, d, grads);
            }
            Op::LayerNorm { a, inv_std } => {
                let xhat = &node.value;
                let f = xhat.cols() as f64;
                let mut d = g.clone();
                for r in 0..xhat.rows() {
                    let xr = xhat.row(r);
                    let gr = g.row(r);
                    let sum_g: f64 = gr.iter().sum();
                    let sum_gx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                    let inv = inv_std[r];
                    for ((dv, &gv), &xv) in d.row_mut(r).iter_mut().zip(gr).zip(xr) {
                        *dv = inv / f * (f * gv - sum_g - xv * sum_gx);
                    }
                }
                send(*a, d, grads);
            }
            Op::ConcatCols { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let n = g.rows();
                if self.rg(*a) {
                    let mut da = Matrix::zeros(n, ca);
                    for r in 0..n {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    send(*a, da, grads);
                }
                if self.rg(*b) {
                    let mut db = Matrix::zeros(n, cb);
                    for r in 0..n {
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    send(*b, db, grads);
                }
            }
            Op::MeanRows { a } => {
                let n = self.value(*a).rows();
                let gr: Vec<f64> = g.as_slice().iter().map(|v| v / n as f64).collect();
                let mut d = Matrix::zeros(n, gr.len());
                for r in 0..n {
                    d.row_mut(r).copy_from_slice(&gr);
                }
                send(*a, d, grads);
            }
            Op::BroadcastRows { a } => send(*a, column_sums(g), grads),
            Op::GatherRows { a, idx } => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (dv, gv) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *dv += gv;
                    }
                }
                send(*a, d, grads);
            }
            Op::Conv3x3 {
                input,
                kernel,
                height,
                width,
                at,
                patches,
            } => {
                if let Some(p) = patches {
                    send(*kernel, matmul_t(p, true, g, false)?, grads);
                }
                if self.rg(*input) {
                    let k = self.value(*kernel);
                    let dp = matmul_t(g, false, k, true)?;
                    let cin = self.value(*input).cols();
                    let d = col2im(&dp, *height, *width, cin, at);
                    send(*input, d, grads);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                valid,
            } => {
                let scale = g.as_slice()[0] / *valid as f64;
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                for (r, label) in labels.iter().enumerate() {
                    if let Some(l) = *label {
                        let row = d.row_mut(r);
                        row.copy_from_slice(probs.row(r));
                        row[l] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                }
                send(*logits, d, grads);
            }
            Op::Bce { probs, label } => {
                let p = self.value(*probs);
                let scale = g.as_slice()[0] / p.len() as f64;
                let d = p.map(|v| {
                    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&v) {
                        0.0
                    } else {
                        scale * (-label / v + (1.0 - label) / (1.0 - v))
                    }
                });
                send(*probs, d, grads);
            }
            Op::Mean { a } => {
                let x = self.value(*a);
                let s = g.as_slice()[0] / x.len() as f64;
                send(*a, Matrix::filled(x.rows(), x.cols(), s), grads);
            }
        }
        Ok(())
    }

    /// Adds this sweep's parameter gradients into the store.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for &id in &self.bound_order {
            let v = self.bound[&id];
            if !self.rg(v) {
                continue;
            }
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    /// Gradient of a bound parameter, if it was reached by the sweep.
    pub fn param_grad<'g>(&self, grads: &'g Gradients, id: ParamId) -> Option<&'g Matrix> {
        self.bound.get(&id).and_then(|&v| grads.get(v))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x *= y;
    }
    out
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

fn im2col(x: &Matrix, height: usize, width: usize, at: &[usize]) -> Matrix {
    let cin = x.cols();
    let mut patches = Matrix::zeros(at.len(), 9 * cin);
    for (r, &p) in at.iter().enumerate() {
        let (py, px) = ((p / width) as isize, (p % width) as isize);
        let row = patches.row_mut(r);
        for ky in 0..3isize {
            let y = py + ky - 1;
            if y < 0 || y >= height as isize {
                continue;
            }
            for kx in 0..3isize {
                let xx = px + kx - 1;
                if xx < 0 || xx >= width as isize {
                    continue;
                }
                let src = y as usize * width + xx as usize;
                let off = (ky as usize * 3 + kx as usize) * cin;
                row[off..off + cin].copy_from_slice(x.row(src));
            }
        }
    }
    patches
}

fn col2im(dp: &Matrix, height: usize, width: usize, cin: usize, at: &[usize]) -> Matrix {
    let mut d = Matrix::zeros(height * width, cin);
    for (r, &p) in at.iter().enumerate() {
        let (py, px) = ((p / width) as isize, (p % width) as isize);
        let row = dp.row(r);
        for ky in 0..3isize {
            let y = py + ky - 1;
            if y < 0 || y >= height as isize {
                continue;
            }
            for kx in 0..3isize {
                let xx = px + kx - 1;
                if xx < 0 || xx >= width as isize {
                    continue;
                }
                let dst = y as usize * width + xx as usize;
                let off = (ky as usize * 3 + kx as usize) * cin;
                for (dv, gv) in d.row_mut(dst).iter_mut().zip(&row[off..off + cin]) {
                    *dv += gv;
                }
            }
        }
    }
    d
}
