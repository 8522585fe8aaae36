//! Tape-based reverse-mode differentiation over [`DenseArray`] values.
//!
//! Every forward op appends a node to the [`Tape`]; node ids increase in
//! creation order, so walking the tape backwards from the loss is a valid
//! topological order. Parameters enter the tape through [`Tape::param`] and
//! their gradients are accumulated into the [`ParameterStore`] by
//! [`Tape::backward`].

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, DenseArray};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Scale(Var, f64),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    WhereRows(Var, Var, Vec<bool>),
    Dropout(Var, Vec<f64>),
    Reshape(Var),
    RepeatBatch(Var),
    SegmentMean(Var, Vec<Vec<usize>>),
    Sum(Var),
    BceWithLogits(Var, Vec<f64>),
    L1(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Arc<DenseArray>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    params: HashMap<String, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Broadcast index map from an `a`-shaped element to the matching `b` element.
#[derive(Clone, Copy)]
struct Broadcast {
    batch: usize,
    rows: usize,
    cols: usize,
    b_batch: usize,
    b_rows: usize,
}

impl Broadcast {
    fn new(op: &'static str, a: &DenseArray, b: &DenseArray) -> Result<Self> {
        let (ab, ar, ac) = a.dims3();
        let (bb, br, bc) = b.dims3();
        let ok = bc == ac && (bb == ab || bb == 1) && (br == ar || br == 1);
        if !ok {
            return Err(Error::dim(op, a.shape(), b.shape()));
        }
        Ok(Self {
            batch: ab,
            rows: ar,
            cols: ac,
            b_batch: bb,
            b_rows: br,
        })
    }

    fn b_index(&self, bi: usize, i: usize, j: usize) -> usize {
        let bb = if self.b_batch == 1 { 0 } else { bi };
        let br = if self.b_rows == 1 { 0 } else { i };
        (bb * self.b_rows + br) * self.cols + j
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let mut ai = 0;
        for bi in 0..self.batch {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    f(ai, self.b_index(bi, i, j));
                    ai += 1;
                }
            }
        }
    }
}

fn batched_shape(a: &DenseArray, b: &DenseArray, batch: usize, rows: usize, cols: usize) -> Vec<usize> {
    if a.rank() == 3 || b.rank() == 3 {
        vec![batch, rows, cols]
    } else {
        vec![rows, cols]
    }
}

fn with_cols(shape: &[usize], cols: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    if s.len() == 1 {
        s = vec![1, cols];
    } else {
        *s.last_mut().unwrap() = cols;
    }
    s
}

impl Tape {
    /// A tape that records operations for a later backward pass.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
            params: HashMap::new(),
        }
    }

    /// A tape that only evaluates; `backward` on it fails.
    pub fn no_grad() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseArray, op: Op, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&mut self, value: Arc<DenseArray>, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.record;
        let op = if requires_grad { op } else { Op::Leaf };
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

    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Loads a named parameter; repeated loads of the same name share a node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store.param(name)?;
        let v = self.push_arc(p.shared_value(), Op::Param(name.to_string()), p.trainable());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ab, r, k) = av.dims3();
        let (bb, k2, n) = bv.dims3();
        if k != k2 || !(bb == ab || bb == 1) {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; ab * r * n];
        let (ad, bd) = (av.data(), bv.data());
        for bi in 0..ab {
            let bo = if bb == 1 { 0 } else { bi * k * n };
            gemm_acc(
                &ad[bi * r * k..(bi + 1) * r * k],
                &bd[bo..bo + k * n],
                &mut out[bi * r * n..(bi + 1) * r * n],
                r,
                k,
                n,
            );
        }
        let shape = batched_shape(av, bv, ab, r, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(DenseArray::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` per batch.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ab, r, k) = av.dims3();
        let (bb, s, k2) = bv.dims3();
        if k != k2 || !(bb == ab || bb == 1) {
            return Err(Error::dim("matmul_nt", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; ab * r * s];
        let (ad, bd) = (av.data(), bv.data());
        for bi in 0..ab {
            let bo = if bb == 1 { 0 } else { bi * s * k };
            gemm_nt_acc(
                &ad[bi * r * k..(bi + 1) * r * k],
                &bd[bo..bo + s * k],
                &mut out[bi * r * s..(bi + 1) * r * s],
                r,
                k,
                s,
            );
        }
        let shape = batched_shape(av, bv, ab, r, s);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(DenseArray::new(shape, out)?, Op::MatMulNt(a, b), rg))
    }

    /// Elementwise sum; `b` may broadcast over rows and/or batch.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bc = Broadcast::new("add", av, bv)?;
        let mut out = av.data().to_vec();
        let bd = bv.data();
        bc.for_each(|ai, bi| out[ai] += bd[bi]);
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(DenseArray::new(shape, out)?, Op::Add(a, b), rg))
    }

    /// Elementwise product; `b` may broadcast over rows and/or batch.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bc = Broadcast::new("mul", av, bv)?;
        let mut out = av.data().to_vec();
        let bd = bv.data();
        bc.for_each(|ai, bi| out[ai] *= bd[bi]);
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(DenseArray::new(shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Max-stabilized softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let shape = av.shape().to_vec();
        let rg = self.rg(a);
        self.push(DenseArray::new(shape, out).expect("same shape"), Op::SoftmaxRows(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Mean over the row axis of each batch entry: `(b, r, c) → (b, 1, c)`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (b, r, c) = av.dims3();
        let mut out = vec![0.0; b * c];
        let d = av.data();
        for bi in 0..b {
            for i in 0..r {
                let row = &d[(bi * r + i) * c..(bi * r + i + 1) * c];
                for (o, x) in out[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        let shape = if av.rank() == 3 { vec![b, 1, c] } else { vec![1, c] };
        let rg = self.rg(a);
        self.push(DenseArray::new(shape, out).expect("valid"), Op::MeanRows(a), rg)
    }

    /// Concatenates along the last axis; all inputs share batch and rows.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols of nothing".into()))?;
        let (b, r, _) = self.value(*first).dims3();
        let mut total = 0;
        for &p in parts {
            let (pb, pr, pc) = self.value(p).dims3();
            if pb != b || pr != r {
                return Err(Error::dim("concat_cols", self.value(*first).shape(), self.value(p).shape()));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(b * r * total);
        for row in 0..b * r {
            for &p in parts {
                let pv = self.value(p);
                let pc = pv.cols();
                out.extend_from_slice(&pv.data()[row * pc..(row + 1) * pc]);
            }
        }
        let shape = with_cols(self.value(*first).shape(), total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(DenseArray::new(shape, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if len == 0 || start + len > c {
            return Err(Error::Argument(format!(
                "slice {start}..{} out of {c} columns",
                start + len
            )));
        }
        let out: Vec<f64> = av
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let shape = with_cols(av.shape(), len);
        let rg = self.rg(a);
        Ok(self.push(DenseArray::new(shape, out)?, Op::SliceCols(a, start), rg))
    }

    /// Stacks 2-D inputs along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of nothing".into()))?;
        let c = self.value(*first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != c || pv.batch() != 1 {
                return Err(Error::dim("concat_rows", self.value(*first).shape(), pv.shape()));
            }
            rows += pv.rows();
            out.extend_from_slice(pv.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(DenseArray::matrix(rows, c, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows of a 2-D table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (tb, tr, c) = tv.dims3();
        if tb != 1 {
            return Err(Error::Argument("gather_rows needs a 2-D table".into()));
        }
        if indices.is_empty() {
            return Err(Error::Argument("gather_rows with no indices".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= tr {
                return Err(Error::Argument(format!("row index {i} out of {tr}")));
            }
            out.extend_from_slice(tv.row_slice(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            DenseArray::matrix(indices.len(), c, out)?,
            Op::GatherRows(table, indices.to_vec()),
            rg,
        ))
    }

    /// Row `i` of the result is row `i` of `a` where `keep[i]`, else the single row `fallback`.
    pub fn where_rows(&mut self, a: Var, fallback: Var, keep: &[bool]) -> Result<Var> {
        let (av, fv) = (self.value(a), self.value(fallback));
        let (ab, r, c) = av.dims3();
        if ab != 1 || r != keep.len() || fv.len() != c {
            return Err(Error::dim("where_rows", av.shape(), fv.shape()));
        }
        let mut out = av.data().to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                out[i * c..(i + 1) * c].copy_from_slice(fv.data());
            }
        }
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(fallback);
        Ok(self.push(DenseArray::new(shape, out)?, Op::WhereRows(a, fallback, keep.to_vec()), rg))
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Argument(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let av = self.value(a);
        let mask: Vec<f64> = (0..av.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(DenseArray::new(shape, out)?, Op::Dropout(a, mask), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Tiles a 2-D matrix into a `(batch, r, c)` stack.
    pub fn repeat_batch(&mut self, a: Var, batch: usize) -> Result<Var> {
        let av = self.value(a);
        let (ab, r, c) = av.dims3();
        if ab != 1 || batch == 0 {
            return Err(Error::Argument("repeat_batch needs a 2-D input and batch > 0".into()));
        }
        let out = av.data().repeat(batch);
        let rg = self.rg(a);
        Ok(self.push(DenseArray::new(vec![batch, r, c], out)?, Op::RepeatBatch(a), rg))
    }

    /// Row `s` of the result is the mean of rows `segments[s]` of `a`
    /// (a zero row for an empty segment).
    pub fn segment_mean(&mut self, a: Var, segments: Vec<Vec<usize>>) -> Result<Var> {
        let av = self.value(a);
        let (ab, r, c) = av.dims3();
        if ab != 1 || segments.is_empty() {
            return Err(Error::Argument("segment_mean needs a 2-D input and ≥ 1 segment".into()));
        }
        let mut out = vec![0.0; segments.len() * c];
        for (s, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                continue;
            }
            let o = &mut out[s * c..(s + 1) * c];
            for &i in seg {
                if i >= r {
                    return Err(Error::Argument(format!("segment row {i} out of {r}")));
                }
                for (ov, x) in o.iter_mut().zip(av.row_slice(i)) {
                    *ov += x;
                }
            }
            let inv = 1.0 / seg.len() as f64;
            o.iter_mut().for_each(|x| *x *= inv);
        }
        let rows = segments.len();
        let rg = self.rg(a);
        Ok(self.push(DenseArray::matrix(rows, c, out)?, Op::SegmentMean(a, segments), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(DenseArray::scalar(s), Op::Sum(a), rg)
    }

    /// Mean binary cross-entropy of `logits` against `targets ∈ {0, 1}`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(Error::dim("bce_with_logits", lv.shape(), &[targets.len()]));
        }
        let n = targets.len() as f64;
        let loss: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        Ok(self.push(DenseArray::scalar(loss), Op::BceWithLogits(logits, targets.to_vec()), rg))
    }

    /// Mean absolute error of `pred` against `targets`.
    pub fn l1_loss(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != targets.len() {
            return Err(Error::dim("l1_loss", pv.shape(), &[targets.len()]));
        }
        let n = targets.len() as f64;
        let loss: f64 = pv.data().iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
        let rg = self.rg(pred);
        Ok(self.push(DenseArray::scalar(loss), Op::L1(pred, targets.to_vec()), rg))
    }

    /// Linear layer `x · w (+ b)` with parameters looked up by name.
    pub fn linear(&mut self, store: &ParameterStore, x: Var, weight: &str, bias: Option<&str>) -> Result<Var> {
        let w = self.param(store, weight)?;
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => {
                let b = self.param(store, b)?;
                self.add(y, b)
            }
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar `loss`, accumulating (`+=`) parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        if !self.record {
            return Err(Error::Argument("backward on a no-grad tape".into()));
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<DenseArray>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &DenseArray,
        grads: &mut [Option<DenseArray>],
        store: &mut ParameterStore,
    ) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(name) => store.accumulate_grad(name, g)?,
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (ab, r, k) = av.dims3();
                let (bb, _, n) = bv.dims3();
                let gd = g.data();
                if self.rg(*a) {
                    let mut da = vec![0.0; ab * r * k];
                    for bi in 0..ab {
                        let bo = if bb == 1 { 0 } else { bi * k * n };
                        // dA = dC · Bᵀ
                        gemm_nt_acc(
                            &gd[bi * r * n..(bi + 1) * r * n],
                            &bv.data()[bo..bo + k * n],
                            &mut da[bi * r * k..(bi + 1) * r * k],
                            r,
                            n,
                            k,
                        );
                    }
                    self.acc(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; bb * k * n];
                    for bi in 0..ab {
                        let bo = if bb == 1 { 0 } else { bi * k * n };
                        // dB = Aᵀ · dC
                        gemm_tn_acc(
                            &av.data()[bi * r * k..(bi + 1) * r * k],
                            &gd[bi * r * n..(bi + 1) * r * n],
                            &mut db[bo..bo + k * n],
                            r,
                            k,
                            n,
                        );
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (ab, r, k) = av.dims3();
                let (bb, s, _) = bv.dims3();
                let gd = g.data();
                if self.rg(*a) {
                    let mut da = vec![0.0; ab * r * k];
                    for bi in 0..ab {
                        let bo = if bb == 1 { 0 } else { bi * s * k };
                        // dA = dC · B
                        gemm_acc(
                            &gd[bi * r * s..(bi + 1) * r * s],
                            &bv.data()[bo..bo + s * k],
                            &mut da[bi * r * k..(bi + 1) * r * k],
                            r,
                            s,
                            k,
                        );
                    }
                    self.acc(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; bb * s * k];
                    for bi in 0..ab {
                        let bo = if bb == 1 { 0 } else { bi * s * k };
                        // dB = dCᵀ · A
                        gemm_tn_acc(
                            &gd[bi * r * s..(bi + 1) * r * s],
                            &av.data()[bi * r * k..(bi + 1) * r * k],
                            &mut db[bo..bo + s * k],
                            r,
                            s,
                            k,
                        );
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.data().to_vec());
                }
                if self.rg(*b) {
                    let bv = self.value(*b);
                    let bc = Broadcast::new("add", self.value(*a), bv)?;
                    let mut db = vec![0.0; bv.len()];
                    let gd = g.data();
                    bc.for_each(|ai, bi| db[bi] += gd[ai]);
                    self.acc(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bc = Broadcast::new("mul", av, bv)?;
                let gd = g.data();
                if self.rg(*a) {
                    let mut da = vec![0.0; av.len()];
                    let bd = bv.data();
                    bc.for_each(|ai, bi| da[ai] = gd[ai] * bd[bi]);
                    self.acc(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; bv.len()];
                    let ad = av.data();
                    bc.for_each(|ai, bi| db[bi] += gd[ai] * ad[ai]);
                    self.acc(grads, *b, db);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da = g.data().iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                self.acc(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = g.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.acc(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut da = vec![0.0; y.len()];
                for ((drow, yrow), grow) in da.chunks_mut(c).zip(y.data().chunks(c)).zip(g.data().chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for ((d, y), g) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = y * (g - dot);
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::Scale(a, s) => {
                let da = g.data().iter().map(|x| x * s).collect();
                self.acc(grads, *a, da);
            }
            Op::MeanRows(a) => {
                let (b, r, c) = self.value(*a).dims3();
                let inv = 1.0 / r as f64;
                let mut da = vec![0.0; b * r * c];
                for bi in 0..b {
                    let grow = &g.data()[bi * c..(bi + 1) * c];
                    for i in 0..r {
                        for (d, gv) in da[(bi * r + i) * c..(bi * r + i + 1) * c].iter_mut().zip(grow) {
                            *d = gv * inv;
                        }
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(rows * pc);
                        for row in g.data().chunks(total) {
                            dp.extend_from_slice(&row[offset..offset + pc]);
                        }
                        self.acc(grads, p, dp);
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let c = av.cols();
                let len = g.cols();
                let mut da = vec![0.0; av.len()];
                for (drow, grow) in da.chunks_mut(c).zip(g.data().chunks(len)) {
                    drow[*start..*start + len].copy_from_slice(grow);
                }
                self.acc(grads, *a, da);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        self.acc(grads, p, g.data()[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::GatherRows(table, indices) => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut dt = vec![0.0; tv.len()];
                for (k, &i) in indices.iter().enumerate() {
                    for (d, gv) in dt[i * c..(i + 1) * c].iter_mut().zip(&g.data()[k * c..(k + 1) * c]) {
                        *d += gv;
                    }
                }
                self.acc(grads, *table, dt);
            }
            Op::WhereRows(a, fallback, keep) => {
                let c = g.cols();
                if self.rg(*a) {
                    let mut da = g.data().to_vec();
                    for (i, &k) in keep.iter().enumerate() {
                        if !k {
                            da[i * c..(i + 1) * c].iter_mut().for_each(|x| *x = 0.0);
                        }
                    }
                    self.acc(grads, *a, da);
                }
                if self.rg(*fallback) {
                    let mut df = vec![0.0; c];
                    for (i, &k) in keep.iter().enumerate() {
                        if !k {
                            for (d, gv) in df.iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                                *d += gv;
                            }
                        }
                    }
                    self.acc(grads, *fallback, df);
                }
            }
            Op::Dropout(a, mask) => {
                let da = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.acc(grads, *a, da);
            }
            Op::Reshape(a) => self.acc(grads, *a, g.data().to_vec()),
            Op::RepeatBatch(a) => {
                let n = self.value(*a).len();
                let mut da = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (d, gv) in da.iter_mut().zip(chunk) {
                        *d += gv;
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::SegmentMean(a, segments) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut da = vec![0.0; av.len()];
                for (s, seg) in segments.iter().enumerate() {
                    if seg.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / seg.len() as f64;
                    let grow = &g.data()[s * c..(s + 1) * c];
                    for &i in seg {
                        for (d, gv) in da[i * c..(i + 1) * c].iter_mut().zip(grow) {
                            *d += gv * inv;
                        }
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, vec![g.data()[0]; n]);
            }
            Op::BceWithLogits(logits, targets) => {
                let n = targets.len() as f64;
                let scale = g.data()[0] / n;
                let da = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                    .collect();
                self.acc(grads, *logits, da);
            }
            Op::L1(pred, targets) => {
                let n = targets.len() as f64;
                let scale = g.data()[0] / n;
                let da = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &t)| {
                        let d = p - t;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.acc(grads, *pred, da);
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<DenseArray>], v: Var, delta: Vec<f64>) {
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                    *e += d;
                }
            }
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(DenseArray::new(shape, delta).expect("gradient matches value shape"));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
