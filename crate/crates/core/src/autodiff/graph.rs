//! Define-by-run reverse-mode tape.
//!
//! Every forward op appends one node holding its computed value and the
//! handles of its inputs. `backward` walks the nodes once in reverse order.
//! Nodes are only ever appended, so inputs always precede their consumers.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::{AutodiffError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    Bmm,
    Add,
    Mul,
    AddBias,
    Scale,
    Sigmoid,
    Tanh,
    Concat,
    Slice,
    Reshape,
    Permute,
    Softmax,
    Gather,
    Stack,
    Select,
    Blend,
    CrossEntropy,
    Sum,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Param => "param",
            OpKind::MatMul => "matmul",
            OpKind::Bmm => "bmm",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::AddBias => "add_bias",
            OpKind::Scale => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute",
            OpKind::Softmax => "softmax",
            OpKind::Gather => "gather",
            OpKind::Stack => "stack",
            OpKind::Select => "select",
            OpKind::Blend => "blend",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::Sum => "sum",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        const ALL: [OpKind; 21] = [
            OpKind::Leaf,
            OpKind::Param,
            OpKind::MatMul,
            OpKind::Bmm,
            OpKind::Add,
            OpKind::Mul,
            OpKind::AddBias,
            OpKind::Scale,
            OpKind::Sigmoid,
            OpKind::Tanh,
            OpKind::Concat,
            OpKind::Slice,
            OpKind::Reshape,
            OpKind::Permute,
            OpKind::Softmax,
            OpKind::Gather,
            OpKind::Stack,
            OpKind::Select,
            OpKind::Blend,
            OpKind::CrossEntropy,
            OpKind::Sum,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Multiplies the upstream gradient entering every node of one op kind by a
/// constant during `backward`. Used to verify that the gradient checker
/// catches a broken backward rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultInjection {
    pub op: OpKind,
    pub factor: f64,
}

enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
    },
    Bmm {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddBias {
        a: Var,
        bias: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Sigmoid {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        a: Var,
        start: usize,
        end: usize,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    Gather {
        table: Var,
        indices: Rc<[usize]>,
    },
    Stack {
        parts: Vec<Var>,
    },
    Select {
        a: Var,
        index: usize,
    },
    Blend {
        new: Var,
        old: Var,
        keep_new: Rc<[bool]>,
    },
    CrossEntropy {
        logits: Var,
        targets: Rc<[usize]>,
        ignore: Option<usize>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum {
        a: Var,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param => OpKind::Param,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Bmm { .. } => OpKind::Bmm,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Gather { .. } => OpKind::Gather,
            Op::Stack { .. } => OpKind::Stack,
            Op::Select { .. } => OpKind::Select,
            Op::Blend { .. } => OpKind::Blend,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Sum { .. } => OpKind::Sum,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape. Build a fresh one for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    fault: Option<FaultInjection>,
}

fn mismatch(op: OpKind, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
fn gemm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
fn gemm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Maps every flat output index of a permutation to its flat input index.
fn permute_index_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let numel: usize = in_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        let src: usize = idx
            .iter()
            .zip(perm)
            .map(|(&i, &p)| i * in_strides[p])
            .sum();
        map.push(src);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: FaultInjection) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn set_fault(&mut self, fault: Option<FaultInjection>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, kind: OpKind, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: kind.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input. Constants still receive gradients, which
    /// makes them usable as probe inputs in gradient tests.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(OpKind::Leaf, value, Op::Leaf)
    }

    /// Records a parameter from the store. Repeated calls for the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let mut value = store.tensor(id).clone();
        value.clear_grad();
        let v = self.push(OpKind::Param, value, Op::Param)?;
        self.params.insert(id, v);
        Ok(v)
    }

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch(OpKind::MatMul, &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.data(a), self.data(b), &mut out, m, k, n);
        self.push(
            OpKind::MatMul,
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b },
        )
    }

    /// Batched product `[B×n×d] · [B×d×m] → [B×n×m]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch(OpKind::Bmm, &sa, &sb));
        }
        let (batch, n, d, m) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * n * m];
        let (da, db) = (self.data(a), self.data(b));
        for bi in 0..batch {
            gemm_acc(
                &da[bi * n * d..(bi + 1) * n * d],
                &db[bi * d * m..(bi + 1) * d * m],
                &mut out[bi * n * m..(bi + 1) * n * m],
                n,
                d,
                m,
            );
        }
        self.push(
            OpKind::Bmm,
            Tensor::from_parts(vec![batch, n, m], out),
            Op::Bmm { a, b },
        )
    }

    fn same_shape(&self, kind: OpKind, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(kind, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(OpKind::Add, a, b)?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(OpKind::Add, Tensor::from_parts(shape, out), Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(OpKind::Mul, a, b)?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(OpKind::Mul, Tensor::from_parts(shape, out), Op::Mul { a, b })
    }

    /// Adds a `[n]` bias to every row of a tensor whose last axis is `n`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(mismatch(OpKind::AddBias, &sa, &sb));
        }
        let n = sb[0];
        let b = self.data(bias);
        let out = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % n])
            .collect();
        self.push(
            OpKind::AddBias,
            Tensor::from_parts(sa, out),
            Op::AddBias { a, bias },
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.data(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(
            OpKind::Scale,
            Tensor::from_parts(shape, out),
            Op::Scale { a, factor },
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(
            OpKind::Sigmoid,
            Tensor::from_parts(shape, out),
            Op::Sigmoid { a },
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(OpKind::Tanh, Tensor::from_parts(shape, out), Op::Tanh { a })
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::EmptyInput {
            op: OpKind::Concat.name(),
        })?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(mismatch(OpKind::Concat, self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(
            OpKind::Concat,
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let w = *sa.last().unwrap();
        if start >= end || end > w {
            return Err(mismatch(OpKind::Slice, &sa, &[start, end]));
        }
        let rows = self.value(a).numel() / w;
        let d = self.data(a);
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&d[r * w + start..r * w + end]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = end - start;
        self.push(
            OpKind::Slice,
            Tensor::from_parts(shape, out),
            Op::Slice { a, start, end },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() || shape.contains(&0) {
            return Err(mismatch(OpKind::Reshape, self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        self.push(
            OpKind::Reshape,
            Tensor::from_parts(shape.to_vec(), data),
            Op::Reshape { a },
        )
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        let valid = perm.len() == sa.len()
            && perm.iter().all(|&p| p < sa.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(mismatch(OpKind::Permute, &sa, perm));
        }
        let map = permute_index_map(&sa, perm);
        let d = self.data(a);
        let out = map.iter().map(|&i| d[i]).collect();
        let shape = perm.iter().map(|&p| sa[p]).collect();
        self.push(
            OpKind::Permute,
            Tensor::from_parts(shape, out),
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(mismatch(OpKind::Permute, self.shape(a), &[]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.masked_softmax(a, axis, None)
    }

    /// Softmax along `axis` with max subtraction. Entries whose mask is
    /// `false` are excluded from the normalisation and come out as exactly 0.
    pub fn masked_softmax(&mut self, a: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(mismatch(OpKind::Softmax, &shape, &[axis]));
        }
        if let Some(m) = mask {
            if m.len() != self.value(a).numel() {
                return Err(mismatch(OpKind::Softmax, &shape, &[m.len()]));
            }
        }
        let (outer, len, inner) = axis_layout(&shape, axis);
        let x = self.data(a);
        let mut out = vec![0.0; x.len()];
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        for o in 0..outer {
            for j in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + j;
                let mut max = f64::NEG_INFINITY;
                for k in 0..len {
                    if keep(idx(k)) {
                        max = max.max(x[idx(k)]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut sum = 0.0;
                for k in 0..len {
                    if keep(idx(k)) {
                        let e = (x[idx(k)] - max).exp();
                        out[idx(k)] = e;
                        sum += e;
                    }
                }
                for k in 0..len {
                    out[idx(k)] /= sum;
                }
            }
        }
        self.push(
            OpKind::Softmax,
            Tensor::from_parts(shape, out),
            Op::Softmax { a, axis },
        )
    }

    /// Rows of a `[R×C]` table selected by index: `[len(indices)×C]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(mismatch(OpKind::Gather, &st, &[indices.len()]));
        }
        if indices.is_empty() {
            return Err(AutodiffError::EmptyInput {
                op: OpKind::Gather.name(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= st[0]) {
            return Err(AutodiffError::IndexOutOfRange {
                op: OpKind::Gather.name(),
                index: bad,
                bound: st[0],
            });
        }
        let c = st[1];
        let d = self.data(table);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        self.push(
            OpKind::Gather,
            Tensor::from_parts(vec![indices.len(), c], out),
            Op::Gather {
                table,
                indices: indices.into(),
            },
        )
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::EmptyInput {
            op: OpKind::Stack.name(),
        })?;
        let s0 = self.shape(first).to_vec();
        let mut out = Vec::with_capacity(parts.len() * self.value(first).numel());
        for &p in parts {
            if self.shape(p) != s0.as_slice() {
                return Err(mismatch(OpKind::Stack, &s0, self.shape(p)));
            }
            out.extend_from_slice(self.data(p));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&s0);
        self.push(
            OpKind::Stack,
            Tensor::from_parts(shape, out),
            Op::Stack {
                parts: parts.to_vec(),
            },
        )
    }

    /// Sub-tensor `a[index]` along the leading axis.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 || index >= sa[0] {
            return Err(mismatch(OpKind::Select, &sa, &[index]));
        }
        let w: usize = sa[1..].iter().product();
        let out = self.data(a)[index * w..(index + 1) * w].to_vec();
        self.push(
            OpKind::Select,
            Tensor::from_parts(sa[1..].to_vec(), out),
            Op::Select { a, index },
        )
    }

    /// Row-wise choice between two equal-shape tensors: row `r` comes from
    /// `new` where `keep_new[r]` holds, otherwise from `old`.
    pub fn blend(&mut self, new: Var, old: Var, keep_new: &[bool]) -> Result<Var> {
        self.same_shape(OpKind::Blend, new, old)?;
        let shape = self.shape(new).to_vec();
        if keep_new.len() != shape[0] {
            return Err(mismatch(OpKind::Blend, &shape, &[keep_new.len()]));
        }
        let w = self.value(new).numel() / shape[0];
        let (dn, dold) = (self.data(new), self.data(old));
        let mut out = Vec::with_capacity(dn.len());
        for (r, &k) in keep_new.iter().enumerate() {
            let src = if k { dn } else { dold };
            out.extend_from_slice(&src[r * w..(r + 1) * w]);
        }
        self.push(
            OpKind::Blend,
            Tensor::from_parts(shape, out),
            Op::Blend {
                new,
                old,
                keep_new: keep_new.into(),
            },
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` `[N×V]`. Rows whose target equals `ignore` contribute
    /// nothing; if every row is ignored the loss is 0.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(mismatch(OpKind::CrossEntropy, &sl, &[targets.len()]));
        }
        let v = sl[1];
        if let Some(&bad) = targets
            .iter()
            .find(|&&t| t >= v && Some(t) != ignore)
        {
            return Err(AutodiffError::IndexOutOfRange {
                op: OpKind::CrossEntropy.name(),
                index: bad,
                bound: v,
            });
        }
        let x = self.data(logits);
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                continue;
            }
            let row = &x[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let log_sum = sum.ln();
            for (p, &z) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (z - max).exp() / sum;
            }
            total -= row[t] - max - log_sum;
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            OpKind::CrossEntropy,
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.into(),
                ignore,
                probs,
                count,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push(OpKind::Sum, Tensor::scalar(s), Op::Sum { a })
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(f) = self.fault {
                if f.op == node.op.kind() {
                    g.iter_mut().for_each(|x| *x *= f.factor);
                }
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |buf| gemm_nt_acc(g, db, buf, m, k, n));
                acc(*b, &mut |buf| gemm_tn_acc(da, g, buf, m, k, n));
            }
            Op::Bmm { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, n, d, m) = (sa[0], sa[1], sa[2], sb[2]);
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |buf| {
                    for bi in 0..batch {
                        gemm_nt_acc(
                            &g[bi * n * m..(bi + 1) * n * m],
                            &db[bi * d * m..(bi + 1) * d * m],
                            &mut buf[bi * n * d..(bi + 1) * n * d],
                            n,
                            d,
                            m,
                        );
                    }
                });
                acc(*b, &mut |buf| {
                    for bi in 0..batch {
                        gemm_tn_acc(
                            &da[bi * n * d..(bi + 1) * n * d],
                            &g[bi * n * m..(bi + 1) * n * m],
                            &mut buf[bi * d * m..(bi + 1) * d * m],
                            n,
                            d,
                            m,
                        );
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    acc(v, &mut |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    });
                }
            }
            Op::Mul { a, b } => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(db) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(da) {
                        *o += x * y;
                    }
                });
            }
            Op::AddBias { a, bias } => {
                acc(*a, &mut |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                });
                let n = self.shape(*bias)[0];
                acc(*bias, &mut |buf| {
                    for (i, x) in g.iter().enumerate() {
                        buf[i % n] += x;
                    }
                });
            }
            Op::Scale { a, factor } => {
                acc(*a, &mut |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, x)| *o += x * factor);
                });
            }
            Op::Sigmoid { a } => {
                let y = node.value.data();
                acc(*a, &mut |buf| {
                    for ((o, x), s) in buf.iter_mut().zip(g).zip(y) {
                        *o += x * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh { a } => {
                let y = node.value.data();
                acc(*a, &mut |buf| {
                    for ((o, x), t) in buf.iter_mut().zip(g).zip(y) {
                        *o += x * (1.0 - t * t);
                    }
                });
            }
            Op::Concat { parts } => {
                let total = *node.value.shape().last().unwrap();
                let rows = node.value.numel() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    acc(p, &mut |buf| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (o, x) in buf[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { a, start, end } => {
                let w = *self.shape(*a).last().unwrap();
                let sw = end - start;
                let rows = node.value.numel() / sw;
                acc(*a, &mut |buf| {
                    for r in 0..rows {
                        for c in 0..sw {
                            buf[r * w + start + c] += g[r * sw + c];
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                acc(*a, &mut |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                });
            }
            Op::Permute { a, perm } => {
                let map = permute_index_map(self.shape(*a), perm);
                acc(*a, &mut |buf| {
                    for (&src, x) in map.iter().zip(g) {
                        buf[src] += x;
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_layout(node.value.shape(), *axis);
                acc(*a, &mut |buf| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + j;
                            let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..len {
                                buf[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Gather { table, indices } => {
                let c = self.shape(*table)[1];
                acc(*table, &mut |buf| {
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, x) in buf[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Stack { parts } => {
                let w = self.value(parts[0]).numel();
                for (i, &p) in parts.iter().enumerate() {
                    acc(p, &mut |buf| {
                        for (o, x) in buf.iter_mut().zip(&g[i * w..(i + 1) * w]) {
                            *o += x;
                        }
                    });
                }
            }
            Op::Select { a, index } => {
                let w = node.value.numel();
                acc(*a, &mut |buf| {
                    for (o, x) in buf[index * w..(index + 1) * w].iter_mut().zip(g) {
                        *o += x;
                    }
                });
            }
            Op::Blend { new, old, keep_new } => {
                let w = node.value.numel() / keep_new.len();
                for (v, want) in [(*new, true), (*old, false)] {
                    acc(v, &mut |buf| {
                        for (r, &k) in keep_new.iter().enumerate() {
                            if k == want {
                                for c in r * w..(r + 1) * w {
                                    buf[c] += g[c];
                                }
                            }
                        }
                    });
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                if *count == 0 {
                    acc(*logits, &mut |_| {});
                    return;
                }
                let v = self.shape(*logits)[1];
                let scale = g[0] / *count as f64;
                acc(*logits, &mut |buf| {
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        for c in 0..v {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            buf[r * v + c] += scale * (probs[r * v + c] - onehot);
                        }
                    }
                });
            }
            Op::Sum { a } => {
                acc(*a, &mut |buf| buf.iter_mut().for_each(|o| *o += g[0]));
            }
        }
    }

    /// Parameter ids recorded on this tape with their node handles.
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }
}

/// Result of a reverse sweep: one optional gradient buffer per node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a node; `None` if the node did not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Writes gradients into the store for every parameter recorded on the
    /// graph. Parameters recorded but unreachable from the loss get zeros.
    pub fn write_to(&self, graph: &Graph, store: &mut ParamStore) -> Result<()> {
        for (id, var) in graph.param_vars() {
            let grad = match self.wrt(var) {
                Some(g) => g.to_vec(),
                None => vec![0.0; graph.value(var).numel()],
            };
            store.tensor_mut(id).set_grad(grad)?;
        }
        Ok(())
    }
}
