use std::cell::{Cell, Ref, RefCell};

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Primitive tag recorded on every tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    AddBias,
    Sub,
    Mul,
    Scale,
    MatMul,
    Transpose,
    Concat,
    Gather,
    Reshape,
    SumAxis,
    MeanAxis,
    SumAll,
    MeanAll,
    Sigmoid,
    Tanh,
    Relu,
    Ln,
    Exp,
    Softmax,
    LogSoftmax,
    Dropout,
    LayerNorm,
    GradReverse,
}

enum Op {
    Leaf,
    Add(usize, usize),
    AddBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Gather { input: usize, index: Vec<usize> },
    Reshape(usize),
    SumAxis { input: usize, axis: usize },
    MeanAxis { input: usize, axis: usize },
    SumAll(usize),
    MeanAll(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Ln(usize),
    Exp(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Dropout { input: usize, scaled_mask: Vec<f64> },
    LayerNorm {
        input: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GradReverse { input: usize, lambda: f64 },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Concat { .. } => OpKind::Concat,
            Op::Gather { .. } => OpKind::Gather,
            Op::Reshape(..) => OpKind::Reshape,
            Op::SumAxis { .. } => OpKind::SumAxis,
            Op::MeanAxis { .. } => OpKind::MeanAxis,
            Op::SumAll(..) => OpKind::SumAll,
            Op::MeanAll(..) => OpKind::MeanAll,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::Ln(..) => OpKind::Ln,
            Op::Exp(..) => OpKind::Exp,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::GradReverse { .. } => OpKind::GradReverse,
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::AddBias(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Ln(a)
            | Op::Exp(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Gather { input, .. }
            | Op::SumAxis { input, .. }
            | Op::MeanAxis { input, .. }
            | Op::Dropout { input, .. }
            | Op::GradReverse { input, .. } => vec![*input],
            Op::LayerNorm {
                input, gain, bias, ..
            } => vec![*input, *gain, *bias],
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
    grad: Option<Vec<f64>>,
}

/// Append-only record of a forward pass. Built fresh for every step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Debug view of one recorded node.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeNode {
    pub op_kind: OpKind,
    pub input_ids: Vec<usize>,
    pub output_id: usize,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let numel: usize = shape.iter().product();
    let rows = if cols == 0 { 0 } else { numel / cols };
    (rows, cols)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> Vec<TapeNode> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .map(|(id, n)| TapeNode {
                op_kind: n.op.kind(),
                input_ids: n.op.inputs(),
                output_id: id,
            })
            .collect()
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        // Nodes without a gradient path never need their backward context.
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var { tape: self, id }
    }

    /// Records a leaf copying `t`; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn variable(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>> {
        let t = Tensor::new(shape, data)?.with_grad();
        Ok(self.leaf(&t))
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(&Tensor::scalar(v))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Gradient of the last `backward` root with respect to a leaf.
    pub fn grad(&self, v: Var<'_>) -> Option<Vec<f64>> {
        self.nodes.borrow()[v.id].grad.clone()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    /// Reverse sweep from a scalar root. Gradients accumulate on every
    /// differentiable leaf; the tape cannot be swept a second time.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        let root_shape = nodes[root.id].shape.clone();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        self.consumed.set(true);
        if !nodes[root.id].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backward_node(&nodes, id, &g, &mut grads);
            if let Op::Leaf = nodes[id].op {
                let node = &mut nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn acc<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn backward_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &x in [a, b] {
                if let Some(ga) = acc(nodes, grads, x) {
                    ga.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
            }
        }
        Op::AddBias(x, b) => {
            if let Some(gx) = acc(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(p, q)| *p += q);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                let c = gb.len();
                for (k, v) in g.iter().enumerate() {
                    gb[k % c] += v;
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(p, q)| *p += q);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                gb.iter_mut().zip(g).for_each(|(p, q)| *p -= q);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(ga) = acc(nodes, grads, *a) {
                for k in 0..g.len() {
                    ga[k] += g[k] * vb[k];
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for k in 0..g.len() {
                    gb[k] += g[k] * va[k];
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(p, q)| *p += q * c);
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(ga) = acc(nodes, grads, *a) {
                // dA = G Bᵀ
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &vb[p * n..(p + 1) * n];
                        let mut s = 0.0;
                        for j in 0..n {
                            s += grow[j] * brow[j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                // dB = Aᵀ G
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = va[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &mut gb[p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] += av * grow[j];
                        }
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            if let Some(ga) = acc(nodes, grads, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            if *axis == 0 {
                let mut off = 0;
                for &x in inputs {
                    let len = nodes[x].value.len();
                    if let Some(gx) = acc(nodes, grads, x) {
                        gx.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(p, q)| *p += q);
                    }
                    off += len;
                }
            } else {
                let total = *node.shape.last().unwrap();
                let rows = g.len() / total;
                let mut col_off = 0;
                for &x in inputs {
                    let c = *nodes[x].shape.last().unwrap();
                    if let Some(gx) = acc(nodes, grads, x) {
                        for r in 0..rows {
                            let src = &g[r * total + col_off..r * total + col_off + c];
                            gx[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(p, q)| *p += q);
                        }
                    }
                    col_off += c;
                }
            }
        }
        Op::Gather { input, index } => {
            if let Some(gx) = acc(nodes, grads, *input) {
                for (k, &src) in index.iter().enumerate() {
                    gx[src] += g[k];
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(p, q)| *p += q);
            }
        }
        Op::SumAxis { input, axis } | Op::MeanAxis { input, axis } => {
            let (r, c) = (nodes[*input].shape[0], nodes[*input].shape[1]);
            let scale = match node.op {
                Op::MeanAxis { .. } => 1.0 / if *axis == 0 { r } else { c } as f64,
                _ => 1.0,
            };
            if let Some(gx) = acc(nodes, grads, *input) {
                for i in 0..r {
                    for j in 0..c {
                        let up = if *axis == 0 { g[j] } else { g[i] };
                        gx[i * c + j] += up * scale;
                    }
                }
            }
        }
        Op::SumAll(a) | Op::MeanAll(a) => {
            let len = nodes[*a].value.len();
            let up = match node.op {
                Op::MeanAll(_) => g[0] / len as f64,
                _ => g[0],
            };
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.iter_mut().for_each(|p| *p += up);
            }
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            if let Some(ga) = acc(nodes, grads, *a) {
                for k in 0..g.len() {
                    ga[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }
        }
        Op::Tanh(a) => {
            let y = &node.value;
            if let Some(ga) = acc(nodes, grads, *a) {
                for k in 0..g.len() {
                    ga[k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }
        }
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            if let Some(ga) = acc(nodes, grads, *a) {
                for k in 0..g.len() {
                    if x[k] > 0.0 {
                        ga[k] += g[k];
                    }
                }
            }
        }
        Op::Ln(a) => {
            let x = &nodes[*a].value;
            if let Some(ga) = acc(nodes, grads, *a) {
                for k in 0..g.len() {
                    ga[k] += g[k] / x[k];
                }
            }
        }
        Op::Exp(a) => {
            let y = &node.value;
            if let Some(ga) = acc(nodes, grads, *a) {
                for k in 0..g.len() {
                    ga[k] += g[k] * y[k];
                }
            }
        }
        Op::Softmax(a) => {
            let y = &node.value;
            let (rows, c) = rows_cols(&node.shape);
            if let Some(ga) = acc(nodes, grads, *a) {
                for r in 0..rows {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LogSoftmax(a) => {
            let y = &node.value;
            let (rows, c) = rows_cols(&node.shape);
            if let Some(ga) = acc(nodes, grads, *a) {
                for r in 0..rows {
                    let gr = &g[r * c..(r + 1) * c];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..c {
                        ga[r * c + j] += gr[j] - y[r * c + j].exp() * gsum;
                    }
                }
            }
        }
        Op::Dropout { input, scaled_mask } => {
            if let Some(ga) = acc(nodes, grads, *input) {
                for k in 0..g.len() {
                    ga[k] += g[k] * scaled_mask[k];
                }
            }
        }
        Op::LayerNorm {
            input,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (rows, c) = rows_cols(&node.shape);
            let gv = &nodes[*gain].value;
            if let Some(gg) = acc(nodes, grads, *gain) {
                for r in 0..rows {
                    for j in 0..c {
                        gg[j] += g[r * c + j] * xhat[r * c + j];
                    }
                }
            }
            if let Some(gb) = acc(nodes, grads, *bias) {
                for r in 0..rows {
                    for j in 0..c {
                        gb[j] += g[r * c + j];
                    }
                }
            }
            if let Some(gx) = acc(nodes, grads, *input) {
                let cf = c as f64;
                for r in 0..rows {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..c {
                        let d = g[r * c + j] * gv[j];
                        sum_d += d;
                        sum_dx += d * xhat[r * c + j];
                    }
                    for j in 0..c {
                        let d = g[r * c + j] * gv[j];
                        gx[r * c + j] +=
                            inv_std[r] / cf * (cf * d - sum_d - xhat[r * c + j] * sum_dx);
                    }
                }
            }
        }
        Op::GradReverse { input, lambda } => {
            if let Some(ga) = acc(nodes, grads, *input) {
                ga.iter_mut().zip(g).for_each(|(p, q)| *p += -lambda * q);
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Borrowed view of the forward value.
    pub fn value(&self) -> Ref<'t, [f64]> {
        Ref::map(self.tape.nodes.borrow(), |n| n[self.id].value.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().to_vec()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec()).expect("tape node shape is consistent")
    }

    /// First element; meant for scalars.
    pub fn item(&self) -> f64 {
        self.value()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.grad(*self)
    }

    /// Copy of this value with no gradient path back into the tape.
    pub fn detach(&self) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].shape.clone(), nodes[self.id].value.clone())
        };
        self.tape.push(shape, value, false, Op::Leaf)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect())
        };
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(shape, value, rg, op)
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<Vec<usize>> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Shape {
                op,
                left: a,
                right: b,
            });
        }
        Ok(a)
    }

    fn binary(
        &self,
        other: &Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let shape = self.same_shape(other, name)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(shape, value, rg, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a vector of length `last dim` to every row.
    pub fn add_bias(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        let (shape, bshape) = (self.shape(), bias.shape());
        let c = *shape.last().unwrap_or(&0);
        if bshape.iter().product::<usize>() != c || c == 0 {
            return Err(Error::Shape {
                op: "add_bias",
                left: shape,
                right: bshape,
            });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            x.iter().enumerate().map(|(k, v)| v + b[k % c]).collect()
        };
        let rg = self.tape.rg(&[self.id, bias.id]);
        Ok(self
            .tape
            .push(shape, value, rg, Op::AddBias(self.id, bias.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
        }
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self
            .tape
            .push(vec![m, n], out, rg, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                left: s,
                right: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x[i * c + j];
                }
            }
            out
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(vec![c, r], value, rg, Op::Transpose(self.id)))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tape = first.tape;
        let lead = first.shape()[..first.shape().len() - 1].to_vec();
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    left: first.shape(),
                    right: s,
                });
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        {
            let nodes = tape.nodes.borrow();
            let mut off = 0;
            for p in parts {
                let c = *nodes[p.id].shape.last().unwrap();
                let v = &nodes[p.id].value;
                for r in 0..rows {
                    out[r * total + off..r * total + off + c].copy_from_slice(&v[r * c..(r + 1) * c]);
                }
                off += c;
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        let mut shape = lead;
        shape.push(total);
        Ok(tape.push(shape, out, rg, Op::Concat { inputs: ids, axis: 1 }))
    }

    /// Stacks 2-D tensors (or 1-D rows) with equal column counts along axis 0.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows of zero tensors"))?;
        let tape = first.tape;
        let cols = *first.shape().last().unwrap();
        let mut out = Vec::new();
        let mut rows = 0;
        {
            let nodes = tape.nodes.borrow();
            for p in parts {
                let n = &nodes[p.id];
                let c = *n.shape.last().unwrap();
                if c != cols || n.shape.len() > 2 {
                    return Err(Error::Shape {
                        op: "concat_rows",
                        left: nodes[first.id].shape.clone(),
                        right: n.shape.clone(),
                    });
                }
                rows += n.value.len() / c;
                out.extend_from_slice(&n.value);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        Ok(tape.push(vec![rows, cols], out, rg, Op::Concat { inputs: ids, axis: 0 }))
    }

    /// `out[k] = self.flat[index[k]]`, reshaped to `shape`.
    pub fn gather(&self, index: Vec<usize>, shape: Vec<usize>) -> Result<Var<'t>> {
        let numel = self.numel();
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::Shape {
                op: "gather",
                left: shape,
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= numel) {
            return Err(Error::invalid(format!(
                "gather: index {bad} out of range for {numel} elements"
            )));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            index.iter().map(|&i| x[i]).collect()
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(
            shape,
            value,
            rg,
            Op::Gather {
                input: self.id,
                index,
            },
        ))
    }

    /// Selects rows of a 2-D tensor.
    pub fn rows(&self, ids: &[usize]) -> Result<Var<'t>> {
        let s = self.shape();
        let (r, c) = rows_cols(&s);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(format!("rows: row {bad} out of range for {r} rows")));
        }
        let index = ids
            .iter()
            .flat_map(|&i| (i * c)..(i * c + c))
            .collect();
        self.gather(index, vec![ids.len(), c])
    }

    pub fn row(&self, i: usize) -> Result<Var<'t>> {
        self.rows(&[i])
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let s = self.shape();
        let (r, c) = rows_cols(&s);
        if start + len > c {
            return Err(Error::Shape {
                op: "narrow_cols",
                left: s,
                right: vec![start, len],
            });
        }
        let index = (0..r)
            .flat_map(|i| (i * c + start)..(i * c + start + len))
            .collect();
        self.gather(index, vec![r, len])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape(),
                right: shape,
            });
        }
        let value = self.to_vec();
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(shape, value, rg, Op::Reshape(self.id)))
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let s = self.shape();
        let name = if mean { "mean_axis" } else { "sum_axis" };
        if s.len() != 2 || axis > 1 {
            return Err(Error::Shape {
                op: name,
                left: s,
                right: vec![axis],
            });
        }
        let (r, c) = (s[0], s[1]);
        let len = if axis == 0 { r } else { c };
        if len == 0 {
            return Err(Error::EmptyAxis { op: name });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut out = vec![0.0; if axis == 0 { c } else { r }];
            for i in 0..r {
                for j in 0..c {
                    out[if axis == 0 { j } else { i }] += x[i * c + j];
                }
            }
            if mean {
                out.iter_mut().for_each(|v| *v /= len as f64);
            }
            out
        };
        let out_len = value.len();
        let rg = self.tape.rg(&[self.id]);
        let op = if mean {
            Op::MeanAxis {
                input: self.id,
                axis,
            }
        } else {
            Op::SumAxis {
                input: self.id,
                axis,
            }
        };
        Ok(self.tape.push(vec![out_len], value, rg, op))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, true)
    }

    pub fn sum(&self) -> Var<'t> {
        let v: f64 = self.value().iter().sum();
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(vec![1], vec![v], rg, Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::EmptyAxis { op: "mean" });
        }
        let v: f64 = self.value().iter().sum::<f64>() / n as f64;
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(vec![1], vec![v], rg, Op::MeanAll(self.id)))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn ln(&self) -> Result<Var<'t>> {
        if self.numel() == 0 {
            return Err(Error::EmptyAxis { op: "ln" });
        }
        Ok(self.unary(Op::Ln(self.id), f64::ln))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    fn row_normalize(&self, log: bool) -> Result<Var<'t>> {
        let shape = self.shape();
        let name = if log { "log_softmax" } else { "softmax" };
        let (rows, c) = rows_cols(&shape);
        if c == 0 || shape.is_empty() {
            return Err(Error::EmptyAxis { op: name });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut out = vec![0.0; rows * c];
            for r in 0..rows {
                let xr = &x[r * c..(r + 1) * c];
                let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = xr.iter().map(|v| (v - max).exp()).sum();
                let o = &mut out[r * c..(r + 1) * c];
                if log {
                    let lse = max + sum.ln();
                    for j in 0..c {
                        o[j] = xr[j] - lse;
                    }
                } else {
                    for j in 0..c {
                        o[j] = (xr[j] - max).exp() / sum;
                    }
                }
            }
            out
        };
        let rg = self.tape.rg(&[self.id]);
        let op = if log {
            Op::LogSoftmax(self.id)
        } else {
            Op::Softmax(self.id)
        };
        Ok(self.tape.push(shape, value, rg, op))
    }

    pub fn softmax(&self) -> Result<Var<'t>> {
        self.row_normalize(false)
    }

    pub fn log_softmax(&self) -> Result<Var<'t>> {
        self.row_normalize(true)
    }

    /// Inverted dropout with an explicit keep mask.
    pub fn dropout(&self, mask: &[bool], keep: f64) -> Result<Var<'t>> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::invalid(format!(
                "dropout: keep probability {keep} outside (0, 1]"
            )));
        }
        if mask.len() != self.numel() {
            return Err(Error::Shape {
                op: "dropout",
                left: self.shape(),
                right: vec![mask.len()],
            });
        }
        let scaled_mask: Vec<f64> = mask
            .iter()
            .map(|&m| if m { 1.0 / keep } else { 0.0 })
            .collect();
        let value = {
            let x = self.value();
            x.iter().zip(&scaled_mask).map(|(a, b)| a * b).collect()
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(
            self.shape(),
            value,
            rg,
            Op::Dropout {
                input: self.id,
                scaled_mask,
            },
        ))
    }

    /// Dropout drawing its mask from `rng`; the identity when `rng` is
    /// `None` (evaluation mode) or `rate == 0`.
    pub fn dropout_with<R: Rng>(&self, rate: f64, rng: Option<&mut R>) -> Result<Var<'t>> {
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask: Vec<bool> = (0..self.numel()).map(|_| rng.gen::<f64>() < keep).collect();
                self.dropout(&mask, keep)
            }
            _ => Ok(*self),
        }
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&self, gain: &Var<'t>, bias: &Var<'t>, eps: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        let (rows, c) = rows_cols(&shape);
        if c == 0 {
            return Err(Error::EmptyAxis { op: "layer_norm" });
        }
        for p in [gain, bias] {
            if p.numel() != c {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: shape,
                    right: p.shape(),
                });
            }
        }
        let (value, xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (gv, bv) = (&nodes[gain.id].value, &nodes[bias.id].value);
            let mut out = vec![0.0; rows * c];
            let mut xhat = vec![0.0; rows * c];
            let mut inv_std = vec![0.0; rows];
            for r in 0..rows {
                let xr = &x[r * c..(r + 1) * c];
                let mu = xr.iter().sum::<f64>() / c as f64;
                let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..c {
                    let h = (xr[j] - mu) * is;
                    xhat[r * c + j] = h;
                    out[r * c + j] = gv[j] * h + bv[j];
                }
            }
            (out, xhat, inv_std)
        };
        let rg = self.tape.rg(&[self.id, gain.id, bias.id]);
        Ok(self.tape.push(
            shape,
            value,
            rg,
            Op::LayerNorm {
                input: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
        ))
    }

    /// Identity forward; multiplies the upstream gradient by `-lambda`.
    pub fn grad_reverse(&self, lambda: f64) -> Var<'t> {
        let value = self.to_vec();
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(
            self.shape(),
            value,
            rg,
            Op::GradReverse {
                input: self.id,
                lambda,
            },
        )
    }
}
