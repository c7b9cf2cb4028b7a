use std::cell::RefCell;
use std::fmt;

use super::{matmul_raw, softmax_into, Tensor};
use crate::error::{Error, Result};

/// Smallest argument `log` evaluates exactly; below it the value is clamped
/// and the local gradient is zero.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Log { input: usize, floor: f64 },
    Exp(usize),
    Sqrt(usize),
    Abs(usize),
    Softmax(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    SumCols(usize),
    LogSumExp(usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    SliceCols { input: usize, start: usize },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in evaluation order, so every operation's inputs
/// precede it and a single reverse sweep is a valid topological traversal.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, c] = self.shape();
        write!(f, "Var#{}({r}x{c})", self.id)
    }
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

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(rows * cols, value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a leaf; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        let [r, c] = tensor.shape();
        self.push(r, c, tensor.data().to_vec(), Op::Leaf, tensor.requires_grad())
    }

    /// Records a differentiable leaf regardless of the tensor's flag.
    pub fn param(&self, tensor: &Tensor) -> Var<'_> {
        let [r, c] = tensor.shape();
        self.push(r, c, tensor.data().to_vec(), Op::Leaf, true)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        let [r, c] = tensor.shape();
        self.push(r, c, tensor.into_data(), Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(1, 1, vec![value], Op::Leaf, false)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients accumulate over every path, so each reachable
    /// differentiable node ends up with exactly one total gradient.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on a different tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.rows != 1 || root.cols != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got {}x{}",
                root.rows, root.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| [n.rows, n.cols]).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Reduces a gradient of the broadcast output shape back onto an input shape.
fn unbroadcast(g: &[f64], out: [usize; 2], input: [usize; 2], mut f: impl FnMut(usize, usize, f64) -> f64) -> Vec<f64> {
    let [r, c] = out;
    let [ir, ic] = input;
    let mut acc = vec![0.0; ir * ic];
    for i in 0..r {
        for j in 0..c {
            let k = i * c + j;
            let t = (if ir == 1 { 0 } else { i }) * ic + if ic == 1 { 0 } else { j };
            acc[t] += f(k, t, g[k]);
        }
    }
    acc
}

fn bcast_index(i: usize, j: usize, shape: [usize; 2]) -> usize {
    let [r, c] = shape;
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = [node.rows, node.cols];
    let shape_of = |id: usize| [nodes[id].rows, nodes[id].cols];
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            let (r, k, c) = (na.rows, na.cols, nb.cols);
            if na.requires_grad {
                // g (r×c) · bᵀ (c×k)
                let bt = transpose_raw(&nb.value, k, c);
                accumulate(grads, nodes, *a, matmul_raw(g, &bt, r, c, k));
            }
            if nb.requires_grad {
                // aᵀ (k×r) · g (r×c)
                let at = transpose_raw(&na.value, r, k);
                accumulate(grads, nodes, *b, matmul_raw(&at, g, k, r, c));
            }
        }
        Op::Add(a, b) => {
            let da = unbroadcast(g, out, shape_of(*a), |_, _, v| v);
            let db = unbroadcast(g, out, shape_of(*b), |_, _, v| v);
            accumulate(grads, nodes, *a, da);
            accumulate(grads, nodes, *b, db);
        }
        Op::Sub(a, b) => {
            let da = unbroadcast(g, out, shape_of(*a), |_, _, v| v);
            let db = unbroadcast(g, out, shape_of(*b), |_, _, v| -v);
            accumulate(grads, nodes, *a, da);
            accumulate(grads, nodes, *b, db);
        }
        Op::Mul(a, b) => {
            let (sa, sb) = (shape_of(*a), shape_of(*b));
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let c = out[1];
            let da = unbroadcast(g, out, sa, |k, _, v| v * vb[bcast_index(k / c, k % c, sb)]);
            let db = unbroadcast(g, out, sb, |k, _, v| v * va[bcast_index(k / c, k % c, sa)]);
            accumulate(grads, nodes, *a, da);
            accumulate(grads, nodes, *b, db);
        }
        Op::Div(a, b) => {
            let (sa, sb) = (shape_of(*a), shape_of(*b));
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let c = out[1];
            let da = unbroadcast(g, out, sa, |k, _, v| v / vb[bcast_index(k / c, k % c, sb)]);
            let db = unbroadcast(g, out, sb, |k, _, v| {
                let den = vb[bcast_index(k / c, k % c, sb)];
                -v * va[bcast_index(k / c, k % c, sa)] / (den * den)
            });
            accumulate(grads, nodes, *a, da);
            accumulate(grads, nodes, *b, db);
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.iter().map(|v| v * s).collect()),
        Op::Offset(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            accumulate(
                grads,
                nodes,
                *a,
                g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
            )
        }
        Op::Log { input, floor } => {
            let x = &nodes[*input].value;
            let d = g
                .iter()
                .zip(x)
                .map(|(g, &x)| if x > *floor { g / x } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *input, d)
        }
        Op::Exp(a) => accumulate(
            grads,
            nodes,
            *a,
            g.iter().zip(&node.value).map(|(g, y)| g * y).collect(),
        ),
        Op::Sqrt(a) => {
            let d = g
                .iter()
                .zip(&node.value)
                .map(|(g, &y)| if y > 0.0 { 0.5 * g / y } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, d)
        }
        Op::Abs(a) => {
            let x = &nodes[*a].value;
            let d = g
                .iter()
                .zip(x)
                .map(|(g, &x)| {
                    if x > 0.0 {
                        *g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .collect();
            accumulate(grads, nodes, *a, d)
        }
        Op::Softmax(a) => {
            let c = node.cols;
            let mut d = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks_exact(c).zip(node.value.chunks_exact(c)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                d.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - dot)));
            }
            accumulate(grads, nodes, *a, d)
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, vec![g[0]; nodes[*a].value.len()]),
        Op::Mean(a) => {
            let n = nodes[*a].value.len();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n])
        }
        Op::SumRows(a) => {
            let [r, c] = shape_of(*a);
            let d = (0..r * c).map(|k| g[k / c]).collect();
            accumulate(grads, nodes, *a, d)
        }
        Op::SumCols(a) => {
            let [r, c] = shape_of(*a);
            let d = (0..r * c).map(|k| g[k % c]).collect();
            accumulate(grads, nodes, *a, d)
        }
        Op::LogSumExp(a) => {
            let x = &nodes[*a].value;
            let lse = node.value[0];
            accumulate(grads, nodes, *a, x.iter().map(|v| g[0] * (v - lse).exp()).collect())
        }
        Op::Transpose(a) => {
            let [r, c] = out;
            accumulate(grads, nodes, *a, transpose_raw(g, r, c))
        }
        Op::ConcatCols(parts) => {
            let c = out[1];
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].cols;
                if nodes[p].requires_grad {
                    let d = (0..node.rows)
                        .flat_map(|i| g[i * c + offset..i * c + offset + pc].iter().copied())
                        .collect();
                    accumulate(grads, nodes, p, d);
                }
                offset += pc;
            }
        }
        Op::SliceCols { input, start } => {
            let [r, ic] = shape_of(*input);
            let c = out[1];
            let mut d = vec![0.0; r * ic];
            for i in 0..r {
                d[i * ic + start..i * ic + start + c].copy_from_slice(&g[i * c..(i + 1) * c]);
            }
            accumulate(grads, nodes, *input, d)
        }
    }
}

fn transpose_raw(v: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = v[i * c + j];
        }
    }
    out
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2], what: &str) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::shape(format!(
            "{what}: cannot broadcast {}x{} with {}x{}",
            a[0], a[1], b[0], b[1]
        ))),
    }
}

impl<'t> Var<'t> {
    fn node<R>(&self, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id])
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars recorded on different tapes");
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> [usize; 2] {
        self.node(|n| [n.rows, n.cols])
    }

    pub fn requires_grad(&self) -> bool {
        self.node(|n| n.requires_grad)
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.node(|n| Tensor::new(n.rows, n.cols, n.value.clone()).expect("valid node shape"))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node(|n| n.value.clone())
    }

    /// Value of a `1×1` var.
    pub fn scalar(&self) -> f64 {
        self.node(|n| {
            assert_eq!(n.value.len(), 1, "scalar() on a {}x{} var", n.rows, n.cols);
            n.value[0]
        })
    }

    /// New constant leaf holding this value; no gradient flows back.
    pub fn detach(&self) -> Var<'t> {
        let (r, c, v) = self.node(|n| (n.rows, n.cols, n.value.clone()));
        self.tape.push(r, c, v, Op::Leaf, false)
    }

    fn unary(&self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(rows, cols, value, op, rg)
    }

    fn map(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let (r, c, v) = self.node(|n| (n.rows, n.cols, n.value.iter().map(|&x| f(x)).collect()));
        self.unary(v, r, c, op)
    }

    fn binary(&self, other: Var<'t>, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (sa, sb) = (self.shape(), other.shape());
        let [r, c] = broadcast_shape(sa, sb, what)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (va, vb) = (&nodes[self.id].value, &nodes[other.id].value);
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(f(va[bcast_index(i, j, sa)], vb[bcast_index(i, j, sb)]));
                }
            }
            out
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(r, c, value, op, rg))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let ([r, k], [k2, c]) = (self.shape(), other.shape());
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul {r}x{k} by {k2}x{c}: inner dimensions differ"
            )));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            matmul_raw(&nodes[self.id].value, &nodes[other.id].value, r, k, c)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(r, c, value, Op::MatMul(self.id, other.id), rg))
    }

    /// Elementwise sum with 2-D broadcasting of unit dimensions.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product with 2-D broadcasting of unit dimensions.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        self.map(|x| x * factor, Op::Scale(self.id, factor))
    }

    /// Adds a constant to every entry.
    pub fn offset(&self, constant: f64) -> Var<'t> {
        self.map(|x| x + constant, Op::Offset(self.id))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Var<'t> {
        self.map(|x| x.max(0.0), Op::Relu(self.id))
    }

    /// `ln x`, with `x` clamped to a tiny positive floor.
    pub fn log(&self) -> Var<'t> {
        self.log_floor(LOG_FLOOR)
    }

    /// `ln max(x, floor)`; the gradient is zero where the floor is active.
    pub fn log_floor(&self, floor: f64) -> Var<'t> {
        self.map(move |x| x.max(floor).ln(), Op::Log { input: self.id, floor })
    }

    pub fn exp(&self) -> Var<'t> {
        self.map(f64::exp, Op::Exp(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.map(|x| x.max(0.0).sqrt(), Op::Sqrt(self.id))
    }

    pub fn abs(&self) -> Var<'t> {
        self.map(f64::abs, Op::Abs(self.id))
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Var<'t> {
        let (r, c, v) = self.node(|n| {
            let mut out = Vec::with_capacity(n.value.len());
            for row in n.value.chunks_exact(n.cols) {
                softmax_into(row, &mut out);
            }
            (n.rows, n.cols, out)
        });
        self.unary(v, r, c, Op::Softmax(self.id))
    }

    /// Sum of all entries, `1×1`.
    pub fn sum(&self) -> Var<'t> {
        let s = self.node(|n| n.value.iter().sum());
        self.unary(vec![s], 1, 1, Op::Sum(self.id))
    }

    /// Mean of all entries, `1×1`.
    pub fn mean(&self) -> Var<'t> {
        let s = self.node(|n| n.value.iter().sum::<f64>() / n.value.len() as f64);
        self.unary(vec![s], 1, 1, Op::Mean(self.id))
    }

    /// Per-row sums, `r×1`.
    pub fn sum_rows(&self) -> Var<'t> {
        let (r, v) = self.node(|n| {
            (
                n.rows,
                n.value.chunks_exact(n.cols).map(|row| row.iter().sum()).collect(),
            )
        });
        self.unary(v, r, 1, Op::SumRows(self.id))
    }

    /// Per-column sums, `1×c`.
    pub fn sum_cols(&self) -> Var<'t> {
        let (c, v) = self.node(|n| {
            let mut acc = vec![0.0; n.cols];
            for row in n.value.chunks_exact(n.cols) {
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += x;
                }
            }
            (n.cols, acc)
        });
        self.unary(v, 1, c, Op::SumCols(self.id))
    }

    /// `ln Σ exp` over all entries, `1×1`. Non-finite inputs give NaN so
    /// divergence surfaces in the loss instead of a panic.
    pub fn logsumexp(&self) -> Var<'t> {
        let v = self.node(|n| super::logsumexp(&n.value).unwrap_or(f64::NAN));
        self.unary(vec![v], 1, 1, Op::LogSumExp(self.id))
    }

    pub fn transpose(&self) -> Var<'t> {
        let (r, c, v) = self.node(|n| (n.rows, n.cols, transpose_raw(&n.value, n.rows, n.cols)));
        self.unary(v, c, r, Op::Transpose(self.id))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let [r, c] = self.shape();
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "column slice {start}..{} of {r}x{c}",
                start + len
            )));
        }
        let v = self.node(|n| {
            n.value
                .chunks_exact(c)
                .flat_map(|row| row[start..start + len].iter().copied())
                .collect()
        });
        Ok(self.unary(v, r, len, Op::SliceCols { input: self.id, start }))
    }

    /// Horizontal concatenation of vars with equal row counts.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::arg("concat of zero parts"))?;
        let tape = first.tape;
        let rows = first.shape()[0];
        for p in parts {
            first.same_tape(p);
            if p.shape()[0] != rows {
                return Err(Error::shape(format!(
                    "concat: row counts differ ({} vs {rows})",
                    p.shape()[0]
                )));
            }
        }
        let nodes = tape.nodes.borrow();
        let cols: usize = parts.iter().map(|p| nodes[p.id].cols).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                let n = &nodes[p.id];
                value.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
            }
        }
        let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        Ok(tape.push(
            rows,
            cols,
            value,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }
}

/// Result of [`Tape::backward`]: one gradient per differentiable node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; `None` if `var` does not require
    /// grad or the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let [r, c] = self.shapes[var.id];
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::new(r, c, g.clone()).expect("gradient shape"))
    }

    /// Gradient w.r.t. `var`, zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var).unwrap_or_else(|| {
            let [r, c] = self.shapes[var.id];
            Tensor::zeros(r, c)
        })
    }
}
