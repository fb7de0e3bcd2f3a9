//! Reverse-mode differentiation over a flat operation tape.
//!
//! A [`Tape`] owns every intermediate tensor of one forward computation.
//! Operations append a node holding the result value plus enough state to
//! compute local adjoints; [`Tape::backward`] walks the record in reverse
//! and accumulates exact gradients for every node. Nodes are addressed by
//! [`NodeId`], which is only meaningful for the tape that issued it.
//!
//! A tape is confined to a single thread; independent tapes may run
//! concurrently (each model forward/backward builds its own).

use super::tensor::{sigmoid, NumError, Tensor};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise functions supported by [`Tape::map_unary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Negate,
}

#[derive(Debug, Clone)]
enum Expr {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    AddRowVec(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Unary(NodeId, UnaryFn),
    SoftmaxRows(NodeId),
    MaxOverRows(NodeId, Vec<usize>),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    SumAll(NodeId),
    Clamp(NodeId, f64, f64),
}

struct Node {
    value: Tensor,
    expr: Expr,
}

/// Gradients produced by [`Tape::backward`], keyed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`. Nodes the loss does not
    /// reach get a zero gradient of the node's shape.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match &self.grads[id.index()] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.index()];
                Tensor::zeros(r, c)
            }
        }
    }
}

/// The computation record. See the module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, Expr::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.index()].value
    }

    fn push_unchecked(&mut self, value: Tensor, expr: Expr) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, expr });
        id
    }

    fn push(&mut self, op: &'static str, value: Tensor, expr: Expr) -> Result<NodeId, NumError> {
        if let Some((row, col)) = value.first_non_finite() {
            return Err(NumError::NonFinite { op, row, col });
        }
        Ok(self.push_unchecked(value, expr))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Expr::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).add(self.value(b))?;
        self.push("add", value, Expr::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).sub(self.value(b))?;
        self.push("sub", value, Expr::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).mul_elem(self.value(b))?;
        self.push("mul_elem", value, Expr::MulElem(a, b))
    }

    /// Broadcast-adds a 1 x cols row vector to every row of `a`.
    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).add_row_vec(self.value(v))?;
        self.push("add_row_vec", value, Expr::AddRowVec(a, v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, NumError> {
        let value = self.value(a).scale(c);
        self.push("scale", value, Expr::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, NumError> {
        let value = self.value(a).add_scalar(c);
        self.push("add_scalar", value, Expr::AddScalar(a))
    }

    pub fn map_unary(&mut self, a: NodeId, f: UnaryFn) -> Result<NodeId, NumError> {
        let x = self.value(a);
        let value = match f {
            UnaryFn::Sigmoid => x.map(sigmoid),
            UnaryFn::Tanh => x.map(f64::tanh),
            UnaryFn::Exp => x.map(f64::exp),
            UnaryFn::Log => {
                if let Some(i) = x.data().iter().position(|v| *v <= 0.0) {
                    return Err(NumError::LogDomain {
                        row: i / x.cols(),
                        col: i % x.cols(),
                    });
                }
                x.map(f64::ln)
            }
            UnaryFn::Negate => x.map(|v| -v),
        };
        self.push("map_unary", value, Expr::Unary(a, f))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        self.map_unary(a, UnaryFn::Sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        self.map_unary(a, UnaryFn::Tanh)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        self.map_unary(a, UnaryFn::Log)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).softmax_rows();
        self.push("softmax_rows", value, Expr::SoftmaxRows(a))
    }

    /// Columnwise max, 1 x cols. The gradient routes to the first argmax
    /// row per column.
    pub fn max_over_rows(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let (value, argmax) = self.value(a).max_over_rows();
        self.push("max_over_rows", value, Expr::MaxOverRows(a, argmax))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Expr::Transpose(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        self.push("concat_rows", value, Expr::ConcatRows(parts.to_vec()))
    }

    /// Differentiable row lookup; gradients scatter-add back into `src`.
    pub fn gather_rows(&mut self, src: NodeId, indices: &[usize]) -> Result<NodeId, NumError> {
        let value = self.value(src).gather_rows(indices)?;
        self.push("gather_rows", value, Expr::GatherRows(src, indices.to_vec()))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let value = Tensor::scalar(self.value(a).sum_all());
        self.push("sum_all", value, Expr::SumAll(a))
    }

    /// Clamps entries into [lo, hi]; gradient passes through in-range
    /// entries and is zero where the clamp binds.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId, NumError> {
        let value = self.value(a).clamp_elems(lo, hi);
        self.push("clamp", value, Expr::Clamp(a, lo, hi))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let neg = self.map_unary(a, UnaryFn::Negate)?;
        self.add_scalar(neg, 1.0)
    }

    /// Reverse sweep from a 1x1 loss node. Returns exact adjoints for
    /// every node reachable from the loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumError> {
        let (lr, lc) = self.value(loss).shape();
        if (lr, lc) != (1, 1) {
            return Err(NumError::NonScalarLoss { rows: lr, cols: lc });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.index()] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.index()).rev() {
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[idx].expr {
                Expr::Leaf => {}
                Expr::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Expr::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Expr::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                }
                Expr::MulElem(a, b) => {
                    let da = g.mul_elem(self.value(*b))?;
                    let db = g.mul_elem(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Expr::AddRowVec(a, v) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *v, g.sum_rows())?;
                }
                Expr::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.scale(*c))?;
                }
                Expr::AddScalar(a) => {
                    accumulate(&mut grads, *a, g)?;
                }
                Expr::Unary(a, f) => {
                    let x = self.value(*a);
                    let y = &self.nodes[idx].value;
                    let local = match f {
                        UnaryFn::Sigmoid => y.map(|v| v * (1.0 - v)),
                        UnaryFn::Tanh => y.map(|v| 1.0 - v * v),
                        UnaryFn::Exp => y.clone(),
                        UnaryFn::Log => x.map(|v| 1.0 / v),
                        UnaryFn::Negate => {
                            accumulate(&mut grads, *a, g.scale(-1.0))?;
                            continue;
                        }
                    };
                    accumulate(&mut grads, *a, g.mul_elem(&local)?)?;
                }
                Expr::SoftmaxRows(a) => {
                    // dx_i = y_i * (g_i - sum_j g_j y_j), per row
                    let y = &self.nodes[idx].value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = y
                            .row(r)
                            .iter()
                            .zip(g.row(r))
                            .map(|(yi, gi)| yi * gi)
                            .sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, dx)?;
                }
                Expr::MaxOverRows(a, argmax) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    for c in 0..cols {
                        dx.set(argmax[c], c, g.get(0, c));
                    }
                    accumulate(&mut grads, *a, dx)?;
                }
                Expr::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose())?;
                }
                Expr::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        let cols = self.value(*p).cols();
                        let mut part = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                part.set(r, c, g.get(offset + r, c));
                            }
                        }
                        offset += rows;
                        accumulate(&mut grads, *p, part)?;
                    }
                }
                Expr::GatherRows(src, indices) => {
                    let (rows, cols) = self.value(*src).shape();
                    let mut dsrc = Tensor::zeros(rows, cols);
                    for (out_r, &src_r) in indices.iter().enumerate() {
                        for c in 0..cols {
                            let v = dsrc.get(src_r, c) + g.get(out_r, c);
                            dsrc.set(src_r, c, v);
                        }
                    }
                    accumulate(&mut grads, *src, dsrc)?;
                }
                Expr::SumAll(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Tensor::zeros(rows, cols);
                    let gv = g.item();
                    for v in da.data_mut() {
                        *v = gv;
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Expr::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let mut dx = g.clone();
                    for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if *v < *lo || *v > *hi {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, dx)?;
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<(), NumError> {
    match &mut grads[id.index()] {
        Some(g) => {
            *g = g.add(&delta)?;
        }
        slot @ None => {
            *slot = Some(delta);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x .* x) at x = [3] -> grad 6
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul_elem(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).item(), 6.0);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let unused = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let loss = tape.sum_all(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(unused), Tensor::zeros(1, 2));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        assert!(matches!(
            tape.backward(x),
            Err(NumError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn matmul_backward_with_all_ones_upstream() {
        // loss = sum(A x B); dA = 1 * B^T
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let prod = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        let ones = Tensor::ones(2, 2);
        let expect_da = ones.matmul(&tape.value(b).transpose()).unwrap();
        assert_eq!(grads.wrt(a), expect_da);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!((grads.wrt(x).item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tanh_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.0);
    }

    #[test]
    fn log_rejects_non_positive_and_names_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let err = tape.log(x).unwrap_err();
        match err {
            NumError::LogDomain { row, col } => {
                assert_eq!((row, col), (0, 1));
            }
            other => panic!("expected LogDomain, got {other:?}"),
        }
    }

    #[test]
    fn max_over_rows_gradient_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![7.0], vec![7.0]]).unwrap());
        let m = tape.max_over_rows(x).unwrap();
        let loss = tape.sum_all(m).unwrap();
        let grads = tape.backward(loss).unwrap();
        let dx = grads.wrt(x);
        assert_eq!(dx.get(0, 0), 1.0);
        assert_eq!(dx.get(1, 0), 0.0);
    }

    #[test]
    fn gather_rows_scatter_adds() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let picked = tape.gather_rows(table, &[0, 0, 1]).unwrap();
        let loss = tape.sum_all(picked).unwrap();
        let grads = tape.backward(loss).unwrap();
        let dt = grads.wrt(table);
        assert_eq!(dt.row(0), &[2.0, 2.0]);
        assert_eq!(dt.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn ops_are_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap());
            let s = tape.softmax_rows(x).unwrap();
            tape.value(s).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
