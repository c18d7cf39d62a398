//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A `Tape` records primitive ops during the forward pass; `backward` walks
//! the recording in reverse and accumulates gradients. Tapes are rebuilt per
//! forward pass and confined to one training task.

use super::matrix::{
    add64, add_bias64, check_matmul, matmul64, matmul_t64, mse64, row_softmax64, Matrix, Matrix64,
};
use super::NumericsError;

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Row-broadcast 1×c bias onto an r×c matrix.
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    RowSoftmax(NodeId),
    /// Mean squared error between two same-shape nodes; scalar output.
    Mse(NodeId, NodeId),
}

struct Node {
    value: Matrix64,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix64 {
        &self.nodes[id].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.shape(), (1, 1));
        self.nodes[id].value.data[0]
    }

    fn push(&mut self, value: Matrix64, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, m: &Matrix) -> NodeId {
        self.push(m.to64(), Op::Leaf)
    }

    pub fn leaf64(&mut self, m: Matrix64) -> NodeId {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        check_matmul(self.nodes[a].value.shape(), self.nodes[b].value.shape())?;
        let v = matmul64(&self.nodes[a].value, &self.nodes[b].value);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// a · bᵀ (both with matching column counts).
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa.1 != sb.1 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_t",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = matmul_t64(&self.nodes[a].value, &self.nodes[b].value);
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = add64(&self.nodes[a].value, &self.nodes[b].value);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[bias].value.shape());
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = add_bias64(&self.nodes[a].value, &self.nodes[bias].value);
        Ok(self.push(v, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        v.scale_assign(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        for x in v.data.iter_mut() {
            if *x <= 0.0 {
                *x = 0.0;
            }
        }
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        for x in v.data.iter_mut() {
            *x = x.tanh();
        }
        self.push(v, Op::Tanh(a))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let v = row_softmax64(&self.nodes[a].value);
        self.push(v, Op::RowSoftmax(a))
    }

    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NumericsError> {
        let (sp, st) = (
            self.nodes[pred].value.shape(),
            self.nodes[target].value.shape(),
        );
        if sp != st {
            return Err(NumericsError::ShapeMismatch {
                op: "mse",
                lhs: sp,
                rhs: st,
            });
        }
        let v = mse64(&self.nodes[pred].value, &self.nodes[target].value);
        Ok(self.push(Matrix64::scalar(v), Op::Mse(pred, target)))
    }

    /// Reverse pass from a scalar loss node. Returns one gradient per tape
    /// node (zeros for nodes the loss does not reach).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Matrix64>, NumericsError> {
        if self.nodes[loss].value.shape() != (1, 1) {
            return Err(NumericsError::NonScalarLoss {
                shape: self.nodes[loss].value.shape(),
            });
        }
        let mut grads: Vec<Option<Matrix64>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Matrix64::scalar(1.0));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    // dA = G·Bᵀ ; dB = Aᵀ·G
                    let da = matmul_t64(&g, &self.nodes[b].value);
                    let db = {
                        let at = transpose(&self.nodes[a].value);
                        matmul64(&at, &g)
                    };
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::MatMulT(a, b) => {
                    // C = A·Bᵀ: dA = G·B ; dB = Gᵀ·A
                    let da = matmul64(&g, &self.nodes[b].value);
                    let db = {
                        let gt = transpose(&g);
                        matmul64(&gt, &self.nodes[a].value)
                    };
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::AddBias(a, bias) => {
                    let bcols = self.nodes[bias].value.cols;
                    let mut db = Matrix64::zeros(1, bcols);
                    for r in 0..g.rows {
                        for c in 0..bcols {
                            db.data[c] += g.data[r * bcols + c];
                        }
                    }
                    accumulate(&mut grads, a, g);
                    accumulate(&mut grads, bias, db);
                }
                Op::Scale(a, s) => {
                    let mut da = g;
                    da.scale_assign(s);
                    accumulate(&mut grads, a, da);
                }
                Op::Relu(a) => {
                    // Subgradient 0 at 0.
                    let mut da = g;
                    for (gv, &x) in da.data.iter_mut().zip(&self.nodes[a].value.data) {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::Tanh(a) => {
                    let mut da = g;
                    for (gv, &y) in da.data.iter_mut().zip(&self.nodes[id].value.data) {
                        *gv *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::RowSoftmax(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = Matrix64::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols {
                            da.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::Mse(p, t) => {
                    let scale = g.data[0] * 2.0 / self.nodes[p].value.data.len() as f64;
                    let pv = &self.nodes[p].value;
                    let tv = &self.nodes[t].value;
                    let mut dp = Matrix64::zeros(pv.rows, pv.cols);
                    for i in 0..pv.data.len() {
                        dp.data[i] = scale * (pv.data[i] - tv.data[i]);
                    }
                    let mut dt = dp.clone();
                    dt.scale_assign(-1.0);
                    accumulate(&mut grads, p, dp);
                    accumulate(&mut grads, t, dt);
                }
            }
        }

        Ok(grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Matrix64::zeros(self.nodes[i].value.rows, self.nodes[i].value.cols)))
            .collect())
    }
}

fn accumulate(grads: &mut [Option<Matrix64>], id: NodeId, g: Matrix64) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn transpose(m: &Matrix64) -> Matrix64 {
    let mut out = Matrix64::zeros(m.cols, m.rows);
    for r in 0..m.rows {
        for c in 0..m.cols {
            out.data[c * m.rows + r] = m.data[r * m.cols + c];
        }
    }
    out
}
