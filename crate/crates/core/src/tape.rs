//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records every primitive application as a node holding its
//! value and the parents it was computed from. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! [`Tape::backward`] is a single reverse sweep. A node consumed by several
//! children receives the sum of the gradients flowing back along each path.
//!
//! A tape lives for one forward/backward pass on one thread.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
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
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log { x: Var, floor: f64 },
    RowL2Normalize(Var),
    SoftmaxRows(Var),
    LogSumExpRows { x: Var, excluded: Option<Vec<bool>> },
    ConcatRows(Var, Var),
    Gather { x: Var, at: Vec<(usize, usize)> },
    Sum(Var),
    ColumnSums(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`. Nodes the root does not
    /// depend on get an all-zero gradient.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.slots[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving the slot empty.
    pub fn take(&mut self, v: Var) -> Matrix {
        let (r, c) = self.shapes[v.0];
        self.slots[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    /// Registers an input. Inputs are the only nodes without parents; whether
    /// one is a parameter or a constant is up to the caller.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.push(v, Op::Transpose(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds the `1 × cols` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = self.value(x).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).scale(k);
        self.push(v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|e| e + k);
        self.push(v, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    /// Natural log of `max(x, floor)`. Entries at or below the floor pass no
    /// gradient.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).map(|e| e.max(floor).ln());
        self.push(v, Op::Log { x, floor })
    }

    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).row_l2_normalize()?;
        Ok(self.push(v, Op::RowL2Normalize(x)))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).softmax_rows();
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Per-row `log Σ_j exp(x_ij)` as a `rows × 1` column, skipping entries
    /// flagged in `excluded` (row-major, same shape as `x`). Uses max
    /// subtraction over the included entries.
    pub fn log_sum_exp_rows(&mut self, x: Var, excluded: Option<Vec<bool>>) -> Result<Var> {
        let m = self.value(x);
        if let Some(mask) = &excluded {
            if mask.len() != m.len() {
                return Err(Error::contract(format!(
                    "exclusion mask has {} entries for a {:?} input",
                    mask.len(),
                    m.shape()
                )));
            }
        }
        let mut out = Matrix::zeros(m.rows(), 1);
        for r in 0..m.rows() {
            let keep = |c: usize| excluded.as_ref().is_none_or(|mask| !mask[r * m.cols() + c]);
            let row = m.row(r);
            let max = (0..m.cols())
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::contract(format!("row {r} has every entry excluded")));
            }
            let total: f64 = (0..m.cols())
                .filter(|&c| keep(c))
                .map(|c| (row[c] - max).exp())
                .sum();
            out.set(r, 0, max + total.ln());
        }
        Ok(self.push(out, Op::LogSumExpRows { x, excluded }))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_rows(self.value(b))?;
        Ok(self.push(v, Op::ConcatRows(a, b)))
    }

    /// Collects the listed `(row, col)` entries into a `k × 1` column.
    pub fn gather(&mut self, x: Var, at: Vec<(usize, usize)>) -> Result<Var> {
        let m = self.value(x);
        let mut out = Matrix::zeros(at.len(), 1);
        for (k, &(r, c)) in at.iter().enumerate() {
            if r >= m.rows() || c >= m.cols() {
                return Err(Error::contract(format!(
                    "gather index ({r}, {c}) outside {:?}",
                    m.shape()
                )));
            }
            out.set(k, 0, m.get(r, c));
        }
        Ok(self.push(out, Op::Gather { x, at }))
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Column totals as a `1 × cols` node.
    pub fn column_sums(&mut self, x: Var) -> Var {
        let v = self.value(x).column_sums();
        self.push(v, Op::ColumnSums(x))
    }

    /// Accumulates d(root)/d(node) for every node the root depends on.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got a {shape:?} node"
            )));
        }
        let n = root.0 + 1;
        let mut slots: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        slots[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..n).rev() {
            let Some(grad) = slots[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            for (parent, contribution) in self.local_gradients(node, &grad)? {
                accumulate(&mut slots[parent.0], contribution)?;
            }
            slots[i] = Some(grad);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape()).collect();
        Ok(Gradients { slots, shapes })
    }

    fn local_gradients(&self, node: &Node, grad: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let out = &node.value;
        let g = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let da = grad.matmul(&self.value(*b).transpose())?;
                let db = self.value(*a).transpose().matmul(grad)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(x) => vec![(*x, grad.transpose())],
            Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
            Op::Sub(a, b) => vec![(*a, grad.clone()), (*b, grad.scale(-1.0))],
            Op::Mul(a, b) => vec![
                (*a, grad.hadamard(self.value(*b))?),
                (*b, grad.hadamard(self.value(*a))?),
            ],
            Op::AddRow(x, bias) => vec![(*x, grad.clone()), (*bias, grad.column_sums())],
            Op::Scale(x, k) => vec![(*x, grad.scale(*k))],
            Op::AddScalar(x) => vec![(*x, grad.clone())],
            Op::Relu(x) => {
                let d =
                    grad.zip_map(self.value(*x), "relu", |g, v| if v > 0.0 { g } else { 0.0 })?;
                vec![(*x, d)]
            }
            Op::Exp(x) => vec![(*x, grad.hadamard(out)?)],
            Op::Log { x, floor } => {
                let d =
                    grad.zip_map(
                        self.value(*x),
                        "log",
                        |g, v| if v > *floor { g / v } else { 0.0 },
                    )?;
                vec![(*x, d)]
            }
            Op::RowL2Normalize(x) => {
                // dx = (I - y yᵀ) dy / ‖x‖ per row
                let norms = self.value(*x).row_norms();
                let mut d = Matrix::zeros(out.rows(), out.cols());
                for (r, norm) in norms.into_iter().enumerate() {
                    let y = out.row(r);
                    let gy = grad.row(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *o = (gv - yv * dot) / norm;
                    }
                }
                vec![(*x, d)]
            }
            Op::SoftmaxRows(x) => {
                let mut d = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = grad.row(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![(*x, d)]
            }
            Op::LogSumExpRows { x, excluded } => {
                let input = self.value(*x);
                let cols = input.cols();
                let mut d = Matrix::zeros(input.rows(), cols);
                for r in 0..input.rows() {
                    let lse = out.get(r, 0);
                    let g = grad.get(r, 0);
                    for c in 0..cols {
                        let skip = excluded.as_ref().is_some_and(|m| m[r * cols + c]);
                        if !skip {
                            d.set(r, c, g * (input.get(r, c) - lse).exp());
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::ConcatRows(a, b) => {
                let top = self.value(*a).rows();
                let bottom = self.value(*b).rows();
                vec![
                    (*a, grad.row_block(0, top)),
                    (*b, grad.row_block(top, bottom)),
                ]
            }
            Op::Gather { x, at } => {
                let (r, c) = self.value(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (k, &(i, j)) in at.iter().enumerate() {
                    d.set(i, j, d.get(i, j) + grad.get(k, 0));
                }
                vec![(*x, d)]
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                vec![(*x, Matrix::filled(r, c, grad.get(0, 0)))]
            }
            Op::ColumnSums(x) => {
                let (r, c) = self.value(*x).shape();
                vec![(*x, Matrix::from_fn(r, c, |_, j| grad.get(0, j)))]
            }
        };
        Ok(g)
    }
}

fn accumulate(slot: &mut Option<Matrix>, contribution: Matrix) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&contribution),
        None => {
            *slot = Some(contribution);
            Ok(())
        }
    }
}
