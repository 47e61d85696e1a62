use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Tanh(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumRows(Var),
    Columns(Var, usize),
    ConcatCols(Vec<Var>),
    PairwiseSqDist(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(..) => "exp",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::Columns(..) => "columns",
            Op::ConcatCols(..) => "concat_cols",
            Op::PairwiseSqDist(..) => "pairwise_sq_dist",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
    needs_grad: bool,
}

/// A single-use tape of operations on dense `f64` matrices.
///
/// Build the forward computation with the op methods, then call
/// [`Graph::backward`] once on a `1 × 1` root. Every op checks its output for
/// non-finite entries and fails instead of recording them.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    spent: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DMatrix<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros if `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> DMatrix<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                DMatrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var) -> DMatrix<f64> {
        self.grads[var.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[var.0];
            DMatrix::zeros(r, c)
        })
    }
}

fn shape_error(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Graph(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Result<Var> {
        if self.spent {
            return Err(Error::Graph("graph already differentiated".into()));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forward pass ({})", op.name())));
        }
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param => true,
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::ConcatCols(parts) => parts.iter().any(|p| self.nodes[p.0].needs_grad),
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::Columns(a, _)
            | Op::PairwiseSqDist(a) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant: no gradient is accumulated for it.
    pub fn input(&mut self, value: DMatrix<f64>) -> Result<Var> {
        self.push(value, Op::Input)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: DMatrix<f64>) -> Result<Var> {
        self.push(value, Op::Param)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_error("matmul", sa, sb));
        }
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_error("matmul_t", sa, sb));
        }
        let v = self.value(a) * self.value(b).transpose();
        self.push(v, Op::MatMulT(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_error(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 × k` row `row` to every row of the `n × k` matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(shape_error("add_row", sa, sr));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row);
        for mut vr in v.row_iter_mut() {
            vr += r;
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).add_scalar(c);
        self.push(v, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// `log(1 + eᵃ)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(DMatrix::from_element(1, 1, s), Op::Sum(a))
    }

    /// Per-row sums: `n × k → n × 1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let v = DMatrix::from_iterator(m.nrows(), 1, m.row_iter().map(|r| r.sum()));
        self.push(v, Op::SumRows(a))
    }

    /// Columns `start .. start + len`.
    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.1 {
            return Err(Error::Graph(format!(
                "columns: range {start}..{} out of bounds for {s:?}",
                start + len
            )));
        }
        let v = self.value(a).columns(start, len).into_owned();
        self.push(v, Op::Columns(a, start))
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|p| self.shape(*p).0)
            .ok_or_else(|| Error::Graph("concat_cols: no inputs".into()))?;
        let mut cols = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.0 != rows {
                return Err(shape_error("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut v = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let m = self.value(*p);
            v.columns_mut(at, m.ncols()).copy_from(m);
            at += m.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// `D_ij = ‖z_i − z_j‖²` over the rows of `z`.
    pub fn pairwise_sq_dist(&mut self, z: Var) -> Result<Var> {
        let m = self.value(z);
        let n = m.nrows();
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                v[(i, j)] = d;
                v[(j, i)] = d;
            }
        }
        self.push(v, Op::PairwiseSqDist(z))
    }

    /// Reverse pass from the scalar `root`. May be called once per graph.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::Graph("backward already run on this graph".into()));
        }
        if self.shape(root) != (1, 1) {
            return Err(Error::Graph(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.spent = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; n];
        grads[root.0] = Some(DMatrix::from_element(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |target: Var, contribution: DMatrix<f64>, nodes: &[Node]| {
                if !nodes[target.0].needs_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(acc) => *acc += contribution,
                    slot @ None => *slot = Some(contribution),
                }
            };
            let nodes = &self.nodes;
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if nodes[a.0].needs_grad {
                        send(*a, &g * nodes[b.0].value.transpose(), nodes);
                    }
                    if nodes[b.0].needs_grad {
                        send(*b, nodes[a.0].value.transpose() * &g, nodes);
                    }
                }
                Op::MatMulT(a, b) => {
                    if nodes[a.0].needs_grad {
                        send(*a, &g * &nodes[b.0].value, nodes);
                    }
                    if nodes[b.0].needs_grad {
                        send(*b, g.transpose() * &nodes[a.0].value, nodes);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), nodes);
                    send(*b, g, nodes);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone(), nodes);
                    send(*b, -g, nodes);
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].needs_grad {
                        send(*a, g.component_mul(&nodes[b.0].value), nodes);
                    }
                    if nodes[b.0].needs_grad {
                        send(*b, g.component_mul(&nodes[a.0].value), nodes);
                    }
                }
                Op::AddRow(a, row) => {
                    if nodes[row.0].needs_grad {
                        let cols = g.ncols();
                        let r = DMatrix::from_iterator(1, cols, g.column_iter().map(|c| c.sum()));
                        send(*row, r, nodes);
                    }
                    send(*a, g, nodes);
                }
                Op::Scale(a, f) => send(*a, g * *f, nodes),
                Op::Offset(a) => send(*a, g, nodes),
                Op::Exp(a) => send(*a, g.component_mul(&node.value), nodes),
                Op::Tanh(a) => {
                    let d = node.value.map(|t| 1.0 - t * t);
                    send(*a, g.component_mul(&d), nodes);
                }
                Op::Softplus(a) => {
                    let d = nodes[a.0].value.map(sigmoid);
                    send(*a, g.component_mul(&d), nodes);
                }
                Op::Square(a) => {
                    let d = &nodes[a.0].value * 2.0;
                    send(*a, g.component_mul(&d), nodes);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &nodes[a.0].value;
                    let d = x.map(|v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 });
                    send(*a, g.component_mul(&d), nodes);
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    send(*a, DMatrix::from_element(r, c, g[(0, 0)]), nodes);
                }
                Op::SumRows(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    send(*a, DMatrix::from_fn(r, c, |i, _| g[(i, 0)]), nodes);
                }
                Op::Columns(a, start) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut full = DMatrix::zeros(r, c);
                    full.columns_mut(*start, g.ncols()).copy_from(&g);
                    send(*a, full, nodes);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = nodes[p.0].value.ncols();
                        send(*p, g.columns(at, w).into_owned(), nodes);
                        at += w;
                    }
                }
                Op::PairwiseSqDist(z) => {
                    // ∂/∂z_i = 2 Σ_j (G_ij + G_ji)(z_i − z_j)
                    let zv = &nodes[z.0].value;
                    let s = &g + g.transpose();
                    let row_sums = DMatrix::from_iterator(
                        s.nrows(),
                        1,
                        s.column_iter().map(|c| c.sum()),
                    );
                    let mut out = -(&s * zv);
                    for (i, mut r) in out.row_iter_mut().enumerate() {
                        r += zv.row(i) * row_sums[(i, 0)];
                    }
                    send(*z, out * 2.0, nodes);
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // Only parameter gradients are retained; intermediate slots were
        // consumed during the sweep.
        Ok(Gradients { grads, shapes })
    }
}
