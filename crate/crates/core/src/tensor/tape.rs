use super::{
    binary, conv1d_same, matmul, pairwise_l2, softmax_lastdim, transpose, unary, BinaryOp, Operand, Result,
    Shape, Tensor, TensorError, UnaryOp,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    ScalarRhs(BinaryOp, Var, f64),
    Unary(UnaryOp, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    Conv1d(Var, Var),
    SumAll(Var),
    SumLastDim(Var),
    SumRows(Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Reshape(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    PairwiseL2(Var),
    ClampMin(Var, f64),
    MulScalarVar(Var, Var),
    AddScalarVar(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Parents always precede children, so one reverse sweep visits every node
/// after all of its consumers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros when nothing downstream of the root used it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.adjoints[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].dims()))
    }
}

fn contract(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Contract { op, detail: detail.into() }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.data.iter_mut().zip(delta.data) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input (a parameter or anything checked by gradient tests).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let value = binary(op, self.value(a), Operand::Tensor(self.value(b)))?;
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// `a <op> c` for a constant scalar `c`.
    pub fn scalar(&mut self, op: BinaryOp, a: Var, c: f64) -> Result<Var> {
        let value = binary(op, self.value(a), Operand::Scalar(c))?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::ScalarRhs(op, a, c), rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.scalar(BinaryOp::Add, a, c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.scalar(BinaryOp::Mul, a, c)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let value = unary(op, self.value(a))?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::Unary(op, a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = transpose(self.value(a))?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let value = softmax_lastdim(self.value(a))?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    pub fn conv1d_same(&mut self, seq: Var, kernel: Var) -> Result<Var> {
        let value = conv1d_same(self.value(seq), self.value(kernel))?;
        let rg = self.grad_of(&[seq, kernel]);
        Ok(self.push(value, Op::Conv1d(seq, kernel), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::SumAll(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(contract("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Sums each last-dimension slice; `[T, D]` becomes `[T]`.
    pub fn sum_lastdim(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let n = src.shape().last();
        let mut dims = src.dims().to_vec();
        dims.pop();
        let data = src.data().chunks(n.max(1)).map(|c| c.iter().sum()).collect();
        let value = Tensor::new(&dims, data)?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::SumLastDim(a), rg))
    }

    /// Column sums of a matrix; `[T, D]` becomes `[D]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.require_rank2("sum_rows")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
        let rg = self.grad_of(&[a]);
        Ok(self.push(Tensor::vector(out), Op::SumRows(a), rg))
    }

    /// Adds the vector `b` (length D) to every row of the `[T, D]` matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (_, c) = ta.require_rank2("add_row")?;
        if tb.shape().rank() != 1 || tb.numel() != c {
            return Err(TensorError::ShapeMismatch { op: "add_row", lhs: ta.shape().clone(), rhs: tb.shape().clone() });
        }
        let data = ta.data().chunks(c.max(1)).flat_map(|row| row.iter().zip(tb.data()).map(|(x, y)| x + y)).collect();
        let value = Tensor::from_shape(ta.shape().clone(), data)?;
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    /// Multiplies row `i` of the `[T, D]` matrix `a` by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        let (r, c) = ta.require_rank2("scale_rows")?;
        if ts.shape().rank() != 1 || ts.numel() != r {
            return Err(TensorError::ShapeMismatch { op: "scale_rows", lhs: ta.shape().clone(), rhs: ts.shape().clone() });
        }
        let mut data = ta.data().to_vec();
        if c > 0 {
            for (row, &f) in data.chunks_mut(c).zip(ts.data()) {
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
        let value = Tensor::from_shape(ta.shape().clone(), data)?;
        let rg = self.grad_of(&[a, s]);
        Ok(self.push(value, Op::ScaleRows(a, s), rg))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(dims)?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.require_rank2("slice_rows")?;
        if start + len > r {
            return Err(contract("slice_rows", format!("rows {start}..{} out of {r}", start + len)));
        }
        let value = Tensor::new(&[len, c], src.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.require_rank2("slice_cols")?;
        if start + len > c {
            return Err(contract("slice_cols", format!("cols {start}..{} out of {c}", start + len)));
        }
        let data = (0..r).flat_map(|i| src.row(i)[start..start + len].iter().copied()).collect();
        let value = Tensor::new(&[r, len], data)?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract("concat_rows", "no inputs"))?;
        let cols = self.value(*first).require_rank2("concat_rows")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.require_rank2("concat_rows")?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(*first).shape().clone(),
                    rhs: t.shape().clone(),
                });
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(&[rows, cols], data)?;
        let rg = self.grad_of(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract("concat_cols", "no inputs"))?;
        let rows = self.value(*first).require_rank2("concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.require_rank2("concat_cols")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().clone(),
                    rhs: t.shape().clone(),
                });
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(&[rows, total], data)?;
        let rg = self.grad_of(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row-pairwise Euclidean distances. The subgradient at coincident rows is zero.
    pub fn pairwise_l2(&mut self, a: Var) -> Result<Var> {
        let value = pairwise_l2(self.value(a))?;
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::PairwiseL2(a), rg))
    }

    /// `max(a, floor)`; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(floor));
        let rg = self.grad_of(&[a]);
        Ok(self.push(value, Op::ClampMin(a, floor), rg))
    }

    fn require_scalar(&self, op: &'static str, s: Var) -> Result<f64> {
        self.value(s)
            .item()
            .ok_or_else(|| contract(op, format!("expected a one-element tensor, got {}", self.value(s).shape())))
    }

    /// Multiplies every entry of `a` by the one-element tensor `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.require_scalar("mul_scalar_var", s)?;
        let value = self.value(a).map(|v| v * c);
        let rg = self.grad_of(&[a, s]);
        Ok(self.push(value, Op::MulScalarVar(a, s), rg))
    }

    /// Adds the one-element tensor `s` to every entry of `a`.
    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.require_scalar("add_scalar_var", s)?;
        let value = self.value(a).map(|v| v + c);
        let rg = self.grad_of(&[a, s]);
        Ok(self.push(value, Op::AddScalarVar(a, s), rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(contract("backward", format!("root must be scalar, got {}", self.value(root).shape())));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::from_shape(self.value(root).shape().clone(), vec![1.0])?);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
            adj[idx] = Some(g);
        }

        let mut adjoints = adj;
        adjoints.resize(self.nodes.len(), None);
        for (slot, node) in adjoints.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().clone()).collect();
        Ok(Gradients { adjoints, shapes })
    }

    fn send(&self, adj: &mut [Option<Tensor>], to: Var, delta: Tensor) {
        if self.nodes[to.0].requires_grad {
            accumulate(&mut adj[to.0], delta);
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                    BinaryOp::Add => (g.data.clone(), g.data.clone()),
                    BinaryOp::Sub => (g.data.clone(), g.data.iter().map(|v| -v).collect()),
                    BinaryOp::Mul => (
                        g.data.iter().zip(&vb.data).map(|(g, y)| g * y).collect(),
                        g.data.iter().zip(&va.data).map(|(g, x)| g * x).collect(),
                    ),
                    BinaryOp::Div => (
                        g.data.iter().zip(&vb.data).map(|(g, y)| g / y).collect(),
                        g.data.iter().zip(&va.data).zip(&vb.data).map(|((g, x), y)| -g * x / (y * y)).collect(),
                    ),
                };
                self.send(adj, *a, Tensor::from_shape(va.shape().clone(), ga)?);
                self.send(adj, *b, Tensor::from_shape(vb.shape().clone(), gb)?);
            }
            Op::ScalarRhs(op, a, c) => {
                let delta = match op {
                    BinaryOp::Add | BinaryOp::Sub => g.clone(),
                    BinaryOp::Mul => g.map(|v| v * c),
                    BinaryOp::Div => g.map(|v| v / c),
                };
                self.send(adj, *a, delta);
            }
            Op::Unary(op, a) => {
                let x = self.value(*a);
                let data = g.data.iter().zip(&x.data).zip(&out.data).map(|((g, x), y)| g * op.derivative(*x, *y)).collect();
                self.send(adj, *a, Tensor::from_shape(x.shape().clone(), data)?);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.send(adj, *a, matmul(g, &transpose(vb)?)?);
                }
                if self.nodes[b.0].requires_grad {
                    self.send(adj, *b, matmul(&transpose(va)?, g)?);
                }
            }
            Op::Transpose(a) => self.send(adj, *a, transpose(g)?),
            Op::Softmax(a) => {
                let n = out.shape().last().max(1);
                let mut data = Vec::with_capacity(out.numel());
                for (ys, gs) in out.data.chunks(n).zip(g.data.chunks(n)) {
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    data.extend(ys.iter().zip(gs).map(|(y, g)| y * (g - dot)));
                }
                self.send(adj, *a, Tensor::from_shape(out.shape().clone(), data)?);
            }
            Op::Conv1d(seq, kernel) => {
                let (s, k) = (self.value(*seq), self.value(*kernel));
                let (t_len, d) = (s.rows(), s.cols());
                let radius = (k.numel() as isize - 1) / 2;
                let mut gs = vec![0.0; s.numel()];
                let mut gk = vec![0.0; k.numel()];
                for t in 0..t_len {
                    let grow = &g.data[t * d..(t + 1) * d];
                    for (ki, &kv) in k.data.iter().enumerate() {
                        let src = t as isize + ki as isize - radius;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        let src = src as usize;
                        let srow = &s.data[src * d..(src + 1) * d];
                        let mut acc = 0.0;
                        for j in 0..d {
                            gs[src * d + j] += kv * grow[j];
                            acc += grow[j] * srow[j];
                        }
                        gk[ki] += acc;
                    }
                }
                self.send(adj, *seq, Tensor::from_shape(s.shape().clone(), gs)?);
                self.send(adj, *kernel, Tensor::from_shape(k.shape().clone(), gk)?);
            }
            Op::SumAll(a) => {
                let src = self.value(*a);
                self.send(adj, *a, Tensor::full(src.dims(), g.data[0]));
            }
            Op::SumLastDim(a) => {
                let src = self.value(*a);
                let n = src.shape().last();
                let data = g.data.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                self.send(adj, *a, Tensor::from_shape(src.shape().clone(), data)?);
            }
            Op::SumRows(a) => {
                let src = self.value(*a);
                let data = (0..src.rows()).flat_map(|_| g.data.iter().copied()).collect();
                self.send(adj, *a, Tensor::from_shape(src.shape().clone(), data)?);
            }
            Op::AddRow(a, b) => {
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for row in g.data.chunks(c.max(1)) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                self.send(adj, *a, g.clone());
                self.send(adj, *b, Tensor::vector(gb));
            }
            Op::ScaleRows(a, s) => {
                let (va, vs) = (self.value(*a), self.value(*s));
                let c = va.cols().max(1);
                let mut ga = g.data.clone();
                let mut gs = vec![0.0; vs.numel()];
                for (i, (grow, arow)) in ga.chunks_mut(c).zip(va.data.chunks(c)).enumerate() {
                    gs[i] = grow.iter().zip(arow).map(|(g, x)| g * x).sum();
                    grow.iter_mut().for_each(|v| *v *= vs.data[i]);
                }
                self.send(adj, *a, Tensor::from_shape(va.shape().clone(), ga)?);
                self.send(adj, *s, Tensor::from_shape(vs.shape().clone(), gs)?);
            }
            Op::Reshape(a) => {
                let src = self.value(*a);
                self.send(adj, *a, g.reshape(src.dims())?);
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut data = vec![0.0; src.numel()];
                data[start * c..start * c + g.numel()].copy_from_slice(&g.data);
                self.send(adj, *a, Tensor::from_shape(src.shape().clone(), data)?);
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let (c, len) = (src.cols(), g.cols());
                let mut data = vec![0.0; src.numel()];
                for i in 0..src.rows() {
                    data[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                self.send(adj, *a, Tensor::from_shape(src.shape().clone(), data)?);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let piece = g.data[offset..offset + n].to_vec();
                    self.send(adj, p, Tensor::from_shape(self.value(p).shape().clone(), piece)?);
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let src = self.value(p);
                    let w = src.cols();
                    let data = (0..src.rows()).flat_map(|i| g.row(i)[col..col + w].iter().copied()).collect();
                    self.send(adj, p, Tensor::from_shape(src.shape().clone(), data)?);
                    col += w;
                }
            }
            Op::PairwiseL2(a) => {
                let x = self.value(*a);
                let (n, d) = (x.rows(), x.cols());
                let mut gx = vec![0.0; x.numel()];
                for i in 0..n {
                    for j in 0..n {
                        let dist = out.data[i * n + j];
                        if i == j || dist == 0.0 {
                            continue;
                        }
                        let w = g.data[i * n + j] / dist;
                        for k in 0..d {
                            let diff = x.data[i * d + k] - x.data[j * d + k];
                            gx[i * d + k] += w * diff;
                            gx[j * d + k] -= w * diff;
                        }
                    }
                }
                self.send(adj, *a, Tensor::from_shape(x.shape().clone(), gx)?);
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a);
                let data = g.data.iter().zip(&x.data).map(|(g, v)| if v > floor { *g } else { 0.0 }).collect();
                self.send(adj, *a, Tensor::from_shape(x.shape().clone(), data)?);
            }
            Op::MulScalarVar(a, s) => {
                let c = self.value(*s).data[0];
                let x = self.value(*a);
                let gs: f64 = g.data.iter().zip(&x.data).map(|(g, v)| g * v).sum();
                self.send(adj, *a, g.map(|v| v * c));
                self.send(adj, *s, Tensor::from_shape(self.value(*s).shape().clone(), vec![gs])?);
            }
            Op::AddScalarVar(a, s) => {
                self.send(adj, *a, g.clone());
                self.send(adj, *s, Tensor::from_shape(self.value(*s).shape().clone(), vec![g.sum()])?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn softmax_cross_entropy_stationary_at_uniform() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::vector(vec![0.0; 4]));
        let target = tape.constant(Tensor::vector(vec![0.25; 4]));
        let p = tape.softmax_lastdim(logits).unwrap();
        let lp = tape.log(p).unwrap();
        let prod = tape.mul(target, lp).unwrap();
        let s = tape.sum(prod).unwrap();
        let loss = tape.neg(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        for g in grads.get(logits).unwrap().data() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p).unwrap();
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn reused_var_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap();
        let grads = tape.backward(z).unwrap();
        // z = 2x², dz/dx = 4x
        assert_eq!(grads.get(x).unwrap().data(), &[12.0]);
    }
}
