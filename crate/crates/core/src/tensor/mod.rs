//! Dense float64 tensors and the reverse-mode tape used to train every model.
//!
//! [`Tensor`] is an immutable row-major array. The free kernels in this module
//! (`binary`, `matmul`, `softmax_lastdim`, `conv1d_same`, ...) are pure and
//! never record anything; [`Tape`] wraps the same kernels and records the
//! operations so [`Tape::backward`] can replay them in reverse.

mod gradcheck;
mod tape;

pub use gradcheck::{check_gradients, finite_difference_gradient, relative_error, GradCheck};
pub use tape::{Gradients, Tape, Var};

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: invalid configuration: {detail}")]
    Config { op: &'static str, detail: String },
    #[error("{op}: contract violated: {detail}")]
    Contract { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Ordered list of dimension sizes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Size of the last dimension (1 for a scalar).
    pub fn last(&self) -> usize {
        self.0.last().copied().unwrap_or(1)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl From<&[usize]> for Shape {
    fn from(d: &[usize]) -> Self {
        Shape(d.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims);
        if shape.numel() != data.len() {
            return Err(TensorError::Contract {
                op: "tensor",
                detail: format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Tensor::new(shape.dims(), data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![v] }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor { shape: Shape::new([v.len()]), data: v }
    }

    /// Builds a matrix from equal-length rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Contract { op: "matrix", detail: "ragged rows".into() });
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let shape = Shape::new(dims);
        let n = shape.numel();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(dims: &[usize], v: f64) -> Self {
        let shape = Shape::new(dims);
        let n = shape.numel();
        Tensor { shape, data: vec![v; n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        match self.dims() {
            [r, _] => *r,
            [_] => 1,
            _ => 0,
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims);
        if shape.numel() != self.numel() {
            return Err(TensorError::ShapeMismatch { op: "reshape", lhs: self.shape.clone(), rhs: shape });
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.dims() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::Contract { op, detail: format!("expected a matrix, got {}", self.shape) }),
        }
    }
}

// ── Kernels ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Exp,
    Log,
    Neg,
    Sqrt,
    Square,
    Recip,
    Tanh,
    Sigmoid,
}

impl UnaryOp {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Neg => -x,
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Square => x * x,
            UnaryOp::Recip => 1.0 / x,
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Exp => y,
            UnaryOp::Log => 1.0 / x,
            UnaryOp::Neg => -1.0,
            UnaryOp::Sqrt => 0.5 / y,
            UnaryOp::Square => 2.0 * x,
            UnaryOp::Recip => -y * y,
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Sigmoid => y * (1.0 - y),
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Neg => "negate",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Square => "square",
            UnaryOp::Recip => "recip",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sigmoid => "sigmoid",
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

/// Right-hand operand of an elementwise binary op.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

pub fn binary(op: BinaryOp, a: &Tensor, b: Operand<'_>) -> Result<Tensor> {
    let data = match b {
        Operand::Tensor(b) => {
            if a.shape != b.shape {
                return Err(TensorError::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            a.data.iter().zip(&b.data).map(|(&x, &y)| op.apply(x, y)).collect()
        }
        Operand::Scalar(s) => a.data.iter().map(|&x| op.apply(x, s)).collect(),
    };
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn unary(op: UnaryOp, a: &Tensor) -> Result<Tensor> {
    match op {
        UnaryOp::Log => {
            if let Some(bad) = a.data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(TensorError::Domain { op: op.name(), detail: format!("non-positive input {bad}") });
            }
        }
        UnaryOp::Sqrt => {
            if let Some(bad) = a.data.iter().find(|&&v| v < 0.0 || v.is_nan()) {
                return Err(TensorError::Domain { op: op.name(), detail: format!("negative input {bad}") });
            }
        }
        _ => {}
    }
    Ok(a.map(|x| op.apply(x)))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(BinaryOp::Add, a, Operand::Tensor(b))
}

pub fn exp(a: &Tensor) -> Tensor {
    a.map(f64::exp)
}

pub fn log(a: &Tensor) -> Result<Tensor> {
    unary(UnaryOp::Log, a)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_rank2("matmul")?;
    let (k2, n) = b.require_rank2("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch { op: "matmul", lhs: a.shape.clone(), rhs: b.shape.clone() });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.require_rank2("transpose")?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::new(&[c, r], out)
}

/// Softmax over each last-dimension slice, with max subtraction.
pub fn softmax_lastdim(a: &Tensor) -> Result<Tensor> {
    if !a.all_finite() {
        return Err(TensorError::Domain { op: "softmax", detail: "non-finite input".into() });
    }
    let n = a.shape.last();
    let mut out = a.data.clone();
    if n == 0 {
        return Ok(Tensor { shape: a.shape.clone(), data: out });
    }
    for slice in out.chunks_mut(n) {
        let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in slice.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in slice.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor { shape: a.shape.clone(), data: out })
}

fn conv_radius(kernel: &Tensor) -> Result<usize> {
    if kernel.shape.rank() != 1 {
        return Err(TensorError::Contract { op: "conv1d", detail: format!("kernel must be a vector, got {}", kernel.shape) });
    }
    let w = kernel.numel();
    if w.is_multiple_of(2) {
        return Err(TensorError::Config { op: "conv1d", detail: format!("kernel width {w} must be odd") });
    }
    Ok((w - 1) / 2)
}

/// Depthwise temporal convolution with zero padding, output length equal to input.
///
/// `out[t, d] = Σ_o kernel[o + L] · seq[t + o, d]` for `o` in `-L..=L`.
pub fn conv1d_same(seq: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (t_len, d) = seq.require_rank2("conv1d")?;
    let radius = conv_radius(kernel)? as isize;
    let mut out = vec![0.0; t_len * d];
    for t in 0..t_len {
        let orow = &mut out[t * d..(t + 1) * d];
        for (ki, &kv) in kernel.data.iter().enumerate() {
            let src = t as isize + ki as isize - radius;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let srow = &seq.data[src as usize * d..(src as usize + 1) * d];
            for (o, &s) in orow.iter_mut().zip(srow) {
                *o += kv * s;
            }
        }
    }
    Tensor::new(&[t_len, d], out)
}

/// Euclidean distances between every pair of rows.
pub fn pairwise_l2(x: &Tensor) -> Result<Tensor> {
    let (n, _) = x.require_rank2("pairwise_l2")?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Tensor::new(&[n, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(add(&a, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(exp(&Tensor::vector(vec![0.0, 0.0])).data(), &[1.0, 1.0]);
        let x = Tensor::vector(vec![0.3, -1.2]);
        let back = log(&exp(&x)).unwrap();
        assert!(back.max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn elementwise_errors() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let err = add(&a, &b).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
        assert!(matches!(log(&Tensor::vector(vec![1.0, 0.0])), Err(TensorError::Domain { .. })));
        assert!(matches!(log(&Tensor::vector(vec![-2.0])), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn scalar_operand() {
        let a = Tensor::vector(vec![1.0, -2.0]);
        let out = binary(BinaryOp::Mul, &a, Operand::Scalar(3.0)).unwrap();
        assert_eq!(out.data(), &[3.0, -6.0]);
        let neg = unary(UnaryOp::Neg, &a).unwrap();
        assert_eq!(neg.data(), &[-1.0, 2.0]);
    }

    #[test]
    fn matmul_examples() {
        let a = Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::matrix(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random(&mut rng, &[3, 3]);
        assert_eq!(matmul(&Tensor::identity(3), &m).unwrap(), m);

        let err = matmul(&a, &Tensor::zeros(&[3, 1])).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "matmul", .. }));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, &[4, 5]);
            let b = random(&mut rng, &[5, 3]);
            let fast = matmul(&a, &b).unwrap();
            for i in 0..4 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for p in 0..5 {
                        acc += a.get2(i, p) * b.get2(p, j);
                    }
                    assert!((fast.get2(i, j) - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_lastdim(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_lastdim(&Tensor::vector(vec![1000.0, 1000.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_lastdim(&Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((s.data()[i] - v.exp() / z).abs() <= 1e-15);
        }
        assert!(softmax_lastdim(&Tensor::vector(vec![f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn conv_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seq = random(&mut rng, &[6, 3]);
        let delta = Tensor::vector(vec![0.0, 1.0, 0.0]);
        assert_eq!(conv1d_same(&seq, &delta).unwrap(), seq);

        let seq = Tensor::matrix(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let ones = Tensor::vector(vec![1.0, 1.0, 1.0]);
        assert_eq!(conv1d_same(&seq, &ones).unwrap().data(), &[3.0, 6.0, 5.0]);

        let even = Tensor::vector(vec![1.0, 1.0]);
        assert!(matches!(conv1d_same(&seq, &even), Err(TensorError::Config { .. })));
    }

    #[test]
    fn conv_matches_double_loop() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.random_range(1..9);
            let w = 2 * rng.random_range(0..4) + 1;
            let seq = random(&mut rng, &[t, 2]);
            let kernel = random(&mut rng, &[w]);
            let fast = conv1d_same(&seq, &kernel).unwrap();
            let l = (w as i64 - 1) / 2;
            for ti in 0..t as i64 {
                for d in 0..2 {
                    let mut acc = 0.0;
                    for o in -l..=l {
                        let s = ti + o;
                        if (0..t as i64).contains(&s) {
                            acc += kernel.data()[(o + l) as usize] * seq.get2(s as usize, d);
                        }
                    }
                    assert!((fast.get2(ti as usize, d) - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn pairwise_is_symmetric_with_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[5, 3]);
        let d = pairwise_l2(&x).unwrap();
        for i in 0..5 {
            assert_eq!(d.get2(i, i), 0.0);
            for j in 0..5 {
                assert_eq!(d.get2(i, j), d.get2(j, i));
            }
        }
    }
}
