//! Dense n-dimensional tensors with reverse-mode automatic differentiation,
//! plus the feature transforms (positional encoding, min-max normalization)
//! used across the pipeline.
//!
//! The recorder ([`Tape`]) owns every intermediate value; operations return
//! lightweight [`Var`] handles. Gradients accumulate across `backward` calls
//! until [`Tape::zero_grads`] is called, so staged training can sum losses
//! from multiple heads.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("domain error: {0}")]
    Domain(&'static str),
}

/// An owned tensor value. Row-major, 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Shape("data length != product of dims"));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Add `g` into this tensor's grad buffer (allocating it on first use).
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        let buf = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (dst, src) in buf.iter_mut().zip(g) {
            *dst += *src;
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Silu,
    Relu,
    Square,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(UnaryKind, usize),
    Binary(BinaryKind, usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    SumAll(usize),
    Scale(usize, f64),
    AddConst(usize),
    Clamp(usize, f64, f64),
    Reshape(usize),
    /// Contiguous flat slice of the input, reinterpreted with the node shape.
    Slice(usize, usize),
    /// Column range of a 2-D input.
    SliceCols { a: usize, rows: usize, cols: usize, start: usize, take: usize },
    Concat(Vec<usize>),
    /// Custom op with a dense cached jacobian (out_len x in_len, row-major).
    CachedJac { a: usize, jac: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
    needs: bool,
}

/// The gradient recorder: an append-only list of operations replayed in
/// exact reverse order by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + fmath::exp(-x))
}

/// Standard trailing-dimension broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(TensorError::Shape("broadcast-incompatible shapes"));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides into an operand as seen from the broadcast output (0 on
/// broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let pad = out.len() - shape.len();
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[pad + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Drop all recorded operations but keep the allocation.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs: bool) -> Var {
        self.nodes.push(Node { shape, data, grad: None, op, needs });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- value introduction -------------------------------------------------

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    pub fn var(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(shape, data, Op::Leaf, true)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(shape, data, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.push(vec![1], vec![x], Op::Leaf, false)
    }

    // ---- elementwise --------------------------------------------------------

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let needs = self.needs(a.0);
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| match kind {
                UnaryKind::Neg => -x,
                UnaryKind::Sin => fmath::sin(x),
                UnaryKind::Cos => fmath::cos(x),
                UnaryKind::Exp => fmath::exp(x),
                UnaryKind::Log => fmath::ln(x),
                UnaryKind::Tanh => fmath::tanh(x),
                UnaryKind::Sigmoid => sigmoid(x),
                UnaryKind::Silu => x * sigmoid(x),
                UnaryKind::Relu => {
                    if x > 0.0 {
                        x
                    } else {
                        0.0
                    }
                }
                UnaryKind::Square => x * x,
                UnaryKind::Sqrt => fmath::sqrt(x),
            })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, Op::Unary(kind, a.0), needs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Neg, a)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sin, a)
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Cos, a)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Silu, a)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.nodes[a.0].data.iter().any(|&x| x < 0.0) {
            return Err(TensorError::Domain("log of negative value"));
        }
        Ok(self.unary(UnaryKind::Log, a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.nodes[a.0].data.iter().any(|&x| x < 0.0) {
            return Err(TensorError::Domain("sqrt of negative value"));
        }
        Ok(self.unary(UnaryKind::Sqrt, a))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let out_shape = broadcast_shape(&self.nodes[a.0].shape, &self.nodes[b.0].shape)?;
        let n: usize = out_shape.iter().product();
        let needs = self.needs(a.0) || self.needs(b.0);
        let mut data = vec![0.0; n];
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let (ad, bd) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        if self.nodes[a.0].shape == self.nodes[b.0].shape {
            for i in 0..n {
                data[i] = f(ad[i], bd[i]);
            }
        } else if bd.len() == 1 {
            for i in 0..n {
                data[i] = f(ad[i], bd[0]);
            }
        } else if ad.len() == 1 {
            for i in 0..n {
                data[i] = f(ad[0], bd[i]);
            }
        } else {
            let sa = broadcast_strides(&self.nodes[a.0].shape, &out_shape);
            let sb = broadcast_strides(&self.nodes[b.0].shape, &out_shape);
            let mut idx = vec![0usize; out_shape.len()];
            let (mut ia, mut ib) = (0usize, 0usize);
            for val in data.iter_mut() {
                *val = f(ad[ia], bd[ib]);
                for d in (0..out_shape.len()).rev() {
                    idx[d] += 1;
                    ia += sa[d];
                    ib += sb[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                    ia -= sa[d] * out_shape[d];
                    ib -= sb[d] * out_shape[d];
                }
            }
        }
        Ok(self.push(out_shape, data, Op::Binary(kind, a.0, b.0), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let needs = self.needs(a.0);
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| c * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, Op::Scale(a.0, c), needs)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let needs = self.needs(a.0);
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| c + x).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, Op::AddConst(a.0), needs)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let needs = self.needs(a.0);
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.clamp(lo, hi)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, Op::Clamp(a.0, lo, hi), needs)
    }

    // ---- linear algebra -----------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ashape, bshape) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ashape.len() != 2 {
            return Err(TensorError::Shape("matmul lhs must be 2-D"));
        }
        let (m, k) = (ashape[0], ashape[1]);
        let (n, out_shape) = match bshape.len() {
            1 => {
                if bshape[0] != k {
                    return Err(TensorError::Shape("matmul inner dims differ"));
                }
                (1usize, vec![m])
            }
            2 => {
                if bshape[0] != k {
                    return Err(TensorError::Shape("matmul inner dims differ"));
                }
                (bshape[1], vec![m, bshape[1]])
            }
            _ => return Err(TensorError::Shape("matmul rhs must be 1-D or 2-D")),
        };
        let needs = self.needs(a.0) || self.needs(b.0);
        let (ad, bd) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..p * n + n];
                let crow = &mut data[i * n..i * n + n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
        Ok(self.push(out_shape, data, Op::Matmul(a.0, b.0), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(TensorError::Shape("transpose needs a 2-D input"));
        }
        let (r, c) = (shape[0], shape[1]);
        let needs = self.needs(a.0);
        let ad = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ad[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], data, Op::Transpose(a.0), needs))
    }

    // ---- reductions & shape -------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let needs = self.needs(a.0);
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![1], vec![s], Op::SumAll(a.0), needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of squared entries; the workhorse of every L2 loss.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum_all(sq)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != self.nodes[a.0].data.len() {
            return Err(TensorError::Shape("reshape changes element count"));
        }
        let needs = self.needs(a.0);
        let data = self.nodes[a.0].data.clone();
        Ok(self.push(shape, data, Op::Reshape(a.0), needs))
    }

    /// Contiguous flat slice `[start, start+len)` reinterpreted as `shape`.
    pub fn slice(&mut self, a: Var, start: usize, shape: Vec<usize>) -> Result<Var, TensorError> {
        let len: usize = shape.iter().product();
        if start + len > self.nodes[a.0].data.len() {
            return Err(TensorError::Shape("slice out of bounds"));
        }
        let needs = self.needs(a.0);
        let data = self.nodes[a.0].data[start..start + len].to_vec();
        Ok(self.push(shape, data, Op::Slice(a.0, start), needs))
    }

    /// Row range `[r0, r0+nrows)` of a 2-D input.
    pub fn slice_rows(&mut self, a: Var, r0: usize, nrows: usize) -> Result<Var, TensorError> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(TensorError::Shape("slice_rows needs a 2-D input"));
        }
        let c = shape[1];
        if r0 + nrows > shape[0] {
            return Err(TensorError::Shape("row slice out of bounds"));
        }
        self.slice(a, r0 * c, vec![nrows, c])
    }

    /// Column range `[c0, c0+take)` of a 2-D input.
    pub fn slice_cols(&mut self, a: Var, c0: usize, take: usize) -> Result<Var, TensorError> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(TensorError::Shape("slice_cols needs a 2-D input"));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if c0 + take > cols {
            return Err(TensorError::Shape("column slice out of bounds"));
        }
        let needs = self.needs(a.0);
        let ad = &self.nodes[a.0].data;
        let mut data = vec![0.0; rows * take];
        for r in 0..rows {
            data[r * take..(r + 1) * take].copy_from_slice(&ad[r * cols + c0..r * cols + c0 + take]);
        }
        Ok(self.push(
            vec![rows, take],
            data,
            Op::SliceCols { a: a.0, rows, cols, start: c0, take },
            needs,
        ))
    }

    /// Flatten-concatenate in order, reinterpreted as `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: Vec<usize>) -> Result<Var, TensorError> {
        let total: usize = parts.iter().map(|v| self.nodes[v.0].data.len()).sum();
        if shape.iter().product::<usize>() != total {
            return Err(TensorError::Shape("concat shape does not match total length"));
        }
        let needs = parts.iter().any(|v| self.needs(v.0));
        let mut data = Vec::with_capacity(total);
        for v in parts {
            data.extend_from_slice(&self.nodes[v.0].data);
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(shape, data, Op::Concat(ids), needs))
    }

    /// Record a custom differentiable op through its dense jacobian
    /// (`out_len x in_len`, row-major), computed by the caller at forward
    /// time.
    pub fn custom_with_jacobian(
        &mut self,
        a: Var,
        out_shape: Vec<usize>,
        out_data: Vec<f64>,
        jac: Vec<f64>,
    ) -> Result<Var, TensorError> {
        let out_len: usize = out_shape.iter().product();
        if out_len != out_data.len() || jac.len() != out_len * self.nodes[a.0].data.len() {
            return Err(TensorError::Shape("jacobian dimensions inconsistent"));
        }
        let needs = self.needs(a.0);
        Ok(self.push(out_shape, out_data, Op::CachedJac { a: a.0, jac }, needs))
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::Shape("backward requires a scalar loss"));
        }
        // Per-pass gradients live in a scratch table so repeated backward
        // calls add cleanly into the persistent buffers.
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        scratch[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs {
                continue;
            }
            let Some(g) = scratch[i].take() else { continue };
            self.propagate(i, &g, &mut scratch);
            let node = &mut self.nodes[i];
            let buf = node.grad.get_or_insert_with(|| vec![0.0; node.data.len()]);
            for (dst, src) in buf.iter_mut().zip(&g) {
                *dst += *src;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], scratch: &mut [Option<Vec<f64>>]) {
        let touch = |scratch: &mut [Option<Vec<f64>>], id: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[id].needs {
                return;
            }
            let buf = scratch[id].get_or_insert_with(|| vec![0.0; self.nodes[id].data.len()]);
            f(buf);
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Unary(kind, a) => {
                let x = &self.nodes[*a].data;
                let y = &self.nodes[i].data;
                touch(scratch, *a, &mut |ga| {
                    for j in 0..g.len() {
                        let d = match kind {
                            UnaryKind::Neg => -1.0,
                            UnaryKind::Sin => fmath::cos(x[j]),
                            UnaryKind::Cos => -fmath::sin(x[j]),
                            UnaryKind::Exp => y[j],
                            UnaryKind::Log => 1.0 / x[j],
                            UnaryKind::Tanh => 1.0 - y[j] * y[j],
                            UnaryKind::Sigmoid => y[j] * (1.0 - y[j]),
                            UnaryKind::Silu => {
                                let s = sigmoid(x[j]);
                                s * (1.0 + x[j] * (1.0 - s))
                            }
                            UnaryKind::Relu => {
                                if x[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Square => 2.0 * x[j],
                            UnaryKind::Sqrt => 0.5 / y[j],
                        };
                        ga[j] += d * g[j];
                    }
                });
            }
            Op::Binary(kind, a, b) => {
                let out_shape = &self.nodes[i].shape;
                let (ad, bd) = (&self.nodes[*a].data, &self.nodes[*b].data);
                let same = self.nodes[*a].shape == self.nodes[*b].shape;
                // Walk output elements, mapping each one back to its operand
                // indices; accumulation performs the broadcast reduction.
                let sa = broadcast_strides(&self.nodes[*a].shape, out_shape);
                let sb = broadcast_strides(&self.nodes[*b].shape, out_shape);
                let dims = out_shape.clone();
                let step = |ga: Option<&mut Vec<f64>>, gb: Option<&mut Vec<f64>>| {
                    let mut ga = ga;
                    let mut gb = gb;
                    let mut idx = vec![0usize; dims.len()];
                    let (mut ia, mut ib) = (0usize, 0usize);
                    for (j, &gj) in g.iter().enumerate() {
                        let (iaj, ibj) = if same { (j, j) } else { (ia, ib) };
                        match kind {
                            BinaryKind::Add => {
                                if let Some(ga) = ga.as_deref_mut() {
                                    ga[iaj] += gj;
                                }
                                if let Some(gb) = gb.as_deref_mut() {
                                    gb[ibj] += gj;
                                }
                            }
                            BinaryKind::Sub => {
                                if let Some(ga) = ga.as_deref_mut() {
                                    ga[iaj] += gj;
                                }
                                if let Some(gb) = gb.as_deref_mut() {
                                    gb[ibj] -= gj;
                                }
                            }
                            BinaryKind::Mul => {
                                if let Some(ga) = ga.as_deref_mut() {
                                    ga[iaj] += gj * bd[ibj];
                                }
                                if let Some(gb) = gb.as_deref_mut() {
                                    gb[ibj] += gj * ad[iaj];
                                }
                            }
                            BinaryKind::Div => {
                                if let Some(ga) = ga.as_deref_mut() {
                                    ga[iaj] += gj / bd[ibj];
                                }
                                if let Some(gb) = gb.as_deref_mut() {
                                    gb[ibj] -= gj * ad[iaj] / (bd[ibj] * bd[ibj]);
                                }
                            }
                        }
                        if !same {
                            for d in (0..dims.len()).rev() {
                                idx[d] += 1;
                                ia += sa[d];
                                ib += sb[d];
                                if idx[d] < dims[d] {
                                    break;
                                }
                                idx[d] = 0;
                                ia -= sa[d] * dims[d];
                                ib -= sb[d] * dims[d];
                            }
                        }
                    }
                };
                // Gradients may be needed for one or both operands.
                let need_a = self.nodes[*a].needs;
                let need_b = self.nodes[*b].needs;
                if *a == *b {
                    if need_a {
                        // For x op x both partial paths apply.
                        let len = self.nodes[*a].data.len();
                        let mut both = vec![0.0; len];
                        step(Some(&mut both), None);
                        step(None, Some(&mut both));
                        let buf = scratch[*a].get_or_insert_with(|| vec![0.0; len]);
                        for (dst, src) in buf.iter_mut().zip(&both) {
                            *dst += *src;
                        }
                    }
                } else {
                    let mut ga = if need_a {
                        Some(scratch[*a].take().unwrap_or_else(|| vec![0.0; ad.len()]))
                    } else {
                        None
                    };
                    let mut gb = if need_b {
                        Some(scratch[*b].take().unwrap_or_else(|| vec![0.0; bd.len()]))
                    } else {
                        None
                    };
                    step(ga.as_mut(), gb.as_mut());
                    if let Some(ga) = ga {
                        scratch[*a] = Some(ga);
                    }
                    if let Some(gb) = gb {
                        scratch[*b] = Some(gb);
                    }
                }
            }
            Op::Matmul(a, b) => {
                let ashape = &self.nodes[*a].shape;
                let (m, k) = (ashape[0], ashape[1]);
                let n = if self.nodes[*b].shape.len() == 1 { 1 } else { self.nodes[*b].shape[1] };
                let (ad, bd) = (&self.nodes[*a].data, &self.nodes[*b].data);
                touch(scratch, *a, &mut |ga| {
                    // dA = G . B^T
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i2 * n + j] * bd[p * n + j];
                            }
                            ga[i2 * k + p] += s;
                        }
                    }
                });
                touch(scratch, *b, &mut |gb| {
                    // dB = A^T . G
                    for p in 0..k {
                        for i2 in 0..m {
                            let av = ad[i2 * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i2 * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (c, r) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                touch(scratch, *a, &mut |ga| {
                    for x in 0..c {
                        for y in 0..r {
                            ga[y * c + x] += g[x * r + y];
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                touch(scratch, *a, &mut |ga| {
                    for v in ga.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::Scale(a, c) => {
                touch(scratch, *a, &mut |ga| {
                    for j in 0..g.len() {
                        ga[j] += c * g[j];
                    }
                });
            }
            Op::AddConst(a) => {
                touch(scratch, *a, &mut |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = &self.nodes[*a].data;
                touch(scratch, *a, &mut |ga| {
                    for j in 0..g.len() {
                        if x[j] >= *lo && x[j] <= *hi {
                            ga[j] += g[j];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                touch(scratch, *a, &mut |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j];
                    }
                });
            }
            Op::Slice(a, start) => {
                touch(scratch, *a, &mut |ga| {
                    for j in 0..g.len() {
                        ga[start + j] += g[j];
                    }
                });
            }
            Op::SliceCols { a, rows, cols, start, take } => {
                touch(scratch, *a, &mut |ga| {
                    for r in 0..*rows {
                        for j in 0..*take {
                            ga[r * cols + start + j] += g[r * take + j];
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0usize;
                for &p in parts {
                    let len = self.nodes[p].data.len();
                    touch(scratch, p, &mut |gp| {
                        for j in 0..len {
                            gp[j] += g[off + j];
                        }
                    });
                    off += len;
                }
            }
            Op::CachedJac { a, jac } => {
                let in_len = self.nodes[*a].data.len();
                touch(scratch, *a, &mut |ga| {
                    for (oi, &gout) in g.iter().enumerate() {
                        if gout == 0.0 {
                            continue;
                        }
                        let row = &jac[oi * in_len..(oi + 1) * in_len];
                        for (gaj, &jv) in ga.iter_mut().zip(row) {
                            *gaj += gout * jv;
                        }
                    }
                });
            }
        }
    }
}

// ---- feature transforms -----------------------------------------------------

/// Sinusoidal positional encoding: each scalar `p` maps to
/// `(sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(d-1) pi p), cos(2^(d-1) pi p))`.
/// Output length is exactly `2 * width * xs.len()`. Callers are responsible
/// for scaling inputs into [0, 1].
pub fn positional_encode(xs: &[f64], width: usize) -> Vec<f64> {
    debug_assert!(width >= 1);
    let mut out = Vec::with_capacity(2 * width * xs.len());
    for &p in xs {
        let mut freq = core::f64::consts::PI;
        for _ in 0..width {
            out.push(fmath::sin(freq * p));
            out.push(fmath::cos(freq * p));
            freq *= 2.0;
        }
    }
    out
}

/// Per-axis affine range retained by [`minmax_normalize`] for inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRecord {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

const DEGENERATE_AXIS_EPS: f64 = 1e-9;

/// Map each axis of a point set affinely onto [0, 1]. A degenerate axis
/// (max - min below 1e-9) maps every value to 0.5.
pub fn minmax_normalize(points: &[[f64; 3]]) -> (Vec<[f64; 3]>, ScaleRecord) {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let out = points
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for a in 0..3 {
                let span = max[a] - min[a];
                q[a] = if span < DEGENERATE_AXIS_EPS { 0.5 } else { (p[a] - min[a]) / span };
            }
            q
        })
        .collect();
    (out, ScaleRecord { min, max })
}

/// Inverse of [`minmax_normalize`] under the same record.
pub fn minmax_denormalize(points: &[[f64; 3]], rec: &ScaleRecord) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for a in 0..3 {
                let span = rec.max[a] - rec.min[a];
                q[a] = if span < DEGENERATE_AXIS_EPS { rec.min[a] } else { rec.min[a] + p[a] * span };
            }
            q
        })
        .collect()
}

// ---- finite-difference oracle ------------------------------------------------

/// Central finite differences of a scalar function; the independent oracle
/// used by gradient tests throughout the workspace.
pub mod gradcheck {
    use alloc::vec::Vec;

    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(x.len());
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let orig = xp[i];
            xp[i] = orig + eps;
            let hi = f(&xp);
            xp[i] = orig - eps;
            let lo = f(&xp);
            xp[i] = orig;
            g.push((hi - lo) / (2.0 * eps));
        }
        g
    }

    /// Worst relative disagreement, guarded for small magnitudes.
    pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        let mut worst = 0.0f64;
        for (&a, &n) in analytic.iter().zip(numeric) {
            let denom = a.abs().max(n.abs()).max(1.0);
            worst = worst.max((a - n).abs() / denom);
        }
        worst
    }
}
