//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D array. Graph nodes record the operation that produced
//! them; [`grad`] walks the graph backwards. Backward rules are themselves
//! written with [`Var`] operations, so passing `create_graph = true` yields
//! gradients that can be differentiated again (needed by the gradient penalty
//! of the Wasserstein critic).
//!
//! Broadcasting is explicit inside the graph (`BroadcastTo`/`SumTo`), but the
//! binary operators broadcast `(1, n)`, `(m, 1)` and `(1, 1)` operands for you.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|c| c.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|c| c.set(prev));
    }
}

/// Geometry of a 2-D convolution over NHWC images flattened to rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    LeakyRelu(Var, f64),
    BroadcastTo(Var),
    SumTo(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    PadCols(Var, usize),
    Im2Col(Var, ConvGeometry),
    Col2Im(Var, ConvGeometry),
}

struct Node {
    id: u64,
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// A node in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    /// A constant: gradients never flow into it.
    pub fn constant(value: Array2<f64>) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op: Op::Leaf,
            requires_grad: false,
        }))
    }

    /// A differentiable leaf, typically a bound parameter or an input whose
    /// gradient is wanted.
    pub fn leaf(value: Array2<f64>) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op: Op::Leaf,
            requires_grad: true,
        }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Array2::from_elem((1, 1), v))
    }

    fn from_op(value: Array2<f64>, op: Op) -> Var {
        let requires_grad = grad_enabled() && op_requires_grad(&op);
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op,
            requires_grad,
        }))
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.0.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.value.dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single entry of a `1 x 1` value.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.0.value[[0, 0]]
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    // ---- shape plumbing -------------------------------------------------

    pub fn broadcast_to(&self, shape: (usize, usize)) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let (r, c) = self.shape();
        assert!(
            (r == shape.0 || r == 1) && (c == shape.1 || c == 1),
            "cannot broadcast {:?} to {:?}",
            self.shape(),
            shape
        );
        let value = self
            .value()
            .broadcast(shape)
            .expect("broadcast shape checked above")
            .to_owned();
        Var::from_op(value, Op::BroadcastTo(self.clone()))
    }

    /// Sums over the broadcast axes so that the result has `shape`.
    pub fn sum_to(&self, shape: (usize, usize)) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let (r, c) = self.shape();
        assert!(
            (shape.0 == r || shape.0 == 1) && (shape.1 == c || shape.1 == 1),
            "cannot sum {:?} to {:?}",
            self.shape(),
            shape
        );
        let mut v = self.value().clone();
        if shape.0 == 1 && r != 1 {
            v = v.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        if shape.1 == 1 && c != 1 {
            v = v.sum_axis(Axis(1)).insert_axis(Axis(1));
        }
        Var::from_op(v, Op::SumTo(self.clone()))
    }

    pub fn reshape(&self, shape: (usize, usize)) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        assert_eq!(shape.0 * shape.1, self.value().len(), "reshape size mismatch");
        let flat: Vec<f64> = self.value().iter().copied().collect();
        let value = Array2::from_shape_vec(shape, flat).expect("size checked");
        Var::from_op(value, Op::Reshape(self.clone()))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Var {
        assert!(start <= end && end <= self.shape().1);
        let value = self
            .value()
            .slice(ndarray::s![.., start..end])
            .to_owned();
        Var::from_op(value, Op::SliceCols(self.clone(), start))
    }

    /// Embeds the columns at offset `start` of a zero matrix with `total` columns.
    pub fn pad_cols(&self, start: usize, total: usize) -> Var {
        let (r, c) = self.shape();
        assert!(start + c <= total);
        let mut value = Array2::zeros((r, total));
        value
            .slice_mut(ndarray::s![.., start..start + c])
            .assign(self.value());
        Var::from_op(value, Op::PadCols(self.clone(), start))
    }

    pub fn concat_cols(parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let total: usize = parts.iter().map(|p| p.shape().1).sum();
        let mut offset = 0;
        let mut acc: Option<Var> = None;
        for p in parts {
            let padded = p.pad_cols(offset, total);
            offset += p.shape().1;
            acc = Some(match acc {
                None => padded,
                Some(a) => &a + &padded,
            });
        }
        acc.expect("non-empty")
    }

    pub fn im2col(&self, geom: ConvGeometry) -> Var {
        let value = im2col_forward(self.value(), &geom);
        Var::from_op(value, Op::Im2Col(self.clone(), geom))
    }

    fn col2im(&self, geom: ConvGeometry) -> Var {
        let value = col2im_forward(self.value(), &geom);
        Var::from_op(value, Op::Col2Im(self.clone(), geom))
    }

    // ---- arithmetic -----------------------------------------------------

    fn binary_shape(a: &Var, b: &Var) -> (usize, usize) {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        let r = if ar == br { ar } else if ar == 1 { br } else if br == 1 { ar } else {
            panic!("incompatible shapes {:?} and {:?}", a.shape(), b.shape())
        };
        let c = if ac == bc { ac } else if ac == 1 { bc } else if bc == 1 { ac } else {
            panic!("incompatible shapes {:?} and {:?}", a.shape(), b.shape())
        };
        (r, c)
    }

    fn add_var(&self, other: &Var) -> Var {
        let shape = Var::binary_shape(self, other);
        let (a, b) = (self.broadcast_to(shape), other.broadcast_to(shape));
        let value = a.value() + b.value();
        Var::from_op(value, Op::Add(a, b))
    }

    fn sub_var(&self, other: &Var) -> Var {
        let shape = Var::binary_shape(self, other);
        let (a, b) = (self.broadcast_to(shape), other.broadcast_to(shape));
        let value = a.value() - b.value();
        Var::from_op(value, Op::Sub(a, b))
    }

    fn mul_var(&self, other: &Var) -> Var {
        let shape = Var::binary_shape(self, other);
        let (a, b) = (self.broadcast_to(shape), other.broadcast_to(shape));
        let value = a.value() * b.value();
        Var::from_op(value, Op::Mul(a, b))
    }

    fn div_var(&self, other: &Var) -> Var {
        let shape = Var::binary_shape(self, other);
        let (a, b) = (self.broadcast_to(shape), other.broadcast_to(shape));
        let value = a.value() / b.value();
        Var::from_op(value, Op::Div(a, b))
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value() * c, Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self + &Var::scalar(c)
    }

    pub fn matmul(&self, other: &Var) -> Var {
        let value = self.value().dot(other.value());
        Var::from_op(value, Op::MatMul(self.clone(), other.clone()))
    }

    pub fn t(&self) -> Var {
        let value = self.value().t().to_owned();
        Var::from_op(value, Op::Transpose(self.clone()))
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().mapv(f64::exp), Op::Exp(self.clone()))
    }

    pub fn ln(&self) -> Var {
        Var::from_op(self.value().mapv(f64::ln), Op::Log(self.clone()))
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().mapv(f64::tanh), Op::Tanh(self.clone()))
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(self.value().mapv(stable_sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().mapv(f64::sqrt), Op::Sqrt(self.clone()))
    }

    pub fn square(&self) -> Var {
        self * self
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let value = self.value().mapv(|x| if x > 0.0 { x } else { slope * x });
        Var::from_op(value, Op::LeakyRelu(self.clone(), slope))
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&self) -> Var {
        // softplus(x) = relu(x) + log(1 + exp(-|x|)); |x| = relu(x) + relu(-x)
        let pos = self.relu();
        let abs = &pos + &(-self).relu();
        &pos + &(-&abs).exp().add_scalar(1.0).ln()
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum_all(&self) -> Var {
        self.sum_to((1, 1))
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Row sums, shape `(m, 1)`.
    pub fn sum_rows(&self) -> Var {
        self.sum_to((self.shape().0, 1))
    }

    /// Column sums, shape `(1, n)`.
    pub fn sum_cols(&self) -> Var {
        self.sum_to((1, self.shape().1))
    }

    pub fn mean_cols(&self) -> Var {
        let m = self.shape().0 as f64;
        self.sum_cols().scale(1.0 / m)
    }

    /// Row-wise log-sum-exp, shape `(m, 1)`.
    pub fn logsumexp_rows(&self) -> Var {
        let shift = self
            .value()
            .map_axis(Axis(1), |row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .insert_axis(Axis(1));
        let shift = Var::constant(shift);
        let centered = self - &shift;
        &centered.exp().sum_rows().ln() + &shift
    }

    pub fn log_softmax_rows(&self) -> Var {
        self - &self.logsumexp_rows()
    }

    pub fn softmax_rows(&self) -> Var {
        self.log_softmax_rows().exp()
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn op_requires_grad(op: &Op) -> bool {
    match op {
        Op::Leaf => false,
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
            a.requires_grad() || b.requires_grad()
        }
        Op::Neg(a)
        | Op::Scale(a, _)
        | Op::Transpose(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Sqrt(a)
        | Op::LeakyRelu(a, _)
        | Op::BroadcastTo(a)
        | Op::SumTo(a)
        | Op::Reshape(a)
        | Op::SliceCols(a, _)
        | Op::PadCols(a, _)
        | Op::Im2Col(a, _)
        | Op::Col2Im(a, _) => a.requires_grad(),
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $inner:ident) => {
        impl $trait<&Var> for &Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                self.$inner(rhs)
            }
        }
        impl $trait<Var> for Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                (&self).$inner(&rhs)
            }
        }
        impl $trait<&Var> for Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                (&self).$inner(rhs)
            }
        }
        impl $trait<Var> for &Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                self.$inner(&rhs)
            }
        }
    };
}

impl_binop!(Add, add, add_var);
impl_binop!(Sub, sub, sub_var);
impl_binop!(Mul, mul, mul_var);
impl_binop!(Div, div, div_var);

impl Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::from_op(-self.value(), Op::Neg(self.clone()))
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        -&self
    }
}

fn im2col_forward(x: &Array2<f64>, g: &ConvGeometry) -> Array2<f64> {
    let batch = x.nrows();
    assert_eq!(x.ncols(), g.image_len(), "im2col input width mismatch");
    let (oh, ow) = (g.out_height(), g.out_width());
    let patch = g.patch_len();
    let mut out = Array2::zeros((batch * oh * ow, patch));
    for b in 0..batch {
        let img = x.row(b);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = out.row_mut((b * oh + oy) * ow + ox);
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        let src = (iy as usize * g.width + ix as usize) * g.channels;
                        let dst = (ky * g.kernel + kx) * g.channels;
                        for c in 0..g.channels {
                            row[dst + c] = img[src + c];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im_forward(cols: &Array2<f64>, g: &ConvGeometry) -> Array2<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    assert_eq!(cols.ncols(), g.patch_len(), "col2im patch width mismatch");
    assert_eq!(cols.nrows() % (oh * ow), 0);
    let batch = cols.nrows() / (oh * ow);
    let mut out = Array2::zeros((batch, g.image_len()));
    for b in 0..batch {
        let mut img = out.row_mut(b);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row((b * oh + oy) * ow + ox);
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.width + ix as usize) * g.channels;
                        let src = (ky * g.kernel + kx) * g.channels;
                        for c in 0..g.channels {
                            img[dst + c] += row[src + c];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Vector-Jacobian products for one node. `out` is the node itself.
fn backward(out: &Var, g: &Var) -> Vec<(Var, Var)> {
    match &out.0.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(a.clone(), g.clone()), (b.clone(), g.clone())],
        Op::Sub(a, b) => vec![(a.clone(), g.clone()), (b.clone(), -g)],
        Op::Mul(a, b) => vec![(a.clone(), g * b), (b.clone(), g * a)],
        Op::Div(a, b) => vec![(a.clone(), g / b), (b.clone(), -(g * out) / b)],
        Op::Neg(a) => vec![(a.clone(), -g)],
        Op::Scale(a, c) => vec![(a.clone(), g.scale(*c))],
        Op::MatMul(a, b) => vec![
            (a.clone(), g.matmul(&b.t())),
            (b.clone(), a.t().matmul(g)),
        ],
        Op::Transpose(a) => vec![(a.clone(), g.t())],
        Op::Exp(a) => vec![(a.clone(), g * out)],
        Op::Log(a) => vec![(a.clone(), g / a)],
        Op::Tanh(a) => {
            let d = (-out.square()).add_scalar(1.0);
            vec![(a.clone(), g * &d)]
        }
        Op::Sigmoid(a) => {
            let d = out * &(-out).add_scalar(1.0);
            vec![(a.clone(), g * &d)]
        }
        Op::Sqrt(a) => vec![(a.clone(), (g / out).scale(0.5))],
        Op::LeakyRelu(a, slope) => {
            let s = *slope;
            let mask = a.value().mapv(|x| if x > 0.0 { 1.0 } else { s });
            vec![(a.clone(), g * &Var::constant(mask))]
        }
        Op::BroadcastTo(a) => vec![(a.clone(), g.sum_to(a.shape()))],
        Op::SumTo(a) => vec![(a.clone(), g.broadcast_to(a.shape()))],
        Op::Reshape(a) => vec![(a.clone(), g.reshape(a.shape()))],
        Op::SliceCols(a, start) => vec![(a.clone(), g.pad_cols(*start, a.shape().1))],
        Op::PadCols(a, start) => {
            let w = a.shape().1;
            vec![(a.clone(), g.slice_cols(*start, start + w))]
        }
        Op::Im2Col(a, geom) => vec![(a.clone(), g.col2im(*geom))],
        Op::Col2Im(a, geom) => vec![(a.clone(), g.im2col(*geom))],
    }
}

fn parents(op: &Op) -> Vec<&Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
            vec![a, b]
        }
        Op::Neg(a)
        | Op::Scale(a, _)
        | Op::Transpose(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Sqrt(a)
        | Op::LeakyRelu(a, _)
        | Op::BroadcastTo(a)
        | Op::SumTo(a)
        | Op::Reshape(a)
        | Op::SliceCols(a, _)
        | Op::PadCols(a, _)
        | Op::Im2Col(a, _)
        | Op::Col2Im(a, _) => vec![a],
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// Entries of `wrt` that `output` does not depend on receive zeros. With
/// `create_graph` the returned gradients are themselves differentiable.
pub fn grad(output: &Var, wrt: &[Var], create_graph: bool) -> Vec<Var> {
    assert_eq!(output.shape(), (1, 1), "grad needs a scalar output");
    let _guard = if create_graph { None } else { Some(NoGradGuard::new()) };

    // Reachable nodes that carry gradient, visited once each.
    let mut order: Vec<Var> = Vec::new();
    let mut seen: HashMap<u64, ()> = HashMap::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || seen.insert(v.id(), ()).is_some() {
            continue;
        }
        for p in parents(&v.0.op) {
            if p.requires_grad() && !seen.contains_key(&p.id()) {
                stack.push(p.clone());
            }
        }
        order.push(v);
    }
    // Parents are always created before children, so descending ids is a
    // valid reverse topological order.
    order.sort_by_key(|v| std::cmp::Reverse(v.id()));

    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.id(), Var::constant(Array2::ones((1, 1))));
    for node in &order {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        for (parent, contrib) in backward(node, &g) {
            if !parent.requires_grad() {
                continue;
            }
            let entry = grads.remove(&parent.id());
            let total = match entry {
                None => contrib,
                Some(prev) => &prev + &contrib,
            };
            grads.insert(parent.id(), total);
        }
    }

    wrt.iter()
        .map(|w| match grads.get(&w.id()) {
            Some(g) if create_graph => g.clone(),
            Some(g) => g.detach(),
            None => Var::constant(Array2::zeros(w.shape())),
        })
        .collect()
}

/// Central finite-difference gradient of `f` at `x`.
///
/// Test and diagnostic helper; `f` is evaluated `2 * x.len()` times.
pub fn finite_difference<F>(x: &Array2<f64>, eps: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut out = Array2::zeros(x.dim());
    let mut probe = x.clone();
    Zip::indexed(&mut out).for_each(|(i, j), o| {
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + eps;
        let up = f(&probe);
        probe[[i, j]] = orig - eps;
        let down = f(&probe);
        probe[[i, j]] = orig;
        *o = (up - down) / (2.0 * eps);
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn check_grad<F>(x0: Array2<f64>, f: F)
    where
        F: Fn(&Var) -> Var,
    {
        let x = Var::leaf(x0.clone());
        let y = f(&x);
        let g = grad(&y, &[x], false).remove(0);
        let fd = finite_difference(&x0, 1e-6, |p| {
            let _ng = NoGradGuard::new();
            f(&Var::constant(p.clone())).item()
        });
        for (a, b) in g.value().iter().zip(fd.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let x0 = array![[0.3, -1.2, 0.7], [1.5, 0.2, -0.4]];
        check_grad(x0.clone(), |x| (x * x).exp().sum_all());
        check_grad(x0.clone(), |x| x.tanh().sigmoid().mean_all());
        check_grad(x0.clone(), |x| x.logsumexp_rows().sum_all());
        check_grad(x0.clone(), |x| x.softplus().sum_all());
        let w = Var::constant(array![[1.0, 2.0], [0.5, -1.0], [0.1, 0.3]]);
        check_grad(x0.clone(), move |x| x.matmul(&w).tanh().sum_all());
        check_grad(x0.clone(), |x| (x.square().add_scalar(1.0)).sqrt().ln().sum_all());
        check_grad(x0.clone(), |x| (x / &x.sum_cols().add_scalar(5.0)).sum_all());
        check_grad(x0, |x| x.t().reshape((1, 6)).slice_cols(1, 4).pad_cols(2, 7).exp().sum_all());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let geom = ConvGeometry {
            height: 4,
            width: 3,
            channels: 2,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x0 = Array2::from_shape_fn((2, geom.image_len()), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 7.0 - 0.6);
        let w = Var::constant(Array2::from_shape_fn((geom.patch_len(), 2), |(i, j)| ((i + 2 * j) % 5) as f64 / 5.0 - 0.4));
        check_grad(x0, move |x| x.im2col(geom).matmul(&w).tanh().square().sum_all());
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let geom = ConvGeometry {
            height: 5,
            width: 4,
            channels: 3,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let x = Array2::from_shape_fn((2, geom.image_len()), |(i, j)| (i as f64 + 1.0) * (j as f64).sin());
        let cols = im2col_forward(&x, &geom);
        let y = Array2::from_shape_fn(cols.dim(), |(i, j)| ((i * 13 + j) % 7) as f64 - 3.0);
        let lhs = (&cols * &y).sum();
        let rhs = (&x * &col2im_forward(&y, &geom)).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-9);
    }

    #[test]
    fn second_order_gradient() {
        // f(x) = sum(x^3); grad = 3x^2; d/dx sum(grad^2) = 36 x^3
        let x0 = array![[0.5, -1.0, 2.0]];
        let x = Var::leaf(x0.clone());
        let y = (&(&x * &x) * &x).sum_all();
        let g = grad(&y, &[x.clone()], true).remove(0);
        let h = grad(&g.square().sum_all(), &[x], false).remove(0);
        for (a, xi) in h.value().iter().zip(x0.iter()) {
            assert_abs_diff_eq!(*a, 36.0 * xi.powi(3), epsilon = 1e-9);
        }
    }

    #[test]
    fn unused_inputs_get_zero_gradient() {
        let a = Var::leaf(array![[1.0, 2.0]]);
        let b = Var::leaf(array![[3.0]]);
        let g = grad(&a.sum_all(), &[a.clone(), b], false);
        assert_eq!(g[1].value(), &array![[0.0]]);
        assert_eq!(g[0].value(), &array![[1.0, 1.0]]);
    }

    #[test]
    fn no_grad_guard_stops_recording() {
        let a = Var::leaf(array![[1.0]]);
        let y = {
            let _g = NoGradGuard::new();
            a.exp()
        };
        assert!(!y.requires_grad());
        assert!(a.exp().requires_grad());
    }
}
