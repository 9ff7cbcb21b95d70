//! Reverse-mode tape over dense matrices.
//!
//! Every node holds a 2D array; sample batches live along the columns so a
//! whole set of learning points flows through one node. Binary element-wise
//! ops broadcast any unit dimension, which covers bias columns, scalar
//! weights and row vectors against multi-component outputs.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::{Array2, Axis};

pub type Mat = Array2<f64>;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Shift(usize),
    MatMul(usize, usize),
    Tanh(usize),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    Row(usize, usize),
    Stack(Vec<usize>),
    /// Element-wise map with a precomputed local derivative.
    Local(usize, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Recording of one scalar-valued computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Mat {
        match &self.grads[var.idx] {
            Some(g) => g.clone(),
            None => Mat::zeros(self.shapes[var.idx]),
        }
    }
}

fn shape_of(m: &Mat) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn expand(m: &Mat, shape: (usize, usize)) -> Mat {
    if shape_of(m) == shape {
        m.clone()
    } else {
        m.broadcast(shape)
            .expect("broadcast shape checked at record time")
            .to_owned()
    }
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: Mat, shape: (usize, usize)) -> Mat {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
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

    fn push(&self, value: Mat, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Differentiable input.
    pub fn param(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Input that is not tracked for gradients (its adjoint is still
    /// accumulated, but nothing reads it).
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Mat::from_elem((1, 1), value))
    }

    pub fn row(&self, values: &[f64]) -> Var<'_> {
        self.constant(Mat::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    /// Stacks `1 x n` (or `k x n`) vars on top of each other.
    pub fn stack(&self, rows: &[Var<'_>]) -> Var<'_> {
        let views: Vec<Mat> = rows.iter().map(|r| r.value()).collect();
        let refs: Vec<_> = views.iter().map(|m| m.view()).collect();
        let value =
            ndarray::concatenate(Axis(0), &refs).expect("stacked rows share a column count");
        self.push(value, Op::Stack(rows.iter().map(|r| r.idx).collect()))
    }

    /// Element-wise function of `x` with known derivative `dfdx`.
    pub fn local<'t>(&'t self, x: Var<'t>, value: Mat, dfdx: Mat) -> Var<'t> {
        assert_eq!(shape_of(&value), x.shape());
        assert_eq!(shape_of(&dfdx), x.shape());
        self.push(value, Op::Local(x.idx, dfdx))
    }

    fn value_of(&self, idx: usize) -> std::cell::Ref<'_, Mat> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[idx].value)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: fn(usize, usize) -> Op,
        f: fn(&Mat, &Mat) -> Mat,
    ) -> Var<'_> {
        let value = {
            let va = self.value_of(a);
            let vb = self.value_of(b);
            broadcast_shape(shape_of(&va), shape_of(&vb));
            f(&va, &vb)
        };
        self.push(value, op(a, b))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            shape_of(&nodes[output.idx].value),
            (1, 1),
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        grads[output.idx] = Some(Mat::ones((1, 1)));

        fn accumulate(grads: &mut [Option<Mat>], idx: usize, g: Mat) {
            match &mut grads[idx] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let shape = |j: usize| shape_of(&nodes[j].value);
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(g.clone(), shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(g.clone(), shape(*b)));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(g.clone(), shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(-&g, shape(*b)));
                }
                Op::Mul(a, b) => {
                    let va = &nodes[*a].value;
                    let vb = &nodes[*b].value;
                    accumulate(&mut grads, *a, reduce_to(&g * vb, shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(&g * va, shape(*b)));
                }
                Op::Div(a, b) => {
                    let vb = &nodes[*b].value;
                    let ga = &g / vb;
                    // d(a/b)/db = -(a/b)/b
                    let gb = -(&g * &node.value) / vb;
                    accumulate(&mut grads, *a, reduce_to(ga, shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(gb, shape(*b)));
                }
                Op::Neg(a) => accumulate(&mut grads, *a, -&g),
                Op::Scale(a, s) => accumulate(&mut grads, *a, &g * *s),
                Op::Shift(a) => accumulate(&mut grads, *a, reduce_to(g.clone(), shape(*a))),
                Op::MatMul(a, b) => {
                    let va = &nodes[*a].value;
                    let vb = &nodes[*b].value;
                    accumulate(&mut grads, *a, g.dot(&vb.t()));
                    accumulate(&mut grads, *b, va.t().dot(&g));
                }
                Op::Tanh(a) => {
                    let d = node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads, *a, &g * &d);
                }
                Op::Sqrt(a) => {
                    let d = node.value.mapv(|y| 0.5 / y);
                    accumulate(&mut grads, *a, &g * &d);
                }
                Op::Square(a) => {
                    let d = nodes[*a].value.mapv(|x| 2.0 * x);
                    accumulate(&mut grads, *a, &g * &d);
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    accumulate(&mut grads, *a, Mat::from_elem(shape(*a), s));
                }
                Op::Row(a, k) => {
                    let mut full = Mat::zeros(shape(*a));
                    full.row_mut(*k).assign(&g.row(0));
                    accumulate(&mut grads, *a, full);
                }
                Op::Stack(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = nodes[p].value.nrows();
                        let slice = g.slice(ndarray::s![offset..offset + rows, ..]).to_owned();
                        accumulate(&mut grads, p, slice);
                        offset += rows;
                    }
                }
                Op::Local(a, d) => accumulate(&mut grads, *a, &g * d),
            }
            grads[i] = Some(g);
        }
        let shapes = nodes.iter().map(|n| shape_of(&n.value)).collect();
        Gradients { grads, shapes }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Mat {
        self.tape.value_of(self.idx).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        shape_of(&self.tape.value_of(self.idx))
    }

    /// Value of a `1 x 1` var.
    pub fn item(&self) -> f64 {
        let v = self.tape.value_of(self.idx);
        assert_eq!(shape_of(&v), (1, 1));
        v[[0, 0]]
    }

    fn unary(self, op: fn(usize) -> Op, f: impl Fn(&Mat) -> Mat) -> Var<'t> {
        let value = f(&self.tape.value_of(self.idx));
        self.tape.push(value, op(self.idx))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh, |m| m.mapv(f64::tanh))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt, |m| m.mapv(f64::sqrt))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square, |m| m.mapv(|x| x * x))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum, |m| Mat::from_elem((1, 1), m.sum()))
    }

    /// Sum divided by the number of columns (the sample count).
    pub fn mean_over_samples(self) -> Var<'t> {
        let n = self.shape().1.max(1) as f64;
        self.sum() * (1.0 / n)
    }

    pub fn row(self, k: usize) -> Var<'t> {
        let value = self
            .tape
            .value_of(self.idx)
            .row(k)
            .to_owned()
            .insert_axis(Axis(0));
        self.tape.push(value, Op::Row(self.idx, k))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let value = {
            let a = self.tape.value_of(self.idx);
            let b = self.tape.value_of(rhs.idx);
            a.dot(&*b)
        };
        self.tape.push(value, Op::MatMul(self.idx, rhs.idx))
    }

    /// Broadcast `self` to a larger shape (via adding a zero matrix).
    pub fn broadcast(self, shape: (usize, usize)) -> Var<'t> {
        let value = expand(&self.tape.value_of(self.idx), shape);
        self.tape.push(value, Op::Shift(self.idx))
    }
}

macro_rules! binary_ops {
    ($trait:ident, $method:ident, $variant:ident, $f:expr) => {
        impl<'t> $trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.tape.binary(self.idx, rhs.idx, Op::$variant, $f)
            }
        }
    };
}

binary_ops!(Add, add, Add, |a, b| a + b);
binary_ops!(Sub, sub, Sub, |a, b| a - b);
binary_ops!(Mul, mul, Mul, |a, b| a * b);
binary_ops!(Div, div, Div, |a, b| a / b);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, |m| -m)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Shift, move |m| m + rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self + (-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        let value = &*self.tape.value_of(self.idx) * rhs;
        self.tape.push(value, Op::Scale(self.idx, rhs))
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self * (1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        -rhs + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let num = rhs.tape.constant(Mat::from_elem((1, 1), self));
        num / rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd<F: Fn(&Mat) -> f64>(f: F, x: &Mat) -> Mat {
        let h = 1e-6;
        let mut out = Mat::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            out[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn broadcast_ops_backprop() {
        let x0 = array![[0.3, -0.2, 0.7], [0.1, 0.5, -0.4]];
        let b0 = array![[0.2], [-0.6]];
        let eval = |x: &Mat, b: &Mat| {
            let tape = Tape::new();
            let xv = tape.param(x.clone());
            let bv = tape.param(b.clone());
            let y = ((xv + bv).tanh() * xv / (bv.square() + 1.0)).sqrt_safe_sum();
            (y.item(), tape.backward(y).wrt(xv), tape.backward(y).wrt(bv))
        };
        let (_, gx, gb) = eval(&x0, &b0);
        let fx = fd(|x| eval(x, &b0).0, &x0);
        let fb = fd(|b| eval(&x0, b).0, &b0);
        for (a, b) in gx.iter().zip(fx.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        for (a, b) in gb.iter().zip(fb.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    impl<'t> Var<'t> {
        fn sqrt_safe_sum(self) -> Var<'t> {
            (self.square() + 1.0).sqrt().sum()
        }
    }

    #[test]
    fn matmul_stack_and_rows() {
        let w0 = array![[0.5, -1.0], [2.0, 0.25], [0.1, 0.3]];
        let eval = |w: &Mat| {
            let tape = Tape::new();
            let wv = tape.param(w.clone());
            let r0 = tape.row(&[0.1, 0.2, 0.3, 0.4]);
            let r1 = tape.row(&[1.0, -1.0, 0.5, 0.0]);
            let h = tape.stack(&[r0 * 2.0, r1]);
            let z = wv.matmul(h);
            let y = (z.row(1) * z.row(2) - z.row(0)).sum();
            (y.item(), tape.backward(y).wrt(wv))
        };
        let (_, g) = eval(&w0);
        let f = fd(|w| eval(w).0, &w0);
        for (a, b) in g.iter().zip(f.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn unused_param_has_zero_gradient() {
        let tape = Tape::new();
        let a = tape.param(Mat::from_elem((2, 2), 1.0));
        let b = tape.param(Mat::from_elem((1, 1), 3.0));
        let y = (b * b).sum();
        let g = tape.backward(y);
        assert!(g.wrt(a).iter().all(|&v| v == 0.0));
        assert_eq!(g.wrt(b)[[0, 0]], 6.0);
    }
}
