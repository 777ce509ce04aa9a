// Wengert tape: every primitive appends a node holding its output value and
// the handles of its inputs. `backward` replays the list in reverse, so
// topological order is the insertion order and each node is visited once.

use super::gemm::gemm;
use super::mlp::Activation;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulRows(Var, Vec<f64>),
    MulConst(Var, Tensor),
    Activate(Var, Activation),
    Log(Var),
    Clamp(Var, f64, f64),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input (parameters, or inputs whose gradient is wanted).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(av.data(), m, k, false, bv.data(), k, n, false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `x + b` with a `1 x m` bias broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let m = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(m.max(1)) {
            row.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Multiply row `i` of `a` by the constant `w[i]`.
    pub fn mul_rows(&mut self, a: Var, w: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if w.len() != av.rows() {
            return Err(Error::shape(
                "mul_rows",
                format!("{} weights for {:?}", w.len(), av.shape()),
            ));
        }
        let m = av.cols();
        let mut out = av.clone();
        for (row, &wi) in out.data_mut().chunks_mut(m.max(1)).zip(&w) {
            row.iter_mut().for_each(|o| *o *= wi);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulRows(a, w), rg))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let out = self.value(a).zip_map(&c, |x, y| x * y)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        let out = self.value(a).map(|x| act.apply(x));
        let rg = self.rg(a);
        self.push(out, Op::Activate(a, act), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {:?}", av.shape()),
            ));
        }
        let mut data = Vec::with_capacity(av.rows() * (end - start));
        for row in av.iter_rows() {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::matrix(av.rows(), end - start, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start, end), rg))
    }

    /// Row sums: `n x m -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let sums: Vec<f64> = av.iter_rows().map(|r| r.iter().sum()).collect();
        let out = Tensor::column(&sums);
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape is {:?}", lv.shape()),
            ));
        }
        self.backward_seeded(loss, Tensor::full(lv.shape(), 1.0))
    }

    /// Reverse pass with an explicit output adjoint (vector-Jacobian product).
    pub fn backward_seeded(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        same_shape("backward_seeded", self.value(out), &seed)?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            // non-leaf adjoints are only needed while propagating
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(g.data(), m, n, false, bv.data(), k, n, true, &mut ga, false);
                    accumulate(&mut grads[a.0], Tensor::matrix(m, k, ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(av.data(), m, k, true, g.data(), m, n, false, &mut gb, false);
                    accumulate(&mut grads[b.0], Tensor::matrix(k, n, gb)?);
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if self.rg(*b) {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for row in g.iter_rows() {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    accumulate(&mut grads[b.0], Tensor::matrix(1, m, gb)?);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], g.map(|x| x * c));
            }
            Op::MulRows(a, w) => {
                let m = g.cols();
                let mut ga = g.clone();
                for (row, &wi) in ga.data_mut().chunks_mut(m.max(1)).zip(w) {
                    row.iter_mut().for_each(|o| *o *= wi);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::MulConst(a, c) => {
                accumulate(&mut grads[a.0], g.zip_map(c, |x, y| x * y)?);
            }
            Op::Activate(a, act) => {
                let x = self.value(*a);
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(gi, (&xi, &yi))| gi * act.derivative(xi, yi))
                    .collect();
                accumulate(&mut grads[a.0], Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Log(a) => {
                accumulate(&mut grads[a.0], g.zip_map(self.value(*a), |gi, x| gi / x)?);
            }
            Op::Clamp(a, lo, hi) => {
                let ga = g.zip_map(self.value(*a), |gi, x| {
                    if x >= *lo && x <= *hi {
                        gi
                    } else {
                        0.0
                    }
                })?;
                accumulate(&mut grads[a.0], ga);
            }
            Op::Square(a) => {
                accumulate(
                    &mut grads[a.0],
                    g.zip_map(self.value(*a), |gi, x| 2.0 * x * gi)?,
                );
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if self.rg(*p) {
                        let mut data = Vec::with_capacity(g.rows() * pc);
                        for row in g.iter_rows() {
                            data.extend_from_slice(&row[offset..offset + pc]);
                        }
                        accumulate(&mut grads[p.0], Tensor::matrix(g.rows(), pc, data)?);
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start, end) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for (r, row) in g.iter_rows().enumerate() {
                    ga.row_mut(r)[*start..*end].copy_from_slice(row);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::SumCols(a) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for (r, &gi) in g.data().iter().enumerate() {
                    ga.row_mut(r).iter_mut().for_each(|v| *v = gi);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Sum(a) => {
                let gi = g.data()[0];
                accumulate(&mut grads[a.0], Tensor::full(self.value(*a).shape(), gi));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let gi = g.data()[0] / av.len() as f64;
                accumulate(&mut grads[a.0], Tensor::full(av.shape(), gi));
            }
        }
        Ok(())
    }
}
