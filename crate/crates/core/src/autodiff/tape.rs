//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! accumulates vector-Jacobian products into a [`Gradients`] table.
//! Nodes that do not depend on any trainable leaf are skipped.

use std::cell::RefCell;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    LogAddExp(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Softplus(usize),
    Clamp(usize, f64, f64),
    SliceCols(usize, usize),
    ConcatCols(usize, usize),
    SumCols(usize),
    SumAll(usize),
    MeanAll(usize),
    /// Row-wise mean of the selected entries; `sel` holds `keep` column
    /// indices per row.
    TruncatedMeanCols {
        input: usize,
        keep: usize,
        sel: Vec<usize>,
    },
    /// `unit_grad` is d(loss)/d(pred), computed with the forward value.
    QuantileHuber {
        pred: usize,
        unit_grad: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
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

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn unary(&self, a: usize, f: impl FnOnce(&Tensor) -> Tensor, op: Op) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value), nodes[a].requires_grad)
        };
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        f: impl FnOnce(&Tensor, &Tensor) -> Tensor,
        op: Op,
    ) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (
                f(&nodes[a].value, &nodes[b].value),
                nodes[a].requires_grad || nodes[b].requires_grad,
            )
        };
        self.push(value, op, rg)
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(self, loss.tape),
            "backward called with a Var from another tape"
        );
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                &Op::MatMul(a, b) => {
                    let (m, k) = (val(a).rows(), val(a).cols());
                    let n = val(b).cols();
                    if needs(a) {
                        // dA = dC * B^T
                        let mut da = Tensor::zeros(&[m, k]);
                        gemm(
                            m,
                            n,
                            k,
                            g.data(),
                            (n as isize, 1),
                            val(b).data(),
                            (1, n as isize),
                            da.data_mut(),
                            0.0,
                        );
                        accumulate(&mut grads, a, da, val(a).shape());
                    }
                    if needs(b) {
                        // dB = A^T * dC
                        let mut db = Tensor::zeros(&[k, n]);
                        gemm(
                            k,
                            m,
                            n,
                            val(a).data(),
                            (1, k as isize),
                            g.data(),
                            (n as isize, 1),
                            db.data_mut(),
                            0.0,
                        );
                        accumulate(&mut grads, b, db, val(b).shape());
                    }
                }
                &Op::AddRow(a, bias) => {
                    if needs(bias) {
                        let c = g.cols();
                        let mut db = vec![0.0; c];
                        for row in g.data().chunks(c) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, bias, Tensor::vector(db), val(bias).shape());
                    }
                    if needs(a) {
                        accumulate(&mut grads, a, g, val(a).shape());
                    }
                }
                &Op::Add(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads, b, g.clone(), val(b).shape());
                    }
                    if needs(a) {
                        accumulate(&mut grads, a, g, val(a).shape());
                    }
                }
                &Op::Sub(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads, b, g.map(|v| -v), val(b).shape());
                    }
                    if needs(a) {
                        accumulate(&mut grads, a, g, val(a).shape());
                    }
                }
                &Op::Mul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, a, g.zip_map(val(b), |g, y| g * y), val(a).shape());
                    }
                    if needs(b) {
                        accumulate(&mut grads, b, g.zip_map(val(a), |g, x| g * x), val(b).shape());
                    }
                }
                &Op::Min(a, b) => {
                    // Ties route the gradient to the first operand.
                    let (va, vb) = (val(a), val(b));
                    if needs(a) {
                        let mut d = g.clone();
                        for ((d, x), y) in d.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                            if x > y {
                                *d = 0.0;
                            }
                        }
                        accumulate(&mut grads, a, d, va.shape());
                    }
                    if needs(b) {
                        let mut d = g;
                        for ((d, x), y) in d.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                            if x <= y {
                                *d = 0.0;
                            }
                        }
                        accumulate(&mut grads, b, d, vb.shape());
                    }
                }
                &Op::LogAddExp(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    if needs(a) {
                        let wa = va.zip_map(vb, |x, y| sigmoid(x - y));
                        accumulate(&mut grads, a, g.zip_map(&wa, |g, w| g * w), va.shape());
                    }
                    if needs(b) {
                        let wb = vb.zip_map(va, |y, x| sigmoid(y - x));
                        accumulate(&mut grads, b, g.zip_map(&wb, |g, w| g * w), vb.shape());
                    }
                }
                &Op::Scale(a, c) => {
                    accumulate(&mut grads, a, g.map(|v| v * c), val(a).shape());
                }
                &Op::AddScalar(a) => {
                    accumulate(&mut grads, a, g, val(a).shape());
                }
                &Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::Exp(a) => {
                    let d = g.zip_map(&node.value, |g, y| g * y);
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::Log(a) => {
                    let d = g.zip_map(val(a), |g, x| g / x);
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::Square(a) => {
                    let d = g.zip_map(val(a), |g, x| 2.0 * g * x);
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::Softplus(a) => {
                    let d = g.zip_map(val(a), |g, x| g * sigmoid(x));
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::Clamp(a, lo, hi) => {
                    let d = g.zip_map(val(a), |g, x| if x < lo || x > hi { 0.0 } else { g });
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::SliceCols(a, start) => {
                    let (r, c) = (val(a).rows(), val(a).cols());
                    let len = g.cols();
                    let mut d = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        d.row_mut(i)[start..start + len].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::ConcatCols(a, b) => {
                    let ca = val(a).cols();
                    let cb = val(b).cols();
                    if needs(a) {
                        accumulate(&mut grads, a, g.slice_cols(0, ca), val(a).shape());
                    }
                    if needs(b) {
                        accumulate(&mut grads, b, g.slice_cols(ca, cb), val(b).shape());
                    }
                }
                &Op::SumCols(a) => {
                    let (r, c) = (val(a).rows(), val(a).cols());
                    let mut d = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        let gi = g.data()[i];
                        d.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::SumAll(a) => {
                    let d = Tensor::full(val(a).shape(), g.item());
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                &Op::MeanAll(a) => {
                    let n = val(a).len() as f64;
                    let d = Tensor::full(val(a).shape(), g.item() / n);
                    accumulate(&mut grads, a, d, val(a).shape());
                }
                Op::TruncatedMeanCols { input, keep, sel } => {
                    let (r, c) = (val(*input).rows(), val(*input).cols());
                    let mut d = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        let gi = g.data()[i] / *keep as f64;
                        let row = d.row_mut(i);
                        for &j in &sel[i * keep..(i + 1) * keep] {
                            row[j] += gi;
                        }
                    }
                    accumulate(&mut grads, *input, d, val(*input).shape());
                }
                Op::QuantileHuber { pred, unit_grad } => {
                    let gi = g.item();
                    accumulate(&mut grads, *pred, unit_grad.map(|v| v * gi), val(*pred).shape());
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor, shape: &[usize]) {
    debug_assert_eq!(g.len(), shape.iter().product::<usize>());
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        slot @ None => {
            // Keep the operand's own shape (rank-1 biases, etc).
            *slot = Some(if g.shape() == shape {
                g
            } else {
                g.reshape(shape).expect("gradient element count")
            });
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (-(a - b).abs()).exp().ln_1p()
}

/// Huber function with threshold `kappa`.
pub(crate) fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

fn quantile_weight(tau: f64, u: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Batch mean of the per-row quantile Huber loss.
pub(crate) fn quantile_huber_value(pred: &Tensor, target: &Tensor, taus: &[f64], kappa: f64) -> f64 {
    let (b, m) = (pred.rows(), pred.cols());
    let t = target.cols();
    let mut total = 0.0;
    for r in 0..b {
        let p = pred.row(r);
        let y = target.row(r);
        for (theta, &tau) in p.iter().zip(taus) {
            for &yi in y {
                let u = yi - theta;
                total += quantile_weight(tau, u) * huber(u, kappa);
            }
        }
    }
    total / (b * m * t) as f64
}

/// Loss value and its gradient with respect to `pred` in one pass.
fn quantile_huber_with_grad(pred: &Tensor, target: &Tensor, taus: &[f64], kappa: f64) -> (f64, Tensor) {
    let (b, m) = (pred.rows(), pred.cols());
    let t = target.cols();
    let scale = 1.0 / (b * m * t) as f64;
    let mut total = 0.0;
    let mut d = Tensor::zeros(&[b, m]);
    for r in 0..b {
        let y = target.row(r);
        let p = pred.row(r);
        let out = d.row_mut(r);
        for ((o, &theta), &tau) in out.iter_mut().zip(p).zip(taus) {
            let (mut value, mut slope) = (0.0, 0.0);
            for &yi in y {
                let u = yi - theta;
                let w = if u < 0.0 { 1.0 - tau } else { tau };
                let a = u.abs();
                let (h, s) = if a <= kappa {
                    (0.5 * u * u, u)
                } else {
                    (kappa * (a - 0.5 * kappa), kappa.copysign(u))
                };
                value += w * h;
                slope += w * s;
            }
            total += value;
            *o = -slope * scale;
        }
    }
    (total * scale, d)
}

/// `tanh` through one `exp`; absolute error within a few ulps of 1.
pub(crate) fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-4 {
        let x2 = x * x;
        return x * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0)));
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "Vars from different tapes");
    }

    fn same_shape(&self, other: &Var<'t>, op: &str) {
        let (a, b) = (self.shape(), other.shape());
        assert_eq!(a, b, "{op}: shape mismatch {a:?} vs {b:?}");
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        self.tape.binary(
            self.id,
            rhs.id,
            |a, b| a.matmul(b).unwrap_or_else(|e| panic!("{e}")),
            Op::MatMul(self.id, rhs.id),
        )
    }

    /// Adds a rank-1 bias to each row.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        self.same_tape(&bias);
        self.tape.binary(
            self.id,
            bias.id,
            |a, b| a.add_row(b).unwrap_or_else(|e| panic!("{e}")),
            Op::AddRow(self.id, bias.id),
        )
    }

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        self.same_shape(&rhs, "add");
        self.tape
            .binary(self.id, rhs.id, |a, b| a.zip_map(b, |x, y| x + y), Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        self.same_shape(&rhs, "sub");
        self.tape
            .binary(self.id, rhs.id, |a, b| a.zip_map(b, |x, y| x - y), Op::Sub(self.id, rhs.id))
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        self.same_shape(&rhs, "mul");
        self.tape
            .binary(self.id, rhs.id, |a, b| a.zip_map(b, |x, y| x * y), Op::Mul(self.id, rhs.id))
    }

    /// Elementwise minimum.
    pub fn min(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        self.same_shape(&rhs, "min");
        self.tape
            .binary(self.id, rhs.id, |a, b| a.zip_map(b, f64::min), Op::Min(self.id, rhs.id))
    }

    /// Elementwise `log(e^a + e^b)`.
    pub fn log_add_exp(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        self.same_shape(&rhs, "log_add_exp");
        self.tape.binary(
            self.id,
            rhs.id,
            |a, b| a.zip_map(b, log_add_exp),
            Op::LogAddExp(self.id, rhs.id),
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| a.map(|x| x * c), Op::Scale(self.id, c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| a.map(|x| x + c), Op::AddScalar(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.map(tanh), Op::Tanh(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.map(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.map(f64::ln), Op::Log(self.id))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.map(|x| x * x), Op::Square(self.id))
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.map(softplus), Op::Softplus(self.id))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.map(|x| x.clamp(lo, hi)), Op::Clamp(self.id, lo, hi))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.slice_cols(start, len), Op::SliceCols(self.id, start))
    }

    pub fn concat_cols(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        self.tape
            .binary(self.id, rhs.id, |a, b| a.concat_cols(b), Op::ConcatCols(self.id, rhs.id))
    }

    /// Row sums, `[r, c] -> [r, 1]`.
    pub fn sum_cols(self) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| {
                let c = a.cols();
                Tensor::matrix(a.rows(), 1, a.data().chunks(c).map(|r| r.iter().sum()).collect())
            },
            Op::SumCols(self.id),
        )
    }

    /// Row means, `[r, c] -> [r, 1]`.
    pub fn mean_cols(self) -> Var<'t> {
        let c = self.shape().last().copied().unwrap_or(1);
        self.sum_cols().scale(1.0 / c as f64)
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| Tensor::scalar(a.sum()), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| Tensor::scalar(a.mean()), Op::MeanAll(self.id))
    }

    /// Row-wise mean of the `keep` smallest entries, `[r, c] -> [r, 1]`.
    pub fn truncated_mean_cols(self, keep: usize) -> Var<'t> {
        let (value, sel, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let (r, c) = (a.rows(), a.cols());
            assert!(keep >= 1 && keep <= c, "truncated_mean_cols: keep {keep} of {c}");
            let mut sel = Vec::with_capacity(r * keep);
            let mut out = Vec::with_capacity(r);
            let mut idx: Vec<usize> = Vec::with_capacity(c);
            for i in 0..r {
                let row = a.row(i);
                idx.clear();
                idx.extend(0..c);
                idx.sort_by(|&x, &y| row[x].total_cmp(&row[y]));
                let kept = &idx[..keep];
                out.push(kept.iter().map(|&j| row[j]).sum::<f64>() / keep as f64);
                sel.extend_from_slice(kept);
            }
            (Tensor::matrix(r, 1, out), sel, nodes[self.id].requires_grad)
        };
        self.tape.push(
            value,
            Op::TruncatedMeanCols {
                input: self.id,
                keep,
                sel,
            },
            rg,
        )
    }

    /// Quantile Huber loss of predicted atoms `[B, M]` against constant
    /// target atoms `[B, T]`, averaged over rows and all `M * T` pairs.
    pub fn quantile_huber(self, target: &Tensor, taus: &[f64], kappa: f64) -> Var<'t> {
        let (value, unit_grad, rg) = {
            let nodes = self.tape.nodes.borrow();
            let p = &nodes[self.id].value;
            assert_eq!(p.rows(), target.rows(), "quantile_huber: row mismatch");
            assert_eq!(p.cols(), taus.len(), "quantile_huber: one tau per atom");
            let (v, g) = quantile_huber_with_grad(p, target, taus, kappa);
            (v, g, nodes[self.id].requires_grad)
        };
        self.tape.push(
            Tensor::scalar(value),
            Op::QuantileHuber {
                pred: self.id,
                unit_grad,
            },
            rg,
        )
    }
}

/// Gradient table produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when it does not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, zeros when it does not influence the loss.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}
