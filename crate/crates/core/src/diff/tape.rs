//! Operation tape for reverse-mode differentiation.
//!
//! Every primitive evaluates eagerly, stores its output, and records enough
//! of its inputs to replay its adjoint. `backward` walks the tape once in
//! reverse and accumulates (`+=`) into the parameter gradients.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{broadcast_plan, broadcast_shape, split_axis, Broadcast, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var, Broadcast, Broadcast),
    Mul(Var, Var, Broadcast, Broadcast),
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    LogSumExp { x: Var, axis: usize },
    MaskMul { x: Var, mask: Tensor },
    Concat { parts: Vec<Var>, axis: usize },
    Gather { x: Var, index: Vec<usize> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record: executed primitives with their saved values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    store_version: Option<u64>,
}

/// Adjoints of every tape value with respect to one output.
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Adjoints {
    /// Gradient with respect to `var`; zeros when `var` does not reach the output.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("adjoint shape"),
            None => Tensor::zeros(shape),
        }
    }
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

/// `c = a · b` (beta = 0) or `c += a · b` (beta = 1) with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides and extents describe in-bounds views of `a`, `b`, `c`;
    // callers derive them from tensor shapes checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
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

    fn checked(&mut self, name: &'static str, value: Tensor, op: Op, rg: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Domain {
                op: name,
                detail: "non-finite output".into(),
            });
        }
        Ok(self.push(value, op, rg))
    }

    /// A constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf whose adjoint is tracked (see [`Tape::adjoints`]).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.input(Tensor::scalar(value))
    }

    /// Read a parameter into the tape. Repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.store_version.get_or_insert(store.version());
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// A copy of `v`'s value cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Broadcast, Broadcast)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb)
            .ok_or_else(|| Error::shape(name, format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let pa = broadcast_plan(&out_shape, sa);
        let pb = broadcast_plan(&out_shape, sb);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let data = match (&pa, &pb) {
            (Broadcast::Same, Broadcast::Same) => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            (Broadcast::Same, Broadcast::Scalar) => va.iter().map(|&x| f(x, vb[0])).collect(),
            _ => (0..n).map(|j| f(va[pa.source(j)], vb[pb.source(j)])).collect(),
        };
        Ok((Tensor::new(out_shape, data)?, pa, pb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, pa, pb) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.checked("add", value, Op::Add(a, b, pa, pb), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, pa, pb) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.checked("mul", value, Op::Mul(a, b, pa, pb), rg)
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1), &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        self.checked("matmul", Tensor::new([m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// `x · wᵀ + b` for `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::shape("affine", format!("x {sx:?}, w {sw:?}, b {sb:?}")));
        }
        let (batch, inp, out) = (sx[0], sx[1], sw[0]);
        let bias = self.value(b).data();
        let mut data = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            data.extend_from_slice(bias);
        }
        gemm(batch, inp, out, self.value(x).data(), (inp, 1), self.value(w).data(), (1, inp), &mut data, 1.0);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.checked("affine", Tensor::new([batch, out], data)?, Op::Affine { x, w, b }, rg)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.checked(name, value, op, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    /// `ln(1 + eˣ)` without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    fn check_axis(&self, name: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(Error::contract(format!("{name}: axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    fn reduce_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    fn axis_sum(&self, x: Var, axis: usize) -> Tensor {
        let shape = self.shape(x);
        let (outer, n, inner) = split_axis(shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        Tensor::new(Self::reduce_shape(shape, axis), out).expect("reduced shape")
    }

    /// Sum over all elements (`axis = None`, result `[1]`) or one axis, which is removed.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = match axis {
            None => Tensor::scalar(self.value(x).sum()),
            Some(ax) => {
                self.check_axis("sum", x, ax)?;
                self.axis_sum(x, ax)
            }
        };
        let rg = self.rg(x);
        self.checked("sum", value, Op::Sum { x, axis }, rg)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let value = match axis {
            None => {
                let t = self.value(x);
                Tensor::scalar(t.sum() / t.len() as f64)
            }
            Some(ax) => {
                self.check_axis("mean", x, ax)?;
                let n = self.shape(x)[ax] as f64;
                self.axis_sum(x, ax).map(|v| v / n)
            }
        };
        let rg = self.rg(x);
        self.checked("mean", value, Op::Mean { x, axis }, rg)
    }

    /// Max-shifted `log Σ exp` along `axis`, which is removed.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("logsumexp", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| src[(o * n + k) * inner + i];
                let m = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return Err(Error::Domain {
                        op: "logsumexp",
                        detail: "slice has no finite value".into(),
                    });
                }
                let s: f64 = (0..n).map(|k| (at(k) - m).exp()).sum();
                out[o * inner + i] = m + s.ln();
            }
        }
        let value = Tensor::new(Self::reduce_shape(&shape, axis), out)?;
        let rg = self.rg(x);
        self.checked("logsumexp", value, Op::LogSumExp { x, axis }, rg)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mask_mul(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        if self.shape(x) != mask.shape() {
            return Err(Error::shape("mask_mul", format!("{:?} vs mask {:?}", self.shape(x), mask.shape())));
        }
        let data = self.value(x).data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
        let value = Tensor::new(mask.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.checked("mask_mul", value, Op::MaskMul { x, mask: mask.clone() }, rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                data.extend_from_slice(&self.value(p).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.checked("concat", Tensor::new(shape, data)?, Op::Concat { parts: parts.to_vec(), axis }, rg)
    }

    /// `out[j] = x[index[j]]`, shaped as `shape`. Covers slicing, selection,
    /// transposition and explicit broadcasting.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::shape("gather", format!("index {bad} out of range {}", src.len())));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        self.checked("gather", value, Op::Gather { x, index }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.checked("reshape", value, Op::Reshape(x), rg)
    }

    // Compositions of the primitives above.

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = self.constant(c);
        self.mul(x, k)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = self.constant(c);
        self.add(x, k)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let nx = self.neg(x)?;
        self.add_scalar(nx, 1.0)
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) of extent {}", start + len, shape[axis])));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            index.extend(base..base + len * inner);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(x, index, out_shape)
    }

    /// Repeat `x` to `shape` under right-aligned broadcasting.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        match broadcast_shape(&sx, shape) {
            Some(s) if s == shape => {}
            _ => return Err(Error::shape("broadcast_to", format!("{sx:?} to {shape:?}"))),
        }
        let plan = broadcast_plan(shape, &sx);
        let n: usize = shape.iter().product();
        let index = (0..n).map(|j| plan.source(j)).collect();
        self.gather(x, index, shape.to_vec())
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("rank {}", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(x, index, [c, r])
    }

    /// Adjoint of every recorded value with respect to `output`, seeded with `cotangent`.
    pub fn adjoints(&self, output: Var, cotangent: &Tensor) -> Result<Adjoints> {
        if cotangent.shape() != self.shape(output) {
            return Err(Error::shape(
                "backward",
                format!("cotangent {:?} for output {:?}", cotangent.shape(), self.shape(output)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(cotangent.data().to_vec());
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Adjoints { grads, shapes })
    }

    /// Accumulate `∂⟨cotangent, output⟩/∂θ` into every parameter read by this tape.
    pub fn backward(&self, output: Var, cotangent: &Tensor, store: &mut ParamStore) -> Result<()> {
        if let Some(recorded) = self.store_version {
            if recorded != store.version() {
                return Err(Error::StaleRecord {
                    recorded,
                    current: store.version(),
                });
            }
        }
        let adj = self.adjoints(output, cotangent)?;
        for (&id, &var) in &self.params {
            if let Some(g) = &adj.grads[var.0] {
                for (acc, v) in store.grad_mut(id).data_mut().iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let send = |v: Var, contrib: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b, pa, pb) => {
                if self.rg(*a) {
                    send(*a, pa.reduce(g, val(*a).len()), grads);
                }
                if self.rg(*b) {
                    send(*b, pb.reduce(g, val(*b).len()), grads);
                }
            }
            Op::Mul(a, b, pa, pb) => {
                let (va, vb) = (val(*a), val(*b));
                if self.rg(*a) {
                    let full: Vec<f64> = g.iter().enumerate().map(|(j, gj)| gj * vb[pb.source(j)]).collect();
                    send(*a, pa.reduce(&full, va.len()), grads);
                }
                if self.rg(*b) {
                    let full: Vec<f64> = g.iter().enumerate().map(|(j, gj)| gj * va[pa.source(j)]).collect();
                    send(*b, pb.reduce(&full, vb.len()), grads);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, (n, 1), val(*b), (1, n), &mut da, 0.0);
                    send(*a, da, grads);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(*a), (1, k), g, (n, 1), &mut db, 0.0);
                    send(*b, db, grads);
                }
            }
            Op::Affine { x, w, b } => {
                let (batch, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out = self.shape(*w)[0];
                if self.rg(*x) {
                    // dX = G · W
                    let mut dx = vec![0.0; batch * inp];
                    gemm(batch, out, inp, g, (out, 1), val(*w), (inp, 1), &mut dx, 0.0);
                    send(*x, dx, grads);
                }
                if self.rg(*w) {
                    // dW = Gᵀ · X
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, batch, inp, g, (1, out), val(*x), (inp, 1), &mut dw, 0.0);
                    send(*w, dw, grads);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; out];
                    for row in g.chunks_exact(out) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    send(*b, db, grads);
                }
            }
            Op::Tanh(x) => send(*x, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(), grads),
            Op::Sigmoid(x) => send(*x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(), grads),
            Op::Exp(x) => send(*x, g.iter().zip(y).map(|(g, y)| g * y).collect(), grads),
            Op::Log(x) => send(*x, g.iter().zip(val(*x)).map(|(g, x)| g / x).collect(), grads),
            Op::Softplus(x) => send(*x, g.iter().zip(val(*x)).map(|(g, &x)| g * sigmoid(x)).collect(), grads),
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let shape = self.shape(*x);
                let scale = match (&node.op, axis) {
                    (Op::Mean { .. }, None) => 1.0 / shape.iter().product::<usize>() as f64,
                    (Op::Mean { .. }, Some(ax)) => 1.0 / shape[*ax] as f64,
                    _ => 1.0,
                };
                let dx = match axis {
                    None => vec![g[0] * scale; val(*x).len()],
                    Some(ax) => {
                        let (outer, n, inner) = split_axis(shape, *ax);
                        let mut dx = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            for _ in 0..n {
                                dx.extend(g[o * inner..(o + 1) * inner].iter().map(|v| v * scale));
                            }
                        }
                        dx
                    }
                };
                send(*x, dx, grads);
            }
            Op::LogSumExp { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let src = val(*x);
                let mut dx = vec![0.0; src.len()];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            let j = (o * n + k) * inner + i;
                            let r = o * inner + i;
                            dx[j] = g[r] * (src[j] - y[r]).exp();
                        }
                    }
                }
                send(*x, dx, grads);
            }
            Op::MaskMul { x, mask } => send(*x, g.iter().zip(mask.data()).map(|(g, m)| g * m).collect(), grads),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let total = node.value.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[base..base + n * inner]);
                        }
                        send(p, dp, grads);
                    }
                    offset += n;
                }
            }
            Op::Gather { x, index } => {
                let mut dx = vec![0.0; val(*x).len()];
                for (gj, &src) in g.iter().zip(index) {
                    dx[src] += gj;
                }
                send(*x, dx, grads);
            }
            Op::Reshape(x) => send(*x, g.to_vec(), grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tanh_at_zero_and_its_derivative() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(0.0));
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.0);
        let adj = tape.adjoints(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(adj.wrt(x).item(), 1.0);
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[3, 3], &[1.0, -2.0, 3.5, 0.0, 4.0, 9.0, -1.0, 0.25, 7.0]);
        let mut tape = Tape::new();
        let i = tape.input(Tensor::identity(3));
        let av = tape.input(a.clone());
        let out = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn product_gradient_is_other_factor() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(wv, x).unwrap();
        tape.backward(y, &Tensor::scalar(1.0), &mut store).unwrap();
        assert_eq!(store.grad(w).item(), 3.0);
    }

    #[test]
    fn logsumexp_closed_forms() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[2], &[0.0, 0.0]));
        let l = tape.logsumexp(x, 0).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

        let x = tape.input(t(&[2], &[1000.0, 1000.0]));
        let l = tape.logsumexp(x, 0).unwrap();
        assert!((tape.value(l).item() - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);

        let x = tape.input(t(&[1], &[-3.25]));
        let l = tape.logsumexp(x, 0).unwrap();
        assert_eq!(tape.value(l).item(), -3.25);

        assert!(matches!(tape.logsumexp(x, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn log_outside_domain_names_primitive() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[2], &[1.0, -1.0]));
        match tape.log(x) {
            Err(Error::Domain { op, .. }) => assert_eq!(op, "log"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros([2, 3]));
        let b = tape.input(Tensor::zeros([2, 2]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(tape.matmul(a, a), Err(Error::Shape { .. })));
    }

    #[test]
    fn stale_record_is_rejected() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(1.5)).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let y = tape.exp(wv).unwrap();
        store.set_value(w, Tensor::scalar(0.5)).unwrap();
        assert!(matches!(
            tape.backward(y, &Tensor::scalar(1.0), &mut store),
            Err(Error::StaleRecord { .. })
        ));
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::scalar(3.0)).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let a = tape.param(&store, w);
            let b = tape.param(&store, w);
            let y = tape.mul(a, b).unwrap();
            tape.backward(y, &Tensor::scalar(1.0), &mut store).unwrap();
        }
        assert_eq!(store.grad(w).item(), 12.0);
    }

    #[test]
    fn concat_and_slice_invert() {
        let mut tape = Tape::new();
        let a = tape.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.input(t(&[2, 1], &[5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = tape.slice(c, 1, 2, 1).unwrap();
        assert_eq!(tape.value(s), tape.value(b));
        let tr = tape.transpose(a).unwrap();
        assert_eq!(tape.value(tr).data(), &[1.0, 3.0, 2.0, 4.0]);
    }
}
