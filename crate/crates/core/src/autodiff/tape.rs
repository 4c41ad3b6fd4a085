//! Tensor-level Wengert tape.
//!
//! Every primitive records its output value and input ids; the reverse sweep
//! walks the nodes in reverse append order, which is a valid topological
//! order because a node can only reference nodes created before it.

use std::cell::{Ref, RefCell};
use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use super::activation::Activation;
use super::jet::{self, JetLayout};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug)]
enum Op {
    Leaf,
    /// `y = x · wᵀ`, plus `b` broadcast over the first `bias_rows` rows.
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        bias_rows: usize,
    },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddConst(usize),
    Scale(usize, f64),
    MulConst(usize, Rc<Tensor>),
    /// `y = s · x` for a one-element `s`.
    ScalarMul {
        s: usize,
        x: usize,
    },
    /// `y[i, j] = s[i] · v[i, j]`.
    ScaleRows {
        v: usize,
        s: usize,
    },
    Exp(usize),
    /// `y = α h + (1 − α) x` for a one-element `α`.
    AlphaMix {
        h: usize,
        x: usize,
        alpha: usize,
    },
    JetAct {
        x: usize,
        layout: Rc<JetLayout>,
        /// `σ⁽ʲ⁾` at the value channel, kept for the reverse sweep.
        table: Vec<Vec<f64>>,
    },
    JetMul {
        a: usize,
        b: usize,
        layout: Rc<JetLayout>,
    },
    Block {
        x: usize,
        row0: usize,
        col0: usize,
    },
    Sum(usize),
    SumSquares(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
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

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Differentiable leaf (a trainable parameter).
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var<'_>) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    fn unary(&self, x: usize, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'_> {
        let value = f(&self.nodes.borrow()[x].value);
        let rg = self.needs(&[x]);
        self.push(op, value, rg)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)?
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let n = self.value(output).len();
        if n != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got {n} elements"
            )));
        }
        let shape = self.value(output).shape().to_vec();
        self.backward_seeded(output, Tensor::new(&shape, vec![1.0])?)
    }

    /// Reverse sweep with an explicit cotangent for `output`.
    pub fn backward_seeded(&self, output: Var<'_>, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[output.id].value.shape() != seed.shape() {
            return Err(Error::shape(
                "backward_seeded",
                nodes[output.id].value.shape(),
                seed.shape(),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        adj[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            propagate(&nodes, id, &g, &mut adj);
            // leaves keep their adjoint for the caller
            if matches!(node.op, Op::Leaf) {
                adj[id] = Some(g);
            }
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints produced by a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient w.r.t. a leaf; `None` when the output does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.adj.get(v.id).and_then(|a| a.as_ref())
    }

    /// Gradient w.r.t. a leaf, zeros when it does not influence the output.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.value().shape()),
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut adj[id] {
        Some(a) => a.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::Linear {
            x,
            w,
            b,
            bias_rows,
        } => {
            let (xv, wv) = (val(x), val(w));
            let (r, k, n) = (xv.rows(), xv.cols(), wv.rows());
            if rg(x) {
                let mut gx = vec![0.0; r * k];
                gemm(r, n, k, 1.0, g.data(), false, wv.data(), false, 0.0, &mut gx);
                accumulate(adj, nodes, x, Tensor::new(&[r, k], gx).unwrap());
            }
            if rg(w) {
                let mut gw = vec![0.0; n * k];
                gemm(n, r, k, 1.0, g.data(), true, xv.data(), false, 0.0, &mut gw);
                accumulate(adj, nodes, w, Tensor::new(wv.shape(), gw).unwrap());
            }
            if let Some(b) = b.filter(|&b| rg(b)) {
                let mut gb = vec![0.0; n];
                for i in 0..bias_rows {
                    for (acc, gi) in gb.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                        *acc += gi;
                    }
                }
                accumulate(adj, nodes, b, Tensor::new(val(b).shape(), gb).unwrap());
            }
        }
        &Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if rg(a) {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, 1.0, g.data(), false, bv.data(), true, 0.0, &mut ga);
                accumulate(adj, nodes, a, Tensor::new(av.shape(), ga).unwrap());
            }
            if rg(b) {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, 1.0, av.data(), true, g.data(), false, 0.0, &mut gb);
                accumulate(adj, nodes, b, Tensor::new(bv.shape(), gb).unwrap());
            }
        }
        &Op::Add(a, b) => {
            accumulate(adj, nodes, a, g.clone());
            accumulate(adj, nodes, b, g.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(adj, nodes, a, g.clone());
            accumulate(adj, nodes, b, g.scale(-1.0));
        }
        &Op::Mul(a, b) => {
            if rg(a) {
                accumulate(adj, nodes, a, g.mul(val(b)).unwrap());
            }
            if rg(b) {
                accumulate(adj, nodes, b, g.mul(val(a)).unwrap());
            }
        }
        &Op::AddConst(a) => accumulate(adj, nodes, a, g.clone()),
        &Op::Scale(a, c) => accumulate(adj, nodes, a, g.scale(c)),
        Op::MulConst(a, c) => accumulate(adj, nodes, *a, g.mul(c).unwrap()),
        &Op::ScalarMul { s, x } => {
            let sv = val(s).item();
            if rg(s) {
                let d: f64 = g.data().iter().zip(val(x).data()).map(|(a, b)| a * b).sum();
                accumulate(adj, nodes, s, Tensor::new(val(s).shape(), vec![d]).unwrap());
            }
            if rg(x) {
                accumulate(adj, nodes, x, g.scale(sv));
            }
        }
        &Op::ScaleRows { v, s } => {
            let (vv, sv) = (val(v), val(s));
            let c = vv.cols();
            if rg(v) {
                let mut gv = g.clone();
                for (i, row) in gv.data_mut().chunks_mut(c).enumerate() {
                    let si = sv.data()[i];
                    row.iter_mut().for_each(|e| *e *= si);
                }
                accumulate(adj, nodes, v, gv);
            }
            if rg(s) {
                let gs: Vec<f64> = (0..vv.rows())
                    .map(|i| {
                        g.row(i)
                            .iter()
                            .zip(vv.row(i))
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                accumulate(adj, nodes, s, Tensor::new(sv.shape(), gs).unwrap());
            }
        }
        &Op::Exp(a) => accumulate(adj, nodes, a, g.mul(&nodes[id].value).unwrap()),
        &Op::AlphaMix { h, x, alpha } => {
            let al = val(alpha).item();
            if rg(h) {
                accumulate(adj, nodes, h, g.scale(al));
            }
            if rg(x) {
                accumulate(adj, nodes, x, g.scale(1.0 - al));
            }
            if rg(alpha) {
                let d: f64 = g
                    .data()
                    .iter()
                    .zip(val(h).data().iter().zip(val(x).data()))
                    .map(|(gi, (hi, xi))| gi * (hi - xi))
                    .sum();
                accumulate(adj, nodes, alpha, Tensor::new(val(alpha).shape(), vec![d]).unwrap());
            }
        }
        Op::JetAct { x, layout, table } => {
            let gx = jet::activation_vjp(layout, table, val(*x), g);
            accumulate(adj, nodes, *x, gx);
        }
        Op::JetMul { a, b, layout } => {
            if rg(*a) {
                accumulate(adj, nodes, *a, jet::mul_vjp(layout, g, val(*b)));
            }
            if rg(*b) {
                accumulate(adj, nodes, *b, jet::mul_vjp(layout, g, val(*a)));
            }
        }
        &Op::Block { x, row0, col0 } => {
            let xv = val(x);
            let c = xv.cols();
            let (nr, nc) = (g.rows(), g.cols());
            let mut gx = Tensor::zeros(xv.shape());
            for i in 0..nr {
                let dst = &mut gx.data_mut()[(row0 + i) * c + col0..(row0 + i) * c + col0 + nc];
                dst.copy_from_slice(g.row(i));
            }
            accumulate(adj, nodes, x, gx);
        }
        &Op::Sum(a) => {
            let gi = g.item();
            accumulate(adj, nodes, a, Tensor::full(val(a).shape(), gi));
        }
        &Op::SumSquares(a) => {
            let gi = g.item();
            accumulate(adj, nodes, a, val(a).scale(2.0 * gi));
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Dense layer `x · wᵀ (+ b)`; the bias only touches the first
    /// `bias_rows` rows (the value channel of a stacked jet).
    pub fn linear(self, w: Var<'t>, b: Option<Var<'t>>, bias_rows: usize) -> Result<Var<'t>> {
        let tape = self.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let (xv, wv) = (&nodes[self.id].value, &nodes[w.id].value);
            if xv.cols() != wv.cols() {
                return Err(Error::shape("linear", xv.shape(), wv.shape()));
            }
            let (r, k, n) = (xv.rows(), xv.cols(), wv.rows());
            let mut out = vec![0.0; r * n];
            gemm(r, k, n, 1.0, xv.data(), false, wv.data(), true, 0.0, &mut out);
            if let Some(b) = b {
                let bv = &nodes[b.id].value;
                if bv.len() != n || bias_rows > r {
                    return Err(Error::shape("linear bias", bv.shape(), &[n]));
                }
                for row in out.chunks_mut(n).take(bias_rows) {
                    for (o, bi) in row.iter_mut().zip(bv.data()) {
                        *o += bi;
                    }
                }
            }
            Tensor::new(&[r, n], out)?
        };
        let mut ids = vec![self.id, w.id];
        ids.extend(b.map(|b| b.id));
        let rg = tape.needs(&ids);
        Ok(tape.push(
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                bias_rows,
            },
            value,
            rg,
        ))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, other.id, Op::MatMul(self.id, other.id), |a, b| {
                a.matmul(b)
            })
    }

    pub fn try_add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, other.id, Op::Add(self.id, other.id), |a, b| {
                check_same("add", a, b)?;
                a.add(b)
            })
    }

    pub fn try_sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, other.id, Op::Sub(self.id, other.id), |a, b| {
                check_same("sub", a, b)?;
                a.sub(b)
            })
    }

    pub fn try_mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, other.id, Op::Mul(self.id, other.id), |a, b| {
                check_same("mul", a, b)?;
                a.mul(b)
            })
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::AddConst(self.id), |a| a.map(|x| x + c))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Scale(self.id, c), |a| a.scale(c))
    }

    /// Element-wise product with a constant tensor of the same shape.
    pub fn mul_const(self, c: Tensor) -> Result<Var<'t>> {
        let c = Rc::new(c);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            check_same("mul_const", a, &c)?;
            a.mul(&c)?
        };
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(Op::MulConst(self.id, c), value, rg))
    }

    /// Multiplies every element by a one-element tensor `s`.
    pub fn scalar_mul(self, s: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(s.id, self.id, Op::ScalarMul { s: s.id, x: self.id }, |sv, xv| {
            if sv.len() != 1 {
                return Err(Error::shape("scalar_mul", sv.shape(), &[1]));
            }
            Ok(xv.scale(sv.item()))
        })
    }

    /// Scales row `i` of `self` by `s[i]`.
    pub fn scale_rows(self, s: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self.id, s.id, Op::ScaleRows { v: self.id, s: s.id }, |vv, sv| {
            if sv.len() != vv.rows() {
                return Err(Error::shape("scale_rows", vv.shape(), sv.shape()));
            }
            let c = vv.cols();
            let mut out = vv.clone();
            for (row, &si) in out.data_mut().chunks_mut(c).zip(sv.data()) {
                row.iter_mut().for_each(|e| *e *= si);
            }
            Ok(out)
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Exp(self.id), |a| a.map(f64::exp))
    }

    /// `α · self + (1 − α) · skip`.
    pub fn alpha_mix(self, skip: Var<'t>, alpha: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let (h, x, a) = (
                &nodes[self.id].value,
                &nodes[skip.id].value,
                &nodes[alpha.id].value,
            );
            check_same("alpha_mix", h, x)?;
            if a.len() != 1 {
                return Err(Error::shape("alpha_mix", a.shape(), &[1]));
            }
            let al = a.item();
            h.zip_map(x, |hi, xi| al * hi + (1.0 - al) * xi)?
        };
        let rg = tape.needs(&[self.id, skip.id, alpha.id]);
        Ok(tape.push(
            Op::AlphaMix {
                h: self.id,
                x: skip.id,
                alpha: alpha.id,
            },
            value,
            rg,
        ))
    }

    pub(crate) fn jet_act(self, act: Activation, layout: Rc<JetLayout>) -> Var<'t> {
        let rg = self.tape.needs(&[self.id]);
        let (value, table) = jet::activation_forward(&layout, act, &self.value(), rg);
        self.tape.push(
            Op::JetAct {
                x: self.id,
                layout,
                table,
            },
            value,
            rg,
        )
    }

    pub(crate) fn jet_mul(self, other: Var<'t>, layout: Rc<JetLayout>) -> Result<Var<'t>> {
        let l2 = layout.clone();
        self.tape.binary(
            self.id,
            other.id,
            Op::JetMul {
                a: self.id,
                b: other.id,
                layout,
            },
            move |a, b| {
                check_same("jet_mul", a, b)?;
                Ok(jet::mul_forward(&l2, a, b))
            },
        )
    }

    /// Sub-block `[row0, row0 + rows) × [col0, col0 + cols)` of a 2-D value.
    pub fn block(self, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<Var<'t>> {
        let value = {
            let v = self.value();
            if row0 + rows > v.rows() || col0 + cols > v.cols() {
                return Err(Error::InvalidArgument(format!(
                    "block [{row0}+{rows}, {col0}+{cols}] out of range for {:?}",
                    v.shape()
                )));
            }
            let c = v.cols();
            Tensor::from_fn(rows, cols, |i, j| v.data()[(row0 + i) * c + col0 + j])
        };
        let rg = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            Op::Block {
                x: self.id,
                row0,
                col0,
            },
            value,
            rg,
        ))
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Sum(self.id), |a| Tensor::scalar(a.sum()))
    }

    pub fn sum_squares(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumSquares(self.id), |a| {
            Tensor::scalar(a.sum_squares())
        })
    }

    pub fn mean_squares(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_squares().scale(1.0 / n)
    }
}

// Operator sugar for residual formulas. Shapes are always aligned there, so
// mismatches are programming errors and panic.
impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.try_add(rhs).expect("shape mismatch in Var + Var")
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.try_sub(rhs).expect("shape mismatch in Var - Var")
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.try_mul(rhs).expect("shape mismatch in Var * Var")
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.add_const(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.add_const(-rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
