//! Truncated univariate Taylor jets over stacked tensors.
//!
//! A jet carries, for every point of a batch, the value of a quantity plus
//! its pure derivatives `∂ᵏ/∂x_iᵏ` along a set of input coordinates
//! ("directions"). All channels are stacked vertically in one tensor of shape
//! `[channels · batch, width]`: channel 0 is the value, then each direction
//! contributes one channel per order. Derivatives are stored as derivatives
//! (not normalized Taylor coefficients), so a coordinate seeded on itself
//! reads `(x, 1, 0, 0)`.
//!
//! Because each direction is an independent univariate expansion sharing the
//! value channel, the nonlinear primitives below only ever combine the value
//! channel with channels of a single direction. Linear maps act on all
//! channels at once, with biases touching only the value rows.

use std::rc::Rc;

use super::activation::Activation;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest derivative order a jet can carry.
pub const MAX_JET_ORDER: usize = 4;

/// Pure derivatives along one input coordinate up to `order`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Direction {
    pub coord: usize,
    pub order: usize,
}

/// Channel bookkeeping for a stacked jet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JetLayout {
    batch: usize,
    dirs: Vec<Direction>,
    offsets: Vec<usize>,
}

impl JetLayout {
    pub fn new(batch: usize, dirs: Vec<Direction>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(dirs.len());
        let mut next = 1;
        for (i, d) in dirs.iter().enumerate() {
            if d.order == 0 || d.order > MAX_JET_ORDER {
                return Err(Error::UnsupportedOrder(d.order, MAX_JET_ORDER));
            }
            if dirs[..i].iter().any(|e| e.coord == d.coord) {
                return Err(Error::InvalidArgument(format!(
                    "coordinate {} listed twice in jet layout",
                    d.coord
                )));
            }
            offsets.push(next);
            next += d.order;
        }
        Ok(Self {
            batch,
            dirs,
            offsets,
        })
    }

    /// Value-only layout (no derivative channels).
    pub fn values(batch: usize) -> Self {
        Self {
            batch,
            dirs: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn directions(&self) -> &[Direction] {
        &self.dirs
    }

    pub fn channels(&self) -> usize {
        1 + self.dirs.iter().map(|d| d.order).sum::<usize>()
    }

    pub fn rows(&self) -> usize {
        self.channels() * self.batch
    }

    pub fn max_order(&self) -> usize {
        self.dirs.iter().map(|d| d.order).max().unwrap_or(0)
    }

    /// Channel holding `∂ᵏ/∂x_coordᵏ`; order 0 is the shared value channel.
    pub fn channel(&self, coord: usize, order: usize) -> Option<usize> {
        if order == 0 {
            return Some(0);
        }
        self.dirs
            .iter()
            .position(|d| d.coord == coord)
            .filter(|&i| order <= self.dirs[i].order)
            .map(|i| self.offsets[i] + order - 1)
    }

    fn dir_channels(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.dirs[i].order
    }
}

const BINOM: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// `σ⁽ʲ⁾(x_e)` for `j = 0..=upto`, one buffer per order.
fn sigma_table(act: Activation, x: &[f64], upto: usize) -> Vec<Vec<f64>> {
    if act == Activation::Tanh && upto <= 3 {
        let t: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
        let mut s = vec![t];
        if upto >= 1 {
            s.push(s[0].iter().map(|t| 1.0 - t * t).collect());
        }
        if upto >= 2 {
            s.push(s[0].iter().zip(&s[1]).map(|(t, d)| -2.0 * t * d).collect());
        }
        if upto >= 3 {
            s.push(s[0].iter().zip(&s[1]).map(|(t, d)| d * (6.0 * t * t - 2.0)).collect());
        }
        return s;
    }
    let mut s: Vec<Vec<f64>> = (0..=upto).map(|_| vec![0.0; x.len()]).collect();
    let mut d = [0.0; 6];
    for (e, &xe) in x.iter().enumerate() {
        act.derivatives(xe, &mut d[..=upto]);
        for (j, sj) in s.iter_mut().enumerate() {
            sj[e] = d[j];
        }
    }
    s
}

/// `out = dᵏ/dx σ(a(x))` elementwise (Faà di Bruno, truncated at order 4),
/// from `s[j] = σ⁽ʲ⁾(a₀)` and `a[j] = a⁽ʲ⁾` (index 0 unused in both).
fn faa_di_bruno(k: usize, s: &[&[f64]], a: &[&[f64]], out: &mut [f64]) {
    let n = out.len();
    let s1 = &s[1][..n];
    let a1 = &a[1][..n];
    match k {
        1 => {
            for e in 0..n {
                out[e] = s1[e] * a1[e];
            }
        }
        2 => {
            let (s2, a2) = (&s[2][..n], &a[2][..n]);
            for e in 0..n {
                out[e] = s2[e] * a1[e] * a1[e] + s1[e] * a2[e];
            }
        }
        3 => {
            let (s2, s3, a2, a3) = (&s[2][..n], &s[3][..n], &a[2][..n], &a[3][..n]);
            for e in 0..n {
                let b = a1[e];
                out[e] = s3[e] * b * b * b + 3.0 * s2[e] * b * a2[e] + s1[e] * a3[e];
            }
        }
        4 => {
            let (s2, s3, s4) = (&s[2][..n], &s[3][..n], &s[4][..n]);
            let (a2, a3, a4) = (&a[2][..n], &a[3][..n], &a[4][..n]);
            for e in 0..n {
                let b = a1[e];
                let bs = b * b;
                out[e] = s4[e] * bs * bs
                    + 6.0 * s3[e] * bs * a2[e]
                    + s2[e] * (4.0 * b * a3[e] + 3.0 * a2[e] * a2[e])
                    + s1[e] * a4[e];
            }
        }
        _ => unreachable!("jet order above 4"),
    }
}

/// `out = ∂/∂a_j` of [`faa_di_bruno`]`(k, ..)` for `1 ≤ j ≤ k`.
fn faa_di_bruno_partial(k: usize, j: usize, s: &[&[f64]], a: &[&[f64]], out: &mut [f64]) {
    let n = out.len();
    if j == k {
        out.copy_from_slice(&s[1][..n]);
        return;
    }
    let a1 = &a[1][..n];
    let s2 = &s[2][..n];
    match (k, j) {
        (2, 1) => {
            for e in 0..n {
                out[e] = 2.0 * s2[e] * a1[e];
            }
        }
        (3, 1) => {
            let (s3, a2) = (&s[3][..n], &a[2][..n]);
            for e in 0..n {
                out[e] = 3.0 * s3[e] * a1[e] * a1[e] + 3.0 * s2[e] * a2[e];
            }
        }
        (3, 2) => {
            for e in 0..n {
                out[e] = 3.0 * s2[e] * a1[e];
            }
        }
        (4, 1) => {
            let (s3, s4, a2, a3) = (&s[3][..n], &s[4][..n], &a[2][..n], &a[3][..n]);
            for e in 0..n {
                let b = a1[e];
                out[e] = 4.0 * s4[e] * b * b * b + 12.0 * s3[e] * b * a2[e] + 4.0 * s2[e] * a3[e];
            }
        }
        (4, 2) => {
            let (s3, a2) = (&s[3][..n], &a[2][..n]);
            for e in 0..n {
                out[e] = 6.0 * s3[e] * a1[e] * a1[e] + 6.0 * s2[e] * a2[e];
            }
        }
        (4, 3) => {
            for e in 0..n {
                out[e] = 4.0 * s2[e] * a1[e];
            }
        }
        _ => unreachable!("invalid Faà di Bruno partial ({k}, {j})"),
    }
}

/// Channel slices `[_, a¹, .., aᵈ]` of direction `i` (index 0 is a dummy).
fn dir_slices<'a>(layout: &JetLayout, i: usize, data: &'a [f64], stride: usize) -> Vec<&'a [f64]> {
    let mut v: Vec<&[f64]> = vec![&[]];
    v.extend(layout.dir_channels(i).map(|c| &data[c * stride..(c + 1) * stride]));
    v
}

fn axpy_mul(acc: &mut [f64], g: &[f64], p: &[f64]) {
    let n = acc.len();
    let (g, p) = (&g[..n], &p[..n]);
    for e in 0..n {
        acc[e] += g[e] * p[e];
    }
}

/// Jet activation. With `keep` the derivative table (one order beyond the
/// jet) is returned for the reverse sweep.
pub(crate) fn activation_forward(layout: &JetLayout, act: Activation, x: &Tensor, keep: bool) -> (Tensor, Vec<Vec<f64>>) {
    let n = layout.max_order();
    let stride = layout.batch * x.cols();
    let xd = x.data();
    let table = sigma_table(act, &xd[..stride], if keep { n + 1 } else { n });
    let s: Vec<&[f64]> = table.iter().map(Vec::as_slice).collect();
    let mut out = vec![0.0; xd.len()];
    out[..stride].copy_from_slice(s[0]);
    for (i, d) in layout.dirs.iter().enumerate() {
        let a = dir_slices(layout, i, xd, stride);
        for k in 1..=d.order {
            let c = layout.offsets[i] + k - 1;
            faa_di_bruno(k, &s, &a, &mut out[c * stride..(c + 1) * stride]);
        }
    }
    let table = if keep { table } else { Vec::new() };
    (Tensor::new(x.shape(), out).expect("same shape"), table)
}

pub(crate) fn activation_vjp(layout: &JetLayout, table: &[Vec<f64>], x: &Tensor, g: &Tensor) -> Tensor {
    let stride = layout.batch * x.cols();
    let (xd, gd) = (x.data(), g.data());
    let s: Vec<&[f64]> = table.iter().map(Vec::as_slice).collect();
    // the value channel enters the order-k output only through σ⁽ʲ⁾(a₀),
    // whose derivative shifts the table by one
    let shifted: Vec<&[f64]> = s[1..].to_vec();
    let mut gx = vec![0.0; xd.len()];
    let mut tmp = vec![0.0; stride];
    let (g0, rest) = gx.split_at_mut(stride);
    {
        let gv = &gd[..stride];
        for e in 0..stride {
            g0[e] = gv[e] * s[1][e];
        }
    }
    for (i, d) in layout.dirs.iter().enumerate() {
        let a = dir_slices(layout, i, xd, stride);
        let c0 = layout.offsets[i];
        for k in 1..=d.order {
            let gk = &gd[(c0 + k - 1) * stride..(c0 + k) * stride];
            faa_di_bruno(k, &shifted, &a, &mut tmp);
            axpy_mul(g0, gk, &tmp);
            for j in 1..=k {
                faa_di_bruno_partial(k, j, &s, &a, &mut tmp);
                let c = c0 + j - 1 - 1;
                axpy_mul(&mut rest[c * stride..(c + 1) * stride], gk, &tmp);
            }
        }
    }
    Tensor::new(x.shape(), gx).expect("same shape")
}

pub(crate) fn mul_forward(layout: &JetLayout, a: &Tensor, b: &Tensor) -> Tensor {
    let stride = layout.batch * a.cols();
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; ad.len()];
    for e in 0..stride {
        out[e] = ad[e] * bd[e];
    }
    for (i, d) in layout.dirs.iter().enumerate() {
        let c0 = layout.offsets[i];
        // row index of (direction i, order j); j = 0 is the shared value
        let ch = |j: usize| if j == 0 { 0 } else { c0 + j - 1 };
        for k in 1..=d.order {
            let base = ch(k) * stride;
            for j in 0..=k {
                let (ca, cb) = (ch(j) * stride, ch(k - j) * stride);
                let w = BINOM[k][j];
                for e in 0..stride {
                    out[base + e] += w * ad[ca + e] * bd[cb + e];
                }
            }
        }
    }
    Tensor::new(a.shape(), out).expect("same shape")
}

/// Cotangent of one factor of a jet product given the other factor `other`.
/// The product is symmetric, so the same routine serves both sides.
pub(crate) fn mul_vjp(layout: &JetLayout, g: &Tensor, other: &Tensor) -> Tensor {
    let stride = layout.batch * g.cols();
    let (gd, od) = (g.data(), other.data());
    let mut out = vec![0.0; gd.len()];
    for e in 0..stride {
        out[e] = gd[e] * od[e];
    }
    for (i, d) in layout.dirs.iter().enumerate() {
        let c0 = layout.offsets[i];
        let ch = |j: usize| if j == 0 { 0 } else { c0 + j - 1 };
        for k in 1..=d.order {
            let gk = ch(k) * stride;
            // out_j += C(k, j) g_k other_{k-j}
            for j in 0..=k {
                let (cj, co) = (ch(j) * stride, ch(k - j) * stride);
                let w = BINOM[k][j];
                for e in 0..stride {
                    out[cj + e] += w * gd[gk + e] * od[co + e];
                }
            }
        }
    }
    Tensor::new(g.shape(), out).expect("same shape")
}

/// A stacked jet recorded on a tape.
#[derive(Clone, Debug)]
pub struct Jet<'t> {
    var: Var<'t>,
    layout: Rc<JetLayout>,
}

impl<'t> Jet<'t> {
    /// Wraps a stacked tensor already on the tape.
    pub fn from_var(var: Var<'t>, layout: Rc<JetLayout>) -> Result<Self> {
        if var.value().rows() != layout.rows() {
            return Err(Error::InvalidArgument(format!(
                "jet with {} channels x batch {} needs {} rows, got {}",
                layout.channels(),
                layout.batch(),
                layout.rows(),
                var.value().rows()
            )));
        }
        Ok(Self { var, layout })
    }

    /// Constant jet from a stacked tensor.
    pub fn constant(tape: &'t Tape, stacked: Tensor, layout: Rc<JetLayout>) -> Result<Self> {
        Self::from_var(tape.constant(stacked), layout)
    }

    /// Seeds raw input coordinates `[batch, dim]`: each direction's coordinate
    /// gets first derivative 1, every other channel derivative is 0.
    pub fn seed_inputs(tape: &'t Tape, coords: &Tensor, layout: Rc<JetLayout>) -> Result<Self> {
        let (b, dim) = (coords.rows(), coords.cols());
        if b != layout.batch() {
            return Err(Error::shape("seed_inputs", coords.shape(), &[layout.batch(), dim]));
        }
        let mut stacked = Tensor::zeros(&[layout.rows(), dim]);
        stacked.data_mut()[..b * dim].copy_from_slice(coords.data());
        for d in layout.directions() {
            if d.coord >= dim {
                return Err(Error::InvalidArgument(format!(
                    "direction on coordinate {} but inputs have {dim} columns",
                    d.coord
                )));
            }
            let c = layout.channel(d.coord, 1).expect("order ≥ 1");
            for i in 0..b {
                stacked.set(c * b + i, d.coord, 1.0);
            }
        }
        Self::constant(tape, stacked, layout)
    }

    pub fn var(&self) -> Var<'t> {
        self.var
    }

    pub fn layout(&self) -> &Rc<JetLayout> {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.var.value().cols()
    }

    fn same_layout(&self, other: &Jet<'t>) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::InvalidArgument("jet layouts differ".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Jet<'t>) -> Result<Jet<'t>> {
        self.same_layout(other)?;
        Ok(Jet {
            var: self.var.try_add(other.var)?,
            layout: self.layout.clone(),
        })
    }

    pub fn sub(&self, other: &Jet<'t>) -> Result<Jet<'t>> {
        self.same_layout(other)?;
        Ok(Jet {
            var: self.var.try_sub(other.var)?,
            layout: self.layout.clone(),
        })
    }

    /// Leibniz product, truncated at each direction's order.
    pub fn mul(&self, other: &Jet<'t>) -> Result<Jet<'t>> {
        self.same_layout(other)?;
        Ok(Jet {
            var: self.var.jet_mul(other.var, self.layout.clone())?,
            layout: self.layout.clone(),
        })
    }

    pub fn scale(&self, c: f64) -> Jet<'t> {
        Jet {
            var: self.var.scale(c),
            layout: self.layout.clone(),
        }
    }

    /// `σ` applied through the jet (Faà di Bruno).
    pub fn activation(&self, act: Activation) -> Jet<'t> {
        Jet {
            var: self.var.jet_act(act, self.layout.clone()),
            layout: self.layout.clone(),
        }
    }

    /// Dense map on every channel; the bias is added to the value channel only.
    pub fn linear(&self, w: Var<'t>, b: Option<Var<'t>>) -> Result<Jet<'t>> {
        Ok(Jet {
            var: self.var.linear(w, b, self.layout.batch())?,
            layout: self.layout.clone(),
        })
    }

    /// Gate `f ⊙ u + (1 − f) ⊙ v`, written as `v + f ⊙ (u − v)`.
    pub fn gate(&self, u: &Jet<'t>, v: &Jet<'t>) -> Result<Jet<'t>> {
        v.add(&self.mul(&u.sub(v)?)?)
    }

    /// `α · self + (1 − α) · skip` for a scalar parameter `α`.
    pub fn alpha_mix(&self, skip: &Jet<'t>, alpha: Var<'t>) -> Result<Jet<'t>> {
        self.same_layout(skip)?;
        Ok(Jet {
            var: self.var.alpha_mix(skip.var, alpha)?,
            layout: self.layout.clone(),
        })
    }

    /// `∂ᵏ/∂x_coordᵏ` of output column `col`, shape `[batch, 1]`.
    pub fn derivative(&self, col: usize, coord: usize, order: usize) -> Result<Var<'t>> {
        let c = self.layout.channel(coord, order).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "jet does not carry order {order} along coordinate {coord}"
            ))
        })?;
        let b = self.layout.batch();
        self.var.block(c * b, b, col, 1)
    }

    /// `∂ᵏ/∂x_coordᵏ` of every output column, shape `[batch, width]`.
    pub fn channel(&self, coord: usize, order: usize) -> Result<Var<'t>> {
        let c = self.layout.channel(coord, order).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "jet does not carry order {order} along coordinate {coord}"
            ))
        })?;
        let b = self.layout.batch();
        self.var.block(c * b, b, 0, self.width())
    }

    /// Value channel, shape `[batch, width]`.
    pub fn value(&self) -> Result<Var<'t>> {
        let b = self.layout.batch();
        self.var.block(0, b, 0, self.width())
    }

    /// Output column `col` as a narrower jet with the same layout.
    pub fn column(&self, col: usize) -> Result<Jet<'t>> {
        Ok(Jet {
            var: self.var.block(0, self.layout.rows(), col, 1)?,
            layout: self.layout.clone(),
        })
    }
}
