//! Fourier pseudo-spectral reference solvers with ETDRK4 time stepping.
//!
//! Each system is split as `û_t = L(k)·û + N̂(u)` with a diagonal linear
//! symbol `L` and a nonlinear term evaluated in physical space. Nonlinear
//! terms are dealiased with the 2/3 rule.

mod dataset;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C;
use rustfft::{Fft, FftPlanner};

pub use dataset::Dataset;

use crate::error::{Error, Result};
use crate::pdes::{GinzburgLandauParams, GreyScottParams, Problem};

/// Quadrature points on the contour used for the φ-function averages.
pub const CONTOUR_POINTS: usize = 32;

/// Normalized ETDRK4 weights at `z = h·L`: `[q, f1, f2, f3]` with
/// `q = (e^{z/2} − 1)/z` and the three fourth-order stage weights, each
/// evaluated as a mean over a unit circle around `z`.
pub fn phi_coefficients(z: C) -> [C; 4] {
    let mut acc = [C::new(0.0, 0.0); 4];
    for j in 0..CONTOUR_POINTS {
        let theta = 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
        let r = z + C::from_polar(1.0, theta);
        let e = r.exp();
        let r3 = r * r * r;
        acc[0] += ((r * 0.5).exp() - 1.0) / r;
        acc[1] += (-4.0 - r + e * (4.0 - 3.0 * r + r * r)) / r3;
        acc[2] += (2.0 + r + e * (r - 2.0)) / r3;
        acc[3] += (-4.0 - 3.0 * r - r * r + e * (4.0 - r)) / r3;
    }
    acc.map(|a| a / CONTOUR_POINTS as f64)
}

/// Per-mode ETDRK4 coefficient arrays for a step of size `h`.
#[derive(Clone, Debug)]
pub struct Etdrk4Coeffs {
    pub e: Vec<C>,
    pub e2: Vec<C>,
    pub q: Vec<C>,
    pub f1: Vec<C>,
    pub f2: Vec<C>,
    pub f3: Vec<C>,
}

pub fn etdrk4_coefficients(l: &[C], h: f64) -> Result<Etdrk4Coeffs> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {h}")));
    }
    let n = l.len();
    let mut c = Etdrk4Coeffs {
        e: Vec::with_capacity(n),
        e2: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        f2: Vec::with_capacity(n),
        f3: Vec::with_capacity(n),
    };
    for &lk in l {
        let z = lk * h;
        let [q, f1, f2, f3] = phi_coefficients(z);
        c.e.push(z.exp());
        c.e2.push((z * 0.5).exp());
        c.q.push(q * h);
        c.f1.push(f1 * h);
        c.f2.push(f2 * h);
        c.f3.push(f3 * h);
    }
    Ok(c)
}

/// Semilinear periodic systems on `[-1, 1)^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralSystem {
    /// `u_t = ν Δu`
    Heat { nu: f64, dims: usize },
    /// `u_t = ε u_xx + a(u − u³)`
    AllenCahn { eps: f64, a: f64 },
    /// `u_t + η u u_x + μ² u_xxx = 0`
    Kdv { eta: f64, mu: f64 },
    GreyScott(GreyScottParams),
    GinzburgLandau(GinzburgLandauParams),
}

pub const DOMAIN_LO: f64 = -1.0;
pub const DOMAIN_LENGTH: f64 = 2.0;

impl SpectralSystem {
    pub fn from_problem(p: &Problem) -> Result<Self> {
        match p {
            Problem::AllenCahn => Ok(SpectralSystem::AllenCahn { eps: 1e-4, a: 5.0 }),
            Problem::Kdv(k) => Ok(SpectralSystem::Kdv { eta: k.eta, mu: k.mu }),
            Problem::GreyScott(g) => Ok(SpectralSystem::GreyScott(*g)),
            Problem::GinzburgLandau(g) => Ok(SpectralSystem::GinzburgLandau(*g)),
            Problem::Cavity(_) => Err(Error::InvalidArgument(
                "the cavity reference is ingested, not computed".into(),
            )),
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            SpectralSystem::Heat { dims, .. } => *dims,
            SpectralSystem::AllenCahn { .. } | SpectralSystem::Kdv { .. } => 1,
            _ => 2,
        }
    }

    pub fn components(&self) -> usize {
        match self {
            SpectralSystem::GreyScott(_) | SpectralSystem::GinzburgLandau(_) => 2,
            _ => 1,
        }
    }

    /// Only the spatial-derivative terms: diffusion for the reaction systems,
    /// dispersion (Airy) for KdV.
    pub fn linearized(&self) -> SpectralSystem {
        match *self {
            SpectralSystem::Heat { .. } => *self,
            SpectralSystem::AllenCahn { eps, .. } => SpectralSystem::Heat { nu: eps, dims: 1 },
            SpectralSystem::Kdv { mu, .. } => SpectralSystem::Kdv { eta: 0.0, mu },
            SpectralSystem::GreyScott(g) => SpectralSystem::GreyScott(GreyScottParams {
                b1: 0.0,
                b2: 0.0,
                c1: 0.0,
                c2: 0.0,
                ..g
            }),
            SpectralSystem::GinzburgLandau(g) => SpectralSystem::GinzburgLandau(GinzburgLandauParams {
                mu: 0.0,
                gamma_re: 0.0,
                gamma_im: 0.0,
                ..g
            }),
        }
    }

    /// `L` for component `comp`; `k` are the wavevector components, `k_odd`
    /// the same with the Nyquist entry zeroed (for odd derivatives).
    fn linear_symbol(&self, comp: usize, k: &[f64], k_odd: &[f64]) -> C {
        let k2: f64 = k.iter().map(|v| v * v).sum();
        match *self {
            SpectralSystem::Heat { nu, .. } => C::new(-nu * k2, 0.0),
            SpectralSystem::AllenCahn { eps, a } => C::new(a - eps * k2, 0.0),
            SpectralSystem::Kdv { mu, .. } => C::new(0.0, mu * mu * k_odd[0].powi(3)),
            SpectralSystem::GreyScott(g) => {
                if comp == 0 {
                    C::new(-g.eps1 * k2 - g.b1, 0.0)
                } else {
                    C::new(-g.eps2 * k2 - g.b2, 0.0)
                }
            }
            SpectralSystem::GinzburgLandau(g) => C::new(g.mu - g.eps * k2, 0.0),
        }
    }

    /// Fourier multiplier applied to the physical nonlinear term.
    fn nonlinear_symbol(&self, k_odd: &[f64]) -> C {
        match *self {
            SpectralSystem::Kdv { eta, .. } => C::new(0.0, -0.5 * eta * k_odd[0]),
            _ => C::new(1.0, 0.0),
        }
    }

    fn has_nonlinearity(&self) -> bool {
        match *self {
            SpectralSystem::Heat { .. } => false,
            SpectralSystem::AllenCahn { a, .. } => a != 0.0,
            SpectralSystem::Kdv { eta, .. } => eta != 0.0,
            SpectralSystem::GreyScott(g) => g.b1 != 0.0 || g.c1 != 0.0 || g.c2 != 0.0,
            SpectralSystem::GinzburgLandau(g) => g.gamma_re != 0.0 || g.gamma_im != 0.0,
        }
    }

    fn nonlinear(&self, f: &[Vec<f64>], out: &mut [Vec<f64>]) {
        match *self {
            SpectralSystem::Heat { .. } => out.iter_mut().for_each(|o| o.fill(0.0)),
            SpectralSystem::AllenCahn { a, .. } => {
                for (o, &u) in out[0].iter_mut().zip(&f[0]) {
                    *o = -a * u * u * u;
                }
            }
            SpectralSystem::Kdv { .. } => {
                for (o, &u) in out[0].iter_mut().zip(&f[0]) {
                    *o = u * u;
                }
            }
            SpectralSystem::GreyScott(g) => {
                let (ou, ov) = out.split_at_mut(1);
                for i in 0..f[0].len() {
                    let uv2 = f[0][i] * f[1][i] * f[1][i];
                    ou[0][i] = g.b1 - g.c1 * uv2;
                    ov[0][i] = g.c2 * uv2;
                }
            }
            SpectralSystem::GinzburgLandau(g) => {
                let (ou, ov) = out.split_at_mut(1);
                for i in 0..f[0].len() {
                    let (u, v) = (f[0][i], f[1][i]);
                    let r2 = u * u + v * v;
                    ou[0][i] = -(g.gamma_re * u - g.gamma_im * v) * r2;
                    ov[0][i] = -(g.gamma_re * v + g.gamma_im * u) * r2;
                }
            }
        }
    }
}

/// Signed integer wavenumber index of FFT slot `j`.
fn mode_index(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Grid coordinates `-1 + 2j/n`.
pub fn grid_points(n: usize) -> Vec<f64> {
    (0..n).map(|j| DOMAIN_LO + DOMAIN_LENGTH * j as f64 / n as f64).collect()
}

struct Fft2 {
    n: usize,
    dims: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C>,
}

impl Fft2 {
    fn new(n: usize, dims: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            dims,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            scratch: vec![C::new(0.0, 0.0); n.pow(dims as u32)],
        }
    }

    fn transform(&mut self, data: &mut [C], forward: bool) {
        let plan = if forward { &self.fwd } else { &self.inv };
        plan.process(data);
        if self.dims == 2 {
            let n = self.n;
            for i in 0..n {
                for j in 0..n {
                    self.scratch[j * n + i] = data[i * n + j];
                }
            }
            plan.process(&mut self.scratch);
            for i in 0..n {
                for j in 0..n {
                    data[i * n + j] = self.scratch[j * n + i];
                }
            }
        }
        if !forward {
            let s = 1.0 / data.len() as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Wavevector of FFT slot `slot`, plus a copy with Nyquist entries zeroed.
fn wavevector(slot: usize, n: usize, dims: usize) -> (Vec<f64>, Vec<f64>) {
    let k0 = 2.0 * PI / DOMAIN_LENGTH;
    let idx: Vec<usize> = if dims == 1 { vec![slot] } else { vec![slot / n, slot % n] };
    let k: Vec<f64> = idx.iter().map(|&j| k0 * mode_index(j, n) as f64).collect();
    let k_odd = idx
        .iter()
        .zip(&k)
        .map(|(&j, &kk)| if j == n / 2 { 0.0 } else { kk })
        .collect();
    (k, k_odd)
}

/// Nonlinear-term multiplier, zeroed outside the retained band when
/// `dealias` is set (2/3 rule, per dimension).
fn nonlinear_multiplier(system: &SpectralSystem, n: usize, dealias: bool) -> Vec<C> {
    let dims = system.dims();
    (0..n.pow(dims as u32))
        .map(|s| {
            let idx: Vec<usize> = if dims == 1 { vec![s] } else { vec![s / n, s % n] };
            let keep = !dealias || idx.iter().all(|&j| 3 * mode_index(j, n).unsigned_abs() as usize <= n);
            if keep {
                system.nonlinear_symbol(&wavevector(s, n, dims).1)
            } else {
                C::new(0.0, 0.0)
            }
        })
        .collect()
}

/// ETDRK4 integrator holding the Fourier-space state.
pub struct SpectralSolver {
    system: SpectralSystem,
    n: usize,
    dt: f64,
    time: f64,
    coeffs: Vec<Etdrk4Coeffs>,
    nsym: Vec<C>,
    linear_only: bool,
    fft: Fft2,
    state: Vec<Vec<C>>,
    phys: Vec<Vec<f64>>,
    nl: Vec<Vec<f64>>,
}

impl SpectralSolver {
    /// `n` grid points per dimension (a power of two). With `linear_only`
    /// the nonlinear term is dropped and each step is the exact propagator.
    pub fn new(system: SpectralSystem, n: usize, dt: f64, linear_only: bool) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("grid size {n} is not a power of two ≥ 4")));
        }
        let dims = system.dims();
        let total = n.pow(dims as u32);
        let mut coeffs = Vec::new();
        for comp in 0..system.components() {
            let l: Vec<C> = (0..total)
                .map(|s| {
                    let (k, ko) = wavevector(s, n, dims);
                    system.linear_symbol(comp, &k, &ko)
                })
                .collect();
            coeffs.push(etdrk4_coefficients(&l, dt)?);
        }
        let nsym = nonlinear_multiplier(&system, n, true);
        let comps = system.components();
        Ok(Self {
            system,
            n,
            dt,
            time: 0.0,
            coeffs,
            nsym,
            linear_only: linear_only || !system.has_nonlinearity(),
            fft: Fft2::new(n, dims),
            state: vec![vec![C::new(0.0, 0.0); total]; comps],
            phys: vec![vec![0.0; total]; comps],
            nl: vec![vec![0.0; total]; comps],
        })
    }

    /// Keeps every mode of the nonlinear term (no 2/3 truncation).
    pub fn without_dealiasing(mut self) -> Self {
        self.nsym = nonlinear_multiplier(&self.system, self.n, false);
        self
    }

    pub fn system(&self) -> &SpectralSystem {
        &self.system
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Physical-space fields, one flat array per component (x-major in 2D).
    pub fn set_fields(&mut self, fields: &[Vec<f64>]) -> Result<()> {
        let total = self.state[0].len();
        if fields.len() != self.state.len() || fields.iter().any(|f| f.len() != total) {
            return Err(Error::InvalidArgument(format!(
                "expected {} fields of {total} values",
                self.state.len()
            )));
        }
        for (s, f) in self.state.iter_mut().zip(fields) {
            for (sv, &fv) in s.iter_mut().zip(f) {
                *sv = C::new(fv, 0.0);
            }
            self.fft.transform(s, true);
        }
        self.time = 0.0;
        Ok(())
    }

    pub fn fields(&mut self) -> Vec<Vec<f64>> {
        self.state
            .iter()
            .map(|s| {
                let mut buf = s.clone();
                self.fft.transform(&mut buf, false);
                buf.iter().map(|c| c.re).collect()
            })
            .collect()
    }

    /// Fourier-space nonlinear term of `v`.
    fn eval_nonlinear(&mut self, v: &[Vec<C>]) -> Vec<Vec<C>> {
        for (p, s) in self.phys.iter_mut().zip(v) {
            let mut buf = s.clone();
            self.fft.transform(&mut buf, false);
            for (pv, c) in p.iter_mut().zip(&buf) {
                *pv = c.re;
            }
        }
        self.system.nonlinear(&self.phys, &mut self.nl);
        self.nl
            .iter()
            .map(|f| {
                let mut buf: Vec<C> = f.iter().map(|&x| C::new(x, 0.0)).collect();
                self.fft.transform(&mut buf, true);
                for (b, s) in buf.iter_mut().zip(&self.nsym) {
                    *b *= s;
                }
                buf
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<()> {
        if self.linear_only {
            for (s, c) in self.state.iter_mut().zip(&self.coeffs) {
                for (v, e) in s.iter_mut().zip(&c.e) {
                    *v *= e;
                }
            }
        } else {
            let v = self.state.clone();
            let nv = self.eval_nonlinear(&v);
            let stage = |base: &[Vec<C>], nterm: &[Vec<C>], coeffs: &[Etdrk4Coeffs]| -> Vec<Vec<C>> {
                base.iter()
                    .zip(nterm)
                    .zip(coeffs)
                    .map(|((b, nt), c)| {
                        b.iter()
                            .zip(nt)
                            .enumerate()
                            .map(|(i, (bv, nv))| c.e2[i] * bv + c.q[i] * nv)
                            .collect()
                    })
                    .collect()
            };
            let a = stage(&v, &nv, &self.coeffs);
            let na = self.eval_nonlinear(&a);
            let b = stage(&v, &na, &self.coeffs);
            let nb = self.eval_nonlinear(&b);
            let mix: Vec<Vec<C>> = nb
                .iter()
                .zip(&nv)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| 2.0 * p - q).collect())
                .collect();
            let c = stage(&a, &mix, &self.coeffs);
            let nc = self.eval_nonlinear(&c);
            for comp in 0..self.state.len() {
                let co = &self.coeffs[comp];
                for i in 0..self.state[comp].len() {
                    self.state[comp][i] = co.e[i] * v[comp][i]
                        + co.f1[i] * nv[comp][i]
                        + 2.0 * co.f2[i] * (na[comp][i] + nb[comp][i])
                        + co.f3[i] * nc[comp][i];
                }
            }
        }
        self.time += self.dt;
        if self.state.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::BlowUp(self.time));
        }
        Ok(())
    }

    pub fn steps(&mut self, count: usize) -> Result<()> {
        (0..count).try_for_each(|_| self.step())
    }
}

/// Resolution and cadence of a reference solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveConfig {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub record_dt: f64,
    pub dealias: bool,
}

fn ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let r = a / b;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-9 * k {
        return Err(Error::InvalidArgument(format!("{what}: {a} is not a multiple of {b}")));
    }
    Ok(k as usize)
}

/// Integrates from `u0` and records snapshots every `record_dt`, including
/// `t = 0` and `t = t_end`.
pub fn solve_reference(system: SpectralSystem, u0: &[Vec<f64>], cfg: &SolveConfig) -> Result<Dataset> {
    let per_record = ratio(cfg.record_dt, cfg.dt, "record interval")?;
    let records = ratio(cfg.t_end, cfg.record_dt, "final time")?;
    let mut solver = SpectralSolver::new(system, cfg.n, cfg.dt, false)?;
    if !cfg.dealias {
        solver = solver.without_dealiasing();
    }
    solver.set_fields(u0)?;
    let mut ds = Dataset::new(&system, cfg.n);
    ds.push(0.0, &solver.fields());
    for r in 1..=records {
        solver.steps(per_record)?;
        ds.push(r as f64 * cfg.record_dt, &solver.fields());
    }
    Ok(ds)
}

/// Initial fields of a benchmark sampled on the `n`-point grid.
pub fn initial_fields(problem: &Problem, n: usize) -> Result<Vec<Vec<f64>>> {
    let system = SpectralSystem::from_problem(problem)?;
    let x = grid_points(n);
    let comps = system.components();
    let mut out = vec![Vec::new(); comps];
    let mut push = |pt: &[f64]| {
        for (c, v) in problem.initial_condition(pt).into_iter().enumerate() {
            out[c].push(v);
        }
    };
    if system.dims() == 1 {
        x.iter().for_each(|&xi| push(&[xi]));
    } else {
        for &xi in &x {
            for &yi in &x {
                push(&[xi, yi]);
            }
        }
    }
    Ok(out)
}

/// Exact solution of the linear system `û_t = L û` at time `t`.
pub fn propagate_linear(system: SpectralSystem, n: usize, u0: &[Vec<f64>], t: f64) -> Result<Vec<Vec<f64>>> {
    if t == 0.0 {
        return Ok(u0.to_vec());
    }
    let mut s = SpectralSolver::new(system, n, t, true)?;
    s.set_fields(u0)?;
    s.step()?;
    Ok(s.fields())
}
