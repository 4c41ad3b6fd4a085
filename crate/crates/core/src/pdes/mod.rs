//! Interior, initial and boundary residuals for the benchmark problems.
//!
//! The residual formulas are generic over [`Field`] so the same code runs on
//! plain `f64` values (oracles, reference checks) and on tape variables
//! (training). Everything is written in moved-to-left-hand-side form, so a
//! residual of zero means the equation holds.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Direction, Jet, JetLayout, Var};
use crate::error::{Error, Result};
use crate::nets::PeriodicDim;
use crate::tensor::{Rng, Tensor};

/// Harmonics used for exactly periodic coordinates.
pub const DEFAULT_HARMONICS: usize = 5;

/// Arithmetic needed by the residual formulas.
pub trait Field:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Neg<Output = Self>
{
}

impl<T> Field for T where
    T: Copy
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Output = T>
        + Mul<f64, Output = T>
        + Add<f64, Output = T>
        + Sub<f64, Output = T>
        + Neg<Output = T>
{
}

/// `u_t − 10⁻⁴ u_xx + 5u³ − 5u`.
pub fn allen_cahn<T: Field>(u: T, u_t: T, u_xx: T) -> T {
    u_t - u_xx * 1e-4 + u * u * u * 5.0 - u * 5.0
}

/// `u_t + η u u_x + μ² u_xxx`.
pub fn kdv<T: Field>(u: T, u_t: T, u_x: T, u_xxx: T, eta: f64, mu: f64) -> T {
    u_t + u * u_x * eta + u_xxx * (mu * mu)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreyScottParams {
    pub eps1: f64,
    pub eps2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for GreyScottParams {
    fn default() -> Self {
        Self {
            eps1: 0.2,
            eps2: 0.1,
            b1: 40.0,
            b2: 100.0,
            c1: 1000.0,
            c2: 1000.0,
        }
    }
}

/// `(u_t − ε₁Δu − b₁(1−u) + c₁uv², v_t − ε₂Δv + b₂v − c₂uv²)`.
pub fn grey_scott<T: Field>(
    u: T,
    v: T,
    u_t: T,
    v_t: T,
    lap_u: T,
    lap_v: T,
    p: &GreyScottParams,
) -> (T, T) {
    let uv2 = u * v * v;
    let ru = u_t - lap_u * p.eps1 + u * p.b1 - p.b1 + uv2 * p.c1;
    let rv = v_t - lap_v * p.eps2 + v * p.b2 - uv2 * p.c2;
    (ru, rv)
}

/// `A_t = εΔA + μA − γA|A|²` with `A = u + iv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GinzburgLandauParams {
    pub eps: f64,
    pub mu: f64,
    pub gamma_re: f64,
    pub gamma_im: f64,
}

impl Default for GinzburgLandauParams {
    fn default() -> Self {
        Self {
            eps: 0.004,
            mu: 10.0,
            gamma_re: 10.0,
            gamma_im: 15.0,
        }
    }
}

/// Real and imaginary parts of `A_t − εΔA − μA + γA|A|²`.
pub fn ginzburg_landau<T: Field>(
    u: T,
    v: T,
    u_t: T,
    v_t: T,
    lap_u: T,
    lap_v: T,
    p: &GinzburgLandauParams,
) -> (T, T) {
    let r2 = u * u + v * v;
    let ru = u_t - lap_u * p.eps - u * p.mu + (u * p.gamma_re - v * p.gamma_im) * r2;
    let rv = v_t - lap_v * p.eps - v * p.mu + (v * p.gamma_re + u * p.gamma_im) * r2;
    (ru, rv)
}

/// First and second derivatives of one cavity field.
#[derive(Clone, Copy, Debug)]
pub struct Grad2<T> {
    pub val: T,
    pub x: T,
    pub y: T,
    pub xx: T,
    pub yy: T,
}

/// Steady incompressible Navier–Stokes: momentum `u·∇u + ∇p − Δu/Re` and
/// divergence `∇·u`.
pub fn ns_steady<T: Field>(u: &Grad2<T>, v: &Grad2<T>, p: &Grad2<T>, re: f64) -> (T, T, T) {
    let nu = 1.0 / re;
    let ru = u.val * u.x + v.val * u.y + p.x - (u.xx + u.yy) * nu;
    let rv = u.val * v.x + v.val * v.y + p.y - (v.xx + v.yy) * nu;
    let div = u.x + v.y;
    (ru, rv, div)
}

/// Smoothed lid profile `1 − cosh(C₀(x − ½)) / cosh(C₀/2)`.
pub fn cavity_lid_velocity(x: f64, c0: f64) -> f64 {
    1.0 - (c0 * (x - 0.5)).cosh() / (0.5 * c0).cosh()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdvParams {
    pub eta: f64,
    pub mu: f64,
}

impl Default for KdvParams {
    fn default() -> Self {
        Self { eta: 1.0, mu: 0.022 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityParams {
    pub re: f64,
    pub lid_c0: f64,
}

impl Default for CavityParams {
    fn default() -> Self {
        Self { re: 100.0, lid_c0: 50.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkId {
    AllenCahn,
    Kdv,
    GreyScott,
    GinzburgLandau,
    Cavity,
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchmarkId::AllenCahn => "allen_cahn",
            BenchmarkId::Kdv => "kdv",
            BenchmarkId::GreyScott => "grey_scott",
            BenchmarkId::GinzburgLandau => "ginzburg_landau",
            BenchmarkId::Cavity => "cavity",
        })
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allen_cahn" => Ok(BenchmarkId::AllenCahn),
            "kdv" => Ok(BenchmarkId::Kdv),
            "grey_scott" => Ok(BenchmarkId::GreyScott),
            "ginzburg_landau" => Ok(BenchmarkId::GinzburgLandau),
            "cavity" => Ok(BenchmarkId::Cavity),
            other => Err(Error::Config(format!("unknown benchmark '{other}'"))),
        }
    }
}

/// How spatial boundary conditions are imposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    /// Built into the embedding; no loss term.
    ExactPeriodic,
    /// Penalized at sampled wall points.
    DirichletSampled,
    None,
}

/// A benchmark problem with its coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Problem {
    AllenCahn,
    Kdv(KdvParams),
    GreyScott(GreyScottParams),
    GinzburgLandau(GinzburgLandauParams),
    Cavity(CavityParams),
}

/// Static description of a problem's inputs, outputs and derivative needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSpec {
    pub name: &'static str,
    /// Input coordinates; time (if any) is coordinate 0.
    pub inputs: Vec<&'static str>,
    pub outputs: Vec<&'static str>,
    pub time_dependent: bool,
    /// Pure derivative orders the interior residual requests.
    pub derivatives: Vec<Direction>,
    pub interior_terms: Vec<&'static str>,
    pub bc: BcKind,
    /// `(coord, lo, hi)` box of the full domain.
    pub domain: Vec<(f64, f64)>,
    /// Periodic input coordinates and their periods.
    pub periodic: Vec<(usize, f64)>,
}

impl Problem {
    pub fn default_for(id: BenchmarkId) -> Problem {
        match id {
            BenchmarkId::AllenCahn => Problem::AllenCahn,
            BenchmarkId::Kdv => Problem::Kdv(KdvParams::default()),
            BenchmarkId::GreyScott => Problem::GreyScott(GreyScottParams::default()),
            BenchmarkId::GinzburgLandau => Problem::GinzburgLandau(GinzburgLandauParams::default()),
            BenchmarkId::Cavity => Problem::Cavity(CavityParams::default()),
        }
    }

    pub fn id(&self) -> BenchmarkId {
        match self {
            Problem::AllenCahn => BenchmarkId::AllenCahn,
            Problem::Kdv(_) => BenchmarkId::Kdv,
            Problem::GreyScott(_) => BenchmarkId::GreyScott,
            Problem::GinzburgLandau(_) => BenchmarkId::GinzburgLandau,
            Problem::Cavity(_) => BenchmarkId::Cavity,
        }
    }

    pub fn spec(&self) -> ResidualSpec {
        let d = |coord, order| Direction { coord, order };
        match self {
            Problem::AllenCahn | Problem::Kdv(_) => ResidualSpec {
                name: if matches!(self, Problem::AllenCahn) { "allen_cahn" } else { "kdv" },
                inputs: vec!["t", "x"],
                outputs: vec!["u"],
                time_dependent: true,
                derivatives: if matches!(self, Problem::AllenCahn) {
                    vec![d(0, 1), d(1, 2)]
                } else {
                    vec![d(0, 1), d(1, 3)]
                },
                interior_terms: vec!["r"],
                bc: BcKind::ExactPeriodic,
                domain: vec![(0.0, 1.0), (-1.0, 1.0)],
                periodic: vec![(1, 2.0)],
            },
            Problem::GreyScott(_) | Problem::GinzburgLandau(_) => ResidualSpec {
                name: if matches!(self, Problem::GreyScott(_)) {
                    "grey_scott"
                } else {
                    "ginzburg_landau"
                },
                inputs: vec!["t", "x", "y"],
                outputs: vec!["u", "v"],
                time_dependent: true,
                derivatives: vec![d(0, 1), d(1, 2), d(2, 2)],
                interior_terms: vec!["r_u", "r_v"],
                bc: BcKind::ExactPeriodic,
                domain: vec![(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
                periodic: vec![(1, 2.0), (2, 2.0)],
            },
            Problem::Cavity(_) => ResidualSpec {
                name: "cavity",
                inputs: vec!["x", "y"],
                outputs: vec!["u", "v", "p"],
                time_dependent: false,
                derivatives: vec![d(0, 2), d(1, 2)],
                interior_terms: vec!["r_u", "r_v", "r_div"],
                bc: BcKind::DirichletSampled,
                domain: vec![(0.0, 1.0), (0.0, 1.0)],
                periodic: vec![],
            },
        }
    }

    /// Jet layout carrying every derivative the interior residual reads.
    pub fn layout(&self, batch: usize) -> Result<JetLayout> {
        JetLayout::new(batch, self.spec().derivatives)
    }

    /// Periodic coordinates as embedding settings.
    pub fn periodic_dims(&self) -> Vec<PeriodicDim> {
        self.spec()
            .periodic
            .into_iter()
            .map(|(coord, period)| PeriodicDim {
                coord,
                period,
                harmonics: DEFAULT_HARMONICS,
            })
            .collect()
    }

    /// Initial condition at spatial point `x` (without the time coordinate).
    pub fn initial_condition(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Problem::AllenCahn => vec![x[0] * x[0] * (PI * x[0]).cos()],
            Problem::Kdv(_) => vec![(PI * x[0]).cos()],
            Problem::GreyScott(_) => {
                let (a, b) = (x[0], x[1]);
                let u = 1.0 - (-10.0 * ((a + 0.05).powi(2) + (b + 0.02).powi(2))).exp();
                let v = 1.0 - (-10.0 * ((a - 0.05).powi(2) + (b - 0.02).powi(2))).exp();
                vec![u, v]
            }
            Problem::GinzburgLandau(_) => {
                let (a, b) = (x[0], x[1]);
                let e = (-25.0 * (a * a + b * b)).exp();
                vec![10.0 * b * e, 10.0 * a * e]
            }
            Problem::Cavity(_) => Vec::new(),
        }
    }

    /// Interior residuals of the network output jet, one `[batch, 1]` value
    /// per entry of [`ResidualSpec::interior_terms`]. The jet layout must
    /// carry the derivatives listed in [`ResidualSpec::derivatives`].
    pub fn interior<'t>(&self, out: &Jet<'t>) -> Result<Vec<Var<'t>>> {
        let der = |col, coord, order| out.derivative(col, coord, order);
        match self {
            Problem::AllenCahn => Ok(vec![allen_cahn(der(0, 0, 0)?, der(0, 0, 1)?, der(0, 1, 2)?)]),
            Problem::Kdv(p) => Ok(vec![kdv(
                der(0, 0, 0)?,
                der(0, 0, 1)?,
                der(0, 1, 1)?,
                der(0, 1, 3)?,
                p.eta,
                p.mu,
            )]),
            Problem::GreyScott(_) | Problem::GinzburgLandau(_) => {
                let (u, v) = (der(0, 0, 0)?, der(1, 0, 0)?);
                let (u_t, v_t) = (der(0, 0, 1)?, der(1, 0, 1)?);
                let lap_u = der(0, 1, 2)? + der(0, 2, 2)?;
                let lap_v = der(1, 1, 2)? + der(1, 2, 2)?;
                let (ru, rv) = match self {
                    Problem::GreyScott(p) => grey_scott(u, v, u_t, v_t, lap_u, lap_v, p),
                    Problem::GinzburgLandau(p) => ginzburg_landau(u, v, u_t, v_t, lap_u, lap_v, p),
                    _ => unreachable!(),
                };
                Ok(vec![ru, rv])
            }
            Problem::Cavity(p) => {
                let field = |col| -> Result<Grad2<Var<'t>>> {
                    Ok(Grad2 {
                        val: der(col, 0, 0)?,
                        x: der(col, 0, 1)?,
                        y: der(col, 1, 1)?,
                        xx: der(col, 0, 2)?,
                        yy: der(col, 1, 2)?,
                    })
                };
                let (ru, rv, div) = ns_steady(&field(0)?, &field(1)?, &field(2)?, p.re);
                Ok(vec![ru, rv, div])
            }
        }
    }

    /// Sampled Dirichlet boundary points and targets for the cavity: an equal
    /// share of `n` on each wall; targets are `(u, v)`.
    pub fn sample_boundary(&self, rng: &mut Rng, n: usize) -> Result<(Tensor, Tensor)> {
        let Problem::Cavity(p) = self else {
            return Err(Error::InvalidArgument(format!(
                "{} has no sampled boundary",
                self.id()
            )));
        };
        let mut coords = Tensor::zeros(&[n, 2]);
        let mut targets = Tensor::zeros(&[n, 2]);
        for i in 0..n {
            let s = rng.uniform();
            let (x, y) = match i % 4 {
                0 => (s, 1.0),
                1 => (s, 0.0),
                2 => (0.0, s),
                _ => (1.0, s),
            };
            coords.set(i, 0, x);
            coords.set(i, 1, y);
            if i % 4 == 0 {
                targets.set(i, 0, cavity_lid_velocity(x, p.lid_c0));
            }
        }
        Ok((coords, targets))
    }
}

/// `u_θ(x) − g(x)` per output column, each `[batch, 1]`. Used for initial
/// data (time coordinate fixed at the window start) and for sampled
/// Dirichlet walls alike.
pub fn data_residual<'t>(out: &Jet<'t>, targets: &Tensor) -> Result<Vec<Var<'t>>> {
    let b = out.layout().batch();
    if targets.rows() != b || targets.cols() > out.width() {
        return Err(Error::shape("data_residual", targets.shape(), &[b, out.width()]));
    }
    let tape = out.var().tape();
    (0..targets.cols())
        .map(|c| {
            let g = tape.constant(targets.slice_cols(c, 1));
            out.derivative(c, 0, 0)?.try_sub(g)
        })
        .collect()
}

/// Initial-condition residual `u_θ(t₀, x) − g(x)`.
pub fn ic_residual<'t>(out: &Jet<'t>, targets: &Tensor) -> Result<Vec<Var<'t>>> {
    data_residual(out, targets)
}

/// Boundary residual for problems with sampled walls; periodic problems have
/// none and return an error.
pub fn bc_residual<'t>(problem: &Problem, out: &Jet<'t>, targets: &Tensor) -> Result<Vec<Var<'t>>> {
    if problem.spec().bc != BcKind::DirichletSampled {
        return Err(Error::InvalidArgument(format!(
            "{} encodes its boundary exactly",
            problem.id()
        )));
    }
    data_residual(out, targets)
}
