use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Highest activation derivative any jet primitive asks for: order-4 jets
/// need `σ⁽⁴⁾` forward and `σ⁽⁵⁾` in the reverse sweep.
pub const MAX_ACTIVATION_DERIVATIVE: usize = 5;

/// Point-wise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Exact GeLU, `x Φ(x)` with the standard normal CDF.
    Gelu,
    /// `x · sigmoid(x)`.
    Swish,
    Sin,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
            Activation::Swish => "swish",
            Activation::Sin => "sin",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "gelu" => Ok(Activation::Gelu),
            "swish" | "silu" => Ok(Activation::Swish),
            "sin" | "sine" => Ok(Activation::Sin),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

/// Coefficients (ascending powers) of the polynomials `p_k` with
/// `dᵏ/dxᵏ g(x) = p_k(g(x))`, for `g' = q(g)`.
fn derivative_polys(q: &[f64]) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![0.0, 1.0]];
    for k in 0..MAX_ACTIVATION_DERIVATIVE {
        let p = &polys[k];
        let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
        let mut next = vec![0.0; dp.len() + q.len() - 1];
        for (i, a) in dp.iter().enumerate() {
            for (j, b) in q.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        polys.push(next);
    }
    polys
}

fn tanh_polys() -> &'static [Vec<f64>] {
    static P: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    P.get_or_init(|| derivative_polys(&[1.0, 0.0, -1.0]))
}

fn sigmoid_polys() -> &'static [Vec<f64>] {
    static P: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    P.get_or_init(|| derivative_polys(&[0.0, 1.0, -1.0]))
}

fn horner(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        let mut d = [0.0; 1];
        self.derivatives(x, &mut d);
        d[0]
    }

    /// Writes `σ⁽ʲ⁾(x)` for `j = 0..out.len()` into `out`.
    ///
    /// Panics if more than [`MAX_ACTIVATION_DERIVATIVE`]` + 1` entries are requested.
    pub fn derivatives(self, x: f64, out: &mut [f64]) {
        assert!(out.len() <= MAX_ACTIVATION_DERIVATIVE + 1);
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                if out.len() <= 4 {
                    // closed forms of the common orders
                    let t2 = t * t;
                    let s = 1.0 - t2;
                    let d = [t, s, -2.0 * t * s, s * (6.0 * t2 - 2.0)];
                    out.copy_from_slice(&d[..out.len()]);
                } else {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = horner(&tanh_polys()[j], t);
                    }
                }
            }
            Activation::Sin => {
                let (s, c) = x.sin_cos();
                for (j, o) in out.iter_mut().enumerate() {
                    *o = match j % 4 {
                        0 => s,
                        1 => c,
                        2 => -s,
                        _ => -c,
                    };
                }
            }
            Activation::Swish => {
                let s = 1.0 / (1.0 + (-x).exp());
                let mut sig = [0.0; MAX_ACTIVATION_DERIVATIVE + 1];
                for (j, v) in sig.iter_mut().enumerate().take(out.len()) {
                    *v = horner(&sigmoid_polys()[j], s);
                }
                for (j, o) in out.iter_mut().enumerate() {
                    *o = x * sig[j] + if j > 0 { j as f64 * sig[j - 1] } else { 0.0 };
                }
            }
            Activation::Gelu => {
                // cdf[j] = Φ⁽ʲ⁾(x); Φ⁽ʲ⁾ = (-1)^(j-1) He_{j-1}(x) φ(x) for j ≥ 1
                let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
                let he = [
                    1.0,
                    x,
                    x * x - 1.0,
                    x * x * x - 3.0 * x,
                    x.powi(4) - 6.0 * x * x + 3.0,
                ];
                let mut cdf = [0.0; MAX_ACTIVATION_DERIVATIVE + 1];
                cdf[0] = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                for j in 1..out.len() {
                    let sign = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
                    cdf[j] = sign * he[j - 1] * pdf;
                }
                for (j, o) in out.iter_mut().enumerate() {
                    *o = x * cdf[j] + if j > 0 { j as f64 * cdf[j - 1] } else { 0.0 };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Gelu,
        Activation::Swish,
        Activation::Sin,
    ];

    #[test]
    fn tanh_polynomials_match_closed_forms() {
        let t: f64 = 0.3;
        let mut d = [0.0; 6];
        Activation::Tanh.derivatives(t.atanh(), &mut d);
        let s = 1.0 - t * t;
        assert!((d[1] - s).abs() < 1e-15);
        assert!((d[2] + 2.0 * t * s).abs() < 1e-15);
        assert!((d[3] - s * (6.0 * t * t - 2.0)).abs() < 1e-15);
        // Maclaurin: tanh = x - x³/3 + 2x⁵/15
        Activation::Tanh.derivatives(0.0, &mut d);
        assert_eq!(d, [0.0, 1.0, 0.0, -2.0, 0.0, 16.0]);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-3;
        for act in ALL {
            for &x in &[-1.7, -0.4, 0.0, 0.35, 1.9] {
                let mut d = [0.0; 6];
                act.derivatives(x, &mut d);
                for j in 1..6 {
                    // 4th-order central difference of the (j-1)-th derivative
                    let f = |y: f64| {
                        let mut e = [0.0; 6];
                        act.derivatives(y, &mut e);
                        e[j - 1]
                    };
                    let fd = (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h))
                        / (12.0 * h);
                    assert!(
                        (fd - d[j]).abs() < 1e-8 * (1.0 + d[j].abs()),
                        "{act} x={x} j={j}: {fd} vs {}",
                        d[j]
                    );
                }
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for act in ALL {
            assert_eq!(act.to_string().parse::<Activation>().unwrap(), act);
        }
        assert!("relu".parse::<Activation>().is_err());
    }
}
