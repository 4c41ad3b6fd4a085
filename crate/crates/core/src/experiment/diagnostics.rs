use std::f64::consts::PI;
use std::fmt::Write as _;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{derivatives_of_diagnostic, Activation, BoundParams, Direction, JetLayout, Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{Architecture, EmbeddingConfig, NetConfig, Network};
use crate::tensor::{Rng, Tensor};
use crate::training::{eval_rel_l2, Adam, LrSchedule};

/// Scalar MLP `u: ℝ → ℝ` on raw coordinates, no weight factorization.
pub fn scalar_mlp(activation: Activation, width: usize, depth: usize) -> NetConfig {
    NetConfig {
        arch: Architecture::Mlp,
        input_dim: 1,
        output_dim: 1,
        layers: depth,
        width,
        activation,
        embedding: EmbeddingConfig::identity(),
        rwf: None,
        alpha_init: 0.0,
        gating: false,
    }
}

/// `∂ᵏu/∂xᵏ(x0)` for `k = 1..=max_order` of a freshly initialized network.
pub fn init_derivatives(cfg: &NetConfig, seed: u64, x0: f64, max_order: usize) -> Result<Vec<f64>> {
    let net = Network::new(cfg.clone(), &Rng::new(seed))?;
    let tape = Tape::new();
    let p = net.params().bind_constant(&tape);
    let x = Tensor::scalar(x0).reshape(&[1, 1])?;
    let d = derivatives_of_diagnostic(|l| net.forward(&tape, &p, &x, l), 1, 0, max_order)?;
    Ok(d.iter().map(|t| t.item()).collect())
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub activation: Activation,
    pub width: usize,
    pub depth: usize,
    pub order: usize,
    pub seeds: usize,
    pub mean: f64,
    pub variance: f64,
    /// Median over seeds of the squared derivative.
    pub median_square: f64,
}

/// Monte-Carlo statistics of `∂ᵏu/∂xᵏ(x0)` at initialization over seeds
/// `0..seeds`, one row per (activation, width, depth, order).
pub fn variance_study(
    widths: &[usize],
    depths: &[usize],
    activations: &[Activation],
    orders: &[usize],
    seeds: usize,
    x0: f64,
) -> Result<Vec<VarianceRow>> {
    if seeds < 2 {
        return Err(Error::InvalidArgument("a variance needs at least two seeds".into()));
    }
    let kmax = orders.iter().copied().max().unwrap_or(1);
    if orders.contains(&0) {
        return Err(Error::InvalidArgument("orders start at 1".into()));
    }
    let mut rows = Vec::new();
    for &act in activations {
        for &depth in depths {
            for &width in widths {
                let cfg = scalar_mlp(act, width, depth);
                let samples: Vec<Vec<f64>> = (0..seeds as u64)
                    .map(|s| init_derivatives(&cfg, s, x0, kmax))
                    .collect::<Result<_>>()?;
                for &k in orders {
                    let d: Vec<f64> = samples.iter().map(|v| v[k - 1]).collect();
                    let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
                    rows.push(VarianceRow {
                        activation: act,
                        width,
                        depth,
                        order: k,
                        seeds,
                        mean: d.iter().sum::<f64>() / seeds as f64,
                        variance: sample_variance(&d),
                        median_square: median(&sq),
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn act_name(a: Activation) -> String {
    serde_json::to_value(a).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn variance_csv(rows: &[VarianceRow]) -> String {
    let mut s = String::from("activation,width,depth,order,seeds,mean,variance,median_square\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{:e},{:e},{:e}",
            act_name(r.activation),
            r.width,
            r.depth,
            r.order,
            r.seeds,
            r.mean,
            r.variance,
            r.median_square
        )
        .unwrap();
    }
    s
}

/// Settings of the derivative-network regression of `sin(2πx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub depth: usize,
    pub width: usize,
    /// Derivative order `k` of the trained network; 0 fits `u` itself.
    pub order: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    /// Uniform grid size on `[0, 1]`.
    pub points: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl RegressionConfig {
    /// Width 128, tanh, 10⁴ full-batch Adam steps from 10⁻³ decaying by 0.9
    /// every 1000 steps, 256 grid points.
    pub fn standard(depth: usize, order: usize, seed: u64) -> Self {
        Self {
            depth,
            width: 128,
            order,
            steps: 10_000,
            learning_rate: 1e-3,
            decay_rate: 0.9,
            decay_steps: 1000,
            points: 256,
            activation: Activation::Tanh,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub rel_l2: f64,
    pub final_loss: f64,
}

fn derivative_var<'t>(
    net: &Network,
    tape: &'t Tape,
    p: &BoundParams<'t>,
    x: &Tensor,
    layout: Rc<JetLayout>,
    order: usize,
) -> Result<Var<'t>> {
    let out = net.forward(tape, p, x, layout)?;
    if order == 0 {
        out.value()
    } else {
        out.channel(0, order)
    }
}

/// Trains `∂ᵏu/∂xᵏ ≈ sin(2πx)` by mean squared error and reports the
/// relative L2 error of the derivative network on the training grid.
pub fn derivative_regression(cfg: &RegressionConfig) -> Result<RegressionResult> {
    let n = cfg.points;
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two grid points".into()));
    }
    let mut net = Network::new(scalar_mlp(cfg.activation, cfg.width, cfg.depth), &Rng::new(cfg.seed))?;
    let x = Tensor::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
    let y = x.map(|v| (2.0 * PI * v).sin());
    let layout = Rc::new(if cfg.order == 0 {
        JetLayout::values(n)
    } else {
        JetLayout::new(
            n,
            vec![Direction {
                coord: 0,
                order: cfg.order,
            }],
        )?
    });
    let sched = LrSchedule {
        peak: cfg.learning_rate,
        warmup_steps: 0,
        decay_rate: cfg.decay_rate,
        decay_steps: cfg.decay_steps,
    };
    let mut adam = Adam::new(net.params());
    for s in 0..cfg.steps {
        let tape = Tape::new();
        let p = net.params().bind(&tape);
        let d = derivative_var(&net, &tape, &p, &x, layout.clone(), cfg.order)?;
        let l = d.try_sub(tape.constant(y.clone()))?.mean_squares();
        if !l.value().item().is_finite() {
            return Err(Error::Diverged {
                step: s,
                reason: "non-finite regression loss".into(),
            });
        }
        let grads = p.gradients(&tape.backward(l)?);
        adam.step(net.params_mut(), &grads, sched.lr_at(s))?;
    }
    let tape = Tape::new();
    let p = net.params().bind_constant(&tape);
    let pred = derivative_var(&net, &tape, &p, &x, layout, cfg.order)?.value().clone();
    let loss = pred.sub(&y)?.sum_squares() / n as f64;
    let rel = eval_rel_l2(&pred, &y)?;
    Ok(RegressionResult {
        rel_l2: rel,
        final_loss: loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub depth: usize,
    pub order: usize,
    pub seed: u64,
    pub rel_l2: f64,
    pub final_loss: f64,
}

/// Runs every (depth, order, seed) cell of the regression grid.
pub fn regression_grid(
    base: &RegressionConfig,
    depths: &[usize],
    orders: &[usize],
    seeds: &[u64],
) -> Result<Vec<RegressionRow>> {
    let mut rows = Vec::new();
    for &depth in depths {
        for &order in orders {
            for &seed in seeds {
                let cfg = RegressionConfig {
                    depth,
                    order,
                    seed,
                    ..base.clone()
                };
                let r = derivative_regression(&cfg)?;
                log::info!("depth {depth} order {order} seed {seed}: rel. L2 {:.3e}", r.rel_l2);
                rows.push(RegressionRow {
                    depth,
                    order,
                    seed,
                    rel_l2: r.rel_l2,
                    final_loss: r.final_loss,
                });
            }
        }
    }
    Ok(rows)
}

pub fn regression_csv(rows: &[RegressionRow]) -> String {
    let mut s = String::from("depth,order,seed,rel_l2,final_loss\n");
    for r in rows {
        writeln!(s, "{},{},{},{:e},{:e}", r.depth, r.order, r.seed, r.rel_l2, r.final_loss).unwrap();
    }
    s
}
