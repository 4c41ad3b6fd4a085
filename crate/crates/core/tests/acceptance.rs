//! Acceptance suite. Every test prints one `PASS`/`FAIL` line (run with
//! `--nocapture` to see them). The desk-scale training runs are `#[ignore]`d;
//! run them with `cargo test --release -p piratenet --test acceptance --
//! --ignored --nocapture`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

use piratenet::autodiff::{gradient_check, Activation, Direction, Jet, JetLayout, Tape};
use piratenet::experiment::{
    median, regression_grid, run_experiment, run_sweep, variance_study, ExperimentConfig, RegressionConfig,
    RunOptions, CHECKPOINT_DIR, FINAL,
};
use piratenet::nets::{Architecture, EmbeddingConfig, NetConfig, Network, RwfConfig};
use piratenet::pdes::{BenchmarkId, Problem};
use piratenet::spectral::{
    grid_points, initial_fields, SolveConfig, SpectralSolver, SpectralSystem,
};
use piratenet::training::{
    causal_weights, composite_loss, grad_norm_weights, loss_terms, ntk_weights, pi_init_data, sample_batch,
    IcSource, InitMode, MetricsRecord, Plan, TrainConfig,
};
use piratenet::{Rng, Tensor};

fn verdict(id: &str, ok: bool, detail: String) {
    println!("{} criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id}: {detail}");
}

fn sci(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", v.join(", "))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn all_problems() -> Vec<Problem> {
    [
        BenchmarkId::AllenCahn,
        BenchmarkId::Kdv,
        BenchmarkId::GreyScott,
        BenchmarkId::GinzburgLandau,
        BenchmarkId::Cavity,
    ]
    .into_iter()
    .map(Problem::default_for)
    .collect()
}

const ARCHS: [Architecture; 4] = [
    Architecture::Mlp,
    Architecture::Resnet,
    Architecture::ModifiedMlp,
    Architecture::Piratenet,
];

fn small_net(problem: &Problem, arch: Architecture, seed: u64) -> Network {
    let spec = problem.spec();
    let periodic = problem
        .periodic_dims()
        .into_iter()
        .map(|mut p| {
            p.harmonics = 2;
            p
        })
        .collect();
    let cfg = NetConfig {
        arch,
        input_dim: spec.inputs.len(),
        output_dim: spec.outputs.len(),
        layers: 3,
        width: 16,
        activation: Activation::Tanh,
        embedding: EmbeddingConfig::fourier(1.0, periodic),
        rwf: Some(RwfConfig { mean: 1.0, std: 0.1 }),
        alpha_init: 0.3,
        gating: true,
    };
    Network::new(cfg, &Rng::new(seed)).unwrap()
}

fn small_train() -> TrainConfig {
    toml::from_str(
        "learning_rate = 1e-3\ndecay_rate = 0.9\ndecay_steps = 100\nwarmup_steps = 0\n\
         batch_size = 6\nic_batch = 4\nbc_batch = 4\n",
    )
    .unwrap()
}

fn sample_coords(problem: &Problem, n: usize, rng: &mut Rng) -> Tensor {
    let d = problem.spec().domain;
    Tensor::from_fn(n, d.len(), |_, j| rng.uniform_in(d[j].0, d[j].1))
}

#[test]
fn c01_loss_gradients_match_central_differences() {
    let mut rng = Rng::new(101);
    let mut worst = (0.0f64, String::new());
    for problem in all_problems() {
        let name = problem.spec().name;
        for (a, arch) in ARCHS.into_iter().enumerate() {
            let net = small_net(&problem, arch, 10 + a as u64);
            let train = small_train();
            let plan = Plan {
                problem,
                net: net.config().clone(),
                train: train.clone(),
                init: InitMode::Plain,
                seed: 0,
            };
            let batch = sample_batch(&mut rng, &plan.setup(0, &[], None), &train).unwrap();
            let lambdas: Vec<f64> = loss_terms(&problem).iter().map(|_| rng.uniform_in(0.5, 2.0)).collect();
            let chk = gradient_check(
                net.params(),
                |tape, p| Ok(composite_loss(tape, &net, p, &problem, &batch, &lambdas, 1, 0.0)?.0),
                20,
                1e-6,
                &mut rng,
            )
            .unwrap();
            if !(chk.rel_err <= worst.0) {
                worst = (chk.rel_err, format!("{name}/{arch}"));
            }
        }
    }
    verdict(
        "1",
        worst.0 < 1e-5,
        format!(
            "gradient vs central differences, 4 architectures x 5 benchmarks, worst rel. err {:.2e} ({})",
            worst.0, worst.1
        ),
    );
}

/// Channel `k` of the network jet against a fourth-order central difference
/// of channel `k - 1`, for every input coordinate and output.
fn jet_fd_error(net: &Network, coords: &Tensor, coord: usize) -> f64 {
    let n = coords.rows();
    let channels = |c: &Tensor| -> Vec<Vec<Tensor>> {
        let tape = Tape::new();
        let p = net.params().bind_constant(&tape);
        let layout = Rc::new(JetLayout::new(n, vec![Direction { coord, order: 3 }]).unwrap());
        let out = net.forward(&tape, &p, c, layout).unwrap();
        (0..net.config().output_dim)
            .map(|col| (0..=3).map(|k| out.derivative(col, coord, k).unwrap().value().clone()).collect())
            .collect()
    };
    let shifted = |h: f64| {
        let mut c = coords.clone();
        for i in 0..n {
            c.set(i, coord, coords.get(i, coord) + h);
        }
        channels(&c)
    };
    let h = 1e-3;
    let base = channels(coords);
    let (p2, p1, m1, m2) = (shifted(2.0 * h), shifted(h), shifted(-h), shifted(-2.0 * h));
    let mut worst = 0.0f64;
    for col in 0..base.len() {
        for k in 1..=3 {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..n {
                let fd = (-p2[col][k - 1].get(i, 0) + 8.0 * p1[col][k - 1].get(i, 0) - 8.0 * m1[col][k - 1].get(i, 0)
                    + m2[col][k - 1].get(i, 0))
                    / (12.0 * h);
                let ad = base[col][k].get(i, 0);
                num += (fd - ad) * (fd - ad);
                den += fd * fd;
            }
            worst = worst.max((num / den.max(1e-300)).sqrt());
        }
    }
    worst
}

fn pow<'t>(b: &Jet<'t>, e: usize) -> Option<Jet<'t>> {
    (e > 0).then(|| (1..e).fold(b.clone(), |acc, _| acc.mul(b).unwrap()))
}

fn falling(i: usize, k: usize) -> f64 {
    (0..k).map(|j| (i - j) as f64).product()
}

#[test]
fn c02_jets_match_finite_differences_and_polynomials() {
    let mut rng = Rng::new(202);
    let mut worst_fd = 0.0f64;
    for problem in all_problems() {
        for (a, arch) in ARCHS.into_iter().enumerate() {
            let net = small_net(&problem, arch, 20 + a as u64);
            let coords = sample_coords(&problem, 8, &mut rng);
            for coord in 0..coords.cols() {
                worst_fd = worst_fd.max(jet_fd_error(&net, &coords, coord));
            }
        }
    }

    // exact jets of random bivariate cubics built from jet arithmetic
    let mut worst_poly = 0.0f64;
    for _ in 0..20 {
        let xs = Tensor::from_fn(5, 2, |_, _| rng.uniform_in(-1.5, 1.5));
        let mut c = [[0.0; 4]; 4];
        for (i, row) in c.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i + j <= 3 && i + j > 0 {
                    *v = rng.uniform_in(-2.0, 2.0);
                }
            }
        }
        let tape = Tape::new();
        let layout = Rc::new(
            JetLayout::new(5, vec![Direction { coord: 0, order: 3 }, Direction { coord: 1, order: 3 }]).unwrap(),
        );
        let inputs = Jet::seed_inputs(&tape, &xs, layout).unwrap();
        let (x, y) = (inputs.column(0).unwrap(), inputs.column(1).unwrap());
        let mut poly: Option<Jet<'_>> = None;
        for (i, row) in c.iter().enumerate() {
            for (j, &cij) in row.iter().enumerate() {
                if cij == 0.0 {
                    continue;
                }
                let term = match (pow(&x, i), pow(&y, j)) {
                    (Some(a), Some(b)) => a.mul(&b).unwrap(),
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => unreachable!(),
                }
                .scale(cij);
                poly = Some(match poly {
                    Some(p) => p.add(&term).unwrap(),
                    None => term,
                });
            }
        }
        let poly = poly.unwrap();
        for n in 0..5 {
            let (xv, yv) = (xs.get(n, 0), xs.get(n, 1));
            for (coord, k) in [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3)] {
                let mut want = 0.0;
                for (i, row) in c.iter().enumerate() {
                    for (j, &cij) in row.iter().enumerate() {
                        let (di, dj) = if coord == 0 { (k, 0) } else { (0, k) };
                        if i < di || j < dj {
                            continue;
                        }
                        want += cij
                            * falling(i, di)
                            * falling(j, dj)
                            * xv.powi((i - di) as i32)
                            * yv.powi((j - dj) as i32);
                    }
                }
                let got = poly.derivative(0, coord, k).unwrap().value().get(n, 0);
                worst_poly = worst_poly.max((got - want).abs() / (1.0 + want.abs()));
            }
        }
    }
    verdict(
        "2",
        worst_fd < 1e-5 && worst_poly < 1e-12,
        format!(
            "orders 1-3, every benchmark and architecture: worst rel. err vs differences {worst_fd:.2e}, \
             vs exact cubic jets {worst_poly:.1e}"
        ),
    );
}

#[test]
fn c03_derivative_variance_decays_with_width() {
    let widths = [64, 256, 1024];
    let rows = variance_study(&widths, &[3], &[Activation::Tanh], &[1], 500, 0.5).unwrap();
    let var: Vec<f64> = widths
        .iter()
        .map(|w| rows.iter().find(|r| r.width == *w).unwrap().variance)
        .collect();
    let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
    let slope = piratenet::experiment::loglog_slope(&xs, &var);
    let monotone = var.windows(2).all(|w| w[1] < w[0]);
    verdict(
        "3",
        monotone && slope <= -0.5,
        format!("Var(du/dx at 0.5) over 500 seeds for widths {widths:?}: {}, log-log slope {slope:.3}", sci(&var)),
    );
}

#[test]
#[ignore = "slow: 20 regressions of 1e4 full-batch steps"]
fn c04_derivative_regression_ordering() {
    let orders = [0, 1, 2, 4];
    let seeds: Vec<u64> = (0..5).collect();
    let rows = regression_grid(&RegressionConfig::standard(8, 0, 0), &[8], &orders, &seeds).unwrap();
    let med: BTreeMap<usize, f64> = orders
        .iter()
        .map(|&k| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.order == k).map(|r| r.rel_l2).collect();
            (k, median(&errs))
        })
        .collect();
    let ok = med[&4] >= med[&2] && med[&2] >= med[&1] && med[&0] < 0.01;
    verdict(
        "4",
        ok,
        format!(
            "median rel. L2 at depth 8 by derivative order: {}",
            med.iter().map(|(k, e)| format!("k={k} {e:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

#[test]
fn c05_fresh_piratenet_is_linear_in_embedding() {
    let problem = Problem::AllenCahn;
    let mut worst = 0.0f64;
    let mut rng = Rng::new(505);
    for blocks in [1, 2, 4, 8, 16] {
        let cfg = NetConfig {
            arch: Architecture::Piratenet,
            input_dim: 2,
            output_dim: 1,
            layers: 3 * blocks,
            width: 32,
            activation: Activation::Tanh,
            embedding: EmbeddingConfig::fourier(2.0, problem.periodic_dims()),
            rwf: Some(RwfConfig { mean: 1.0, std: 0.1 }),
            alpha_init: 0.0,
            gating: true,
        };
        let net = Network::new(cfg, &Rng::new(blocks as u64)).unwrap();
        let x = sample_coords(&problem, 16, &mut rng);
        let phi = net.embedding().embed(&x).unwrap();
        let mut want = phi.matmul(&net.head().materialize(net.params()).transpose()).unwrap();
        if let Some(b) = net.head().bias(net.params()) {
            for i in 0..want.rows() {
                want.set(i, 0, want.get(i, 0) + b.data()[0]);
            }
        }
        let got = net.predict(&x).unwrap();
        worst = worst.max(got.sub(&want).unwrap().max_abs());
    }
    verdict(
        "5",
        worst < 1e-12,
        format!("|u(x) - W phi(x)| at init over 1..16 blocks: {worst:.1e}"),
    );
}

/// Least-squares residual `U_k U_kᵀ Y - Y` from a plain SVD of `A` (no QR
/// reduction), keeping singular values above `max(n, p) ε σ_max`.
fn projection_oracle(a: &Tensor, y: &Tensor) -> Tensor {
    let na = DMatrix::from_row_slice(a.rows(), a.cols(), a.data());
    let ny = DMatrix::from_row_slice(y.rows(), y.cols(), y.data());
    let svd = na.svd(true, false);
    let smax = svd.singular_values.max();
    let tol = a.rows().max(a.cols()) as f64 * f64::EPSILON * smax;
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol).collect();
    let u = svd.u.unwrap().select_columns(&keep);
    let r = &u * (u.transpose() * &ny) - &ny;
    Tensor::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)])
}

#[test]
fn c06_physics_informed_init_matches_least_squares_oracle() {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (problem, width) in [
        (Problem::AllenCahn, 64),
        (Problem::default_for(BenchmarkId::Kdv), 64),
        (Problem::default_for(BenchmarkId::GreyScott), 32),
    ] {
        let spec = problem.spec();
        let cfg = NetConfig {
            arch: Architecture::Piratenet,
            input_dim: spec.inputs.len(),
            output_dim: spec.outputs.len(),
            layers: 3,
            width,
            activation: Activation::Tanh,
            embedding: EmbeddingConfig::fourier(1.0, problem.periodic_dims()),
            rwf: Some(RwfConfig { mean: 1.0, std: 0.1 }),
            alpha_init: 0.0,
            gating: true,
        };
        let mut train = small_train();
        train.init_times = 16;
        train.init_grid = Some(if spec.inputs.len() == 2 { 64 } else { 16 });
        let (x, y) = pi_init_data(&problem, InitMode::PiInitIc, &IcSource::Initial, 1.0, &train, &mut Rng::new(6))
            .unwrap()
            .unwrap();
        let mut net = Network::new(cfg, &Rng::new(66)).unwrap();
        let design = net.head_design(&x).unwrap();
        let oracle = projection_oracle(&design, &y);
        net.physics_informed_init(&x, &y).unwrap();
        let got = net.predict(&x).unwrap().sub(&y).unwrap();
        let diff = (got.norm() - oracle.norm()).abs();
        worst = worst.max(diff);
        // rounding floor of evaluating A W with the fitted head
        let w = net.head().materialize(net.params());
        let floor = f64::EPSILON * design.norm() * w.norm();
        details.push(format!(
            "{} |r| {:.4e} vs {:.4e}, entrywise {:.1e}, floor {floor:.1e}",
            spec.name,
            got.norm(),
            oracle.norm(),
            got.sub(&oracle).unwrap().max_abs()
        ));
    }
    verdict(
        "6",
        worst < 1e-8,
        format!(
            "IC residual norm after the head fit vs pseudoinverse oracle: max diff {worst:.1e} ({})",
            details.join("; ")
        ),
    );
}

fn desk_accuracy(id: &str, config: &str, tol: f64) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&config_path(config), &[]).unwrap();
    let s = run_experiment(&cfg, cfg.seeds[0], dir.path(), &RunOptions::default()).unwrap();
    let err = s.eval_rel_l2.unwrap_or(f64::NAN);
    verdict(id, err < tol, format!("{config}: rel. L2 {err:.3e} after {} steps (bound {tol:e})", s.steps_done));
}

#[test]
#[ignore = "slow: 5e4 steps at width 256"]
fn c07_allen_cahn_desk_accuracy() {
    desk_accuracy("7", "desk/allen_cahn.toml", 1e-2);
}

#[test]
#[ignore = "slow: 5e4 steps at width 256"]
fn c08_kdv_desk_accuracy() {
    desk_accuracy("8", "desk/kdv.toml", 5e-2);
}

/// Base table of a desk sweep with its reference cached under `dir`.
fn sweep_table(config: &str, dir: &Path) -> toml::Table {
    let text = fs::read_to_string(config_path(config)).unwrap();
    let path = dir.join("allen_cahn_desk.ref");
    ExperimentConfig::table_with(&text, &[format!("reference.path=\"{}\"", path.display())]).unwrap()
}

fn medians_by(rows: &[piratenet::experiment::SweepRow]) -> BTreeMap<String, (f64, usize)> {
    let mut by: BTreeMap<String, Vec<&piratenet::experiment::SweepRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.label.clone()).or_default().push(r);
    }
    by.into_iter()
        .map(|(k, v)| {
            let errs: Vec<f64> = v.iter().map(|r| r.rel_l2).collect();
            let diverged = v.iter().filter(|r| r.status != "completed").count();
            (k, (median(&errs), diverged))
        })
        .collect()
}

#[test]
#[ignore = "slow: 18 runs of 2e4 steps"]
fn c09_depth_trend() {
    let dir = tempfile::tempdir().unwrap();
    let rows = run_sweep(&sweep_table("desk/depth_sweep.toml", dir.path()), dir.path()).unwrap();
    let m = medians_by(&rows);
    let get = |arch: &str, l: usize| m[&format!("model.arch={arch} model.layers={l}")];
    let (mlp9, mlp18) = (get("mlp", 9), get("mlp", 18));
    let (pn9, pn18) = (get("piratenet", 9), get("piratenet", 18));
    let ok = mlp18.0 > mlp9.0 && pn18.0 <= 3.0 * pn9.0 && pn9.1 + pn18.1 == 0;
    verdict(
        "9",
        ok,
        format!(
            "median rel. L2 mlp 9/18 layers {:.3e}/{:.3e}, piratenet {:.3e}/{:.3e}, piratenet aborts {}",
            mlp9.0,
            mlp18.0,
            pn9.0,
            pn18.0,
            pn9.1 + pn18.1
        ),
    );
}

#[test]
#[ignore = "slow: 12 runs of 2e4 steps"]
fn c10_alpha_zero_beats_alpha_one() {
    let dir = tempfile::tempdir().unwrap();
    let rows = run_sweep(&sweep_table("desk/alpha_ablation.toml", dir.path()), dir.path()).unwrap();
    let m = medians_by(&rows);
    let mut ok = true;
    let mut detail = Vec::new();
    for layers in [18, 27] {
        let a0 = m[&format!("model.alpha_init=0.0 model.layers={layers}")].0;
        let a1 = m[&format!("model.alpha_init=1.0 model.layers={layers}")].0;
        ok &= a0 < a1;
        detail.push(format!("{} blocks: alpha=0 {a0:.3e} vs alpha=1 {a1:.3e}", layers / 3));
    }
    verdict("10", ok, detail.join("; "));
}

fn solve(system: SpectralSystem, u0: &[Vec<f64>], n: usize, dt: f64, t_end: f64) -> Vec<Vec<f64>> {
    let mut s = SpectralSolver::new(system, n, dt, false).unwrap();
    s.set_fields(u0).unwrap();
    s.steps((t_end / dt).round() as usize).unwrap();
    s.fields()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn c11_etdrk4_order_and_linear_exactness() {
    // self-convergence on Allen-Cahn
    let ac = SpectralSystem::from_problem(&Problem::AllenCahn).unwrap();
    let n = 128;
    let u0 = initial_fields(&Problem::AllenCahn, n).unwrap();
    let t_end = 0.4;
    let reference = solve(ac, &u0, n, 0.04 / 256.0, t_end).remove(0);
    let errors: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dt| rel_l2(&solve(ac, &u0, n, dt, t_end)[0], &reference))
        .collect();
    let order = errors
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .fold(f64::INFINITY, f64::min);

    // linear problems against closed forms
    let x = grid_points(64);
    let heat0: Vec<f64> = x.iter().map(|x| (PI * x).sin() + 0.5 * (3.0 * PI * x).cos()).collect();
    let (nu, t) = (0.05, 0.3);
    let heat = solve(SpectralSystem::Heat { nu, dims: 1 }, &[heat0], 64, 1e-2, t).remove(0);
    let heat_exact: Vec<f64> = x
        .iter()
        .map(|x| (-nu * PI * PI * t).exp() * (PI * x).sin() + 0.5 * (-9.0 * nu * PI * PI * t).exp() * (3.0 * PI * x).cos())
        .collect();
    let mu = 0.022;
    let airy0: Vec<f64> = x.iter().map(|x| (2.0 * PI * x).sin()).collect();
    let airy = solve(SpectralSystem::Kdv { eta: 0.0, mu }, &[airy0], 64, 1e-3, t).remove(0);
    let k = 2.0 * PI;
    let airy_exact: Vec<f64> = x.iter().map(|x| (k * (x + mu * mu * k * k * t)).sin()).collect();
    let n2 = 32;
    let g = grid_points(n2);
    let heat2_0: Vec<f64> = (0..n2 * n2).map(|i| (PI * g[i / n2]).sin() * (2.0 * PI * g[i % n2]).cos()).collect();
    let heat2 = solve(SpectralSystem::Heat { nu, dims: 2 }, std::slice::from_ref(&heat2_0), n2, 1e-2, t).remove(0);
    let heat2_exact: Vec<f64> = heat2_0.iter().map(|v| v * (-5.0 * nu * PI * PI * t).exp()).collect();
    let max_err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let lin = max_err(&heat, &heat_exact)
        .max(max_err(&airy, &airy_exact))
        .max(max_err(&heat2, &heat2_exact));
    verdict(
        "11",
        order >= 3.5 && lin < 1e-10,
        format!("Allen-Cahn temporal order {order:.2} (errors {}); linear problems max error {lin:.1e}", sci(&errors)),
    );
}

#[test]
fn c12_kdv_reference_conserves_mass() {
    let cfg = ExperimentConfig::load(&config_path("kdv.toml"), &[]).unwrap();
    let problem = cfg.problem().unwrap();
    let solve_cfg: SolveConfig = cfg.reference.clone().unwrap_or_default().solve_config(&problem).unwrap();
    let ds = piratenet::experiment::generate_reference(&problem, &solve_cfg).unwrap();
    let h = 2.0 / solve_cfg.n as f64;
    let mass = |ti: usize| ds.snapshot(ti, 0).iter().sum::<f64>() * h;
    let m0 = mass(0);
    let drift = (0..ds.times.len()).map(|ti| (mass(ti) - m0).abs()).fold(0.0, f64::max);
    verdict(
        "12",
        drift < 1e-8 && ds.times.last().copied() == Some(1.0),
        format!(
            "KdV reference ({} points, dt {:e}) max mass drift over [0, 1]: {drift:.1e}",
            solve_cfg.n, solve_cfg.dt
        ),
    );
}

#[test]
fn c13_causal_and_balancing_invariants() {
    let mut runner = TestRunner::new(PropConfig::with_cases(512));
    let causal = runner.run(
        &(prop::collection::vec(0.0f64..100.0, 1..64), 0.0f64..20.0),
        |(losses, eps)| {
            let w = causal_weights(&losses, eps).unwrap();
            prop_assert_eq!(w[0], 1.0);
            prop_assert!(w.windows(2).all(|p| p[1] <= p[0]));
            prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
            let flat = causal_weights(&losses, 0.0).unwrap();
            prop_assert!(flat.iter().all(|&v| v == 1.0));
            Ok(())
        },
    );
    let mut runner = TestRunner::new(PropConfig::with_cases(512));
    let balancing = runner.run(
        &(
            prop::collection::vec(prop_oneof![Just(0.0), 1e-30f64..1e30], 1..8),
            prop::collection::vec(1e-6f64..1e6, 8),
            0.0f64..0.999,
        ),
        |(scales, prev, ema)| {
            let prev = &prev[..scales.len()];
            for w in [
                grad_norm_weights(&scales, None, ema).unwrap(),
                grad_norm_weights(&scales, Some(prev), ema).unwrap(),
                ntk_weights(&scales, Some(prev), ema).unwrap(),
            ] {
                prop_assert!(w.iter().all(|v| v.is_finite() && *v > 0.0), "{:?}", w);
            }
            Ok(())
        },
    );
    let detail = format!(
        "causal weights (w1 = 1, monotone, eps = 0 uniform): {}; balancing weights positive and finite: {}",
        causal.as_ref().map_or_else(|e| e.to_string(), |_| "512 cases".into()),
        balancing.as_ref().map_or_else(|e| e.to_string(), |_| "512 cases".into()),
    );
    verdict("13", causal.is_ok() && balancing.is_ok(), detail);
}

#[test]
fn c14_rerun_and_resume_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&config_path("smoke.toml"), &[]).unwrap();
    let run = |name: &str, max: Option<u64>| {
        let out = dir.path().join(name);
        run_experiment(&cfg, 7, &out, &RunOptions { resume: false, max_steps: max }).unwrap();
        out
    };
    let (a, b) = (run("a", None), run("b", None));
    let part = run("part", Some(37));
    piratenet::experiment::resume_experiment(&part, Some(41)).unwrap();
    piratenet::experiment::resume_experiment(&part, None).unwrap();
    let bytes = |d: &Path, f: PathBuf| fs::read(d.join(f)).unwrap();
    let ck = |d: &Path| bytes(d, PathBuf::from(CHECKPOINT_DIR).join(FINAL));
    let metrics = |d: &Path| bytes(d, PathBuf::from("metrics.csv"));
    let rerun = ck(&a) == ck(&b) && metrics(&a) == metrics(&b);
    let resumed = ck(&a) == ck(&part) && metrics(&a) == metrics(&part);

    // in-memory states, budgeted vs uninterrupted
    let plan = cfg.plan(3).unwrap();
    let mut whole = plan.start().unwrap();
    plan.run(&mut whole, None, None, &mut Vec::new()).unwrap();
    let mut chunked = plan.start().unwrap();
    while !plan.is_done(&chunked) {
        plan.run(&mut chunked, None, Some(13), &mut Vec::new()).unwrap();
    }
    let memory = whole == chunked;
    verdict(
        "14",
        rerun && resumed && memory,
        format!("rerun identical: {rerun}, checkpoint resume identical: {resumed}, budgeted state identical: {memory}"),
    );
}

/// Trains the first segment of a plan and returns its log.
fn first_segment_log(plan: &Plan, steps: u64) -> Vec<MetricsRecord> {
    let mut progress = plan.start().unwrap();
    let mut log = Vec::new();
    plan.run(&mut progress, None, Some(steps), &mut log).unwrap();
    log
}

fn raw_total(r: &MetricsRecord) -> f64 {
    r.terms.iter().sum()
}

fn window_substitute(id: &str, config: &str) {
    let cfg = ExperimentConfig::load(
        &config_path(config),
        &["train.steps=10000".into(), "train.batch_size=1024".into(), "train.log_every=100".into()],
    )
    .unwrap();
    let plan = cfg.plan(0).unwrap();
    let log = first_segment_log(&plan, 10_000);
    let finite = log.iter().all(|r| r.total.is_finite() && r.terms.iter().all(|t| t.is_finite()));
    let (first, last) = (raw_total(&log[0]), raw_total(log.last().unwrap()));
    verdict(
        id,
        finite && first >= 10.0 * last && log.last().unwrap().step == 10_000,
        format!("{config} first window, 1e4 steps: loss {first:.3e} -> {last:.3e}, all finite: {finite}"),
    );
}

#[test]
#[ignore = "slow: 1e4 steps of a 2D system"]
fn gs_single_window_trains() {
    window_substitute("GS", "grey_scott.toml");
}

#[test]
#[ignore = "slow: 1e4 steps of a 2D system"]
fn gl_first_window_trains() {
    window_substitute("GL", "ginzburg_landau.toml");
}

#[test]
#[ignore = "slow: two curriculum stages"]
fn cavity_two_stage_curriculum() {
    let cfg = ExperimentConfig::load(
        &config_path("cavity.toml"),
        &[
            "model.layers=9".into(),
            "model.width=128".into(),
            "train.re_schedule=[100.0, 400.0]".into(),
            "train.stage_steps=[3000, 3000]".into(),
            "train.batch_size=1024".into(),
            "train.log_every=100".into(),
        ],
    )
    .unwrap();
    let plan = cfg.plan(0).unwrap();
    let mut progress = plan.start().unwrap();
    let mut log = Vec::new();
    let result = plan.run(&mut progress, None, None, &mut log);
    let div = loss_terms(&plan.problem).iter().position(|(n, _)| n == "res_div").unwrap();
    let finite = log.iter().all(|r| r.terms.iter().all(|t| t.is_finite()));
    let (d0, d1) = (log[0].terms[div], log.last().unwrap().terms[div]);
    verdict(
        "cavity",
        result.is_ok() && plan.is_done(&progress) && finite && d0 >= 10.0 * d1,
        format!("Re 100 -> 400 curriculum: divergence loss {d0:.3e} -> {d1:.3e}, all finite: {finite}"),
    );
}
