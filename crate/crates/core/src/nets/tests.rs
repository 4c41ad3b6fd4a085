use super::*;
use crate::autodiff::{gradient_check, Direction};

fn cfg(arch: Architecture, layers: usize, width: usize) -> NetConfig {
    NetConfig {
        arch,
        input_dim: 2,
        output_dim: 1,
        layers,
        width,
        activation: Activation::Tanh,
        embedding: EmbeddingConfig::fourier(
            1.0,
            vec![PeriodicDim {
                coord: 1,
                period: 2.0,
                harmonics: 2,
            }],
        ),
        rwf: Some(RwfConfig { mean: 1.0, std: 0.1 }),
        alpha_init: 0.0,
        gating: true,
    }
}

fn coords(n: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(n, 2, |_, _| rng.uniform_in(-1.0, 1.0))
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape()
        && a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

#[test]
fn fresh_piratenet_is_linear_in_embedding() {
    for blocks in [1, 3, 6] {
        let net = Network::new(cfg(Architecture::Piratenet, 3 * blocks, 16), &Rng::new(blocks as u64)).unwrap();
        let x = coords(7, 1);
        let phi = net.embedding().embed(&x).unwrap();
        let w = net.head().materialize(net.params());
        let want = phi.matmul(&w.transpose()).unwrap();
        let got = net.predict(&x).unwrap();
        assert!(close(&got, &want, 1e-12), "blocks={blocks}");
    }
}

#[test]
fn alpha_zero_blocks_pass_jets_through_bit_exactly() {
    let net = Network::new(cfg(Architecture::Piratenet, 6, 16), &Rng::new(2)).unwrap();
    let x = coords(5, 2);
    let layout = Rc::new(
        JetLayout::new(
            5,
            vec![Direction { coord: 0, order: 3 }, Direction { coord: 1, order: 2 }],
        )
        .unwrap(),
    );
    let tape = Tape::new();
    let p = net.params().bind(&tape);
    let phi = net.embedding().embed_jet(&tape, &x, layout).unwrap();
    let h = net.features(&p, phi.clone()).unwrap();
    assert_eq!(*h.var().value(), *phi.var().value());
}

#[test]
fn alpha_one_and_half_blocks() {
    for alpha in [1.0, 0.5] {
        let mut c = cfg(Architecture::Piratenet, 3, 16);
        c.alpha_init = alpha;
        let net = Network::new(c, &Rng::new(3)).unwrap();
        let x = coords(4, 3);
        let got = net.hidden_features(&x).unwrap();
        // independent re-evaluation with plain tensors
        let phi = net.embedding().embed(&x).unwrap();
        let Body::Piratenet { u, v, blocks } = &net.body else { unreachable!() };
        let dense = |d: &Dense, z: &Tensor| {
            let w = d.materialize(net.params());
            let b = d.bias(net.params()).unwrap();
            let mut y = z.matmul(&w.transpose()).unwrap();
            for i in 0..y.rows() {
                for j in 0..y.cols() {
                    y.set(i, j, (y.get(i, j) + b.data()[j]).tanh());
                }
            }
            y
        };
        let uu = dense(u, &phi);
        let vv = dense(v, &phi);
        let gate = |f: &Tensor| {
            Tensor::from_fn(f.rows(), f.cols(), |i, j| {
                f.get(i, j) * uu.get(i, j) + (1.0 - f.get(i, j)) * vv.get(i, j)
            })
        };
        let b = &blocks[0];
        let z1 = gate(&dense(&b.layers[0], &phi));
        let z2 = gate(&dense(&b.layers[1], &z1));
        let h = dense(&b.layers[2], &z2);
        let want = h.zip_map(&phi, |h, x| alpha * h + (1.0 - alpha) * x).unwrap();
        assert!(close(&got, &want, 1e-13), "alpha={alpha}");
        if alpha == 1.0 {
            assert!(close(&got, &h, 1e-13));
        }
    }
}

#[test]
fn hand_computed_two_unit_block() {
    let c = NetConfig {
        arch: Architecture::Piratenet,
        input_dim: 2,
        output_dim: 1,
        layers: 3,
        width: 2,
        activation: Activation::Tanh,
        embedding: EmbeddingConfig::identity(),
        rwf: None,
        alpha_init: 1.0,
        gating: true,
    };
    let mut net = Network::new(c, &Rng::new(0)).unwrap();
    let p = net.params_mut();
    let set = |p: &mut ParamSet, n: &str, t: Tensor| {
        let i = p.index_of(n).unwrap();
        p.set(i, t).unwrap();
    };
    let eye = Tensor::eye(2);
    let half = Tensor::from_rows(&[&[0.5, 0.0], &[0.0, 0.5]]);
    set(p, "enc_u.w", eye.clone());
    set(p, "enc_v.w", eye.scale(-1.0));
    for k in 0..3 {
        set(p, &format!("block0.{k}.w"), half.clone());
    }
    set(p, "head.w", Tensor::from_rows(&[&[1.0, 2.0]]));
    let x = Tensor::from_rows(&[&[0.2, -0.4]]);
    let got = net.predict(&x).unwrap().item();
    // manual arithmetic, one coordinate at a time
    let manual = |xi: f64| {
        let (u, v) = (xi.tanh(), (-xi).tanh());
        let f = (0.5 * xi).tanh();
        let z1 = f * u + (1.0 - f) * v;
        let g = (0.5 * z1).tanh();
        let z2 = g * u + (1.0 - g) * v;
        (0.5 * z2).tanh()
    };
    let want = manual(0.2) + 2.0 * manual(-0.4);
    assert!((got - want).abs() < 1e-15, "{got} vs {want}");
}

#[test]
fn zero_head_gives_zero_output() {
    let mut net = Network::new(cfg(Architecture::Piratenet, 6, 16), &Rng::new(4)).unwrap();
    let head = net.head().clone();
    head.assign(net.params_mut(), Tensor::zeros(&[1, 16]), None).unwrap();
    assert!(net.predict(&coords(5, 4)).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn depth_one_mlp_is_affine_then_activation() {
    let mut c = cfg(Architecture::Mlp, 1, 8);
    c.rwf = None;
    let net = Network::new(c, &Rng::new(5)).unwrap();
    let x = coords(3, 5);
    let phi = net.embedding().embed(&x).unwrap();
    let Body::Mlp { hidden } = &net.body else { unreachable!() };
    let w = hidden[0].materialize(net.params());
    let h = phi.matmul(&w.transpose()).unwrap().map(f64::tanh);
    let wo = net.head().materialize(net.params());
    let want = h.matmul(&wo.transpose()).unwrap();
    assert!(close(&net.predict(&x).unwrap(), &want, 1e-14));
}

#[test]
fn resnet_with_zero_branches_is_identity_path() {
    let mut net = Network::new(cfg(Architecture::Resnet, 4, 16), &Rng::new(6)).unwrap();
    let Body::Resnet { units, lead } = net.body.clone() else { unreachable!() };
    assert!(lead.is_none());
    for [_, d2] in &units {
        d2.assign(net.params_mut(), Tensor::zeros(&[16, 16]), Some(Tensor::zeros(&[16])))
            .unwrap();
    }
    let x = coords(4, 6);
    let phi = net.embedding().embed(&x).unwrap();
    assert!(close(&net.hidden_features(&x).unwrap(), &phi, 0.0));
}

#[test]
fn modified_mlp_with_equal_encoders_returns_u() {
    let mut c = cfg(Architecture::ModifiedMlp, 2, 16);
    c.rwf = None;
    let mut net = Network::new(c, &Rng::new(7)).unwrap();
    let wu = net.params().by_name("enc_u.w").unwrap().clone();
    let iv = net.params().index_of("enc_v.w").unwrap();
    net.params_mut().set(iv, wu.clone()).unwrap();
    let x = coords(4, 7);
    let u = net.embedding().embed(&x).unwrap().matmul(&wu.transpose()).unwrap().map(f64::tanh);
    assert!(close(&net.hidden_features(&x).unwrap(), &u, 0.0));
}

#[test]
fn gating_off_uses_plain_activations() {
    let mut c = cfg(Architecture::Piratenet, 3, 16);
    c.alpha_init = 1.0;
    let gated = Network::new(c.clone(), &Rng::new(8)).unwrap();
    c.gating = false;
    let plain = Network::new(c, &Rng::new(8)).unwrap();
    assert_eq!(gated.params(), plain.params());
    let x = coords(3, 8);
    assert_ne!(gated.predict(&x).unwrap(), plain.predict(&x).unwrap());
}

#[test]
fn piratenet_parameter_count_comparable_to_modified_mlp() {
    for blocks in [1, 3, 6] {
        let pn = Network::new(cfg(Architecture::Piratenet, 3 * blocks, 32), &Rng::new(1)).unwrap();
        let mm = Network::new(cfg(Architecture::ModifiedMlp, 3 * blocks, 32), &Rng::new(1)).unwrap();
        let (a, b) = (pn.num_params() as f64, mm.num_params() as f64);
        assert!((a - b).abs() / b < 0.15, "{a} vs {b}");
    }
}

#[test]
fn output_is_linear_in_features_at_init() {
    let net = Network::new(cfg(Architecture::Piratenet, 6, 16), &Rng::new(9)).unwrap();
    let x = coords(2, 9);
    let phi = net.embedding().embed(&x).unwrap();
    let (p1, p2) = (phi.slice_rows(0, 1), phi.slice_rows(1, 1));
    let mix = p1.scale(0.7).add(&p2.scale(-1.9)).unwrap();
    let through = |f: &Tensor| {
        let tape = Tape::new();
        let p = net.params().bind_constant(&tape);
        let jet = Jet::constant(&tape, f.clone(), Rc::new(JetLayout::values(1))).unwrap();
        let h = net.features(&p, jet).unwrap();
        let v = net.head().apply(&p, &h).unwrap().var().value().item();
        v
    };
    let lhs = through(&mix);
    let rhs = 0.7 * through(&p1) - 1.9 * through(&p2);
    assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
}

#[test]
fn gradients_match_finite_differences_for_every_architecture() {
    let mut rng = Rng::new(10);
    for arch in [
        Architecture::Mlp,
        Architecture::Resnet,
        Architecture::ModifiedMlp,
        Architecture::Piratenet,
    ] {
        for act in [Activation::Tanh, Activation::Swish, Activation::Sin, Activation::Gelu] {
            let mut c = cfg(arch, 3, 8);
            c.activation = act;
            c.alpha_init = 0.3;
            let net = Network::new(c, &rng.split(arch as u64 * 10 + act as u64)).unwrap();
            let x = coords(6, 11);
            let layout = Rc::new(JetLayout::new(6, vec![Direction { coord: 0, order: 3 }]).unwrap());
            let chk = gradient_check(
                net.params(),
                |tape, p| {
                    let out = net.forward(tape, p, &x, layout.clone())?;
                    let u = out.derivative(0, 0, 0)?;
                    let u3 = out.derivative(0, 0, 3)?;
                    Ok((u * u + u3 * 0.1).mean_squares())
                },
                20,
                1e-6,
                &mut rng,
            )
            .unwrap();
            assert!(chk.rel_err < 1e-5, "{arch} {act}: {}", chk.rel_err);
        }
    }
}

#[test]
fn physics_informed_init_fits_targets_in_feature_span() {
    let mut net = Network::new(cfg(Architecture::Piratenet, 3, 16), &Rng::new(12)).unwrap();
    let x = coords(40, 12);
    let phi = net.embedding().embed(&x).unwrap();
    let c = Rng::new(13).normal_tensor(16, 1, 0.0, 1.0);
    let y = phi.matmul(&c).unwrap();
    net.physics_informed_init(&x, &y).unwrap();
    assert!(close(&net.predict(&x).unwrap(), &y, 1e-8));

    net.physics_informed_init(&x, &Tensor::zeros(&[40, 1])).unwrap();
    let w = net.head().materialize(net.params());
    assert!(w.max_abs() < 1e-300);
}

#[test]
fn physics_informed_init_matches_normal_equations() {
    let mut net = Network::new(cfg(Architecture::Mlp, 2, 12), &Rng::new(14)).unwrap();
    let x = coords(60, 14);
    let y = Tensor::from_fn(60, 1, |i, _| {
        let xi = x.get(i, 1);
        xi * xi * (std::f64::consts::PI * xi).cos()
    });
    let a = net.head_design(&x).unwrap();
    let na = nalgebra::DMatrix::from_row_slice(a.rows(), a.cols(), a.data());
    let ny = nalgebra::DMatrix::from_row_slice(60, 1, y.data());
    let sol = (na.transpose() * &na).try_inverse().unwrap() * na.transpose() * &ny;
    let oracle_res = (&na * sol - &ny).norm();
    net.physics_informed_init(&x, &y).unwrap();
    let res = net.predict(&x).unwrap().sub(&y).unwrap().norm();
    assert!((res - oracle_res).abs() < 1e-8, "{res} vs {oracle_res}");
}

#[test]
fn rejects_bad_configs() {
    assert!(Network::new(cfg(Architecture::Piratenet, 4, 16), &Rng::new(0)).is_err());
    assert!(Network::new(cfg(Architecture::Piratenet, 3, 15), &Rng::new(0)).is_err());
    let mut bad = cfg(Architecture::Mlp, 2, 16);
    bad.embedding.fourier_scale = -1.0;
    assert!(Network::new(bad, &Rng::new(0)).is_err());
}
