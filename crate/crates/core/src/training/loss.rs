use std::rc::Rc;

use super::weights::causal_weights;
use crate::autodiff::{BoundParams, JetLayout, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::nets::Network;
use crate::pdes::{data_residual, Problem};
use crate::tensor::Tensor;

/// Collocation points of one training step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    /// Interior points; with causal chunking, rows are grouped by time bin.
    pub interior: Option<Tensor>,
    /// Initial-condition points and targets.
    pub ic: Option<(Tensor, Tensor)>,
    /// Sampled wall points and `(u, v)` targets.
    pub bc: Option<(Tensor, Tensor)>,
    /// Pressure reference point(s), target `p = 0`.
    pub gauge: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    Ic(usize),
    Bc(usize),
    Interior(usize),
    Gauge,
}

/// Loss terms of a problem in a fixed order: initial condition per output,
/// boundary per velocity component, interior residuals, pressure gauge.
pub fn loss_terms(problem: &Problem) -> Vec<(String, TermKind)> {
    let spec = problem.spec();
    let mut out = Vec::new();
    if spec.time_dependent {
        for (i, o) in spec.outputs.iter().enumerate() {
            out.push((format!("ic_{o}"), TermKind::Ic(i)));
        }
    }
    if matches!(problem, Problem::Cavity(_)) {
        out.push(("bc_u".into(), TermKind::Bc(0)));
        out.push(("bc_v".into(), TermKind::Bc(1)));
    }
    for (i, t) in spec.interior_terms.iter().enumerate() {
        let name = match t.strip_prefix("r_") {
            Some(s) => format!("res_{s}"),
            None => "res".to_string(),
        };
        out.push((name, TermKind::Interior(i)));
    }
    if matches!(problem, Problem::Cavity(_)) {
        out.push(("gauge".into(), TermKind::Gauge));
    }
    out
}

/// Residual vectors `[n, 1]` of every term present in the batch, tagged with
/// the term index from [`loss_terms`].
pub fn residual_vectors<'t>(
    tape: &'t Tape,
    net: &Network,
    p: &BoundParams<'t>,
    problem: &Problem,
    batch: &Batch,
) -> Result<Vec<(usize, Var<'t>)>> {
    let terms = loss_terms(problem);
    let index = |k: TermKind| terms.iter().position(|(_, t)| *t == k).expect("term exists");
    let mut out = Vec::new();
    if let Some((x, g)) = &batch.ic {
        let jet = net.forward(tape, p, x, Rc::new(JetLayout::values(x.rows())))?;
        for (c, r) in data_residual(&jet, g)?.into_iter().enumerate() {
            out.push((index(TermKind::Ic(c)), r));
        }
    }
    if let Some((x, g)) = &batch.bc {
        let jet = net.forward(tape, p, x, Rc::new(JetLayout::values(x.rows())))?;
        for (c, r) in data_residual(&jet, g)?.into_iter().enumerate() {
            out.push((index(TermKind::Bc(c)), r));
        }
    }
    if let Some(x) = &batch.interior {
        let jet = net.forward(tape, p, x, Rc::new(problem.layout(x.rows())?))?;
        for (i, r) in problem.interior(&jet)?.into_iter().enumerate() {
            out.push((index(TermKind::Interior(i)), r));
        }
    }
    if let Some(x) = &batch.gauge {
        let jet = net.forward(tape, p, x, Rc::new(JetLayout::values(x.rows())))?;
        out.push((index(TermKind::Gauge), jet.derivative(2, 0, 0)?));
    }
    Ok(out)
}

/// Per-term losses of one step.
pub struct Terms<'t> {
    /// One scalar per entry of [`loss_terms`]; `None` if absent from the batch.
    pub values: Vec<Option<Var<'t>>>,
    /// Causal chunk weights applied to the interior terms (all ones when off).
    pub causal: Vec<f64>,
}

/// Mean squared residual per term. Interior terms are averaged over `chunks`
/// equal row groups with causal weights `exp(−ε Σ_{j<i} L_j)`, where the
/// weight of a chunk is the smallest over interior terms.
pub fn term_losses<'t>(
    residuals: &[(usize, Var<'t>)],
    kinds: &[TermKind],
    chunks: usize,
    causal_tol: f64,
) -> Result<Terms<'t>> {
    if residuals.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut values = vec![None; kinds.len()];
    let interior: Vec<&(usize, Var<'t>)> = residuals
        .iter()
        .filter(|(k, _)| matches!(kinds[*k], TermKind::Interior(_)))
        .collect();
    for (k, r) in residuals {
        if !matches!(kinds[*k], TermKind::Interior(_)) {
            values[*k] = Some(r.mean_squares());
        }
    }
    let mut causal = vec![1.0; chunks.max(1)];
    if causal_tol == 0.0 || chunks <= 1 {
        for (k, r) in &interior {
            values[*k] = Some(r.mean_squares());
        }
        return Ok(Terms { values, causal });
    }
    let mut per_term: Vec<Vec<Var<'t>>> = Vec::new();
    for (_, r) in &interior {
        let n = r.value().rows();
        if !n.is_multiple_of(chunks) {
            return Err(Error::InvalidArgument(format!("{n} interior rows do not split into {chunks} chunks")));
        }
        let m = n / chunks;
        let parts = (0..chunks)
            .map(|c| Ok(r.block(c * m, m, 0, 1)?.mean_squares()))
            .collect::<Result<Vec<_>>>()?;
        let losses: Vec<f64> = parts.iter().map(|v| v.value().item()).collect();
        let w = causal_weights(&losses, causal_tol).map_err(|_| Error::NonFinite("causal chunk loss"))?;
        for (c, wc) in causal.iter_mut().zip(w) {
            *c = c.min(wc);
        }
        per_term.push(parts);
    }
    for ((k, _), parts) in interior.iter().zip(per_term) {
        let mut acc = parts[0].scale(causal[0]);
        for (part, &w) in parts.iter().zip(&causal).skip(1) {
            acc = acc + part.scale(w);
        }
        values[*k] = Some(acc.scale(1.0 / chunks as f64));
    }
    Ok(Terms { values, causal })
}

/// `Σ λ_k L_k` over the terms present.
pub fn weighted_total<'t>(terms: &Terms<'t>, lambdas: &[f64]) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for (v, &l) in terms.values.iter().zip(lambdas) {
        if let Some(v) = v {
            let t = v.scale(l);
            total = Some(match total {
                None => t,
                Some(a) => a + t,
            });
        }
    }
    total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))
}

/// Composite loss of `net` on `batch`: returns the weighted total and the
/// per-term values.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss<'t>(
    tape: &'t Tape,
    net: &Network,
    p: &BoundParams<'t>,
    problem: &Problem,
    batch: &Batch,
    lambdas: &[f64],
    chunks: usize,
    causal_tol: f64,
) -> Result<(Var<'t>, Terms<'t>)> {
    let kinds: Vec<TermKind> = loss_terms(problem).into_iter().map(|(_, k)| k).collect();
    if lambdas.len() != kinds.len() {
        return Err(Error::InvalidArgument(format!("{} weights for {} terms", lambdas.len(), kinds.len())));
    }
    let r = residual_vectors(tape, net, p, problem, batch)?;
    let terms = term_losses(&r, &kinds, chunks, causal_tol)?;
    let total = weighted_total(&terms, lambdas)?;
    Ok((total, terms))
}

fn restrict(batch: &Batch, kind: TermKind, rows: &[usize]) -> Batch {
    let pick = |t: &Tensor| Tensor::from_fn(rows.len(), t.cols(), |i, j| t.get(rows[i], j));
    match kind {
        TermKind::Ic(_) => Batch {
            ic: batch.ic.as_ref().map(|(x, g)| (pick(x), pick(g))),
            ..Default::default()
        },
        TermKind::Bc(_) => Batch {
            bc: batch.bc.as_ref().map(|(x, g)| (pick(x), pick(g))),
            ..Default::default()
        },
        TermKind::Interior(_) => Batch {
            interior: batch.interior.as_ref().map(pick),
            ..Default::default()
        },
        TermKind::Gauge => Batch {
            gauge: batch.gauge.as_ref().map(pick),
            ..Default::default()
        },
    }
}

fn rows_of(batch: &Batch, kind: TermKind) -> usize {
    match kind {
        TermKind::Ic(_) => batch.ic.as_ref().map_or(0, |(x, _)| x.rows()),
        TermKind::Bc(_) => batch.bc.as_ref().map_or(0, |(x, _)| x.rows()),
        TermKind::Interior(_) => batch.interior.as_ref().map_or(0, |x| x.rows()),
        TermKind::Gauge => batch.gauge.as_ref().map_or(0, |x| x.rows()),
    }
}

fn sq_norm(g: &[Tensor]) -> f64 {
    g.iter().map(Tensor::sum_squares).sum()
}

/// Kernel traces `trₖ = Σₙ ‖∇_θ rₖ(xₙ)‖²` over the first `points` rows of
/// each term's points, from one forward pass and one seeded reverse sweep
/// per point.
pub fn ntk_traces(net: &Network, params: &ParamSet, problem: &Problem, batch: &Batch, points: usize) -> Result<Vec<f64>> {
    let kinds: Vec<TermKind> = loss_terms(problem).into_iter().map(|(_, k)| k).collect();
    let mut traces = vec![0.0; kinds.len()];
    let mut sub = Batch::default();
    for &k in &kinds {
        let rows: Vec<usize> = (0..rows_of(batch, k).min(points)).collect();
        let part = restrict(batch, k, &rows);
        sub.ic = sub.ic.or(part.ic);
        sub.bc = sub.bc.or(part.bc);
        sub.interior = sub.interior.or(part.interior);
        sub.gauge = sub.gauge.or(part.gauge);
    }
    let tape = Tape::new();
    let p = params.bind(&tape);
    for (k, r) in residual_vectors(&tape, net, &p, problem, &sub)? {
        let n = r.value().rows();
        for i in 0..n {
            let mut seed = Tensor::zeros(&[n, 1]);
            seed.set(i, 0, 1.0);
            traces[k] += sq_norm(&p.gradients(&tape.backward_seeded(r, seed)?));
        }
    }
    Ok(traces)
}

/// Same traces as [`ntk_traces`], with a fresh tape and forward pass for
/// every point.
pub fn ntk_traces_per_point(net: &Network, params: &ParamSet, problem: &Problem, batch: &Batch, points: usize) -> Result<Vec<f64>> {
    let kinds: Vec<TermKind> = loss_terms(problem).into_iter().map(|(_, k)| k).collect();
    let mut traces = vec![0.0; kinds.len()];
    for (idx, &k) in kinds.iter().enumerate() {
        for i in 0..rows_of(batch, k).min(points) {
            let one = restrict(batch, k, &[i]);
            let tape = Tape::new();
            let p = params.bind(&tape);
            for (kk, r) in residual_vectors(&tape, net, &p, problem, &one)? {
                if kk == idx {
                    traces[idx] += sq_norm(&p.gradients(&tape.backward(r)?));
                }
            }
        }
    }
    Ok(traces)
}

/// `‖∇_θ L_k‖` for every present term.
pub fn term_gradient_norms(tape: &Tape, p: &BoundParams<'_>, terms: &Terms<'_>) -> Result<Vec<f64>> {
    terms
        .values
        .iter()
        .map(|v| match v {
            Some(v) => Ok(sq_norm(&p.gradients(&tape.backward(*v)?)).sqrt()),
            None => Ok(0.0),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::nets::{Architecture, EmbeddingConfig, NetConfig};
    use crate::pdes::BenchmarkId;
    use crate::tensor::Rng;

    fn net_for(problem: &Problem, seed: u64) -> Network {
        let spec = problem.spec();
        Network::new(
            NetConfig {
                arch: Architecture::Piratenet,
                input_dim: spec.inputs.len(),
                output_dim: spec.outputs.len(),
                layers: 3,
                width: 24,
                activation: Activation::Tanh,
                embedding: EmbeddingConfig::fourier(1.0, problem.periodic_dims()),
                rwf: None,
                alpha_init: 0.4,
                gating: true,
            },
            &Rng::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn term_names() {
        let names = |p: Problem| loss_terms(&p).into_iter().map(|(n, _)| n).collect::<Vec<_>>();
        assert_eq!(names(Problem::AllenCahn), ["ic_u", "res"]);
        assert_eq!(
            names(Problem::default_for(BenchmarkId::GreyScott)),
            ["ic_u", "ic_v", "res_u", "res_v"]
        );
        assert_eq!(
            names(Problem::default_for(BenchmarkId::Cavity)),
            ["bc_u", "bc_v", "res_u", "res_v", "res_div", "gauge"]
        );
    }

    #[test]
    fn zero_residuals_give_zero_loss() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[8, 1]));
        let kinds = [TermKind::Ic(0), TermKind::Interior(0)];
        let t = term_losses(&[(0, z), (1, z)], &kinds, 4, 1.0).unwrap();
        assert_eq!(weighted_total(&t, &[3.0, 7.0]).unwrap().value().item(), 0.0);
    }

    #[test]
    fn single_point_residual_two() {
        let tape = Tape::new();
        let r = tape.constant(Tensor::column(&[2.0]));
        let t = term_losses(&[(0, r)], &[TermKind::Interior(0)], 1, 1.0).unwrap();
        assert_eq!(weighted_total(&t, &[1.0]).unwrap().value().item(), 4.0);
        assert!(term_losses(&[], &[TermKind::Interior(0)], 1, 1.0).is_err());
    }

    #[test]
    fn matches_direct_recomputation() {
        let mut rng = Rng::new(5);
        let tape = Tape::new();
        let ic: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let res: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let kinds = [TermKind::Ic(0), TermKind::Interior(0)];
        let r = [(0, tape.constant(Tensor::column(&ic))), (1, tape.constant(Tensor::column(&res)))];
        let lambdas = [2.5, 0.75];

        let ms = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let t = term_losses(&r, &kinds, 1, 0.0).unwrap();
        let want = 2.5 * ms(&ic) + 0.75 * ms(&res);
        assert!((weighted_total(&t, &lambdas).unwrap().value().item() - want).abs() < 1e-15);

        // causal: 3 chunks of 4 rows
        let eps = 0.8;
        let t = term_losses(&r, &kinds, 3, eps).unwrap();
        let l: Vec<f64> = res.chunks(4).map(ms).collect();
        let w = [1.0, (-eps * l[0]).exp(), (-eps * (l[0] + l[1])).exp()];
        assert_eq!(t.causal, w);
        let want = 2.5 * ms(&ic) + 0.75 * (w[0] * l[0] + w[1] * l[1] + w[2] * l[2]) / 3.0;
        assert!((weighted_total(&t, &lambdas).unwrap().value().item() - want).abs() < 1e-14);
    }

    #[test]
    fn zero_tolerance_is_plain_mean() {
        let tape = Tape::new();
        let mut rng = Rng::new(6);
        let res = Tensor::from_fn(16, 1, |_, _| rng.normal());
        let r = [(0, tape.constant(res.clone()))];
        let t = term_losses(&r, &[TermKind::Interior(0)], 4, 0.0).unwrap();
        assert_eq!(t.causal, vec![1.0; 4]);
        assert_eq!(t.values[0].unwrap().value().item(), res.sum_squares() / 16.0);
    }

    #[test]
    fn causal_weight_is_minimum_over_terms() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::column(&[1.0, 1.0, 0.0, 0.0]));
        let b = tape.constant(Tensor::column(&[0.0, 0.0, 3.0, 3.0]));
        let kinds = [TermKind::Interior(0), TermKind::Interior(1)];
        let t = term_losses(&[(0, a), (1, b)], &kinds, 2, 1.0).unwrap();
        assert_eq!(t.causal, vec![1.0, (-1.0f64).exp()]);
    }

    #[test]
    fn ntk_traces_agree_two_ways() {
        for id in [BenchmarkId::AllenCahn, BenchmarkId::Cavity] {
            let problem = Problem::default_for(id);
            let spec = problem.spec();
            let net = net_for(&problem, 3);
            let mut rng = Rng::new(9);
            let dom = spec.domain.clone();
            let pts = |rng: &mut Rng, n| Tensor::from_fn(n, dom.len(), |_, j| rng.uniform_in(dom[j].0, dom[j].1));
            let mut batch = Batch {
                interior: Some(pts(&mut rng, 7)),
                ..Default::default()
            };
            if spec.time_dependent {
                batch.ic = Some((pts(&mut rng, 5), Tensor::from_fn(5, 1, |_, _| rng.normal())));
            } else {
                let (x, g) = problem.sample_boundary(&mut rng, 6).unwrap();
                batch.bc = Some((x, g));
                batch.gauge = Some(Tensor::zeros(&[1, 2]));
            }
            let a = ntk_traces(&net, net.params(), &problem, &batch, 4).unwrap();
            let b = ntk_traces_per_point(&net, net.params(), &problem, &batch, 4).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(*x > 0.0);
                assert!((x - y).abs() <= 1e-10 * y.abs(), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn gradient_norms_are_per_term() {
        let problem = Problem::AllenCahn;
        let net = net_for(&problem, 4);
        let mut rng = Rng::new(10);
        let x = Tensor::from_fn(8, 2, |_, j| if j == 0 { rng.uniform() } else { rng.uniform_in(-1.0, 1.0) });
        let g = Tensor::from_fn(8, 1, |_, _| rng.normal());
        let batch = Batch {
            interior: Some(x.clone()),
            ic: Some((x, g)),
            ..Default::default()
        };
        let tape = Tape::new();
        let p = net.params().bind(&tape);
        let (total, terms) = composite_loss(&tape, &net, &p, &problem, &batch, &[1.0, 1.0], 1, 0.0).unwrap();
        let norms = term_gradient_norms(&tape, &p, &terms).unwrap();
        let total_norm = sq_norm(&p.gradients(&tape.backward(total).unwrap())).sqrt();
        assert!(norms.iter().all(|n| *n > 0.0));
        assert!(total_norm <= norms[0] + norms[1] + 1e-12);
    }
}
