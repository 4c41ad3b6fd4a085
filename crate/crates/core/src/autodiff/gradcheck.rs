use super::params::{BoundParams, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Rng;

/// Agreement between reverse-mode and finite-difference gradients on a
/// random subset of parameter coordinates.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖g_fd − g_ad‖ / ‖g_fd‖` over the sampled coordinates.
    pub rel_err: f64,
    pub sampled: Vec<(usize, usize, f64, f64)>,
}

/// Compares `∇_θ loss` with central differences of step `eps` at `samples`
/// randomly chosen scalar parameters.
pub fn gradient_check(
    params: &ParamSet,
    loss: impl for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
    samples: usize,
    eps: f64,
    rng: &mut Rng,
) -> Result<GradCheck> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let l = loss(&tape, &bound)?;
    let grads = bound.gradients(&tape.backward(l)?);
    let eval = |p: &ParamSet| -> Result<f64> {
        let t = Tape::new();
        let b = p.bind_constant(&t);
        let v = loss(&t, &b)?.value().item();
        Ok(v)
    };
    let total = params.num_scalars();
    let mut sampled = Vec::with_capacity(samples);
    let (mut num, mut den) = (0.0, 0.0);
    let mut probe = params.clone();
    for _ in 0..samples.min(total) {
        let mut k = (rng.uniform() * total as f64) as usize % total;
        let mut idx = 0;
        while k >= params.get(idx).len() {
            k -= params.get(idx).len();
            idx += 1;
        }
        let x0 = params.get(idx).data()[k];
        probe.tensors_mut()[idx].data_mut()[k] = x0 + eps;
        let fp = eval(&probe)?;
        probe.tensors_mut()[idx].data_mut()[k] = x0 - eps;
        let fm = eval(&probe)?;
        probe.tensors_mut()[idx].data_mut()[k] = x0;
        let fd = (fp - fm) / (2.0 * eps);
        let ad = grads[idx].data()[k];
        num += (fd - ad) * (fd - ad);
        den += fd * fd;
        sampled.push((idx, k, ad, fd));
    }
    let rel_err = if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    };
    Ok(GradCheck { rel_err, sampled })
}
