use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Jet, ParamSet, Var};
use crate::error::{Error, Result};
use crate::tensor::{glorot_sample, Rng, Tensor};

/// Random weight factorization settings: `s ~ N(mean, std²)` per output row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwfConfig {
    pub mean: f64,
    pub std: f64,
}

/// `W = diag(exp(s)) · V`.
#[derive(Clone, Debug, PartialEq)]
pub struct RwfFactor {
    pub s: Tensor,
    pub v: Tensor,
}

impl RwfFactor {
    pub fn materialize(&self) -> Tensor {
        scale_rows(&self.v, &self.s.map(f64::exp))
    }
}

fn scale_rows(m: &Tensor, s: &Tensor) -> Tensor {
    let c = m.cols();
    Tensor::from_fn(m.rows(), c, |i, j| s.data()[i] * m.get(i, j))
}

/// Factorizes `w` with freshly drawn row scales so that the product
/// reproduces `w` at construction.
pub fn rwf_wrap(rng: &mut Rng, w: &Tensor, cfg: RwfConfig) -> Result<RwfFactor> {
    if !(cfg.std >= 0.0) {
        return Err(Error::InvalidArgument("rwf std must be non-negative".into()));
    }
    let s = Tensor::new(
        &[w.rows()],
        (0..w.rows()).map(|_| cfg.mean + cfg.std * rng.normal()).collect(),
    )?;
    Ok(rewrap(w, s))
}

fn rewrap(w: &Tensor, s: Tensor) -> RwfFactor {
    let v = scale_rows(w, &s.map(|x| (-x).exp()));
    RwfFactor { s, v }
}

/// Dense layer `y = x Wᵀ (+ b)` with `W` of shape `[out, in]`, optionally
/// stored as an RWF pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    w: usize,
    b: Option<usize>,
    s: Option<usize>,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    /// Glorot-initialized weights, zero bias.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rwf: Option<RwfConfig>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w0 = glorot_sample(rng, fan_in, fan_out);
        Self::from_weight(params, name, w0, bias, rwf, rng)
    }

    pub fn from_weight(
        params: &mut ParamSet,
        name: &str,
        w0: Tensor,
        bias: bool,
        rwf: Option<RwfConfig>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (fan_out, fan_in) = (w0.rows(), w0.cols());
        let (w, s) = match rwf {
            Some(cfg) => {
                let f = rwf_wrap(rng, &w0, cfg)?;
                let s = params.insert(format!("{name}.s"), f.s)?;
                (params.insert(format!("{name}.v"), f.v)?, Some(s))
            }
            None => (params.insert(format!("{name}.w"), w0)?, None),
        };
        let b = if bias {
            Some(params.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            s,
            fan_in,
            fan_out,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn has_bias(&self) -> bool {
        self.b.is_some()
    }

    pub fn is_factorized(&self) -> bool {
        self.s.is_some()
    }

    /// Effective weight on the tape.
    pub fn weight<'t>(&self, p: &BoundParams<'t>) -> Result<Var<'t>> {
        match self.s {
            Some(s) => p.var(self.w).scale_rows(p.var(s).exp()),
            None => Ok(p.var(self.w)),
        }
    }

    pub fn apply<'t>(&self, p: &BoundParams<'t>, x: &Jet<'t>) -> Result<Jet<'t>> {
        x.linear(self.weight(p)?, self.b.map(|b| p.var(b)))
    }

    /// Effective weight `[out, in]`.
    pub fn materialize(&self, params: &ParamSet) -> Tensor {
        match self.s {
            Some(s) => RwfFactor {
                s: params.get(s).clone(),
                v: params.get(self.w).clone(),
            }
            .materialize(),
            None => params.get(self.w).clone(),
        }
    }

    pub fn bias(&self, params: &ParamSet) -> Option<Tensor> {
        self.b.map(|b| params.get(b).clone())
    }

    /// Sets the effective weight (and bias); a factorized layer keeps its
    /// scales and re-derives the direction matrix.
    pub fn assign(&self, params: &mut ParamSet, w: Tensor, b: Option<Tensor>) -> Result<()> {
        match self.s {
            Some(s) => {
                let f = rewrap(&w, params.get(s).clone());
                params.set(self.w, f.v)?;
            }
            None => params.set(self.w, w)?,
        }
        match (self.b, b) {
            (Some(idx), Some(b)) => params.set(idx, b.reshape(&[self.fan_out])?),
            (None, None) => Ok(()),
            _ => Err(Error::InvalidArgument("bias presence mismatch".into())),
        }
    }
}
