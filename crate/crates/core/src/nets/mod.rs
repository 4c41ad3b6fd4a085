//! Network backbones: PirateNet, Modified MLP, MLP and ResNet, all fed by a
//! frozen coordinate embedding and evaluated on jets.

mod dense;
mod embedding;

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dense::{rwf_wrap, Dense, RwfConfig, RwfFactor};
pub use embedding::{Embedding, EmbeddingConfig, EmbeddingKind, PeriodicDim};

use crate::autodiff::{Activation, BoundParams, Jet, JetLayout, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::tensor::{lstsq_min_norm, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    Resnet,
    ModifiedMlp,
    Piratenet,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Mlp => "mlp",
            Architecture::Resnet => "resnet",
            Architecture::ModifiedMlp => "modified_mlp",
            Architecture::Piratenet => "piratenet",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "resnet" => Ok(Architecture::Resnet),
            "modified_mlp" => Ok(Architecture::ModifiedMlp),
            "piratenet" => Ok(Architecture::Piratenet),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub arch: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden-layer count. A PirateNet with `L` blocks has `3L` layers.
    pub layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub rwf: Option<RwfConfig>,
    /// Initial value of every PirateNet block's `α`.
    #[serde(default)]
    pub alpha_init: f64,
    /// Gated mixing with the `U`, `V` encoders (PirateNet, Modified MLP).
    #[serde(default = "default_true")]
    pub gating: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    layers: [Dense; 3],
    alpha: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Mlp {
        hidden: Vec<Dense>,
    },
    Resnet {
        lead: Option<Dense>,
        units: Vec<[Dense; 2]>,
    },
    ModifiedMlp {
        u: Dense,
        v: Dense,
        hidden: Vec<Dense>,
    },
    Piratenet {
        u: Dense,
        v: Dense,
        blocks: Vec<Block>,
    },
}

/// A network together with its trainable parameters and frozen embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetConfig,
    embedding: Embedding,
    params: ParamSet,
    body: Body,
    head: Dense,
}

impl Network {
    pub fn new(config: NetConfig, rng: &Rng) -> Result<Self> {
        let c = &config;
        if c.width == 0 || c.input_dim == 0 || c.output_dim == 0 {
            return Err(Error::Config("width, input_dim and output_dim must be positive".into()));
        }
        let mut emb_rng = rng.split(1);
        let mut w_rng = rng.split(2);
        let mut rwf_rng = rng.split(3);
        let embedding = Embedding::new(&c.embedding, c.input_dim, c.width, &mut emb_rng)?;
        let feat = embedding.output_dim();
        let mut params = ParamSet::new();
        let (act_w, rwf) = (c.width, c.rwf);
        let mut dense = |p: &mut ParamSet, name: &str, fi: usize, fo: usize, bias: bool| {
            let w = crate::tensor::glorot_sample(&mut w_rng, fi, fo);
            Dense::from_weight(p, name, w, bias, rwf, &mut rwf_rng)
        };
        let needs_square = matches!(c.arch, Architecture::Piratenet | Architecture::Resnet);
        if needs_square && feat != act_w {
            return Err(Error::Config(format!(
                "{} needs embedding dimension {feat} to equal width {act_w}",
                c.arch
            )));
        }
        let body = match c.arch {
            Architecture::Mlp => {
                let mut hidden = Vec::new();
                let mut fi = feat;
                for l in 0..c.layers {
                    hidden.push(dense(&mut params, &format!("hidden{l}"), fi, act_w, true)?);
                    fi = act_w;
                }
                Body::Mlp { hidden }
            }
            Architecture::Resnet => {
                let lead = if c.layers % 2 == 1 {
                    Some(dense(&mut params, "lead", feat, act_w, true)?)
                } else {
                    None
                };
                let mut units = Vec::new();
                for k in 0..c.layers / 2 {
                    units.push([
                        dense(&mut params, &format!("unit{k}.0"), act_w, act_w, true)?,
                        dense(&mut params, &format!("unit{k}.1"), act_w, act_w, true)?,
                    ]);
                }
                Body::Resnet { lead, units }
            }
            Architecture::ModifiedMlp => {
                let u = dense(&mut params, "enc_u", feat, act_w, true)?;
                let v = dense(&mut params, "enc_v", feat, act_w, true)?;
                let mut hidden = Vec::new();
                let mut fi = feat;
                for l in 0..c.layers {
                    hidden.push(dense(&mut params, &format!("hidden{l}"), fi, act_w, true)?);
                    fi = act_w;
                }
                Body::ModifiedMlp { u, v, hidden }
            }
            Architecture::Piratenet => {
                if c.layers == 0 || !c.layers.is_multiple_of(3) {
                    return Err(Error::Config(format!(
                        "a PirateNet needs a positive multiple of 3 layers, got {}",
                        c.layers
                    )));
                }
                if !c.alpha_init.is_finite() {
                    return Err(Error::Config("alpha_init must be finite".into()));
                }
                let u = dense(&mut params, "enc_u", feat, act_w, true)?;
                let v = dense(&mut params, "enc_v", feat, act_w, true)?;
                let mut blocks = Vec::new();
                for k in 0..c.layers / 3 {
                    let layers = [
                        dense(&mut params, &format!("block{k}.0"), act_w, act_w, true)?,
                        dense(&mut params, &format!("block{k}.1"), act_w, act_w, true)?,
                        dense(&mut params, &format!("block{k}.2"), act_w, act_w, true)?,
                    ];
                    let alpha = params.insert(format!("block{k}.alpha"), Tensor::scalar(c.alpha_init))?;
                    blocks.push(Block { layers, alpha });
                }
                Body::Piratenet { u, v, blocks }
            }
        };
        let last = match (&body, c.layers) {
            (Body::Mlp { .. } | Body::ModifiedMlp { .. }, 0) => feat,
            _ => act_w,
        };
        let head_bias = c.arch != Architecture::Piratenet;
        let head = dense(&mut params, "head", last, c.output_dim, head_bias)?;
        Ok(Self {
            config,
            embedding,
            params,
            body,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if params.names() != self.params.names() || params.shapes() != self.params.shapes() {
            return Err(Error::InvalidArgument(
                "parameter layout does not match the architecture".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn embedding_mut(&mut self) -> &mut Embedding {
        &mut self.embedding
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn num_blocks(&self) -> usize {
        match &self.body {
            Body::Piratenet { blocks, .. } => blocks.len(),
            _ => 0,
        }
    }

    /// Current `α` of every PirateNet block (empty for other backbones).
    pub fn alphas(&self) -> Vec<f64> {
        match &self.body {
            Body::Piratenet { blocks, .. } => {
                blocks.iter().map(|b| self.params.get(b.alpha).item()).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Sets every block's `α`.
    pub fn set_alphas(&mut self, value: f64) -> Result<()> {
        if let Body::Piratenet { blocks, .. } = &self.body {
            for b in blocks.clone() {
                self.params.set(b.alpha, Tensor::scalar(value))?;
            }
        }
        Ok(())
    }

    /// Last hidden representation (the input to the final linear layer).
    pub fn features<'t>(&self, p: &BoundParams<'t>, phi: Jet<'t>) -> Result<Jet<'t>> {
        let act = self.config.activation;
        let layer = |d: &Dense, x: &Jet<'t>| -> Result<Jet<'t>> { Ok(d.apply(p, x)?.activation(act)) };
        match &self.body {
            Body::Mlp { hidden } => {
                let mut x = phi;
                for d in hidden {
                    x = layer(d, &x)?;
                }
                Ok(x)
            }
            Body::Resnet { lead, units } => {
                let mut x = phi;
                if let Some(d) = lead {
                    x = layer(d, &x)?;
                }
                for [d1, d2] in units {
                    let r = d2.apply(p, &layer(d1, &x.activation(act))?)?;
                    x = x.add(&r)?;
                }
                Ok(x)
            }
            Body::ModifiedMlp { u, v, hidden } => {
                let uu = layer(u, &phi)?;
                let vv = layer(v, &phi)?;
                let mut x = phi;
                for d in hidden {
                    let f = layer(d, &x)?;
                    x = if self.config.gating { f.gate(&uu, &vv)? } else { f };
                }
                Ok(x)
            }
            Body::Piratenet { u, v, blocks } => {
                let uu = layer(u, &phi)?;
                let vv = layer(v, &phi)?;
                let mut x = phi;
                for b in blocks {
                    x = self.pirate_block(p, b, &x, &uu, &vv)?;
                }
                Ok(x)
            }
        }
    }

    fn pirate_block<'t>(
        &self,
        p: &BoundParams<'t>,
        b: &Block,
        x: &Jet<'t>,
        u: &Jet<'t>,
        v: &Jet<'t>,
    ) -> Result<Jet<'t>> {
        let act = self.config.activation;
        let mix = |f: Jet<'t>| -> Result<Jet<'t>> {
            if self.config.gating {
                f.gate(u, v)
            } else {
                Ok(f)
            }
        };
        let f = b.layers[0].apply(p, x)?.activation(act);
        let z1 = mix(f)?;
        let g = b.layers[1].apply(p, &z1)?.activation(act);
        let z2 = mix(g)?;
        let h = b.layers[2].apply(p, &z2)?.activation(act);
        h.alpha_mix(x, p.var(b.alpha))
    }

    /// Output jet for raw coordinates `[batch, input_dim]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &BoundParams<'t>,
        coords: &Tensor,
        layout: Rc<JetLayout>,
    ) -> Result<Jet<'t>> {
        let phi = self.embedding.embed_jet(tape, coords, layout)?;
        let h = self.features(p, phi)?;
        self.head.apply(p, &h)
    }

    /// Plain evaluation `[batch, output_dim]` with no gradient bookkeeping.
    pub fn predict(&self, coords: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_constant(&tape);
        let out = self.forward(&tape, &p, coords, Rc::new(JetLayout::values(coords.rows())))?;
        let v = out.var().value().clone();
        Ok(v)
    }

    /// Last hidden features `[batch, width]` (plus nothing else).
    pub fn hidden_features(&self, coords: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_constant(&tape);
        let phi = self
            .embedding
            .embed_jet(&tape, coords, Rc::new(JetLayout::values(coords.rows())))?;
        let h = self.features(&p, phi)?;
        let v = h.var().value().clone();
        Ok(v)
    }

    /// Least-squares design matrix for the final layer: hidden features,
    /// plus a ones column when the final layer has a bias.
    pub fn head_design(&self, coords: &Tensor) -> Result<Tensor> {
        let h = self.hidden_features(coords)?;
        if self.head.has_bias() {
            Tensor::hstack(&[&h, &Tensor::ones(&[h.rows(), 1])])
        } else {
            Ok(h)
        }
    }

    /// Replaces the final layer by the minimum-norm least-squares fit of
    /// `targets` `[n, output_dim]` at `coords` `[n, input_dim]`.
    pub fn physics_informed_init(&mut self, coords: &Tensor, targets: &Tensor) -> Result<()> {
        if targets.cols() != self.config.output_dim || targets.rows() != coords.rows() {
            return Err(Error::shape(
                "physics_informed_init",
                targets.shape(),
                &[coords.rows(), self.config.output_dim],
            ));
        }
        let a = self.head_design(coords)?;
        let sol = lstsq_min_norm(&a, targets)?; // [feat(+1), out]
        let feat = self.head.fan_in();
        let w = sol.slice_rows(0, feat).transpose();
        let b = self
            .head
            .has_bias()
            .then(|| sol.slice_rows(feat, 1).reshape(&[self.config.output_dim]))
            .transpose()?;
        let head = self.head.clone();
        head.assign(&mut self.params, w, b)
    }

    /// Trainable scalar count.
    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }
}

#[cfg(test)]
mod tests;
