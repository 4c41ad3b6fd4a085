use std::f64::consts::{FRAC_PI_2, PI};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, JetLayout, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Coordinate encoded exactly periodically by integer harmonics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicDim {
    pub coord: usize,
    pub period: f64,
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
}

fn default_harmonics() -> usize {
    5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// `[cos(Bx), sin(Bx)]` plus periodic harmonics.
    Fourier,
    /// Raw coordinates.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    /// Number of random frequencies `m`; `None` picks the value that makes
    /// the feature count equal to the network width.
    #[serde(default)]
    pub fourier_dim: Option<usize>,
    #[serde(default = "default_scale")]
    pub fourier_scale: f64,
    #[serde(default)]
    pub periodic: Vec<PeriodicDim>,
}

fn default_scale() -> f64 {
    1.0
}

impl EmbeddingConfig {
    pub fn identity() -> Self {
        Self {
            kind: EmbeddingKind::Identity,
            fourier_dim: None,
            fourier_scale: 1.0,
            periodic: Vec::new(),
        }
    }

    pub fn fourier(scale: f64, periodic: Vec<PeriodicDim>) -> Self {
        Self {
            kind: EmbeddingKind::Fourier,
            fourier_dim: None,
            fourier_scale: scale,
            periodic,
        }
    }

    fn periodic_features(&self) -> usize {
        self.periodic.iter().map(|p| 2 * p.harmonics).sum()
    }

    /// Resolved number of random frequencies for a given network width.
    pub fn resolve_fourier_dim(&self, width: usize) -> Result<usize> {
        if let Some(m) = self.fourier_dim {
            return Ok(m);
        }
        let rest = width
            .checked_sub(self.periodic_features())
            .filter(|r| r % 2 == 0)
            .ok_or_else(|| {
                Error::Config(format!(
                    "width {width} cannot hold {} periodic features plus a cos/sin pair count",
                    self.periodic_features()
                ))
            })?;
        Ok(rest / 2)
    }
}

/// Frozen coordinate embedding `Φ`.
///
/// Derivatives of the features with respect to the raw coordinates are
/// known in closed form, so the embedding jet is built analytically and
/// enters the tape as a constant.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    kind: EmbeddingKind,
    input_dim: usize,
    /// Coordinates that go through the Gaussian matrix.
    fourier_coords: Vec<usize>,
    /// `[m, fourier_coords.len()]`, entries `N(0, s²)`.
    b: Tensor,
    periodic: Vec<PeriodicDim>,
}

impl Embedding {
    pub fn new(cfg: &EmbeddingConfig, input_dim: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        for p in &cfg.periodic {
            if p.coord >= input_dim || !(p.period > 0.0) || p.harmonics == 0 {
                return Err(Error::Config(format!("invalid periodic dimension {p:?}")));
            }
        }
        match cfg.kind {
            EmbeddingKind::Identity => Ok(Self {
                kind: cfg.kind,
                input_dim,
                fourier_coords: Vec::new(),
                b: Tensor::zeros(&[0, 0]),
                periodic: Vec::new(),
            }),
            EmbeddingKind::Fourier => {
                if !(cfg.fourier_scale > 0.0) {
                    return Err(Error::Config("fourier_scale must be positive".into()));
                }
                let m = cfg.resolve_fourier_dim(width)?;
                let fourier_coords: Vec<usize> = (0..input_dim)
                    .filter(|c| !cfg.periodic.iter().any(|p| p.coord == *c))
                    .collect();
                let m = if fourier_coords.is_empty() { 0 } else { m };
                if m == 0 && !fourier_coords.is_empty() {
                    return Err(Error::Config("fourier_dim must be at least 1".into()));
                }
                let b = rng.normal_tensor(m, fourier_coords.len(), 0.0, cfg.fourier_scale);
                Ok(Self {
                    kind: cfg.kind,
                    input_dim,
                    fourier_coords,
                    b,
                    periodic: cfg.periodic.clone(),
                })
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn fourier_matrix(&self) -> &Tensor {
        &self.b
    }

    /// Replaces the frozen matrix (checkpoint restore).
    pub fn set_fourier_matrix(&mut self, b: Tensor) -> Result<()> {
        if b.shape() != self.b.shape() {
            return Err(Error::shape("set_fourier_matrix", self.b.shape(), b.shape()));
        }
        self.b = b;
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            EmbeddingKind::Identity => self.input_dim,
            EmbeddingKind::Fourier => {
                let m = if self.fourier_coords.is_empty() { 0 } else { self.b.rows() };
                2 * m + self.periodic.iter().map(|p| 2 * p.harmonics).sum::<usize>()
            }
        }
    }

    /// Features `[batch, output_dim]`.
    pub fn embed(&self, coords: &Tensor) -> Result<Tensor> {
        self.embed_stacked(coords, &JetLayout::values(coords.rows()))
    }

    /// Embedding jet for `coords` under `layout`, recorded as a constant.
    pub fn embed_jet<'t>(&self, tape: &'t Tape, coords: &Tensor, layout: Rc<JetLayout>) -> Result<Jet<'t>> {
        let stacked = self.embed_stacked(coords, &layout)?;
        Jet::constant(tape, stacked, layout)
    }

    fn embed_stacked(&self, coords: &Tensor, layout: &JetLayout) -> Result<Tensor> {
        let (n, d) = (coords.rows(), coords.cols());
        if d != self.input_dim || n != layout.batch() {
            return Err(Error::shape("embed", coords.shape(), &[layout.batch(), self.input_dim]));
        }
        if !coords.is_finite() {
            return Err(Error::NonFinite("embed"));
        }
        let f = self.output_dim();
        let mut out = Tensor::zeros(&[layout.rows(), f]);
        let data = out.data_mut();
        let at = |ch: usize, i: usize, j: usize| (ch * n + i) * f + j;
        // sinusoidal features (column, weights w, is_sin) of θ = w·x; the k-th
        // derivative along x_c is w_c^k times the feature at θ + kπ/2
        let mut waves: Vec<(usize, Vec<(usize, f64)>, bool)> = Vec::new();
        match self.kind {
            EmbeddingKind::Identity => {
                for i in 0..n {
                    for c in 0..d {
                        data[at(0, i, c)] = coords.get(i, c);
                    }
                    for dir in layout.directions() {
                        let ch = layout.channel(dir.coord, 1).expect("order ≥ 1");
                        data[at(ch, i, dir.coord)] = 1.0;
                    }
                }
                return Ok(out);
            }
            EmbeddingKind::Fourier => {
                let m = if self.fourier_coords.is_empty() { 0 } else { self.b.rows() };
                for r in 0..m {
                    let w: Vec<(usize, f64)> = self
                        .fourier_coords
                        .iter()
                        .enumerate()
                        .map(|(k, &c)| (c, self.b.get(r, k)))
                        .collect();
                    waves.push((r, w.clone(), false));
                    waves.push((m + r, w, true));
                }
                let mut col = 2 * m;
                for p in &self.periodic {
                    for k in 1..=p.harmonics {
                        let w = vec![(p.coord, 2.0 * PI * k as f64 / p.period)];
                        waves.push((col + k - 1, w.clone(), false));
                        waves.push((col + p.harmonics + k - 1, w, true));
                    }
                    col += 2 * p.harmonics;
                }
            }
        }
        for i in 0..n {
            let x = coords.row(i);
            for (col, w, is_sin) in &waves {
                let theta: f64 = w.iter().map(|&(c, b)| b * x[c]).sum();
                let wave = |t: f64| if *is_sin { t.sin() } else { t.cos() };
                data[at(0, i, *col)] = wave(theta);
                for dir in layout.directions() {
                    let Some(&(_, b)) = w.iter().find(|(c, _)| *c == dir.coord) else {
                        continue;
                    };
                    for k in 1..=dir.order {
                        let ch = layout.channel(dir.coord, k).expect("within order");
                        data[at(ch, i, *col)] =
                            b.powi(k as i32) * wave(theta + k as f64 * FRAC_PI_2);
                    }
                }
            }
        }
        Ok(out)
    }
}
