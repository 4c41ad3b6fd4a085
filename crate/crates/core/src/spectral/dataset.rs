use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use super::{grid_points, SpectralSystem};
use crate::error::{Error, Result};
use crate::io::Container;
use crate::tensor::Tensor;

/// Snapshots of a reference solution on a uniform periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub system: String,
    pub dims: usize,
    pub n: usize,
    pub components: usize,
    pub times: Vec<f64>,
    /// `[time][component][grid]`, grid x-major in 2D.
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn new(system: &SpectralSystem, n: usize) -> Self {
        Self {
            system: format!("{system:?}"),
            dims: system.dims(),
            n,
            components: system.components(),
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn grid_len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    pub fn push(&mut self, t: f64, fields: &[Vec<f64>]) {
        self.times.push(t);
        for f in fields {
            self.values.extend_from_slice(f);
        }
    }

    pub fn snapshot(&self, ti: usize, comp: usize) -> &[f64] {
        let g = self.grid_len();
        let start = (ti * self.components + comp) * g;
        &self.values[start..start + g]
    }

    /// Spatial coordinates of grid slot `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        let x = grid_points(self.n);
        if self.dims == 1 {
            vec![x[i]]
        } else {
            vec![x[i / self.n], x[i % self.n]]
        }
    }

    /// Evaluation set over snapshots with `t_lo ≤ t ≤ t_hi`, keeping every
    /// `stride`-th grid slot. Returns `(coords [m, 1 + dims], values
    /// [m, components])` with time as the first coordinate, shifted by
    /// `-t_shift`.
    pub fn eval_set(&self, t_lo: f64, t_hi: f64, t_shift: f64, stride: usize) -> (Tensor, Tensor) {
        let stride = stride.max(1);
        let g = self.grid_len();
        let (mut coords, mut vals) = (Vec::new(), Vec::new());
        let tol = 1e-12;
        let mut rows = 0;
        for (ti, &t) in self.times.iter().enumerate() {
            if t < t_lo - tol || t > t_hi + tol {
                continue;
            }
            for i in (0..g).step_by(stride) {
                coords.push(t - t_shift);
                coords.extend(self.point(i));
                for c in 0..self.components {
                    vals.push(self.snapshot(ti, c)[i]);
                }
                rows += 1;
            }
        }
        (
            Tensor::new(&[rows, 1 + self.dims], coords).expect("consistent rows"),
            Tensor::new(&[rows, self.components], vals).expect("consistent rows"),
        )
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            "reference",
            json!({
                "system": self.system,
                "dims": self.dims,
                "n": self.n,
                "components": self.components,
                "domain": [super::DOMAIN_LO, super::DOMAIN_LO + super::DOMAIN_LENGTH],
            }),
        );
        c.push("times", Tensor::column(&self.times));
        let shape = [self.times.len(), self.components, self.grid_len()];
        c.push("values", Tensor::new(&shape, self.values.clone()).expect("consistent shape"));
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let corrupt = |r: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: r.to_string(),
        };
        if c.kind != "reference" {
            return Err(corrupt(&format!("expected a reference dataset, found '{}'", c.kind)));
        }
        let field = |k: &str| c.meta.get(k).and_then(|v| v.as_u64()).ok_or_else(|| corrupt(k));
        let times = c.get("times").ok_or_else(|| corrupt("missing times"))?;
        let values = c.get("values").ok_or_else(|| corrupt("missing values"))?;
        let ds = Self {
            system: c.meta.get("system").and_then(|v| v.as_str()).unwrap_or("").to_string(),
            dims: field("dims")? as usize,
            n: field("n")? as usize,
            components: field("components")? as usize,
            times: times.data().to_vec(),
            values: values.data().to_vec(),
        };
        if ds.values.len() != ds.times.len() * ds.components * ds.grid_len() {
            return Err(corrupt("values do not match grid"));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?, path)
    }

    /// Long-format CSV: `t, x[, y], u[, v]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(if self.dims == 1 { "t,x" } else { "t,x,y" });
        for c in 0..self.components {
            s.push_str(if c == 0 { ",u" } else { ",v" });
        }
        s.push('\n');
        for (ti, t) in self.times.iter().enumerate() {
            for i in 0..self.grid_len() {
                let _ = write!(s, "{t}");
                for x in self.point(i) {
                    let _ = write!(s, ",{x}");
                }
                for c in 0..self.components {
                    let _ = write!(s, ",{}", self.snapshot(ti, c)[i]);
                }
                s.push('\n');
            }
        }
        s
    }
}
