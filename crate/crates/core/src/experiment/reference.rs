use std::fmt::Write as _;
use std::path::Path;

use log::info;

use crate::error::{Error, Result};
use crate::pdes::Problem;
use crate::spectral::{initial_fields, solve_reference, Dataset, SolveConfig, SpectralSystem};
use crate::tensor::Tensor;
use crate::training::eval_rel_l2;

/// Spectral solution of `problem` from its initial condition.
pub fn generate_reference(problem: &Problem, cfg: &SolveConfig) -> Result<Dataset> {
    let system = SpectralSystem::from_problem(problem)?;
    let u0 = initial_fields(problem, cfg.n)?;
    solve_reference(system, &u0, cfg)
}

/// Loads the dataset at `path` if it exists; otherwise solves and, when a
/// path is given, stores the result there.
pub fn load_or_generate(problem: &Problem, cfg: &SolveConfig, path: Option<&Path>) -> Result<Dataset> {
    if let Some(p) = path.filter(|p| p.exists()) {
        info!("loading reference {}", p.display());
        return Dataset::load(p);
    }
    info!("solving reference: {} points, dt {}, up to t = {}", cfg.n, cfg.dt, cfg.t_end);
    let ds = generate_reference(problem, cfg)?;
    if let Some(p) = path {
        ds.save(p)?;
    }
    Ok(ds)
}

/// Center-line velocity profiles of the cavity: `u(0.5, y)` along the
/// vertical line and `v(x, 0.5)` along the horizontal one.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityProfiles {
    /// `(y, u)` pairs sorted by `y`.
    pub u_vertical: Vec<(f64, f64)>,
    /// `(x, v)` pairs sorted by `x`.
    pub v_horizontal: Vec<(f64, f64)>,
}

/// Piecewise-linear interpolation, constant beyond the end points.
pub fn interpolate(table: &[(f64, f64)], x: f64) -> f64 {
    let i = table.partition_point(|p| p.0 < x);
    if i == 0 {
        return table[0].1;
    }
    if i == table.len() {
        return table[i - 1].1;
    }
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

impl CavityProfiles {
    /// Reads CSV rows `line,coord,value` with `line` either `u` (coordinate
    /// `y`) or `v` (coordinate `x`). Lines starting with `#` are comments.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |ln: usize, r: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("line {ln}: {r}"),
        };
        let mut u = Vec::new();
        let mut v = Vec::new();
        let mut header = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header {
                if line.replace(' ', "") != "line,coord,value" {
                    return Err(bad(i + 1, format!("expected header 'line,coord,value', found '{line}'")));
                }
                header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad(i + 1, "expected three fields".into()));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(i + 1, format!("bad number '{s}'")))
            };
            let pair = (num(f[1])?, num(f[2])?);
            match f[0] {
                "u" => u.push(pair),
                "v" => v.push(pair),
                other => return Err(bad(i + 1, format!("unknown profile '{other}'"))),
            }
        }
        if u.is_empty() || v.is_empty() {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: "both the u and the v profile need at least one point".into(),
            });
        }
        u.sort_by(|a, b| a.0.total_cmp(&b.0));
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            u_vertical: u,
            v_horizontal: v,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("line,coord,value\n");
        for (y, u) in &self.u_vertical {
            writeln!(s, "u,{y:e},{u:e}").unwrap();
        }
        for (x, v) in &self.v_horizontal {
            writeln!(s, "v,{x:e},{v:e}").unwrap();
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn u_at(&self, y: f64) -> f64 {
        interpolate(&self.u_vertical, y)
    }

    pub fn v_at(&self, x: f64) -> f64 {
        interpolate(&self.v_horizontal, x)
    }

    /// Cavity coordinates `[x, y]` of all profile points, `u` line first.
    pub fn coords(&self) -> Tensor {
        let rows: Vec<[f64; 2]> = self
            .u_vertical
            .iter()
            .map(|&(y, _)| [0.5, y])
            .chain(self.v_horizontal.iter().map(|&(x, _)| [x, 0.5]))
            .collect();
        Tensor::from_fn(rows.len(), 2, |i, j| rows[i][j])
    }

    fn values(&self) -> Tensor {
        let v: Vec<f64> = self
            .u_vertical
            .iter()
            .chain(&self.v_horizontal)
            .map(|p| p.1)
            .collect();
        Tensor::column(&v)
    }

    /// Relative L2 error of predicted velocities `[n, ≥2]` at [`Self::coords`]:
    /// column 0 on the `u` line, column 1 on the `v` line.
    pub fn rel_l2(&self, pred: &Tensor) -> Result<f64> {
        let nu = self.u_vertical.len();
        if pred.rows() != nu + self.v_horizontal.len() || pred.cols() < 2 {
            return Err(Error::shape("CavityProfiles::rel_l2", pred.shape(), &[nu + self.v_horizontal.len(), 2]));
        }
        let p = Tensor::from_fn(pred.rows(), 1, |i, _| pred.get(i, if i < nu { 0 } else { 1 }));
        eval_rel_l2(&p, &self.values())
    }
}
