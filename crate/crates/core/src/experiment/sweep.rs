use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::config::{apply_override, ExperimentConfig};
use super::runner::{run_experiment, RunOptions};
use crate::error::{Error, Result};

/// One grid point: dotted keys and their values.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub settings: Vec<(String, toml::Value)>,
}

fn show(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SweepCell {
    pub fn label(&self) -> String {
        self.settings
            .iter()
            .map(|(k, v)| format!("{k}={}", show(v)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `base` with the cell's settings applied and the `sweep` table removed.
    pub fn config(&self, base: &toml::Table) -> Result<ExperimentConfig> {
        let mut t = base.clone();
        t.remove("sweep");
        for (k, v) in &self.settings {
            apply_override(&mut t, k, v.clone())?;
        }
        ExperimentConfig::from_table(t)
    }
}

/// Cartesian product of the axes, first key varying slowest.
pub fn grid_cells(axes: &BTreeMap<String, Vec<toml::Value>>) -> Vec<SweepCell> {
    let mut cells = vec![SweepCell { settings: Vec::new() }];
    for (k, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut s = c.settings.clone();
                    s.push((k.clone(), v.clone()));
                    SweepCell { settings: s }
                })
            })
            .collect();
    }
    cells
}

/// Two arms of `base` differing only in one key.
pub fn two_arms(base: &toml::Table, key: &str, a: toml::Value, b: toml::Value) -> Result<[ExperimentConfig; 2]> {
    let arm = |v: toml::Value| {
        SweepCell {
            settings: vec![(key.to_string(), v)],
        }
        .config(base)
    };
    Ok([arm(a)?, arm(b)?])
}

/// `α = 0` and `α = 1` initializations of the same PirateNet.
pub fn alpha_arms(base: &toml::Table) -> Result<[ExperimentConfig; 2]> {
    two_arms(base, "model.alpha_init", toml::Value::Float(0.0), toml::Value::Float(1.0))
}

/// Gated and plain-mixing arms of the same network.
pub fn gating_arms(base: &toml::Table) -> Result<[ExperimentConfig; 2]> {
    two_arms(base, "model.gating", toml::Value::Boolean(true), toml::Value::Boolean(false))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cell: usize,
    pub label: String,
    pub seed: u64,
    pub status: String,
    pub final_loss: f64,
    pub rel_l2: f64,
}

/// Runs every cell of the base config's `sweep` table with every seed, each
/// in `out/cell<i>/seed<s>`. Divergent cells are recorded, not fatal.
pub fn run_sweep(base: &toml::Table, out: &Path) -> Result<Vec<SweepRow>> {
    let axes: BTreeMap<String, Vec<toml::Value>> = match base.get("sweep") {
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("[sweep]: {e}")))?,
        None => BTreeMap::new(),
    };
    let cells = grid_cells(&axes);
    let mut rows = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let cfg = cell.config(base)?;
        for &seed in &cfg.seeds {
            let dir = out.join(format!("cell{i}")).join(format!("seed{seed}"));
            let (status, loss, err) = match run_experiment(&cfg, seed, &dir, &RunOptions::default()) {
                Ok(s) => ("completed".to_string(), s.final_loss.unwrap_or(f64::NAN), s.eval_rel_l2.unwrap_or(f64::NAN)),
                Err(Error::Diverged { step, reason }) => {
                    warn!("cell {i} seed {seed} diverged at step {step}: {reason}");
                    ("diverged".to_string(), f64::NAN, f64::NAN)
                }
                Err(e) => return Err(e),
            };
            rows.push(SweepRow {
                cell: i,
                label: cell.label(),
                seed,
                status,
                final_loss: loss,
                rel_l2: err,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("cell,label,seed,status,final_loss,rel_l2\n");
    for r in rows {
        writeln!(s, "{},\"{}\",{},{},{:e},{:e}", r.cell, r.label.replace('"', "'"), r.seed, r.status, r.final_loss, r.rel_l2).unwrap();
    }
    s
}
