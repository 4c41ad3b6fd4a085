use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::checkpoint::{checkpoint_container, load_checkpoint};
use super::config::ExperimentConfig;
use super::metrics::{read_metrics, write_metrics, RunStatus, RunSummary};
use super::reference::{load_or_generate, CavityProfiles};
use crate::error::{Error, Result};
use crate::pdes::Problem;
use crate::spectral::Dataset;
use crate::training::{eval_rel_l2, loss_terms, EvalSource, MetricsRecord, Plan, Progress};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST: &str = "latest.ckpt";
pub const FINAL: &str = "final.ckpt";
pub const DIVERGED: &str = "diverged.ckpt";

/// Reference data an experiment is scored against.
#[derive(Clone, Debug)]
pub enum Reference {
    Grid { dataset: Dataset, stride: usize },
    Profiles(CavityProfiles),
}

/// Loads (or solves for) the `[reference]` of a config; `None` when the
/// config has none.
pub fn load_reference(cfg: &ExperimentConfig, problem: &Problem) -> Result<Option<Reference>> {
    let Some(r) = &cfg.reference else {
        return Ok(None);
    };
    if let Problem::Cavity(_) = problem {
        return r
            .profiles
            .as_deref()
            .map(|p| CavityProfiles::load(p).map(Reference::Profiles))
            .transpose();
    }
    let solve = r.solve_config(problem)?;
    let dataset = load_or_generate(problem, &solve, r.path.as_deref())?;
    Ok(Some(Reference::Grid {
        dataset,
        stride: r.eval_stride,
    }))
}

/// Optimizer steps taken so far over all segments.
pub fn steps_done(plan: &Plan, progress: &Progress) -> u64 {
    (0..progress.segment).map(|k| plan.segment_config(k).steps).sum::<u64>() + progress.state.step
}

/// Error of a finished plan over the whole trained horizon.
pub fn evaluate(plan: &Plan, progress: &Progress, reference: &Reference) -> Result<Option<f64>> {
    if !plan.is_done(progress) {
        return Ok(None);
    }
    match reference {
        Reference::Grid { dataset, stride } => {
            let (coords, values) = dataset.eval_set(0.0, plan.horizon(), 0.0, *stride);
            if coords.rows() == 0 {
                return Ok(None);
            }
            eval_rel_l2(&plan.predict(&progress.finished, &coords)?, &values).map(Some)
        }
        Reference::Profiles(p) => {
            let pred = plan.predict(&progress.finished, &p.coords())?;
            p.rel_l2(&pred).map(Some)
        }
    }
}

/// How a call to [`run_experiment`] proceeds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Continue from `checkpoints/latest.ckpt` if present.
    pub resume: bool,
    /// Stop after this many optimizer steps in this call.
    pub max_steps: Option<u64>,
}

/// Files of one run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join(SUMMARY_FILE)
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(name)
    }
}

fn summary(
    cfg: &ExperimentConfig,
    plan: &Plan,
    progress: &Progress,
    records: &[MetricsRecord],
    status: RunStatus,
    eval: Option<f64>,
    diverged_at: Option<u64>,
) -> RunSummary {
    let last = records.last();
    RunSummary {
        benchmark: cfg.benchmark.to_string(),
        arch: plan.net.arch.to_string(),
        seed: plan.seed,
        config_hash: cfg.hash(),
        status,
        steps_done: steps_done(plan, progress),
        segments_done: progress.finished.len(),
        segments: plan.segments(),
        num_params: progress.state.net.num_params(),
        terms: loss_terms(&plan.problem).into_iter().map(|(n, _)| n).collect(),
        final_loss: last.map(|r| r.total),
        final_terms: last.map(|r| r.terms.clone()).unwrap_or_default(),
        final_alphas: last.map(|r| r.alphas.clone()).unwrap_or_default(),
        final_rel_l2: last.and_then(|r| r.rel_l2),
        eval_rel_l2: eval,
        diverged_at,
    }
}

/// Rows logged strictly before the checkpointed position.
fn rows_before(records: Vec<MetricsRecord>, plan: &Plan, progress: &Progress) -> Vec<MetricsRecord> {
    let done = plan.is_done(progress);
    records
        .into_iter()
        .filter(|r| done || r.segment < progress.segment || (r.segment == progress.segment && r.step < progress.state.step))
        .collect()
}

/// Trains one seed of an experiment in `out`, writing `config.toml`,
/// `metrics.csv`, `summary.json` and checkpoints. A divergence dumps
/// `checkpoints/diverged.ckpt` and returns [`Error::Diverged`].
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, out: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = cfg.with_seed(seed);
    let paths = RunPaths::new(out);
    let ckdir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckdir).map_err(|e| Error::io(&ckdir, e))?;
    let plan = cfg.plan(seed)?;
    let hash = cfg.hash();
    let terms: Vec<String> = loss_terms(&plan.problem).into_iter().map(|(n, _)| n).collect();
    let latest = paths.checkpoint(LATEST);
    let (mut progress, mut records) = if opts.resume && latest.exists() {
        let progress = load_checkpoint(&latest, &plan, &hash)?;
        let records = if paths.metrics().exists() {
            rows_before(read_metrics(&paths.metrics())?.1, &plan, &progress)
        } else {
            Vec::new()
        };
        info!("resuming at segment {} step {}", progress.segment, progress.state.step);
        (progress, records)
    } else {
        if opts.resume {
            warn!("no checkpoint in {}, starting from scratch", ckdir.display());
        }
        (plan.start()?, Vec::new())
    };
    let text = cfg.to_toml()?;
    fs::write(paths.config(), text).map_err(|e| Error::io(paths.config(), e))?;
    let reference = load_reference(&cfg, &plan.problem)?;
    let eval_source = match &reference {
        Some(Reference::Grid { dataset, stride }) => Some(EvalSource {
            dataset,
            stride: *stride,
        }),
        _ => None,
    };
    let save = |progress: &Progress, name: &str| -> Result<()> {
        checkpoint_container(&plan, progress, &hash).save(&paths.checkpoint(name))
    };
    let mut left = opts.max_steps.unwrap_or(u64::MAX);
    while !plan.is_done(&progress) && left > 0 {
        let budget = cfg.checkpoint_every.unwrap_or(u64::MAX).min(left);
        let before = steps_done(&plan, &progress);
        let outcome = plan.run(&mut progress, eval_source.as_ref(), Some(budget), &mut records);
        left -= steps_done(&plan, &progress) - before;
        write_metrics(&paths.metrics(), &terms, &records)?;
        if let Err(e) = outcome {
            if let Error::Diverged { step, .. } = &e {
                save(&progress, DIVERGED)?;
                summary(&cfg, &plan, &progress, &records, RunStatus::Diverged, None, Some(*step))
                    .save(&paths.summary())?;
            }
            return Err(e);
        }
        save(&progress, LATEST)?;
    }
    write_metrics(&paths.metrics(), &terms, &records)?;
    let done = plan.is_done(&progress);
    if done {
        save(&progress, LATEST)?;
        save(&progress, FINAL)?;
    }
    let eval = match &reference {
        Some(r) => evaluate(&plan, &progress, r)?,
        None => None,
    };
    let status = if done { RunStatus::Completed } else { RunStatus::Partial };
    let s = summary(&cfg, &plan, &progress, &records, status, eval, None);
    s.save(&paths.summary())?;
    if let Some(e) = eval {
        info!("relative L2 error over the trained horizon: {e:.4e}");
    }
    Ok(s)
}

/// Continues the run stored in `out` using its saved `config.toml`.
pub fn resume_experiment(out: &Path, max_steps: Option<u64>) -> Result<RunSummary> {
    let paths = RunPaths::new(out);
    let cfg = ExperimentConfig::load(&paths.config(), &[])?;
    let opts = RunOptions {
        resume: true,
        max_steps,
    };
    run_experiment(&cfg, cfg.seeds[0], out, &opts)
}

/// Scores the checkpoint of a run directory (the final one if present)
/// against `reference`, or against the config's own reference.
pub fn evaluate_run(out: &Path, reference: Option<&Path>) -> Result<f64> {
    let paths = RunPaths::new(out);
    let cfg = ExperimentConfig::load(&paths.config(), &[])?;
    let plan = cfg.plan(cfg.seeds[0])?;
    let ckpt = [FINAL, LATEST]
        .iter()
        .map(|n| paths.checkpoint(n))
        .find(|p| p.exists())
        .ok_or_else(|| Error::InvalidArgument(format!("no checkpoint in {}", out.display())))?;
    let progress = load_checkpoint(&ckpt, &plan, &cfg.hash())?;
    let r = match reference {
        Some(p) if matches!(plan.problem, Problem::Cavity(_)) => Reference::Profiles(CavityProfiles::load(p)?),
        Some(p) => Reference::Grid {
            dataset: Dataset::load(p)?,
            stride: cfg.reference.as_ref().map_or(1, |r| r.eval_stride),
        },
        None => load_reference(&cfg, &plan.problem)?
            .ok_or_else(|| Error::Config("the config has no [reference] and none was given".into()))?,
    };
    evaluate(&plan, &progress, &r)?
        .ok_or_else(|| Error::InvalidArgument("the run has not finished every segment".into()))
}
