//! `pirate`: runs benchmark experiments, sweeps and diagnostics from TOML
//! configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use std::fmt::Write as _;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use piratenet::autodiff::Activation;
use piratenet::experiment::{
    evaluate_run, generate_reference, regression_csv, regression_grid, resume_experiment, run_experiment, run_sweep,
    sweep_csv, variance_csv, variance_study, ExperimentConfig, RegressionConfig, RunOptions, RunStatus, RunSummary,
};
use piratenet::spectral::Dataset;
use piratenet::Error;

/// Exit code of a run aborted by a non-finite loss or gradient.
const EXIT_DIVERGED: u8 = 3;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "pirate", version, about = "Physics-informed network experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; replaces the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for gen-reference).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key=value` config override, dotted keys, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of an experiment.
    Run {
        /// Stop after this many optimizer steps (resume later).
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Continue the run in --out from its latest checkpoint.
    Resume {
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Run the grid in the config's [sweep] table.
    Sweep,
    /// Derivative variance of freshly initialized MLPs over seeds.
    VarianceStudy {
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
        widths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "3")]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        orders: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "tanh")]
        activations: Vec<String>,
        /// Number of initializations (seeds 0..samples).
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Evaluation point.
        #[arg(long, default_value_t = 0.5)]
        x: f64,
    },
    /// Fit derivative networks of sin(2πx).
    DerivRegression {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
        orders: Vec<usize>,
        /// Seeds per cell, counted up from --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
    },
    /// Solve the spectral reference of the config's benchmark.
    GenReference {
        /// Also write the snapshots as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score the run in --out against its reference.
    Eval {
        /// Reference file (dataset, or cavity profile CSV).
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let path = c.config.as_deref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path, &c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: Option<&ExperimentConfig>, fallback: &str) -> PathBuf {
    c.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn report(s: &RunSummary, dir: &Path) {
    let err = s.eval_rel_l2.map_or("n/a".to_string(), |e| format!("{e:.4e}"));
    println!(
        "{} seed {}: {:?} after {} steps, loss {:.4e}, rel. L2 {err} ({})",
        s.benchmark,
        s.seed,
        s.status,
        s.steps_done,
        s.final_loss.unwrap_or(f64::NAN),
        dir.display()
    );
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn activation(name: &str) -> anyhow::Result<Activation> {
    Ok(match name {
        "tanh" => Activation::Tanh,
        "gelu" => Activation::Gelu,
        "swish" => Activation::Swish,
        "sin" => Activation::Sin,
        other => bail!("unknown activation '{other}' (tanh, gelu, swish, sin)"),
    })
}

/// Long format: one row per (time, grid point), one column per component.
fn dataset_csv(ds: &Dataset) -> String {
    let mut s = String::from(if ds.dims == 1 { "t,x" } else { "t,x,y" });
    for c in 0..ds.components {
        write!(s, ",u{c}").unwrap();
    }
    s.push('\n');
    for (ti, t) in ds.times.iter().enumerate() {
        for i in 0..ds.grid_len() {
            write!(s, "{t:e}").unwrap();
            for x in ds.point(i) {
                write!(s, ",{x:e}").unwrap();
            }
            for c in 0..ds.components {
                write!(s, ",{:e}", ds.snapshot(ti, c)[i]).unwrap();
            }
            s.push('\n');
        }
    }
    s
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    match cli.cmd {
        Cmd::Run { max_steps } => {
            let cfg = load_config(c)?;
            let root = out_dir(c, Some(&cfg), &format!("runs/{}", cfg.benchmark));
            let opts = RunOptions { resume: false, max_steps };
            for &seed in &cfg.seeds {
                let dir = if cfg.seeds.len() > 1 { root.join(format!("seed{seed}")) } else { root.clone() };
                info!("running {} seed {seed} in {}", cfg.benchmark, dir.display());
                report(&run_experiment(&cfg, seed, &dir, &opts)?, &dir);
            }
        }
        Cmd::Resume { max_steps } => {
            let dir = c.out.as_deref().context("--out is required")?;
            let s = resume_experiment(dir, max_steps)?;
            report(&s, dir);
            if s.status == RunStatus::Partial {
                println!("stopped early; resume again to continue");
            }
        }
        Cmd::Sweep => {
            let path = c.config.as_deref().context("--config is required")?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut overrides = c.overrides.clone();
            if let Some(s) = c.seed {
                overrides.push(format!("seeds=[{s}]"));
            }
            let table = ExperimentConfig::table_with(&text, &overrides)?;
            let base = ExperimentConfig::from_table(table.clone())?;
            let root = out_dir(c, Some(&base), "runs/sweep");
            let rows = run_sweep(&table, &root)?;
            write(&root.join("sweep.csv"), &sweep_csv(&rows))?;
            println!("{} runs, results in {}", rows.len(), root.join("sweep.csv").display());
        }
        Cmd::VarianceStudy {
            widths,
            depths,
            orders,
            activations,
            samples,
            x,
        } => {
            let acts = activations.iter().map(|a| activation(a)).collect::<anyhow::Result<Vec<_>>>()?;
            let rows = variance_study(&widths, &depths, &acts, &orders, samples, x)?;
            let path = out_dir(c, None, "runs/variance").join("variance.csv");
            write(&path, &variance_csv(&rows))?;
            for r in &rows {
                println!("width {:5} depth {} order {}: var {:.4e}", r.width, r.depth, r.order, r.variance);
            }
            println!("written {}", path.display());
        }
        Cmd::DerivRegression {
            depths,
            orders,
            seeds,
            width,
            steps,
        } => {
            let first = c.seed.unwrap_or(0);
            let seeds: Vec<u64> = (first..first + seeds).collect();
            let mut base = RegressionConfig::standard(0, 0, 0);
            base.width = width;
            base.steps = steps;
            let rows = regression_grid(&base, &depths, &orders, &seeds)?;
            let path = out_dir(c, None, "runs/deriv_regression").join("deriv_regression.csv");
            write(&path, &regression_csv(&rows))?;
            println!("{} fits, written {}", rows.len(), path.display());
        }
        Cmd::GenReference { csv } => {
            let cfg = load_config(c)?;
            let problem = cfg.problem()?;
            let solve = cfg.reference.clone().unwrap_or_default().solve_config(&problem)?;
            let ds = generate_reference(&problem, &solve)?;
            let path = c
                .out
                .clone()
                .or_else(|| cfg.reference.as_ref().and_then(|r| r.path.clone()))
                .unwrap_or_else(|| PathBuf::from(format!("{}.ref", cfg.benchmark)));
            if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(p)?;
            }
            ds.save(&path)?;
            if let Some(csv) = csv {
                write(&csv, &dataset_csv(&ds))?;
            }
            println!("{} snapshots on {} points written to {}", ds.times.len(), ds.grid_len(), path.display());
        }
        Cmd::Eval { reference } => {
            let dir = c.out.as_deref().context("--out is required")?;
            let e = evaluate_run(dir, reference.as_deref())?;
            write(&dir.join("eval.json"), &format!("{{\n  \"rel_l2\": {e:e}\n}}\n"))?;
            println!("relative L2 error: {e:.6e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
                Some(Error::Diverged { .. }) => ExitCode::from(EXIT_DIVERGED),
                Some(Error::Config(_)) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

