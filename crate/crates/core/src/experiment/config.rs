use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::nets::{Architecture, EmbeddingConfig, EmbeddingKind, NetConfig, Network, RwfConfig};
use crate::pdes::{BenchmarkId, Problem};
use crate::spectral::SolveConfig;
use crate::tensor::Rng;
use crate::training::{InitMode, Plan, TrainConfig};

fn yes() -> bool {
    true
}
fn unit() -> f64 {
    1.0
}
fn five() -> usize {
    5
}
fn fourier() -> EmbeddingKind {
    EmbeddingKind::Fourier
}
fn first_seed() -> Vec<u64> {
    vec![0]
}
fn plain() -> InitMode {
    InitMode::Plain
}
fn stride() -> usize {
    1
}

/// Backbone rows of an experiment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub layers: usize,
    pub width: usize,
    pub activation: Activation,
    #[serde(default = "fourier")]
    pub embedding: EmbeddingKind,
    #[serde(default = "unit")]
    pub fourier_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier_dim: Option<usize>,
    /// Harmonics per periodic coordinate.
    #[serde(default = "five")]
    pub harmonics: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rwf: Option<RwfConfig>,
    #[serde(default)]
    pub alpha_init: f64,
    #[serde(default = "yes")]
    pub gating: bool,
}

/// Spectral reference settings. Unset fields take desk-scale defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "yes")]
    pub dealias: bool,
    /// Keep every `eval_stride`-th grid point when scoring.
    #[serde(default = "stride")]
    pub eval_stride: usize,
    /// Dataset file: loaded when present, written after generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Cavity center-line profiles (CSV).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<PathBuf>,
}

impl ReferenceConfig {
    /// Solver settings for `problem`: 512 points and `dt = 1e-4` in 1D, 128²
    /// points and `dt = 2.5e-4` in 2D, recording every 0.005 (1D), 0.02
    /// (Grey-Scott) or 0.01 (Ginzburg-Landau) up to `t = 1`.
    pub fn solve_config(&self, problem: &Problem) -> Result<SolveConfig> {
        let (n, dt, rec) = match problem.id() {
            BenchmarkId::AllenCahn | BenchmarkId::Kdv => (512, 1e-4, 0.005),
            BenchmarkId::GreyScott => (128, 2.5e-4, 0.02),
            BenchmarkId::GinzburgLandau => (128, 2.5e-4, 0.01),
            BenchmarkId::Cavity => {
                return Err(Error::Config("the cavity reference is read from a profile file".into()))
            }
        };
        Ok(SolveConfig {
            n: self.n.unwrap_or(n),
            dt: self.dt.unwrap_or(dt),
            t_end: self.t_end.unwrap_or(problem.spec().domain[0].1),
            record_dt: self.record_dt.unwrap_or(rec),
            dealias: self.dealias,
        })
    }
}

/// One experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkId,
    #[serde(default = "plain")]
    pub init: InitMode,
    #[serde(default = "first_seed")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Optimizer steps between checkpoints; one checkpoint at the end if
    /// unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Coefficient overrides of the benchmark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<toml::Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
    /// Grid axes for `sweep`: dotted key to list of values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
}

/// Parses a `key=value` override; the value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override '{spec}' has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Sets a dotted key inside a table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{p}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge_params<P: Serialize + DeserializeOwned>(defaults: P, over: &toml::Table) -> Result<P> {
    let mut t = toml::Table::try_from(defaults).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in over {
        t.insert(k.clone(), v.clone());
    }
    t.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[pde]: {e}")))
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses TOML text and applies `key=value` overrides first.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        Self::from_table(Self::table_with(text, overrides)?)
    }

    /// Raw table of `text` with overrides applied.
    pub fn table_with(text: &str, overrides: &[String]) -> Result<toml::Table> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut table, &k, v)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        let problem = self.problem()?;
        let plan = self.plan_for(problem, self.seeds[0]);
        plan.validate()?;
        // architecture constraints (block multiples, embedding width)
        Network::new(plan.net, &Rng::new(0)).map(|_| ())
    }

    /// The benchmark with any `[pde]` coefficient overrides.
    pub fn problem(&self) -> Result<Problem> {
        let base = Problem::default_for(self.benchmark);
        let Some(over) = &self.pde else {
            return Ok(base);
        };
        Ok(match base {
            Problem::AllenCahn if over.is_empty() => base,
            Problem::AllenCahn => return Err(Error::Config("allen_cahn has no [pde] coefficients".into())),
            Problem::Kdv(p) => Problem::Kdv(merge_params(p, over)?),
            Problem::GreyScott(p) => Problem::GreyScott(merge_params(p, over)?),
            Problem::GinzburgLandau(p) => Problem::GinzburgLandau(merge_params(p, over)?),
            Problem::Cavity(p) => Problem::Cavity(merge_params(p, over)?),
        })
    }

    pub fn net_config(&self, problem: &Problem) -> NetConfig {
        let m = &self.model;
        let spec = problem.spec();
        let embedding = match m.embedding {
            EmbeddingKind::Identity => EmbeddingConfig::identity(),
            EmbeddingKind::Fourier => {
                let mut e = EmbeddingConfig::fourier(m.fourier_scale, problem.periodic_dims());
                e.fourier_dim = m.fourier_dim;
                e.periodic.iter_mut().for_each(|p| p.harmonics = m.harmonics);
                e
            }
        };
        NetConfig {
            arch: m.arch,
            input_dim: spec.inputs.len(),
            output_dim: spec.outputs.len(),
            layers: m.layers,
            width: m.width,
            activation: m.activation,
            embedding,
            rwf: m.rwf,
            alpha_init: m.alpha_init,
            gating: m.gating,
        }
    }

    fn plan_for(&self, problem: Problem, seed: u64) -> Plan {
        Plan {
            problem,
            net: self.net_config(&problem),
            train: self.train.clone(),
            init: self.init,
            seed,
        }
    }

    pub fn plan(&self, seed: u64) -> Result<Plan> {
        let plan = self.plan_for(self.problem()?, seed);
        plan.validate()?;
        Ok(plan)
    }

    /// SHA-256 over the settings that determine a run, excluding the output
    /// directory and the seed list.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.seeds = Vec::new();
        c.checkpoint_every = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The same experiment pinned to one seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c
    }
}
