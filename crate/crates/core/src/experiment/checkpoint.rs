use std::path::Path;

use log::warn;
use serde_json::{json, Value};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::io::Container;
use crate::nets::{NetConfig, Network};
use crate::tensor::{Rng, Tensor};
use crate::training::{Adam, Plan, Progress, TrainState};

const KIND: &str = "checkpoint";

fn push_net(c: &mut Container, prefix: &str, net: &Network) {
    let p = net.params();
    for (name, t) in p.names().iter().zip(p.tensors()) {
        c.push(format!("{prefix}params/{name}"), t.clone());
    }
    c.push(format!("{prefix}fourier"), net.embedding().fourier_matrix().clone());
}

/// Serializes the whole run position. The manifest records the config hash,
/// seed, segment and step.
pub fn checkpoint_container(plan: &Plan, progress: &Progress, config_hash: &str) -> Container {
    let s = &progress.state;
    let mut c = Container::new(
        KIND,
        json!({
            "config_hash": config_hash,
            "seed": plan.seed,
            "segment": progress.segment,
            "step": s.step,
            "finished": progress.finished.len(),
            "net": serde_json::to_value(&plan.net).expect("net config serializes"),
            "param_names": s.net.params().names(),
            "adam": {"beta1": s.adam.beta1, "beta2": s.adam.beta2, "eps": s.adam.eps, "t": s.adam.t},
            "rng": {"seed": s.rng.seed(), "counter": s.rng.counter()},
        }),
    );
    push_net(&mut c, "", &s.net);
    let names = s.net.params().names();
    for (n, t) in names.iter().zip(&s.adam.m) {
        c.push(format!("adam_m/{n}"), t.clone());
    }
    for (n, t) in names.iter().zip(&s.adam.v) {
        c.push(format!("adam_v/{n}"), t.clone());
    }
    c.push("lambdas", Tensor::column(&s.lambdas));
    for (k, net) in progress.finished.iter().enumerate() {
        push_net(&mut c, &format!("finished{k}/"), net);
    }
    c
}

pub fn save_checkpoint(path: &Path, plan: &Plan, progress: &Progress, config_hash: &str) -> Result<()> {
    checkpoint_container(plan, progress, config_hash).save(path)
}

/// Header fields of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub config_hash: String,
    pub seed: u64,
    pub segment: usize,
    pub step: u64,
    pub net: NetConfig,
}

fn corrupt(path: &Path, r: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        reason: r.into(),
    }
}

pub fn checkpoint_info(c: &Container, path: &Path) -> Result<CheckpointInfo> {
    if c.kind != KIND {
        return Err(corrupt(path, format!("expected a checkpoint, found '{}'", c.kind)));
    }
    let m = &c.meta;
    let u = |v: &Value, k: &str| v.get(k).and_then(Value::as_u64).ok_or_else(|| corrupt(path, format!("missing {k}")));
    Ok(CheckpointInfo {
        config_hash: m
            .get("config_hash")
            .and_then(Value::as_str)
            .ok_or_else(|| corrupt(path, "missing config_hash"))?
            .to_string(),
        seed: u(m, "seed")?,
        segment: u(m, "segment")? as usize,
        step: u(m, "step")?,
        net: serde_json::from_value(m.get("net").cloned().unwrap_or(Value::Null))
            .map_err(|e| corrupt(path, format!("net config: {e}")))?,
    })
}

fn take(c: &mut Container, name: &str, path: &Path) -> Result<Tensor> {
    c.take(name).ok_or_else(|| corrupt(path, format!("missing array {name}")))
}

fn restore_net(c: &mut Container, prefix: &str, template: &Network, path: &Path) -> Result<Network> {
    let mut net = template.clone();
    let names = template.params().names().to_vec();
    let mut params = ParamSet::new();
    for n in &names {
        params.insert(n.clone(), take(c, &format!("{prefix}params/{n}"), path)?)?;
    }
    net.set_params(params)?;
    net.embedding_mut()
        .set_fourier_matrix(take(c, &format!("{prefix}fourier"), path)?)?;
    Ok(net)
}

/// Rebuilds the run position for `plan`. A different architecture is an
/// error; a different config hash only warns.
pub fn load_checkpoint(path: &Path, plan: &Plan, config_hash: &str) -> Result<Progress> {
    restore(Container::load(path)?, path, plan, config_hash)
}

pub fn restore(mut c: Container, path: &Path, plan: &Plan, config_hash: &str) -> Result<Progress> {
    let info = checkpoint_info(&c, path)?;
    if info.net != plan.net {
        return Err(Error::Config(format!(
            "checkpoint {} holds a {} with {} layers of width {}, the config asks for a {} with {} layers of width {}",
            path.display(),
            info.net.arch,
            info.net.layers,
            info.net.width,
            plan.net.arch,
            plan.net.layers,
            plan.net.width
        )));
    }
    if info.config_hash != config_hash {
        warn!(
            "checkpoint {} was written by config {} but the current config hashes to {}",
            path.display(),
            info.config_hash,
            config_hash
        );
    }
    if info.seed != plan.seed {
        warn!("checkpoint seed {} differs from requested seed {}", info.seed, plan.seed);
    }
    if info.segment >= plan.segments() {
        return Err(corrupt(path, format!("segment {} beyond the plan's {}", info.segment, plan.segments())));
    }
    let template = Network::new(plan.net.clone(), &Rng::new(info.seed))?;
    let names: Vec<String> = template.params().names().to_vec();
    let stored: Vec<String> = serde_json::from_value(c.meta["param_names"].clone())
        .map_err(|e| corrupt(path, format!("param_names: {e}")))?;
    if stored != names {
        return Err(Error::Config(format!("checkpoint {} has a different parameter layout", path.display())));
    }
    let net = restore_net(&mut c, "", &template, path)?;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for n in &names {
        m.push(take(&mut c, &format!("adam_m/{n}"), path)?);
        v.push(take(&mut c, &format!("adam_v/{n}"), path)?);
    }
    let adam_meta = c.meta["adam"].clone();
    let f = |k: &str| adam_meta.get(k).and_then(Value::as_f64).ok_or_else(|| corrupt(path, format!("adam.{k}")));
    let adam = Adam {
        beta1: f("beta1")?,
        beta2: f("beta2")?,
        eps: f("eps")?,
        m,
        v,
        t: adam_meta
            .get("t")
            .and_then(Value::as_u64)
            .ok_or_else(|| corrupt(path, "adam.t"))?,
    };
    let rng_meta = &c.meta["rng"];
    let rng = Rng::from_parts(
        rng_meta.get("seed").and_then(Value::as_u64).ok_or_else(|| corrupt(path, "rng.seed"))?,
        rng_meta.get("counter").and_then(Value::as_u64).ok_or_else(|| corrupt(path, "rng.counter"))?,
    );
    let lambdas = take(&mut c, "lambdas", path)?.data().to_vec();
    let finished_count = c.meta.get("finished").and_then(Value::as_u64).ok_or_else(|| corrupt(path, "finished"))?;
    let mut finished = Vec::new();
    for k in 0..finished_count as usize {
        finished.push(restore_net(&mut c, &format!("finished{k}/"), &template, path)?);
    }
    Ok(Progress {
        segment: info.segment,
        finished,
        state: TrainState {
            net,
            adam,
            step: info.step,
            lambdas,
            rng,
        },
    })
}
