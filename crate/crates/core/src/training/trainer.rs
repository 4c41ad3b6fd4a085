use log::info;
use serde::{Deserialize, Serialize};

use super::loss::{loss_terms, residual_vectors, term_gradient_norms, term_losses, weighted_total, Batch, TermKind};
use super::optim::{Adam, LrSchedule};
use super::sampling::{sample_collocation, sample_stratified};
use super::weights::{grad_norm_weights, ntk_weights, Weighting};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nets::{NetConfig, Network};
use crate::pdes::{CavityParams, Problem};
use crate::spectral::{grid_points, initial_fields, propagate_linear, Dataset, SpectralSystem};
use crate::tensor::{Rng, Tensor};

fn one() -> usize {
    1
}
fn default_every() -> u64 {
    1000
}
fn default_ema() -> f64 {
    0.9
}
fn default_ntk_points() -> usize {
    64
}
fn default_log_every() -> u64 {
    100
}
fn default_init_times() -> usize {
    64
}
fn default_weighting() -> Weighting {
    Weighting::None
}

/// Optimization and sampling settings of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub warmup_steps: u64,
    /// Steps per time window (or of the single stage without a schedule);
    /// a Reynolds curriculum takes its steps from `stage_steps` instead.
    #[serde(default)]
    pub steps: u64,
    /// Interior collocation points per step.
    pub batch_size: usize,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    #[serde(default)]
    pub causal_tol: f64,
    #[serde(default = "one")]
    pub chunks: usize,
    #[serde(default = "one")]
    pub windows: usize,
    /// Final time of the trained horizon; defaults to the end of the
    /// problem's time domain.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Reynolds numbers of a cavity curriculum.
    #[serde(default)]
    pub re_schedule: Vec<f64>,
    #[serde(default)]
    pub stage_steps: Vec<u64>,
    #[serde(default = "default_every")]
    pub weight_update_every: u64,
    #[serde(default = "default_ema")]
    pub weight_ema: f64,
    /// Points per term in the kernel-trace estimate.
    #[serde(default = "default_ntk_points")]
    pub ntk_points: usize,
    /// Initial-condition points per step; defaults to `batch_size`.
    #[serde(default)]
    pub ic_batch: Option<usize>,
    /// Wall points per step; defaults to `batch_size`.
    #[serde(default)]
    pub bc_batch: Option<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Time levels of the physics-informed init data.
    #[serde(default = "default_init_times")]
    pub init_times: usize,
    /// Spatial grid of the init data per dimension; 128 in 1D, 32 in 2D.
    #[serde(default)]
    pub init_grid: Option<usize>,
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.learning_rate,
            warmup_steps: self.warmup_steps,
            decay_rate: self.decay_rate,
            decay_steps: self.decay_steps,
        }
    }

    pub fn causal_active(&self) -> bool {
        self.causal_tol > 0.0 && self.chunks > 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) || !(self.decay_rate > 0.0) {
            return bad("learning rate and decay rate must be positive".into());
        }
        if self.batch_size == 0 || self.chunks == 0 || self.windows == 0 {
            return bad("batch_size, chunks and windows must be positive".into());
        }
        if self.causal_active() && !self.batch_size.is_multiple_of(self.chunks) {
            return bad(format!(
                "batch_size {} is not divisible by {} chunks",
                self.batch_size, self.chunks
            ));
        }
        if !(self.causal_tol >= 0.0) {
            return bad(format!("causal_tol {} is negative", self.causal_tol));
        }
        if !(0.0..1.0).contains(&self.weight_ema) || self.weight_update_every == 0 || self.log_every == 0 {
            return bad("weight_ema must lie in [0, 1); cadences must be positive".into());
        }
        if !self.re_schedule.is_empty() {
            if self.re_schedule.len() != self.stage_steps.len() {
                return bad("re_schedule and stage_steps differ in length".into());
            }
            if self.re_schedule.windows(2).any(|w| !(w[1] > w[0])) || !(self.re_schedule[0] > 0.0) {
                return bad("re_schedule must be positive and increasing".into());
            }
        }
        if self.init_times < 2 {
            return bad("init_times must be at least 2".into());
        }
        Ok(())
    }
}

/// Final-layer initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Keep the random final layer.
    Plain,
    /// Least-squares fit of the initial condition replicated over time.
    PiInitIc,
    /// Least-squares fit of the exact solution of the linear part.
    PiInitLinearized,
}

/// Everything that changes while training one window or stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub net: Network,
    pub adam: Adam,
    pub step: u64,
    pub lambdas: Vec<f64>,
    pub rng: Rng,
}

impl TrainState {
    pub fn new(net: Network, terms: usize, rng: Rng) -> Self {
        let adam = Adam::new(net.params());
        Self {
            net,
            adam,
            step: 0,
            lambdas: vec![1.0; terms],
            rng,
        }
    }
}

/// Initial data of a window.
#[derive(Clone, Debug)]
pub enum IcSource {
    /// The benchmark's initial condition.
    Initial,
    /// The previous window's network at its local time `span`.
    Previous { net: Network, span: f64 },
}

impl IcSource {
    /// Values `[n, outputs]` at spatial points `[n, dims]`.
    pub fn eval(&self, problem: &Problem, x: &Tensor) -> Result<Tensor> {
        match self {
            IcSource::Initial => {
                let out = problem.spec().outputs.len();
                let mut t = Tensor::zeros(&[x.rows(), out]);
                for i in 0..x.rows() {
                    for (c, v) in problem.initial_condition(x.row(i)).into_iter().enumerate() {
                        t.set(i, c, v);
                    }
                }
                Ok(t)
            }
            IcSource::Previous { net, span } => {
                let coords = Tensor::from_fn(x.rows(), x.cols() + 1, |i, j| if j == 0 { *span } else { x.get(i, j - 1) });
                net.predict(&coords)
            }
        }
    }
}

/// Points and reference values, in the window's local time.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub coords: Tensor,
    pub values: Tensor,
}

/// `‖pred − ref‖₂ / ‖ref‖₂` over all entries.
pub fn eval_rel_l2(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return Err(Error::shape("eval_rel_l2", pred.shape(), reference.shape()));
    }
    let den = reference.norm();
    if den == 0.0 {
        return Err(Error::InvalidArgument("reference has zero norm".into()));
    }
    Ok(pred.sub(reference)?.norm() / den)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Window or curriculum stage.
    pub segment: usize,
    pub step: u64,
    pub total: f64,
    pub terms: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub lr: f64,
    pub rel_l2: Option<f64>,
}

/// Problem and data of the window (or stage) being trained.
#[derive(Clone, Debug)]
pub struct WindowSetup {
    pub segment: usize,
    pub problem: Problem,
    /// Length of the local time interval `[0, span]`.
    pub span: f64,
    pub ic: IcSource,
    pub eval: Option<EvalSet>,
}

impl WindowSetup {
    fn domain(&self) -> Vec<(f64, f64)> {
        let mut d = self.problem.spec().domain;
        if self.problem.spec().time_dependent {
            d[0] = (0.0, self.span);
        }
        d
    }
}

/// Draws the collocation batch of one step.
pub fn sample_batch(rng: &mut Rng, setup: &WindowSetup, cfg: &TrainConfig) -> Result<Batch> {
    let spec = setup.problem.spec();
    let domain = setup.domain();
    let interior = if cfg.causal_active() {
        sample_stratified(rng, &domain, cfg.batch_size, cfg.chunks)?
    } else {
        sample_collocation(rng, &domain, cfg.batch_size)
    };
    let mut batch = Batch {
        interior: Some(interior),
        ..Default::default()
    };
    if spec.time_dependent {
        let n = cfg.ic_batch.unwrap_or(cfg.batch_size);
        let x = sample_collocation(rng, &domain[1..], n);
        let g = setup.ic.eval(&setup.problem, &x)?;
        let coords = Tensor::from_fn(n, x.cols() + 1, |i, j| if j == 0 { 0.0 } else { x.get(i, j - 1) });
        batch.ic = Some((coords, g));
    }
    if let Problem::Cavity(_) = setup.problem {
        let n = cfg.bc_batch.unwrap_or(cfg.batch_size);
        batch.bc = Some(setup.problem.sample_boundary(rng, n)?);
        batch.gauge = Some(Tensor::zeros(&[1, 2]));
    }
    Ok(batch)
}

/// Points and targets of the final-layer least-squares fit.
pub fn pi_init_data(
    problem: &Problem,
    mode: InitMode,
    ic: &IcSource,
    span: f64,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Option<(Tensor, Tensor)>> {
    if mode == InitMode::Plain {
        return Ok(None);
    }
    if let Problem::Cavity(_) = problem {
        // walls only: velocity data, pressure fitted to zero
        let n = cfg.bc_batch.unwrap_or(cfg.batch_size);
        let (x, g) = problem.sample_boundary(rng, n)?;
        let targets = Tensor::from_fn(n, 3, |i, j| if j < 2 { g.get(i, j) } else { 0.0 });
        return Ok(Some((x, targets)));
    }
    let system = SpectralSystem::from_problem(problem)?;
    let dims = system.dims();
    let n = cfg.init_grid.unwrap_or(if dims == 1 { 128 } else { 32 });
    let g = grid_points(n);
    let pts = n.pow(dims as u32);
    let x = Tensor::from_fn(pts, dims, |i, j| match (dims, j) {
        (1, _) => g[i],
        (_, 0) => g[i / n],
        _ => g[i % n],
    });
    let u0: Vec<Vec<f64>> = match ic {
        IcSource::Initial => initial_fields(problem, n)?,
        prev => {
            let v = prev.eval(problem, &x)?;
            (0..v.cols()).map(|c| (0..pts).map(|i| v.get(i, c)).collect()).collect()
        }
    };
    let comps = u0.len();
    let times = cfg.init_times;
    let mut coords = Tensor::zeros(&[times * pts, dims + 1]);
    let mut targets = Tensor::zeros(&[times * pts, comps]);
    for k in 0..times {
        let tau = span * k as f64 / (times - 1) as f64;
        let fields = match mode {
            InitMode::PiInitLinearized => propagate_linear(system.linearized(), n, &u0, tau)?,
            _ => u0.clone(),
        };
        for i in 0..pts {
            let r = k * pts + i;
            coords.set(r, 0, tau);
            for j in 0..dims {
                coords.set(r, j + 1, x.get(i, j));
            }
            for (c, f) in fields.iter().enumerate() {
                targets.set(r, c, f[i]);
            }
        }
    }
    Ok(Some((coords, targets)))
}

fn lambda_update(
    state: &mut TrainState,
    kinds: &[TermKind],
    fresh: Vec<f64>,
    ema: f64,
    ntk: bool,
) -> Result<()> {
    let idx: Vec<usize> = (0..kinds.len()).filter(|&k| kinds[k] != TermKind::Gauge).collect();
    let s: Vec<f64> = idx.iter().map(|&k| fresh[k]).collect();
    let prev: Vec<f64> = idx.iter().map(|&k| state.lambdas[k]).collect();
    let new = if ntk {
        ntk_weights(&s, Some(&prev), ema)?
    } else {
        grad_norm_weights(&s, Some(&prev), ema)?
    };
    for (k, l) in idx.into_iter().zip(new) {
        state.lambdas[k] = l;
    }
    Ok(())
}

fn diverged(step: u64, e: impl std::fmt::Display) -> Error {
    Error::Diverged {
        step,
        reason: e.to_string(),
    }
}

fn rel_l2_of(net: &Network, eval: &Option<EvalSet>) -> Result<Option<f64>> {
    eval.as_ref()
        .map(|e| eval_rel_l2(&net.predict(&e.coords)?, &e.values))
        .transpose()
}

/// Runs optimizer steps from `state.step` up to `cfg.steps` (or `stop_at`,
/// if earlier), appending a metrics row every `log_every` steps and one at
/// the end. On a non-finite loss or gradient the state is left at the last
/// good step and [`Error::Diverged`] is returned.
pub fn train_window(
    state: &mut TrainState,
    setup: &WindowSetup,
    cfg: &TrainConfig,
    stop_at: Option<u64>,
    sink: &mut Vec<MetricsRecord>,
) -> Result<()> {
    cfg.validate()?;
    let kinds: Vec<TermKind> = loss_terms(&setup.problem).into_iter().map(|(_, k)| k).collect();
    if state.lambdas.len() != kinds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} loss weights for {} terms",
            state.lambdas.len(),
            kinds.len()
        )));
    }
    let sched = cfg.schedule();
    let end = stop_at.map_or(cfg.steps, |s| s.min(cfg.steps));
    let chunks = if cfg.causal_active() { cfg.chunks } else { 1 };
    while state.step < end {
        let s = state.step;
        let batch = sample_batch(&mut state.rng, setup, cfg)?;
        let update = cfg.weighting != Weighting::None && s.is_multiple_of(cfg.weight_update_every);
        if update && cfg.weighting == Weighting::Ntk {
            let tr = super::loss::ntk_traces(&state.net, state.net.params(), &setup.problem, &batch, cfg.ntk_points)?;
            lambda_update(state, &kinds, tr, cfg.weight_ema, true).map_err(|e| diverged(s, e))?;
        }
        let tape = Tape::new();
        let p = state.net.params().bind(&tape);
        let r = residual_vectors(&tape, &state.net, &p, &setup.problem, &batch)?;
        let terms = term_losses(&r, &kinds, chunks, cfg.causal_tol).map_err(|e| diverged(s, e))?;
        if update && cfg.weighting == Weighting::GradNorm {
            let norms = term_gradient_norms(&tape, &p, &terms)?;
            lambda_update(state, &kinds, norms, cfg.weight_ema, false).map_err(|e| diverged(s, e))?;
        }
        let total = weighted_total(&terms, &state.lambdas)?;
        let loss = total.value().item();
        if !loss.is_finite() {
            return Err(diverged(s, "non-finite loss"));
        }
        let lr = sched.lr_at(s);
        if s.is_multiple_of(cfg.log_every) {
            sink.push(MetricsRecord {
                segment: setup.segment,
                step: s,
                total: loss,
                terms: terms.values.iter().map(|v| v.map_or(0.0, |v| v.value().item())).collect(),
                lambdas: state.lambdas.clone(),
                alphas: state.net.alphas(),
                lr,
                rel_l2: rel_l2_of(&state.net, &setup.eval)?,
            });
            info!("segment {} step {s}: loss {loss:.4e}", setup.segment);
        }
        let grads = p.gradients(&tape.backward(total)?);
        state
            .adam
            .step(state.net.params_mut(), &grads, lr)
            .map_err(|e| diverged(s, e))?;
        state.step += 1;
    }
    if state.step == cfg.steps && sink.last().is_none_or(|m| m.segment != setup.segment || m.step != cfg.steps) {
        // final row on an independent batch so resumed and uninterrupted
        // runs consume identical random streams
        let mut rng = state.rng.split(u64::MAX);
        let batch = sample_batch(&mut rng, setup, cfg)?;
        let tape = Tape::new();
        let p = state.net.params().bind_constant(&tape);
        let r = residual_vectors(&tape, &state.net, &p, &setup.problem, &batch)?;
        let terms = term_losses(&r, &kinds, chunks, cfg.causal_tol)?;
        let total = weighted_total(&terms, &state.lambdas)?.value().item();
        if !total.is_finite() {
            return Err(diverged(state.step, "non-finite loss"));
        }
        sink.push(MetricsRecord {
            segment: setup.segment,
            step: state.step,
            total,
            terms: terms.values.iter().map(|v| v.map_or(0.0, |v| v.value().item())).collect(),
            lambdas: state.lambdas.clone(),
            alphas: state.net.alphas(),
            lr: sched.lr_at(state.step),
            rel_l2: rel_l2_of(&state.net, &setup.eval)?,
        });
    }
    Ok(())
}

/// Reference data with a grid stride for in-training evaluation.
#[derive(Clone, Debug)]
pub struct EvalSource<'a> {
    pub dataset: &'a Dataset,
    pub stride: usize,
}

/// A full training run: one or more time windows, or a Reynolds curriculum.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub problem: Problem,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub init: InitMode,
    pub seed: u64,
}

/// Position in a [`Plan`]: finished segments plus the live state.
#[derive(Clone, Debug, PartialEq)]
pub struct Progress {
    pub segment: usize,
    pub finished: Vec<Network>,
    pub state: TrainState,
}

impl Plan {
    pub fn is_curriculum(&self) -> bool {
        !self.train.re_schedule.is_empty()
    }

    pub fn segments(&self) -> usize {
        if self.is_curriculum() {
            self.train.re_schedule.len()
        } else if self.problem.spec().time_dependent {
            self.train.windows
        } else {
            1
        }
    }

    pub fn horizon(&self) -> f64 {
        self.train.horizon.unwrap_or(self.problem.spec().domain[0].1)
    }

    /// Local time span of one window.
    pub fn span(&self) -> f64 {
        if self.problem.spec().time_dependent {
            self.horizon() / self.train.windows as f64
        } else {
            0.0
        }
    }

    pub fn segment_problem(&self, k: usize) -> Problem {
        match (&self.problem, self.is_curriculum()) {
            (Problem::Cavity(p), true) => Problem::Cavity(CavityParams {
                re: self.train.re_schedule[k],
                ..*p
            }),
            _ => self.problem,
        }
    }

    pub fn segment_config(&self, k: usize) -> TrainConfig {
        let mut c = self.train.clone();
        if self.is_curriculum() {
            c.steps = self.train.stage_steps[k];
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.is_curriculum() && !matches!(self.problem, Problem::Cavity(_)) {
            return Err(Error::Config("a Reynolds schedule needs the cavity benchmark".into()));
        }
        let spec = self.problem.spec();
        if self.net.input_dim != spec.inputs.len() || self.net.output_dim != spec.outputs.len() {
            return Err(Error::Config(format!(
                "network maps {} -> {} but {} needs {} -> {}",
                self.net.input_dim,
                self.net.output_dim,
                spec.name,
                spec.inputs.len(),
                spec.outputs.len()
            )));
        }
        if !(self.horizon() > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }

    fn ic_for(&self, k: usize, finished: &[Network]) -> IcSource {
        if k == 0 || self.is_curriculum() {
            IcSource::Initial
        } else {
            IcSource::Previous {
                net: finished[k - 1].clone(),
                span: self.span(),
            }
        }
    }

    /// Fresh state of segment `k`: a new initialized network per time
    /// window, the previous stage's network for a curriculum stage.
    pub fn segment_state(&self, k: usize, finished: &[Network]) -> Result<TrainState> {
        let root = Rng::new(self.seed);
        let problem = self.segment_problem(k);
        let terms = loss_terms(&problem).len();
        let rng = root.split(1000 + k as u64);
        if self.is_curriculum() && k > 0 {
            return Ok(TrainState::new(finished[k - 1].clone(), terms, rng));
        }
        let mut net = Network::new(self.net.clone(), &root.split(100 + k as u64))?;
        let ic = self.ic_for(k, finished);
        let mut init_rng = root.split(2000 + k as u64);
        if let Some((x, y)) = pi_init_data(&problem, self.init, &ic, self.span(), &self.train, &mut init_rng)? {
            net.physics_informed_init(&x, &y)?;
        }
        Ok(TrainState::new(net, terms, rng))
    }

    pub fn start(&self) -> Result<Progress> {
        self.validate()?;
        Ok(Progress {
            segment: 0,
            finished: Vec::new(),
            state: self.segment_state(0, &[])?,
        })
    }

    pub fn is_done(&self, progress: &Progress) -> bool {
        progress.finished.len() == self.segments()
    }

    pub fn setup(&self, k: usize, finished: &[Network], eval: Option<&EvalSource<'_>>) -> WindowSetup {
        let span = self.span();
        let eval = eval.map(|e| {
            let (lo, hi) = (k as f64 * span, (k + 1) as f64 * span);
            let (coords, values) = e.dataset.eval_set(lo, hi, lo, e.stride);
            EvalSet { coords, values }
        });
        WindowSetup {
            segment: k,
            problem: self.segment_problem(k),
            span,
            ic: self.ic_for(k, finished),
            eval,
        }
    }

    /// Trains until the plan is done, or until `budget` optimizer steps have
    /// been taken in this call.
    pub fn run(
        &self,
        progress: &mut Progress,
        eval: Option<&EvalSource<'_>>,
        budget: Option<u64>,
        sink: &mut Vec<MetricsRecord>,
    ) -> Result<()> {
        let mut left = budget.unwrap_or(u64::MAX);
        while !self.is_done(progress) {
            let k = progress.segment;
            let cfg = self.segment_config(k);
            let setup = self.setup(k, &progress.finished, eval);
            let before = progress.state.step;
            let stop = before.saturating_add(left);
            train_window(&mut progress.state, &setup, &cfg, Some(stop), sink)?;
            left -= progress.state.step - before;
            if progress.state.step < cfg.steps {
                return Ok(());
            }
            progress.finished.push(progress.state.net.clone());
            if k + 1 < self.segments() {
                progress.state = self.segment_state(k + 1, &progress.finished)?;
                progress.segment = k + 1;
            }
            if left == 0 {
                return Ok(());
            }
        }
        Ok(())
    }

    /// Prediction at global coordinates using each point's own window.
    pub fn predict(&self, finished: &[Network], coords: &Tensor) -> Result<Tensor> {
        if finished.is_empty() {
            return Err(Error::InvalidArgument("no trained segment".into()));
        }
        if !self.problem.spec().time_dependent || self.is_curriculum() {
            return finished[finished.len() - 1].predict(coords);
        }
        let span = self.span();
        let out = self.net.output_dim;
        let mut result = Tensor::zeros(&[coords.rows(), out]);
        for (w, net) in finished.iter().enumerate() {
            let rows: Vec<usize> = (0..coords.rows())
                .filter(|&i| {
                    let t = coords.get(i, 0);
                    let k = ((t / span).floor().max(0.0) as usize).min(self.train.windows - 1);
                    k == w
                })
                .collect();
            if rows.is_empty() {
                continue;
            }
            let local = Tensor::from_fn(rows.len(), coords.cols(), |i, j| {
                let v = coords.get(rows[i], j);
                if j == 0 {
                    v - w as f64 * span
                } else {
                    v
                }
            });
            let pred = net.predict(&local)?;
            for (i, &r) in rows.iter().enumerate() {
                for c in 0..out {
                    result.set(r, c, pred.get(i, c));
                }
            }
        }
        Ok(result)
    }
}
