use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::align::{alignment_gap, gradient_penalty};
use super::loss::{accuracy, loss_eval, LossSpec};
use super::optim::{Optimizer, OptimizerKind};
use crate::diffcore::{Array, GradientMap, NodeId, ParamId, Rng, Tape};
use crate::domains::{DomainBatch, DomainSequence};
use crate::error::{invalid, Error, Result};
use crate::models::{
    classifier_forward, feature_forward, summarize_step, Activation, MlpParams, RecurrentParams,
    SummaryState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub gp_factor: f64,
    pub k_critic: usize,
    pub lr_model: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub epochs_per_domain: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub loss: LossSpec,
    pub labeled_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gp_factor: 5.0,
            k_critic: 5,
            lr_model: 1e-3,
            lr_critic: 5e-4,
            batch_size: 64,
            epochs_per_domain: 20,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            loss: LossSpec::default(),
            labeled_target: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| invalid(format!("{field}: {why}"));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda", "must be finite and >= 0");
        }
        if !(self.gp_factor >= 0.0) || !self.gp_factor.is_finite() {
            return bad("gp_factor", "must be finite and >= 0");
        }
        if self.k_critic == 0 {
            return bad("k_critic", "must be >= 1");
        }
        if !(self.lr_model > 0.0) || !self.lr_model.is_finite() {
            return bad("lr_model", "must be > 0");
        }
        if !(self.lr_critic > 0.0) || !self.lr_critic.is_finite() {
            return bad("lr_critic", "must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.epochs_per_domain == 0 {
            return bad("epochs_per_domain", "must be >= 1");
        }
        if !(self.loss.bound > 0.0) || !(self.loss.lipschitz > 0.0) {
            return bad("loss", "bound and lipschitz must be > 0");
        }
        Ok(())
    }
}

/// Network sizes. `g` is `input → feature_hidden → feature_dim`, `h` is
/// linear on features, the critic is `feature_dim → critic_hidden → 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub feature_hidden: usize,
    pub critic_hidden: usize,
    pub summarizer_hidden: usize,
    pub summarizer_layers: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            classes,
            feature_dim: 8,
            feature_hidden: 32,
            critic_hidden: 32,
            summarizer_hidden: 32,
            summarizer_layers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summarizer {
    pub params: RecurrentParams,
    pub state: SummaryState,
}

/// Feature map, classifier, critic and the optional temporal summarizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationModel {
    pub g: MlpParams,
    pub h: MlpParams,
    pub critic: MlpParams,
    pub summarizer: Option<Summarizer>,
}

impl AdaptationModel {
    pub fn init(seed: u64, arch: &Architecture, temporal: bool) -> Result<Self> {
        let a = arch;
        if a.input_dim == 0 || a.classes < 2 || a.feature_dim == 0 || a.feature_hidden == 0 || a.critic_hidden == 0 {
            return invalid("architecture sizes must be positive with at least 2 classes");
        }
        let key = |k: u64| Rng::keyed(seed, &[k]).next_u64();
        let g = MlpParams::init(
            key(1),
            &[a.input_dim, a.feature_hidden, a.feature_dim],
            &[Activation::Relu, Activation::Tanh],
        )?;
        let h = MlpParams::init(key(2), &[a.feature_dim, a.classes], &[Activation::Identity])?;
        let critic = MlpParams::init(
            key(3),
            &[a.feature_dim, a.critic_hidden, 1],
            &[Activation::Relu, Activation::Identity],
        )?;
        let summarizer = if temporal {
            let params = RecurrentParams::init(key(4), a.feature_dim, a.summarizer_hidden, a.summarizer_layers)?;
            let state = SummaryState::zeros(&params);
            Some(Summarizer { params, state })
        } else {
            None
        };
        Ok(Self { g, h, critic, summarizer })
    }

    pub fn features(&self, x: &Array) -> Result<Array> {
        self.g.predict(x)
    }

    pub fn logits(&self, x: &Array) -> Result<Array> {
        self.h.predict(&self.g.predict(x)?)
    }

    pub fn accuracy(&self, batch: &DomainBatch) -> Result<f64> {
        Ok(accuracy(&self.logits(&batch.features)?, &batch.labels))
    }

    /// Mean clipped loss over a full batch.
    pub fn loss(&self, batch: &DomainBatch, spec: &LossSpec) -> Result<f64> {
        let mut tape = Tape::new();
        let l = tape.constant(self.logits(&batch.features)?);
        let v = loss_eval(&mut tape, spec, l, &batch.labels)?;
        Ok(tape.value(v.mean).item())
    }

    fn model_params_mut(&mut self) -> Vec<(ParamId, &mut Array)> {
        let mut out = self.g.named_params_mut("g");
        out.extend(self.h.named_params_mut("h"));
        if let Some(s) = self.summarizer.as_mut() {
            out.extend(s.params.named_params_mut("s"));
        }
        out
    }

    fn model_ids(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self.g.named_params("g").into_iter().map(|p| p.0).collect();
        out.extend(self.h.named_params("h").into_iter().map(|p| p.0));
        if let Some(s) = &self.summarizer {
            out.extend(s.params.named_params("s").into_iter().map(|p| p.0));
        }
        out
    }

    /// Every parameter array in a fixed order, summary state included.
    pub fn arrays(&self) -> Vec<(String, Array)> {
        let mut out: Vec<(String, Array)> = Vec::new();
        for (prefix, net) in [("g", &self.g), ("h", &self.h), ("c", &self.critic)] {
            out.extend(net.named_params(prefix).into_iter().map(|(id, a)| (id.0, a.clone())));
        }
        if let Some(s) = &self.summarizer {
            out.extend(s.params.named_params("s").into_iter().map(|(id, a)| (id.0, a.clone())));
            for (l, h) in s.state.hidden.iter().enumerate() {
                out.push((format!("s.state.{l}"), Array::raw(vec![1, h.len()], h.clone())));
            }
            out.push(("s.count".into(), Array::raw(vec![1, 1], vec![s.state.count as f64])));
        }
        out
    }

    /// Inverse of [`arrays`](Self::arrays) for a model with the same layout.
    pub fn set_arrays(&mut self, arrays: &[Array]) -> Result<()> {
        let expected = self.arrays();
        if expected.len() != arrays.len() {
            return invalid(format!("expected {} arrays, got {}", expected.len(), arrays.len()));
        }
        for ((name, e), a) in expected.iter().zip(arrays) {
            if e.shape() != a.shape() {
                return Err(Error::Shape {
                    op: "set_arrays",
                    shapes: format!("{name}: {:?} vs {:?}", e.shape(), a.shape()),
                });
            }
        }
        let mut it = arrays.iter();
        let mut slots: Vec<&mut Array> = Vec::new();
        for (_, p) in self.g.named_params_mut("g") {
            slots.push(p);
        }
        for (_, p) in self.h.named_params_mut("h") {
            slots.push(p);
        }
        for (_, p) in self.critic.named_params_mut("c") {
            slots.push(p);
        }
        let summ = self.summarizer.as_mut().map(|s| (&mut s.params, &mut s.state));
        let state = match summ {
            Some((params, state)) => {
                for (_, p) in params.named_params_mut("s") {
                    slots.push(p);
                }
                Some(state)
            }
            None => None,
        };
        for slot in slots {
            *slot = it.next().expect("length checked").clone();
        }
        if let Some(state) = state {
            for h in state.hidden.iter_mut() {
                *h = it.next().expect("length checked").data().to_vec();
            }
            state.count = it.next().expect("length checked").item() as usize;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    NoAdaptation,
    Direct,
    Gradual,
    GradualTemporal,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [
        ScheduleKind::NoAdaptation,
        ScheduleKind::Direct,
        ScheduleKind::Gradual,
        ScheduleKind::GradualTemporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::NoAdaptation => "no_adaptation",
            ScheduleKind::Direct => "direct",
            ScheduleKind::Gradual => "gradual",
            ScheduleKind::GradualTemporal => "gradual_temporal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown schedule {s:?}")))
    }

    /// Number of resumable stages for a sequence of `t_len` domains.
    pub fn stages(self, t_len: usize) -> usize {
        match self {
            ScheduleKind::NoAdaptation | ScheduleKind::Direct => 1,
            ScheduleKind::Gradual | ScheduleKind::GradualTemporal => t_len - 1,
        }
    }
}

/// Averages over one epoch; `target_acc` is measured on the evaluation batch
/// at the end of the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub t: usize,
    pub epoch: usize,
    pub class_loss: f64,
    pub alignment: f64,
    pub gp: f64,
    pub target_acc: f64,
    pub wall_ms: u64,
}

/// Where a pair sits inside a schedule: seeds the batch order and labels the metrics.
#[derive(Clone, Copy, Debug)]
pub struct PairContext<'a> {
    pub stage: usize,
    pub t: usize,
    pub eval: &'a DomainBatch,
    pub epochs: usize,
}

fn diverged(ctx: &PairContext, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged(format!("stage {} (t={}): non-finite {what}", ctx.stage, ctx.t)),
        other => other,
    }
}

/// Cyclic batches over a keyed permutation.
fn batch_indices(perm: &[usize], batch: usize, b: usize) -> Vec<usize> {
    (0..b).map(|j| perm[(batch * b + j) % perm.len()]).collect()
}

fn mean_rows(a: &Array) -> Array {
    Array::raw(vec![1, a.cols()], a.column_means())
}

/// One pass of the primal-dual objective on a (source, target) pair.
///
/// Per batch: `k_critic` ascent steps on `gap - gp_factor·GP` over detached
/// features, then one descent step on the labeled loss plus `λ·gap` with the
/// critic frozen. With `target = None` or `λ = 0` the critic is skipped and
/// the update is plain ERM.
pub fn adapt_pair(
    model: &mut AdaptationModel,
    source: &DomainBatch,
    target: Option<&DomainBatch>,
    cfg: &TrainConfig,
    labeled_target: bool,
    ctx: PairContext,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if source.n() == 0 || target.is_some_and(|t| t.n() == 0) {
        return invalid("adapt_pair needs non-empty batches");
    }
    let d = model.g.input_dim();
    if source.d() != d || target.is_some_and(|t| t.d() != d) || ctx.eval.d() != d {
        return Err(Error::Shape {
            op: "adapt_pair",
            shapes: format!("model input {d}, source {}, eval {}", source.d(), ctx.eval.d()),
        });
    }
    let align = target.is_some() && cfg.lambda > 0.0;
    let with_target_loss = target.is_some() && labeled_target;
    let mut opt_model = Optimizer::new(cfg.optimizer, cfg.lr_model);
    let mut opt_critic = Optimizer::new(cfg.optimizer, cfg.lr_critic);
    let n_max = source.n().max(target.map_or(0, |t| t.n()));
    let b = cfg.batch_size.min(n_max);
    let batches = n_max.div_ceil(b);
    let ids = model.model_ids();
    let mut out = Vec::with_capacity(ctx.epochs);

    for epoch in 0..ctx.epochs {
        let clock = Instant::now();
        let key = [ctx.stage as u64, epoch as u64];
        let perm_s = Rng::keyed(cfg.seed, &[key[0], key[1], 0]).permutation(source.n());
        let perm_t = target.map(|t| Rng::keyed(cfg.seed, &[key[0], key[1], 1]).permutation(t.n()));
        let (mut sum_loss, mut sum_gap, mut sum_gp) = (0.0, 0.0, 0.0);

        for bi in 0..batches {
            let sb = source.subset(&batch_indices(&perm_s, bi, b));
            let tb = match (target, &perm_t) {
                (Some(t), Some(p)) => Some(t.subset(&batch_indices(p, bi, b))),
                _ => None,
            };

            if let (true, Some(tb)) = (align, &tb) {
                let fs = model.features(&sb.features).map_err(|e| diverged(&ctx, e))?;
                let ft = model.features(&tb.features).map_err(|e| diverged(&ctx, e))?;
                let fs = match &model.summarizer {
                    Some(s) => mix_with_summary(s, &fs)?,
                    None => fs,
                };
                for step in 0..cfg.k_critic {
                    let gp_seed = Rng::keyed(cfg.seed, &[key[0], key[1], bi as u64, step as u64, 2]).next_u64();
                    let (grads, _, gp) = critic_step(&model.critic, &fs, &ft, cfg.gp_factor, gp_seed)
                        .map_err(|e| diverged(&ctx, e))?;
                    opt_critic.step(model.critic.named_params_mut("c"), &grads)?;
                    if step + 1 == cfg.k_critic {
                        sum_gp += gp;
                    }
                }
            }

            let (grads, loss, gap) = model_step(model, &sb, tb.as_ref(), cfg, with_target_loss, align, &ids)
                .map_err(|e| diverged(&ctx, e))?;
            opt_model.step(model.model_params_mut(), &grads)?;
            sum_loss += loss;
            sum_gap += gap;
        }

        let target_acc = model.accuracy(ctx.eval).map_err(|e| diverged(&ctx, e))?;
        let m = EpochMetrics {
            t: ctx.t,
            epoch,
            class_loss: sum_loss / batches as f64,
            alignment: sum_gap / batches as f64,
            gp: sum_gp / batches as f64,
            target_acc,
            wall_ms: clock.elapsed().as_millis() as u64,
        };
        if !(m.class_loss.is_finite() && m.alignment.is_finite() && m.gp.is_finite()) {
            return Err(Error::Diverged(format!("stage {} (t={}) epoch {epoch}", ctx.stage, ctx.t)));
        }
        out.push(m);
    }
    Ok(out)
}

/// Replaces the first half of the source feature rows with the summarizer
/// readout (values only).
fn mix_with_summary(s: &Summarizer, fs: &Array) -> Result<Array> {
    let mut tape = Tape::new();
    let net = s.params.bind(&mut tape, "s", false)?;
    let x = tape.constant(fs.clone());
    let mixed = mixed_source(&mut tape, &net, &s.state, x)?;
    Ok(tape.value(mixed).clone())
}

fn mixed_source(
    tape: &mut Tape,
    net: &crate::models::BoundRecurrent,
    state: &SummaryState,
    fs: NodeId,
) -> Result<NodeId> {
    let (n, m) = (tape.shape(fs)[0], tape.shape(fs)[1]);
    let mean = tape.sum_to(fs, &[1, m])?;
    let mean = tape.scale(mean, 1.0 / n as f64)?;
    let step = summarize_step(tape, net, state, mean)?;
    let half = n / 2;
    if half == 0 {
        return Ok(fs);
    }
    let head = tape.broadcast_to(step.readout, &[half, m])?;
    let tail = tape.slice(fs, 0, half, n)?;
    tape.concat(&[head, tail], 0)
}

/// Gradients of `gp_factor·GP − gap(target, source)` for the critic under
/// prefix `"c"`, plus the gap and penalty values.
pub fn critic_step(critic: &MlpParams, fs: &Array, ft: &Array, gp_factor: f64, seed: u64) -> Result<(GradientMap, f64, f64)> {
    let mut tape = Tape::new();
    let c = critic.bind(&mut tape, "c", true)?;
    let a = tape.constant(ft.clone());
    let b = tape.constant(fs.clone());
    let gap = alignment_gap(&mut tape, &c, a, b)?;
    let gp = gradient_penalty(&mut tape, &c, ft, fs, seed)?;
    let gpw = tape.scale(gp, gp_factor)?;
    let obj = tape.sub(gpw, gap)?;
    let ids: Vec<ParamId> = critic.named_params("c").into_iter().map(|p| p.0).collect();
    let grads = tape.backward(obj, &ids)?;
    Ok((grads, tape.value(gap).item(), tape.value(gp).item()))
}

fn model_step(
    model: &AdaptationModel,
    sb: &DomainBatch,
    tb: Option<&DomainBatch>,
    cfg: &TrainConfig,
    with_target_loss: bool,
    align: bool,
    ids: &[ParamId],
) -> Result<(GradientMap, f64, f64)> {
    let mut tape = Tape::new();
    let g = model.g.bind(&mut tape, "g", true)?;
    let h = model.h.bind(&mut tape, "h", true)?;
    let xs = tape.constant(sb.features.clone());
    let fs = feature_forward(&mut tape, &g, xs)?;
    let ls = classifier_forward(&mut tape, &h, fs)?;
    let mut loss = loss_eval(&mut tape, &cfg.loss, ls, &sb.labels)?.mean;
    let mut ft = None;
    if let Some(tb) = tb {
        if with_target_loss || align {
            let xt = tape.constant(tb.features.clone());
            ft = Some(feature_forward(&mut tape, &g, xt)?);
        }
        if with_target_loss {
            let lt = classifier_forward(&mut tape, &h, ft.expect("set above"))?;
            let lt = loss_eval(&mut tape, &cfg.loss, lt, &tb.labels)?.mean;
            let both = tape.add(loss, lt)?;
            loss = tape.scale(both, 0.5)?;
        }
    }
    let class_loss = tape.value(loss).item();
    let mut gap_value = 0.0;
    let total = match (align, ft) {
        (true, Some(ft)) => {
            let critic = model.critic.bind(&mut tape, "c", false)?;
            let src = match &model.summarizer {
                Some(s) => {
                    let net = s.params.bind(&mut tape, "s", true)?;
                    mixed_source(&mut tape, &net, &s.state, fs)?
                }
                None => fs,
            };
            let gap = alignment_gap(&mut tape, &critic, ft, src)?;
            gap_value = tape.value(gap).item();
            let w = tape.scale(gap, cfg.lambda)?;
            tape.add(loss, w)?
        }
        _ => loss,
    };
    let grads = tape.backward(total, ids)?;
    Ok((grads, class_loss, gap_value))
}

/// Resumable position inside a schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    pub model: AdaptationModel,
    pub next_stage: usize,
}

pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct ScheduleOutcome {
    pub model: AdaptationModel,
    /// One entry per stage: the stage's final epoch.
    pub trace: Vec<EpochMetrics>,
    /// Every epoch of every stage run by this call.
    pub epochs: Vec<EpochMetrics>,
    pub completed: bool,
}

/// Trains `kind` on `train` from a fresh model; accuracy is measured on the
/// last domain of `eval`.
pub fn train_schedule(
    kind: ScheduleKind,
    train: &DomainSequence,
    eval: &DomainSequence,
    cfg: &TrainConfig,
    arch: &Architecture,
) -> Result<ScheduleOutcome> {
    let model = AdaptationModel::init(cfg.seed, arch, kind == ScheduleKind::GradualTemporal)?;
    let start = ScheduleState { model, next_stage: 0 };
    train_schedule_with(kind, train, eval, cfg, start, &mut |_, _| Ok(Control::Continue))
}

/// Runs the stages from `start.next_stage` on, calling `hook` after each one
/// with the new state and that stage's epochs.
pub fn train_schedule_with(
    kind: ScheduleKind,
    train: &DomainSequence,
    eval: &DomainSequence,
    cfg: &TrainConfig,
    start: ScheduleState,
    hook: &mut dyn FnMut(&ScheduleState, &[EpochMetrics]) -> Result<Control>,
) -> Result<ScheduleOutcome> {
    cfg.validate()?;
    let len = train.len();
    if len < 2 {
        return invalid("schedules need at least 2 domains");
    }
    if eval.len() != len {
        return invalid(format!("eval sequence has {} domains, train has {len}", eval.len()));
    }
    if (kind == ScheduleKind::GradualTemporal) != start.model.summarizer.is_some() {
        return invalid("the summarizer is present exactly for gradual_temporal");
    }
    let stages = kind.stages(len);
    let eval_last = eval.last();
    let mut state = start;
    let mut trace = Vec::new();
    let mut epochs = Vec::new();
    let mut completed = true;
    while state.next_stage < stages {
        let stage = state.next_stage;
        let run = match kind {
            ScheduleKind::NoAdaptation => {
                let ctx = PairContext { stage, t: 0, eval: eval_last, epochs: cfg.epochs_per_domain * (len - 1) };
                adapt_pair(&mut state.model, &train.domains[0], None, cfg, false, ctx)?
            }
            ScheduleKind::Direct => {
                let parts: Vec<&DomainBatch> = train.domains[..len - 1].iter().collect();
                let pooled = DomainBatch::pool(&parts)?;
                let ctx = PairContext { stage, t: len - 1, eval: eval_last, epochs: cfg.epochs_per_domain };
                adapt_pair(&mut state.model, &pooled, Some(train.last()), cfg, cfg.labeled_target, ctx)?
            }
            ScheduleKind::Gradual | ScheduleKind::GradualTemporal => {
                let ctx = PairContext { stage, t: stage + 1, eval: eval_last, epochs: cfg.epochs_per_domain };
                let (s, t) = (&train.domains[stage], &train.domains[stage + 1]);
                let run = adapt_pair(&mut state.model, s, Some(t), cfg, cfg.labeled_target, ctx)?;
                commit_summary(&mut state.model, s)?;
                run
            }
        };
        trace.push(run.last().expect("at least one epoch").clone());
        state.next_stage += 1;
        let control = hook(&state, &run)?;
        epochs.extend(run);
        if let Control::Stop = control {
            completed = state.next_stage >= stages;
            break;
        }
    }
    Ok(ScheduleOutcome { model: state.model, trace, epochs, completed })
}

/// Absorbs the finished source domain's mean feature vector into the summary.
fn commit_summary(model: &mut AdaptationModel, source: &DomainBatch) -> Result<()> {
    let feats = model.features(&source.features)?;
    let Some(s) = model.summarizer.as_mut() else { return Ok(()) };
    let mut tape = Tape::new();
    let net = s.params.bind(&mut tape, "s", false)?;
    let x = tape.constant(mean_rows(&feats));
    let step = summarize_step(&mut tape, &net, &s.state, x)?;
    s.state = step.state;
    Ok(())
}
