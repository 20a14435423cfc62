use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Rng, Tape};
use crate::domains::DomainSequence;
use crate::error::{invalid, Error, Result};
use crate::models::MlpParams;
use crate::objectives::{adapt_pair, loss_eval, AdaptationModel, Architecture, LossSpec, PairContext, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RandomInit,
    TrainingSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub g: MlpParams,
    pub h: MlpParams,
    pub provenance: Provenance,
}

impl Hypothesis {
    pub fn logits(&self, x: &Array) -> Result<Array> {
        self.h.predict(&self.g.predict(x)?)
    }
}

/// Finite stand-in for the hypothesis class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisPool {
    pub members: Vec<Hypothesis>,
}

impl HypothesisPool {
    /// `count` freshly initialised networks with keyed seeds.
    pub fn random(seed: u64, count: usize, arch: &Architecture) -> Result<Self> {
        let mut members = Vec::with_capacity(count);
        for i in 0..count {
            let m = AdaptationModel::init(Rng::keyed(seed, &[i as u64]).next_u64(), arch, false)?;
            members.push(Hypothesis { g: m.g, h: m.h, provenance: Provenance::RandomInit });
        }
        Ok(Self { members })
    }

    pub fn push_snapshot(&mut self, model: &AdaptationModel) {
        self.members.push(Hypothesis {
            g: model.g.clone(),
            h: model.h.clone(),
            provenance: Provenance::TrainingSnapshot,
        });
    }

    /// Trains one ERM epoch at a time on domains `0..T−1` in turn and keeps
    /// the model after each epoch.
    pub fn add_training_snapshots(
        &mut self,
        seq: &DomainSequence,
        arch: &Architecture,
        cfg: &TrainConfig,
        count: usize,
    ) -> Result<()> {
        if seq.len() < 2 {
            return invalid("snapshots need at least 2 domains");
        }
        let mut model = AdaptationModel::init(cfg.seed, arch, false)?;
        for i in 0..count {
            let dom = &seq.domains[i % (seq.len() - 1)];
            let ctx = PairContext { stage: i, t: dom.t, eval: dom, epochs: 1 };
            adapt_pair(&mut model, dom, None, cfg, false, ctx)?;
            self.push_snapshot(&model);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscReport {
    pub estimate: f64,
    pub argmax: usize,
    pub per_hypothesis: Vec<f64>,
}

/// Max over the pool of `L(T−1) − mean_{t<T−1} L(t)`, with `L(t)` the mean
/// clipped loss on the full domain `t`. A lower bound on the sup over the
/// class the pool is drawn from.
pub fn estimate_discrepancy(seq: &DomainSequence, pool: &HypothesisPool, loss: &LossSpec) -> Result<DiscReport> {
    if pool.is_empty() {
        return invalid("hypothesis pool is empty");
    }
    let len = seq.len();
    if len < 2 {
        return invalid("discrepancy needs at least 2 domains");
    }
    let mut per = Vec::with_capacity(pool.len());
    for (i, hyp) in pool.members.iter().enumerate() {
        if hyp.g.input_dim() != seq.d() || hyp.h.output_dim() != seq.k() || hyp.g.output_dim() != hyp.h.input_dim() {
            return Err(Error::Shape {
                op: "estimate_discrepancy",
                shapes: format!(
                    "hypothesis {i}: {}→{}→{} vs data d={} k={}",
                    hyp.g.input_dim(),
                    hyp.g.output_dim(),
                    hyp.h.output_dim(),
                    seq.d(),
                    seq.k()
                ),
            });
        }
        let mut losses = Vec::with_capacity(len);
        for dom in &seq.domains {
            let mut tape = Tape::new();
            let l = tape.constant(hyp.logits(&dom.features)?);
            let v = loss_eval(&mut tape, loss, l, &dom.labels)?;
            losses.push(tape.value(v.mean).item());
        }
        let past = losses[..len - 1].iter().sum::<f64>() / (len - 1) as f64;
        per.push(losses[len - 1] - past);
    }
    let argmax = (0..per.len()).fold(0, |b, i| if per[i] > per[b] { i } else { b });
    Ok(DiscReport { estimate: per[argmax], argmax, per_hypothesis: per })
}
