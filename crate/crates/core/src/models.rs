//! Parameterized networks: multilayer perceptrons for the feature map,
//! classifier and critic, and a gated recurrent summarizer of past domains.
//!
//! Parameters are plain values. To differentiate, bind them onto a [`Tape`]
//! (as trainable leaves or frozen constants) and run the bound network.

use serde::{Deserialize, Serialize};

use crate::diffcore::{rng_fill, Array, Distribution, NodeId, ParamId, Rng, Tape};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// One affine layer `x W + b` followed by an activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in × out`
    pub weight: Array,
    /// `out`
    pub bias: Array,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

fn glorot(seed: u64, fan_in: usize, fan_out: usize) -> Result<Array> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng_fill(
        seed,
        &[fan_in, fan_out],
        Distribution::Uniform {
            low: -limit,
            high: limit,
        },
    )
}

fn layer_seed(seed: u64, tag: u64, index: usize) -> u64 {
    Rng::keyed(seed, &[tag, index as u64]).next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases. `sizes` lists every width from
    /// input to output, so `sizes.len() == activations.len() + 1`.
    pub fn init(seed: u64, sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return invalid("an MLP needs at least one layer (two sizes)");
        }
        if activations.len() != sizes.len() - 1 {
            return invalid(format!(
                "{} layers but {} activations",
                sizes.len() - 1,
                activations.len()
            ));
        }
        if sizes.contains(&0) {
            return invalid("layer sizes must be positive");
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &activation))| {
                Ok(Layer {
                    weight: glorot(layer_seed(seed, 0x4D4C50, i), w[0], w[1])?,
                    bias: Array::zeros(&[w[1]]),
                    activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// Validates that consecutive layers chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("an MLP needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.out_dim()] {
                return invalid(format!(
                    "layer {i}: weight {:?} and bias {:?} disagree",
                    l.weight.shape(),
                    l.bias.shape()
                ));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(ParamId, &Array)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (ParamId::new(format!("{prefix}.{i}.w")), &l.weight),
                    (ParamId::new(format!("{prefix}.{i}.b")), &l.bias),
                ]
            })
            .collect()
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(ParamId, &mut Array)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (ParamId::new(format!("{prefix}.{i}.w")), &mut l.weight),
                    (ParamId::new(format!("{prefix}.{i}.b")), &mut l.bias),
                ]
            })
            .collect()
    }

    /// Places the parameters on `tape`; frozen networks become constants.
    pub fn bind(&self, tape: &mut Tape, prefix: &str, trainable: bool) -> Result<BoundMlp> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (
                    tape.param(ParamId::new(format!("{prefix}.{i}.w")), l.weight.clone())?,
                    tape.param(ParamId::new(format!("{prefix}.{i}.b")), l.bias.clone())?,
                )
            } else {
                (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
            };
            layers.push((w, b, l.activation));
        }
        Ok(BoundMlp {
            layers,
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
        })
    }

    /// Forward pass on plain values.
    pub fn predict(&self, x: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, "m", false)?;
        let xn = tape.constant(x.clone());
        let out = net.forward(&mut tape, xn)?;
        Ok(tape.value(out).clone())
    }
}

/// An [`MlpParams`] placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId, Activation)>,
    input_dim: usize,
    output_dim: usize,
}

impl BoundMlp {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Row-wise forward of an `n × in` batch.
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Shape {
                op: "mlp forward",
                shapes: format!("input {shape:?} vs expected [n, {}]", self.input_dim),
            });
        }
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let z = tape.matmul(h, w)?;
            let z = tape.add_broadcast(z, b)?;
            h = act.apply(tape, z)?;
        }
        Ok(h)
    }
}

/// Feature map `g`: rows of `x` to rows of features.
pub fn feature_forward(tape: &mut Tape, g: &BoundMlp, x: NodeId) -> Result<NodeId> {
    g.forward(tape, x)
}

/// Classifier `h`: features to logits.
pub fn classifier_forward(tape: &mut Tape, h: &BoundMlp, features: NodeId) -> Result<NodeId> {
    h.forward(tape, features)
}

/// Critic: one scalar per row, returned as an `n × 1` column.
pub fn critic_forward(tape: &mut Tape, critic: &BoundMlp, features: NodeId) -> Result<NodeId> {
    if critic.output_dim() != 1 {
        return invalid(format!(
            "critic must end in a single unit, got {}",
            critic.output_dim()
        ));
    }
    critic.forward(tape, features)
}

/// Gate weights of one recurrent layer; each matrix is `(hidden + input) × hidden`
/// acting on the concatenation `[state, input]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w_update: Array,
    pub b_update: Array,
    pub w_reset: Array,
    pub b_reset: Array,
    pub w_candidate: Array,
    pub b_candidate: Array,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: Vec<GruLayer>,
    /// `hidden × input_dim` readout of the top state.
    pub readout_w: Array,
    pub readout_b: Array,
}

impl RecurrentParams {
    pub fn init(seed: u64, input_dim: usize, hidden: usize, layer_count: usize) -> Result<Self> {
        if layer_count == 0 || hidden == 0 || input_dim == 0 {
            return invalid("recurrent summarizer needs positive sizes and >= 1 layer");
        }
        let mut layers = Vec::with_capacity(layer_count);
        for l in 0..layer_count {
            let inp = if l == 0 { input_dim } else { hidden };
            let fan_in = hidden + inp;
            let s = |g: u64| layer_seed(seed, 0x475255 + g, l);
            layers.push(GruLayer {
                w_update: glorot(s(0), fan_in, hidden)?,
                b_update: Array::zeros(&[hidden]),
                w_reset: glorot(s(1), fan_in, hidden)?,
                b_reset: Array::zeros(&[hidden]),
                w_candidate: glorot(s(2), fan_in, hidden)?,
                b_candidate: Array::zeros(&[hidden]),
            });
        }
        Ok(Self {
            input_dim,
            hidden,
            layers,
            readout_w: glorot(layer_seed(seed, 0x524F, 0), hidden, input_dim)?,
            readout_b: Array::zeros(&[input_dim]),
        })
    }

    /// All-zero parameters; the update gate sits at one half.
    pub fn zeros(input_dim: usize, hidden: usize, layer_count: usize) -> Result<Self> {
        let mut p = Self::init(0, input_dim, hidden, layer_count)?;
        for (_, a) in p.named_params_mut("r") {
            *a = Array::zeros(a.shape());
        }
        Ok(p)
    }

    fn names(prefix: &str, l: usize) -> [String; 6] {
        ["wz", "bz", "wr", "br", "wh", "bh"].map(|n| format!("{prefix}.{l}.{n}"))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(ParamId, &Array)> {
        let mut out = Vec::new();
        for (l, g) in self.layers.iter().enumerate() {
            let arrays = [
                &g.w_update,
                &g.b_update,
                &g.w_reset,
                &g.b_reset,
                &g.w_candidate,
                &g.b_candidate,
            ];
            for (name, a) in Self::names(prefix, l).into_iter().zip(arrays) {
                out.push((ParamId::new(name), a));
            }
        }
        out.push((ParamId::new(format!("{prefix}.out.w")), &self.readout_w));
        out.push((ParamId::new(format!("{prefix}.out.b")), &self.readout_b));
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(ParamId, &mut Array)> {
        let mut out = Vec::new();
        for (l, g) in self.layers.iter_mut().enumerate() {
            let arrays = [
                &mut g.w_update,
                &mut g.b_update,
                &mut g.w_reset,
                &mut g.b_reset,
                &mut g.w_candidate,
                &mut g.b_candidate,
            ];
            for (name, a) in Self::names(prefix, l).into_iter().zip(arrays) {
                out.push((ParamId::new(name), a));
            }
        }
        out.push((ParamId::new(format!("{prefix}.out.w")), &mut self.readout_w));
        out.push((ParamId::new(format!("{prefix}.out.b")), &mut self.readout_b));
        out
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str, trainable: bool) -> Result<BoundRecurrent> {
        let put = |tape: &mut Tape, id: ParamId, a: &Array| {
            if trainable {
                tape.param(id, a.clone())
            } else {
                Ok(tape.constant(a.clone()))
            }
        };
        let mut nodes = Vec::new();
        for (id, a) in self.named_params(prefix) {
            nodes.push(put(tape, id, a)?);
        }
        let layers = nodes[..self.layers.len() * 6]
            .chunks(6)
            .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
            .collect();
        let k = nodes.len();
        Ok(BoundRecurrent {
            layers,
            readout: (nodes[k - 2], nodes[k - 1]),
            input_dim: self.input_dim,
            hidden: self.hidden,
        })
    }
}

/// Hidden vector per layer plus the number of domains absorbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryState {
    pub hidden: Vec<Vec<f64>>,
    pub count: usize,
}

impl SummaryState {
    pub fn zeros(params: &RecurrentParams) -> Self {
        Self {
            hidden: vec![vec![0.0; params.hidden]; params.layers.len()],
            count: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundRecurrent {
    /// Per layer: wz, bz, wr, br, wh, bh.
    layers: Vec<[NodeId; 6]>,
    readout: (NodeId, NodeId),
    input_dim: usize,
    hidden: usize,
}

/// Result of one summarizer step.
#[derive(Clone, Debug)]
pub struct SummaryStep {
    pub state: SummaryState,
    /// Emitted `1 × input_dim` readout of the new top-layer state.
    pub readout: NodeId,
}

/// Absorbs one domain summary vector (`[m]` or `[1, m]`) into the state:
/// `z = σ([s,x]Wz+bz)`, `r = σ([s,x]Wr+br)`, `s̃ = tanh([r⊙s,x]Wh+bh)`,
/// `s' = (1-z)⊙s + z⊙s̃`, stacked over layers, then a linear readout.
pub fn summarize_step(
    tape: &mut Tape,
    net: &BoundRecurrent,
    state: &SummaryState,
    summary: NodeId,
) -> Result<SummaryStep> {
    let shape = tape.shape(summary).to_vec();
    let x = match shape.as_slice() {
        [m] if *m == net.input_dim => tape.broadcast_to(summary, &[1, *m])?,
        [1, m] if *m == net.input_dim => summary,
        _ => {
            return Err(Error::Shape {
                op: "summarize_step",
                shapes: format!("summary {shape:?} vs input size {}", net.input_dim),
            })
        }
    };
    if state.hidden.len() != net.layers.len()
        || state.hidden.iter().any(|h| h.len() != net.hidden)
    {
        return invalid("summary state does not match the recurrent parameters");
    }
    let ones = tape.constant(Array::full(&[1, net.hidden], 1.0));
    let mut input = x;
    let mut new_hidden = Vec::with_capacity(net.layers.len());
    for (l, &[wz, bz, wr, br, wh, bh]) in net.layers.iter().enumerate() {
        let s = tape.constant(Array::raw(vec![1, net.hidden], state.hidden[l].clone()));
        let sx = tape.concat(&[s, input], 1)?;
        let z = tape.matmul(sx, wz)?;
        let z = tape.add_broadcast(z, bz)?;
        let z = tape.sigmoid(z)?;
        let r = tape.matmul(sx, wr)?;
        let r = tape.add_broadcast(r, br)?;
        let r = tape.sigmoid(r)?;
        let rs = tape.mul(r, s)?;
        let rsx = tape.concat(&[rs, input], 1)?;
        let cand = tape.matmul(rsx, wh)?;
        let cand = tape.add_broadcast(cand, bh)?;
        let cand = tape.tanh(cand)?;
        let keep = tape.sub(ones, z)?;
        let kept = tape.mul(keep, s)?;
        let moved = tape.mul(z, cand)?;
        let next = tape.add(kept, moved)?;
        new_hidden.push(tape.value(next).data().to_vec());
        input = next;
    }
    let (ow, ob) = net.readout;
    let out = tape.matmul(input, ow)?;
    let readout = tape.add_broadcast(out, ob)?;
    Ok(SummaryStep {
        state: SummaryState {
            hidden: new_hidden,
            count: state.count + 1,
        },
        readout,
    })
}
