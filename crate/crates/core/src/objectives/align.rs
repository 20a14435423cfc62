use crate::diffcore::{Array, NodeId, Rng, Tape};
use crate::error::{invalid, Error, Result};
use crate::models::{critic_forward, BoundMlp};
use crate::transport::resample_to_equal;

/// `mean critic(a) - mean critic(b)`, the dual estimate of W1 between the
/// two feature batches when the critic is 1-Lipschitz.
pub fn alignment_gap(tape: &mut Tape, critic: &BoundMlp, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (sa, sb) = (tape.shape(a).to_vec(), tape.shape(b).to_vec());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::Shape {
            op: "alignment gap",
            shapes: format!("{sa:?} and {sb:?}"),
        });
    }
    if sa[0] == 0 || sb[0] == 0 {
        return invalid("alignment gap of an empty batch");
    }
    let ca = critic_forward(tape, critic, a)?;
    let cb = critic_forward(tape, critic, b)?;
    let ma = tape.mean(ca)?;
    let mb = tape.mean(cb)?;
    tape.sub(ma, mb)
}

/// Row-wise interpolates `u·a + (1-u)·b` with `u ~ U(0,1)` per row.
/// The larger batch is first resampled down to the smaller size.
pub fn interpolates(a: &Array, b: &Array, seed: u64) -> Result<Array> {
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "interpolates",
            shapes: format!("{:?} and {:?}", a.shape(), b.shape()),
        });
    }
    let (a, b) = resample_to_equal(a, b, seed);
    let mut rng = Rng::keyed(seed, &[0x5550]);
    let c = a.cols();
    let mut data = Vec::with_capacity(a.len());
    for i in 0..a.rows() {
        let u = rng.uniform();
        data.extend(a.row(i).iter().zip(b.row(i)).map(|(x, y)| u * x + (1.0 - u) * y));
    }
    Array::new(vec![a.rows(), c], data)
}

/// Mean of `(‖∇_x critic(x̂)‖₂ - 1)²` over interpolates `x̂`, differentiable
/// with respect to the critic parameters.
pub fn gradient_penalty(tape: &mut Tape, critic: &BoundMlp, a: &Array, b: &Array, seed: u64) -> Result<NodeId> {
    let xhat = interpolates(a, b, seed)?;
    penalty_at(tape, critic, xhat)
}

/// Gradient penalty at fixed points `x` (`n × m`).
pub fn penalty_at(tape: &mut Tape, critic: &BoundMlp, x: Array) -> Result<NodeId> {
    let n = x.rows();
    let xn = tape.constant(x);
    let out = critic_forward(tape, critic, xn)?;
    // rows are independent, so the gradient of the sum is the per-row gradient
    let total = tape.sum(out)?;
    let gx = tape.input_gradient(total, xn)?;
    let sq = tape.square(gx)?;
    let sq = tape.sum_to(sq, &[n, 1])?;
    // sqrt has no derivative at 0; nudge only exactly-flat rows
    let flat: Vec<f64> = tape
        .value(sq)
        .data()
        .iter()
        .map(|&v| if v == 0.0 { 1e-24 } else { 0.0 })
        .collect();
    let sq = if flat.iter().any(|&v| v > 0.0) {
        let nudge = tape.constant(Array::new(vec![n, 1], flat)?);
        tape.add(sq, nudge)?
    } else {
        sq
    };
    let norm = tape.sqrt(sq)?;
    let one = tape.constant(Array::full(&[n, 1], 1.0));
    let dev = tape.sub(norm, one)?;
    let dev = tape.square(dev)?;
    tape.mean(dev)
}
