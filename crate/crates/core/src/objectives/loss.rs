use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, NodeId, Tape};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropyBounded,
    Hinge,
}

/// A bounded, Lipschitz classification loss.
///
/// `lipschitz` is reported in the logit-score metric: 1 for both kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub bound: f64,
    pub lipschitz: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::cross_entropy(5.0)
    }
}

impl LossSpec {
    pub fn cross_entropy(bound: f64) -> Self {
        Self {
            kind: LossKind::CrossEntropyBounded,
            bound,
            lipschitz: 1.0,
        }
    }

    pub fn hinge(bound: f64) -> Self {
        Self {
            kind: LossKind::Hinge,
            bound,
            lipschitz: 1.0,
        }
    }
}

/// Mean loss node plus the per-sample values.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub mean: NodeId,
    pub per_sample: Vec<f64>,
}

fn one_hot(labels: &[usize], k: usize, skip: Option<&[usize]>) -> Array {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        let col = skip.map_or(y, |s| s[i]);
        data[i * k + col] = 1.0;
    }
    Array::raw(vec![labels.len(), k], data)
}

fn row_max(logits: &Array) -> Array {
    let data = (0..logits.rows())
        .map(|i| logits.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Array::raw(vec![logits.rows(), 1], data)
}

/// Evaluates `spec` on `n × k` logits; both forms are clipped at `spec.bound`.
///
/// Bounded CE is `min(-log softmax_y, M)`; hinge is the Crammer-Singer
/// multiclass margin `max(0, 1 + max_{j≠y} s_j - s_y)` clipped at `M`.
pub fn loss_eval(tape: &mut Tape, spec: &LossSpec, logits: NodeId, labels: &[usize]) -> Result<LossValue> {
    let lv = tape.value(logits).clone();
    if lv.shape().len() != 2 || lv.rows() != labels.len() {
        return Err(Error::Shape {
            op: "loss",
            shapes: format!("logits {:?} for {} labels", lv.shape(), labels.len()),
        });
    }
    if !lv.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    if !(spec.bound > 0.0) {
        return invalid("loss bound must be positive");
    }
    let (n, k) = (lv.rows(), lv.cols());
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return invalid(format!("label {y} outside [0, {k})"));
    }
    let raw = match spec.kind {
        LossKind::CrossEntropyBounded => {
            let c = tape.constant(row_max(&lv));
            let c = tape.broadcast_to(c, &[n, k])?;
            let shifted = tape.sub(logits, c)?;
            let e = tape.exp(shifted)?;
            let s = tape.sum_to(e, &[n, 1])?;
            let lse = tape.log(s)?;
            let mask = tape.constant(one_hot(labels, k, None));
            let picked = tape.mul(shifted, mask)?;
            let picked = tape.sum_to(picked, &[n, 1])?;
            tape.sub(lse, picked)?
        }
        LossKind::Hinge => {
            let rival: Vec<usize> = labels
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let row = lv.row(i);
                    (0..k)
                        .filter(|&j| j != y)
                        .fold(None, |best: Option<usize>, j| match best {
                            Some(b) if row[b] >= row[j] => Some(b),
                            _ => Some(j),
                        })
                        .unwrap_or(y)
                })
                .collect();
            let own = tape.constant(one_hot(labels, k, None));
            let other = tape.constant(one_hot(labels, k, Some(&rival)));
            let diff = {
                let o = tape.mul(logits, other)?;
                let s = tape.mul(logits, own)?;
                let d = tape.sub(o, s)?;
                tape.sum_to(d, &[n, 1])?
            };
            let one = tape.constant(Array::full(&[n, 1], 1.0));
            let m = tape.add(diff, one)?;
            tape.relu(m)?
        }
    };
    // clip: keep the graph where below the bound, constant M elsewhere
    let rv = tape.value(raw).clone();
    let keep: Vec<f64> = rv.data().iter().map(|&v| if v < spec.bound { 1.0 } else { 0.0 }).collect();
    let fill: Vec<f64> = keep.iter().map(|&m| (1.0 - m) * spec.bound).collect();
    let keep = tape.constant(Array::raw(vec![n, 1], keep));
    let fill = tape.constant(Array::raw(vec![n, 1], fill));
    let kept = tape.mul(raw, keep)?;
    let clipped = tape.add(kept, fill)?;
    let per_sample = tape.value(clipped).data().to_vec();
    let mean = tape.mean(clipped)?;
    Ok(LossValue { mean, per_sample })
}

/// Fraction of rows whose argmax (first maximum) equals the label.
pub fn accuracy(logits: &Array, labels: &[usize]) -> f64 {
    let hits = (0..logits.rows())
        .filter(|&i| {
            let row = logits.row(i);
            let arg = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            arg == labels[i]
        })
        .count();
    hits as f64 / logits.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamId;

    fn eval(spec: LossSpec, logits: Array, labels: &[usize]) -> (f64, Vec<f64>) {
        let mut t = Tape::new();
        let l = t.constant(logits);
        let v = loss_eval(&mut t, &spec, l, labels).unwrap();
        (t.value(v.mean).item(), v.per_sample)
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let (m, _) = eval(LossSpec::cross_entropy(5.0), Array::zeros(&[3, 2]), &[0, 1, 1]);
        assert!((m - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let l = Array::new(vec![2, 2], vec![60.0, 0.0, 0.0, 60.0]).unwrap();
        let (m, _) = eval(LossSpec::cross_entropy(5.0), l, &[0, 1]);
        assert!(m < 1e-20);
    }

    #[test]
    fn adversarial_logits_are_clamped() {
        // true-class probability e^-10 (up to the tiny partner mass): raw CE ≈ 10
        let l = Array::new(vec![1, 2], vec![0.0, 10.0]).unwrap();
        let mut t = Tape::new();
        let ln = t.constant(l.clone());
        let raw = loss_eval(&mut t, &LossSpec::cross_entropy(100.0), ln, &[0]).unwrap();
        assert!((raw.per_sample[0] - 10.0).abs() < 1e-4);
        let (m, per) = eval(LossSpec::cross_entropy(3.0), l, &[0]);
        assert_eq!(per, vec![3.0]);
        assert_eq!(m, 3.0);
    }

    #[test]
    fn clamped_samples_carry_no_gradient() {
        let mut t = Tape::new();
        let l = t
            .param(ParamId::new("l"), Array::new(vec![2, 2], vec![0.0, 10.0, 0.5, 0.0]).unwrap())
            .unwrap();
        let v = loss_eval(&mut t, &LossSpec::cross_entropy(3.0), l, &[0, 0]).unwrap();
        let g = t.backward(v.mean, &[ParamId::new("l")]).unwrap();
        let g = g.by_name("l").unwrap().data();
        assert_eq!(&g[..2], &[0.0, 0.0]);
        assert!(g[2] != 0.0);
    }

    #[test]
    fn hinge_values() {
        let l = Array::new(vec![3, 3], vec![2.0, 0.0, 0.5, 0.0, 0.2, 0.0, 0.0, 9.0, 0.0]).unwrap();
        let (_, per) = eval(LossSpec::hinge(4.0), l, &[0, 1, 0]);
        assert_eq!(per[0], 0.0);
        assert!((per[1] - 0.8).abs() < 1e-15);
        assert_eq!(per[2], 4.0);
    }

    #[test]
    fn bad_labels_and_bound() {
        let mut t = Tape::new();
        let l = t.constant(Array::zeros(&[1, 2]));
        assert!(loss_eval(&mut t, &LossSpec::cross_entropy(1.0), l, &[2]).is_err());
        assert!(loss_eval(&mut t, &LossSpec::cross_entropy(0.0), l, &[0]).is_err());
    }

    #[test]
    fn argmax_flip() {
        let a = Array::new(vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(accuracy(&a, &[0, 1]), 1.0);
        assert_eq!(accuracy(&a, &[1, 0]), 0.0);
    }
}
