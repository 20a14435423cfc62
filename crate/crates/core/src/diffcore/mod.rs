//! Dense arrays, reverse-mode differentiation and deterministic sampling.

mod array;
mod rng;
mod tape;

pub use array::{broadcast_to, concat, matmul, pad, slice, sum_to, transpose, Array};
pub use rng::{rng_fill, Distribution, Rng};
pub use tape::{GradientMap, NodeId, ParamId, Tape};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn arr(shape: &[usize], data: &[f64]) -> Array {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[2], &[-1.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn matmul_forward_by_hand() {
        let mut t = Tape::new();
        let a = t.constant(arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = t.constant(arr(&[3, 1], &[1.0, 0.5, -1.0]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 1]);
        // 1 + 1 - 3, 4 + 2.5 - 6
        assert_eq!(t.value(c).data(), &[-1.0, 0.5]);
    }

    #[test]
    fn mean_forward() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[3], &[1.0, 2.0, 3.0]));
        let m = t.mean(x).unwrap();
        assert_eq!(t.value(m).item(), 2.0);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Array::zeros(&[2, 3]));
        let b = t.constant(Array::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = t.constant(Array::zeros(&[3]));
        assert!(t.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param(ParamId::new("x"), Array::scalar(3.0)).unwrap();
        let y = t.square(x).unwrap();
        let g = t.backward(y, &[ParamId::new("x")]).unwrap();
        assert_eq!(g.by_name("x").unwrap().item(), 6.0);
    }

    #[test]
    fn relu_gradient_is_zero_on_negatives() {
        let mut t = Tape::new();
        let x = t.param(ParamId::new("x"), Array::scalar(-1.0)).unwrap();
        let y = t.relu(x).unwrap();
        let g = t.backward(y, &[ParamId::new("x")]).unwrap();
        assert_eq!(g.by_name("x").unwrap().item(), 0.0);
        // subgradient at exactly zero is zero
        let mut t = Tape::new();
        let x = t.param(ParamId::new("x"), Array::scalar(0.0)).unwrap();
        let y = t.relu(x).unwrap();
        let g = t.backward(y, &[ParamId::new("x")]).unwrap();
        assert_eq!(g.by_name("x").unwrap().item(), 0.0);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.param(ParamId::new("x"), Array::zeros(&[2])).unwrap();
        let y = t.square(x).unwrap();
        assert!(matches!(
            t.backward(y, &[ParamId::new("x")]),
            Err(Error::NotScalar(_))
        ));
        let s = t.sum(y).unwrap();
        assert!(matches!(
            t.backward(s, &[ParamId::new("nope")]),
            Err(Error::UnknownParam(_))
        ));
        assert!(matches!(
            t.param(ParamId::new("x"), Array::zeros(&[1])),
            Err(Error::DuplicateParam(_))
        ));
    }

    #[test]
    fn backward_leaves_tape_unchanged_and_unreached_params_get_zeros() {
        let mut t = Tape::new();
        let x = t.param(ParamId::new("x"), arr(&[2], &[1.0, 2.0])).unwrap();
        t.param(ParamId::new("unused"), arr(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let s = t.square(x).unwrap();
        let s = t.sum(s).unwrap();
        let before = t.len();
        let g = t
            .backward(s, &[ParamId::new("x"), ParamId::new("unused")])
            .unwrap();
        assert_eq!(t.len(), before);
        assert_eq!(g.by_name("x").unwrap().data(), &[2.0, 4.0]);
        assert_eq!(g.by_name("unused").unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn input_gradient_of_linear_map_is_weight() {
        let mut t = Tape::new();
        let w = t.param(ParamId::new("w"), arr(&[3, 1], &[0.5, -2.0, 4.0])).unwrap();
        let x = t.constant(arr(&[1, 3], &[1.0, 1.0, 1.0]));
        let y = t.matmul(x, w).unwrap();
        let y = t.sum(y).unwrap();
        let gx = t.input_gradient(y, x).unwrap();
        assert_eq!(t.value(gx).data(), &[0.5, -2.0, 4.0]);
    }

    #[test]
    fn input_gradient_of_half_squared_norm_is_input() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[4], &[1.0, -2.0, 0.25, 3.0]));
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        let f = t.scale(s, 0.5).unwrap();
        let gx = t.input_gradient(f, x).unwrap();
        assert_eq!(t.value(gx).data(), t.value(x).data());
    }

    #[test]
    fn second_nesting_level_is_refused() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[2], &[1.0, 2.0]));
        let sq = t.square(x).unwrap();
        let f = t.sum(sq).unwrap();
        let gx = t.input_gradient(f, x).unwrap();
        let n = t.sum(gx).unwrap();
        let err = t.input_gradient(n, x).unwrap_err();
        assert_eq!(err.to_string(), "second-order nesting limit is one");
    }

    #[test]
    fn input_gradient_requires_leaf() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[2], &[1.0, 2.0]));
        let y = t.square(x).unwrap();
        let f = t.sum(y).unwrap();
        assert!(matches!(t.input_gradient(f, y), Err(Error::NotLeaf(_))));
    }

    #[test]
    fn second_order_through_input_gradient() {
        // f(x) = sum(w * x^2); df/dx = 2 w x; sum(df/dx) = 2 sum(w x) -> d/dw = 2x
        let mut t = Tape::new();
        let w = t.param(ParamId::new("w"), arr(&[2], &[3.0, -1.0])).unwrap();
        let x = t.constant(arr(&[2], &[0.5, 2.0]));
        let x2 = t.square(x).unwrap();
        let wx2 = t.mul(w, x2).unwrap();
        let f = t.sum(wx2).unwrap();
        let gx = t.input_gradient(f, x).unwrap();
        assert_eq!(t.value(gx).data(), &[3.0, -4.0]);
        let s = t.sum(gx).unwrap();
        let g = t.backward(s, &[ParamId::new("w")]).unwrap();
        assert_eq!(g.by_name("w").unwrap().data(), &[1.0, 4.0]);
    }

    #[test]
    fn non_finite_result_is_rejected() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[1], &[-1.0]));
        assert!(matches!(t.log(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn replay_reproduces_values_bit_exactly() {
        let mut t = Tape::new();
        let w = t
            .param(ParamId::new("w"), rng_fill(5, &[3, 4], Distribution::Normal { mean: 0.0, std: 1.0 }).unwrap())
            .unwrap();
        let x = t.constant(rng_fill(6, &[5, 3], Distribution::Uniform { low: -1.0, high: 1.0 }).unwrap());
        let h = t.matmul(x, w).unwrap();
        let h = t.tanh(h).unwrap();
        let e = t.exp(h).unwrap();
        let s = t.sum_to(e, &[5, 1]).unwrap();
        let l = t.log(s).unwrap();
        let m = t.mean(l).unwrap();
        let gx = t.input_gradient(m, x).unwrap();
        let gn = t.square(gx).unwrap();
        t.sum(gn).unwrap();
        let replayed = t.replay().unwrap();
        for (a, b) in replayed.iter().zip(t.values()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }
}
