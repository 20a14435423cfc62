use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const TREE_GUARD: u128 = 10_000_000;

/// A finite class over `Z = {0, …, z_count−1}`; `functions[f][z]` is `f(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteInstance {
    pub z_count: usize,
    pub functions: Vec<Vec<f64>>,
    pub depth: usize,
}

impl FiniteInstance {
    /// `|Z|^(2^T − 1)`, or `None` on overflow.
    pub fn tree_count(&self) -> Option<u128> {
        let nodes = 1u32.checked_shl(self.depth as u32)? - 1;
        (self.z_count as u128).checked_pow(nodes)
    }

    fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return invalid("tree depth must be >= 1");
        }
        if self.z_count == 0 || self.functions.is_empty() {
            return invalid("Z and F must be non-empty");
        }
        if let Some(f) = self.functions.iter().find(|f| f.len() != self.z_count) {
            return invalid(format!("function table has {} entries for |Z| = {}", f.len(), self.z_count));
        }
        if self.functions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("function table".into()));
        }
        match self.tree_count() {
            Some(c) if c <= TREE_GUARD => Ok(()),
            Some(c) => Err(Error::GuardExceeded(c)),
            None => Err(Error::GuardExceeded(u128::MAX)),
        }
    }
}

/// Exact sequential Rademacher complexity by enumerating every `Z`-labelled
/// complete binary tree of the instance depth.
///
/// Trees are stored in heap order: the node reached after signs
/// `ε_1..ε_{t−1}` is `2i+1` on `−1` and `2i+2` on `+1` from its parent `i`.
/// For each tree the value is `E_ε sup_f (1/T) Σ_t ε_t f(z_t(ε))`; the
/// result is the maximum over trees.
pub fn seq_rademacher_exact(inst: &FiniteInstance) -> Result<f64> {
    inst.validate()?;
    let depth = inst.depth;
    let nodes = (1usize << depth) - 1;
    let paths = 1usize << depth;
    let scale = (paths * depth) as f64;
    let mut tree = vec![0usize; nodes];
    let mut best = f64::NEG_INFINITY;
    // path sums are kept as their exact term lists so cancellation is exact
    let mut chosen: Vec<f64> = Vec::with_capacity(paths * depth);
    let mut cand: Vec<f64> = Vec::with_capacity(depth);
    let mut top: Vec<f64> = Vec::with_capacity(depth);
    let mut diff: Vec<f64> = Vec::with_capacity(2 * depth);
    loop {
        chosen.clear();
        for path in 0..paths {
            top.clear();
            for (fi, f) in inst.functions.iter().enumerate() {
                cand.clear();
                let mut node = 0usize;
                for t in 0..depth {
                    let plus = path >> t & 1 == 1;
                    let v = f[tree[node]];
                    cand.push(if plus { v } else { -v });
                    node = 2 * node + if plus { 2 } else { 1 };
                }
                let better = fi == 0 || {
                    diff.clear();
                    diff.extend(&cand);
                    diff.extend(top.iter().map(|v| -v));
                    fsum(&diff) > 0.0
                };
                if better {
                    std::mem::swap(&mut top, &mut cand);
                }
            }
            chosen.extend(&top);
        }
        best = best.max(fsum(&chosen) / scale);
        // odometer over node labels
        let mut i = 0;
        while i < nodes {
            tree[i] += 1;
            if tree[i] < inst.z_count {
                break;
            }
            tree[i] = 0;
            i += 1;
        }
        if i == nodes {
            return Ok(best);
        }
    }
}

/// Correctly rounded sum (Shewchuk partials with a half-way fix-up).
pub fn fsum(xs: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in xs {
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_class_is_zero() {
        let inst = FiniteInstance { z_count: 3, functions: vec![vec![0.7, -2.0, 1.5]], depth: 3 };
        assert_eq!(seq_rademacher_exact(&inst).unwrap(), 0.0);
    }

    #[test]
    fn two_constants_at_depth_one() {
        let inst = FiniteInstance { z_count: 4, functions: vec![vec![1.0; 4], vec![-1.0; 4]], depth: 1 };
        assert_eq!(seq_rademacher_exact(&inst).unwrap(), 1.0);
    }

    #[test]
    fn fsum_is_exact() {
        assert_eq!(fsum(&[1e16, 1.0, -1e16]), 1.0);
        assert_eq!(fsum(&[0.1; 10]), 1.0);
        assert_eq!(fsum(&[0.7, -2.0, 1.5, -0.7, 2.0, -1.5]), 0.0);
        assert_eq!(fsum(&[]), 0.0);
    }

    #[test]
    fn guard_reports_tree_count() {
        let inst = FiniteInstance { z_count: 2, functions: vec![vec![0.0, 1.0]], depth: 5 };
        match seq_rademacher_exact(&inst) {
            Err(Error::GuardExceeded(c)) => assert_eq!(c, 1 << 31),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_instances() {
        assert!(seq_rademacher_exact(&FiniteInstance { z_count: 2, functions: vec![vec![0.0]], depth: 1 }).is_err());
        assert!(seq_rademacher_exact(&FiniteInstance { z_count: 2, functions: vec![], depth: 1 }).is_err());
        assert!(seq_rademacher_exact(&FiniteInstance { z_count: 2, functions: vec![vec![0.0, 1.0]], depth: 0 }).is_err());
    }
}
