//! Wasserstein-1 between uniform empirical measures.
//!
//! | Function | Method | Cost |
//! |----------|--------|------|
//! | [`w1_exact`] | shortest augmenting path assignment | O(n³) |
//! | [`w1_sorted_1d`] / [`wp_sorted_1d`] | sorted coupling, exact in 1-D | O(n log n) |
//! | [`sinkhorn`] | log-domain entropic scaling | O(n² · iters) |

use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Rng};
use crate::domains::DomainSequence;
use crate::error::{invalid, Error, Result};

/// Largest `n` accepted by the cubic exact solver.
pub const EXACT_GUARD: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactAssignment,
    Sorted1d,
    Sinkhorn,
}

/// Pairwise Euclidean distances, `rows × cols`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn euclidean(a: &Array, b: &Array) -> Result<Self> {
        let (da, db) = (a.cols(), b.cols());
        if a.shape().len() > 2 || b.shape().len() > 2 || da != db {
            return Err(Error::Shape {
                op: "cost matrix",
                shapes: format!("{:?} and {:?}", a.shape(), b.shape()),
            });
        }
        let (n, m) = (a.rows(), b.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let ra = a.row(i);
            for j in 0..m {
                let s: f64 = ra.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                data.push(s.sqrt());
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    pub distance: f64,
    pub method: Method,
    /// Row `i` of the first set is matched to `assignment[i]` (exact methods).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<usize>>,
    /// Dense coupling (sinkhorn only).
    #[serde(skip)]
    pub coupling: Option<Array>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub converged: bool,
}

impl TransportResult {
    /// Dense coupling matrix; a permutation scaled by `1/n` for exact methods.
    pub fn coupling_matrix(&self) -> Option<Array> {
        if let Some(c) = &self.coupling {
            return Some(c.clone());
        }
        let asg = self.assignment.as_ref()?;
        let n = asg.len();
        let mut data = vec![0.0; n * n];
        for (i, &j) in asg.iter().enumerate() {
            data[i * n + j] = 1.0 / n as f64;
        }
        Array::new(vec![n, n], data).ok()
    }
}

/// Minimum-cost perfect matching on a square cost matrix via shortest
/// augmenting paths with row/column potentials. Returns the column for each row.
pub fn solve_assignment(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.rows;
    debug_assert_eq!(n, cost.cols);
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = free)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            let crow = &cost.data[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = crow[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn check_sets(a: &Array, b: &Array) -> Result<usize> {
    if a.rows() != b.rows() {
        return Err(Error::UnequalSizes(a.rows(), b.rows()));
    }
    if a.is_empty() || a.cols() == 0 {
        return invalid("point sets must be non-empty with d >= 1");
    }
    Ok(a.rows())
}

/// Exact W1 between two equal-size uniform point clouds (`n × d` each).
pub fn w1_exact(a: &Array, b: &Array) -> Result<TransportResult> {
    let n = check_sets(a, b)?;
    if n > EXACT_GUARD {
        return Err(Error::TooLarge(n, EXACT_GUARD));
    }
    let cost = CostMatrix::euclidean(a, b)?;
    let assignment = solve_assignment(&cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum();
    Ok(TransportResult {
        distance: total / n as f64,
        method: Method::ExactAssignment,
        assignment: Some(assignment),
        coupling: None,
        iterations: None,
        converged: true,
    })
}

/// `(1/n Σ |a_(i) - b_(i)|^p)^(1/p)` over sorted order; exact W_p in 1-D.
pub fn wp_sorted_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UnequalSizes(a.len(), b.len()));
    }
    if a.is_empty() || !(p >= 1.0) {
        return invalid("sorted coupling needs non-empty sets and p >= 1");
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let s: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs().powf(p)).sum();
    Ok((s / a.len() as f64).powf(1.0 / p))
}

pub fn w1_sorted_1d(a: &[f64], b: &[f64]) -> Result<TransportResult> {
    if a.len() != b.len() {
        return Err(Error::UnequalSizes(a.len(), b.len()));
    }
    if a.is_empty() {
        return invalid("point sets must be non-empty");
    }
    let order = |x: &[f64]| {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(i.cmp(&j)));
        idx
    };
    let (oa, ob) = (order(a), order(b));
    let mut assignment = vec![0; a.len()];
    let mut total = 0.0;
    for (&i, &j) in oa.iter().zip(&ob) {
        assignment[i] = j;
        total += (a[i] - b[j]).abs();
    }
    Ok(TransportResult {
        distance: total / a.len() as f64,
        method: Method::Sorted1d,
        assignment: Some(assignment),
        coupling: None,
        iterations: None,
        converged: true,
    })
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropic transport between uniform measures with log-domain potential
/// updates. `epsilon` is in absolute cost units. The reported distance is the
/// transport cost `<P, C>` without the entropy term.
pub fn sinkhorn(
    a: &Array,
    b: &Array,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportResult> {
    let n = check_sets(a, b)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return invalid(format!("epsilon must be > 0, got {epsilon}"));
    }
    let cost = CostMatrix::euclidean(a, b)?;
    let log_w = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let row_err = |f: &[f64], g: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let s: f64 = (0..n)
                    .map(|j| ((f[i] + g[j] - cost.at(i, j)) / epsilon).exp())
                    .sum();
                (s - 1.0 / n as f64).abs()
            })
            .sum()
    };
    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            let lse = logsumexp((0..n).map(|j| (g[j] - cost.at(i, j)) / epsilon));
            f[i] = epsilon * (log_w - lse);
        }
        for j in 0..n {
            let lse = logsumexp((0..n).map(|i| (f[i] - cost.at(i, j)) / epsilon));
            g[j] = epsilon * (log_w - lse);
        }
        // columns are exact after the g update; rows carry the residual
        if row_err(&f, &g) < tol {
            converged = true;
            break;
        }
    }
    let mut plan = vec![0.0; n * n];
    let mut distance = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = ((f[i] + g[j] - cost.at(i, j)) / epsilon).exp();
            plan[i * n + j] = p;
            distance += p * cost.at(i, j);
        }
    }
    Ok(TransportResult {
        distance,
        method: Method::Sinkhorn,
        assignment: None,
        coupling: Some(Array::new(vec![n, n], plan)?),
        iterations: Some(iterations),
        converged,
    })
}

/// Resamples the larger set with replacement down to the smaller count.
/// Equal sizes are returned unchanged.
pub fn resample_to_equal(a: &Array, b: &Array, seed: u64) -> (Array, Array) {
    let (n, m) = (a.rows(), b.rows());
    if n == m {
        return (a.clone(), b.clone());
    }
    let target = n.min(m);
    let draw = |x: &Array, key: u64| {
        let mut rng = Rng::keyed(seed, &[key]);
        let idx: Vec<usize> = (0..target).map(|_| rng.below(x.rows())).collect();
        x.select_rows(&idx)
    };
    if n > m {
        (draw(a, 0), b.clone())
    } else {
        (a.clone(), draw(b, 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    Sinkhorn,
}

/// Per-step, per-class empirical W1 between consecutive domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    /// `per_class[t][y]` compares domains `t` and `t + 1`.
    pub per_class: Vec<Vec<f64>>,
    /// Max over classes for each step.
    pub per_step: Vec<f64>,
    /// Max over steps.
    pub delta_hat: f64,
}

/// W1 between two point sets with the exact solvers (sorted coupling in 1-D).
pub fn w1_auto(a: &Array, b: &Array) -> Result<f64> {
    if a.cols() == 1 {
        Ok(w1_sorted_1d(a.data(), b.data())?.distance)
    } else {
        Ok(w1_exact(a, b)?.distance)
    }
}

/// Empirical class-conditional drift. Unequal class counts are resampled
/// with replacement to the smaller count, keyed by `seed`.
pub fn class_conditional_delta(
    seq: &DomainSequence,
    estimator: Estimator,
    seed: u64,
) -> Result<DeltaReport> {
    if seq.len() < 2 {
        return invalid("need at least two domains");
    }
    for dom in &seq.domains {
        if let Some(y) = dom.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::MissingClass { t: dom.t, y });
        }
    }
    let mut per_class = Vec::with_capacity(seq.len() - 1);
    for t in 0..seq.len() - 1 {
        let (cur, next) = (&seq.domains[t], &seq.domains[t + 1]);
        let mut row = Vec::with_capacity(seq.k());
        for y in 0..seq.k() {
            let xa = cur.features.select_rows(&cur.class_indices(y));
            let xb = next.features.select_rows(&next.class_indices(y));
            let (xa, xb) = resample_to_equal(&xa, &xb, seed ^ ((t as u64) << 32 | y as u64));
            let w = match estimator {
                Estimator::Exact => w1_auto(&xa, &xb)?,
                Estimator::Sinkhorn => {
                    let c = CostMatrix::euclidean(&xa, &xb)?;
                    let eps = (0.005 * c.mean()).max(1e-12);
                    sinkhorn(&xa, &xb, eps, 20_000, 1e-6)?.distance
                }
            };
            row.push(w);
        }
        per_class.push(row);
    }
    let per_step: Vec<f64> = per_class
        .iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .collect();
    let delta_hat = per_step.iter().copied().fold(0.0, f64::max);
    Ok(DeltaReport {
        per_class,
        per_step,
        delta_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::make_shifting_gaussians;

    fn pts(rows: &[&[f64]]) -> Array {
        Array::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_pair() {
        let r = w1_exact(&pts(&[&[0.0]]), &pts(&[&[1.0]])).unwrap();
        assert_eq!(r.distance, 1.0);
    }

    #[test]
    fn identical_sets_cost_zero() {
        let a = pts(&[&[0.3, 1.0], &[2.0, -1.0], &[5.0, 5.0]]);
        assert_eq!(w1_exact(&a, &a).unwrap().distance, 0.0);
        assert_eq!(w1_sorted_1d(&[3.0, 1.0], &[3.0, 1.0]).unwrap().distance, 0.0);
    }

    #[test]
    fn two_point_square() {
        let a = pts(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let b = pts(&[&[0.0, 1.0], &[1.0, 1.0]]);
        let r = w1_exact(&a, &b).unwrap();
        assert!((r.distance - 1.0).abs() < 1e-12);
        assert_eq!(r.assignment.unwrap(), vec![0, 1]);
    }

    #[test]
    fn sorted_pairing_example() {
        assert_eq!(w1_sorted_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap().distance, 1.0);
    }

    #[test]
    fn guards() {
        let a = pts(&[&[0.0], &[1.0]]);
        let b = pts(&[&[0.0]]);
        let e = w1_exact(&a, &b).unwrap_err().to_string();
        assert!(e.contains("resample_to_equal"), "{e}");
        let big = Array::zeros(&[EXACT_GUARD + 1, 1]);
        let e = w1_exact(&big, &big).unwrap_err().to_string();
        assert!(e.contains("sinkhorn"), "{e}");
        assert!(sinkhorn(&a, &a, 0.0, 10, 1e-6).is_err());
    }

    #[test]
    fn exact_coupling_marginals_and_cost() {
        let a = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[3.0, 1.0]]);
        let b = pts(&[&[0.5, 1.0], &[1.0, 1.0], &[2.0, 2.0]]);
        let r = w1_exact(&a, &b).unwrap();
        let p = r.coupling_matrix().unwrap();
        let c = CostMatrix::euclidean(&a, &b).unwrap();
        let total: f64 = p.data().iter().zip(&c.data).map(|(x, y)| x * y).sum();
        assert!((total - r.distance).abs() < 1e-9);
        for i in 0..3 {
            let row: f64 = (0..3).map(|j| p.data()[i * 3 + j]).sum();
            let col: f64 = (0..3).map(|j| p.data()[j * 3 + i]).sum();
            assert!((row - 1.0 / 3.0).abs() < 1e-6 && (col - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sinkhorn_identical_sets_and_marginals() {
        let mut rng = Rng::new(3);
        let a = Array::new(vec![16, 2], (0..32).map(|_| rng.normal()).collect()).unwrap();
        let eps = 1e-3;
        let r = sinkhorn(&a, &a, eps, 10_000, 1e-9).unwrap();
        assert!(r.distance <= eps * 16f64.ln() + 1e-6, "{}", r.distance);
        let p = r.coupling.unwrap();
        for i in 0..16 {
            let row: f64 = (0..16).map(|j| p.data()[i * 16 + j]).sum();
            let col: f64 = (0..16).map(|j| p.data()[j * 16 + i]).sum();
            assert!((row - 1.0 / 16.0).abs() < 1e-6);
            assert!((col - 1.0 / 16.0).abs() < 1e-6);
        }
    }

    #[test]
    fn resample_only_when_unequal() {
        let a = pts(&[&[0.0], &[1.0], &[2.0]]);
        let b = pts(&[&[5.0], &[6.0]]);
        let (ra, rb) = resample_to_equal(&a, &b, 1);
        assert_eq!(ra.rows(), 2);
        assert_eq!(rb, b);
        assert_eq!(resample_to_equal(&a, &a, 1), (a.clone(), a));
    }

    #[test]
    fn identical_domains_have_zero_delta() {
        let seq = make_shifting_gaussians(3, 100, 0.0, &[vec![0.0, 0.0], vec![2.0, 1.0]], 0.5, None, 1).unwrap();
        let mut same = seq.clone();
        for t in 1..3 {
            same.domains[t].features = seq.domains[0].features.clone();
            same.domains[t].labels = seq.domains[0].labels.clone();
        }
        let r = class_conditional_delta(&same, Estimator::Exact, 0).unwrap();
        assert_eq!(r.delta_hat, 0.0);
    }

    #[test]
    fn missing_class_is_named() {
        let text = "t,y,x0\n0,0,1.0\n0,1,2.0\n1,0,1.0\n1,0,2.0\n";
        let seq = crate::domains::parse_sequence(text, None).unwrap();
        match class_conditional_delta(&seq, Estimator::Exact, 0) {
            Err(Error::MissingClass { t, y }) => assert_eq!((t, y), (1, 1)),
            other => panic!("{other:?}"),
        }
    }
}
