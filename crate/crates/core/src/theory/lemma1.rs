use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Setup {
    pub true_w1: f64,
    pub rho: f64,
    pub trials: usize,
    pub n: usize,
    /// Trial `i` draws μ from `Rng::keyed(mu_seed, [i])` and ν from
    /// `Rng::keyed(nu_seed, [i])`; equal seeds share the stream.
    pub mu_seed: u64,
    pub nu_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub violations: usize,
    pub trials: usize,
    pub violation_rate: f64,
    pub max_gap: f64,
    pub bound: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Counts trials where `|mean ℓ(μ-sample) − mean ℓ(ν-sample)|` exceeds
/// `ρ·W1 + 3·stderr`, the standard error being that of the mean difference.
/// `loss` must be `rho`-Lipschitz; this is not checked.
pub fn check_lemma1(
    mu: &dyn Fn(&mut Rng) -> f64,
    nu: &dyn Fn(&mut Rng) -> f64,
    loss: &dyn Fn(f64) -> f64,
    setup: &Lemma1Setup,
) -> Result<Lemma1Report> {
    if setup.trials == 0 || setup.n == 0 {
        return invalid("trials and n must be >= 1");
    }
    if !(setup.true_w1 >= 0.0) || !(setup.rho > 0.0) {
        return invalid("need W1 >= 0 and rho > 0");
    }
    let bound = setup.rho * setup.true_w1;
    let draw = |sampler: &dyn Fn(&mut Rng) -> f64, seed: u64, trial: usize| -> Vec<f64> {
        let mut rng = Rng::keyed(seed, &[trial as u64]);
        (0..setup.n).map(|_| loss(sampler(&mut rng))).collect()
    };
    let (mut violations, mut max_gap) = (0, 0.0f64);
    for trial in 0..setup.trials {
        let (ma, va) = mean_var(&draw(mu, setup.mu_seed, trial));
        let (mb, vb) = mean_var(&draw(nu, setup.nu_seed, trial));
        let gap = (ma - mb).abs();
        let stderr = ((va + vb) / setup.n as f64).sqrt();
        if gap > bound + 3.0 * stderr {
            violations += 1;
        }
        max_gap = max_gap.max(gap);
    }
    Ok(Lemma1Report {
        violations,
        trials: setup.trials,
        violation_rate: violations as f64 / setup.trials as f64,
        max_gap,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clamp(x: f64) -> f64 {
        x.clamp(-5.0, 5.0)
    }

    #[test]
    fn same_stream_gives_zero_gap() {
        let s = |r: &mut Rng| r.normal();
        let setup = Lemma1Setup { true_w1: 0.0, rho: 1.0, trials: 20, n: 100, mu_seed: 4, nu_seed: 4 };
        let r = check_lemma1(&s, &s, &clamp, &setup).unwrap();
        assert_eq!(r.max_gap, 0.0);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn scaling_keeps_violations() {
        let mu = |r: &mut Rng| r.normal();
        let nu = |r: &mut Rng| r.normal() + 0.3;
        let setup = Lemma1Setup { true_w1: 0.3, rho: 1.0, trials: 200, n: 200, mu_seed: 1, nu_seed: 2 };
        let a = check_lemma1(&mu, &nu, &clamp, &setup).unwrap();
        let double = |x: f64| 2.0 * clamp(x);
        let b = check_lemma1(&mu, &nu, &double, &Lemma1Setup { rho: 2.0, ..setup }).unwrap();
        assert_eq!(b.bound, 2.0 * a.bound);
        assert_eq!(a.violations, b.violations);
    }

    #[test]
    fn rejects_empty_runs() {
        let s = |r: &mut Rng| r.normal();
        let setup = Lemma1Setup { true_w1: 0.0, rho: 1.0, trials: 0, n: 10, mu_seed: 0, nu_seed: 1 };
        assert!(check_lemma1(&s, &s, &clamp, &setup).is_err());
    }
}
