use gradshift::diffcore::Rng;
use gradshift::domains::make_shifting_gaussians;
use gradshift::objectives::{Architecture, LossSpec, TrainConfig};
use gradshift::theory::{
    check_lemma1, estimate_discrepancy, evaluate_bound, seq_rademacher_exact, sweep_horizon, BoundInputs,
    FiniteInstance, HypothesisPool, Lemma1Setup, Rseq,
};

/// Multiples of 1/8 keep every sum below exact in binary floating point.
fn dyadic(r: &mut Rng) -> f64 {
    (r.below(33) as f64 - 16.0) / 8.0
}

fn table(r: &mut Rng, f: usize, z: usize) -> Vec<Vec<f64>> {
    (0..f).map(|_| (0..z).map(|_| dyadic(r)).collect()).collect()
}

/// Depth-two enumeration written as nested loops: root label, then one label
/// for each child, then both sign pairs.
fn depth_two(functions: &[Vec<f64>], z_count: usize) -> f64 {
    let sup = |e1: f64, z1: usize, e2: f64, z2: usize| {
        functions
            .iter()
            .map(|f| (e1 * f[z1] + e2 * f[z2]) / 2.0)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut best = f64::NEG_INFINITY;
    for root in 0..z_count {
        for left in 0..z_count {
            for right in 0..z_count {
                let mut total = 0.0;
                for e1 in [-1.0, 1.0] {
                    let child = if e1 < 0.0 { left } else { right };
                    for e2 in [-1.0, 1.0] {
                        total += sup(e1, root, e2, child);
                    }
                }
                best = best.max(total / 4.0);
            }
        }
    }
    best
}

#[test]
fn matches_nested_loop_enumeration() {
    for k in 0..20u64 {
        let mut r = Rng::keyed(40, &[k]);
        let functions = table(&mut r, 3, 2);
        let inst = FiniteInstance { z_count: 2, functions: functions.clone(), depth: 2 };
        assert_eq!(seq_rademacher_exact(&inst).unwrap(), depth_two(&functions, 2), "instance {k}");
    }
}

#[test]
fn singletons_are_zero() {
    for k in 0..20u64 {
        let mut r = Rng::keyed(41, &[k]);
        let z = 1 + r.below(3);
        let depth = 1 + r.below(3);
        let functions = (0..z).map(|_| r.normal()).collect();
        let inst = FiniteInstance { z_count: z, functions: vec![functions], depth };
        assert_eq!(seq_rademacher_exact(&inst).unwrap(), 0.0, "instance {k}");
    }
}

#[test]
fn invariant_under_relabelling() {
    for k in 0..10u64 {
        let mut r = Rng::keyed(42, &[k]);
        let functions = table(&mut r, 3, 3);
        let base = seq_rademacher_exact(&FiniteInstance { z_count: 3, functions: functions.clone(), depth: 2 }).unwrap();
        let mut f_perm = functions.clone();
        f_perm.rotate_left(1);
        let z_perm: Vec<Vec<f64>> = functions.iter().map(|f| vec![f[2], f[0], f[1]]).collect();
        for other in [f_perm, z_perm] {
            let v = seq_rademacher_exact(&FiniteInstance { z_count: 3, functions: other, depth: 2 }).unwrap();
            assert_eq!(v, base);
        }
    }
}

fn inputs(t: usize) -> BoundInputs {
    BoundInputs { t, n: 100, m: 1.0, rho: 1.0, drift: 0.01, delta: 0.1, vc: 10.0, rseq: Rseq::default(), c_online: 1.0 }
}

#[test]
fn bound_closed_form() {
    let r = evaluate_bound(&inputs(10)).unwrap();
    let e1 = 0.3 + 0.3 * (8.0 * 10f64.ln()).sqrt();
    assert!((r.e1 - e1).abs() <= 1e-9);
    assert_eq!(r.components.drift, 3.0 * 10.0 * 1.0 * 0.01);
    let rseq = 1.0 / (100.0f64 * 9.0).sqrt();
    assert!((r.rseq - rseq).abs() < 1e-15);
    let e3 = 18.0 * (4.0 * std::f64::consts::PI * 10f64.ln()).sqrt() * rseq + 0.3;
    assert!((r.e3 - e3).abs() < 1e-12);
    let c = r.components;
    for v in [c.horizon, c.concentration, c.vc, c.online, c.rademacher, c.drift] {
        assert!(v >= 0.0);
    }
}

#[test]
fn sweep_monotone_columns() {
    let s = sweep_horizon(&inputs(2), 2, 200).unwrap();
    for w in s.rows.windows(2) {
        assert!(w[1].drift > w[0].drift);
        assert!(w[1].e1 < w[0].e1);
    }
    assert!(s.argmin_t > 2 && s.argmin_t < 200);
}

#[test]
fn lemma1_gaussian_translation() {
    let mu = |r: &mut Rng| r.normal();
    let nu = |r: &mut Rng| 0.3 + r.normal();
    let loss = |x: f64| x.clamp(-5.0, 5.0);
    let setup = Lemma1Setup { true_w1: 0.3, rho: 1.0, trials: 1000, n: 2000, mu_seed: 1, nu_seed: 2 };
    let rep = check_lemma1(&mu, &nu, &loss, &setup).unwrap();
    assert!(rep.violation_rate <= 0.01, "{rep:?}");
}

#[test]
fn discrepancy_stays_under_the_drift_bound() {
    let seq = make_shifting_gaussians(5, 500, 0.3, &[vec![-1.0, 0.0], vec![1.0, 0.0]], 0.5, None, 3).unwrap();
    let arch = Architecture::new(2, 2);
    let mut pool = HypothesisPool::random(1, 16, &arch).unwrap();
    pool.add_training_snapshots(&seq, &arch, &TrainConfig { seed: 1, ..TrainConfig::default() }, 4).unwrap();
    let rep = estimate_discrepancy(&seq, &pool, &LossSpec::cross_entropy(5.0)).unwrap();
    assert!(rep.estimate <= 5.0 * 0.3 + 0.15, "{}", rep.estimate);
}
