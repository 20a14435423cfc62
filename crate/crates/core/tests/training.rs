use gradshift::diffcore::{Array, Rng};
use gradshift::domains::{make_rotating_moons, split_holdout, DomainBatch};
use gradshift::models::{Activation, MlpParams};
use gradshift::objectives::{
    adapt_pair, critic_step, AdaptationModel, Architecture, Optimizer, OptimizerKind, PairContext, TrainConfig,
};
use gradshift::transport::w1_exact;

fn gaussian_column(seed: u64, n: usize, mean: f64, sigma: f64) -> Array {
    let mut r = Rng::new(seed);
    Array::new(vec![n, 1], (0..n).map(|_| mean + sigma * r.normal()).collect()).unwrap()
}

/// Critic-only ascent on fixed features; returns the final gap.
fn train_critic(fs: &Array, ft: &Array, steps: usize, seed: u64) -> f64 {
    let mut critic = MlpParams::init(seed, &[1, 32, 1], &[Activation::Relu, Activation::Identity]).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 5e-4);
    for s in 0..steps {
        let (grads, _, _) = critic_step(&critic, fs, ft, GP, Rng::keyed(seed, &[s as u64]).next_u64()).unwrap();
        opt.step(critic.named_params_mut("c"), &grads).unwrap();
    }
    critic_step(&critic, fs, ft, GP, 0).unwrap().1
}

const GP: f64 = 5.0;

// With well-separated 1-D batches the interpolates fill the gap between
// them, and a critic of constant slope s there earns s·W1 − GP·(s − 1)².
// The penalized optimum is s = 1 + W1 / (2·GP).
#[test]
fn trained_critic_reaches_the_penalized_optimum() {
    for seed in 0..3u64 {
        let fs = gaussian_column(10 * seed + 1, 512, 0.0, 0.1);
        let ft = gaussian_column(10 * seed + 2, 512, 1.0, 0.1);
        let w1 = w1_exact(&fs, &ft).unwrap().distance;
        let gap = train_critic(&fs, &ft, 2000, seed + 3);
        let optimum = 1.0 + w1 / (2.0 * GP);
        let ratio = gap / w1;
        eprintln!("seed {seed}: w1 {w1:.6} gap {gap:.6} ratio {ratio:.4} optimum {optimum:.4}");
        assert!((ratio - optimum).abs() < 0.02, "ratio {ratio} vs optimum {optimum}");
    }
}

fn moons_pair() -> (DomainBatch, DomainBatch, DomainBatch) {
    let seq = make_rotating_moons(6, 400, 120.0, 0.1, 11).unwrap();
    let (train, eval) = split_holdout(&seq, 0.25, 11).unwrap();
    (train.domains[0].clone(), train.domains[1].clone(), eval.domains[1].clone())
}

#[test]
fn adapting_on_the_next_domain_beats_staying_put() {
    let (src, tgt, eval) = moons_pair();
    let arch = Architecture::new(2, 2);
    let cfg = TrainConfig { epochs_per_domain: 15, seed: 5, ..TrainConfig::default() };
    let ctx = |stage| PairContext { stage, t: 1, eval: &eval, epochs: cfg.epochs_per_domain };

    let mut base = AdaptationModel::init(5, &arch, false).unwrap();
    adapt_pair(&mut base, &src, None, &cfg, false, ctx(0)).unwrap();
    let mut adapted = base.clone();
    adapt_pair(&mut adapted, &src, Some(&tgt), &cfg, true, ctx(1)).unwrap();
    let (a0, a1) = (base.accuracy(&eval).unwrap(), adapted.accuracy(&eval).unwrap());
    assert!(a1 >= a0, "unadapted {a0} adapted {a1}");
}

#[test]
fn zero_lambda_without_target_labels_is_source_erm() {
    let (src, tgt, eval) = moons_pair();
    let arch = Architecture::new(2, 2);
    let cfg = TrainConfig { lambda: 0.0, epochs_per_domain: 3, seed: 2, ..TrainConfig::default() };
    let ctx = PairContext { stage: 0, t: 1, eval: &eval, epochs: 3 };
    let mut a = AdaptationModel::init(2, &arch, false).unwrap();
    let mut b = a.clone();
    let ma = adapt_pair(&mut a, &src, Some(&tgt), &cfg, false, ctx.clone()).unwrap();
    let mb = adapt_pair(&mut b, &src, None, &cfg, false, ctx).unwrap();
    assert_eq!(a.g, b.g);
    assert_eq!(a.h, b.h);
    assert_eq!(ma.iter().map(|m| m.class_loss).collect::<Vec<_>>(), mb.iter().map(|m| m.class_loss).collect::<Vec<_>>());
}
