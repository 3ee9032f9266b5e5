use hevrp_core::env::EnvFlags;
use hevrp_core::instance::{generate_instance, GeneratorConfig, Instance};
use hevrp_core::policy::{sample_rng, ActionSource, PolicyConfig, PolicyParams};
use hevrp_core::train::{
    deadlock_penalty, maybe_update_baseline, replay_loss, replay_loss_and_gradient, sample_gradient, update_decision, BaselineState,
    InstanceSource, TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> PolicyConfig {
    PolicyConfig {
        d_h: 16,
        heads: 2,
        d_ff: 32,
        d_edge: 8,
        ..PolicyConfig::desk()
    }
}

fn instance(customers: usize, seed: u64) -> Instance {
    generate_instance(&GeneratorConfig::desk(customers, 2, 1), seed).unwrap()
}

fn sampled_actions(p: &PolicyParams, inst: &Instance, seed: u64) -> Vec<hevrp_core::env::Action> {
    let s = p.session(false);
    let enc = p.encode(&s, inst).unwrap();
    let mut rng = sample_rng(seed, 0);
    p.rollout(&s, &enc, inst, EnvFlags::default(), ActionSource::Sample(&mut rng))
        .unwrap()
        .actions()
}

#[test]
fn zero_advantage_gives_zero_gradient() {
    let inst = instance(6, 1);
    let p = PolicyParams::new(tiny(), 1).unwrap();
    let actions = sampled_actions(&p, &inst, 2);
    let (loss, grads) = replay_loss_and_gradient(&p, &inst, EnvFlags::default(), &actions, 0.0).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|g| g.sum_sq() == 0.0));

    // With the policy as its own baseline, a sample matching the greedy cost has no advantage.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let o = sample_gradient(&p, &p, &inst, EnvFlags::default(), 2.0, &mut rng).unwrap();
    if o.cost == o.baseline_cost {
        assert!(o.grads.is_none());
    } else {
        assert!(o.grads.is_some());
    }
}

/// Central differences of the replayed loss at a sample of parameter entries.
fn fd_check(p: &PolicyParams, inst: &Instance, actions: &[hevrp_core::env::Action], adv: f64, probes: usize, seed: u64) -> f64 {
    let env = EnvFlags::default();
    let (_, grads) = replay_loss_and_gradient(p, inst, env, actions, adv).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let count = p.store().len();
    for k in 0..probes {
        let t = k % count;
        let len = p.store().tensors()[t].len();
        let e = rng.gen_range(0..len);
        let mut q = p.clone();
        let x0 = q.store().tensors()[t].data()[e];
        q.store_mut().tensors_mut()[t].data_mut()[e] = x0 + h;
        let up = replay_loss(&q, inst, env, actions, adv).unwrap();
        q.store_mut().tensors_mut()[t].data_mut()[e] = x0 - h;
        let down = replay_loss(&q, inst, env, actions, adv).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[t].data()[e];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

/// Moves every parameter off its initial value. Freshly initialised batch
/// norms have beta = 0, so edge-layer inputs are column-centred and a row that
/// attends uniformly aggregates to exactly 0, right on a ReLU kink.
fn jitter(p: &mut PolicyParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.store_mut().tensors_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.05..0.05);
        }
    }
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let inst = instance(6, 3);
    let mut p = PolicyParams::new(tiny(), 4).unwrap();
    jitter(&mut p, 40);
    let actions = sampled_actions(&p, &inst, 5);
    let worst = fd_check(&p, &inst, &actions, 1.7, 2 * p.store().len(), 6);
    assert!(worst <= 1e-4, "relative error {worst:e}");
}

#[test]
fn baseline_replacement_needs_a_significant_improvement() {
    let base = [10.0, 12.0, 9.0, 14.0, 11.0, 13.0];
    let better: Vec<f64> = base.iter().map(|c| c - 1.0 - 0.01 * c).collect();
    let worse: Vec<f64> = base.iter().map(|c| c + 1.0).collect();
    assert!(update_decision(&better, &base, 0.05));
    assert!(!update_decision(&worse, &base, 0.05));
    assert!(!update_decision(&base, &base, 0.05));
    let noisy = [9.5, 12.5, 8.0, 14.8, 10.9, 13.1];
    assert!(!update_decision(&noisy, &base, 0.05));
}

#[test]
fn identical_candidate_does_not_replace_the_baseline() {
    let eval: Vec<Instance> = (0..6).map(|k| instance(5, 100 + k)).collect();
    let p = PolicyParams::new(tiny(), 7).unwrap();
    let mut b = BaselineState::new(p.clone(), &eval, EnvFlags::default(), 2.0).unwrap();
    assert!(!maybe_update_baseline(&p, &mut b, &eval, EnvFlags::default(), 2.0, 0.05).unwrap());
    assert_eq!(b.updates, 0);
}

#[test]
fn deadlock_penalty_shrinks_with_progress() {
    let inst = instance(8, 9);
    let full = deadlock_penalty(&inst, 8, 2.0);
    let cap = 2.0 * inst.fleet().len() as f64 * inst.t_max();
    assert_eq!(full, cap);
    assert_eq!(deadlock_penalty(&inst, 0, 2.0), cap / 2.0);
    assert!(deadlock_penalty(&inst, 3, 2.0) < deadlock_penalty(&inst, 4, 2.0));
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs: 1,
        instances_per_epoch: 8,
        eval_size: 6,
        seed,
        source: InstanceSource::Generate(GeneratorConfig::desk(5, 2, 1)),
        ..TrainConfig::desk()
    }
}

#[test]
fn training_is_deterministic_and_leaves_the_baseline_alone() {
    let run = || {
        let mut t = Trainer::new(small_config(11), PolicyParams::new(tiny(), 12).unwrap()).unwrap();
        let before = t.baseline.params().store().tensors().to_vec();
        let st = t.train_epoch().unwrap();
        if !st.baseline_updated {
            assert_eq!(t.baseline.params().store().tensors(), &before[..]);
        }
        assert_eq!(st.check_failures, 0);
        (t.policy.store().tensors().to_vec(), st)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let init = PolicyParams::new(tiny(), 12).unwrap();
    assert_ne!(init.store().tensors(), &a[..], "an epoch should move the parameters");
}

#[test]
fn config_validation_rejects_bad_values() {
    let mut c = TrainConfig::desk();
    c.batch_size = 0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::desk();
    c.lr = 0.0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::desk();
    c.source = InstanceSource::Fixed(Vec::new());
    assert!(c.validate().is_err());
    assert!(TrainConfig::desk().validate().is_ok());
}
