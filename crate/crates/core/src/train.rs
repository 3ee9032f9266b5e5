//! REINFORCE with a greedy rollout baseline.
//!
//! Each batch samples one rollout per instance from the current policy and a
//! greedy rollout from the frozen baseline policy. The surrogate loss is
//! `mean_k (cost_k - baseline_k) * log p_k`. Per-instance gradients are summed
//! in instance order so results do not depend on thread scheduling.

use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{check_solution, EnvFlags};
use crate::instance::{generate_instance, GeneratorConfig, Instance, InstanceError};
use crate::numcore::{Adam, AdamConfig, AdamOutcome, OptimError, Tensor};
use crate::policy::{sample_rng, ActionSource, DecodeMode, Outcome, PolicyError, PolicyParams};
use crate::stats::paired_improvement_test;
use crate::util;

/// Where training instances come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    /// Fresh instances from the generator every batch.
    Generate(GeneratorConfig),
    /// A frozen pool, cycled in order.
    Fixed(Vec<Instance>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    /// One-sided p-value below which the baseline is replaced.
    pub significance: f64,
    pub seed: u64,
    pub source: InstanceSource,
    /// Size of the held-out set used for baseline replacement.
    pub eval_size: usize,
    pub env: EnvFlags,
    /// Scale of the deadlock cost, see [`deadlock_penalty`].
    pub penalty_factor: f64,
}

impl TrainConfig {
    /// Size-10 instances, 2 vehicles, 1 station, batch 64, 20,000 instances.
    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            instances_per_epoch: 2000,
            lr: 1e-3,
            lr_decay: 1.0,
            significance: 0.05,
            seed: 1,
            source: InstanceSource::Generate(GeneratorConfig::desk(10, 2, 1)),
            eval_size: 256,
            env: EnvFlags::default(),
            penalty_factor: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TrainError::Config("learning-rate decay must lie in (0, 1]"));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(TrainError::Config("significance must lie in (0, 1)"));
        }
        if let InstanceSource::Fixed(pool) = &self.source {
            if pool.is_empty() {
                return Err(TrainError::Config("fixed instance pool is empty"));
            }
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.instances_per_epoch.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Independent 64-bit seed for `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

const TAG_TRAIN: u64 = 1;
const TAG_EVAL: u64 = 2;
const TAG_SAMPLE: u64 = 3;

/// Cost charged to a deadlocked episode: `factor * nu * T_max` scaled by
/// `(1 + unserved / customers) / 2`, so it never exceeds `factor * nu * T_max`
/// and shrinks as more customers are served.
pub fn deadlock_penalty(inst: &Instance, unserved: usize, factor: f64) -> f64 {
    let customers = inst.customers().len().max(1) as f64;
    let frac = (unserved as f64 / customers).min(1.0);
    factor * inst.fleet().len() as f64 * inst.t_max() * 0.5 * (1.0 + frac)
}

/// Greedy cost, penalised when the decode deadlocks.
pub fn greedy_cost(params: &PolicyParams, inst: &Instance, env: EnvFlags, penalty_factor: f64) -> Result<f64, PolicyError> {
    let d = params.decode(inst, env, DecodeMode::Greedy, 0)?;
    Ok(d.cost().unwrap_or_else(|| deadlock_penalty(inst, d.min_unserved, penalty_factor)))
}

/// Greedy costs over a set, in order.
pub fn greedy_costs(params: &PolicyParams, set: &[Instance], env: EnvFlags, penalty_factor: f64) -> Result<Vec<f64>, PolicyError> {
    let one = |inst: &Instance| greedy_cost(params, inst, env, penalty_factor);
    #[cfg(feature = "parallel")]
    let out: Vec<Result<f64, PolicyError>> = {
        use rayon::prelude::*;
        set.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<f64, PolicyError>> = set.iter().map(one).collect();
    out.into_iter().collect()
}

/// Frozen policy used as the advantage baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    params: PolicyParams,
    /// Greedy costs of `params` on the evaluation set.
    eval_costs: Vec<f64>,
    /// Mean evaluation cost recorded at creation and after every replacement.
    pub history: Vec<f64>,
    pub updates: usize,
}

impl BaselineState {
    pub fn new(params: PolicyParams, eval_set: &[Instance], env: EnvFlags, penalty_factor: f64) -> Result<Self, PolicyError> {
        let eval_costs = greedy_costs(&params, eval_set, env, penalty_factor)?;
        let history = alloc::vec![mean(&eval_costs)];
        Ok(Self {
            params,
            eval_costs,
            history,
            updates: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn eval_costs(&self) -> &[f64] {
        &self.eval_costs
    }

    pub fn mean_eval_cost(&self) -> f64 {
        mean(&self.eval_costs)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Replaces the baseline when `params` is significantly better on `eval_set`.
pub fn maybe_update_baseline(
    params: &PolicyParams,
    baseline: &mut BaselineState,
    eval_set: &[Instance],
    env: EnvFlags,
    penalty_factor: f64,
    significance: f64,
) -> Result<bool, PolicyError> {
    let candidate = greedy_costs(params, eval_set, env, penalty_factor)?;
    if update_decision(&candidate, &baseline.eval_costs, significance) {
        baseline.params = params.clone();
        baseline.history.push(mean(&candidate));
        baseline.eval_costs = candidate;
        baseline.updates += 1;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// The paired one-sided test behind [`maybe_update_baseline`].
pub fn update_decision(candidate: &[f64], baseline: &[f64], significance: f64) -> bool {
    let t = paired_improvement_test(candidate, baseline);
    t.mean_improvement > 0.0 && t.p_value < significance
}

/// Per-instance contribution to a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub cost: f64,
    pub baseline_cost: f64,
    pub feasible: bool,
    /// Whether the env checker accepted the sampled solution.
    pub verified: bool,
    pub log_prob: f64,
    /// Gradient of `(cost - baseline_cost) * log p` (not yet averaged).
    pub grads: Option<Vec<Tensor>>,
}

/// Samples one rollout and returns its REINFORCE gradient.
pub fn sample_gradient(
    params: &PolicyParams,
    baseline: &PolicyParams,
    inst: &Instance,
    env: EnvFlags,
    penalty_factor: f64,
    rng: &mut dyn RngCore,
) -> Result<SampleOutcome, PolicyError> {
    let s = params.session(true);
    let enc = params.encode(&s, inst)?;
    let ep = params.rollout(&s, &enc, inst, env, ActionSource::Sample(rng))?;
    let cost = ep.cost(|u| deadlock_penalty(inst, u, penalty_factor));
    let (feasible, verified) = match &ep.outcome {
        Outcome::Solved(sol) => (true, check_solution(inst, sol, &env).is_pass()),
        Outcome::Deadlocked { .. } => (false, true),
    };
    let baseline_cost = greedy_cost(baseline, inst, env, penalty_factor)?;
    let adv = cost - baseline_cost;
    let log_prob = s.tape.item(ep.log_prob);
    let grads = if adv != 0.0 {
        let loss = s.tape.scale(ep.log_prob, adv);
        Some(s.gradients(loss)?)
    } else {
        None
    };
    Ok(SampleOutcome {
        cost,
        baseline_cost,
        feasible,
        verified,
        log_prob,
        grads,
    })
}

/// Gradient of `advantage * log p(actions)` for a fixed action sequence.
pub fn replay_loss_and_gradient(
    params: &PolicyParams,
    inst: &Instance,
    env: EnvFlags,
    actions: &[crate::env::Action],
    advantage: f64,
) -> Result<(f64, Vec<Tensor>), PolicyError> {
    let s = params.session(true);
    let enc = params.encode(&s, inst)?;
    let ep = params.rollout(&s, &enc, inst, env, ActionSource::Replay(actions))?;
    let loss = s.tape.scale(ep.log_prob, advantage);
    let value = s.tape.item(loss);
    Ok((value, s.gradients(loss)?))
}

/// Loss value only, for finite differences.
pub fn replay_loss(params: &PolicyParams, inst: &Instance, env: EnvFlags, actions: &[crate::env::Action], advantage: f64) -> Result<f64, PolicyError> {
    let s = params.session(false);
    let enc = params.encode(&s, inst)?;
    let ep = params.rollout(&s, &enc, inst, env, ActionSource::Replay(actions))?;
    Ok(advantage * s.tape.item(ep.log_prob))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchStats {
    pub mean_cost: f64,
    pub mean_baseline_cost: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub infeasible: usize,
    pub check_failures: usize,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean sampled cost, deadlocks penalised.
    pub mean_cost: f64,
    pub baseline_cost: f64,
    /// Mean gradient norm over applied batches.
    pub grad_norm: f64,
    pub infeasible_rate: f64,
    pub skipped_batches: usize,
    pub check_failures: usize,
    pub baseline_updated: bool,
}

/// Owns the policy, optimiser, baseline and held-out set.
pub struct Trainer {
    pub config: TrainConfig,
    pub policy: PolicyParams,
    pub baseline: BaselineState,
    pub eval_set: Vec<Instance>,
    adam: Adam,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, policy: PolicyParams) -> Result<Self, TrainError> {
        config.validate()?;
        let eval_set = build_eval_set(&config)?;
        let baseline = BaselineState::new(policy.clone(), &eval_set, config.env, config.penalty_factor)?;
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            policy.store().tensors(),
        );
        Ok(Self {
            config,
            policy,
            baseline,
            eval_set,
            adam,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    fn batch_instances(&self, batch: usize) -> Result<Vec<Instance>, TrainError> {
        let cfg = &self.config;
        let first = (self.epoch * cfg.batches_per_epoch() + batch) * cfg.batch_size;
        let end_in_epoch = ((batch + 1) * cfg.batch_size).min(cfg.instances_per_epoch);
        let count = end_in_epoch.saturating_sub(batch * cfg.batch_size);
        (0..count)
            .map(|k| {
                let idx = first + k;
                match &cfg.source {
                    InstanceSource::Generate(g) => Ok(generate_instance(g, derive_seed(cfg.seed, TAG_TRAIN, idx as u64))?),
                    InstanceSource::Fixed(pool) => Ok(pool[idx % pool.len()].clone()),
                }
            })
            .collect()
    }

    /// One optimiser step over `instances`.
    pub fn train_batch(&mut self, instances: &[Instance], batch_seed: u64) -> Result<BatchStats, TrainError> {
        let env = self.config.env;
        let pf = self.config.penalty_factor;
        let policy = &self.policy;
        let baseline = self.baseline.params();
        let one = |(k, inst): (usize, &Instance)| {
            let mut rng = sample_rng(batch_seed, k as u64);
            sample_gradient(policy, baseline, inst, env, pf, &mut rng)
        };
        #[cfg(feature = "parallel")]
        let outcomes: Vec<Result<SampleOutcome, PolicyError>> = {
            use rayon::prelude::*;
            instances.par_iter().enumerate().map(one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let outcomes: Vec<Result<SampleOutcome, PolicyError>> = instances.iter().enumerate().map(one).collect();

        let b = instances.len().max(1) as f64;
        let mut grads: Vec<Tensor> = self.policy.store().tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        let mut stats = BatchStats::default();
        for o in outcomes {
            let o = o?;
            stats.mean_cost += o.cost / b;
            stats.mean_baseline_cost += o.baseline_cost / b;
            stats.loss += (o.cost - o.baseline_cost) * o.log_prob / b;
            stats.infeasible += usize::from(!o.feasible);
            stats.check_failures += usize::from(!o.verified);
            if let Some(g) = o.grads {
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.add_assign(gi);
                }
            }
        }
        for g in &mut grads {
            g.scale_assign(1.0 / b);
        }
        stats.grad_norm = util::sqrt(grads.iter().map(Tensor::sum_sq).sum());
        if !stats.loss.is_finite() {
            return Ok(stats);
        }
        let outcome = self.adam.step(self.policy.store_mut().tensors_mut(), &grads)?;
        stats.applied = outcome == AdamOutcome::Applied;
        Ok(stats)
    }

    /// Runs one epoch, then tests the baseline for replacement.
    pub fn train_epoch(&mut self) -> Result<EpochStats, TrainError> {
        let batches = self.config.batches_per_epoch();
        self.adam.config.lr = self.config.lr * util::pow(self.config.lr_decay, self.epoch as f64);
        let mut st = EpochStats {
            epoch: self.epoch,
            ..EpochStats::default()
        };
        let mut seen = 0usize;
        let mut cost_sum = 0.0;
        let mut base_sum = 0.0;
        let mut infeasible = 0usize;
        let mut applied = 0usize;
        for b in 0..batches {
            let instances = self.batch_instances(b)?;
            if instances.is_empty() {
                continue;
            }
            let seed = derive_seed(self.config.seed, TAG_SAMPLE, (self.epoch * batches + b) as u64);
            let bs = self.train_batch(&instances, seed)?;
            let n = instances.len();
            seen += n;
            cost_sum += bs.mean_cost * n as f64;
            base_sum += bs.mean_baseline_cost * n as f64;
            infeasible += bs.infeasible;
            st.check_failures += bs.check_failures;
            if bs.applied {
                applied += 1;
                st.grad_norm += bs.grad_norm;
            } else {
                st.skipped_batches += 1;
            }
        }
        if seen > 0 {
            st.mean_cost = cost_sum / seen as f64;
            st.baseline_cost = base_sum / seen as f64;
            st.infeasible_rate = infeasible as f64 / seen as f64;
        }
        if applied > 0 {
            st.grad_norm /= applied as f64;
        }
        st.baseline_updated = maybe_update_baseline(
            &self.policy,
            &mut self.baseline,
            &self.eval_set,
            self.config.env,
            self.config.penalty_factor,
            self.config.significance,
        )?;
        self.epoch += 1;
        Ok(st)
    }

    /// All configured epochs; `on_epoch` sees each epoch's statistics.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochStats, &PolicyParams)) -> Result<Vec<EpochStats>, TrainError> {
        let mut out = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            let st = self.train_epoch()?;
            on_epoch(&st, &self.policy);
            out.push(st);
        }
        Ok(out)
    }
}

/// Held-out instances for the baseline test, disjoint seeds from training.
pub fn build_eval_set(config: &TrainConfig) -> Result<Vec<Instance>, TrainError> {
    match &config.source {
        InstanceSource::Generate(g) => (0..config.eval_size)
            .map(|k| Ok(generate_instance(g, derive_seed(config.seed, TAG_EVAL, k as u64))?))
            .collect(),
        InstanceSource::Fixed(pool) => Ok(pool.iter().take(config.eval_size.max(1)).cloned().collect()),
    }
}
