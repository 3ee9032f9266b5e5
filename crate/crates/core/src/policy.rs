//! The routing policy: time-window GAT and edge-enhanced encoder, a vehicle
//! decoder and a node decoder, and the greedy / sampling / replay decode loop.

use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, Deadlock, EnvFlags, RolloutState, Solution, Status, StepError};
use crate::instance::{Instance, NodeKind};
use crate::nn::{
    full_neighbourhood, BatchNorm, Compat, EdgeAttnLayer, EdgeScoring, FeedForward, GatLayer, KeyValues, Linear, Mha,
    ParamStore, Session,
};
use crate::numcore::{TapeError, Tensor, Var};

/// Architecture and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub d_h: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub edge_layers: usize,
    pub d_edge: usize,
    pub d_ff: usize,
    pub clip: f64,
    pub bn_eps: f64,
    /// Edge features enter the encoder attention scores.
    pub use_ee: bool,
    /// Time-window graph attention branch.
    pub use_twe: bool,
    /// Learned vehicle decoder (otherwise round-robin).
    pub use_hd: bool,
    /// Restrict encoder attention to the time-window adjacency.
    pub ee_sparse: bool,
    pub scoring: EdgeScoring,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Ablation variants of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoEe,
    NoTwe,
    NoHd,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoEe, Variant::NoTwe, Variant::NoHd];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEe => "no-ee",
            Variant::NoTwe => "no-twe",
            Variant::NoHd => "no-hd",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl PolicyConfig {
    pub fn desk() -> Self {
        Self {
            d_h: 64,
            heads: 4,
            gat_layers: 2,
            edge_layers: 2,
            d_edge: 16,
            d_ff: 128,
            clip: 10.0,
            bn_eps: 1e-6,
            use_ee: true,
            use_twe: true,
            use_hd: true,
            ee_sparse: false,
            scoring: EdgeScoring::Additive,
        }
    }

    pub fn paper() -> Self {
        Self {
            d_h: 128,
            heads: 8,
            gat_layers: 3,
            edge_layers: 3,
            d_edge: 32,
            d_ff: 256,
            ..Self::desk()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.use_ee = v != Variant::NoEe;
        self.use_twe = v != Variant::NoTwe;
        self.use_hd = v != Variant::NoHd;
        self
    }

    pub fn variant(&self) -> Option<Variant> {
        match (self.use_ee, self.use_twe, self.use_hd) {
            (true, true, true) => Some(Variant::Full),
            (false, true, true) => Some(Variant::NoEe),
            (true, false, true) => Some(Variant::NoTwe),
            (true, true, false) => Some(Variant::NoHd),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = self.d_h > 0
            && self.heads > 0
            && self.d_h.is_multiple_of(self.heads)
            && self.d_edge > 0
            && self.d_ff > 0
            && self.clip > 0.0
            && self.bn_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PolicyError::Config)
        }
    }

}

/// `[x, y, tw_open, tw_close, is_depot, is_station]`, coordinates over the
/// extent, windows over the horizon.
const RAW_DIM: usize = 6;
/// `[ec / E_max, tt / T_max]`.
const EDGE_RAW: usize = 2;
/// `[E_j / E_max, Q_j / Q_max]`.
const FLEET_RAW: usize = 2;
/// `[rc / Q_j, re / E_j, clock / T_max]`.
const STATE_RAW: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("invalid policy configuration")]
    Config,
    #[error(transparent)]
    Tape(TapeError),
    #[error(transparent)]
    Step(#[from] StepError),
    /// Every candidate is masked.
    #[error("no feasible target")]
    NoFeasibleTarget,
    /// Replayed actions ran out or disagree with the mask.
    #[error("replayed action {0} is missing or masked")]
    Replay(usize),
    #[error("sampling needs at least one sample")]
    ZeroSamples,
}

impl From<TapeError> for PolicyError {
    fn from(e: TapeError) -> Self {
        match e {
            TapeError::AllMasked(_) => PolicyError::NoFeasibleTarget,
            other => PolicyError::Tape(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct VehicleDecoder {
    fleet_ff: FeedForward,
    state_ff: FeedForward,
    combine: FeedForward,
    glimpse: Mha,
    compat: Compat,
}

#[derive(Debug, Clone, PartialEq)]
struct Modules {
    gat_input: Option<Linear>,
    gat: Vec<GatLayer>,
    node_proj: Linear,
    node_bn: BatchNorm,
    edge_proj: Option<(Linear, BatchNorm)>,
    edge_layers: Vec<EdgeAttnLayer>,
    vehicle: Option<VehicleDecoder>,
    node_glimpse: Mha,
    node_compat: Compat,
}

/// All learnable weights plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    config: PolicyConfig,
    store: ParamStore,
    m: Modules,
}

impl PolicyParams {
    /// Fresh parameters, initialised deterministically from `seed`.
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let c = &config;
        let d = c.d_h;
        let mut store = ParamStore::new();
        let s = &mut store;

        let (gat_input, gat) = if c.use_twe {
            let input = Linear::new(s, "enc.gat_in", RAW_DIM, d, true, rng);
            let layers = (0..c.gat_layers)
                .map(|l| GatLayer::new(s, &alloc::format!("enc.gat{l}"), d, d, rng))
                .collect();
            (Some(input), layers)
        } else {
            (None, Vec::new())
        };
        let node_in = if c.use_twe { d } else { RAW_DIM } + 1;
        let node_proj = Linear::new(s, "enc.node_proj", node_in, d, true, rng);
        let node_bn = BatchNorm::new(s, "enc.node_bn", d, c.bn_eps);
        let edge_proj = c.use_ee.then(|| {
            (
                Linear::new(s, "enc.edge_proj", EDGE_RAW, c.d_edge, true, rng),
                BatchNorm::new(s, "enc.edge_bn", c.d_edge, c.bn_eps),
            )
        });
        let d_edge = c.use_ee.then_some(c.d_edge);
        let edge_layers = (0..c.edge_layers)
            .map(|l| EdgeAttnLayer::new(s, &alloc::format!("enc.ee{l}"), d, d_edge, c.heads, c.d_ff, c.scoring, c.bn_eps, rng))
            .collect();
        let vehicle = c.use_hd.then(|| VehicleDecoder {
            fleet_ff: FeedForward::new(s, "veh.fleet_ff", FLEET_RAW, c.d_ff, d, true, rng),
            state_ff: FeedForward::new(s, "veh.state_ff", STATE_RAW + d, c.d_ff, d, true, rng),
            combine: FeedForward::new(s, "veh.combine", 2 * d, c.d_ff, d, false, rng),
            glimpse: Mha::new(s, "veh.glimpse", 3 * d, d, d, c.heads, rng),
            compat: Compat::new(s, "veh.compat", d, d, d, c.clip, rng),
        });
        let node_glimpse = Mha::new(s, "node.glimpse", 2 + 2 * d, d, d, c.heads, rng);
        let node_compat = Compat::new(s, "node.compat", d, d, d, c.clip, rng);
        Ok(Self {
            config,
            store,
            m: Modules {
                gat_input,
                gat,
                node_proj,
                node_bn,
                edge_proj,
                edge_layers,
                vehicle,
                node_glimpse,
                node_compat,
            },
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn scalar_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Binds the parameters to a fresh tape.
    pub fn session(&self, trainable: bool) -> Session<'_> {
        Session::new(&self.store, trainable)
    }

    /// Encodes an instance on the session's tape.
    pub fn encode(&self, s: &Session<'_>, inst: &Instance) -> Result<Encoding, PolicyError> {
        let c = &self.config;
        let n = inst.len();
        let ext = inst.coord_extent();
        let t_max = inst.t_max();
        let q_max = inst.max_cargo().max(1) as f64;
        let e_max = inst.max_battery();

        let mut raw = Tensor::zeros(n, RAW_DIM);
        for (i, node) in inst.nodes().iter().enumerate() {
            raw.set(i, 0, node.x / ext);
            raw.set(i, 1, node.y / ext);
            raw.set(i, 2, node.tw_open / t_max);
            raw.set(i, 3, node.tw_close / t_max);
            raw.set(i, 4, f64::from(u8::from(node.kind == NodeKind::Depot)));
            raw.set(i, 5, f64::from(u8::from(node.kind == NodeKind::Station)));
        }
        let raw = s.tape.constant(raw);
        let features = match self.m.gat_input {
            Some(input) => {
                let adj: Vec<bool> = (0..n).flat_map(|i| inst.adjacency().row(i).iter().copied()).collect();
                let mut h = input.forward(s, raw)?;
                for layer in &self.m.gat {
                    h = layer.forward(s, h, &adj)?;
                }
                h
            }
            None => raw,
        };
        let demand = Tensor::from_vec(n, 1, inst.demands().iter().map(|&q| f64::from(q) / q_max).collect());
        let x = s.tape.concat_cols(&[features, s.tape.constant(demand)])?;
        let mut h = self.m.node_bn.forward(s, self.m.node_proj.forward(s, x)?)?;

        let edges = match self.m.edge_proj {
            Some((proj, bn)) => {
                let mut e = Tensor::zeros(n * n, EDGE_RAW);
                for i in 0..n {
                    for j in 0..n {
                        e.set(i * n + j, 0, inst.ec(i, j) / e_max);
                        e.set(i * n + j, 1, inst.tt(i, j) / t_max);
                    }
                }
                let e = s.tape.constant(e);
                Some(bn.forward(s, proj.forward(s, e)?)?)
            }
            None => None,
        };
        let neighbours = if c.ee_sparse {
            (0..n).flat_map(|i| inst.adjacency().row(i).iter().copied()).collect()
        } else {
            full_neighbourhood(n)
        };
        for layer in &self.m.edge_layers {
            h = layer.forward(s, h, edges, &neighbours)?;
        }
        let graph = s.tape.mean_rows(h)?;

        let node_kv = self.m.node_glimpse.project(s, h)?;
        let node_keys = self.m.node_compat.project_keys(s, h)?;
        let fleet = match &self.m.vehicle {
            Some(vd) => {
                let nu = inst.fleet().len();
                let mut f = Tensor::zeros(nu, FLEET_RAW);
                for (j, v) in inst.fleet().iter().enumerate() {
                    f.set(j, 0, v.battery_capacity / e_max);
                    f.set(j, 1, f64::from(v.cargo_capacity) / q_max);
                }
                Some(vd.fleet_ff.forward(s, s.tape.constant(f))?)
            }
            None => None,
        };
        Ok(Encoding {
            nodes: h,
            graph,
            node_kv,
            node_keys,
            fleet,
            d_h: c.d_h,
        })
    }

    fn readout(&self, s: &Session<'_>, enc: &Encoding, idx: &[usize]) -> Result<Var, PolicyError> {
        if idx.is_empty() {
            return Ok(s.tape.constant(Tensor::zeros(1, enc.d_h)));
        }
        let rows = s.tape.gather_rows(enc.nodes, idx)?;
        Ok(s.tape.mean_rows(rows)?)
    }

    /// Log-probabilities `[1, nu]` over vehicles; `None` when the vehicle
    /// decoder is disabled.
    pub fn vehicle_step(&self, s: &Session<'_>, enc: &Encoding, st: &RolloutState<'_>) -> Result<Option<StepDist>, PolicyError> {
        let Some(vd) = &self.m.vehicle else {
            return Ok(None);
        };
        let fleet = enc.fleet.ok_or(PolicyError::Config)?;
        let inst = st.instance();
        let t_max = inst.t_max();
        let nu = inst.fleet().len();
        let keep: Vec<bool> = st.vehicle_mask().iter().map(|m| !m).collect();
        if !keep.iter().any(|&k| k) {
            return Err(PolicyError::NoFeasibleTarget);
        }
        let mut state = Tensor::zeros(nu, STATE_RAW);
        let mut locs = Vec::with_capacity(nu);
        for (j, (v, spec)) in st.vehicles().iter().zip(inst.fleet()).enumerate() {
            state.set(j, 0, f64::from(v.remaining_cargo) / f64::from(spec.cargo_capacity.max(1)));
            state.set(j, 1, v.remaining_energy / spec.battery_capacity);
            state.set(j, 2, v.clock / t_max);
            locs.push(v.location);
        }
        let loc_emb = s.tape.gather_rows(enc.nodes, &locs)?;
        let state_in = s.tape.concat_cols(&[s.tape.constant(state), loc_emb])?;
        let state_emb = vd.state_ff.forward(s, state_in)?;
        let emb = vd.combine.forward(s, s.tape.concat_cols(&[fleet, state_emb])?)?;

        let visited: Vec<usize> = st.visited().collect();
        let to_visit: Vec<usize> = st.to_visit().collect();
        let context = s.tape.concat_cols(&[
            s.tape.mean_rows(emb)?,
            self.readout(s, enc, &visited)?,
            self.readout(s, enc, &to_visit)?,
        ])?;
        let kv = vd.glimpse.project(s, emb)?;
        let glimpse = vd.glimpse.attend(s, context, kv, &keep)?;
        let keys = vd.compat.project_keys(s, emb)?;
        let logits = vd.compat.logits(s, glimpse, keys)?;
        let logp = s.tape.log_softmax_masked(logits, &keep)?;
        Ok(Some(StepDist { logits, logp, keep }))
    }

    /// Log-probabilities `[1, |N|]` over nodes for `vehicle`.
    pub fn node_step(&self, s: &Session<'_>, enc: &Encoding, st: &RolloutState<'_>, vehicle: usize) -> Result<StepDist, PolicyError> {
        let inst = st.instance();
        let keep: Vec<bool> = st.build_mask(vehicle).iter().map(|m| !m).collect();
        if !keep.iter().any(|&k| k) {
            return Err(PolicyError::NoFeasibleTarget);
        }
        let v = st.vehicle(vehicle);
        let spec = inst.fleet()[vehicle];
        let scalars = Tensor::row(&[
            v.remaining_energy / spec.battery_capacity,
            f64::from(v.remaining_cargo) / f64::from(spec.cargo_capacity.max(1)),
        ]);
        let here = s.tape.gather_rows(enc.nodes, &[v.location])?;
        let context = s.tape.concat_cols(&[s.tape.constant(scalars), here, enc.graph])?;
        let glimpse = self.m.node_glimpse.attend(s, context, enc.node_kv, &keep)?;
        let logits = self.m.node_compat.logits(s, glimpse, enc.node_keys)?;
        let logp = s.tape.log_softmax_masked(logits, &keep)?;
        Ok(StepDist { logits, logp, keep })
    }

    /// Runs one episode on an existing encoding.
    pub fn rollout(
        &self,
        s: &Session<'_>,
        enc: &Encoding,
        inst: &Instance,
        flags: EnvFlags,
        source: ActionSource<'_>,
    ) -> Result<Episode, PolicyError> {
        let mut source = source;
        let mut st = RolloutState::new(inst, flags);
        let mut steps = Vec::new();
        let mut picks = Vec::new();
        let mut next_rr = 0usize;
        let outcome = loop {
            match st.status() {
                Status::Done => break None,
                Status::Deadlocked(d) => break Some((d, st.unserved_count())),
                Status::Running => {}
            }
            let k = steps.len();
            let (vehicle, logp_vehicle) = match self.vehicle_step(s, enc, &st)? {
                Some(dist) => {
                    let j = source.choose(&dist, k, |a| a.vehicle, s)?;
                    let pick = s.tape.pick(dist.logp, 0, j)?;
                    picks.push(pick);
                    (j, s.tape.item(pick))
                }
                None => {
                    let mask = st.vehicle_mask();
                    let nu = mask.len();
                    let j = (0..nu)
                        .map(|o| (next_rr + o) % nu)
                        .find(|&j| !mask[j])
                        .ok_or(PolicyError::NoFeasibleTarget)?;
                    if let ActionSource::Replay(acts) = &source {
                        if acts.get(k).map(|a| a.vehicle) != Some(j) {
                            return Err(PolicyError::Replay(k));
                        }
                    }
                    next_rr = j + 1;
                    (j, 0.0)
                }
            };
            let dist = self.node_step(s, enc, &st, vehicle)?;
            let node = source.choose(&dist, k, |a| a.node, s)?;
            let pick = s.tape.pick(dist.logp, 0, node)?;
            picks.push(pick);
            let logp_node = s.tape.item(pick);
            let action = Action::new(vehicle, node);
            st.step(action)?;
            steps.push(StepRecord {
                action,
                logp_vehicle,
                logp_node,
            });
        };
        let log_prob = if picks.is_empty() {
            s.tape.constant(Tensor::scalar(0.0))
        } else {
            s.tape.sum(s.tape.concat_cols(&picks)?)
        };
        let outcome = match outcome {
            Some((reason, unserved)) => Outcome::Deadlocked { reason, unserved },
            None => match st.finalize() {
                Ok(sol) => Outcome::Solved(sol),
                Err(crate::env::FinalizeError::Stranded(j)) => Outcome::Deadlocked {
                    reason: Deadlock::Stranded(j),
                    unserved: 0,
                },
                Err(crate::env::FinalizeError::Unserved(u)) => Outcome::Deadlocked {
                    reason: Deadlock::NoFeasibleAction,
                    unserved: u,
                },
            },
        };
        Ok(Episode { outcome, steps, log_prob })
    }

    /// Greedy decode or best-of-`n` sampling.
    pub fn decode(&self, inst: &Instance, flags: EnvFlags, mode: DecodeMode, seed: u64) -> Result<Decoded, PolicyError> {
        match mode {
            DecodeMode::Greedy => {
                let s = self.session(false);
                let enc = self.encode(&s, inst)?;
                let ep = self.rollout(&s, &enc, inst, flags, ActionSource::Greedy)?;
                Ok(Decoded::from_episodes(core::iter::once(ep.summary())))
            }
            DecodeMode::Sampling { samples } => {
                if samples == 0 {
                    return Err(PolicyError::ZeroSamples);
                }
                let chunks = samples.div_ceil(SAMPLE_CHUNK);
                let run_chunk = |c: usize| -> Result<Vec<EpisodeSummary>, PolicyError> {
                    let s = self.session(false);
                    let enc = self.encode(&s, inst)?;
                    let mark = s.tape.len();
                    let lo = c * SAMPLE_CHUNK;
                    let hi = (lo + SAMPLE_CHUNK).min(samples);
                    let mut out = Vec::with_capacity(hi - lo);
                    for k in lo..hi {
                        let mut rng = sample_rng(seed, k as u64);
                        let ep = self.rollout(&s, &enc, inst, flags, ActionSource::Sample(&mut rng))?;
                        out.push(ep.summary());
                        s.tape.truncate(mark);
                    }
                    Ok(out)
                };
                #[cfg(feature = "parallel")]
                let parts: Vec<Result<Vec<EpisodeSummary>, PolicyError>> = {
                    use rayon::prelude::*;
                    (0..chunks).into_par_iter().map(run_chunk).collect()
                };
                #[cfg(not(feature = "parallel"))]
                let parts: Vec<Result<Vec<EpisodeSummary>, PolicyError>> = (0..chunks).map(run_chunk).collect();
                let mut all = Vec::with_capacity(samples);
                for p in parts {
                    all.extend(p?);
                }
                Ok(Decoded::from_episodes(all.into_iter()))
            }
        }
    }
}

const SAMPLE_CHUNK: usize = 32;

/// Deterministic per-sample generator: stream `k` of the seed's ChaCha family.
pub fn sample_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Encoder output plus per-episode precomputations.
#[derive(Debug, Clone, Copy)]
pub struct Encoding {
    /// `[|N|, d_h]`.
    pub nodes: Var,
    /// `[1, d_h]`, mean of `nodes`.
    pub graph: Var,
    node_kv: KeyValues,
    node_keys: Var,
    /// `FF(f_j)` per vehicle, `[nu, d_h]`.
    fleet: Option<Var>,
    d_h: usize,
}

/// One decoder distribution.
#[derive(Debug, Clone)]
pub struct StepDist {
    /// Clipped compatibilities before masking, `[1, m]`.
    pub logits: Var,
    /// Masked log-softmax, `[1, m]`.
    pub logp: Var,
    pub keep: Vec<bool>,
}

impl StepDist {
    /// Probabilities; exactly zero where masked.
    pub fn probs(&self, s: &Session<'_>) -> Vec<f64> {
        let lp = s.tape.value(self.logp);
        lp.data()
            .iter()
            .zip(&self.keep)
            .map(|(&l, &k)| if k { crate::util::exp(l) } else { 0.0 })
            .collect()
    }
}

/// Where decoding decisions come from.
pub enum ActionSource<'r> {
    Greedy,
    Sample(&'r mut dyn RngCore),
    /// Re-run a recorded action sequence (used to rebuild gradients).
    Replay(&'r [Action]),
}

impl ActionSource<'_> {
    fn choose(&mut self, dist: &StepDist, k: usize, field: impl Fn(&Action) -> usize, s: &Session<'_>) -> Result<usize, PolicyError> {
        let lp = s.tape.value(dist.logp);
        let lp = lp.data();
        match self {
            ActionSource::Greedy => {
                let mut best: Option<usize> = None;
                for (i, &kept) in dist.keep.iter().enumerate() {
                    if kept && best.is_none_or(|b| lp[i] > lp[b]) {
                        best = Some(i);
                    }
                }
                best.ok_or(PolicyError::NoFeasibleTarget)
            }
            ActionSource::Sample(rng) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = None;
                for (i, &kept) in dist.keep.iter().enumerate() {
                    if !kept {
                        continue;
                    }
                    acc += crate::util::exp(lp[i]);
                    last = Some(i);
                    if u < acc {
                        return Ok(i);
                    }
                }
                last.ok_or(PolicyError::NoFeasibleTarget)
            }
            ActionSource::Replay(acts) => {
                let i = acts.get(k).map(field).ok_or(PolicyError::Replay(k))?;
                if dist.keep.get(i).copied() != Some(true) {
                    return Err(PolicyError::Replay(k));
                }
                Ok(i)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub action: Action,
    /// Zero under round-robin vehicle selection.
    pub logp_vehicle: f64,
    pub logp_node: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Solved(Solution),
    Deadlocked {
        reason: Deadlock,
        /// Customers left unserved.
        unserved: usize,
    },
}

impl Outcome {
    /// Travel time, or `penalty(unserved)` when deadlocked.
    pub fn cost(&self, penalty: impl FnOnce(usize) -> f64) -> f64 {
        match self {
            Outcome::Solved(sol) => sol.total_cost,
            Outcome::Deadlocked { unserved, .. } => penalty(*unserved),
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self, Outcome::Solved(_))
    }
}

/// A finished episode whose log-probability lives on the session tape.
#[derive(Debug, Clone)]
pub struct Episode {
    pub outcome: Outcome,
    pub steps: Vec<StepRecord>,
    /// Scalar sum of chosen-action log-probabilities.
    pub log_prob: Var,
}

impl Episode {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|r| r.action).collect()
    }

    pub fn cost(&self, penalty: impl FnOnce(usize) -> f64) -> f64 {
        self.outcome.cost(penalty)
    }

    pub fn summary(self) -> EpisodeSummary {
        let log_prob = self.steps.iter().map(|r| r.logp_vehicle + r.logp_node).sum();
        EpisodeSummary {
            outcome: self.outcome,
            steps: self.steps,
            log_prob,
        }
    }
}

/// An episode detached from its tape.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub outcome: Outcome,
    pub steps: Vec<StepRecord>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sampling { samples: usize },
}

/// Result of [`PolicyParams::decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Cheapest feasible solution, if any episode finished.
    pub best: Option<EpisodeSummary>,
    /// Index of `best` among the episodes.
    pub best_index: Option<usize>,
    pub episodes: usize,
    pub feasible: usize,
    /// Reason the first episode failed, when none succeeded.
    pub deadlock: Option<Deadlock>,
    /// Fewest customers left unserved by any episode.
    pub min_unserved: usize,
}

impl Decoded {
    fn from_episodes(eps: impl Iterator<Item = EpisodeSummary>) -> Self {
        let mut out = Decoded {
            best: None,
            best_index: None,
            episodes: 0,
            feasible: 0,
            deadlock: None,
            min_unserved: usize::MAX,
        };
        for (k, ep) in eps.enumerate() {
            out.episodes += 1;
            match &ep.outcome {
                Outcome::Solved(sol) => {
                    out.feasible += 1;
                    out.min_unserved = 0;
                    let better = match &out.best {
                        Some(EpisodeSummary {
                            outcome: Outcome::Solved(b), ..
                        }) => sol.total_cost < b.total_cost,
                        _ => true,
                    };
                    if better {
                        out.best = Some(ep);
                        out.best_index = Some(k);
                    }
                }
                Outcome::Deadlocked { reason, unserved } => {
                    out.min_unserved = out.min_unserved.min(*unserved);
                    if out.deadlock.is_none() {
                        out.deadlock = Some(*reason);
                    }
                }
            }
        }
        if out.best.is_some() {
            out.deadlock = None;
        }
        out
    }

    pub fn solution(&self) -> Option<&Solution> {
        match &self.best {
            Some(EpisodeSummary {
                outcome: Outcome::Solved(sol), ..
            }) => Some(sol),
            _ => None,
        }
    }

    pub fn cost(&self) -> Option<f64> {
        self.solution().map(|s| s.total_cost)
    }
}
