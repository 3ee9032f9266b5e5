use alloc::vec::Vec;

use thiserror::Error;

use super::{local_search, nearest_feasible};
use crate::env::{Action, EnvFlags, RolloutState, Solution, Status};
use crate::instance::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactConfig {
    pub max_customers: usize,
    pub max_vehicles: usize,
    /// Search nodes expanded before giving up.
    pub node_limit: u64,
    /// Seed the bound with the nearest-feasible + local-search solution.
    pub warm_start: bool,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            max_customers: 8,
            max_vehicles: 2,
            node_limit: 50_000_000,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ExactError {
    #[error("instance too large for the exact solver: {customers} customers, {vehicles} vehicles")]
    TooLarge { customers: usize, vehicles: usize },
    #[error("node limit of {0} reached before the search finished")]
    NodeLimit(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExactOutcome {
    Optimal(Solution),
    /// The search space holds no feasible solution.
    Infeasible,
}

impl ExactOutcome {
    pub fn solution(&self) -> Option<&Solution> {
        match self {
            ExactOutcome::Optimal(s) => Some(s),
            ExactOutcome::Infeasible => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExactStats {
    pub nodes: u64,
    pub pruned: u64,
}

/// Depth-first branch and bound over the environment's actions.
///
/// Vehicles are routed one after another (the acting vehicle index never
/// decreases), which loses nothing because vehicles interact only through the
/// served set. The bound is the cost so far plus, for every unserved customer,
/// its cheapest incoming leg and, for every vehicle away from the depot, the
/// cheapest leg into the depot.
pub fn solve_exact(inst: &Instance, flags: EnvFlags, config: &ExactConfig) -> Result<(ExactOutcome, ExactStats), ExactError> {
    let customers = inst.customers().len();
    let vehicles = inst.fleet().len();
    if customers > config.max_customers || vehicles > config.max_vehicles {
        return Err(ExactError::TooLarge { customers, vehicles });
    }
    let n = inst.len();
    let min_in: Vec<f64> = (0..n)
        .map(|j| (0..n).filter(|&i| i != j).map(|i| inst.tt(i, j)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut search = Search {
        min_in,
        best: None,
        best_cost: f64::INFINITY,
        stats: ExactStats::default(),
        limit: config.node_limit,
        prune_unreachable: flags.tw_hard && inst.is_metric(),
    };
    if config.warm_start {
        if let Ok(sol) = nearest_feasible(inst, flags) {
            let (sol, _) = local_search(&sol, inst, flags, 20_000);
            search.best_cost = sol.total_cost;
            search.best = Some(sol);
        }
    }
    let root = RolloutState::new(inst, flags);
    search.dfs(&root, 0)?;
    let outcome = match search.best {
        Some(s) => ExactOutcome::Optimal(s),
        None => ExactOutcome::Infeasible,
    };
    Ok((outcome, search.stats))
}

struct Search {
    min_in: Vec<f64>,
    best: Option<Solution>,
    best_cost: f64,
    stats: ExactStats,
    limit: u64,
    prune_unreachable: bool,
}

impl Search {
    fn bound(&self, st: &RolloutState<'_>) -> f64 {
        let mut lb = -st.reward_sum();
        for c in st.to_visit() {
            lb += self.min_in[c];
        }
        for v in st.vehicles() {
            if v.location != 0 {
                lb += self.min_in[0];
            }
        }
        lb
    }

    /// Some unserved customer is out of reach of every vehicle that may still move.
    fn stuck(&self, st: &RolloutState<'_>, first_open: usize) -> bool {
        if !self.prune_unreachable {
            return false;
        }
        let inst = st.instance();
        st.to_visit().any(|c| {
            let close = inst.node(c).tw_close;
            st.vehicles()[first_open..]
                .iter()
                .all(|v| v.clock + inst.tt(v.location, c) > close)
        })
    }

    fn dfs(&mut self, st: &RolloutState<'_>, first_open: usize) -> Result<(), ExactError> {
        self.stats.nodes += 1;
        if self.stats.nodes > self.limit {
            return Err(ExactError::NodeLimit(self.limit));
        }
        match st.status() {
            Status::Done => {
                if let Ok(sol) = st.clone().finalize() {
                    if sol.total_cost < self.best_cost {
                        self.best_cost = sol.total_cost;
                        self.best = Some(sol);
                    }
                }
                return Ok(());
            }
            Status::Deadlocked(_) => return Ok(()),
            Status::Running => {}
        }
        if self.bound(st) >= self.best_cost || self.stuck(st, first_open) {
            self.stats.pruned += 1;
            return Ok(());
        }
        let inst = st.instance();
        let mut children: Vec<(f64, Action)> = Vec::new();
        for j in first_open..st.vehicles().len() {
            let here = st.vehicle(j).location;
            for node in 0..inst.len() {
                if st.mask_reason(j, node).is_none() {
                    children.push((inst.tt(here, node), Action::new(j, node)));
                }
            }
        }
        children.sort_by(|a, b| {
            a.1.vehicle
                .cmp(&b.1.vehicle)
                .then(a.0.total_cmp(&b.0))
                .then(a.1.node.cmp(&b.1.node))
        });
        for (_, action) in children {
            let mut child = st.clone();
            if child.step(action).is_ok() {
                self.dfs(&child, action.vehicle)?;
            }
        }
        Ok(())
    }
}
