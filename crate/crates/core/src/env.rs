//! The routing MDP: per-vehicle state, the action mask, transitions with
//! charging and reload semantics, episode finalisation, and an independent
//! re-simulation checker for finished solutions.
//!
//! Mask rules, in the order they are reported:
//!
//! | rule | masks node `i` for vehicle `j` when |
//! |------|--------------------------------------|
//! | `Visited` | `i` is a customer already served |
//! | `Capacity` | `d_i > rc_j` |
//! | `RepeatDepot` | `j` stands at the depot and `i` is the depot |
//! | `Energy` | for every harbour `k`, `re_j < ec(loc_j, i) + ec(i, k)` |
//! | `TimeWindow` | (`tw_hard`) `tau_j + tt(loc_j, i) > tw_close_i` |
//! | `SameNode` | `i` is where `j` already stands |
//! | `Detour` | (`prune_detours`) `i` is the depot, or a station not separated from its last visit by a depot visit, already visited since `j`'s last customer |
//!
//! Harbours are the charging stations, plus the depot when `depot_harbor`
//! is set. Depot and stations have the whole horizon as their window, so
//! `TimeWindow` also stops vehicles from wandering past `t_max`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::instance::{Instance, NodeKind};

/// Behavioural switches shared by the mask, the transition and the checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvFlags {
    /// Mask nodes whose window closes before the vehicle can arrive.
    pub tw_hard: bool,
    /// Count the depot as an energy harbour in the `Energy` rule.
    pub depot_harbor: bool,
    /// Minutes for a full recharge from empty (linear charging).
    pub full_recharge_minutes: f64,
    /// Mask non-customer revisits that only repeat an earlier state later in time.
    pub prune_detours: bool,
}

impl Default for EnvFlags {
    fn default() -> Self {
        Self {
            tw_hard: true,
            depot_harbor: true,
            full_recharge_minutes: 60.0,
            prune_detours: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskRule {
    Visited,
    Capacity,
    RepeatDepot,
    Energy,
    TimeWindow,
    SameNode,
    Detour,
}

impl fmt::Display for MaskRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MaskRule::Visited => "customer already served",
            MaskRule::Capacity => "demand exceeds remaining cargo",
            MaskRule::RepeatDepot => "consecutive depot visit",
            MaskRule::Energy => "no harbour reachable afterwards",
            MaskRule::TimeWindow => "window closes before arrival",
            MaskRule::SameNode => "vehicle already at node",
            MaskRule::Detour => "repeats a harbour visit without progress",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub vehicle: usize,
    pub node: usize,
}

impl Action {
    pub fn new(vehicle: usize, node: usize) -> Self {
        Self { vehicle, node }
    }
}

/// One stop of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visit {
    pub node: usize,
    pub arrival: f64,
    /// After waiting for the window to open and any recharge.
    pub departure: f64,
    pub energy_arrival: f64,
    pub energy_departure: f64,
    pub cargo_departure: u32,
    /// Appended by [`RolloutState::finalize`] to bring the vehicle home.
    pub closing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub remaining_cargo: u32,
    pub remaining_energy: f64,
    pub location: usize,
    pub clock: f64,
    pub route: Vec<Visit>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("vehicle {0} does not exist")]
    NoSuchVehicle(usize),
    #[error("node {0} does not exist")]
    NoSuchNode(usize),
    #[error("action {action:?} is masked: {rule}")]
    Masked { action: Action, rule: MaskRule },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FinalizeError {
    #[error("{0} customers are still unserved")]
    Unserved(usize),
    #[error("vehicle {0} cannot get back to the depot on its remaining energy")]
    Stranded(usize),
}

/// Why an episode cannot be completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deadlock {
    /// Every vehicle has an empty feasible set while customers remain.
    NoFeasibleAction,
    /// Some unserved customer can no longer be reached in time by any vehicle
    /// (only detected on instances whose travel times are metric).
    UnreachableCustomer(usize),
    /// Safety bound on episode length.
    StepLimit,
    /// All customers served but a vehicle cannot return home.
    Stranded(usize),
}

impl fmt::Display for Deadlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Deadlock::NoFeasibleAction => f.write_str("no vehicle has a feasible action"),
            Deadlock::UnreachableCustomer(c) => write!(f, "customer {c} can no longer be reached in time"),
            Deadlock::StepLimit => f.write_str("step limit reached"),
            Deadlock::Stranded(j) => write!(f, "vehicle {j} cannot return to the depot"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Done,
    Deadlocked(Deadlock),
}

/// Mutable rollout state. Borrows the instance read-only.
#[derive(Debug, Clone)]
pub struct RolloutState<'a> {
    inst: &'a Instance,
    flags: EnvFlags,
    vehicles: Vec<VehicleState>,
    served: Vec<bool>,
    unserved: usize,
    steps: usize,
    step_limit: usize,
    reward_sum: f64,
    /// `min_k ec(i, k)` over harbours `k`, infinite when there are none.
    harbor_ec: Vec<f64>,
}

impl<'a> RolloutState<'a> {
    pub fn new(inst: &'a Instance, flags: EnvFlags) -> Self {
        let vehicles = inst
            .fleet()
            .iter()
            .map(|v| VehicleState {
                remaining_cargo: v.cargo_capacity,
                remaining_energy: v.battery_capacity,
                location: 0,
                clock: 0.0,
                route: vec![Visit {
                    node: 0,
                    arrival: 0.0,
                    departure: 0.0,
                    energy_arrival: v.battery_capacity,
                    energy_departure: v.battery_capacity,
                    cargo_departure: v.cargo_capacity,
                    closing: false,
                }],
            })
            .collect();
        let harbor_ec = (0..inst.len())
            .map(|i| {
                let mut best = f64::INFINITY;
                for &k in inst.stations() {
                    best = best.min(inst.ec(i, k));
                }
                if flags.depot_harbor {
                    best = best.min(inst.ec(i, 0));
                }
                best
            })
            .collect();
        let n = inst.len();
        Self {
            inst,
            flags,
            vehicles,
            served: vec![false; n],
            unserved: inst.customers().len(),
            steps: 0,
            step_limit: 16 * n * inst.fleet().len() + 64,
            reward_sum: 0.0,
            harbor_ec,
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn flags(&self) -> EnvFlags {
        self.flags
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn vehicle(&self, j: usize) -> &VehicleState {
        &self.vehicles[j]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reward_sum(&self) -> f64 {
        self.reward_sum
    }

    pub fn is_served(&self, i: usize) -> bool {
        self.served[i]
    }

    pub fn unserved_count(&self) -> usize {
        self.unserved
    }

    /// Served customers, in node order.
    pub fn visited(&self) -> impl Iterator<Item = usize> + '_ {
        self.inst.customers().iter().copied().filter(|&c| self.served[c])
    }

    /// Customers still to serve, in node order.
    pub fn to_visit(&self) -> impl Iterator<Item = usize> + '_ {
        self.inst.customers().iter().copied().filter(|&c| !self.served[c])
    }

    /// First mask rule that forbids `node` for `vehicle`, if any.
    pub fn mask_reason(&self, vehicle: usize, node: usize) -> Option<MaskRule> {
        let inst = self.inst;
        let v = &self.vehicles[vehicle];
        let cur = v.location;
        let kind = inst.kind(node);
        if kind == NodeKind::Customer && self.served[node] {
            return Some(MaskRule::Visited);
        }
        if inst.demand(node) > v.remaining_cargo {
            return Some(MaskRule::Capacity);
        }
        if kind == NodeKind::Depot && cur == 0 {
            return Some(MaskRule::RepeatDepot);
        }
        if v.remaining_energy < inst.ec(cur, node) + self.harbor_ec[node] {
            return Some(MaskRule::Energy);
        }
        if self.flags.tw_hard && v.clock + inst.tt(cur, node) > inst.node(node).tw_close {
            return Some(MaskRule::TimeWindow);
        }
        if node == cur {
            return Some(MaskRule::SameNode);
        }
        if self.flags.prune_detours && kind != NodeKind::Customer && self.repeats_detour(v, node) {
            return Some(MaskRule::Detour);
        }
        None
    }

    /// Whether `node` already appears in the stops after the vehicle's last
    /// customer; for a station, only stops after the last depot visit count.
    fn repeats_detour(&self, v: &VehicleState, node: usize) -> bool {
        for visit in v.route.iter().rev() {
            match self.inst.kind(visit.node) {
                NodeKind::Customer => return false,
                _ if visit.node == node => return true,
                NodeKind::Depot => return false,
                NodeKind::Station => {}
            }
        }
        false
    }

    /// `true` = masked.
    pub fn build_mask(&self, vehicle: usize) -> Vec<bool> {
        (0..self.inst.len()).map(|i| self.mask_reason(vehicle, i).is_some()).collect()
    }

    pub fn has_feasible_action(&self, vehicle: usize) -> bool {
        (0..self.inst.len()).any(|i| self.mask_reason(vehicle, i).is_none())
    }

    /// `true` = vehicle has nothing it may do.
    pub fn vehicle_mask(&self) -> Vec<bool> {
        (0..self.vehicles.len()).map(|j| !self.has_feasible_action(j)).collect()
    }

    /// An unserved customer no vehicle can reach before its window closes.
    /// Sound only when travel times are metric (detours never arrive earlier).
    pub fn unreachable_customer(&self) -> Option<usize> {
        if !self.flags.tw_hard || !self.inst.is_metric() {
            return None;
        }
        self.to_visit().find(|&c| {
            let close = self.inst.node(c).tw_close;
            self.vehicles
                .iter()
                .all(|v| v.clock + self.inst.tt(v.location, c) > close)
        })
    }

    pub fn status(&self) -> Status {
        if self.unserved == 0 {
            return Status::Done;
        }
        if self.steps >= self.step_limit {
            return Status::Deadlocked(Deadlock::StepLimit);
        }
        if let Some(c) = self.unreachable_customer() {
            return Status::Deadlocked(Deadlock::UnreachableCustomer(c));
        }
        if (0..self.vehicles.len()).all(|j| !self.has_feasible_action(j)) {
            return Status::Deadlocked(Deadlock::NoFeasibleAction);
        }
        Status::Running
    }

    /// Applies an unmasked action; returns the reward `-tt`.
    pub fn step(&mut self, action: Action) -> Result<f64, StepError> {
        let Action { vehicle, node } = action;
        if vehicle >= self.vehicles.len() {
            return Err(StepError::NoSuchVehicle(vehicle));
        }
        if node >= self.inst.len() {
            return Err(StepError::NoSuchNode(node));
        }
        if let Some(rule) = self.mask_reason(vehicle, node) {
            return Err(StepError::Masked { action, rule });
        }
        let tt = self.move_vehicle(vehicle, node, false);
        if self.inst.kind(node) == NodeKind::Customer {
            self.served[node] = true;
            self.unserved -= 1;
        }
        self.steps += 1;
        self.reward_sum -= tt;
        Ok(-tt)
    }

    fn move_vehicle(&mut self, vehicle: usize, node: usize, closing: bool) -> f64 {
        let inst = self.inst;
        let spec = inst.fleet()[vehicle];
        let full_minutes = self.flags.full_recharge_minutes;
        let v = &mut self.vehicles[vehicle];
        let tt = inst.tt(v.location, node);
        v.remaining_energy -= inst.ec(v.location, node);
        v.clock += tt;
        let arrival = v.clock;
        let energy_arrival = v.remaining_energy;
        let rec = inst.node(node);
        if v.clock < rec.tw_open {
            v.clock = rec.tw_open;
        }
        match rec.kind {
            NodeKind::Customer => v.remaining_cargo -= inst.demand(node),
            NodeKind::Station | NodeKind::Depot => {
                let deficit = spec.battery_capacity - v.remaining_energy;
                v.clock += deficit / spec.battery_capacity * full_minutes;
                v.remaining_energy = spec.battery_capacity;
                if rec.kind == NodeKind::Depot {
                    v.remaining_cargo = spec.cargo_capacity;
                }
            }
        }
        v.location = node;
        v.route.push(Visit {
            node,
            arrival,
            departure: v.clock,
            energy_arrival,
            energy_departure: v.remaining_energy,
            cargo_departure: v.remaining_cargo,
            closing,
        });
        tt
    }

    /// Brings every vehicle home (through the cheapest usable station when the
    /// battery cannot cover the direct leg) and emits the solution.
    pub fn finalize(mut self) -> Result<Solution, FinalizeError> {
        if self.unserved > 0 {
            return Err(FinalizeError::Unserved(self.unserved));
        }
        let inst = self.inst;
        let step_cost = -self.reward_sum;
        let mut return_cost = 0.0;
        for j in 0..self.vehicles.len() {
            let cur = self.vehicles[j].location;
            if cur == 0 {
                continue;
            }
            let re = self.vehicles[j].remaining_energy;
            let cap = inst.fleet()[j].battery_capacity;
            if re >= inst.ec(cur, 0) {
                return_cost += self.move_vehicle(j, 0, true);
                continue;
            }
            let via = inst
                .stations()
                .iter()
                .copied()
                .filter(|&k| k != cur && re >= inst.ec(cur, k) && cap >= inst.ec(k, 0))
                .min_by(|&a, &b| {
                    let ca = inst.tt(cur, a) + inst.tt(a, 0);
                    let cb = inst.tt(cur, b) + inst.tt(b, 0);
                    ca.total_cmp(&cb).then(a.cmp(&b))
                });
            match via {
                Some(k) => {
                    return_cost += self.move_vehicle(j, k, true);
                    return_cost += self.move_vehicle(j, 0, true);
                }
                None => return Err(FinalizeError::Stranded(j)),
            }
        }
        let routes = self
            .vehicles
            .into_iter()
            .enumerate()
            .map(|(vehicle, v)| VehicleRoute {
                vehicle,
                visits: v.route,
            })
            .collect();
        Ok(Solution {
            routes,
            step_cost,
            return_cost,
            total_cost: step_cost + return_cost,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRoute {
    pub vehicle: usize,
    pub visits: Vec<Visit>,
}

impl VehicleRoute {
    pub fn nodes(&self) -> Vec<usize> {
        self.visits.iter().map(|v| v.node).collect()
    }
}

/// Finished routes for the whole fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub routes: Vec<VehicleRoute>,
    /// `-sum` of step rewards.
    pub step_cost: f64,
    /// Travel time of the legs appended by `finalize`.
    pub return_cost: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    RouteCount { expected: usize, found: usize },
    UnknownVehicle(usize),
    UnknownNode(usize),
    NotStartingAtDepot,
    NotEndingAtDepot,
    RepeatedNode,
    ConsecutiveDepot,
    UnservedCustomer(usize),
    ServedTwice(usize),
    Cargo,
    Energy,
    TimeWindow { arrival: f64, close: f64 },
    TimingMismatch { recorded: f64, replayed: f64 },
    CostMismatch { recorded: f64, replayed: f64 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::RouteCount { expected, found } => write!(f, "expected {expected} routes, found {found}"),
            ViolationKind::UnknownVehicle(j) => write!(f, "unknown vehicle {j}"),
            ViolationKind::UnknownNode(i) => write!(f, "unknown node {i}"),
            ViolationKind::NotStartingAtDepot => f.write_str("route does not start at the depot"),
            ViolationKind::NotEndingAtDepot => f.write_str("route does not end at the depot"),
            ViolationKind::RepeatedNode => f.write_str("same node twice in a row"),
            ViolationKind::ConsecutiveDepot => f.write_str("consecutive depot visits"),
            ViolationKind::UnservedCustomer(c) => write!(f, "unserved customer {c}"),
            ViolationKind::ServedTwice(c) => write!(f, "customer {c} served twice"),
            ViolationKind::Cargo => f.write_str("cargo"),
            ViolationKind::Energy => f.write_str("energy"),
            ViolationKind::TimeWindow { arrival, close } => {
                write!(f, "arrival {arrival:.3} after window close {close:.3}")
            }
            ViolationKind::TimingMismatch { recorded, replayed } => {
                write!(f, "recorded time {recorded} differs from replay {replayed}")
            }
            ViolationKind::CostMismatch { recorded, replayed } => {
                write!(f, "recorded cost {recorded} differs from replay {replayed}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub vehicle: Option<usize>,
    /// Index into the vehicle's visit list.
    pub position: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass { cost: f64 },
    Fail(Violation),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

fn fail(vehicle: Option<usize>, position: Option<usize>, kind: ViolationKind) -> Verdict {
    Verdict::Fail(Violation {
        vehicle,
        position,
        kind,
    })
}

/// Replays every route from scratch and reports the first violated constraint.
///
/// Only customer windows are checked against the clock; depot and station
/// windows span the horizon and the trip home is not horizon-bound.
pub fn check_solution(inst: &Instance, sol: &Solution, flags: &EnvFlags) -> Verdict {
    let n = inst.len();
    let nu = inst.fleet().len();
    if sol.routes.len() != nu {
        return fail(
            None,
            None,
            ViolationKind::RouteCount {
                expected: nu,
                found: sol.routes.len(),
            },
        );
    }
    let mut seen_vehicle = vec![false; nu];
    let mut served = vec![0usize; n];
    let mut total = 0.0;
    for route in &sol.routes {
        let j = route.vehicle;
        if j >= nu || seen_vehicle[j] {
            return fail(Some(j), None, ViolationKind::UnknownVehicle(j));
        }
        seen_vehicle[j] = true;
        let spec = inst.fleet()[j];
        let visits = &route.visits;
        match visits.first() {
            Some(v) if v.node == 0 => {}
            _ => return fail(Some(j), Some(0), ViolationKind::NotStartingAtDepot),
        }
        if visits.last().map(|v| v.node) != Some(0) {
            return fail(Some(j), Some(visits.len().saturating_sub(1)), ViolationKind::NotEndingAtDepot);
        }
        let mut cargo = spec.cargo_capacity as i64;
        let mut energy = spec.battery_capacity;
        let mut clock = 0.0f64;
        for (pos, w) in visits.windows(2).enumerate() {
            let (from, to) = (w[0].node, w[1].node);
            let pos = pos + 1;
            if to >= n {
                return fail(Some(j), Some(pos), ViolationKind::UnknownNode(to));
            }
            if from == to {
                return fail(Some(j), Some(pos), ViolationKind::RepeatedNode);
            }
            if from == 0 && to == 0 {
                return fail(Some(j), Some(pos), ViolationKind::ConsecutiveDepot);
            }
            let tt = inst.tt(from, to);
            total += tt;
            clock += tt;
            energy -= inst.ec(from, to);
            if energy < -1e-9 {
                return fail(Some(j), Some(pos), ViolationKind::Energy);
            }
            let arrival = clock;
            if (w[1].arrival - arrival).abs() > 1e-6 * arrival.abs().max(1.0) {
                return fail(
                    Some(j),
                    Some(pos),
                    ViolationKind::TimingMismatch {
                        recorded: w[1].arrival,
                        replayed: arrival,
                    },
                );
            }
            let rec = inst.node(to);
            match rec.kind {
                NodeKind::Customer => {
                    if flags.tw_hard && arrival > rec.tw_close {
                        return fail(
                            Some(j),
                            Some(pos),
                            ViolationKind::TimeWindow {
                                arrival,
                                close: rec.tw_close,
                            },
                        );
                    }
                    served[to] += 1;
                    if served[to] > 1 {
                        return fail(Some(j), Some(pos), ViolationKind::ServedTwice(to));
                    }
                    cargo -= inst.demand(to) as i64;
                    if cargo < 0 {
                        return fail(Some(j), Some(pos), ViolationKind::Cargo);
                    }
                    clock = clock.max(rec.tw_open);
                }
                NodeKind::Station | NodeKind::Depot => {
                    clock += (spec.battery_capacity - energy) / spec.battery_capacity * flags.full_recharge_minutes;
                    energy = spec.battery_capacity;
                    if rec.kind == NodeKind::Depot {
                        cargo = spec.cargo_capacity as i64;
                    }
                }
            }
        }
    }
    if let Some(&c) = inst.customers().iter().find(|&&c| served[c] == 0) {
        return fail(None, None, ViolationKind::UnservedCustomer(c));
    }
    if (sol.total_cost - total).abs() > 1e-9 * total.max(1.0) {
        return fail(
            None,
            None,
            ViolationKind::CostMismatch {
                recorded: sol.total_cost,
                replayed: total,
            },
        );
    }
    Verdict::Pass { cost: total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, GeneratorConfig, NodeRecord, SquareMatrix, Vehicle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node(id: usize, kind: NodeKind, open: f64, close: f64) -> NodeRecord {
        NodeRecord {
            id,
            x: 0.0,
            y: 0.0,
            tw_open: open,
            tw_close: close,
            kind,
        }
    }

    /// depot, customers a, b, station s; tt given by `tt`, energy = tt.
    fn line_instance(tt: [[f64; 4]; 4], battery: f64, cargo: u32, demands: [u32; 2]) -> Instance {
        let nodes = vec![
            node(0, NodeKind::Depot, 0.0, 900.0),
            node(1, NodeKind::Customer, 0.0, 900.0),
            node(2, NodeKind::Customer, 130.0, 900.0),
            node(3, NodeKind::Station, 0.0, 900.0),
        ];
        let rows: Vec<Vec<f64>> = tt.iter().map(|r| r.to_vec()).collect();
        let m = SquareMatrix::from_rows(&rows).unwrap();
        Instance::new(
            900.0,
            nodes,
            vec![0, demands[0], demands[1], 0],
            vec![Vehicle::new(battery, cargo)],
            m.clone(),
            m,
        )
        .unwrap()
    }

    #[test]
    fn reward_is_negative_travel_time() {
        let tt = [[0.0, 5.0, 9.0, 4.0], [5.0, 0.0, 7.0, 3.0], [6.0, 7.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 20, [3, 4]);
        let mut s = RolloutState::new(&inst, EnvFlags::default());
        let mut total = 0.0;
        total += s.step(Action::new(0, 1)).unwrap();
        total += s.step(Action::new(0, 2)).unwrap();
        total += s.step(Action::new(0, 0)).unwrap();
        assert_eq!(total, -18.0);
        let sol = s.finalize().unwrap();
        assert_eq!(sol.total_cost, 18.0);
        assert_eq!(sol.return_cost, 0.0);
        assert_eq!(check_solution(&inst, &sol, &EnvFlags::default()), Verdict::Pass { cost: 18.0 });
    }

    #[test]
    fn early_arrival_waits_for_window() {
        let tt = [[0.0, 50.0, 100.0, 4.0], [50.0, 0.0, 50.0, 3.0], [100.0, 50.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 20, [3, 4]);
        let mut s = RolloutState::new(&inst, EnvFlags::default());
        s.step(Action::new(0, 1)).unwrap();
        s.step(Action::new(0, 2)).unwrap();
        let v = s.vehicle(0);
        assert_eq!(v.route.last().unwrap().arrival, 100.0);
        assert_eq!(v.clock, 130.0);
    }

    #[test]
    fn station_resets_energy() {
        let tt = [[0.0, 5.0, 9.0, 4.0], [5.0, 0.0, 7.0, 3.0], [9.0, 7.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 20, [3, 4]);
        let mut s = RolloutState::new(&inst, EnvFlags::default());
        s.vehicles[0].remaining_energy = 124.0;
        s.step(Action::new(0, 3)).unwrap();
        let v = s.vehicle(0);
        assert_eq!(v.route.last().unwrap().energy_arrival, 120.0);
        assert_eq!(v.remaining_energy, 500.0);
        // linear recharge: 380 kWh of 500 at 60 min per full charge
        assert!((v.clock - (4.0 + 380.0 / 500.0 * 60.0)).abs() < 1e-12);
    }

    #[test]
    fn capacity_and_visited_rules() {
        let tt = [[0.0, 5.0, 9.0, 4.0], [5.0, 0.0, 7.0, 3.0], [9.0, 7.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 14, [5, 9]);
        let mut s = RolloutState::new(&inst, EnvFlags::default());
        s.step(Action::new(0, 1)).unwrap();
        assert_eq!(s.vehicle(0).remaining_cargo, 9);
        assert_eq!(s.mask_reason(0, 1), Some(MaskRule::Visited));
        assert_eq!(s.mask_reason(0, 2), None);
        s.vehicles[0].remaining_cargo = 5;
        assert_eq!(s.mask_reason(0, 2), Some(MaskRule::Capacity));
        let err = s.step(Action::new(0, 2)).unwrap_err();
        assert_eq!(
            err,
            StepError::Masked {
                action: Action::new(0, 2),
                rule: MaskRule::Capacity
            }
        );
    }

    #[test]
    fn repeat_depot_masked() {
        let tt = [[0.0, 5.0, 9.0, 4.0], [5.0, 0.0, 7.0, 3.0], [9.0, 7.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 20, [3, 4]);
        let s = RolloutState::new(&inst, EnvFlags::default());
        assert_eq!(s.mask_reason(0, 0), Some(MaskRule::RepeatDepot));
        assert_eq!(s.mask_reason(0, 3), None);
    }

    #[test]
    fn energy_rule_uses_cheapest_harbor() {
        // cur = depot, ec(0, 1) = 60, onward to station 45, to depot 70
        let tt = [[0.0, 60.0, 9.0, 4.0], [70.0, 0.0, 7.0, 45.0], [9.0, 7.0, 0.0, 3.0], [4.0, 50.0, 3.0, 0.0]];
        let inst = line_instance(tt, 100.0, 20, [3, 4]);
        let s = RolloutState::new(&inst, EnvFlags::default());
        // 60 + min(45, 70) = 105 > 100
        assert_eq!(s.mask_reason(0, 1), Some(MaskRule::Energy));
        let inst = line_instance(tt, 105.0, 20, [3, 4]);
        let s = RolloutState::new(&inst, EnvFlags::default());
        assert_eq!(s.mask_reason(0, 1), None);
    }

    #[test]
    fn finalize_returns_home() {
        let tt = [[0.0, 40.0, 9.0, 4.0], [40.0, 0.0, 7.0, 3.0], [9.0, 7.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 20, [3, 4]);
        let mut s = RolloutState::new(&inst, EnvFlags::default());
        s.step(Action::new(0, 2)).unwrap();
        s.step(Action::new(0, 1)).unwrap();
        let rewards = s.reward_sum();
        let sol = s.finalize().unwrap();
        assert_eq!(sol.return_cost, 40.0);
        assert_eq!(sol.total_cost, -rewards + 40.0);
        assert_eq!(sol.routes[0].nodes(), [0, 2, 1, 0]);
        assert!(check_solution(&inst, &sol, &EnvFlags::default()).is_pass());
    }

    #[test]
    fn finalize_detours_through_station_when_battery_low() {
        let tt = [[0.0, 40.0, 9.0, 30.0], [40.0, 0.0, 7.0, 10.0], [9.0, 7.0, 0.0, 3.0], [30.0, 10.0, 3.0, 0.0]];
        let inst = line_instance(tt, 55.0, 20, [3, 4]);
        let mut s = RolloutState::new(&inst, EnvFlags::default());
        s.step(Action::new(0, 1)).unwrap();
        assert_eq!(s.vehicle(0).remaining_energy, 15.0);
        let sol = s.finalize().unwrap_err();
        assert_eq!(sol, FinalizeError::Unserved(1));
        let mut s = RolloutState::new(&inst, EnvFlags::default());
        s.step(Action::new(0, 2)).unwrap();
        s.step(Action::new(0, 1)).unwrap();
        let sol = s.finalize().unwrap();
        assert_eq!(sol.routes[0].nodes(), [0, 2, 1, 3, 0]);
        assert_eq!(sol.return_cost, 40.0);
        assert!(check_solution(&inst, &sol, &EnvFlags::default()).is_pass());
    }

    #[test]
    fn finalize_rejects_unserved() {
        let tt = [[0.0, 5.0, 9.0, 4.0], [5.0, 0.0, 7.0, 3.0], [9.0, 7.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 20, [3, 4]);
        let s = RolloutState::new(&inst, EnvFlags::default());
        assert_eq!(s.finalize().unwrap_err(), FinalizeError::Unserved(2));
    }

    #[test]
    fn checker_catches_unserved_and_cargo() {
        let tt = [[0.0, 5.0, 9.0, 4.0], [5.0, 0.0, 7.0, 3.0], [9.0, 7.0, 0.0, 3.0], [4.0, 3.0, 3.0, 0.0]];
        let inst = line_instance(tt, 500.0, 20, [3, 4]);
        let visit = |node, arrival| Visit {
            node,
            arrival,
            departure: arrival,
            energy_arrival: 0.0,
            energy_departure: 0.0,
            cargo_departure: 0,
            closing: false,
        };
        let skip = Solution {
            routes: vec![VehicleRoute {
                vehicle: 0,
                visits: vec![visit(0, 0.0), visit(1, 5.0), visit(0, 10.0)],
            }],
            step_cost: 10.0,
            return_cost: 0.0,
            total_cost: 10.0,
        };
        match check_solution(&inst, &skip, &EnvFlags::default()) {
            Verdict::Fail(v) => assert_eq!(v.kind, ViolationKind::UnservedCustomer(2)),
            other => panic!("{other:?}"),
        }
        let heavy = line_instance(tt, 500.0, 20, [12, 13]);
        let sol = Solution {
            routes: vec![VehicleRoute {
                vehicle: 0,
                visits: vec![visit(0, 0.0), visit(1, 5.0), visit(2, 12.0), visit(0, 21.0)],
            }],
            step_cost: 21.0,
            return_cost: 0.0,
            total_cost: 21.0,
        };
        match check_solution(&heavy, &sol, &EnvFlags::default()) {
            Verdict::Fail(v) => assert_eq!(v.kind, ViolationKind::Cargo),
            other => panic!("{other:?}"),
        }
    }

    /// Per-rule evaluation written directly from the rule table, enumerating harbours.
    fn oracle_mask(s: &RolloutState<'_>, j: usize) -> Vec<bool> {
        let inst = s.instance();
        let v = s.vehicle(j);
        let flags = s.flags();
        (0..inst.len())
            .map(|i| {
                let kind = inst.node(i).kind;
                let a = kind == NodeKind::Customer && s.visited().any(|c| c == i);
                let b = inst.demands()[i] > v.remaining_cargo;
                let c = i == 0 && v.location == 0;
                let mut harbors: Vec<usize> = inst.stations().to_vec();
                if flags.depot_harbor {
                    harbors.push(0);
                }
                let d = harbors
                    .iter()
                    .all(|&k| v.remaining_energy < inst.ec(v.location, i) + inst.ec(i, k));
                let e = flags.tw_hard && v.clock + inst.tt(v.location, i) > inst.node(i).tw_close;
                let f = i == v.location;
                let g = flags.prune_detours && kind != NodeKind::Customer && {
                    let since_customer: Vec<usize> = v
                        .route
                        .iter()
                        .rev()
                        .map(|x| x.node)
                        .take_while(|&x| inst.node(x).kind != NodeKind::Customer)
                        .collect();
                    if kind == NodeKind::Depot {
                        since_customer.contains(&0)
                    } else {
                        since_customer.iter().take_while(|&&x| x != 0).any(|&x| x == i)
                    }
                };
                a || b || c || d || e || f || g
            })
            .collect()
    }

    #[test]
    fn mask_matches_rule_oracle_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..600 {
            let size = [3usize, 6, 10][trial % 3];
            let mut cfg = GeneratorConfig::desk(size, 2, 1 + trial % 2);
            cfg.fleet[0].battery_capacity = 60.0 + rng.gen::<f64>() * 60.0;
            let inst = generate_instance(&cfg, trial as u64).unwrap();
            let flags = EnvFlags {
                tw_hard: trial % 4 != 0,
                depot_harbor: trial % 5 != 0,
                prune_detours: trial % 3 != 1,
                ..EnvFlags::default()
            };
            let mut s = RolloutState::new(&inst, flags);
            for _ in 0..rng.gen_range(0..25) {
                for j in 0..inst.fleet().len() {
                    assert_eq!(s.build_mask(j), oracle_mask(&s, j));
                }
                let actions: Vec<Action> = (0..inst.fleet().len())
                    .flat_map(|j| (0..inst.len()).map(move |i| Action::new(j, i)))
                    .filter(|a| s.mask_reason(a.vehicle, a.node).is_none())
                    .collect();
                if actions.is_empty() || s.status() == Status::Done {
                    break;
                }
                s.step(actions[rng.gen_range(0..actions.len())]).unwrap();
            }
        }
    }

    #[test]
    fn energy_ledger_and_feasible_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut completed = 0;
        for trial in 0..300u64 {
            let inst = generate_instance(&GeneratorConfig::desk(6, 2, 1), trial).unwrap();
            let flags = EnvFlags::default();
            let mut s = RolloutState::new(&inst, flags);
            while s.status() == Status::Running {
                let actions: Vec<Action> = (0..2)
                    .flat_map(|j| (0..inst.len()).map(move |i| Action::new(j, i)))
                    .filter(|a| s.mask_reason(a.vehicle, a.node).is_none())
                    .collect();
                s.step(actions[rng.gen_range(0..actions.len())]).unwrap();
                for (j, v) in s.vehicles().iter().enumerate() {
                    let cap = inst.fleet()[j].battery_capacity;
                    let mut since = 0.0;
                    for w in v.route.windows(2) {
                        since += inst.ec(w[0].node, w[1].node);
                        if inst.kind(w[1].node) != NodeKind::Customer {
                            since = 0.0;
                        }
                    }
                    assert!((v.remaining_energy - (cap - since)).abs() < 1e-9);
                }
            }
            if s.status() == Status::Done {
                let rewards = s.reward_sum();
                let sol = s.finalize().unwrap();
                assert!((sol.total_cost - (-rewards + sol.return_cost)).abs() < 1e-9);
                match check_solution(&inst, &sol, &flags) {
                    Verdict::Pass { cost } => assert!((cost - sol.total_cost).abs() < 1e-9),
                    Verdict::Fail(v) => panic!("trial {trial}: {v:?}"),
                }
                completed += 1;
            }
        }
        assert!(completed > 0);
    }
}
