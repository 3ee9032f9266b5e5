use alloc::vec::Vec;

use thiserror::Error;

use crate::env::{Action, Deadlock, EnvFlags, MaskRule, RolloutState, Solution, Status};
use crate::instance::{Instance, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("construction deadlocked: {0}")]
    Deadlock(Deadlock),
}

/// Nearest-feasible construction.
///
/// Each step takes the unmasked customer with the smallest travel time from
/// any vehicle's position and gives it to the vehicle that can start service
/// there soonest. When no customer is open to any vehicle, the earliest
/// vehicle that is blocked by cargo goes to the depot, or one blocked by
/// energy goes to the nearest open harbour.
pub fn nearest_feasible(inst: &Instance, flags: EnvFlags) -> Result<Solution, BaselineError> {
    let mut st = RolloutState::new(inst, flags);
    loop {
        match st.status() {
            Status::Done => break,
            Status::Deadlocked(d) => return Err(BaselineError::Deadlock(d)),
            Status::Running => {}
        }
        let action = pick_customer(&st).or_else(|| pick_detour(&st)).ok_or(BaselineError::Deadlock(Deadlock::NoFeasibleAction))?;
        st.step(action).map_err(|_| BaselineError::Deadlock(Deadlock::NoFeasibleAction))?;
    }
    st.finalize().map_err(|e| match e {
        crate::env::FinalizeError::Stranded(j) => BaselineError::Deadlock(Deadlock::Stranded(j)),
        crate::env::FinalizeError::Unserved(_) => BaselineError::Deadlock(Deadlock::NoFeasibleAction),
    })
}

fn pick_customer(st: &RolloutState<'_>) -> Option<Action> {
    let inst = st.instance();
    let nu = st.vehicles().len();
    let open: Vec<usize> = st.to_visit().collect();
    let mut nearest: Option<(f64, usize)> = None;
    for &c in &open {
        for j in 0..nu {
            if st.mask_reason(j, c).is_none() {
                let tt = inst.tt(st.vehicle(j).location, c);
                if nearest.is_none_or(|(b, _)| tt < b) {
                    nearest = Some((tt, c));
                }
            }
        }
    }
    let (_, c) = nearest?;
    let mut best: Option<(f64, usize)> = None;
    for j in 0..nu {
        if st.mask_reason(j, c).is_none() {
            let v = st.vehicle(j);
            let start = (v.clock + inst.tt(v.location, c)).max(inst.node(c).tw_open);
            if best.is_none_or(|(b, _)| start < b) {
                best = Some((start, j));
            }
        }
    }
    best.map(|(_, j)| Action::new(j, c))
}

fn pick_detour(st: &RolloutState<'_>) -> Option<Action> {
    let inst = st.instance();
    let mut order: Vec<usize> = (0..st.vehicles().len()).collect();
    order.sort_by(|&a, &b| st.vehicle(a).clock.total_cmp(&st.vehicle(b).clock).then(a.cmp(&b)));
    for j in order {
        let v = st.vehicle(j);
        let reasons: Vec<MaskRule> = st.to_visit().filter_map(|c| st.mask_reason(j, c)).collect();
        if reasons.contains(&MaskRule::Capacity) && v.location != 0 && st.mask_reason(j, 0).is_none() {
            return Some(Action::new(j, 0));
        }
        if reasons.contains(&MaskRule::Energy) {
            let harbour = (0..inst.len())
                .filter(|&k| matches!(inst.kind(k), NodeKind::Station | NodeKind::Depot))
                .filter(|&k| st.mask_reason(j, k).is_none())
                .min_by(|&a, &b| inst.tt(v.location, a).total_cmp(&inst.tt(v.location, b)).then(a.cmp(&b)));
            if let Some(k) = harbour {
                return Some(Action::new(j, k));
            }
        }
    }
    None
}
