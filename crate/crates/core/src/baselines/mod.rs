//! Non-neural reference solvers: an exact branch-and-bound oracle for tiny
//! instances, a nearest-feasible constructor and a local-search improver.

mod exact;
mod local_search;
mod nearest;

pub use exact::{solve_exact, ExactConfig, ExactError, ExactOutcome, ExactStats};
pub use local_search::{local_search, LocalSearchStats};
pub use nearest::{nearest_feasible, BaselineError};

use alloc::vec::Vec;

use crate::env::{Action, EnvFlags, RolloutState, Solution, Status};
use crate::instance::Instance;

/// Per-vehicle node sequences of a solution, without the starting depot and
/// without the legs appended by `finalize`.
pub fn route_sequences(sol: &Solution, vehicles: usize) -> Vec<Vec<usize>> {
    let mut out = alloc::vec![Vec::new(); vehicles];
    for r in &sol.routes {
        if let Some(seq) = out.get_mut(r.vehicle) {
            *seq = r.visits.iter().skip(1).filter(|v| !v.closing).map(|v| v.node).collect();
        }
    }
    out
}

/// Replays per-vehicle sequences through the environment. `None` when a step
/// is masked or customers remain unserved.
pub fn replay_sequences(inst: &Instance, flags: EnvFlags, seqs: &[Vec<usize>]) -> Option<Solution> {
    let mut st = RolloutState::new(inst, flags);
    for (j, seq) in seqs.iter().enumerate() {
        for &node in seq {
            st.step(Action::new(j, node)).ok()?;
        }
    }
    if st.status() != Status::Done {
        return None;
    }
    st.finalize().ok()
}
