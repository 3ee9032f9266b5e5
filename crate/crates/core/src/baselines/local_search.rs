use alloc::vec::Vec;

use super::{replay_sequences, route_sequences};
use crate::env::{EnvFlags, Solution};
use crate::instance::{Instance, NodeKind};

const IMPROVEMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LocalSearchStats {
    pub evaluations: usize,
    pub improvements: usize,
    /// True when no move improves the final solution.
    pub local_optimum: bool,
}

/// First-improvement descent over intra-route 2-opt, relocation of any stop
/// within or between routes, and removal of detour stops. Every candidate is
/// re-simulated through the environment; only feasible, strictly cheaper
/// candidates are accepted. `budget` caps candidate evaluations.
pub fn local_search(sol: &Solution, inst: &Instance, flags: EnvFlags, budget: usize) -> (Solution, LocalSearchStats) {
    let nu = inst.fleet().len();
    let mut best = sol.clone();
    let mut seqs = route_sequences(sol, nu);
    let mut stats = LocalSearchStats::default();
    'outer: loop {
        let mut accepted = None;
        for cand in neighbours(&seqs, inst) {
            if stats.evaluations >= budget {
                break 'outer;
            }
            stats.evaluations += 1;
            if let Some(s) = replay_sequences(inst, flags, &cand) {
                if s.total_cost < best.total_cost - IMPROVEMENT {
                    best = s;
                    accepted = Some(cand);
                    break;
                }
            }
        }
        match accepted {
            Some(cand) => {
                seqs = cand;
                stats.improvements += 1;
            }
            None => {
                stats.local_optimum = true;
                break;
            }
        }
    }
    (best, stats)
}

/// Candidate sequences in a fixed order: 2-opt, removals, relocations.
fn neighbours<'a>(seqs: &'a [Vec<usize>], inst: &'a Instance) -> impl Iterator<Item = Vec<Vec<usize>>> + 'a {
    let two_opt = seqs.iter().enumerate().flat_map(move |(r, seq)| {
        let n = seq.len();
        (0..n).flat_map(move |a| {
            (a + 1..n).map(move |b| {
                let mut out = seqs.to_vec();
                out[r][a..=b].reverse();
                out
            })
        })
    });
    let removals = seqs.iter().enumerate().flat_map(move |(r, seq)| {
        (0..seq.len()).filter(move |&p| inst.kind(seq[p]) != NodeKind::Customer).map(move |p| {
            let mut out = seqs.to_vec();
            out[r].remove(p);
            out
        })
    });
    let relocations = seqs.iter().enumerate().flat_map(move |(r1, seq)| {
        (0..seq.len()).flat_map(move |p| {
            (0..seqs.len()).flat_map(move |r2| {
                let slots = if r1 == r2 { seqs[r2].len() } else { seqs[r2].len() + 1 };
                (0..slots).filter_map(move |q| {
                    if r1 == r2 && q == p {
                        return None;
                    }
                    let mut out = seqs.to_vec();
                    let node = out[r1].remove(p);
                    out[r2].insert(q, node);
                    Some(out)
                })
            })
        })
    });
    two_opt.chain(removals).chain(relocations)
}
