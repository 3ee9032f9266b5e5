use hevrp_core::baselines::{local_search, nearest_feasible, replay_sequences, solve_exact, ExactConfig, ExactError, ExactOutcome};
use hevrp_core::env::{check_solution, EnvFlags, RolloutState, Status};
use hevrp_core::instance::{generate_instance, GeneratorConfig, Instance, NodeKind, NodeRecord, SquareMatrix, Vehicle};

const T: f64 = 900.0;

fn node(id: usize, x: f64, y: f64, kind: NodeKind, window: (f64, f64)) -> NodeRecord {
    NodeRecord {
        id,
        x,
        y,
        tw_open: window.0,
        tw_close: window.1,
        kind,
    }
}

/// Euclidean instance: 1 km per minute, 0.5 kWh per km.
fn planar(points: &[(f64, f64, NodeKind, (f64, f64), u32)], fleet: Vec<Vehicle>) -> Instance {
    let nodes: Vec<NodeRecord> = points.iter().enumerate().map(|(i, p)| node(i, p.0, p.1, p.2, p.3)).collect();
    let demands = points.iter().map(|p| p.4).collect();
    let dist = |a: usize, b: usize| ((nodes[a].x - nodes[b].x).powi(2) + (nodes[a].y - nodes[b].y).powi(2)).sqrt();
    let tt = SquareMatrix::from_fn(nodes.len(), dist);
    let ec = SquareMatrix::from_fn(nodes.len(), |a, b| 0.5 * dist(a, b));
    Instance::new(T, nodes.clone(), demands, fleet, tt, ec).unwrap()
}

fn full() -> (f64, f64) {
    (0.0, T)
}

#[test]
fn single_customer_costs_the_round_trip() {
    let inst = planar(
        &[(0.0, 0.0, NodeKind::Depot, full(), 0), (10.0, 0.0, NodeKind::Customer, (0.0, 500.0), 3)],
        vec![Vehicle::new(100.0, 10)],
    );
    let (out, _) = solve_exact(&inst, EnvFlags::default(), &ExactConfig::default()).unwrap();
    assert_eq!(out.solution().unwrap().total_cost, 20.0);
    assert_eq!(nearest_feasible(&inst, EnvFlags::default()).unwrap().total_cost, 20.0);
}

#[test]
fn split_demand_with_tight_windows_is_infeasible() {
    // Each demand fills most of the truck; after one customer there is no time
    // to reload at the depot before the other window closes.
    let inst = planar(
        &[
            (0.0, 0.0, NodeKind::Depot, full(), 0),
            (30.0, 0.0, NodeKind::Customer, (0.0, 40.0), 7),
            (-30.0, 0.0, NodeKind::Customer, (0.0, 40.0), 7),
        ],
        vec![Vehicle::new(200.0, 10)],
    );
    let (out, _) = solve_exact(&inst, EnvFlags::default(), &ExactConfig::default()).unwrap();
    assert_eq!(out, ExactOutcome::Infeasible);
    assert!(nearest_feasible(&inst, EnvFlags::default()).is_err());
}

#[test]
fn oversize_instances_are_refused() {
    let inst = generate_instance(&GeneratorConfig::desk(9, 2, 1), 1).unwrap();
    assert_eq!(
        solve_exact(&inst, EnvFlags::default(), &ExactConfig::default()).unwrap_err(),
        ExactError::TooLarge { customers: 9, vehicles: 2 }
    );
}

#[test]
fn two_opt_uncrosses_a_route() {
    // Square of customers visited in a crossing order.
    let pts = [
        (0.0, 0.0, NodeKind::Depot, full(), 0),
        (0.0, 10.0, NodeKind::Customer, full(), 1),
        (10.0, 10.0, NodeKind::Customer, full(), 1),
        (10.0, 0.0, NodeKind::Customer, full(), 1),
    ];
    let inst = planar(&pts, vec![Vehicle::new(500.0, 10)]);
    let crossing = replay_sequences(&inst, EnvFlags::default(), &[vec![2, 1, 3]]).unwrap();
    let (out, stats) = local_search(&crossing, &inst, EnvFlags::default(), 10_000);
    let (exact, _) = solve_exact(&inst, EnvFlags::default(), &ExactConfig::default()).unwrap();
    assert!(crossing.total_cost > out.total_cost);
    assert!((out.total_cost - 40.0).abs() < 1e-9);
    assert!((out.total_cost - exact.solution().unwrap().total_cost).abs() < 1e-9);
    assert!(stats.local_optimum && stats.improvements >= 1);
}

/// Node-for-node copy of `inst` restricted to `keep` customers and one vehicle.
fn restrict(inst: &Instance, keep: &[usize], vehicle: Vehicle) -> Option<Instance> {
    let old: Vec<usize> = (0..inst.len())
        .filter(|&i| inst.kind(i) != NodeKind::Customer || keep.contains(&i))
        .collect();
    let nodes = old
        .iter()
        .enumerate()
        .map(|(k, &i)| NodeRecord {
            id: k,
            ..inst.node(i).clone()
        })
        .collect();
    let demands = old.iter().map(|&i| inst.demand(i)).collect();
    let tt = SquareMatrix::from_fn(old.len(), |a, b| inst.tt(old[a], old[b]));
    let ec = SquareMatrix::from_fn(old.len(), |a, b| inst.ec(old[a], old[b]));
    Instance::new(inst.t_max(), nodes, demands, vec![vehicle], tt, ec).ok()
}

/// Unpruned depth-first enumeration of every single-vehicle action sequence.
fn enumerate(st: &RolloutState<'_>, best: &mut f64) {
    match st.status() {
        Status::Done => {
            if let Ok(sol) = st.clone().finalize() {
                *best = best.min(sol.total_cost);
            }
        }
        Status::Deadlocked(_) => {}
        Status::Running => {
            for node in 0..st.instance().len() {
                if st.mask_reason(0, node).is_none() {
                    let mut child = st.clone();
                    child.step(hevrp_core::env::Action::new(0, node)).unwrap();
                    enumerate(&child, best);
                }
            }
        }
    }
}

/// Optimum as the cheapest split of the customers over the vehicles, each
/// part solved by full enumeration. Vehicles only interact through which
/// customers they serve, so this equals the joint optimum.
fn decomposed_optimum(inst: &Instance, flags: EnvFlags) -> Option<f64> {
    let customers = inst.customers();
    let nu = inst.fleet().len();
    let subsets = 1usize << customers.len();
    let single: Vec<Vec<f64>> = (0..nu)
        .map(|j| {
            (0..subsets)
                .map(|mask| {
                    if mask == 0 {
                        return 0.0;
                    }
                    let keep: Vec<usize> = (0..customers.len()).filter(|b| mask >> b & 1 == 1).map(|b| customers[b]).collect();
                    let Some(sub) = restrict(inst, &keep, inst.fleet()[j]) else {
                        return f64::INFINITY;
                    };
                    let mut best = f64::INFINITY;
                    enumerate(&RolloutState::new(&sub, flags), &mut best);
                    best
                })
                .collect()
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut assign = vec![0usize; customers.len()];
    loop {
        let mut masks = vec![0usize; nu];
        for (b, &j) in assign.iter().enumerate() {
            masks[j] |= 1 << b;
        }
        best = best.min((0..nu).map(|j| single[j][masks[j]]).sum());
        // next assignment in base nu
        let mut k = 0;
        while k < assign.len() {
            assign[k] += 1;
            if assign[k] < nu {
                break;
            }
            assign[k] = 0;
            k += 1;
        }
        if k == assign.len() {
            break;
        }
    }
    best.is_finite().then_some(best)
}

#[test]
fn exact_matches_decomposed_enumeration_on_200_instances() {
    let flags = EnvFlags::default();
    let mut feasible = 0;
    for k in 0..200u64 {
        let customers = 1 + (k % 5) as usize;
        let vehicles = 1 + (k % 2) as usize;
        let inst = generate_instance(&GeneratorConfig::desk(customers, vehicles, 1), 10_000 + k).unwrap();
        let (out, _) = solve_exact(&inst, flags, &ExactConfig::default()).unwrap();
        let oracle = decomposed_optimum(&inst, flags);
        match (out.solution(), oracle) {
            (Some(sol), Some(o)) => {
                feasible += 1;
                assert!((sol.total_cost - o).abs() <= 1e-9, "instance {k}: exact {} vs oracle {o}", sol.total_cost);
                assert!(check_solution(&inst, sol, &flags).is_pass());
            }
            (None, None) => {}
            (a, b) => panic!("instance {k}: exact {:?} vs oracle {b:?}", a.map(|s| s.total_cost)),
        }
    }
    assert!(feasible >= 150, "only {feasible} feasible instances");
}

#[test]
fn every_baseline_passes_the_checker_and_never_beats_exact() {
    let flags = EnvFlags::default();
    for k in 0..40u64 {
        let inst = generate_instance(&GeneratorConfig::desk(4 + (k % 3) as usize, 2, 1), 20_000 + k).unwrap();
        let (out, _) = solve_exact(&inst, flags, &ExactConfig::default()).unwrap();
        let Some(opt) = out.solution().map(|s| s.total_cost) else {
            continue;
        };
        if let Ok(nf) = nearest_feasible(&inst, flags) {
            assert!(check_solution(&inst, &nf, &flags).is_pass());
            assert!(nf.total_cost >= opt - 1e-9);
            let (ls, _) = local_search(&nf, &inst, flags, 5_000);
            assert!(check_solution(&inst, &ls, &flags).is_pass());
            assert!(ls.total_cost <= nf.total_cost);
            assert!(ls.total_cost >= opt - 1e-9);
        }
    }
}
