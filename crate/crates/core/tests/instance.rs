use hevrp_core::instance::{generate_instance, windows_connect, GeneratorConfig, NodeKind};
use proptest::prelude::*;

fn scan_connects(oi: i64, ci: i64, oj: i64, cj: i64, tt: i64) -> bool {
    (oi..=ci).any(|x| x + tt >= oj && x + tt <= cj)
}

proptest! {
    #[test]
    fn closed_form_adjacency_matches_a_departure_scan(
        oi in 0i64..720, wi in 0i64..240, oj in 0i64..720, wj in 0i64..240, tt in 0i64..400,
    ) {
        let (ci, cj) = (oi + wi, oj + wj);
        prop_assert_eq!(
            windows_connect(oi as f64, ci as f64, oj as f64, cj as f64, tt as f64),
            scan_connects(oi, ci, oj, cj, tt)
        );
    }

    #[test]
    fn generated_instances_are_well_formed(seed in any::<u64>(), customers in 1usize..25, vehicles in 1usize..4, stations in 0usize..4) {
        let inst = generate_instance(&GeneratorConfig::desk(customers, vehicles, stations), seed).unwrap();
        prop_assert_eq!(inst.len(), 1 + customers + stations);
        prop_assert_eq!(inst.customers().len(), customers);
        prop_assert_eq!(inst.stations().len(), stations);
        prop_assert_eq!(inst.kind(0), NodeKind::Depot);
        for i in 0..inst.len() {
            let w = inst.node(i);
            prop_assert!(0.0 <= w.tw_open && w.tw_open <= w.tw_close && w.tw_close <= inst.t_max());
            prop_assert_eq!(inst.demand(i) > 0, inst.kind(i) == NodeKind::Customer);
            prop_assert!(inst.demand(i) <= inst.max_cargo());
            prop_assert!(inst.adjacency().get(i, i));
            for j in 0..inst.len() {
                prop_assert!(inst.tt(i, j) >= 0.0 && inst.ec(i, j) >= 0.0);
                prop_assert!((inst.tt(i, j) - inst.tt(j, i)).abs() <= 1e-9);
                let (a, b) = (inst.node(i), inst.node(j));
                if i != j {
                    prop_assert_eq!(
                        inst.adjacency().get(i, j),
                        windows_connect(a.tw_open, a.tw_close, b.tw_open, b.tw_close, inst.tt(i, j))
                    );
                }
            }
        }
    }

    #[test]
    fn relabelling_and_back_is_the_identity(seed in any::<u64>(), customers in 2usize..12, rot in 1usize..11) {
        let inst = generate_instance(&GeneratorConfig::desk(customers, 2, 1), seed).unwrap();
        let cust = inst.customers().to_vec();
        let mut perm: Vec<usize> = (0..inst.len()).collect();
        for (k, &slot) in cust.iter().enumerate() {
            perm[slot] = cust[(k + rot) % cust.len()];
        }
        let mut inverse = vec![0; perm.len()];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        let moved = inst.permuted(&perm).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            prop_assert_eq!(moved.demand(k), inst.demand(old));
            prop_assert_eq!(moved.adjacency().get(k, 0), inst.adjacency().get(old, 0));
        }
        prop_assert_eq!(moved.permuted(&inverse).unwrap(), inst);
    }
}
