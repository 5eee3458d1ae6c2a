use clustersend::bounds::{
    killing_assignment, select_protocol, sigma, sigma1, sigma2, tau1, tau2, Flavor, ProtocolChoice, ProtocolKind,
    SearchMethod,
};
use clustersend::certs::Value;
use clustersend::cli::{AdversarySpec, ScenarioConfig};
use clustersend::model::{validate_system, FailureModel, ReplicaId, SigningScheme, SystemSpec};
use clustersend::protocols::{c_partition, plan};
use clustersend::sim::{enumerate_placements, run, AdversaryTrace, Schedule};
use proptest::prelude::*;

const KINDS: [(FailureModel, SigningScheme); 6] = [
    (FailureModel::Crash, SigningScheme::None),
    (FailureModel::Omit, SigningScheme::None),
    (FailureModel::Omit, SigningScheme::ClusterSigning),
    (FailureModel::Byzantine, SigningScheme::ReplicaSigning),
    (FailureModel::Byzantine, SigningScheme::EmulatedClusterSigning),
    (FailureModel::Byzantine, SigningScheme::ClusterSigning),
];

fn valid_spec(max_n: usize) -> impl Strategy<Value = SystemSpec> {
    (1..=max_n, 1..=max_n, 0..KINDS.len())
        .prop_flat_map(|(n1, n2, k)| (Just(n1), 0..n1.div_ceil(2), Just(n2), 0..n2, Just(k)))
        .prop_map(|(n1, f1, n2, f2, k)| SystemSpec::sized(n1, f1, n2, f2, KINDS[k].0, KINDS[k].1))
}

fn placed(spec: SystemSpec, pick: usize) -> SystemSpec {
    let placements = enumerate_placements(&spec);
    spec.with_placement(&placements[pick % placements.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn runs_are_deterministic_per_seed(spec in valid_spec(6), pick in any::<usize>(), seed in any::<u64>()) {
        let spec = placed(spec, pick);
        let choice = select_protocol(&spec).unwrap();
        let v = Value::new(*b"payload");
        let trace = AdversaryTrace::passive(&spec);
        let a = run(&spec, &choice, &v, &trace, &Schedule::Seeded(seed)).unwrap();
        let b = run(&spec, &choice, &v, &trace, &Schedule::Seeded(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn counts_and_properties_do_not_depend_on_the_schedule(spec in valid_spec(6), pick in any::<usize>(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let spec = placed(spec, pick);
        let choice = select_protocol(&spec).unwrap();
        let v = Value::new(*b"payload");
        let trace = AdversaryTrace::passive(&spec);
        let a = run(&spec, &choice, &v, &trace, &Schedule::Seeded(s1)).unwrap();
        let b = run(&spec, &choice, &v, &trace, &Schedule::Seeded(s2)).unwrap();
        let fifo = run(&spec, &choice, &v, &trace, &Schedule::Fifo).unwrap();
        prop_assert_eq!(&a.metrics, &b.metrics);
        prop_assert_eq!(&a.metrics, &fifo.metrics);
        prop_assert!(a.properties.all() && b.properties.all() && fifo.properties.all());
        prop_assert!(a.reliable());
    }

    #[test]
    fn selected_protocol_meets_its_preconditions(spec in valid_spec(12)) {
        let choice = select_protocol(&spec).unwrap();
        let p = plan(&spec.view(), &choice).unwrap();
        let (n1, f1, n2, f2) = (spec.c1.n, spec.c1.f, spec.c2.n, spec.c2.f);
        let brs = choice.signing_flavor == Flavor::Brs;
        prop_assert_eq!(brs, spec.failure_model == FailureModel::Byzantine && spec.signing == SigningScheme::ReplicaSigning);
        let faults = if brs { 2 * f1 + f2 } else { f1 + f2 };
        match choice.protocol {
            ProtocolKind::BsBcs | ProtocolKind::BsBrs => prop_assert!(n1 > faults && n2 > faults),
            ProtocolKind::Spbs => prop_assert!(choice.alpha.unwrap() <= n1),
            ProtocolKind::Rpbs => prop_assert!(choice.alpha.unwrap() <= n2),
            ProtocolKind::RbBcs | ProtocolKind::RbBrs => prop_assert!(n1 > 2 * f1 && n2 > f2),
        }
        // Every scheduled pair is distinct.
        let mut pairs: Vec<_> = p.sends.iter().map(|s| (s.sender, s.receiver)).collect();
        pairs.sort();
        pairs.dedup();
        prop_assert_eq!(pairs.len(), p.sends.len());
    }

    #[test]
    fn bounds_are_monotone_in_faults(n1 in 1usize..=14, n2 in 1usize..=14, f1 in 0usize..7, f2 in 0usize..13) {
        let ok = |f1: usize, f2: usize| n1 > 2 * f1 && n2 > f2;
        prop_assume!(ok(f1, f2));
        let spec = |f1, f2| SystemSpec::sized(n1, f1, n2, f2, FailureModel::Byzantine, SigningScheme::ReplicaSigning).view();
        let all = |f1, f2| {
            let v = spec(f1, f2);
            [sigma1(v.c1, v.c2).unwrap().value, sigma2(v.c1, v.c2).unwrap().value, tau1(v.c1, v.c2).unwrap().value, tau2(v.c1, v.c2).unwrap().value]
        };
        let base = all(f1, f2);
        if ok(f1 + 1, f2) {
            let up = all(f1 + 1, f2);
            prop_assert!(base.iter().zip(&up).all(|(a, b)| a <= b), "{base:?} {up:?}");
        }
        if ok(f1, f2 + 1) {
            let up = all(f1, f2 + 1);
            prop_assert!(base.iter().zip(&up).all(|(a, b)| a <= b), "{base:?} {up:?}");
        }
    }

    #[test]
    fn equal_clusters_collapse_to_bijective_counts(n in 1usize..=12, f1 in 0usize..6, f2 in 0usize..12) {
        prop_assume!(n > 2 * f1 + f2);
        let v = SystemSpec::sized(n, f1, n, f2, FailureModel::Byzantine, SigningScheme::ReplicaSigning).view();
        prop_assert_eq!(sigma1(v.c1, v.c2).unwrap().value, f1 + f2 + 1);
        prop_assert_eq!(tau1(v.c1, v.c2).unwrap().value, 2 * f1 + f2 + 1);
    }

    #[test]
    fn schedules_below_sigma_can_be_killed(spec in valid_spec(5), bits in any::<u32>()) {
        let (n1, f1, n2, f2) = (spec.c1.n, spec.c1.f, spec.c2.n, spec.c2.f);
        let bound = sigma(&spec).unwrap().value;
        let schedule: Vec<(usize, usize)> = (0..n1 * n2)
            .filter(|i| bits >> (i % 32) & 1 == 1)
            .map(|i| (i / n2, i % n2))
            .take(bound - 1)
            .collect();
        let search = killing_assignment(&schedule, f1, f2);
        prop_assert_eq!(search.method, SearchMethod::Exact);
        let witness = search.witness.expect("a schedule below the bound always has a killing assignment");
        prop_assert!(witness.faulty_senders.len() <= f1 && witness.faulty_receivers.len() <= f2);
        for (s, r) in schedule {
            prop_assert!(witness.faulty_senders.contains(&s) || witness.faulty_receivers.contains(&r));
        }
    }

    #[test]
    fn bijective_schedules_survive(n in 1usize..=10, f1 in 0usize..5, f2 in 0usize..10) {
        prop_assume!(n > f1 + f2);
        let schedule: Vec<(usize, usize)> = (0..=f1 + f2).map(|i| (i, i)).collect();
        prop_assert_eq!(killing_assignment(&schedule, f1, f2).witness, None);
    }

    #[test]
    fn partitions_cover_in_order(len in 0usize..40, c in 1usize..10) {
        let replicas: Vec<ReplicaId> = (0..len).map(ReplicaId::c1).collect();
        let p = c_partition(&replicas, c);
        prop_assert_eq!(p.parts.len(), len / c);
        prop_assert_eq!(p.remainder.len(), len % c);
        let flat: Vec<ReplicaId> = p.all_parts().flatten().copied().collect();
        prop_assert_eq!(flat, replicas);
    }

    #[test]
    fn scenario_config_round_trips(spec in valid_spec(8), bytes in proptest::collection::vec(any::<u8>(), 0..16), seeds in proptest::collection::vec(any::<u64>(), 0..4)) {
        let mut config = ScenarioConfig::new(spec.clone());
        config.value = Value::new(bytes);
        config.seeds = seeds;
        config.adversary = AdversarySpec::Exhaustive;
        if let Ok(choice) = ProtocolChoice::for_system(ProtocolKind::Spbs, Flavor::Bcs, &spec.view()) {
            config.protocol = Some(choice);
        }
        let text = serde_json::to_string(&config).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, config);
    }

    #[test]
    fn validation_matches_the_model(n1 in 0usize..8, f1 in 0usize..8, n2 in 0usize..8, f2 in 0usize..8, k in 0..KINDS.len()) {
        let spec = SystemSpec::sized(n1, f1, n2, f2, KINDS[k].0, KINDS[k].1);
        let valid = n1 > 2 * f1 && n2 > f2;
        prop_assert_eq!(validate_system(&spec).is_empty(), valid);
    }
}
