use proptest::prelude::*;

use tgr_core::ctdg::{ingest_triples, EventStream, NodeBank};
use tgr_core::data::{
    chronological_split, gen_bipartite, gen_erdos_temporal, negative_sampler, surprise_index, BipartiteSpec, SplitSpec,
};
use tgr_core::eval::{mrr, rank, TieRule};
use tgr_core::reach::{staleness_report, temporal_mixing_set, ReachMode};

fn stream_strategy() -> impl Strategy<Value = EventStream> {
    proptest::collection::vec((0usize..6, 0usize..6, 1u32..8), 1..14).prop_map(|mut raw| {
        raw.sort_by_key(|r| r.2);
        let triples: Vec<_> = raw.into_iter().map(|(s, d, t)| (s, d, f64::from(t))).collect();
        ingest_triples(&triples).unwrap()
    })
}

fn scores() -> impl Strategy<Value = (f64, Vec<f64>)> {
    // a coarse grid so ties actually happen
    let s = (-4i32..5).prop_map(|v| f64::from(v) / 2.0);
    (s.clone(), proptest::collection::vec(s, 1..12))
}

proptest! {
    #[test]
    fn rank_ignores_negative_order((pos, negs) in scores(), rot in 0usize..12) {
        let mut shuffled = negs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        for rule in [TieRule::Optimistic, TieRule::Pessimistic, TieRule::Average] {
            prop_assert_eq!(rank(pos, &negs, rule), rank(pos, &shuffled, rule));
        }
    }

    #[test]
    fn rank_falls_as_the_positive_rises((pos, negs) in scores(), bump in 0.0f64..3.0) {
        for rule in [TieRule::Optimistic, TieRule::Pessimistic, TieRule::Average] {
            let r = rank(pos, &negs, rule);
            prop_assert!(rank(pos + bump, &negs, rule) <= r);
            prop_assert!((1.0..=negs.len() as f64 + 1.0).contains(&r));
        }
        let o = rank(pos, &negs, TieRule::Optimistic);
        let p = rank(pos, &negs, TieRule::Pessimistic);
        prop_assert!(o <= rank(pos, &negs, TieRule::Average) && rank(pos, &negs, TieRule::Average) <= p);
    }

    #[test]
    fn mrr_is_a_mean_of_reciprocals(ranks in proptest::collection::vec(1.0f64..50.0, 1..30)) {
        let m = mrr(&ranks).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        let mut rev = ranks.clone();
        rev.reverse();
        prop_assert!((mrr(&rev).unwrap() - m).abs() < 1e-12);
    }

    #[test]
    fn surprise_is_a_fraction_and_shrinks_with_more_history(
        train in proptest::collection::vec((0usize..5, 0usize..5), 0..15),
        extra in proptest::collection::vec((0usize..5, 0usize..5), 0..10),
        test in proptest::collection::vec((0usize..5, 0usize..5), 1..15),
    ) {
        let ev = |pairs: &[(usize, usize)]| {
            let triples: Vec<_> = pairs.iter().enumerate().map(|(i, &(s, d))| (s, d, i as f64)).collect();
            ingest_triples(&triples).unwrap().events().to_vec()
        };
        let base = ev(&train);
        let mut more_pairs = train.clone();
        more_pairs.extend(extra);
        let more = ev(&more_pairs);
        let t = ev(&test);
        let s = surprise_index(&base, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(surprise_index(&more, &t).unwrap() <= s);
    }

    #[test]
    fn split_parts_concatenate_to_the_stream(stream in stream_strategy(), a in 1u32..8, b in 0u32..4) {
        let train = f64::from(a) / 10.0;
        let val = f64::from(b) / 10.0;
        let spec = SplitSpec::new(train, val, 1.0 - train - val).unwrap();
        let (tr, va, te) = chronological_split(&stream, &spec).unwrap();
        let joined: Vec<_> = tr.events().iter().chain(va.events()).chain(te.events()).cloned().collect();
        prop_assert_eq!(joined.as_slice(), stream.events());
        let (ct, cv, cte) = spec.counts(stream.len()).unwrap();
        prop_assert_eq!(ct + cv + cte, stream.len());
    }

    #[test]
    fn sampler_is_deterministic_and_excludes_endpoints(
        src in 0usize..20, dst in 0usize..20, q in 0u64..1000, k in 1usize..8, seed in any::<u64>(),
    ) {
        let pool: Vec<usize> = (0..20).collect();
        let a = negative_sampler(src, dst, q, &pool, k, seed).unwrap();
        prop_assert_eq!(&a, &negative_sampler(src, dst, q, &pool, k, seed).unwrap());
        prop_assert_eq!(a.len(), k);
        prop_assert!(!a.contains(&src) && !a.contains(&dst));
        let mut d = a.clone();
        d.sort_unstable();
        d.dedup();
        prop_assert_eq!(d.len(), k);
    }

    #[test]
    fn erdos_generator_is_seeded(seed in any::<u64>()) {
        let a = gen_erdos_temporal(12, 40, seed).unwrap();
        let b = gen_erdos_temporal(12, 40, seed).unwrap();
        prop_assert_eq!(a.events(), b.events());
        prop_assert!(a.events().windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn mixing_fronts_grow_with_tau(stream in stream_strategy(), source in 0usize..6, lo in 1u32..9, step in 0u32..4) {
        prop_assume!(source < stream.num_nodes());
        let a = temporal_mixing_set(&stream, source, f64::from(lo), &ReachMode::Strict).unwrap();
        let b = temporal_mixing_set(&stream, source, f64::from(lo + step), &ReachMode::Strict).unwrap();
        prop_assert!(a.nodes().is_subset(&b.nodes()));
        prop_assert!(a.contains(source));
    }

    #[test]
    fn staleness_follows_last_activity(stream in stream_strategy(), tau in 8u32..20) {
        let mut bank = NodeBank::new();
        for e in stream.events() {
            bank.update(std::slice::from_ref(e));
        }
        let tau = f64::from(tau);
        let report = staleness_report(&bank, tau);
        for (u, age) in report {
            let last = stream.events().iter().filter(|e| e.touches(u)).map(|e| e.t).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(age, tau - last);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bipartite_generator_is_seeded_and_two_sided(seed in any::<u64>(), target in 0.0f64..=1.0) {
        let spec = BipartiteSpec {
            n_users: 30,
            n_items: 20,
            n_events: 400,
            n_clusters: 3,
            surprise_target: target,
            seed,
            ..BipartiteSpec::default()
        };
        let a = gen_bipartite(&spec).unwrap();
        let b = gen_bipartite(&spec).unwrap();
        prop_assert_eq!(a.events(), b.events());
        for e in a.events() {
            prop_assert!(e.src < 30 && e.dst >= 30 && e.dst < 50);
        }
    }
}
