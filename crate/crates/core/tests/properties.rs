use std::collections::BTreeMap;

use proptest::prelude::*;

use surrogate_core::assign::{build_surrogate, AssignmentConfig, AssignmentInputs, ConstraintCheck};
use surrogate_core::candidates::{compute_deficits, generate_candidates, CandidateEdge, MIN_CELL};
use surrogate_core::dist::build_conditional;
use surrogate_core::ingest::PopulationTable;
use surrogate_core::network::{
    aggregate, aggregate_origins, edge_complement, edge_intersection, in_strengths, out_strengths,
};
use surrogate_core::synth::{perturb, PerturbConfig};
use surrogate_core::validate::{corr2d, mse_overlap};
use surrogate_core::{Level, ODNetwork, PartitionHierarchy, ZoneCode};

const N_SA1: usize = 9;
const N_DZN: usize = 7;
const N_SA2: usize = 3;

fn z(s: String) -> ZoneCode {
    ZoneCode::new(s)
}

fn hierarchy() -> PartitionHierarchy {
    PartitionHierarchy::new(
        (0..N_SA1).map(|i| (z(format!("o{i}")), z(format!("X{}", i % N_SA2)))).collect(),
        (0..N_DZN).map(|j| (z(format!("d{j}")), z(format!("X{}", j % N_SA2)))).collect(),
    )
}

fn fine_network() -> impl Strategy<Value = ODNetwork> {
    prop::collection::btree_map((0..N_SA1, 0..N_DZN), 1u64..60, 0..40).prop_map(|cells| {
        ODNetwork::from_edges(
            Level::FineOrigin,
            Level::FineDest,
            cells.into_iter().map(|((o, d), w)| (format!("o{o}"), format!("d{d}"), w)),
        )
        .unwrap()
    })
}

fn coarse_network() -> impl Strategy<Value = ODNetwork> {
    prop::collection::btree_map((0..N_SA2, 0..N_SA2), 1u64..500, 0..9).prop_map(|cells| {
        ODNetwork::from_edges(
            Level::Coarse,
            Level::Coarse,
            cells.into_iter().map(|((o, d), w)| (format!("X{o}"), format!("X{d}"), w)),
        )
        .unwrap()
    })
}

fn mixed_network() -> impl Strategy<Value = ODNetwork> {
    prop::collection::btree_map((0..N_SA2, 0..N_DZN), 1u64..100, 0..21).prop_map(|cells| {
        ODNetwork::from_edges(
            Level::Coarse,
            Level::FineDest,
            cells.into_iter().map(|((o, d), w)| (format!("X{o}"), format!("d{d}"), w)),
        )
        .unwrap()
    })
}

fn populations(level: Level, prefix: &str, n: usize) -> impl Strategy<Value = PopulationTable> {
    let prefix = prefix.to_string();
    prop::collection::vec(0u64..300, n).prop_map(move |v| {
        PopulationTable::from_counts(
            level,
            v.into_iter().enumerate().map(|(i, c)| (z(format!("{prefix}{i}")), c)).collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn aggregation_conserves_commuters(net in fine_network()) {
        let h = hierarchy();
        prop_assert_eq!(aggregate(&net, &h).unwrap().total_commuters(), net.total_commuters());
        prop_assert_eq!(aggregate_origins(&net, &h).unwrap().total_commuters(), net.total_commuters());
    }

    #[test]
    fn intersection_and_complement_partition_b(b in coarse_network(), a in coarse_network()) {
        let both = edge_intersection(&b, &a).unwrap();
        let only_b = edge_complement(&b, &a).unwrap();
        prop_assert_eq!(both.len() + only_b.len(), b.edge_count());
        prop_assert!(both.iter().all(|p| !only_b.contains(&p.0, &p.1)));
        prop_assert_eq!(both.union(&only_b), b.key_set());
        prop_assert!(both.iter().all(|p| a.contains(p)));
    }

    #[test]
    fn correlation_and_mse_are_symmetric(a in coarse_network(), b in coarse_network()) {
        if let (Ok(ab), Ok(ba)) = (corr2d(&a, &b), corr2d(&b, &a)) {
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        }
        let set = edge_intersection(&a, &b).unwrap();
        if !set.is_empty() {
            prop_assert_eq!(mse_overlap(&set, &a, &b).unwrap(), mse_overlap(&set, &b, &a).unwrap());
            prop_assert_eq!(mse_overlap(&set, &a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn perturbation_only_removes_or_jitters(net in fine_network(), seed in any::<u64>(), noise in 0u64..4) {
        let cfg = PerturbConfig { noise_magnitude: noise, ..PerturbConfig::fine_default() };
        let p = perturb(&net, &cfg, &hierarchy(), seed).unwrap();
        for (o, d, w) in p.edges() {
            let truth = net.weight(o, d);
            prop_assert!(truth.is_some());
            prop_assert!(w >= cfg.min_cell);
            prop_assert!(w.abs_diff(truth.unwrap()) <= noise);
        }
    }

    #[test]
    fn additive_perturbation_is_bounded_per_coarse_cell(net in fine_network(), seed in any::<u64>(), noise in 2u64..5) {
        let h = hierarchy();
        let cfg = PerturbConfig { noise_magnitude: noise, additivity: true, ..PerturbConfig::fine_default() };
        let p = perturb(&net, &cfg, &h, seed).unwrap();
        let before = aggregate(&net, &h).unwrap();
        let after = aggregate(&p, &h).unwrap();
        let drift: u64 = before
            .edges()
            .map(|(x, y, w)| w.abs_diff(after.weight(x, y).unwrap_or(0)))
            .sum();
        prop_assert!(drift <= noise * before.edge_count() as u64);
        prop_assert!(after.edges().all(|(x, y, _)| before.weight(x, y).is_some()));
    }

    #[test]
    fn identity_perturbation_keeps_cells_at_or_above_min_cell(net in fine_network(), seed in any::<u64>()) {
        let cfg = PerturbConfig { min_cell: 3, ..PerturbConfig::identity() };
        let p = perturb(&net, &cfg, &hierarchy(), seed).unwrap();
        prop_assert_eq!(p, net.filter(|_, _, w| w >= 3));
    }

    #[test]
    fn candidates_cover_each_deficit_to_within_min_cell(
        r in fine_network(),
        h_net in fine_network(),
        n_x in populations(Level::FineOrigin, "o", N_SA1),
        seed in any::<u64>(),
    ) {
        let pops = PopulationTable::from_counts(
            Level::FineOrigin,
            n_x.counts().iter().map(|(k, v)| (k.clone(), v + 60)).collect(),
        );
        let dist = build_conditional(&h_net.filter(|_, _, w| w >= 3), &pops, 25).unwrap();
        prop_assume!(dist.is_usable());
        let deficits = compute_deficits(&r, &pops).unwrap();
        let cands = generate_candidates(&deficits, &dist, &pops, seed).unwrap();
        for (x, d) in &deficits.deficits {
            let s: u64 = cands.iter().filter(|c| &c.origin == x).map(|c| c.weight).sum();
            if *d >= MIN_CELL as i64 {
                prop_assert!((0..MIN_CELL as i64).contains(&(d - s as i64)));
            } else {
                prop_assert_eq!(s, 0);
            }
        }
    }

    #[test]
    fn assignment_never_breaks_constraints(
        r in fine_network(),
        b in coarse_network(),
        gamma in mixed_network(),
        n_x in populations(Level::FineOrigin, "o", N_SA1),
        n_y in populations(Level::FineDest, "d", N_DZN),
        weights in prop::collection::vec((0..N_SA1, 1u64..40), 0..40),
        seed in any::<u64>(),
    ) {
        let h = hierarchy();
        let overlap = edge_intersection(&b, &aggregate(&r, &h).unwrap()).unwrap();
        let cands: Vec<CandidateEdge> = weights
            .into_iter()
            .map(|(o, w)| CandidateEdge { origin: z(format!("o{o}")), weight: w })
            .collect();
        let inputs = AssignmentInputs { r: &r, b: &b, gamma: &gamma, overlap: &overlap, n_y: &n_y, hierarchy: &h };
        let cfg = AssignmentConfig { seed, ..AssignmentConfig::default() };
        let out = build_surrogate(inputs, &cands, &cfg).unwrap();
        let s = &out.surrogate;

        // Exact post-hoc checks, independent of the ledger.
        let agg_r = aggregate(&r, &h).unwrap();
        let agg_s = aggregate(s, &h).unwrap();
        for (o, d, w) in r.edges() {
            prop_assert!(s.weight(o, d).unwrap_or(0) >= w);
        }
        for (o, d, ws) in s.edges() {
            if ws == r.weight(o, d).unwrap_or(0) {
                continue;
            }
            let x = h.parent(Level::FineOrigin, o).unwrap();
            let y = h.parent(Level::FineDest, d).unwrap();
            prop_assert!(overlap.contains(x, y));
            prop_assert!(gamma.weight(x, d).is_some());
        }
        for p in overlap.iter() {
            let grown = agg_s.weight_of(p).unwrap_or(0) > agg_r.weight_of(p).unwrap_or(0);
            if grown {
                prop_assert!(agg_s.weight_of(p).unwrap() <= b.weight_of(p).unwrap());
            }
        }
        let (in_r, in_s) = (in_strengths(&r), in_strengths(s));
        for (y, w) in &in_s {
            if *w > in_r.get(y).copied().unwrap_or(0) {
                prop_assert!(*w <= n_y.get(y).unwrap_or(0));
            }
        }
        let added: u64 = s.total_commuters() - r.total_commuters();
        prop_assert_eq!(added, out.report.commuters_added);
        let trace: Vec<u64> = out.report.trace.iter().map(|t| t.unassigned_commuters).collect();
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        let check = ConstraintCheck {
            r: &r, s, b: &b, gamma: &gamma, overlap: &overlap, n_x: &n_x, n_y: &n_y, hierarchy: &h,
        };
        // Out-strength is not bounded by assignment itself, only by how
        // candidates were generated, so only the other checks apply here.
        let violations: Vec<String> = check
            .violations()
            .unwrap()
            .into_iter()
            .filter(|v| !v.starts_with("origin "))
            .collect();
        prop_assert!(violations.is_empty(), "{:?}", violations);

        let again = build_surrogate(inputs, &cands, &cfg).unwrap();
        prop_assert_eq!(&again.surrogate, s);
    }

    #[test]
    fn ledger_tracks_additions_exactly(
        r in fine_network(),
        b in coarse_network(),
        gamma in mixed_network(),
        n_y in populations(Level::FineDest, "d", N_DZN),
        weights in prop::collection::vec((0..N_SA1, 1u64..40), 0..40),
        seed in any::<u64>(),
    ) {
        let h = hierarchy();
        let overlap = edge_intersection(&b, &aggregate(&r, &h).unwrap()).unwrap();
        let cands: Vec<CandidateEdge> = weights
            .into_iter()
            .map(|(o, w)| CandidateEdge { origin: z(format!("o{o}")), weight: w })
            .collect();
        let inputs = AssignmentInputs { r: &r, b: &b, gamma: &gamma, overlap: &overlap, n_y: &n_y, hierarchy: &h };
        let out = build_surrogate(inputs, &cands, &AssignmentConfig { seed, ..AssignmentConfig::default() }).unwrap();
        let agg_s = aggregate(&out.surrogate, &h).unwrap();
        for p in overlap.iter() {
            let expect = b.weight_of(p).unwrap() as i64 - agg_s.weight_of(p).unwrap_or(0) as i64;
            prop_assert_eq!(out.ledger.sa2_pair_budget[p], expect);
        }
        let in_s = in_strengths(&out.surrogate);
        for (y, left) in &out.ledger.dzn_budget {
            let expect = n_y.get(y).unwrap_or(0) as i64 - in_s.get(y).copied().unwrap_or(0) as i64;
            prop_assert_eq!(*left, expect);
        }
        // Candidates are consumed whole: assigned weight per origin is a sub-multiset sum.
        let out_r = out_strengths(&r);
        let mut by_origin: BTreeMap<ZoneCode, u64> = BTreeMap::new();
        for c in &cands {
            *by_origin.entry(c.origin.clone()).or_default() += c.weight;
        }
        for (x, w) in out_strengths(&out.surrogate) {
            let grew = w - out_r.get(&x).copied().unwrap_or(0);
            prop_assert!(grew <= by_origin.get(&x).copied().unwrap_or(0));
        }
    }
}
