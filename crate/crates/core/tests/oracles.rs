//! Oracle comparisons: independent brute-force implementations checked
//! against the production algorithms.

mod common;

use std::collections::BTreeSet;

use dagbounds::estimation::{estimate_query_plain, CausalQuery};
use dagbounds::graph::{
    self, d_separated, is_valid_adjustment, optimal_adjustment, parent_adjustment, Adjacency,
    NodeSet,
};
use dagbounds::knowledge::EdgeKnowledge;
use dagbounds::rng::{derive_seed, rng_from_seed};
use dagbounds::synthetic::Scm;
use proptest::prelude::*;
use rand::RngExt;

/// Every subset of `pool` with at most `max_len` members.
fn small_subsets(pool: &[usize], max_len: usize) -> Vec<NodeSet> {
    let mut out = vec![NodeSet::new()];
    for &v in pool {
        let mut grown: Vec<NodeSet> = out
            .iter()
            .filter(|s| s.len() < max_len)
            .map(|s| {
                let mut t = s.clone();
                t.insert(v);
                t
            })
            .collect();
        out.append(&mut grown);
    }
    out
}

#[test]
fn d_separation_matches_path_oracle_exhaustively_small() {
    // every DAG on 4 nodes, every pair, every conditioning set
    let mut dags = 0;
    for adj in common::all_binary_matrices(4) {
        if !adj.is_acyclic() {
            continue;
        }
        dags += 1;
        for x in 0..4 {
            for y in 0..4 {
                if x == y {
                    continue;
                }
                let rest: Vec<usize> = (0..4).filter(|&v| v != x && v != y).collect();
                for given in small_subsets(&rest, 2) {
                    assert_eq!(
                        d_separated(&adj, x, y, &given),
                        common::d_separated_by_paths(&adj, x, y, &given),
                        "adj {:?} x {x} y {y} given {given:?}",
                        adj.edges().collect::<Vec<_>>()
                    );
                }
            }
        }
    }
    assert_eq!(dags, 543); // known count of labeled 4-node DAGs
}

#[test]
fn d_separation_matches_path_oracle_on_random_graphs() {
    let mut rng = rng_from_seed(2024);
    for trial in 0..60 {
        let d = if trial % 2 == 0 { 6 } else { 7 };
        let adj = common::random_dag(d, 0.4, 5000 + trial);
        for _ in 0..24 {
            let x = rng.random_range(0..d);
            let y = (x + rng.random_range(1..d)) % d;
            let rest: Vec<usize> = (0..d).filter(|&v| v != x && v != y).collect();
            let take = rng.random_range(0..=3usize.min(rest.len()));
            let mut given = NodeSet::new();
            let mut pool = rest.clone();
            for _ in 0..take {
                let at = rng.random_range(0..pool.len());
                given.insert(pool.swap_remove(at));
            }
            assert_eq!(
                d_separated(&adj, x, y, &given),
                common::d_separated_by_paths(&adj, x, y, &given),
                "trial {trial} x {x} y {y} given {given:?}"
            );
        }
    }
}

#[test]
fn adjustment_sets_validate_on_random_instances() {
    // the self-consistency sweep: both constructions pass the validity
    // checker whenever the outcome is not a direct parent of the treatment
    let mut rng = rng_from_seed(77);
    let mut checked = 0;
    let mut trial = 0u64;
    while checked < 1000 {
        trial += 1;
        let d = rng.random_range(4..=8);
        let adj = common::random_dag(d, 0.45, 31_000 + trial);
        let x = rng.random_range(0..d);
        let y = (x + rng.random_range(1..d)) % d;
        if adj.parents(x).contains(&y) {
            continue;
        }
        let mut parents = parent_adjustment(&adj, x);
        parents.remove(&y);
        assert!(
            is_valid_adjustment(&adj, x, y, &parents),
            "parent set invalid: {:?} x {x} y {y}",
            adj.edges().collect::<Vec<_>>()
        );
        let mut optimal = optimal_adjustment(&adj, x, y);
        optimal.remove(&y);
        assert!(
            is_valid_adjustment(&adj, x, y, &optimal),
            "optimal set invalid: {:?} x {x} y {y}",
            adj.edges().collect::<Vec<_>>()
        );
        checked += 1;
    }
}

#[test]
fn optimal_adjustment_avoids_descendants_of_causal_nodes() {
    let mut rng = rng_from_seed(88);
    for trial in 0..400 {
        let d = rng.random_range(4..=8);
        let adj = common::random_dag(d, 0.5, 60_000 + trial);
        let x = rng.random_range(0..d);
        let y = (x + rng.random_range(1..d)) % d;
        let cn = graph::causal_nodes(&adj, x, y);
        if cn.is_empty() {
            continue;
        }
        let mut closure: NodeSet = cn.clone();
        for &c in &cn {
            closure.extend(adj.descendants(c));
        }
        let o = optimal_adjustment(&adj, x, y);
        assert!(o.intersection(&closure).next().is_none(), "trial {trial}");
        assert!(!o.contains(&x));
    }
}

#[test]
fn brute_force_matches_independent_per_graph_estimates() {
    // the running example: five compatible graphs; estimate each separately
    let k = EdgeKnowledge::new(
        4,
        &[(0, 1), (2, 3), (3, 1)],
        &[(2, 0), (2, 1), (1, 0), (1, 2), (1, 3), (3, 2)],
    )
    .unwrap();
    let true_graph = Adjacency::from_edges(4, &[(0, 1), (2, 3), (3, 1), (0, 2)]);
    let scm = Scm::linear_with(
        &true_graph,
        |i, j| match (i, j) {
            (0, 1) => 0.8,
            (2, 3) => 0.9,
            (3, 1) => 0.7,
            (0, 2) => 0.6,
            _ => 0.0,
        },
        0.1,
    );
    let data = scm.generate_data(4000, 123);
    let q = CausalQuery::new(2, 1);

    let per_graph: Vec<f64> = k
        .compatible_graphs()
        .unwrap()
        .map(|g| estimate_query_plain(&g, &data, &q, 0).unwrap())
        .collect();
    assert_eq!(per_graph.len(), 5);
    let lo = per_graph.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = per_graph.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let pair = dagbounds::knowledge::brute_force_bounds(&k, &data, &q, 9).unwrap();
    assert!((pair.lower - lo).abs() < 1e-12);
    assert!((pair.upper - hi).abs() < 1e-12);
    assert!(pair.lower < pair.upper);
    // truth lies inside since the generating graph is compatible
    let truth = dagbounds::estimation::ground_truth_ate(&scm, &q);
    assert!(pair.lower - 0.05 <= truth && truth <= pair.upper + 0.05);
}

#[test]
fn pc_knowledge_can_exclude_the_truth() {
    // with few permutations and a finite sample, some run of PC misplaces
    // an edge for at least one instance; the derived space then misses the
    // generating graph
    let mut excluded = 0;
    for seed in 0..12u64 {
        let adj = common::random_dag(5, 0.6, 400 + seed);
        let scm = Scm::linear_with(
            &adj,
            |i, j| if (i + j) % 2 == 0 { 0.5 } else { -0.6 },
            0.1,
        );
        let data = scm.generate_data(700, derive_seed(seed, 2));
        let (k, _) = dagbounds::discovery::pc_knowledge(&data, 2, 0.05, seed);
        if !k.admits(&adj) {
            excluded += 1;
        }
    }
    assert!(excluded > 0, "PC-derived knowledge never excluded the truth");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_node_is_its_own_descendant(seed in 0u64..10_000, d in 3usize..8) {
        let adj = common::random_dag(d, 0.5, seed);
        for v in 0..d {
            prop_assert!(!adj.descendants(v).contains(&v));
        }
    }

    #[test]
    fn d_separation_is_symmetric(seed in 0u64..10_000, d in 3usize..7) {
        let adj = common::random_dag(d, 0.5, seed);
        let mut rng = rng_from_seed(seed ^ 0xDEAD);
        let x = rng.random_range(0..d);
        let y = (x + rng.random_range(1..d)) % d;
        let rest: Vec<usize> = (0..d).filter(|&v| v != x && v != y).collect();
        let given: BTreeSet<usize> =
            rest.into_iter().filter(|_| rng.random_range(0.0..1.0) < 0.4).collect();
        prop_assert_eq!(
            d_separated(&adj, x, y, &given),
            d_separated(&adj, y, x, &given)
        );
    }

    #[test]
    fn enumeration_count_matches_direct_filter(seed in 0u64..2_000) {
        // independent count: filter all assignments without Gray-code help
        let adj = common::random_dag(4, 0.4, seed);
        let k = dagbounds::knowledge::random_knowledge(&adj, 0.4, 0.4, seed);
        prop_assume!(k.uncertain_count() <= 10);
        let slots = k.uncertain_slots().to_vec();
        let mut direct = 0u64;
        for bits in 0u64..1 << slots.len() {
            let mut g = k.sure_graph();
            for (t, &(i, j)) in slots.iter().enumerate() {
                if bits >> t & 1 == 1 {
                    g.set(i, j, true);
                }
            }
            if g.is_acyclic() {
                direct += 1;
            }
        }
        prop_assert_eq!(k.compatible_count(24).unwrap(), direct);
    }
}
