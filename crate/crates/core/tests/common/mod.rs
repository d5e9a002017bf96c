//! Shared test oracles and instance builders.
#![allow(dead_code)] // each integration target uses a different subset

use dagbounds::data::Dataset;
use dagbounds::estimation::{AdjustmentKind, CausalQuery, EstimatorKind};
use dagbounds::graph::{Adjacency, NodeSet};
use dagbounds::knowledge::{self, BoundPair, EdgeKnowledge};
use dagbounds::rng::{derive_seed, rng_from_seed};
use dagbounds::synthetic::{self, MechanismKind, Scm};
use rand::RngExt;

/// Brute-force d-separation: enumerate every undirected simple path and
/// apply the blocking rules per path. Exponential, only for tiny graphs.
pub fn d_separated_by_paths(
    adj: &Adjacency,
    x: usize,
    y: usize,
    given: &NodeSet,
) -> bool {
    let d = adj.d();
    let linked = |a: usize, b: usize| adj.get(a, b) || adj.get(b, a);

    // depth-first enumeration of simple paths x -> y in the skeleton
    let mut stack = vec![vec![x]];
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if last == y {
            if path_is_open(adj, &path, given) {
                return false;
            }
            continue;
        }
        for next in 0..d {
            if !path.contains(&next) && linked(last, next) {
                let mut longer = path.clone();
                longer.push(next);
                stack.push(longer);
            }
        }
    }
    true
}

/// A path is open when every interior node passes the d-separation rules:
/// colliders need themselves or a descendant conditioned on, non-colliders
/// must stay unconditioned.
fn path_is_open(adj: &Adjacency, path: &[usize], given: &NodeSet) -> bool {
    for w in 1..path.len() - 1 {
        let (prev, node, next) = (path[w - 1], path[w], path[w + 1]);
        let collider = adj.get(prev, node) && adj.get(next, node);
        if collider {
            let mut cone = adj.descendants(node);
            cone.insert(node);
            if cone.intersection(given).next().is_none() {
                return false;
            }
        } else if given.contains(&node) {
            return false;
        }
    }
    true
}

/// Uniform random DAG over a random node order.
pub fn random_dag(d: usize, edge_prob: f64, seed: u64) -> Adjacency {
    synthetic::sample_er_dag(d, edge_prob, seed)
}

/// All binary matrices over `d` nodes with zero diagonal, as adjacencies.
pub fn all_binary_matrices(d: usize) -> Vec<Adjacency> {
    let slots: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .collect();
    let mut out = Vec::with_capacity(1 << slots.len());
    for bits in 0u32..1 << slots.len() {
        let mut adj = Adjacency::new(d);
        for (t, &(i, j)) in slots.iter().enumerate() {
            if bits >> t & 1 == 1 {
                adj.set(i, j, true);
            }
        }
        out.push(adj);
    }
    out
}

/// One evaluation instance: ground-truth SCM, data, knowledge, query,
/// exact effect, and the brute-force bound oracle.
pub struct Instance {
    pub seed: u64,
    pub scm: Scm,
    pub data: Dataset,
    pub knowledge: EdgeKnowledge,
    pub query: CausalQuery,
    pub truth: f64,
    pub brute: BoundPair,
}

pub struct InstanceSpec {
    pub nodes: &'static [usize],
    pub edge_prob: f64,
    pub p_sure: f64,
    pub p_forbidden: f64,
    pub n_samples: usize,
    pub mechanism: MechanismKind,
    pub estimator: EstimatorKind,
    pub adjustment: AdjustmentKind,
    pub max_uncertain: usize,
    /// reject instances whose true interval is narrower than this, so the
    /// relative metrics stay well defined
    pub min_true_width: f64,
}

/// Generate admitted instances by walking candidate seeds in order; the
/// sequence is fully determined by `spec` and `base_seed`.
pub fn build_instances(spec: &InstanceSpec, base_seed: u64, count: usize) -> Vec<Instance> {
    let mut out = Vec::with_capacity(count);
    let mut candidate = 0u64;
    while out.len() < count {
        let seed = derive_seed(base_seed, candidate);
        candidate += 1;
        let d = spec.nodes[(candidate as usize) % spec.nodes.len()];
        let adj = synthetic::sample_er_dag(d, spec.edge_prob, derive_seed(seed, 1));
        if adj.edge_count() == 0 {
            continue;
        }
        let scm = synthetic::attach_mechanisms(&adj, spec.mechanism, derive_seed(seed, 2));
        let knowledge =
            knowledge::random_knowledge(&adj, spec.p_sure, spec.p_forbidden, derive_seed(seed, 3));
        if knowledge.uncertain_count() > spec.max_uncertain {
            continue;
        }
        // query over a real effect when one exists
        let (x, y) = {
            let mut rng = rng_from_seed(derive_seed(seed, 4));
            let mut with_path = Vec::new();
            for a in 0..d {
                let desc = adj.descendants(a);
                for b in 0..d {
                    if a != b && desc.contains(&b) {
                        with_path.push((a, b));
                    }
                }
            }
            if with_path.is_empty() {
                continue;
            }
            with_path[rng.random_range(0..with_path.len())]
        };
        let query = CausalQuery::new(x, y)
            .with_adjustment(spec.adjustment)
            .with_estimator(spec.estimator);
        let data = scm.generate_data(spec.n_samples, derive_seed(seed, 5));
        let brute = match knowledge::brute_force_bounds(&knowledge, &data, &query, derive_seed(seed, 6))
        {
            Ok(b) => b,
            Err(_) => continue,
        };
        if brute.upper - brute.lower < spec.min_true_width {
            continue;
        }
        let truth = dagbounds::estimation::ground_truth_ate(&scm, &query);
        out.push(Instance { seed, scm, data, knowledge, query, truth, brute });
    }
    out
}
