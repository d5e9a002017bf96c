//! Deterministic DAG algorithms: acyclicity, reachability, d-separation, and
//! adjustment-set construction/validation.
//!
//! Nodes are 0-based indices; names live in the harness layer.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Set of node indices. BTreeSet keeps iteration deterministic.
pub type NodeSet = BTreeSet<usize>;

/// Binary adjacency matrix; entry `(i, j) = 1` iff edge `i -> j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    d: usize,
    entries: Vec<u8>,
}

/// Serialized form: `{"d": ..., "edges": [[i, j], ...]}`.
#[derive(Serialize, Deserialize)]
struct GraphJson {
    d: usize,
    edges: Vec<(usize, usize)>,
}

impl Serialize for Adjacency {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphJson { d: self.d, edges: self.edges().collect() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Adjacency {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let g = GraphJson::deserialize(d)?;
        Adjacency::try_from_edges(g.d, &g.edges).map_err(serde::de::Error::custom)
    }
}

impl Adjacency {
    /// Empty graph over `d` nodes.
    pub fn new(d: usize) -> Self {
        Adjacency { d, entries: vec![0; d * d] }
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Self {
        Self::try_from_edges(d, edges).expect("invalid edge list")
    }

    pub fn try_from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Adjacency::new(d);
        for &(i, j) in edges {
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop at node {i}")));
            }
            if i >= d || j >= d {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for d = {d}"
                )));
            }
            a.set(i, j, true);
        }
        Ok(a)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.d + j] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, present: bool) {
        assert_ne!(i, j, "self-loops are not representable");
        self.entries[i * self.d + j] = present as u8;
    }

    pub fn edge_count(&self) -> usize {
        self.entries.iter().map(|&v| v as usize).sum()
    }

    /// All edges in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.d)
            .flat_map(move |i| (0..self.d).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.get(i, j))
    }

    pub fn parents(&self, v: usize) -> NodeSet {
        (0..self.d).filter(|&i| self.get(i, v)).collect()
    }

    pub fn children(&self, v: usize) -> NodeSet {
        (0..self.d).filter(|&j| self.get(v, j)).collect()
    }

    /// True iff the graph has no directed cycle (Kahn ordering succeeds).
    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_ok()
    }

    /// A node ordering in which every edge points forward. Smallest-index
    /// first among the ready nodes, so the empty graph yields the identity.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let d = self.d;
        let mut indeg = vec![0usize; d];
        for (_, j) in self.edges() {
            indeg[j] += 1;
        }
        let mut ready: BTreeSet<usize> =
            (0..d).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(&v) = ready.iter().next() {
            ready.remove(&v);
            order.push(v);
            for j in 0..d {
                if self.get(v, j) {
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        ready.insert(j);
                    }
                }
            }
        }
        if order.len() == d {
            Ok(order)
        } else {
            Err(Error::Cycle)
        }
    }

    /// Nodes reachable from `v` along directed paths, excluding `v` itself
    /// (unless `v` lies on a cycle through itself).
    pub fn descendants(&self, v: usize) -> NodeSet {
        assert!(v < self.d);
        let mut seen = NodeSet::new();
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for w in 0..self.d {
                if self.get(u, w) && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    /// Nodes with a directed path to `v`, excluding `v` itself.
    pub fn ancestors(&self, v: usize) -> NodeSet {
        let mut seen = NodeSet::new();
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for w in 0..self.d {
                if self.get(w, u) && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

/// True iff every path between `x` and `y` is blocked given `given`
/// (colliders open when conditioned on themselves or a descendant).
///
/// Reachability formulation: breadth-first search over (node, arrival
/// direction) states, with colliders passable exactly when the node has a
/// conditioned descendant.
pub fn d_separated(adj: &Adjacency, x: usize, y: usize, given: &NodeSet) -> bool {
    assert_ne!(x, y);
    assert!(!given.contains(&x) && !given.contains(&y));
    let d = adj.d();

    // nodes that are in `given` or have a descendant in `given`
    let mut anc_of_given = given.clone();
    {
        let mut queue: VecDeque<usize> = given.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            for p in 0..d {
                if adj.get(p, v) && anc_of_given.insert(p) {
                    queue.push_back(p);
                }
            }
        }
    }

    // state: (node, arrived moving up from a child = true / down from a parent = false)
    let mut visited = vec![[false; 2]; d];
    let mut queue = VecDeque::new();
    // leaving the source in either direction
    for p in adj.parents(x) {
        queue.push_back((p, true));
    }
    for c in adj.children(x) {
        queue.push_back((c, false));
    }
    while let Some((v, up)) = queue.pop_front() {
        if visited[v][up as usize] {
            continue;
        }
        visited[v][up as usize] = true;
        if v == y {
            return false;
        }
        if up {
            if !given.contains(&v) {
                for p in adj.parents(v) {
                    queue.push_back((p, true));
                }
                for c in adj.children(v) {
                    queue.push_back((c, false));
                }
            }
        } else {
            if !given.contains(&v) {
                for c in adj.children(v) {
                    queue.push_back((c, false));
                }
            }
            if anc_of_given.contains(&v) {
                // collider with a conditioned descendant opens the trail
                for p in adj.parents(v) {
                    queue.push_back((p, true));
                }
            }
        }
    }
    true
}

/// Parent adjustment: the parent set of the treatment.
pub fn parent_adjustment(adj: &Adjacency, x: usize) -> NodeSet {
    adj.parents(x)
}

/// Nodes on a directed path from `x` to `y`, excluding `x` itself.
pub fn causal_nodes(adj: &Adjacency, x: usize, y: usize) -> NodeSet {
    let from_x = adj.descendants(x);
    if !from_x.contains(&y) {
        return NodeSet::new();
    }
    let mut to_y = adj.ancestors(y);
    to_y.insert(y);
    from_x.intersection(&to_y).copied().collect()
}

/// Forbidden nodes for adjustment: causal nodes, their descendants, and the
/// treatment itself.
fn forbidden_nodes(adj: &Adjacency, x: usize, cn: &NodeSet) -> NodeSet {
    let mut forb: NodeSet = cn.clone();
    for &c in cn {
        forb.extend(adj.descendants(c));
    }
    forb.insert(x);
    forb
}

/// The minimum-asymptotic-variance valid adjustment set: parents of the
/// causal nodes minus forbidden nodes. Falls back to the parent set when no
/// directed path from `x` to `y` exists.
pub fn optimal_adjustment(adj: &Adjacency, x: usize, y: usize) -> NodeSet {
    let cn = causal_nodes(adj, x, y);
    if cn.is_empty() {
        return parent_adjustment(adj, x);
    }
    let forb = forbidden_nodes(adj, x, &cn);
    let mut parents_of_cn = NodeSet::new();
    for &c in &cn {
        parents_of_cn.extend(adj.parents(c));
    }
    parents_of_cn.difference(&forb).copied().collect()
}

/// Adjustment-set validity: `z` blocks every non-causal path between `x` and
/// `y`, and contains neither a node on a directed `x -> y` path nor a
/// descendant of one.
///
/// The non-causal-path condition is checked by d-separation in the graph
/// with the first edge of every causal path removed.
pub fn is_valid_adjustment(adj: &Adjacency, x: usize, y: usize, z: &NodeSet) -> bool {
    assert!(!z.contains(&x) && !z.contains(&y));
    let cn = causal_nodes(adj, x, y);
    // condition (ii)
    let forb = {
        let mut f: NodeSet = cn.clone();
        for &c in &cn {
            f.extend(adj.descendants(c));
        }
        f
    };
    if z.intersection(&forb).next().is_some() {
        return false;
    }
    // condition (i): block all non-causal paths
    let mut pruned = adj.clone();
    for &c in &cn {
        if pruned.get(x, c) {
            pruned.set(x, c, false);
        }
    }
    d_separated(&pruned, x, y, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> Adjacency {
        Adjacency::from_edges(3, &[(0, 1), (1, 2)])
    }

    fn collider3() -> Adjacency {
        Adjacency::from_edges(3, &[(0, 1), (2, 1)])
    }

    /// Z -> X, Z -> Y, X -> Y with (Z, X, Y) = (0, 1, 2).
    fn confounder3() -> Adjacency {
        Adjacency::from_edges(3, &[(0, 1), (0, 2), (1, 2)])
    }

    /// X -> M -> Y with (X, M, Y) = (0, 1, 2).
    fn mediator3() -> Adjacency {
        chain3()
    }

    #[test]
    fn acyclicity_basics() {
        assert!(Adjacency::new(4).is_acyclic());
        let two_cycle = Adjacency::from_edges(2, &[(0, 1), (1, 0)]);
        assert!(!two_cycle.is_acyclic());
    }

    #[test]
    fn acyclicity_uncertain_entry_fixture() {
        // the four-node example with alpha_13 = alpha_14 = 1, alpha_41 = 0:
        // edges X1->X2, X1->X3, X1->X4, X3->X4, X4->X2
        let a = Adjacency::from_edges(4, &[(0, 1), (0, 2), (0, 3), (2, 3), (3, 1)]);
        assert!(a.is_acyclic());
        // ordering X1, X3, X4, X2 works
        let order = a.topological_order().unwrap();
        let pos = |v: usize| order.iter().position(|&u| u == v).unwrap();
        for (i, j) in a.edges() {
            assert!(pos(i) < pos(j));
        }
    }

    #[test]
    fn topological_order_cases() {
        assert_eq!(chain3().topological_order().unwrap(), vec![0, 1, 2]);
        assert_eq!(Adjacency::new(3).topological_order().unwrap(), vec![0, 1, 2]);
        let two_cycle = Adjacency::from_edges(2, &[(0, 1), (1, 0)]);
        assert!(matches!(two_cycle.topological_order(), Err(Error::Cycle)));
    }

    #[test]
    fn descendants_chain_and_isolated() {
        let c = chain3();
        assert_eq!(c.descendants(0), NodeSet::from([1, 2]));
        assert_eq!(c.descendants(2), NodeSet::new());
        let mut iso = Adjacency::new(4);
        iso.set(1, 2, true);
        assert_eq!(iso.descendants(0), NodeSet::new());
    }

    /// Transitive closure by repeated boolean matrix multiplication.
    fn closure_oracle(adj: &Adjacency) -> Vec<Vec<bool>> {
        let d = adj.d();
        let mut reach = vec![vec![false; d]; d];
        for (i, j) in adj.edges() {
            reach[i][j] = true;
        }
        // (A + A^2 + ... + A^d) via boolean powers
        let mut power = reach.clone();
        for _ in 0..d {
            let mut next = vec![vec![false; d]; d];
            for i in 0..d {
                for k in 0..d {
                    if power[i][k] {
                        for j in 0..d {
                            if adj.get(k, j) {
                                next[i][j] = true;
                            }
                        }
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    reach[i][j] |= next[i][j];
                }
            }
            power = next;
        }
        reach
    }

    #[test]
    fn descendants_match_boolean_power_oracle() {
        let mut rng = crate::rng::rng_from_seed(42);
        use rand::RngExt;
        for _ in 0..50 {
            let d = 7;
            let mut adj = Adjacency::new(d);
            for i in 0..d {
                for j in 0..d {
                    if i < j && rng.random_range(0.0..1.0) < 0.4 {
                        adj.set(i, j, true);
                    }
                }
            }
            let reach = closure_oracle(&adj);
            for v in 0..d {
                let expect: NodeSet = (0..d).filter(|&u| reach[v][u]).collect();
                assert_eq!(adj.descendants(v), expect);
            }
        }
    }

    #[test]
    fn d_separation_chain_and_collider() {
        let c = chain3();
        assert!(d_separated(&c, 0, 2, &NodeSet::from([1])));
        assert!(!d_separated(&c, 0, 2, &NodeSet::new()));
        let v = collider3();
        assert!(d_separated(&v, 0, 2, &NodeSet::new()));
        assert!(!d_separated(&v, 0, 2, &NodeSet::from([1])));
    }

    #[test]
    fn d_separation_collider_descendant_opens() {
        // 0 -> 2 <- 1, 2 -> 3: conditioning on the collider's descendant opens it
        let a = Adjacency::from_edges(4, &[(0, 2), (1, 2), (2, 3)]);
        assert!(d_separated(&a, 0, 1, &NodeSet::new()));
        assert!(!d_separated(&a, 0, 1, &NodeSet::from([3])));
    }

    #[test]
    fn parent_adjustment_cases() {
        assert_eq!(parent_adjustment(&chain3(), 1), NodeSet::from([0]));
        assert_eq!(parent_adjustment(&chain3(), 0), NodeSet::new());
        // sure edges of the illustrative example: X1->X2, X3->X4, X4->X2
        let sure = Adjacency::from_edges(4, &[(0, 1), (2, 3), (3, 1)]);
        assert_eq!(parent_adjustment(&sure, 3), NodeSet::from([2]));
        // with the uncertain-slot edge X1->X4 present
        let mut with_alpha = sure.clone();
        with_alpha.set(0, 3, true);
        assert_eq!(parent_adjustment(&with_alpha, 3), NodeSet::from([0, 2]));
    }

    #[test]
    fn optimal_adjustment_confounder_and_mediator() {
        // cn = {Y}, pa(cn) = {X, Z}, forb = {X, Y} -> {Z}
        assert_eq!(optimal_adjustment(&confounder3(), 1, 2), NodeSet::from([0]));
        // cn = {M, Y}, pa(cn) = {X, M}, forb = {X, M, Y} -> empty
        assert_eq!(optimal_adjustment(&mediator3(), 0, 2), NodeSet::new());
    }

    #[test]
    fn optimal_adjustment_falls_back_to_parents() {
        // no directed path 2 -> 0
        let c = chain3();
        assert_eq!(optimal_adjustment(&c, 2, 0), parent_adjustment(&c, 2));
    }

    #[test]
    fn validity_examples() {
        assert!(is_valid_adjustment(&confounder3(), 1, 2, &NodeSet::from([0])));
        // conditioning on the mediator violates condition (ii)
        assert!(!is_valid_adjustment(&mediator3(), 0, 2, &NodeSet::from([1])));
        // empty set is valid for the mediator graph (no backdoor path)
        assert!(is_valid_adjustment(&mediator3(), 0, 2, &NodeSet::new()));
        // empty set is invalid under confounding
        assert!(!is_valid_adjustment(&confounder3(), 1, 2, &NodeSet::new()));
    }

    #[test]
    fn json_round_trip() {
        let a = Adjacency::from_edges(4, &[(0, 1), (2, 3), (3, 1)]);
        let s = serde_json::to_string(&a).unwrap();
        let b: Adjacency = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
