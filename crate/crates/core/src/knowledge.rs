//! Partial edge knowledge and the compatible-DAG space.
//!
//! `EdgeKnowledge` splits the `d(d-1)` ordered node pairs into sure edges,
//! forbidden edges, and the remaining uncertain slots. Enumeration walks all
//! binary assignments over the uncertain slots in Gray-code order so each
//! step flips a single edge, which lets most acyclicity checks short-circuit.

use std::collections::BTreeSet;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimation::{estimate_query_plain, CausalQuery};
use crate::graph::Adjacency;
use crate::rng;

/// Default cap on enumerable uncertain slots (2^24 assignments).
pub const DEFAULT_ENUM_CAP: usize = 24;

/// Sure edges, forbidden edges, and the derived uncertain slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeKnowledge {
    d: usize,
    sure: BTreeSet<(usize, usize)>,
    forbidden: BTreeSet<(usize, usize)>,
    uncertain: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct KnowledgeJson {
    d: usize,
    sure: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
}

impl Serialize for EdgeKnowledge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KnowledgeJson {
            d: self.d,
            sure: self.sure.iter().copied().collect(),
            forbidden: self.forbidden.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EdgeKnowledge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let k = KnowledgeJson::deserialize(d)?;
        EdgeKnowledge::new(k.d, &k.sure, &k.forbidden).map_err(serde::de::Error::custom)
    }
}

impl EdgeKnowledge {
    /// Build knowledge from sure and forbidden edge lists.
    ///
    /// Errors when the sets overlap, contain self-loops or out-of-range
    /// indices, or when the sure-edge subgraph already has a cycle (in which
    /// case the compatible space is empty).
    pub fn new(
        d: usize,
        sure: &[(usize, usize)],
        forbidden: &[(usize, usize)],
    ) -> Result<Self> {
        let sure: BTreeSet<_> = sure.iter().copied().collect();
        let forbidden: BTreeSet<_> = forbidden.iter().copied().collect();
        for &(i, j) in sure.iter().chain(forbidden.iter()) {
            if i == j {
                return Err(Error::InvalidKnowledge(format!("self-loop ({i}, {j})")));
            }
            if i >= d || j >= d {
                return Err(Error::InvalidKnowledge(format!(
                    "pair ({i}, {j}) out of range for d = {d}"
                )));
            }
        }
        if let Some(&(i, j)) = sure.intersection(&forbidden).next() {
            return Err(Error::InvalidKnowledge(format!(
                "pair ({i}, {j}) is both sure and forbidden"
            )));
        }
        let sure_graph =
            Adjacency::try_from_edges(d, &sure.iter().copied().collect::<Vec<_>>())?;
        if !sure_graph.is_acyclic() {
            return Err(Error::InvalidKnowledge(
                "sure edges already contain a cycle; no compatible DAG exists".into(),
            ));
        }
        let mut uncertain = Vec::new();
        for i in 0..d {
            for j in 0..d {
                if i != j && !sure.contains(&(i, j)) && !forbidden.contains(&(i, j)) {
                    uncertain.push((i, j));
                }
            }
        }
        Ok(EdgeKnowledge { d, sure, forbidden, uncertain })
    }

    /// Knowledge with every ordered pair uncertain.
    pub fn unconstrained(d: usize) -> Self {
        EdgeKnowledge::new(d, &[], &[]).expect("empty knowledge is always valid")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sure(&self) -> &BTreeSet<(usize, usize)> {
        &self.sure
    }

    pub fn forbidden(&self) -> &BTreeSet<(usize, usize)> {
        &self.forbidden
    }

    /// The K free ordered pairs, in row-major order.
    pub fn uncertain_slots(&self) -> &[(usize, usize)] {
        &self.uncertain
    }

    /// K = d(d-1) - |sure| - |forbidden|.
    pub fn uncertain_count(&self) -> usize {
        self.uncertain.len()
    }

    /// The graph with all sure edges and nothing else.
    pub fn sure_graph(&self) -> Adjacency {
        Adjacency::from_edges(self.d, &self.sure.iter().copied().collect::<Vec<_>>())
    }

    /// True iff `adj` contains every sure edge and no forbidden edge.
    pub fn admits(&self, adj: &Adjacency) -> bool {
        self.sure.iter().all(|&(i, j)| adj.get(i, j))
            && self.forbidden.iter().all(|&(i, j)| !adj.get(i, j))
    }

    /// Iterator over every compatible DAG, using the default slot cap.
    pub fn compatible_graphs(&self) -> Result<CompatibleGraphs<'_>> {
        self.compatible_graphs_with_cap(DEFAULT_ENUM_CAP)
    }

    /// Iterator over every compatible DAG; errors when K exceeds `cap` slots.
    pub fn compatible_graphs_with_cap(&self, cap: usize) -> Result<CompatibleGraphs<'_>> {
        let k = self.uncertain_count();
        if k > cap {
            return Err(Error::EnumerationCap { slots: k, cap });
        }
        Ok(CompatibleGraphs::new(self, 0, 1u64 << k))
    }

    /// Number of compatible DAGs (assignments passing the acyclicity filter).
    pub fn compatible_count(&self, cap: usize) -> Result<u64> {
        Ok(self.compatible_graphs_with_cap(cap)?.map(|_| 1u64).sum())
    }
}

/// Gray-code walk over assignments of the uncertain slots, yielding each
/// acyclic full adjacency exactly once.
///
/// Each step flips a single slot, so only two of the four transitions need a
/// graph traversal: turning an edge on in an acyclic graph needs one
/// reachability probe, and turning an edge off in a cyclic graph needs a
/// full check. The other two cases keep the previous verdict.
pub struct CompatibleGraphs<'k> {
    knowledge: &'k EdgeKnowledge,
    current: Adjacency,
    /// assignment index within [start, end)
    index: u64,
    end: u64,
    /// Gray code of the previously applied index
    prev_gray: u64,
    prev_acyclic: bool,
    started: bool,
}

impl<'k> CompatibleGraphs<'k> {
    /// Walk assignments `start..end` of the Gray-code sequence.
    pub(crate) fn new(knowledge: &'k EdgeKnowledge, start: u64, end: u64) -> Self {
        let mut current = knowledge.sure_graph();
        let gray = start ^ (start >> 1);
        for (bit, &(i, j)) in knowledge.uncertain_slots().iter().enumerate() {
            if gray >> bit & 1 == 1 {
                current.set(i, j, true);
            }
        }
        let prev_acyclic = current.is_acyclic();
        CompatibleGraphs {
            knowledge,
            current,
            index: start,
            end,
            prev_gray: gray,
            prev_acyclic,
            started: false,
        }
    }

    /// Assignment index of the most recently yielded graph.
    pub(crate) fn assignment_index(&self) -> u64 {
        self.index
    }

    fn advance(&mut self) {
        self.index += 1;
        let gray = self.index ^ (self.index >> 1);
        let flipped = gray ^ self.prev_gray;
        debug_assert_eq!(flipped.count_ones(), 1);
        let bit = flipped.trailing_zeros() as usize;
        let (i, j) = self.knowledge.uncertain_slots()[bit];
        let turning_on = gray >> bit & 1 == 1;
        self.current.set(i, j, turning_on);
        self.prev_acyclic = match (self.prev_acyclic, turning_on) {
            // adding an edge to an acyclic graph: cycle iff j already reaches i
            (true, true) => !self.current.descendants(j).contains(&i),
            // removing an edge from an acyclic graph cannot create a cycle
            (true, false) => true,
            // adding an edge keeps a cyclic graph cyclic
            (false, true) => false,
            (false, false) => self.current.is_acyclic(),
        };
        self.prev_gray = gray;
    }
}

impl Iterator for CompatibleGraphs<'_> {
    type Item = Adjacency;

    fn next(&mut self) -> Option<Adjacency> {
        loop {
            if self.started {
                if self.index + 1 >= self.end {
                    return None;
                }
                self.advance();
            } else {
                self.started = true;
                if self.index >= self.end {
                    return None;
                }
            }
            if self.prev_acyclic {
                return Some(self.current.clone());
            }
        }
    }
}

/// Lower/upper bounds over the compatible space with the achieving graphs.
#[derive(Debug, Clone)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
    pub arg_lower: Adjacency,
    pub arg_upper: Adjacency,
    /// number of compatible graphs examined
    pub graphs: u64,
}

/// Estimate the query on every compatible graph and take the extrema.
///
/// The assignment space is split into chunks that workers sweep
/// independently; ties break toward the smaller assignment index so the
/// result does not depend on the worker count.
pub fn brute_force_bounds(
    knowledge: &EdgeKnowledge,
    data: &Dataset,
    query: &CausalQuery,
    seed: u64,
) -> Result<BoundPair> {
    brute_force_bounds_with_cap(knowledge, data, query, DEFAULT_ENUM_CAP, seed)
}

pub fn brute_force_bounds_with_cap(
    knowledge: &EdgeKnowledge,
    data: &Dataset,
    query: &CausalQuery,
    cap: usize,
    seed: u64,
) -> Result<BoundPair> {
    use rayon::prelude::*;

    let k = knowledge.uncertain_count();
    if k > cap {
        return Err(Error::EnumerationCap { slots: k, cap });
    }
    let total = 1u64 << k;
    let chunk = 4096u64;
    let n_chunks = total.div_ceil(chunk);

    struct Extrema {
        lower: (f64, u64, Adjacency),
        upper: (f64, u64, Adjacency),
        graphs: u64,
    }

    let per_chunk = |c: u64| -> Result<Option<Extrema>> {
        let start = c * chunk;
        let end = total.min(start + chunk);
        let mut best: Option<Extrema> = None;
        let mut iter = CompatibleGraphs::new(knowledge, start, end);
        while let Some(adj) = iter.next() {
            let index = iter.assignment_index();
            let value =
                estimate_query_plain(&adj, data, query, rng::derive_seed(seed, index))?;
            match &mut best {
                None => {
                    best = Some(Extrema {
                        lower: (value, index, adj.clone()),
                        upper: (value, index, adj),
                        graphs: 1,
                    })
                }
                Some(b) => {
                    b.graphs += 1;
                    if value < b.lower.0 {
                        b.lower = (value, index, adj.clone());
                    }
                    if value > b.upper.0 {
                        b.upper = (value, index, adj);
                    }
                }
            }
        }
        Ok(best)
    };

    let merged = (0..n_chunks)
        .into_par_iter()
        .map(per_chunk)
        .try_reduce(
            || None,
            |a, b| {
                Ok(match (a, b) {
                    (None, x) | (x, None) => x,
                    (Some(mut a), Some(b)) => {
                        // strict inequality + index tie-break keeps the result
                        // independent of chunk merge order
                        a.graphs += b.graphs;
                        if b.lower.0 < a.lower.0
                            || (b.lower.0 == a.lower.0 && b.lower.1 < a.lower.1)
                        {
                            a.lower = b.lower;
                        }
                        if b.upper.0 > a.upper.0
                            || (b.upper.0 == a.upper.0 && b.upper.1 < a.upper.1)
                        {
                            a.upper = b.upper;
                        }
                        Some(a)
                    }
                })
            },
        )?;

    let best = merged.ok_or(Error::EmptySpace)?;
    Ok(BoundPair {
        lower: best.lower.0,
        upper: best.upper.0,
        arg_lower: best.lower.2,
        arg_upper: best.upper.2,
        graphs: best.graphs,
    })
}

/// Draw knowledge from a ground-truth graph: each true edge becomes sure
/// with probability `p_sure`, each absent ordered pair becomes forbidden
/// with probability `p_forbidden`.
pub fn random_knowledge(
    true_adj: &Adjacency,
    p_sure: f64,
    p_forbidden: f64,
    seed: u64,
) -> EdgeKnowledge {
    assert!(true_adj.is_acyclic(), "ground-truth graph must be a DAG");
    assert!((0.0..=1.0).contains(&p_sure) && (0.0..=1.0).contains(&p_forbidden));
    let mut rng = rng::rng_from_seed(seed);
    let d = true_adj.d();
    let mut sure = Vec::new();
    let mut forbidden = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            if true_adj.get(i, j) {
                if rng.random_range(0.0..1.0) < p_sure {
                    sure.push((i, j));
                }
            } else if rng.random_range(0.0..1.0) < p_forbidden {
                forbidden.push((i, j));
            }
        }
    }
    EdgeKnowledge::new(d, &sure, &forbidden)
        .expect("knowledge drawn from a DAG is always consistent")
}
