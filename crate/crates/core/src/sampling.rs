//! Differentiable graph sampling.
//!
//! Two samplers share the straight-through construction `hard.detach() -
//! soft.detach() + soft`: per-edge two-class Gumbel-Softmax over the
//! uncertain slots of a `ParamGraph`, and permutation-based sampling
//! (`DpDagParams`) that is acyclic by construction and only enforces
//! forbidden edges.

use crate::diff::{Tape, Var};
use crate::graph::Adjacency;
use crate::knowledge::EdgeKnowledge;
use crate::linalg::Mat;
use crate::rng::gumbel;
use rand::Rng;

/// Default per-step multiplicative temperature decay.
pub const DEFAULT_TEMP_DECAY: f64 = 0.9997;
/// Temperature floor.
pub const DEFAULT_TEMP_FLOOR: f64 = 1e-2;
/// Initial Gumbel-Softmax temperature.
pub const DEFAULT_TEMP_INIT: f64 = 1.0;

/// A sampled graph on a tape: the relaxed matrix, the straight-through
/// composite (forward-evaluates to the hard sample), and the binary sample.
pub struct GraphSample<'t> {
    pub soft: Var<'t>,
    pub st: Var<'t>,
    pub hard: Adjacency,
}

/// Two-class Gumbel-Softmax probabilities for one edge.
///
/// `a1` is the probability mass on "edge present" after perturbing the
/// log-odds with Gumbel noise and dividing by the temperature; `a0 + a1 = 1`.
pub fn gumbel_edge_probability(pi1: f64, g0: f64, g1: f64, tau: f64) -> (f64, f64) {
    assert!(pi1 > 0.0 && pi1 < 1.0, "pi1 must be in (0, 1)");
    assert!(tau > 0.0);
    // softmax of ((ln(1-pi1)+g0)/tau, (ln(pi1)+g1)/tau), written via the
    // logit difference so it cannot overflow for small tau
    let z = (pi1.ln() - (1.0 - pi1).ln() + g1 - g0) / tau;
    let a1 = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
    (1.0 - a1, a1)
}

/// Trainable logits over a d x d adjacency with sure/forbidden entries
/// frozen.
#[derive(Debug, Clone)]
pub struct ParamGraph {
    d: usize,
    logits: Mat,
    free: Vec<(usize, usize)>,
    sure: Vec<(usize, usize)>,
    temperature: f64,
    decay: f64,
    floor: f64,
    /// 1.0 at free entries
    free_mask: Mat,
    /// 1.0 at sure entries
    sure_mat: Mat,
}

impl ParamGraph {
    /// Logits start at zero (edge probability one half) on every uncertain
    /// slot; sure entries are frozen to one and everything else to zero.
    pub fn from_knowledge(k: &EdgeKnowledge) -> Self {
        let d = k.d();
        let free: Vec<_> = k.uncertain_slots().to_vec();
        let sure: Vec<_> = k.sure().iter().copied().collect();
        let mut free_mask = Mat::zeros(d, d);
        for &(i, j) in &free {
            free_mask[(i, j)] = 1.0;
        }
        let mut sure_mat = Mat::zeros(d, d);
        for &(i, j) in &sure {
            sure_mat[(i, j)] = 1.0;
        }
        ParamGraph {
            d,
            logits: Mat::zeros(d, d),
            free,
            sure,
            temperature: DEFAULT_TEMP_INIT,
            decay: DEFAULT_TEMP_DECAY,
            floor: DEFAULT_TEMP_FLOOR,
            free_mask,
            sure_mat,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn free_slots(&self) -> &[(usize, usize)] {
        &self.free
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, tau: f64) {
        assert!(tau > 0.0);
        self.temperature = tau;
    }

    pub fn logit(&self, i: usize, j: usize) -> f64 {
        self.logits[(i, j)]
    }

    pub fn set_logit(&mut self, i: usize, j: usize, v: f64) {
        self.logits[(i, j)] = v;
    }

    /// Edge probability `pi1` of a free slot.
    pub fn edge_probability(&self, i: usize, j: usize) -> f64 {
        let l = self.logits[(i, j)];
        if l >= 0.0 {
            1.0 / (1.0 + (-l).exp())
        } else {
            l.exp() / (1.0 + l.exp())
        }
    }

    /// Multiply the temperature by the decay, floored.
    pub fn anneal(&mut self) -> f64 {
        self.temperature = (self.temperature * self.decay).max(self.floor);
        self.temperature
    }

    /// Draw a straight-through sample. Returns the sample and the logits
    /// leaf so callers can read gradients. Frozen entries are bitwise exact
    /// in both soft and hard and carry no gradient.
    pub fn sample<'t>(
        &self,
        tape: &'t Tape,
        rng: &mut impl Rng,
    ) -> (GraphSample<'t>, Var<'t>) {
        let d = self.d;
        let mut g0 = Mat::zeros(d, d);
        let mut g1 = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                g0[(i, j)] = gumbel(rng);
                g1[(i, j)] = gumbel(rng);
            }
        }
        let logits = tape.leaf(self.logits.clone());
        // ln(pi1) - ln(1 - pi1) is the logit itself, so the perturbed
        // two-class softmax reduces to a sigmoid of (logit + g1 - g0) / tau
        let z = logits
            .add(tape.constant(g1))
            .sub(tape.constant(g0))
            .scale(1.0 / self.temperature);
        let a1 = z.sigmoid();
        let soft = a1
            .mul(tape.constant(self.free_mask.clone()))
            .add(tape.constant(self.sure_mat.clone()));

        let mut hard = Adjacency::new(d);
        let zv = z.value();
        for &(i, j) in &self.free {
            if zv[(i, j)] > 0.0 {
                hard.set(i, j, true);
            }
        }
        for &(i, j) in &self.sure {
            hard.set(i, j, true);
        }
        let mut hard_mat = Mat::zeros(d, d);
        for (i, j) in hard.edges() {
            hard_mat[(i, j)] = 1.0;
        }
        let st = tape.constant(hard_mat).sub(soft).stop_grad().add(soft);
        (GraphSample { soft, st, hard }, logits)
    }
}

/// Parameters of the permutation-based sampler: node scores, strict
/// upper-triangular edge logits, and the forbidden-entry mask.
#[derive(Debug, Clone)]
pub struct DpDagParams {
    d: usize,
    perm_scores: Vec<f64>,
    edge_logits: Vec<f64>,
    upper_pairs: Vec<(usize, usize)>,
    temperature: f64,
    decay: f64,
    floor: f64,
    /// 1.0 everywhere except forbidden entries and the diagonal
    allow_mask: Mat,
    forbidden: Vec<(usize, usize)>,
}

/// The two trainable leaves of a DP-DAG sample.
pub struct DpDagLeaves<'t> {
    pub scores: Var<'t>,
    pub edges: Var<'t>,
}

impl DpDagParams {
    /// Only the forbidden edges of `k` are enforced; sure edges are treated
    /// as uncertain.
    pub fn from_knowledge(k: &EdgeKnowledge) -> Self {
        Self::new(k.d(), &k.forbidden().iter().copied().collect::<Vec<_>>())
    }

    pub fn new(d: usize, forbidden: &[(usize, usize)]) -> Self {
        let upper_pairs: Vec<_> =
            (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
        let mut allow_mask = Mat::filled(d, d, 1.0);
        for i in 0..d {
            allow_mask[(i, i)] = 0.0;
        }
        for &(i, j) in forbidden {
            allow_mask[(i, j)] = 0.0;
        }
        DpDagParams {
            d,
            perm_scores: vec![0.0; d],
            edge_logits: vec![0.0; d * (d - 1) / 2],
            upper_pairs,
            temperature: DEFAULT_TEMP_INIT,
            decay: DEFAULT_TEMP_DECAY,
            floor: DEFAULT_TEMP_FLOOR,
            allow_mask,
            forbidden: forbidden.to_vec(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn param_count(&self) -> usize {
        self.d + self.edge_logits.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn anneal(&mut self) -> f64 {
        self.temperature = (self.temperature * self.decay).max(self.floor);
        self.temperature
    }

    pub fn perm_scores_mut(&mut self) -> &mut [f64] {
        &mut self.perm_scores
    }

    pub fn edge_logits_mut(&mut self) -> &mut [f64] {
        &mut self.edge_logits
    }

    pub fn set_edge_logits(&mut self, v: f64) {
        for l in &mut self.edge_logits {
            *l = v;
        }
    }

    pub fn set_perm_scores(&mut self, scores: &[f64]) {
        assert_eq!(scores.len(), self.d);
        self.perm_scores.copy_from_slice(scores);
    }

    /// Draw a straight-through DAG sample via `A = P^T U P`.
    ///
    /// The permutation comes from argsorting Gumbel-perturbed scores; its
    /// relaxation is a row-wise softmax over negative absolute score
    /// differences, one-hot in the zero-temperature limit. `U` entries are
    /// two-class straight-through Gumbel. Forbidden entries are zeroed in
    /// both the soft and hard matrices; the result is always acyclic.
    pub fn sample<'t>(
        &self,
        tape: &'t Tape,
        rng: &mut impl Rng,
    ) -> (GraphSample<'t>, DpDagLeaves<'t>) {
        let d = self.d;

        // permutation scores, perturbed
        let scores = tape.leaf(Mat::from_vec(1, d, self.perm_scores.clone()));
        let noise = Mat::from_vec(1, d, (0..d).map(|_| gumbel(rng)).collect());
        let perturbed = scores.add(tape.constant(noise));
        let pv = perturbed.value();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| pv[(0, b)].partial_cmp(&pv[(0, a)]).unwrap());
        let mut perm_hard = Mat::zeros(d, d);
        for (pos, &node) in order.iter().enumerate() {
            perm_hard[(pos, node)] = 1.0;
        }
        let perm_hard_const = tape.constant(perm_hard.clone());

        // soft permutation: softmax over -|sorted_i - perturbed_j| / tau
        let sorted = perm_hard_const.matmul(perturbed.t()); // d x 1, differentiable gather
        let ones_row = tape.constant(Mat::filled(1, d, 1.0));
        let ones_col = tape.constant(Mat::filled(d, 1, 1.0));
        let s_grid = sorted.matmul(ones_row); // row i filled with sorted[i]
        let p_grid = ones_col.matmul(perturbed); // column j filled with perturbed[j]
        let dist = s_grid.sub(p_grid).abs().scale(-1.0 / self.temperature);
        let perm_soft = dist.softmax_rows();
        let perm_st = perm_hard_const.sub(perm_soft).stop_grad().add(perm_soft);

        // strict upper-triangular edge bits
        let k = self.upper_pairs.len();
        let edges = tape.leaf(Mat::from_vec(1, k, self.edge_logits.clone()));
        let mut g0 = Mat::zeros(1, k);
        let mut g1 = Mat::zeros(1, k);
        for t in 0..k {
            g0[(0, t)] = gumbel(rng);
            g1[(0, t)] = gumbel(rng);
        }
        let z = edges
            .add(tape.constant(g1))
            .sub(tape.constant(g0))
            .scale(1.0 / self.temperature);
        let u_soft_row = z.sigmoid();
        let zv = z.value();
        let mut u_hard_row = Mat::zeros(1, k);
        for t in 0..k {
            if zv[(0, t)] > 0.0 {
                u_hard_row[(0, t)] = 1.0;
            }
        }
        let u_st_row = tape
            .constant(u_hard_row.clone())
            .sub(u_soft_row)
            .stop_grad()
            .add(u_soft_row);
        let u_st = u_st_row.scatter_entries(d, d, &self.upper_pairs);
        let u_soft = u_soft_row.scatter_entries(d, d, &self.upper_pairs);

        let mask = tape.constant(self.allow_mask.clone());
        let st = perm_st.t().matmul(u_st).matmul(perm_st).mul(mask);
        let soft = perm_soft.t().matmul(u_soft).matmul(perm_soft).mul(mask);

        // hard adjacency: edge (a, b) iff pos(a) < pos(b), the U bit is set,
        // and the entry is not masked
        let mut pos = vec![0usize; d];
        for (p, &node) in order.iter().enumerate() {
            pos[node] = p;
        }
        let mut hard = Adjacency::new(d);
        for a in 0..d {
            for b in 0..d {
                if a == b || self.allow_mask[(a, b)] == 0.0 {
                    continue;
                }
                let (pa, pb) = (pos[a], pos[b]);
                if pa < pb && u_hard_row[(0, upper_index(d, pa, pb))] == 1.0 {
                    hard.set(a, b, true);
                }
            }
        }
        debug_assert!({
            let stv = st.value();
            hard.edges().all(|(i, j)| (stv[(i, j)] - 1.0).abs() < 1e-9)
        });
        (GraphSample { soft, st, hard }, DpDagLeaves { scores, edges })
    }

    pub fn forbidden(&self) -> &[(usize, usize)] {
        &self.forbidden
    }
}

fn upper_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < d);
    // row offset: i*d - i(i+1)/2 counts the strict-upper entries above row i
    i * d - i * (i + 1) / 2 + (j - i - 1)
}
