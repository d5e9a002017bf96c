//! Ground-truth SCMs and dataset generation.
//!
//! Graphs are Erdős–Rényi over a random topological order. Node mechanisms
//! are linear additive, sigmoidal mixed, or sigmoidal additive, with
//! parameters drawn from fixed ranges and Gaussian noise at scale 0.1.

use rand::Rng;
use rand::RngExt;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::graph::Adjacency;
use crate::linalg::Mat;
use crate::rng::{self, rng_from_seed};

/// Noise coefficient applied to every mechanism.
pub const NOISE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    LinearAdditive,
    SigmoidMixed,
    SigmoidAdditive,
}

impl MechanismKind {
    pub fn parse(s: &str) -> Option<MechanismKind> {
        match s {
            "linear" | "linear_additive" => Some(MechanismKind::LinearAdditive),
            "sig_mix" | "sigmoid_mixed" => Some(MechanismKind::SigmoidMixed),
            "sig_add" | "sigmoid_additive" => Some(MechanismKind::SigmoidAdditive),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MechanismKind::LinearAdditive => "linear",
            MechanismKind::SigmoidMixed => "sig_mix",
            MechanismKind::SigmoidAdditive => "sig_add",
        }
    }
}

/// Parameters of one node's mechanism.
///
/// `betas` has one weight per incoming edge, aligned with the node's parents
/// in ascending index order. The mixed sigmoid formula scales the parent sum
/// with a single weight, stored in `beta_node`. `alpha` and `gamma` are only
/// used by the sigmoid kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeMechanism {
    pub betas: Vec<f64>,
    pub beta_node: f64,
    pub alpha: f64,
    pub gamma: f64,
}

/// A fully specified structural causal model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scm {
    pub adjacency: Adjacency,
    pub kind: MechanismKind,
    pub nodes: Vec<NodeMechanism>,
    pub noise_scale: f64,
    /// support of the root distribution (uniform)
    pub root_range: (f64, f64),
}

/// Uniform over [-1, -0.25] u [0.25, 1]: sign flip times U[0.25, 1].
fn draw_beta(rng: &mut impl Rng) -> f64 {
    let mag = rng.random_range(0.25..=1.0);
    if rng.random_range(0.0..1.0) < 0.5 {
        -mag
    } else {
        mag
    }
}

/// Random node order, then each order-respecting pair becomes an edge
/// independently with probability `edge_prob`.
pub fn sample_er_dag(d: usize, edge_prob: f64, seed: u64) -> Adjacency {
    assert!((0.0..=1.0).contains(&edge_prob));
    let mut rng = rng_from_seed(seed);
    let order = rng::permutation(&mut rng, d);
    let mut adj = Adjacency::new(d);
    for a in 0..d {
        for b in a + 1..d {
            if rng.random_range(0.0..1.0) < edge_prob {
                adj.set(order[a], order[b], true);
            }
        }
    }
    adj
}

/// Draw mechanism parameters for every node of `adj` per the preset ranges.
pub fn attach_mechanisms(adj: &Adjacency, kind: MechanismKind, seed: u64) -> Scm {
    assert!(adj.is_acyclic());
    let mut rng = rng_from_seed(seed);
    let exp = Exp::new(0.25).unwrap();
    let d = adj.d();
    let mut nodes = Vec::with_capacity(d);
    for v in 0..d {
        let n_parents = adj.parents(v).len();
        let betas: Vec<f64> = (0..n_parents).map(|_| draw_beta(&mut rng)).collect();
        let (beta_node, alpha, gamma) = match kind {
            MechanismKind::LinearAdditive => (0.0, 0.0, 0.0),
            _ => (
                draw_beta(&mut rng),
                exp.sample(&mut rng) + 1.0,
                rng.random_range(-2.0..=2.0),
            ),
        };
        nodes.push(NodeMechanism { betas, beta_node, alpha, gamma });
    }
    Scm {
        adjacency: adj.clone(),
        kind,
        nodes,
        noise_scale: NOISE_SCALE,
        root_range: (-1.0, 1.0),
    }
}

impl Scm {
    /// Linear SCM with explicit edge coefficients, for fixtures.
    pub fn linear_with(
        adj: &Adjacency,
        coef: impl Fn(usize, usize) -> f64,
        noise_scale: f64,
    ) -> Scm {
        assert!(adj.is_acyclic());
        let nodes = (0..adj.d())
            .map(|v| NodeMechanism {
                betas: adj.parents(v).iter().map(|&p| coef(p, v)).collect(),
                beta_node: 0.0,
                alpha: 0.0,
                gamma: 0.0,
            })
            .collect();
        Scm {
            adjacency: adj.clone(),
            kind: MechanismKind::LinearAdditive,
            nodes,
            noise_scale,
            root_range: (-1.0, 1.0),
        }
    }

    pub fn d(&self) -> usize {
        self.adjacency.d()
    }

    /// Evaluate node `v`'s mechanism given its parents' values (ascending
    /// parent order) and a standard normal noise draw.
    fn mechanism(&self, v: usize, parent_values: &[f64], eps: f64) -> f64 {
        let m = &self.nodes[v];
        let lam = self.noise_scale;
        match self.kind {
            MechanismKind::LinearAdditive => {
                let mut y = lam * eps;
                for (b, x) in m.betas.iter().zip(parent_values) {
                    y += b * x;
                }
                y
            }
            MechanismKind::SigmoidMixed => {
                // numerator omits gamma, denominator includes it
                let u: f64 = parent_values.iter().sum::<f64>() + lam * eps;
                let b = m.beta_node;
                m.alpha * b * u / (1.0 + (b * (u + m.gamma)).abs())
            }
            MechanismKind::SigmoidAdditive => {
                let mut y = lam * eps;
                for (b, x) in m.betas.iter().zip(parent_values) {
                    let t = b * (x + m.gamma);
                    y += m.alpha * t / (1.0 + t.abs());
                }
                y
            }
        }
    }

    /// Ancestral sampling; `intervene` pins a node to a fixed level.
    fn simulate(
        &self,
        n: usize,
        seed: u64,
        intervene: Option<(usize, f64)>,
    ) -> Mat {
        let d = self.d();
        let order = self.adjacency.topological_order().expect("SCM graph is a DAG");
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut values = Mat::zeros(n, d);
        // column-by-column in topological order keeps the draw sequence
        // independent of how the node indices are labeled
        for &v in &order {
            if let Some((node, level)) = intervene {
                if node == v {
                    for r in 0..n {
                        values[(r, v)] = level;
                    }
                    continue;
                }
            }
            let parents: Vec<usize> = self.adjacency.parents(v).into_iter().collect();
            if parents.is_empty() {
                for r in 0..n {
                    values[(r, v)] = rng.random_range(self.root_range.0..=self.root_range.1);
                }
            } else {
                let mut pv = vec![0.0; parents.len()];
                for r in 0..n {
                    for (t, &p) in parents.iter().enumerate() {
                        pv[t] = values[(r, p)];
                    }
                    let eps = normal.sample(&mut rng);
                    values[(r, v)] = self.mechanism(v, &pv, eps);
                }
            }
        }
        values
    }

    /// Observational dataset of `n` i.i.d. samples.
    pub fn generate_data(&self, n: usize, seed: u64) -> Dataset {
        Dataset::unnamed(self.simulate(n, seed, None))
    }

    /// Monte Carlo estimate of `E[Y | do(X = level)]`.
    pub fn interventional_mean(
        &self,
        treatment: usize,
        level: f64,
        outcome: usize,
        n: usize,
        seed: u64,
    ) -> f64 {
        let values = self.simulate(n, seed, Some((treatment, level)));
        (0..n).map(|r| values[(r, outcome)]).sum::<f64>() / n as f64
    }

    /// Per-unit total effect of `x` on `y` for linear mechanisms: the sum
    /// over directed paths of edge-coefficient products.
    pub fn linear_total_effect(&self, x: usize, y: usize) -> f64 {
        assert_eq!(self.kind, MechanismKind::LinearAdditive);
        let order = self.adjacency.topological_order().expect("SCM graph is a DAG");
        let mut effect = vec![0.0; self.d()];
        effect[x] = 1.0;
        for &v in &order {
            if v == x {
                continue;
            }
            let parents: Vec<usize> = self.adjacency.parents(v).into_iter().collect();
            let mut acc = 0.0;
            for (t, &p) in parents.iter().enumerate() {
                acc += effect[p] * self.nodes[v].betas[t];
            }
            effect[v] = acc;
        }
        effect[y]
    }
}

/// Convenience wrapper: graph, mechanisms, and data in one call.
pub fn generate_instance(
    d: usize,
    edge_prob: f64,
    kind: MechanismKind,
    n: usize,
    seed: u64,
) -> (Scm, Dataset) {
    let adj = sample_er_dag(d, edge_prob, rng::derive_seed(seed, 1));
    let scm = attach_mechanisms(&adj, kind, rng::derive_seed(seed, 2));
    let data = scm.generate_data(n, rng::derive_seed(seed, 3));
    (scm, data)
}
