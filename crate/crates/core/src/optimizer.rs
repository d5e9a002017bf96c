//! The bound search: augmented-Lagrangian optimization over per-edge logits,
//! the permutation-based sampler as an alternative backend, feasibility
//! filtering, extremum tracking, and bootstrap widening.
//!
//! Neither backend certifies global optimality; the feasibility filter
//! guarantees that every reported bound is attained by a concrete DAG that
//! satisfies the edge knowledge.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diff::{self, AcyclicityConfig, AcyclicityKind, Adam, Tape};
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_query_diff, estimate_query_plain_with, CausalQuery, MlpConfig,
};
use crate::graph::Adjacency;
use crate::knowledge::{self, EdgeKnowledge};
use crate::rng::{self, rng_from_seed};
use crate::sampling::{DpDagParams, ParamGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    /// +1 for minimization, -1 for maximization of the query term.
    fn sign(&self) -> f64 {
        match self {
            Direction::Min => 1.0,
            Direction::Max => -1.0,
        }
    }

    fn improves(&self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Min => candidate < incumbent,
            Direction::Max => candidate > incumbent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Lagrangian,
    DpDag,
}

/// Sign convention of the augmented-Lagrangian penalty term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlConvention {
    /// xi(h) = -lambda h + tau h^2 / 2, lambda <- max{0, lambda - tau h}
    Paper,
    /// xi(h) = +lambda h + tau h^2 / 2, lambda <- lambda + tau h
    Standard,
}

/// Multiplier and penalty state of one augmented-Lagrangian run.
#[derive(Debug, Clone)]
pub struct LagrangianState {
    pub lambda: f64,
    pub tau_l: f64,
    pub tau_cap: f64,
    pub gamma: f64,
    pub convention: AlConvention,
}

impl LagrangianState {
    pub fn new(cfg: &SearchConfig) -> Self {
        LagrangianState {
            lambda: cfg.lambda_init,
            tau_l: cfg.tau_init,
            tau_cap: cfg.tau_cap,
            gamma: cfg.gamma,
            convention: cfg.al_convention,
        }
    }

    /// xi(h, lambda, tau) on the tape.
    pub fn penalty<'t>(&self, h: diff::Var<'t>) -> diff::Var<'t> {
        let lambda_sign = match self.convention {
            AlConvention::Paper => -self.lambda,
            AlConvention::Standard => self.lambda,
        };
        let linear = h.scale(lambda_sign);
        let quad = h.mul(h).scale(self.tau_l / 2.0);
        linear.add(quad)
    }

    /// End-of-round multiplier and penalty update.
    pub fn update(&mut self, h: f64) {
        match self.convention {
            AlConvention::Paper => {
                self.lambda = (self.lambda - self.tau_l * h).max(0.0);
            }
            AlConvention::Standard => {
                self.lambda += self.tau_l * h;
            }
        }
        self.tau_l = (self.tau_l * self.gamma).min(self.tau_cap);
    }
}

/// `+-Q + xi(h)`; "+" searches the lower bound, "-" the upper.
pub fn lagrangian_loss<'t>(
    q_value: diff::Var<'t>,
    h_value: diff::Var<'t>,
    state: &LagrangianState,
    direction: Direction,
) -> diff::Var<'t> {
    q_value.scale(direction.sign()).add(state.penalty(h_value))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    /// outer rounds; defaults to 100 for up to 6 nodes, 200 beyond
    pub rounds: Option<usize>,
    pub steps_per_round: usize,
    pub lr_lagrangian: f64,
    pub lr_dpdag: f64,
    pub acyclicity: AcyclicityConfig,
    pub al_convention: AlConvention,
    pub lambda_init: f64,
    pub tau_init: f64,
    pub tau_cap: f64,
    pub gamma: f64,
    pub mlp: MlpConfig,
    /// bootstrap resamples for widening
    pub bootstrap: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            rounds: None,
            steps_per_round: 30,
            lr_lagrangian: 0.3,
            lr_dpdag: 1e-4,
            acyclicity: AcyclicityConfig { kind: AcyclicityKind::Dagma, s: 2.0 },
            al_convention: AlConvention::Paper,
            lambda_init: 2.0,
            tau_init: 0.1,
            tau_cap: 4.0,
            gamma: 1.2,
            mlp: MlpConfig::default(),
            bootstrap: 50,
        }
    }
}

impl SearchConfig {
    pub fn rounds_for(&self, d: usize) -> usize {
        match self.rounds {
            Some(r) => r,
            None if d <= 6 => 100,
            None => 200,
        }
    }
}

/// Per-round log entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// best feasible query value so far (in the run's direction)
    pub best_q: Option<f64>,
    /// straight-through h of the round's last step
    pub h_st: f64,
    /// soft-matrix h of the round's last step (drives the update)
    pub h_soft: f64,
    pub lambda: f64,
    pub tau_l: f64,
}

/// Result of one directional run.
#[derive(Debug, Clone)]
pub struct BoundEstimate {
    pub direction: Direction,
    pub value: f64,
    /// bootstrap standard deviation; zero until `bootstrap_widen` fills it
    pub sigma: f64,
    pub graph: Adjacency,
    /// seed that replays the estimate on `graph` exactly
    pub estimate_seed: u64,
    pub trace: Vec<RoundTrace>,
    pub feasible_samples: usize,
    pub attempted: usize,
}

/// Search one direction with the requested backend.
///
/// Every step samples a graph, estimates the query when the hard sample is
/// feasible (acyclic, all sure edges, no forbidden edges), takes a gradient
/// step on the loss, and anneals the temperature. The Lagrangian multiplier
/// updates once per round from the soft-matrix constraint value. Sure edges
/// are demoted to uncertain for the permutation backend, which enforces only
/// forbidden edges.
pub fn run_bound_search(
    data: &Dataset,
    knowledge: &EdgeKnowledge,
    query: &CausalQuery,
    method: SearchMethod,
    direction: Direction,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<BoundEstimate> {
    // a fully determined space needs no search
    if knowledge.uncertain_count() == 0 {
        let graph = knowledge.sure_graph();
        let estimate_seed = rng::derive_seed(seed, 1);
        let value = estimate_query_plain_with(&graph, data, query, &cfg.mlp, estimate_seed)?;
        return Ok(BoundEstimate {
            direction,
            value,
            sigma: 0.0,
            graph,
            estimate_seed,
            trace: Vec::new(),
            feasible_samples: 1,
            attempted: 1,
        });
    }
    match method {
        SearchMethod::Lagrangian => {
            run_lagrangian(data, knowledge, query, direction, cfg, seed)
        }
        SearchMethod::DpDag => run_dpdag(data, knowledge, query, direction, cfg, seed),
    }
}

struct BestTracker {
    direction: Direction,
    best: Option<(f64, Adjacency, u64)>,
}

impl BestTracker {
    fn new(direction: Direction) -> Self {
        BestTracker { direction, best: None }
    }

    fn offer(&mut self, value: f64, graph: &Adjacency, estimate_seed: u64) {
        let take = match &self.best {
            None => true,
            Some((incumbent, _, _)) => self.direction.improves(value, *incumbent),
        };
        if take {
            self.best = Some((value, graph.clone(), estimate_seed));
        }
    }

    fn value(&self) -> Option<f64> {
        self.best.as_ref().map(|(v, _, _)| *v)
    }
}

fn run_lagrangian(
    data: &Dataset,
    knowledge: &EdgeKnowledge,
    query: &CausalQuery,
    direction: Direction,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<BoundEstimate> {
    let d = knowledge.d();
    let rounds = cfg.rounds_for(d);
    let soft_terms = 2 * d;
    let mut params = ParamGraph::from_knowledge(knowledge);
    let free = params.free_slots().to_vec();
    let mut adam = Adam::new(free.len(), cfg.lr_lagrangian);
    let mut lag = LagrangianState::new(cfg);
    let mut rng = rng_from_seed(rng::derive_seed(seed, 0));
    let mut tracker = BestTracker::new(direction);
    let mut trace = Vec::with_capacity(rounds);
    let mut feasible_samples = 0usize;
    let mut attempted = 0usize;
    let mut global_step = 0u64;

    for round in 0..rounds {
        let mut h_soft_last = 0.0;
        let mut h_st_last = 0.0;
        for step in 0..cfg.steps_per_round {
            let tape = Tape::new();
            let (sample, logits) = params.sample(&tape, &mut rng);
            attempted += 1;
            global_step += 1;
            let estimate_seed = rng::derive_seed(seed, 1000 + global_step);

            let feasible = sample.hard.is_acyclic() && knowledge.admits(&sample.hard);
            let q_var = if feasible {
                let est = estimate_query_diff(
                    &tape,
                    &sample,
                    data,
                    query,
                    &cfg.mlp,
                    estimate_seed,
                )?;
                feasible_samples += 1;
                tracker.offer(est.value.item(), &sample.hard, estimate_seed);
                Some(est.value)
            } else {
                None
            };

            let (h_var, _s) = diff::acyclicity(sample.st, &cfg.acyclicity, soft_terms)?;
            h_st_last = h_var.item();
            let loss = match q_var {
                Some(q) => lagrangian_loss(q, h_var, &lag, direction),
                // cyclic hard sample: the query is undefined, so only the
                // constraint term drives this step
                None => lag.penalty(h_var),
            };
            if step == cfg.steps_per_round - 1 {
                let (h_soft, _) = diff::acyclicity(sample.soft, &cfg.acyclicity, soft_terms)?;
                h_soft_last = h_soft.item();
            }

            let grads = tape.backward(loss);
            let gmat = grads.wrt(logits);
            let gvec: Vec<f64> = free.iter().map(|&(i, j)| gmat[(i, j)]).collect();
            let mut pvec: Vec<f64> = free.iter().map(|&(i, j)| params.logit(i, j)).collect();
            adam.step(&mut pvec, &gvec);
            for (&(i, j), &v) in free.iter().zip(&pvec) {
                params.set_logit(i, j, v);
            }
            params.anneal();
        }
        lag.update(h_soft_last);
        trace.push(RoundTrace {
            round,
            best_q: tracker.value(),
            h_st: h_st_last,
            h_soft: h_soft_last,
            lambda: lag.lambda,
            tau_l: lag.tau_l,
        });
    }

    let (value, graph, estimate_seed) =
        tracker.best.ok_or(Error::NoFeasibleSample { attempted })?;
    Ok(BoundEstimate {
        direction,
        value,
        sigma: 0.0,
        graph,
        estimate_seed,
        trace,
        feasible_samples,
        attempted,
    })
}

fn run_dpdag(
    data: &Dataset,
    knowledge: &EdgeKnowledge,
    query: &CausalQuery,
    direction: Direction,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<BoundEstimate> {
    let d = knowledge.d();
    let rounds = cfg.rounds_for(d);
    let mut params = DpDagParams::from_knowledge(knowledge);
    let n_params = params.param_count();
    let mut adam = Adam::new(n_params, cfg.lr_dpdag);
    let mut rng = rng_from_seed(rng::derive_seed(seed, 0));
    let mut tracker = BestTracker::new(direction);
    let mut trace = Vec::with_capacity(rounds);
    let mut feasible_samples = 0usize;
    let mut attempted = 0usize;
    let mut global_step = 0u64;

    for round in 0..rounds {
        for _step in 0..cfg.steps_per_round {
            let tape = Tape::new();
            let (sample, leaves) = params.sample(&tape, &mut rng);
            attempted += 1;
            global_step += 1;
            let estimate_seed = rng::derive_seed(seed, 1000 + global_step);
            debug_assert!(sample.hard.is_acyclic());

            let est =
                estimate_query_diff(&tape, &sample, data, query, &cfg.mlp, estimate_seed)?;
            feasible_samples += 1;
            tracker.offer(est.value.item(), &sample.hard, estimate_seed);

            // acyclic by construction: the loss is the signed query alone
            let loss = est.value.scale(direction.sign());
            let grads = tape.backward(loss);
            let gs = grads.wrt(leaves.scores);
            let ge = grads.wrt(leaves.edges);
            let mut pvec: Vec<f64> = Vec::with_capacity(n_params);
            pvec.extend_from_slice(params.perm_scores_mut());
            pvec.extend_from_slice(params.edge_logits_mut());
            let mut gvec: Vec<f64> = Vec::with_capacity(n_params);
            gvec.extend_from_slice(gs.data());
            gvec.extend_from_slice(ge.data());
            adam.step(&mut pvec, &gvec);
            let (scores_part, edges_part) = pvec.split_at(d);
            params.perm_scores_mut().copy_from_slice(scores_part);
            params.edge_logits_mut().copy_from_slice(edges_part);
            params.anneal();
        }
        trace.push(RoundTrace {
            round,
            best_q: tracker.value(),
            h_st: 0.0,
            h_soft: 0.0,
            lambda: 0.0,
            tau_l: 0.0,
        });
    }

    let (value, graph, estimate_seed) =
        tracker.best.ok_or(Error::NoFeasibleSample { attempted })?;
    Ok(BoundEstimate {
        direction,
        value,
        sigma: 0.0,
        graph,
        estimate_seed,
        trace,
        feasible_samples,
        attempted,
    })
}

/// Bootstrap standard deviation of the estimate on the fixed argextremum
/// graph: `b` resamples of size N with replacement, re-estimated with the
/// same estimator family.
pub fn bootstrap_widen(
    data: &Dataset,
    graph: &Adjacency,
    query: &CausalQuery,
    b: usize,
    mlp_cfg: &MlpConfig,
    seed: u64,
) -> Result<f64> {
    use rand::RngExt;
    let n = data.n();
    let mut rng = rng_from_seed(seed);
    let mut estimates = Vec::with_capacity(b);
    for i in 0..b {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let resampled = data.resample(&rows);
        let est = estimate_query_plain_with(
            graph,
            &resampled,
            query,
            mlp_cfg,
            rng::derive_seed(seed, 10_000 + i as u64),
        )?;
        estimates.push(est);
    }
    let mean = estimates.iter().sum::<f64>() / b as f64;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
        / (b as f64 - 1.0);
    Ok(var.sqrt())
}

/// Which backend produced a `BoundsReport`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMethod {
    Lagrangian,
    DpDag,
    Brute,
}

impl BoundsMethod {
    pub fn parse(s: &str) -> Option<BoundsMethod> {
        match s {
            "lagrangian" => Some(BoundsMethod::Lagrangian),
            "dpdag" | "dp_dag" => Some(BoundsMethod::DpDag),
            "brute" | "brute_force" => Some(BoundsMethod::Brute),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoundsMethod::Lagrangian => "lagrangian",
            BoundsMethod::DpDag => "dpdag",
            BoundsMethod::Brute => "brute",
        }
    }
}

/// Full two-sided result with bootstrap widening, ready for serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub method: String,
    pub lower: f64,
    pub upper: f64,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub arg_lower: Vec<(usize, usize)>,
    pub arg_upper: Vec<(usize, usize)>,
    pub runtime_sec: f64,
    pub feasible_samples: usize,
    pub config_echo: serde_json::Value,
}

impl BoundsReport {
    /// The widened interval used for coverage checks.
    pub fn widened(&self) -> (f64, f64) {
        (self.lower - self.sigma_lower, self.upper + self.sigma_upper)
    }
}

/// Run both directions (or the exhaustive oracle), widen each end by one
/// bootstrap standard deviation, and time the whole thing.
pub fn compute_bounds(
    data: &Dataset,
    knowledge: &EdgeKnowledge,
    query: &CausalQuery,
    method: BoundsMethod,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<BoundsReport> {
    let started = std::time::Instant::now();
    let (lower, upper, arg_lower, arg_upper, feasible) = match method {
        BoundsMethod::Brute => {
            let pair = knowledge::brute_force_bounds(knowledge, data, query, seed)?;
            (pair.lower, pair.upper, pair.arg_lower, pair.arg_upper, pair.graphs as usize)
        }
        BoundsMethod::Lagrangian | BoundsMethod::DpDag => {
            let m = match method {
                BoundsMethod::Lagrangian => SearchMethod::Lagrangian,
                _ => SearchMethod::DpDag,
            };
            let lo = run_bound_search(
                data,
                knowledge,
                query,
                m,
                Direction::Min,
                cfg,
                rng::derive_seed(seed, 1),
            )?;
            let hi = run_bound_search(
                data,
                knowledge,
                query,
                m,
                Direction::Max,
                cfg,
                rng::derive_seed(seed, 2),
            )?;
            let (mut lo_v, mut hi_v) = (lo.value, hi.value);
            let (mut lo_g, mut hi_g) = (lo.graph, hi.graph);
            if lo_v > hi_v {
                // both runs explore feasible graphs only, so a crossed pair
                // just means each direction found the other's extremum
                log::warn!("direction runs crossed ({lo_v} > {hi_v}); swapping");
                std::mem::swap(&mut lo_v, &mut hi_v);
                std::mem::swap(&mut lo_g, &mut hi_g);
            }
            (lo_v, hi_v, lo_g, hi_g, lo.feasible_samples + hi.feasible_samples)
        }
    };
    let sigma_lower = bootstrap_widen(
        data,
        &arg_lower,
        query,
        cfg.bootstrap,
        &cfg.mlp,
        rng::derive_seed(seed, 3),
    )?;
    let sigma_upper = bootstrap_widen(
        data,
        &arg_upper,
        query,
        cfg.bootstrap,
        &cfg.mlp,
        rng::derive_seed(seed, 4),
    )?;
    Ok(BoundsReport {
        method: method.name().to_string(),
        lower,
        upper,
        sigma_lower,
        sigma_upper,
        arg_lower: arg_lower.edges().collect(),
        arg_upper: arg_upper.edges().collect(),
        runtime_sec: started.elapsed().as_secs_f64(),
        feasible_samples: feasible,
        config_echo: serde_json::json!({
            "method": method.name(),
            "seed": seed,
            "query": query,
            "search": cfg,
        }),
    })
}
