//! Adjustment-based causal query estimation.
//!
//! The linear path reads the effect off the treatment coefficient of a
//! single least-squares regression; the nonlinear path fits a small MLP,
//! freezes it, and averages the interventional contrast over the observed
//! adjustment rows. Both are differentiable through a gradient-preserving
//! column mask so the optimizer can backpropagate into edge logits.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diff::{Adam, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{self, Adjacency, NodeSet};
use crate::linalg::{self, Mat};
use crate::rng::{self, rng_from_seed};
use crate::sampling::GraphSample;
use crate::synthetic::{MechanismKind, Scm};
use rand::RngExt;

/// Ridge added to the normal equations when the design is numerically
/// singular.
pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentKind {
    Parent,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Linear,
    Nonlinear,
}

/// A single-intervention expectation contrast: the effect of moving the
/// treatment from `level_low` to `level_high` on the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalQuery {
    pub treatment: usize,
    pub outcome: usize,
    pub level_high: f64,
    pub level_low: f64,
    pub adjustment: AdjustmentKind,
    pub estimator: EstimatorKind,
}

impl CausalQuery {
    pub fn new(treatment: usize, outcome: usize) -> Self {
        assert_ne!(treatment, outcome);
        CausalQuery {
            treatment,
            outcome,
            level_high: 1.0,
            level_low: 0.0,
            adjustment: AdjustmentKind::Parent,
            estimator: EstimatorKind::Linear,
        }
    }

    pub fn with_adjustment(mut self, a: AdjustmentKind) -> Self {
        self.adjustment = a;
        self
    }

    pub fn with_estimator(mut self, e: EstimatorKind) -> Self {
        self.estimator = e;
        self
    }
}

/// The adjustment set used for estimation; never contains the treatment or
/// the outcome.
pub fn adjustment_set(adj: &Adjacency, q: &CausalQuery) -> NodeSet {
    let mut z = match q.adjustment {
        AdjustmentKind::Parent => graph::parent_adjustment(adj, q.treatment),
        AdjustmentKind::Optimal => graph::optimal_adjustment(adj, q.treatment, q.outcome),
    };
    z.remove(&q.treatment);
    z.remove(&q.outcome);
    z
}

/// Scale column `j` of the data by `mask[0, j]`, keeping the gradient path
/// into the mask open. Hard selection happens upstream through the mask's
/// straight-through values.
pub fn select_columns_differentiable<'t>(data: Var<'t>, mask: Var<'t>) -> Var<'t> {
    data.scale_columns(mask)
}

fn design_matrix(data: &Dataset, treatment: usize, z: &[usize]) -> Mat {
    let n = data.n();
    let mut m = Mat::zeros(n, 2 + z.len());
    for r in 0..n {
        m[(r, 0)] = 1.0;
        m[(r, 1)] = data.get(r, treatment);
        for (t, &c) in z.iter().enumerate() {
            m[(r, 2 + t)] = data.get(r, c);
        }
    }
    m
}

/// Closed-form least squares; returns the treatment coefficient and whether
/// the ridge fallback fired.
pub fn ols_coefficient_plain(
    data: &Dataset,
    treatment: usize,
    z: &[usize],
    outcome: usize,
) -> Result<(f64, bool)> {
    let x = design_matrix(data, treatment, z);
    let y = Mat::from_vec(data.n(), 1, data.column(outcome));
    let xt = x.transpose();
    let xtx = xt.matmul(&x);
    let xty = xt.matmul(&y);
    match linalg::solve(&xtx, &xty) {
        Ok(beta) => Ok((beta[(1, 0)], false)),
        Err(Error::Singular) => {
            let mut ridged = xtx;
            for i in 0..ridged.rows() {
                ridged[(i, i)] += RIDGE;
            }
            let beta = linalg::solve(&ridged, &xty)?;
            Ok((beta[(1, 0)], true))
        }
        Err(e) => Err(e),
    }
}

/// Differentiable treatment coefficient from the normal equations.
pub struct OlsEffect<'t> {
    pub coef: Var<'t>,
    pub ridged: bool,
}

/// Regress the outcome on `[1, x, masked Z]` and return the coefficient of
/// `x`, differentiable through the solve and the column mask.
///
/// `z_mask` must be a `1 x z.len()` row whose forward values are 1 (the
/// straight-through composites of the selected edges).
pub fn ols_effect<'t>(
    tape: &'t Tape,
    data: &Dataset,
    q: &CausalQuery,
    z: &[usize],
    z_mask: Option<Var<'t>>,
) -> Result<OlsEffect<'t>> {
    let design = tape.constant(design_matrix(data, q.treatment, z));
    let x = match z_mask {
        Some(mask) => {
            assert_eq!(mask.shape(), (1, z.len()));
            let full = tape.constant(Mat::filled(1, 2, 1.0)).concat_row(mask);
            select_columns_differentiable(design, full)
        }
        None => design,
    };
    let y = tape.constant(Mat::from_vec(data.n(), 1, data.column(q.outcome)));
    let xt = x.t();
    let xtx = xt.matmul(x);
    let xty = xt.matmul(y);
    match xtx.solve(xty) {
        Ok(beta) => Ok(OlsEffect { coef: beta.entry(1, 0), ridged: false }),
        Err(Error::Singular) => {
            let eye = tape.constant(Mat::eye(2 + z.len()).map(|v| v * RIDGE));
            let beta = xtx.add(eye).solve(xty)?;
            Ok(OlsEffect { coef: beta.entry(1, 0), ridged: true })
        }
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// MLP regressor

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// stop when relative loss improvement over this many epochs falls
    /// below `plateau_tol`
    pub plateau_window: usize,
    pub plateau_tol: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 32, lr: 0.05, max_epochs: 1000, plateau_window: 25, plateau_tol: 1e-5 }
    }
}

/// One-hidden-layer tanh regressor, trained with full-batch Adam.
#[derive(Debug, Clone)]
pub struct Mlp {
    w1: Mat, // in x h
    b1: Mat, // 1 x h
    w2: Mat, // h x 1
    b2: Mat, // 1 x 1
}

impl Mlp {
    /// Fit on `inputs -> targets`; aborts with a diagnostic error when the
    /// loss leaves the reals.
    pub fn fit(inputs: &Mat, targets: &[f64], cfg: &MlpConfig, seed: u64) -> Result<Mlp> {
        let n = inputs.rows();
        let d_in = inputs.cols();
        let h = cfg.hidden;
        assert_eq!(targets.len(), n);
        let mut rng = rng_from_seed(seed);
        let lim1 = 1.0 / (d_in as f64).sqrt();
        let lim2 = 1.0 / (h as f64).sqrt();
        let mut w1 = Mat::zeros(d_in, h);
        for v in w1.data_mut() {
            *v = rng.random_range(-lim1..lim1);
        }
        let mut b1 = Mat::zeros(1, h);
        let mut w2 = Mat::zeros(h, 1);
        for v in w2.data_mut() {
            *v = rng.random_range(-lim2..lim2);
        }
        let mut b2 = Mat::zeros(1, 1);

        let n_params = d_in * h + h + h + 1;
        let mut adam = Adam::new(n_params, cfg.lr);
        let mut params = vec![0.0; n_params];
        let mut grads = vec![0.0; n_params];
        let mut best_loss = f64::INFINITY;
        let mut best_epoch = 0usize;
        let mut best_net: Option<Mlp> = None;

        let y = Mat::from_vec(n, 1, targets.to_vec());
        for epoch in 0..cfg.max_epochs {
            // forward
            let mut hmat = inputs.matmul(&w1);
            for i in 0..n {
                for j in 0..h {
                    hmat[(i, j)] = (hmat[(i, j)] + b1[(0, j)]).tanh();
                }
            }
            let mut pred = hmat.matmul(&w2);
            for i in 0..n {
                pred[(i, 0)] += b2[(0, 0)];
            }
            let mut loss = 0.0;
            let mut dpred = Mat::zeros(n, 1);
            for i in 0..n {
                let e = pred[(i, 0)] - y[(i, 0)];
                loss += e * e;
                dpred[(i, 0)] = 2.0 * e / n as f64;
            }
            loss /= n as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if loss < best_loss * (1.0 - cfg.plateau_tol) {
                best_loss = loss;
                best_epoch = epoch;
                best_net = Some(Mlp {
                    w1: w1.clone(),
                    b1: b1.clone(),
                    w2: w2.clone(),
                    b2: b2.clone(),
                });
            }

            // backward
            let gw2 = hmat.transpose().matmul(&dpred);
            let gb2 = dpred.sum();
            let dh = dpred.matmul(&w2.transpose());
            let mut dz = Mat::zeros(n, h);
            for i in 0..n {
                for j in 0..h {
                    let t = hmat[(i, j)];
                    dz[(i, j)] = dh[(i, j)] * (1.0 - t * t);
                }
            }
            let gw1 = inputs.transpose().matmul(&dz);
            let mut gb1 = Mat::zeros(1, h);
            for i in 0..n {
                for j in 0..h {
                    gb1[(0, j)] += dz[(i, j)];
                }
            }

            // flatten, step, unflatten
            let mut k = 0;
            for v in w1.data().iter().chain(b1.data()).chain(w2.data()).chain(b2.data()) {
                params[k] = *v;
                k += 1;
            }
            k = 0;
            for g in gw1.data().iter().chain(gb1.data()).chain(gw2.data()).chain([gb2].iter()) {
                grads[k] = *g;
                k += 1;
            }
            adam.step(&mut params, &grads);
            k = 0;
            for v in w1
                .data_mut()
                .iter_mut()
                .chain(b1.data_mut())
                .chain(w2.data_mut())
                .chain(b2.data_mut())
            {
                *v = params[k];
                k += 1;
            }

            // plateau rule: no relative improvement for a full window
            if epoch - best_epoch >= cfg.plateau_window {
                break;
            }
        }
        Ok(best_net.unwrap_or(Mlp { w1, b1, w2, b2 }))
    }

    /// Plain forward pass.
    pub fn predict(&self, inputs: &Mat) -> Vec<f64> {
        let n = inputs.rows();
        let h = self.w1.cols();
        let mut hmat = inputs.matmul(&self.w1);
        for i in 0..n {
            for j in 0..h {
                hmat[(i, j)] = (hmat[(i, j)] + self.b1[(0, j)]).tanh();
            }
        }
        let mut pred = hmat.matmul(&self.w2);
        for i in 0..n {
            pred[(i, 0)] += self.b2[(0, 0)];
        }
        pred.data().to_vec()
    }

    /// Frozen forward pass on a tape: weights enter as constants, the mask
    /// keeps the gradient path into the adjustment columns open.
    fn predict_on_tape<'t>(&self, tape: &'t Tape, inputs: Var<'t>) -> Var<'t> {
        let w1 = tape.constant(self.w1.clone());
        let b1 = tape.constant(self.b1.clone());
        let w2 = tape.constant(self.w2.clone());
        let b2 = tape.constant(self.b2.clone());
        inputs
            .matmul(w1)
            .add_row_broadcast(b1)
            .tanh()
            .matmul(w2)
            .add_row_broadcast(b2)
    }
}

fn mlp_inputs(data: &Dataset, treatment_level: Option<f64>, treatment: usize, z: &[usize]) -> Mat {
    let n = data.n();
    let mut m = Mat::zeros(n, 1 + z.len());
    for r in 0..n {
        m[(r, 0)] = match treatment_level {
            Some(level) => level,
            None => data.get(r, treatment),
        };
        for (t, &c) in z.iter().enumerate() {
            m[(r, 1 + t)] = data.get(r, c);
        }
    }
    m
}

/// Fit an MLP of the outcome on `[x, Z]`, freeze it, and average the
/// `do(high) - do(low)` contrast over the observed adjustment rows.
pub fn mlp_ate_plain(
    data: &Dataset,
    q: &CausalQuery,
    z: &[usize],
    cfg: &MlpConfig,
    seed: u64,
) -> Result<f64> {
    let net = Mlp::fit(
        &mlp_inputs(data, None, q.treatment, z),
        &data.column(q.outcome),
        cfg,
        seed,
    )?;
    let hi = net.predict(&mlp_inputs(data, Some(q.level_high), q.treatment, z));
    let lo = net.predict(&mlp_inputs(data, Some(q.level_low), q.treatment, z));
    let n = hi.len() as f64;
    Ok(hi.iter().zip(&lo).map(|(a, b)| a - b).sum::<f64>() / n)
}

/// Differentiable version: the frozen network is evaluated on masked
/// adjustment columns, so gradients reach `z_mask`.
pub fn mlp_ate<'t>(
    tape: &'t Tape,
    data: &Dataset,
    q: &CausalQuery,
    z: &[usize],
    z_mask: Option<Var<'t>>,
    cfg: &MlpConfig,
    seed: u64,
) -> Result<Var<'t>> {
    let net = Mlp::fit(
        &mlp_inputs(data, None, q.treatment, z),
        &data.column(q.outcome),
        cfg,
        seed,
    )?;
    let mask_full = z_mask.map(|mask| {
        assert_eq!(mask.shape(), (1, z.len()));
        tape.constant(Mat::filled(1, 1, 1.0)).concat_row(mask)
    });
    let contrast = |level: f64| {
        let design = tape.constant(mlp_inputs(data, Some(level), q.treatment, z));
        let x = match mask_full {
            Some(m) => select_columns_differentiable(design, m),
            None => design,
        };
        net.predict_on_tape(tape, x).mean()
    };
    let hi = contrast(q.level_high);
    let lo = contrast(q.level_low);
    Ok(hi.sub(lo))
}

// ---------------------------------------------------------------------------
// query dispatch

/// Non-differentiable estimate on a fixed graph (used by the brute-force
/// oracle, bootstrap re-estimation, and grid truth columns).
pub fn estimate_query_plain(
    adj: &Adjacency,
    data: &Dataset,
    q: &CausalQuery,
    seed: u64,
) -> Result<f64> {
    estimate_query_plain_with(adj, data, q, &MlpConfig::default(), seed)
}

pub fn estimate_query_plain_with(
    adj: &Adjacency,
    data: &Dataset,
    q: &CausalQuery,
    mlp_cfg: &MlpConfig,
    seed: u64,
) -> Result<f64> {
    if !adj.is_acyclic() {
        return Err(Error::CyclicSample);
    }
    let z: Vec<usize> = adjustment_set(adj, q).into_iter().collect();
    let scale = q.level_high - q.level_low;
    match q.estimator {
        EstimatorKind::Linear => {
            let (coef, _) = ols_coefficient_plain(data, q.treatment, &z, q.outcome)?;
            Ok(coef * scale)
        }
        EstimatorKind::Nonlinear => mlp_ate_plain(data, q, &z, mlp_cfg, seed),
    }
}

/// Differentiable estimate on a sampled graph.
pub struct DiffEstimate<'t> {
    pub value: Var<'t>,
    pub ridged: bool,
    pub adjustment: Vec<usize>,
}

/// Build the gradient-preserving mask for the adjustment set from the
/// straight-through adjacency entries.
///
/// Parent adjustment gathers the `(z, treatment)` entries. Optimal
/// adjustment averages each adjustment node's edge activations into its
/// children on the causal path (equal contributions when there are several).
fn adjustment_mask<'t>(
    sample: &GraphSample<'t>,
    q: &CausalQuery,
    z: &[usize],
) -> Option<Var<'t>> {
    if z.is_empty() {
        return None;
    }
    let hard = &sample.hard;
    let cn = graph::causal_nodes(hard, q.treatment, q.outcome);
    let use_parent_edges = q.adjustment == AdjustmentKind::Parent || cn.is_empty();
    if use_parent_edges {
        let pairs: Vec<(usize, usize)> = z.iter().map(|&p| (p, q.treatment)).collect();
        return Some(sample.st.gather_entries(&pairs));
    }
    let mut mask: Option<Var<'t>> = None;
    for &w in z {
        let kids: Vec<(usize, usize)> = hard
            .children(w)
            .into_iter()
            .filter(|c| cn.contains(c))
            .map(|c| (w, c))
            .collect();
        debug_assert!(!kids.is_empty(), "optimal-adjustment node without causal children");
        let entry = sample.st.gather_entries(&kids).mean(); // 1 x 1
        mask = Some(match mask {
            None => entry,
            Some(m) => m.concat_row(entry),
        });
    }
    mask
}

pub fn estimate_query_diff<'t>(
    tape: &'t Tape,
    sample: &GraphSample<'t>,
    data: &Dataset,
    q: &CausalQuery,
    mlp_cfg: &MlpConfig,
    seed: u64,
) -> Result<DiffEstimate<'t>> {
    if !sample.hard.is_acyclic() {
        return Err(Error::CyclicSample);
    }
    let z: Vec<usize> = adjustment_set(&sample.hard, q).into_iter().collect();
    let mask = adjustment_mask(sample, q, &z);
    let scale = q.level_high - q.level_low;
    match q.estimator {
        EstimatorKind::Linear => {
            let ols = ols_effect(tape, data, q, &z, mask)?;
            Ok(DiffEstimate { value: ols.coef.scale(scale), ridged: ols.ridged, adjustment: z })
        }
        EstimatorKind::Nonlinear => {
            let value = mlp_ate(tape, data, q, &z, mask, mlp_cfg, seed)?;
            Ok(DiffEstimate { value, ridged: false, adjustment: z })
        }
    }
}

/// Ground-truth effect from a known SCM: exact path products for linear
/// mechanisms, Monte Carlo interventional contrast otherwise.
pub fn ground_truth_ate(scm: &Scm, q: &CausalQuery) -> f64 {
    ground_truth_ate_with(scm, q, 100_000, 0xA7E0)
}

pub fn ground_truth_ate_with(scm: &Scm, q: &CausalQuery, sims: usize, seed: u64) -> f64 {
    let scale = q.level_high - q.level_low;
    match scm.kind {
        MechanismKind::LinearAdditive => {
            scm.linear_total_effect(q.treatment, q.outcome) * scale
        }
        _ => {
            let hi = scm.interventional_mean(
                q.treatment,
                q.level_high,
                q.outcome,
                sims,
                rng::derive_seed(seed, 1),
            );
            let lo = scm.interventional_mean(
                q.treatment,
                q.level_low,
                q.outcome,
                sims,
                rng::derive_seed(seed, 2),
            );
            hi - lo
        }
    }
}
