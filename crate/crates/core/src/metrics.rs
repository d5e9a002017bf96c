//! Evaluation metrics for estimated against ground-truth bounds, and the
//! per-run result row the grid writes.

use serde::{Deserialize, Serialize};

/// 1 iff the truth lies in the bootstrap-widened interval (closed at both
/// ends).
pub fn point_coverage(
    est_lower: f64,
    sigma_lower: f64,
    est_upper: f64,
    sigma_upper: f64,
    truth: f64,
) -> u8 {
    (est_lower - sigma_lower <= truth && truth <= est_upper + sigma_upper) as u8
}

fn intersection_length(al: f64, au: f64, bl: f64, bu: f64) -> f64 {
    (au.min(bu) - al.max(bl)).max(0.0)
}

/// Length of the overlap divided by the length of the true interval.
/// A degenerate true interval scores 1 when the point is covered, else 0.
pub fn bound_coverage(true_l: f64, true_u: f64, est_l: f64, est_u: f64) -> f64 {
    assert!(true_l <= true_u && est_l <= est_u);
    if true_u == true_l {
        return ((est_l..=est_u).contains(&true_l)) as u8 as f64;
    }
    intersection_length(true_l, true_u, est_l, est_u) / (true_u - true_l)
}

/// How much wider the estimated interval is than its overlap with the true
/// one, floored at 1. `None` when the intervals do not overlap on a set of
/// positive length; such rows are excluded from aggregate means and counted
/// separately.
pub fn bound_narrowness(true_l: f64, true_u: f64, est_l: f64, est_u: f64) -> Option<f64> {
    assert!(true_l <= true_u && est_l <= est_u);
    let overlap = intersection_length(true_l, true_u, est_l, est_u);
    if overlap <= 0.0 {
        return None;
    }
    Some(((est_u - est_l) / overlap).max(1.0))
}

/// One method on one grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell_id: u64,
    pub method: String,
    pub nodes: usize,
    pub edge_prob: f64,
    pub mechanism: String,
    pub p_sure: Option<f64>,
    pub p_forbidden: Option<f64>,
    pub n_perms: Option<usize>,
    pub adjustment: String,
    pub seed: u64,
    pub treatment: usize,
    pub outcome: usize,
    pub uncertain_slots: Option<usize>,
    pub compatible_graphs: Option<u64>,
    pub truth: Option<f64>,
    pub true_lower: Option<f64>,
    pub true_upper: Option<f64>,
    pub est_lower: Option<f64>,
    pub est_upper: Option<f64>,
    pub sigma_lower: Option<f64>,
    pub sigma_upper: Option<f64>,
    pub point_coverage: Option<u8>,
    pub bound_coverage: Option<f64>,
    pub bound_narrowness: Option<f64>,
    pub runtime_sec: Option<f64>,
    pub feasible_samples: Option<usize>,
    pub error: Option<String>,
}

/// Aggregates of one method's rows: means with standard errors, plus the
/// undefined-narrowness count kept out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub rows: usize,
    pub errors: usize,
    pub point_coverage_mean: f64,
    pub point_coverage_se: f64,
    pub bound_coverage_mean: f64,
    pub bound_coverage_se: f64,
    pub narrowness_mean: f64,
    pub narrowness_se: f64,
    pub narrowness_undefined: usize,
    pub runtime_median_sec: f64,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(values: &mut Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Summarize rows per method, skipping error rows from the metric means.
pub fn summarize(rows: &[MetricsRow]) -> Vec<MethodSummary> {
    use std::collections::BTreeMap;
    let mut by_method: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method, rows)| {
            let ok: Vec<&&MetricsRow> = rows.iter().filter(|r| r.error.is_none()).collect();
            let pc: Vec<f64> =
                ok.iter().filter_map(|r| r.point_coverage).map(f64::from).collect();
            let bc: Vec<f64> = ok.iter().filter_map(|r| r.bound_coverage).collect();
            let bn: Vec<f64> = ok.iter().filter_map(|r| r.bound_narrowness).collect();
            let undefined = ok
                .iter()
                .filter(|r| {
                    r.bound_narrowness.is_none()
                        && r.true_lower.is_some()
                        && r.est_lower.is_some()
                })
                .count();
            let mut rt: Vec<f64> = ok.iter().filter_map(|r| r.runtime_sec).collect();
            let (pm, pse) = mean_se(&pc);
            let (bm, bse) = mean_se(&bc);
            let (nm, nse) = mean_se(&bn);
            MethodSummary {
                method: method.to_string(),
                rows: rows.len(),
                errors: rows.len() - ok.len(),
                point_coverage_mean: pm,
                point_coverage_se: pse,
                bound_coverage_mean: bm,
                bound_coverage_se: bse,
                narrowness_mean: nm,
                narrowness_se: nse,
                narrowness_undefined: undefined,
                runtime_median_sec: median(&mut rt),
            }
        })
        .collect()
}
