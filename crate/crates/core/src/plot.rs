//! Deterministic SVG summaries of grid rows, plus the plotted table as CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{summarize, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// runtime (seconds) against compatible-graph count, log-x, one series
    /// per method
    RuntimeVsSpace,
    /// mean point and bound coverage per method
    CoverageBars,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<PlotKind> {
        match s {
            "runtime_vs_space" | "runtime-vs-space" => Some(PlotKind::RuntimeVsSpace),
            "coverage_bars" | "coverage-bars" => Some(PlotKind::CoverageBars),
            _ => None,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

fn palette(i: usize) -> &'static str {
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    COLORS[i % COLORS.len()]
}

fn svg_header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"11\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    )
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = write!(
        s,
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{:.2}\" transform=\"rotate(-90 16 {:.2})\" text-anchor=\"middle\">{y_label}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
    );
}

/// Write `kind` for `rows` as SVG; a CSV of the plotted table lands next to
/// it with an extra `.csv` suffix.
pub fn emit_plot(rows: &[MetricsRow], kind: PlotKind, out_svg: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no rows to plot".into()));
    }
    let out_svg = out_svg.as_ref();
    let (svg, table) = match kind {
        PlotKind::RuntimeVsSpace => runtime_plot(rows)?,
        PlotKind::CoverageBars => coverage_plot(rows),
    };
    std::fs::write(out_svg, svg)?;
    let mut csv_path = out_svg.as_os_str().to_owned();
    csv_path.push(".csv");
    std::fs::write(csv_path, table)?;
    Ok(())
}

fn runtime_plot(rows: &[MetricsRow]) -> Result<(String, String)> {
    // points per method, sorted by space size for deterministic output
    use std::collections::BTreeMap;
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let (Some(graphs), Some(rt), None) = (r.compatible_graphs, r.runtime_sec, &r.error) {
            if graphs > 0 {
                series.entry(r.method.as_str()).or_default().push((graphs as f64, rt));
            }
        }
    }
    if series.is_empty() {
        return Err(Error::EmptyInput("no rows with both space size and runtime".into()));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    let log10 = |v: f64| v.log10();
    let all: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    let x_min = all.iter().map(|p| log10(p.0)).fold(f64::INFINITY, f64::min).floor();
    let x_max = (all.iter().map(|p| log10(p.0)).fold(f64::NEG_INFINITY, f64::max).ceil())
        .max(x_min + 1.0);
    let y_max_raw = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let y_max = if y_max_raw > 0.0 { y_max_raw * 1.1 } else { 1.0 };

    let px = |lx: f64| MARGIN_L + (lx - x_min) / (x_max - x_min) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |v: f64| (HEIGHT - MARGIN_B) - v / y_max * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut s = svg_header();
    axes(&mut s, "compatible graphs (log scale)", "runtime [s]");
    // x ticks at powers of ten
    let mut tick = x_min;
    while tick <= x_max + 1e-9 {
        let x = px(tick);
        let _ = write!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#cccccc\"/>\n\
             <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">1e{tick:.0}</text>\n",
            HEIGHT - MARGIN_B,
            MARGIN_T,
            HEIGHT - MARGIN_B + 16.0
        );
        tick += 1.0;
    }
    // y ticks
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = y_max * frac;
        let y = py(v);
        let _ = write!(
            s,
            "<text x=\"{:.2}\" y=\"{y:.2}\" text-anchor=\"end\">{v:.3}</text>\n",
            MARGIN_L - 6.0
        );
    }

    let mut table = String::from("method,compatible_graphs,runtime_sec\n");
    for (si, (method, pts)) in series.iter().enumerate() {
        let color = palette(si);
        let path: Vec<String> =
            pts.iter().map(|&(g, rt)| format!("{:.2},{:.2}", px(log10(g)), py(rt))).collect();
        let _ = write!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        );
        for &(g, rt) in pts {
            let _ = write!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                px(log10(g)),
                py(rt)
            );
            let _ = writeln!(table, "{method},{g:.0},{rt:.6}");
        }
        let ly = MARGIN_T + 14.0 * si as f64;
        let _ = write!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\">{method}</text>\n",
            WIDTH - MARGIN_R + 10.0,
            ly,
            WIDTH - MARGIN_R + 24.0,
            ly + 9.0
        );
    }
    s.push_str("</svg>\n");
    Ok((s, table))
}

fn coverage_plot(rows: &[MetricsRow]) -> (String, String) {
    let summary = summarize(rows);
    let mut s = svg_header();
    axes(&mut s, "method", "coverage");
    let n = summary.len().max(1);
    let span = WIDTH - MARGIN_L - MARGIN_R;
    let group = span / n as f64;
    let bar = (group * 0.35).min(48.0);
    let py = |v: f64| (HEIGHT - MARGIN_B) - v * (HEIGHT - MARGIN_T - MARGIN_B);
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = py(frac);
        let _ = write!(
            s,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{:.2}\" y=\"{y:.2}\" text-anchor=\"end\">{frac:.2}</text>\n",
            MARGIN_L,
            WIDTH - MARGIN_R,
            MARGIN_L - 6.0
        );
    }
    let mut table = String::from("method,point_coverage,bound_coverage\n");
    for (i, m) in summary.iter().enumerate() {
        let cx = MARGIN_L + group * (i as f64 + 0.5);
        let pc = if m.point_coverage_mean.is_finite() { m.point_coverage_mean } else { 0.0 };
        let bc = if m.bound_coverage_mean.is_finite() { m.bound_coverage_mean } else { 0.0 };
        let _ = write!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n\
             <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{}\" opacity=\"0.55\"/>\n\
             <text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            cx - bar,
            py(pc),
            py(0.0) - py(pc),
            palette(i),
            cx,
            py(bc),
            py(0.0) - py(bc),
            palette(i),
            HEIGHT - MARGIN_B + 16.0,
            m.method,
        );
        let _ = writeln!(table, "{},{:.6},{:.6}", m.method, pc, bc);
    }
    let _ = write!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\">solid: point, faded: bound</text>\n",
        WIDTH - MARGIN_R + 4.0,
        MARGIN_T + 10.0
    );
    s.push_str("</svg>\n");
    (s, table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runtime_row(method: &str, graphs: u64, rt: f64) -> MetricsRow {
        let mut r = crate::metrics::MetricsRow {
            cell_id: 0,
            method: method.into(),
            nodes: 5,
            edge_prob: 0.5,
            mechanism: "linear".into(),
            p_sure: Some(0.5),
            p_forbidden: Some(0.5),
            n_perms: None,
            adjustment: "parent".into(),
            seed: 0,
            treatment: 0,
            outcome: 1,
            uncertain_slots: Some(4),
            compatible_graphs: Some(graphs),
            truth: Some(0.2),
            true_lower: Some(0.1),
            true_upper: Some(0.4),
            est_lower: Some(0.1),
            est_upper: Some(0.4),
            sigma_lower: Some(0.01),
            sigma_upper: Some(0.01),
            point_coverage: Some(1),
            bound_coverage: Some(1.0),
            bound_narrowness: Some(1.2),
            runtime_sec: Some(rt),
            feasible_samples: Some(10),
            error: None,
        };
        r.runtime_sec = Some(rt);
        r
    }

    #[test]
    fn single_point_produces_valid_svg() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("one.svg");
        emit_plot(&[runtime_row("brute", 12, 0.5)], PlotKind::RuntimeVsSpace, &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<circle"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(out.with_extension("svg.csv").exists());
    }

    #[test]
    fn output_is_byte_identical_across_runs() {
        let rows = vec![
            runtime_row("brute", 10, 0.2),
            runtime_row("brute", 1000, 2.5),
            runtime_row("lagrangian", 10, 0.4),
            runtime_row("lagrangian", 1000, 0.45),
        ];
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        emit_plot(&rows, PlotKind::RuntimeVsSpace, &a).unwrap();
        emit_plot(&rows, PlotKind::RuntimeVsSpace, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        emit_plot(&rows, PlotKind::CoverageBars, &a).unwrap();
        emit_plot(&rows, PlotKind::CoverageBars, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.svg");
        assert!(emit_plot(&[], PlotKind::RuntimeVsSpace, &out).is_err());
    }
}
