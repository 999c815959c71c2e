//! SVG curves and CSV tables for evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    AgeMae,
    IdSim,
}

impl Metric {
    fn file(self) -> &'static str {
        match self {
            Metric::AgeMae => "age_mae.svg",
            Metric::IdSim => "id_sim.svg",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::AgeMae => "Age MAE (years)",
            Metric::IdSim => "ID similarity",
        }
    }

    fn points(self, report: &EvalReport) -> Vec<(f64, f64)> {
        report
            .per_age
            .iter()
            .filter_map(|m| {
                let v = match self {
                    Metric::AgeMae => Some(m.age_mae),
                    Metric::IdSim => m.id_sim,
                };
                v.map(|v| (m.target_age, v))
            })
            .collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn render(metric: Metric, series: &[(&str, &EvalReport)]) -> String {
    let all: Vec<Vec<(f64, f64)>> = series.iter().map(|(_, r)| metric.points(r)).collect();
    let (x0, x1) = bounds(all.iter().flatten().map(|p| p.0));
    let (y0, y1) = bounds(all.iter().flatten().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{fx:.0}</text>"#,
            sx(fx),
            b + 14.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{fy:.2}</text>"#,
            l - 4.0,
            sy(fy) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">target age</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        metric.label()
    );
    for (k, ((name, _), pts)) in series.iter().zip(&all).enumerate() {
        let color = COLORS[k % COLORS.len()];
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"#,
            r - 90.0,
            t + 14.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Aggregate table, one row per (series, aggregate).
pub fn summary_csv(series: &[(&str, &EvalReport)]) -> String {
    let mut out = String::from("series,aggregate,age_mae,id_sim,age_count,id_count\n");
    for (name, r) in series {
        for a in &r.aggregates {
            let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                a.name,
                f(a.age_mae),
                f(a.id_sim),
                a.age_count,
                a.id_count
            );
        }
    }
    out
}

/// Overlays every series on shared axes. Writes `age_mae.svg`,
/// `id_sim.svg` and `summary.csv` under `out_dir` and returns their paths.
pub fn emit_comparison(series: &[(&str, &EvalReport)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for metric in [Metric::AgeMae, Metric::IdSim] {
        let p = out_dir.join(metric.file());
        fs::write(&p, render(metric, series)).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    let p = out_dir.join("summary.csv");
    fs::write(&p, summary_csv(series)).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}

pub fn emit_plots(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    emit_comparison(&[("model", report)], out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{aggregate, AgeMetrics, Task};

    fn report(values: &[(f64, f64, Option<f64>)]) -> EvalReport {
        let per_age: Vec<AgeMetrics> = values
            .iter()
            .map(|&(a, mae, id)| AgeMetrics {
                target_age: a,
                age_mae: mae,
                id_sim: id,
                reference_count: 1,
                reference_window: 3,
            })
            .collect();
        EvalReport {
            task: Task::Regression,
            input_count: 1,
            aggregates: vec![aggregate("overall", &per_age, None)],
            per_age,
            undefined_ages: vec![],
            config_hash: None,
            seed: None,
        }
    }

    #[test]
    fn single_point_curves_exist() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(&[(70.0, 1.5, Some(0.9))]);
        let files = emit_plots(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let svg = fs::read_to_string(dir.path().join("id_sim.svg")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn overlay_has_one_curve_per_series() {
        let dir = tempfile::tempdir().unwrap();
        let a = report(&[(0.0, 3.0, Some(0.5)), (10.0, 2.0, Some(0.6))]);
        let b = report(&[(0.0, 4.0, Some(0.4)), (10.0, 1.0, None)]);
        emit_comparison(&[("sam", &a), ("ours <full>", &b)], dir.path()).unwrap();
        let mae = fs::read_to_string(dir.path().join("age_mae.svg")).unwrap();
        assert_eq!(mae.matches("<polyline").count(), 2);
        assert!(mae.contains("ours &lt;full&gt;"));
        let id = fs::read_to_string(dir.path().join("id_sim.svg")).unwrap();
        assert_eq!(id.matches("<polyline").count(), 1);
        assert_eq!(id.matches("<circle").count(), 3);
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("sam,overall,2.5,0.55,2,2"));
    }
}
