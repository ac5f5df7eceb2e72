//! Rendering: evaluation reports as JSON and aligned text tables, training
//! logs as line-delimited JSON, and a dependency-free SVG loss curve.

use std::io::Write;
use std::path::Path;

use serde_json::json;
use tstnet_core::metrics::EvalReport;

use crate::trainer::EpochStats;

pub fn report_to_json(report: &EvalReport) -> serde_json::Value {
    let mut recall = serde_json::Map::new();
    for (i, n) in report.top_ns.iter().enumerate() {
        let mut row = serde_json::Map::new();
        for (j, mu) in report.thresholds.iter().enumerate() {
            row.insert(format!("{mu}"), json!(report.recall[i][j]));
        }
        recall.insert(format!("{n}"), serde_json::Value::Object(row));
    }
    json!({
        "episodes": report.episodes,
        "recall": recall,
        "miou": report.miou,
    })
}

/// Aligned table with one row per top-n, mirroring the usual benchmark
/// layout (R@1 at IoU 0.3/0.5/0.7 plus mIoU).
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let header: Vec<String> =
        report.thresholds.iter().map(|mu| format!("IoU={mu}")).collect();
    out.push_str(&format!("{:<8}", ""));
    for h in &header {
        out.push_str(&format!("{h:>10}"));
    }
    out.push_str(&format!("{:>10}\n", "mIoU"));
    for (i, n) in report.top_ns.iter().enumerate() {
        out.push_str(&format!("{:<8}", format!("R@{n}")));
        for v in &report.recall[i] {
            out.push_str(&format!("{:>10.4}", v));
        }
        if i == 0 {
            out.push_str(&format!("{:>10.4}", report.miou));
        }
        out.push('\n');
    }
    out
}

pub fn write_log_line(mut w: impl Write, stats: &EpochStats) -> std::io::Result<()> {
    let line = serde_json::to_string(stats).expect("stats serialize");
    writeln!(w, "{line}")
}

pub fn read_log(path: &Path) -> anyhow::Result<Vec<EpochStats>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let stats: EpochStats = serde_json::from_str(line)
            .map_err(|e| anyhow::anyhow!("log line {}: {e}", i + 1))?;
        out.push(stats);
    }
    anyhow::ensure!(!out.is_empty(), "log {} holds no epochs", path.display());
    Ok(out)
}

/// Loss curve as a standalone SVG (no plotting dependency).
pub fn loss_curve_svg(history: &[EpochStats]) -> String {
    let (w, h, pad) = (640.0f64, 360.0f64, 42.0f64);
    let losses: Vec<f64> = history.iter().map(|s| s.loss).collect();
    let max = losses.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    let min = losses.iter().cloned().fold(f64::MAX, f64::min).min(max);
    let span = (max - min).max(1e-12);
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (losses.len().max(2) - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - min) / span;
    let points: Vec<String> =
        losses.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))).collect();
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            r#"<line x1="{pad}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black"/>"#,
            r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{yb}" stroke="black"/>"#,
            r#"<text x="{pad}" y="20" font-family="monospace" font-size="13">training loss (min {min:.4}, max {max:.4}, {n} epochs)</text>"#,
            r##"<polyline fill="none" stroke="#1f6fb2" stroke-width="1.5" points="{pts}"/>"##,
            "</svg>\n"
        ),
        w = w,
        h = h,
        pad = pad,
        yb = h - pad,
        xr = w - pad,
        min = min,
        max = max,
        n = losses.len(),
        pts = points.join(" ")
    )
}
