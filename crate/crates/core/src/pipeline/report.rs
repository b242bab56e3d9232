use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::evaluate::{table_rows, Evaluation, EvaluationMetrics, EvaluationTimings, Trace};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const LADDER_FILE: &str = "ladder.csv";
pub const TIMINGS_FILE: &str = "timings.json";
pub const TRACES_FILE: &str = "traces.json";
pub const REPORT_FILE: &str = "report.csv";

/// Writes the evaluation outputs. `metrics.json` and `ladder.csv` depend only
/// on the configuration and seeds; timings go to a separate file.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), serde_json::to_string_pretty(&eval.metrics)?)?;
    fs::write(dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&eval.timings)?)?;
    fs::write(dir.join(TRACES_FILE), serde_json::to_string(&eval.traces)?)?;
    let mut w = csv::Writer::from_path(dir.join(LADDER_FILE)).map_err(csv_err)?;
    for tier in &eval.metrics.ladder {
        w.serialize(tier).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::ArtifactNotFound(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Renders the performance table and one SVG per stored trace; returns the written files.
pub fn render_report(eval_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics: EvaluationMetrics = read_json(eval_dir, METRICS_FILE)?;
    let timings: EvaluationTimings = read_json(eval_dir, TIMINGS_FILE)?;
    let traces: Vec<Trace> = read_json(eval_dir, TRACES_FILE)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let table = out_dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&table).map_err(csv_err)?;
    for row in table_rows(&metrics, &timings) {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    written.push(table);
    for t in &traces {
        let path = out_dir.join(format!("trace_{:04}.svg", t.sample));
        fs::write(&path, trace_svg(t))?;
        written.push(path);
    }
    Ok(written)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Line plot of reference and mean with the shaded envelope.
pub fn trace_svg(t: &Trace) -> String {
    let n = t.mean.len();
    let t_end = (n.saturating_sub(1)) as f64 * t.dt;
    let (lo, hi) = t
        .lower
        .iter()
        .chain(&t.upper)
        .chain(&t.reference)
        .chain(&t.mean)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let x = |j: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * if t_end > 0.0 { j as f64 * t.dt / t_end } else { 0.0 };
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let line = |vals: &[f64]| {
        vals.iter()
            .enumerate()
            .map(|(j, &v)| format!("{:.2},{:.2}", x(j), y(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut band = line(&t.upper);
    for j in (0..n).rev() {
        let _ = write!(band, " {:.2},{:.2}", x(j), y(t.lower[j]));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r##"<polygon points="{band}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##);
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="black" stroke-width="1.2"/>"##, line(&t.reference));
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.2" stroke-dasharray="5,3"/>"##,
        line(&t.mean)
    );
    let (x0, x1, yb) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{yb}" x2="{x1}" y2="{yb}" stroke="gray"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{MARGIN}" x2="{x0}" y2="{yb}" stroke="gray"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">time (s), 0 to {t_end:.2}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="20" font-size="12">sample {} dof {}: reference (solid), mean (dashed), ±3σ band; range [{lo:.3e}, {hi:.3e}]</text>"#,
        t.sample, t.dof
    );
    s.push_str("</svg>\n");
    s
}
