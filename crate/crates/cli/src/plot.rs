//! `lbac plot`: SVG renderings of training curves and per-setpoint RMSE
//! distributions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::eval::RESULTS_CSV;
use crate::io::{create_dir, write_atomic};
use crate::train::CURVES_FILE;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tick positions covering `[lo, hi]` with a 1-2-5 step.
pub fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(a, b): (f64, f64)| {
            if !(a.is_finite() && b.is_finite()) {
                (0.0, 1.0)
            } else if b > a {
                (a, b)
            } else {
                (a - 0.5, a + 0.5)
            }
        };
        Frame { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
}

fn axes(svg: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xticks: &[(f64, String)]) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for (x, text) in xticks {
        let px = f.px(*x);
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, escape(text));
    }
    for y in ticks(f.y.0, f.y.1, 6) {
        let py = f.py(y);
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, label(y));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn legend(svg: &mut String, entries: &[(&str, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{color}"/>"#, y - 2.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 20.0, y + 4.0, escape(name));
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// Line chart of several series sharing axes.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let xb = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yb = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let f = Frame::new(xb, yb);
    let mut svg = String::new();
    open(&mut svg, title);
    let xt: Vec<(f64, String)> = ticks(f.x.0, f.x.1, 8).into_iter().map(|x| (x, label(x))).collect();
    axes(&mut svg, &f, xlabel, ylabel, &xt);
    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, s.color, pts.join(" "));
        }
    }
    legend(&mut svg, &series.iter().map(|s| (s.name.as_str(), s.color)).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

pub struct Group {
    pub name: String,
    pub color: &'static str,
    /// Per category, the trial values.
    pub values: BTreeMap<usize, Vec<f64>>,
}

/// Per-category strip plot: one dot per trial and a bar at the mean, the
/// groups side by side.
pub fn strip_chart(title: &str, xlabel: &str, ylabel: &str, categories: &[usize], groups: &[Group]) -> String {
    let yb = bounds(groups.iter().flat_map(|g| g.values.values().flatten().copied()));
    let yb = if yb.0.is_finite() { (yb.0.min(0.0), yb.1) } else { yb };
    let f = Frame::new((0.5, categories.len() as f64 + 0.5), yb);
    let mut svg = String::new();
    open(&mut svg, title);
    let xt: Vec<(f64, String)> = categories.iter().enumerate().map(|(i, c)| ((i + 1) as f64, c.to_string())).collect();
    axes(&mut svg, &f, xlabel, ylabel, &xt);
    let n = groups.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let offset = (gi as f64 + 0.5) / n - 0.5;
        for (ci, c) in categories.iter().enumerate() {
            let Some(vals) = g.values.get(c) else { continue };
            let cx = f.px((ci + 1) as f64 + 0.6 * offset);
            for v in vals.iter().filter(|v| v.is_finite()) {
                let _ = writeln!(svg, r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.6"/>"#, f.py(*v), g.color);
            }
            let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
            if !finite.is_empty() {
                let mean = finite.iter().sum::<f64>() / finite.len() as f64;
                let py = f.py(mean);
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="{}" stroke-width="2"/>"#,
                    cx - 8.0,
                    cx + 8.0,
                    g.color
                );
            }
        }
    }
    legend(&mut svg, &groups.iter().map(|g| (g.name.as_str(), g.color)).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

fn malformed(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::MalformedResults(format!("{}: {what}", path.display()))
}

/// Reads `columns` from a CSV with headers; empty cells become NaN.
fn read_columns(path: &Path, columns: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| malformed(path, e))?;
    let headers = r.headers().map_err(|e| malformed(path, e))?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).ok_or_else(|| malformed(path, format!("missing column `{c}`"))))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| malformed(path, e))?;
        rows.push(idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect());
    }
    Ok(rows)
}

fn num(path: &Path, s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| malformed(path, format!("not a number: `{s}`")))
}

pub fn plot_curves(path: &Path) -> Result<String> {
    let cols = ["episode", "reward_ma", "lb_reward_ma", "mb_reward_ma"];
    let rows = read_columns(path, &cols)?;
    let mut series = vec![
        Series { name: "exploring".into(), color: "#999999", points: Vec::new() },
        Series { name: "LB (deterministic)".into(), color: "#1f77b4", points: Vec::new() },
        Series { name: "MB (fixed poles)".into(), color: "#d62728", points: Vec::new() },
    ];
    for row in &rows {
        let ep = num(path, &row[0])?;
        for (k, s) in series.iter_mut().enumerate() {
            s.points.push((ep, num(path, &row[k + 1])?));
        }
    }
    Ok(line_chart("Training curves (moving average)", "episode", "mean reward per step", &series))
}

/// One strip chart per scenario found in the results.
pub fn plot_results(path: &Path) -> Result<Vec<(String, String)>> {
    let rows = read_columns(path, &["scenario", "controller", "setpoint", "mean_rmse"])?;
    let mut by_scenario: BTreeMap<String, BTreeMap<String, BTreeMap<usize, Vec<f64>>>> = BTreeMap::new();
    for row in &rows {
        let sp: usize = row[2].parse().map_err(|_| malformed(path, format!("bad setpoint `{}`", row[2])))?;
        by_scenario
            .entry(row[0].clone())
            .or_default()
            .entry(row[1].clone())
            .or_default()
            .entry(sp)
            .or_default()
            .push(num(path, &row[3])?);
    }
    if by_scenario.is_empty() {
        return Ok(vec![("rmse".to_string(), strip_chart("Mean RMSE per setpoint", "setpoint", "mean RMSE", &[], &[]))]);
    }
    let mut out = Vec::new();
    for (scenario, ctrls) in by_scenario {
        let categories: Vec<usize> = ctrls.values().flat_map(|m| m.keys().copied()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let groups: Vec<Group> = ctrls
            .into_iter()
            .map(|(name, values)| {
                let color = match name.as_str() {
                    "lb" => "#1f77b4",
                    "mb" => "#d62728",
                    _ => "#2ca02c",
                };
                Group { name: name.to_uppercase(), color, values }
            })
            .collect();
        let title = format!("Mean RMSE per setpoint, scenario `{scenario}`");
        out.push((format!("rmse_{scenario}"), strip_chart(&title, "setpoint", "mean RMSE", &categories, &groups)));
    }
    Ok(out)
}

/// Renders every recognised file under `input` (a run directory or a
/// single CSV) into `out_dir`; returns the written paths.
pub fn cmd_plot(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (curves, results) = if input.is_dir() {
        (Some(input.join(CURVES_FILE)).filter(|p| p.exists()), Some(input.join(RESULTS_CSV)).filter(|p| p.exists()))
    } else {
        match input.file_name().and_then(|n| n.to_str()) {
            Some(CURVES_FILE) => (Some(input.to_path_buf()), None),
            Some(RESULTS_CSV) => (None, Some(input.to_path_buf())),
            _ if input.exists() => return Err(malformed(input, "expected curves.csv or results.csv")),
            _ => return Err(malformed(input, "no such file or directory")),
        }
    };
    if curves.is_none() && results.is_none() {
        return Err(malformed(input, "no curves.csv or results.csv found"));
    }
    create_dir(out_dir)?;
    let mut written = Vec::new();
    if let Some(p) = curves {
        let path = out_dir.join("training_curve.svg");
        write_atomic(&path, plot_curves(&p)?.as_bytes())?;
        written.push(path);
    }
    if let Some(p) = results {
        for (stem, svg) in plot_results(&p)? {
            let path = out_dir.join(format!("{stem}.svg"));
            write_atomic(&path, svg.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 1.0, 5), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(ticks(3.0, 3.0, 5), vec![3.0]);
    }

    #[test]
    fn constant_series_is_flat() {
        let s = Series { name: "c".into(), color: "black", points: (0..5).map(|i| (i as f64, 2.0)).collect() };
        let svg = line_chart("t", "x", "y", &[s]);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn empty_results_give_valid_svg() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(RESULTS_CSV);
        std::fs::write(&p, "scenario,controller,trial,seed,setpoint,mean_rmse\n").unwrap();
        let written = cmd_plot(&p, dir.path()).unwrap();
        let svg = std::fs::read_to_string(&written[0]).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn missing_column_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CURVES_FILE);
        std::fs::write(&p, "episode,reward\n1,0.5\n").unwrap();
        assert!(matches!(cmd_plot(&p, dir.path()), Err(CliError::MalformedResults(_))));
        assert!(matches!(cmd_plot(&dir.path().join("nope.csv"), dir.path()), Err(CliError::MalformedResults(_))));
    }
}
