//! Report artifacts: CSV tables and SVG plots rendered from them.
//!
//! `emit_plots` writes the CSV files and then calls `render_plots`, which
//! reads only those CSV files. Re-running `render_plots` on the same
//! directory therefore reproduces the SVGs byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{cdf, EvalReport};

pub const FRAMES_CSV: &str = "frames.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CDF_TRANSLATION_CSV: &str = "cdf_translation.csv";
pub const CDF_ROTATION_CSV: &str = "cdf_rotation.csv";

const FRAME_HEADER: [&str; 9] = [
    "sequence",
    "timestamp_ns",
    "gt_x",
    "gt_y",
    "pred_x",
    "pred_y",
    "translation_error_m",
    "rotation_error_deg",
    "gt_yaw_deg",
];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::parse(path, e)
}

fn write_cdf(path: &Path, errors: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["error", "fraction"]).map_err(csv_err(path))?;
    for (e, f) in cdf(errors) {
        w.write_record([e.to_string(), f.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV tables for `report` into `out_dir` and renders the plots.
/// Returns every file written.
pub fn emit_plots(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let frames_path = out_dir.join(FRAMES_CSV);
    let mut w = csv::Writer::from_path(&frames_path).map_err(csv_err(&frames_path))?;
    w.write_record(FRAME_HEADER).map_err(csv_err(&frames_path))?;
    for s in &report.sequences {
        for f in &s.frames {
            let row = [
                s.name.clone(),
                f.timestamp.to_string(),
                f.ground_truth.p[0].to_string(),
                f.ground_truth.p[1].to_string(),
                f.predicted.p[0].to_string(),
                f.predicted.p[1].to_string(),
                f.translation_error.to_string(),
                f.rotation_error.to_string(),
                f.ground_truth.q.yaw().to_degrees().to_string(),
            ];
            w.write_record(&row).map_err(csv_err(&frames_path))?;
        }
    }
    w.flush().map_err(|e| Error::io(&frames_path, e))?;

    let summary_path = out_dir.join(SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&summary_path).map_err(csv_err(&summary_path))?;
    w.write_record(["sequence", "frames", "mean_translation_m", "mean_rotation_deg"])
        .map_err(csv_err(&summary_path))?;
    for s in &report.sequences {
        w.write_record([
            s.name.clone(),
            s.frames.len().to_string(),
            s.mean_translation.to_string(),
            s.mean_rotation.to_string(),
        ])
        .map_err(csv_err(&summary_path))?;
    }
    w.write_record([
        "average".to_string(),
        report.frame_count().to_string(),
        report.mean_translation.to_string(),
        report.mean_rotation.to_string(),
    ])
    .map_err(csv_err(&summary_path))?;
    w.flush().map_err(|e| Error::io(&summary_path, e))?;

    let t_path = out_dir.join(CDF_TRANSLATION_CSV);
    write_cdf(&t_path, &report.translation_errors())?;
    let r_path = out_dir.join(CDF_ROTATION_CSV);
    write_cdf(&r_path, &report.rotation_errors())?;

    let mut files = vec![frames_path, summary_path, t_path, r_path];
    files.extend(render_plots(out_dir)?);
    Ok(files)
}

struct TrackRow {
    gt: (f64, f64),
    pred: (f64, f64),
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.records().map(|rec| rec.map_err(csv_err(path))).collect()
}

fn field(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<f64> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, format!("bad numeric field {i} in {rec:?}")))
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Renders trajectory and CDF SVGs from the CSV files in `dir`.
pub fn render_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let frames_path = dir.join(FRAMES_CSV);
    let mut tracks: BTreeMap<String, Vec<TrackRow>> = BTreeMap::new();
    for rec in read_rows(&frames_path)? {
        let name = rec.get(0).unwrap_or_default().to_string();
        tracks.entry(name).or_default().push(TrackRow {
            gt: (field(&frames_path, &rec, 2)?, field(&frames_path, &rec, 3)?),
            pred: (field(&frames_path, &rec, 4)?, field(&frames_path, &rec, 5)?),
        });
    }
    let mut out = Vec::new();
    for (name, rows) in &tracks {
        let gt: Vec<(f64, f64)> = rows.iter().map(|r| r.gt).collect();
        let pred: Vec<(f64, f64)> = rows.iter().map(|r| r.pred).collect();
        let svg = Chart {
            title: format!("Trajectory {name}"),
            x_label: "x (m)".into(),
            y_label: "y (m)".into(),
            equal_aspect: true,
            series: vec![
                Series {
                    label: "ground truth".into(),
                    color: "#1f77b4",
                    points: gt,
                    markers: false,
                },
                Series {
                    label: "predicted".into(),
                    color: "#d62728",
                    points: pred,
                    markers: true,
                },
            ],
        }
        .render();
        let path = dir.join(format!("trajectory_{}.svg", safe_name(name)));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    for (csv_name, svg_name, label) in [
        (CDF_TRANSLATION_CSV, "cdf_translation.svg", "translation error (m)"),
        (CDF_ROTATION_CSV, "cdf_rotation.svg", "rotation error (deg)"),
    ] {
        let path = dir.join(csv_name);
        let pts = read_rows(&path)?
            .iter()
            .map(|rec| Ok((field(&path, rec, 0)?, field(&path, rec, 1)?)))
            .collect::<Result<Vec<_>>>()?;
        // Step function starting at zero.
        let mut steps = Vec::with_capacity(pts.len() * 2 + 1);
        let mut prev = 0.0;
        if let Some(&(e0, _)) = pts.first() {
            steps.push((e0.min(0.0), 0.0));
        }
        for &(e, f) in &pts {
            steps.push((e, prev));
            steps.push((e, f));
            prev = f;
        }
        let svg = Chart {
            title: format!("Cumulative distribution of {label}"),
            x_label: label.into(),
            y_label: "fraction of frames".into(),
            equal_aspect: false,
            series: vec![Series {
                label: "all frames".into(),
                color: "#2ca02c",
                points: steps,
                markers: false,
            }],
        }
        .render();
        let svg_path = dir.join(svg_name);
        fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
        out.push(svg_path);
    }
    Ok(out)
}

struct Series {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
    markers: bool,
}

struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    equal_aspect: bool,
    series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in self.series.iter().flat_map(|s| &s.points) {
            if x.is_finite() && y.is_finite() {
                b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
            }
        }
        if !b.0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let span = hi - lo;
            if span < 1e-9 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo - 0.05 * span, hi + 0.05 * span)
            }
        };
        let (x0, x1) = pad(b.0, b.1);
        let (y0, y1) = pad(b.2, b.3);
        if !self.equal_aspect {
            return (x0, x1, y0, y1);
        }
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let per_px = ((x1 - x0) / pw).max((y1 - y0) / ph);
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        (
            cx - per_px * pw / 2.0,
            cx + per_px * pw / 2.0,
            cy - per_px * ph / 2.0,
            cy + per_px * ph / 2.0,
        )
    }

    fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let xs = nice_step(x1 - x0);
        let mut t = (x0 / xs).ceil() * xs;
        while t <= x1 + 1e-12 {
            let px = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{MARGIN_T}" x2="{px:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                MARGIN_T + ph,
                MARGIN_T + ph + 16.0,
                tick_label(t, xs)
            );
            t += xs;
        }
        let ys = nice_step(y1 - y0);
        let mut t = (y0 / ys).ceil() * ys;
        while t <= y1 + 1e-12 {
            let py = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_L + pw,
                MARGIN_L - 6.0,
                py + 4.0,
                tick_label(t, ys)
            );
            t += ys;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                series.color,
                pts.join(" ")
            );
            if series.markers {
                for p in &pts {
                    let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
                    let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2" fill="{}"/>"#, series.color);
                }
            }
            let ly = MARGIN_T + 16.0 + 16.0 * k as f64;
            let lx = MARGIN_L + pw - 130.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
                ly - 4.0,
                lx + 20.0,
                ly - 4.0,
                series.color,
                lx + 26.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
    format!("{v:.decimals$}")
}
