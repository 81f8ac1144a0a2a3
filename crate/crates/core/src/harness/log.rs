use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::safety::NUM_CONSTRAINTS;

pub const SCHEMA_VERSION: u32 = 1;

/// Column order of the CSV output.
pub const CSV_COLUMNS: [&str; 26] = [
    "t",
    "x",
    "y",
    "z",
    "vx",
    "vy",
    "vz",
    "theta",
    "u_des_x",
    "u_des_y",
    "u_des_z",
    "u_act_x",
    "u_act_y",
    "u_act_z",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "intervened",
    "deviation",
    "feasible",
    "n_p",
    "delta_v",
    "range",
];

/// One control period: state at its start and the thrust held over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    /// `[x, y, z, ẋ, ẏ, ż, θ]`.
    pub state: [f64; 7],
    pub u_des: [f64; 3],
    pub u_act: [f64; 3],
    /// Barrier values at the true state.
    pub h: [f64; NUM_CONSTRAINTS],
    pub intervened: bool,
    pub deviation: f64,
    pub feasible: bool,
    /// Points inspected before this period.
    pub n_p: usize,
    /// Δv spent before this period (m/s).
    pub delta_v: f64,
}

impl Record {
    pub fn range(&self) -> f64 {
        let s = &self.state;
        (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }

    pub fn min_h(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn numeric_fields(&self) -> [f64; 26] {
        let s = &self.state;
        [
            self.t,
            s[0],
            s[1],
            s[2],
            s[3],
            s[4],
            s[5],
            s[6],
            self.u_des[0],
            self.u_des[1],
            self.u_des[2],
            self.u_act[0],
            self.u_act[1],
            self.u_act[2],
            self.h[0],
            self.h[1],
            self.h[2],
            self.h[3],
            self.h[4],
            self.h[5],
            f64::from(u8::from(self.intervened)),
            self.deviation,
            f64::from(u8::from(self.feasible)),
            self.n_p as f64,
            self.delta_v,
            self.range(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub controller: String,
    pub rta_enabled: bool,
    pub closed_loop: bool,
    pub seed: u64,
    pub steps: usize,
    pub duration: f64,
    pub inspected: usize,
    pub delta_v: f64,
    pub reward: f64,
    pub success: bool,
    /// Minimum over every integrator step.
    pub min_range: f64,
    pub final_range: f64,
    /// Minimum barrier value over every integrator step.
    pub min_h: f64,
    pub interventions: usize,
    pub infeasible_steps: usize,
    /// Largest |lab coordinate| per axis (m).
    pub lab_extent: [f64; 3],
    /// Whether the scaled trajectory stays inside the aviary.
    pub lab_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub config: ExperimentConfig,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
            Self::Svg => "svg",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }
}

/// Fixed-point with nine decimals; `-0` is normalized so reruns compare byte for byte.
fn fmt_num(v: f64) -> String {
    let s = format!("{v:.9}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn to_csv(log: &TrajectoryLog) -> Result<String> {
    if log.records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in &log.records {
        let fields: Vec<String> = r.numeric_fields().iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Parses CSV produced by [`to_csv`] back into rows of numbers.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyLog)?;
    if header != CSV_COLUMNS.join(",") {
        return Err(Error::Config("unexpected CSV header".into()));
    }
    lines
        .map(|line| {
            line.split(',')
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad CSV field `{f}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

#[derive(Serialize)]
struct JsonDocument<'a> {
    schema_version: u32,
    config: &'a ExperimentConfig,
    summary: Option<&'a RunSummary>,
    records: &'a [Record],
}

pub fn to_json(log: &TrajectoryLog, summary: Option<&RunSummary>) -> Result<String> {
    if log.records.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(serde_json::to_string_pretty(&JsonDocument {
        schema_version: SCHEMA_VERSION,
        config: &log.config,
        summary,
        records: &log.records,
    })?)
}

const PANEL: f64 = 360.0;
const MARGIN: f64 = 40.0;

struct Panel<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    series: Vec<(&'a str, Vec<(f64, f64)>)>,
    /// Horizontal reference line, such as h = 0.
    zero_line: bool,
    equal_axes: bool,
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if panel.zero_line {
        y0 = y0.min(0.0);
        y1 = y1.max(0.0);
    }
    if !x0.is_finite() {
        return (-1.0, 1.0, -1.0, 1.0);
    }
    if panel.equal_axes {
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let half = ((x1 - x0).max(y1 - y0) / 2.0).max(1e-9);
        return (cx - half, cx + half, cy - half, cy + half);
    }
    let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 1.0, b + 1.0) } else { (a, b) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let w = PANEL - 2.0 * MARGIN;
    let sx = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| oy + PANEL - MARGIN - (y - y0) / (y1 - y0) * w;
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{w:.1}" height="{w:.1}" fill="none" stroke="#444"/>"##,
        ox + MARGIN,
        oy + MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
        ox + PANEL / 2.0,
        oy + MARGIN - 12.0,
        panel.title
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{} [{:.3}, {:.3}]</text>"#,
        ox + PANEL / 2.0,
        oy + PANEL - 12.0,
        panel.x_label,
        x0,
        x1
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" transform="rotate(-90 {:.1} {:.1})" text-anchor="middle">{} [{:.3}, {:.3}]</text>"#,
        ox + 14.0,
        oy + PANEL / 2.0,
        ox + 14.0,
        oy + PANEL / 2.0,
        panel.y_label,
        y0,
        y1
    );
    if panel.zero_line {
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
            sx(x0),
            sy(0.0),
            sx(x1),
            sy(0.0)
        );
    }
    for (i, (label, pts)) in panel.series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"><title>{label}</title></polyline>"#,
            path.join(" ")
        );
        if panel.series.len() > 1 {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{colour}">{label}</text>"#,
                ox + PANEL - MARGIN + 4.0,
                oy + MARGIN + 12.0 * (i as f64 + 1.0)
            );
        }
    }
}

/// Three panels: x–y and x–z trajectories around the chief, and h over time.
pub fn to_svg(log: &TrajectoryLog) -> Result<String> {
    if log.records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let chief: Vec<(f64, f64)> = (0..=64)
        .map(|k| {
            let a = k as f64 / 64.0 * std::f64::consts::TAU;
            (10.0 * a.cos(), 10.0 * a.sin())
        })
        .collect();
    let xy: Vec<(f64, f64)> = log.records.iter().map(|r| (r.state[0], r.state[1])).collect();
    let xz: Vec<(f64, f64)> = log.records.iter().map(|r| (r.state[0], r.state[2])).collect();
    let names = ["h1", "h2", "h3", "h4", "h5", "h6"];
    let h_series = names
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, log.records.iter().map(|r| (r.t, r.h[i])).collect()))
        .collect();
    let panels = [
        Panel {
            title: "x-y trajectory",
            x_label: "x (m)",
            y_label: "y (m)",
            series: vec![("deputy", xy), ("chief", chief.clone())],
            zero_line: false,
            equal_axes: true,
        },
        Panel {
            title: "x-z trajectory",
            x_label: "x (m)",
            y_label: "z (m)",
            series: vec![("deputy", xz), ("chief", chief)],
            zero_line: false,
            equal_axes: true,
        },
        Panel {
            title: "barrier values",
            x_label: "t (s)",
            y_label: "h",
            series: h_series,
            zero_line: true,
            equal_axes: false,
        },
    ];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="sans-serif">"#,
        PANEL * 3.0,
        PANEL
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, PANEL * i as f64, 0.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Writes `log` in `format` to `path`.
pub fn emit(log: &TrajectoryLog, summary: Option<&RunSummary>, format: Format, path: impl AsRef<Path>) -> Result<()> {
    let text = match format {
        Format::Csv => to_csv(log)?,
        Format::Json => to_json(log, summary)?,
        Format::Svg => to_svg(log)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}
