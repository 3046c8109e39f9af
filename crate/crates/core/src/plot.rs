//! Deterministic SVG line charts of the harness CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stats::linear_fit;

/// Tables written by the harness that [`plot_csv`] knows how to draw.
pub const KNOWN_TABLES: [&str; 3] = ["rates.csv", "ml_vs_highest.csv", "mlpf_compare.csv"];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            points,
            dashed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Annotates solid series with their log₂–log₂ least-squares slope.
    pub slopes: bool,
}

/// Numeric CSV table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    fn pairs(&self, x: &str, y: &str, skip: usize) -> Vec<(f64, f64)> {
        match (self.column(x), self.column(y)) {
            (Some(xs), Some(ys)) => xs.into_iter().zip(ys).skip(skip).collect(),
            _ => Vec::new(),
        }
    }
}

/// Parses a comma-separated table; errors carry the 1-based line number.
pub fn parse_table(text: &str) -> Result<Table> {
    let mut lines = text.lines().enumerate();
    let header: Vec<String> = match lines.next() {
        Some((_, h)) if !h.trim().is_empty() => h.split(',').map(|s| s.trim().to_string()).collect(),
        _ => {
            return Err(Error::Parse {
                row: 1,
                message: "missing header".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        let values = fields
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    message: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok(Table { header, rows })
}

pub fn read_table(path: &Path) -> Result<Table> {
    parse_table(&std::fs::read_to_string(path)?)
}

/// Log₂–log₂ least-squares slope over points with positive coordinates; the
/// same fit as [`crate::ml_estimator::rate_fit`], also defined for two points.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let valid: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| *x > 0.0 && *y > 0.0).collect();
    if valid.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = valid.iter().map(|p| p.0.log2()).collect();
    let ys: Vec<f64> = valid.iter().map(|p| p.1.log2()).collect();
    let (slope, _, _) = linear_fit(&xs, &ys);
    slope.is_finite().then_some(slope)
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let t: Vec<f64> = values.map(|v| if log { v.log10() } else { v }).collect();
        if t.is_empty() {
            return Self { log, lo: 0.0, hi: 1.0 };
        }
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            let pad = if log { 0.5 } else { lo.abs().max(1.0) * 0.5 };
            return Self { log, lo: lo - pad, hi: hi + pad };
        }
        let pad = 0.05 * (hi - lo);
        Self { log, lo: lo - pad, hi: hi + pad }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in data coordinates.
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            if b >= a {
                let step = ((b - a) / 6 + 1) as usize;
                return (a..=b).step_by(step).map(|e| 10f64.powi(e)).collect();
            }
            return vec![10f64.powf(self.lo), 10f64.powf(self.hi)];
        }
        (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
    }
}

fn tick_label(v: f64, log: bool) -> String {
    if log || v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn usable(p: &(f64, f64), chart: &Chart) -> bool {
    p.0.is_finite() && p.1.is_finite() && (!chart.log_x || p.0 > 0.0) && (!chart.log_y || p.1 > 0.0)
}

/// Renders the chart; series without usable points leave the axes empty.
pub fn render_svg(chart: &Chart) -> String {
    let pts = |s: &Series| -> Vec<(f64, f64)> { s.points.iter().copied().filter(|p| usable(p, chart)).collect() };
    let all: Vec<(f64, f64)> = chart.series.iter().flat_map(pts).collect();
    let ax = Axis::fit(all.iter().map(|p| p.0), chart.log_x);
    let ay = Axis::fit(all.iter().map(|p| p.1), chart.log_y);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + pw * ax.unit(x);
    let py = |y: f64| TOP + ph * (1.0 - ay.unit(y));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in ax.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0,
            tick_label(t, ax.log)
        );
    }
    for t in ay.ticks() {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            tick_label(t, ay.log)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );
    for (i, series) in chart.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let p = pts(series);
        let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        if p.len() >= 2 {
            let coords: Vec<String> = p.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                coords.join(" ")
            );
        }
        for (x, y) in &p {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(*x), py(*y));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let mut label = escape(&series.name);
        if chart.slopes && !series.dashed {
            if let Some(slope) = log_slope(&p) {
                label.push_str(&format!(" (slope {slope:.3})"));
            }
        }
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Chart for one harness table, chosen by its header; `skip` hides leading
/// rounds of the MSE table.
pub fn chart_for(table: &Table, skip: usize) -> Result<Chart> {
    let has = |c: &str| table.header.iter().any(|h| h == c);
    if has("mse_ml") && has("cost") {
        return Ok(Chart {
            title: "MSE versus cost".into(),
            x_label: "cost (Euler steps)".into(),
            y_label: "MSE".into(),
            log_x: false,
            log_y: true,
            series: vec![
                Series::new("multilevel", table.pairs("cost", "mse_ml", skip)),
                Series::new("highest level", table.pairs("cost", "mse_highest", skip)),
            ],
            slopes: false,
        });
    }
    if has("variance") && has("cost_units") && has("h") {
        let mut series = vec![Series::new("variance", table.pairs("h", "variance", 0))];
        if has("variance_fit") {
            series.push(Series { dashed: true, ..Series::new("c h^2", table.pairs("h", "variance_fit", 0)) });
        }
        series.push(Series::new("cost", table.pairs("h", "cost_units", 0)));
        if has("cost_fit") {
            series.push(Series { dashed: true, ..Series::new("a / h", table.pairs("h", "cost_fit", 0)) });
        }
        return Ok(Chart {
            title: "Increment variance and cost per sample".into(),
            x_label: "h".into(),
            y_label: "variance, cost".into(),
            log_x: true,
            log_y: true,
            series,
            slopes: true,
        });
    }
    if has("transport_variance") && has("mlpf_variance") && has("h") {
        return Ok(Chart {
            title: "Increment variance: transport versus particle filter".into(),
            x_label: "h".into(),
            y_label: "variance".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series::new("transport", table.pairs("h", "transport_variance", 0)),
                Series::new("particle filter", table.pairs("h", "mlpf_variance", 0)),
            ],
            slopes: true,
        });
    }
    Err(Error::Parse {
        row: 1,
        message: format!("unrecognised table header `{}`", table.header.join(",")),
    })
}

pub fn plot_csv(path: &Path, skip: usize) -> Result<String> {
    Ok(render_svg(&chart_for(&read_table(path)?, skip)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml_estimator::rate_fit;

    fn polylines(svg: &str) -> Vec<usize> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| l.split("points=\"").nth(1).unwrap().split('"').next().unwrap().split(' ').count())
            .collect()
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let err = parse_table("level,h\n1,0.5\n2,oops\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
        let err = parse_table("level,h\n1,0.5,7\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
        assert!(matches!(parse_table("").unwrap_err(), Error::Parse { row: 1, .. }));
    }

    #[test]
    fn empty_series_gives_axes_only() {
        let t = parse_table("level,h,variance,cost_units\n").unwrap();
        let svg = render_svg(&chart_for(&t, 0).unwrap());
        assert!(svg.contains("<rect x=") && svg.ends_with("</svg>\n"));
        assert!(polylines(&svg).is_empty());
        assert!(!svg.contains("<circle"));
    }

    #[test]
    fn two_point_series_is_one_segment_with_its_slope() {
        let t = parse_table("level,h,variance,cost_units\n1,0.5,0.01,12\n2,0.25,0.0025,24\n").unwrap();
        let svg = render_svg(&chart_for(&t, 0).unwrap());
        assert_eq!(polylines(&svg), vec![2, 2]);
        let slope = log_slope(&t.pairs("h", "variance", 0)).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
        assert!(svg.contains("variance (slope 2.000)"));
        assert!(svg.contains("cost (slope -1.000)"));
    }

    #[test]
    fn slope_annotation_matches_rate_fit() {
        let h = [0.5, 0.25, 0.125, 0.0625];
        let v = [0.011, 0.0024, 0.00066, 0.00015];
        let pts: Vec<(f64, f64)> = h.iter().copied().zip(v).collect();
        assert_eq!(log_slope(&pts).unwrap(), rate_fit(&h, &v).unwrap().slope);
    }

    #[test]
    fn rendering_is_deterministic_and_skip_only_hides() {
        let text = "round,cost,mse_ml,mse_highest\n1,100,0.1,0.2\n2,200,0.05,0.1\n3,300,0.02,0.08\n";
        let t = parse_table(text).unwrap();
        let a = render_svg(&chart_for(&t, 0).unwrap());
        assert_eq!(a, render_svg(&chart_for(&parse_table(text).unwrap(), 0).unwrap()));
        let b = render_svg(&chart_for(&t, 1).unwrap());
        assert_eq!(polylines(&b), vec![2, 2]);
        assert_eq!(t.rows.len(), 3);
        assert!(chart_for(&parse_table("a,b\n1,2\n").unwrap(), 0).is_err());
    }
}
