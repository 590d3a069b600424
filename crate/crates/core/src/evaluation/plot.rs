//! Minimal static SVG line charts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Index into `points` drawn with a ring marker.
    pub marked: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    /// Horizontal dashed reference line.
    pub reference: Option<(String, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let mut xs: Vec<f64> = self.lines.iter().flat_map(|l| l.points.iter().map(|p| p.0)).collect();
        let mut ys: Vec<f64> = self.lines.iter().flat_map(|l| l.points.iter().map(|p| p.1)).collect();
        if let Some((_, r)) = &self.reference {
            ys.push(*r);
        }
        if xs.is_empty() {
            xs.push(0.0);
        }
        if ys.is_empty() {
            ys.push(0.0);
        }
        let (mut x0, mut x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let (mut y0, mut y1) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        if x1 - x0 < 1e-12 {
            x0 -= 1.0;
            x1 += 1.0;
        }
        let pad = ((y1 - y0) * 0.08).max(1e-9);
        if y1 - y0 < 1e-12 {
            y0 -= 1.0;
            y1 += 1.0;
        } else {
            y0 -= pad;
            y1 += pad;
        }
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = y0 + f * (y1 - y0);
            let xv = x0 + f * (x1 - x0);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                py(yv) + 4.0,
                fmt_tick(yv),
                y = py(yv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                px(xv),
                TOP + ph + 18.0,
                fmt_tick(xv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        let mut legend_y = TOP + 10.0;
        if let Some((name, r)) = &self.reference {
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
                LEFT + pw,
                y = py(*r)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{}" x2="{}" y1="{legend_y}" y2="{legend_y}" stroke="black" stroke-dasharray="6 4"/><text x="{}" y="{}">{}</text>"#,
                W - RIGHT + 10.0,
                W - RIGHT + 30.0,
                W - RIGHT + 36.0,
                legend_y + 4.0,
                escape(name)
            );
            legend_y += 18.0;
        }
        for (k, line) in self.lines.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = line.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
            for &(x, y) in &line.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
            }
            if let Some(&(x, y)) = line.marked.and_then(|i| line.points.get(i)) {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="7" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    px(x),
                    py(y)
                );
            }
            let _ = writeln!(
                s,
                r#"<line x1="{}" x2="{}" y1="{legend_y}" y2="{legend_y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                W - RIGHT + 10.0,
                W - RIGHT + 30.0,
                W - RIGHT + 36.0,
                legend_y + 4.0,
                escape(&line.name)
            );
            legend_y += 18.0;
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_every_line_and_reference() {
        let chart = Chart {
            title: "a < b".into(),
            x_label: "H".into(),
            y_label: "sMAPE".into(),
            lines: vec![
                Line {
                    name: "lstm".into(),
                    points: vec![(1.0, 20.0), (6.0, 30.0)],
                    marked: Some(0),
                },
                Line {
                    name: "calf".into(),
                    points: vec![(1.0, 15.0)],
                    marked: None,
                },
            ],
            reference: Some(("baseline".into(), 18.0)),
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray") && svg.contains("a &lt; b"));
        assert_eq!(svg, chart.to_svg());
    }
}
