//! Minimal static line charts. Output depends only on the data, so equal
//! inputs give byte-identical files.

use std::fmt::Write;

const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub width: f64,
    /// Draw as a zero-order hold (horizontal then vertical segments).
    pub steps: bool,
}

impl Series {
    pub fn line(
        label: impl Into<String>,
        points: Vec<(f64, f64)>,
        color: impl Into<String>,
        width: f64,
    ) -> Self {
        Self {
            label: label.into(),
            points,
            color: color.into(),
            width,
            steps: false,
        }
    }

    pub fn stepped(mut self) -> Self {
        self.steps = true;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Plot `log10(y)`; non-positive values are dropped.
    pub log_y: bool,
}

/// Blue-to-red ramp for iteration `i` of `n`.
pub fn ramp(i: usize, n: usize) -> String {
    let t = if n <= 1 {
        1.0
    } else {
        i as f64 / (n - 1) as f64
    };
    let r = (40.0 + 200.0 * t) as u8;
    let b = (220.0 - 180.0 * t) as u8;
    format!("#{r:02x}60{b:02x}")
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e5) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn bounds(panel: &Panel) -> Option<(f64, f64, f64, f64)> {
    let mut it = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter_map(|&(x, y)| transform(panel, y).map(|y| (x, y)))
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (x0, y0) = it.next()?;
    let (mut xl, mut xh, mut yl, mut yh) = (x0, x0, y0, y0);
    for (x, y) in it {
        xl = xl.min(x);
        xh = xh.max(x);
        yl = yl.min(y);
        yh = yh.max(y);
    }
    if xh == xl {
        xh = xl + 1.0;
    }
    if yh == yl {
        let pad = if yl == 0.0 { 1.0 } else { 0.05 * yl.abs() };
        yl -= pad;
        yh += pad;
    } else {
        let pad = 0.05 * (yh - yl);
        yl -= pad;
        yh += pad;
    }
    Some((xl, xh, yl, yh))
}

fn transform(panel: &Panel, y: f64) -> Option<f64> {
    if panel.log_y {
        (y > 0.0).then(|| y.log10())
    } else {
        Some(y)
    }
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let (px, py) = (ox + MARGIN_L, oy + MARGIN_T);
    let _ = writeln!(
        out,
        r##"<rect x="{px:.1}" y="{py:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#888"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
        px + pw / 2.0,
        oy + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        px + pw / 2.0,
        py + ph + 32.0,
        escape(&panel.x_label)
    );
    let y_label = if panel.log_y {
        format!("log10 {}", panel.y_label)
    } else {
        panel.y_label.clone()
    };
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox + 14.0,
        py + ph / 2.0,
        ox + 14.0,
        py + ph / 2.0,
        escape(&y_label)
    );
    let Some((xl, xh, yl, yh)) = bounds(panel) else {
        return;
    };
    let sx = |x: f64| px + (x - xl) / (xh - xl) * pw;
    let sy = |y: f64| py + ph - (y - yl) / (yh - yl) * ph;
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (xl + f * (xh - xl), yl + f * (yh - yl));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            sx(xv),
            py + ph + 14.0,
            fmt_num(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
            px - 4.0,
            sy(yv) + 3.0,
            fmt_num(yv)
        );
    }
    for s in &panel.series {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for &(x, y) in &s.points {
            let Some(y) = transform(panel, y) else {
                continue;
            };
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            if s.steps {
                if let Some(&(_, prev)) = pts.last() {
                    pts.push((x, prev));
                }
            }
            pts.push((x, y));
        }
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="{}" points="{}"><title>{}</title></polyline>"#,
            s.color,
            s.width,
            path.join(" "),
            escape(&s.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Panels laid out in `columns` columns, with an optional legend line.
pub fn render(
    title: &str,
    panels: &[Panel],
    columns: usize,
    legend: &[(String, String)],
) -> String {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns);
    let legend_h = if legend.is_empty() { 0.0 } else { 24.0 };
    let (w, h) = (
        PANEL_W * columns as f64,
        30.0 + legend_h + PANEL_H * rows as f64,
    );
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" font-size="15" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let mut lx = 20.0;
    for (label, color) in legend {
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="42" x2="{:.1}" y2="42" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="46" font-size="11">{}</text>"#,
            lx + 20.0,
            lx + 24.0,
            escape(label)
        );
        lx += 40.0 + 7.0 * label.len() as f64;
    }
    for (i, p) in panels.iter().enumerate() {
        let (c, r) = (i % columns, i / columns);
        draw_panel(
            &mut out,
            p,
            c as f64 * PANEL_W,
            30.0 + legend_h + r as f64 * PANEL_H,
        );
    }
    out.push_str("</svg>\n");
    out
}
