//! Small static SVG renderers for trajectories and basin scans.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const MAX_POINTS: usize = 1500;

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_plot(title: &str, x_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut out = header(title);
    let _ = writeln!(
        out,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (v, anchor_x, anchor) in [(x0, PAD, "start"), (x1, W - PAD, "end")] {
        let _ = writeln!(out, "<text x=\"{anchor_x}\" y=\"{}\" text-anchor=\"{anchor}\">{v:.4}</text>", H - PAD + 16.0);
    }
    for (v, y) in [(y0, H - PAD), (y1, PAD + 10.0)] {
        let _ = writeln!(out, "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{v:.4}</text>", PAD - 4.0);
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 14.0, escape(x_label));
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let stride = s.points.len().div_ceil(MAX_POINTS).max(1);
        let mut path = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            if j % stride != 0 && j + 1 != s.points.len() {
                continue;
            }
            let _ = write!(path, "{}{:.2},{:.2} ", if path.is_empty() { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = writeln!(out, "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", path.trim_end());
        let ly = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            W - PAD - 120.0,
            W - PAD - 100.0,
            W - PAD - 94.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Cells are row-major over `rows × cols`; colour encodes log10 of the value.
pub fn heat_map(title: &str, rows: &[f64], cols: &[f64], values: &[f64]) -> String {
    let logs: Vec<f64> = values.iter().map(|v| v.max(1e-16).log10()).collect();
    let (lo, hi) = bounds(logs.iter().copied());
    let cw = (W - 2.0 * PAD) / cols.len() as f64;
    let ch = (H - 2.0 * PAD) / rows.len() as f64;
    let mut out = header(title);
    for (r, rv) in rows.iter().enumerate() {
        for (c, cv) in cols.iter().enumerate() {
            let t = (logs[r * cols.len() + c] - lo) / (hi - lo);
            // dark blue for small residuals through to yellow for large
            let (red, green, blue) = ((40.0 + 215.0 * t) as u8, (40.0 + 180.0 * t) as u8, (120.0 - 90.0 * t) as u8);
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"rgb({red},{green},{blue})\">\
                 <title>alpha_task0={rv:.4} alpha_kd0={cv:.4} residual={:.3e}</title></rect>",
                PAD + c as f64 * cw,
                H - PAD - (r + 1) as f64 * ch,
                values[r * cols.len() + c]
            );
        }
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">initial alpha_kd (log axis, {:.3} to {:.3})</text>",
        W / 2.0,
        H - 22.0,
        cols[0],
        cols[cols.len() - 1]
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">initial alpha_task ({:.3} to {:.3})</text>",
        H / 2.0,
        H / 2.0,
        rows[0],
        rows[rows.len() - 1]
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"42\" text-anchor=\"end\">log10 residual {lo:.1} .. {hi:.1}</text>",
        W - PAD
    );
    out.push_str("</svg>\n");
    out
}
