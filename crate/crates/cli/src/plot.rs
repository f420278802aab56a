//! Minimal standalone SVG plots: a density heatmap, a scatter plot with the
//! unity line, and a Bland-Altman plot.

use std::fmt::Write;

use hips_core::metrics::BlandAltman;
use hips_core::synthesis::DensityPlotData;

const W: f64 = 480.0;
const H: f64 = 480.0;
const M: f64 = 60.0;

/// Linear map from data range to the plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * M)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ =
        writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    for t in 0..=4 {
        let fx = f.x.0 + (f.x.1 - f.x.0) * t as f64 / 4.0;
        let fy = f.y.0 + (f.y.1 - f.y.0) * t as f64 / 4.0;
        let (x, y) = (f.px(fx), f.py(fy));
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, H - M, H - M + 4.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, H - M + 16.0, tick(fx));
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{M}" y2="{y:.2}" stroke="black"/>"#, M - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, M - 6.0, y + 4.0, tick(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 20.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e5) {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn line(out: &mut String, f: &Frame, a: (f64, f64), b: (f64, f64), style: &str) {
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
        f.px(a.0),
        f.py(a.1),
        f.px(b.0),
        f.py(b.1)
    );
}

fn bounds(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Log-scaled joint histogram with the unity line.
pub fn density_svg(d: &DensityPlotData, title: &str, xlabel: &str, ylabel: &str) -> String {
    let f = Frame::new(d.range, d.range);
    let mut out = String::new();
    header(&mut out, title);
    let max = d.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let cell = (W - 2.0 * M) / d.nbins as f64;
    for bx in 0..d.nbins {
        for by in 0..d.nbins {
            let c = d.count(bx, by);
            if c == 0 {
                continue;
            }
            // darker for denser cells
            let shade = (255.0 * (1.0 - (1.0 + c as f64).ln() / (1.0 + max).ln())).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({shade},{shade},255)"/>"#,
                M + bx as f64 * cell,
                H - M - (by + 1) as f64 * cell
            );
        }
    }
    line(&mut out, &f, (d.range.0, d.range.0), (d.range.1, d.range.1), r#"stroke="red" stroke-dasharray="4 3""#);
    axes(&mut out, &f, xlabel, ylabel);
    let _ = writeln!(out, r#"<text x="{}" y="{}">r = {:.4}, n = {}</text>"#, M + 6.0, M + 14.0, d.pearson_r, d.n);
    out.push_str("</svg>\n");
    out
}

/// Scatter of `(x, y)` points with the unity line.
pub fn scatter_svg(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let all: Vec<f64> = points.iter().flat_map(|p| [p.0, p.1]).collect();
    let r = if all.is_empty() { (0.0, 1.0) } else { bounds(&all) };
    let f = Frame::new(r, r);
    let mut out = String::new();
    header(&mut out, title);
    line(&mut out, &f, (f.x.0, f.x.0), (f.x.1, f.x.1), r#"stroke="red" stroke-dasharray="4 3""#);
    for &(x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, f.px(x), f.py(y));
    }
    axes(&mut out, &f, xlabel, ylabel);
    out.push_str("</svg>\n");
    out
}

/// Differences against pair means, with the mean-difference and 95% limits
/// of agreement lines.
pub fn bland_altman_svg(means: &[f64], diffs: &[f64], ba: Option<&BlandAltman>, title: &str) -> String {
    let xr = if means.is_empty() { (0.0, 1.0) } else { bounds(means) };
    let mut ys = diffs.to_vec();
    if let Some(b) = ba {
        ys.extend([b.loa_low, b.loa_high, b.mean_diff]);
    }
    ys.push(0.0);
    let f = Frame::new(xr, bounds(&ys));
    let mut out = String::new();
    header(&mut out, title);
    line(&mut out, &f, (f.x.0, 0.0), (f.x.1, 0.0), r#"stroke="gray""#);
    if let Some(b) = ba {
        line(&mut out, &f, (f.x.0, b.mean_diff), (f.x.1, b.mean_diff), r#"stroke="black""#);
        for (v, name) in [(b.loa_low, "-1.96 SD"), (b.loa_high, "+1.96 SD")] {
            line(&mut out, &f, (f.x.0, v), (f.x.1, v), r#"stroke="red" stroke-dasharray="4 3""#);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="red">{name} {}</text>"#,
                W - M - 4.0,
                f.py(v) - 4.0,
                tick(v)
            );
        }
    }
    for (&x, &y) in means.iter().zip(diffs) {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, f.px(x), f.py(y));
    }
    axes(&mut out, &f, "mean of measurements", "difference (segmentation - reference)");
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bland_altman_has_limit_lines() {
        let ba = hips_core::metrics::bland_altman(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let svg = bland_altman_svg(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0], Some(&ba), "t");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(svg.contains("+1.96 SD 6.1") && svg.contains("-1.96 SD -0.1"));
    }

    #[test]
    fn degenerate_inputs_still_render() {
        assert!(scatter_svg(&[], "t", "x", "y").contains("</svg>"));
        assert!(scatter_svg(&[(2.0, 2.0)], "t", "x", "y").contains("<circle"));
        assert!(bland_altman_svg(&[], &[], None, "t").contains("</svg>"));
    }

    #[test]
    fn density_cells_and_unity_line() {
        let d = DensityPlotData {
            nbins: 2,
            range: (0.0, 1.0),
            counts: vec![3, 0, 0, 1],
            pearson_r: 1.0,
            rms_unity_deviation: 0.0,
            n: 4,
        };
        let svg = density_svg(&d, "a & b", "x", "y");
        assert_eq!(svg.matches("<rect").count(), 2 + 2);
        assert!(svg.contains("stroke=\"red\""));
        assert!(svg.contains("a &amp; b"));
    }
}
