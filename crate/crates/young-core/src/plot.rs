//! Minimal SVG line and bar plots for the report directory.

use std::fmt::Write as _;

use crate::stats::Estimate;
use crate::tail::TailReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if lo.is_finite() && hi > lo {
                (lo, hi)
            } else if lo.is_finite() {
                (lo - 1.0, lo + 1.0)
            } else {
                (0.0, 1.0)
            }
        };
        Frame {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
        s += "\n";
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
        let _ = writeln!(
            s,
            r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
            H - PAD,
            W - PAD
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 12.0);
        let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{ylabel}</text>"#, H / 2.0, H / 2.0);
        for (v, anchor, x, y) in [
            (self.x.0, "start", PAD, H - PAD + 16.0),
            (self.x.1, "end", W - PAD, H - PAD + 16.0),
        ] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        for (v, y) in [(self.y.0, H - PAD), (self.y.1, PAD)] {
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0);
        }
        s
    }

    fn polyline(&self, pts: &[(f64, f64)], color: &str) -> String {
        let d: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        format!("<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"/>\n", d.join(" "))
    }
}

/// Natural log of the tail with its fitted line.
pub fn tail_plot(title: &str, t: &TailReport) -> String {
    let data: Vec<(f64, f64)> = t.mass.iter().enumerate().map(|(n, m)| (n as f64, m.ln())).collect();
    let fit: Vec<(f64, f64)> = (t.fit_lo..t.mass.len()).map(|n| (n as f64, t.fit.value(n as f64).ln())).collect();
    let f = Frame::new(data.iter().map(|p| p.0), data.iter().chain(&fit).map(|p| p.1));
    let mut s = f.open(title, "n", "ln mass");
    s += &f.polyline(&data, "steelblue");
    s += &f.polyline(&fit, "firebrick");
    s + "</svg>\n"
}

/// Histogram of normalised block sums against the standard normal density.
pub fn histogram_plot(h: &[(f64, f64, f64)]) -> String {
    let f = Frame::new(h.iter().map(|p| p.0), h.iter().flat_map(|p| [0.0, p.1, p.2]));
    let mut s = f.open("normalised Birkhoff sums", "z", "density");
    let w = if h.len() > 1 { h[1].0 - h[0].0 } else { 1.0 };
    for &(x, d, _) in h {
        let (x0, x1) = (f.px(x - 0.5 * w), f.px(x + 0.5 * w));
        let (y0, y1) = (f.py(d), f.py(0.0));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="lightsteelblue"/>"#,
            x1 - x0,
            y1 - y0
        );
    }
    let normal: Vec<(f64, f64)> = h.iter().map(|p| (p.0, p.2)).collect();
    s += &f.polyline(&normal, "firebrick");
    s + "</svg>\n"
}

/// Correlation estimates with ±3 standard-error bands.
pub fn correlation_plot(c: &[Estimate]) -> String {
    let f = Frame::new(
        c.iter().map(|e| e.n as f64),
        c.iter().flat_map(|e| [e.estimate - 3.0 * e.error, e.estimate + 3.0 * e.error]),
    );
    let mut s = f.open("correlation", "lag", "estimate");
    let band = |k: f64| c.iter().map(|e| (e.n as f64, e.estimate + k * e.error)).collect::<Vec<_>>();
    s += &f.polyline(&band(-3.0), "lightgray");
    s += &f.polyline(&band(3.0), "lightgray");
    s += &f.polyline(&band(0.0), "steelblue");
    s + "</svg>\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_closed_svg() {
        let c = vec![
            Estimate { n: 1, estimate: 0.1, error: 0.01 },
            Estimate { n: 2, estimate: 0.05, error: 0.01 },
        ];
        let s = correlation_plot(&c);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(histogram_plot(&[]).contains("</svg>"));
    }
}
