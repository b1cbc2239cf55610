//! Minimal standalone SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 52.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// One line with an optional `(x, low, high)` band.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub band: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Category names at integer x positions; dots instead of lines when set.
    pub categories: Vec<String>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    }
}

impl Chart {
    /// Number of distinct x positions that carry a marker or vertex.
    pub fn x_positions(&self) -> usize {
        let mut xs: Vec<u64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0.to_bits())).collect();
        xs.sort_unstable();
        xs.dedup();
        xs.len()
    }

    pub fn render(&self) -> String {
        let dots = !self.categories.is_empty();
        let (x0, x1) = if dots {
            (-0.5, self.categories.len() as f64 - 0.5)
        } else {
            extent(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)))
        };
        let (y0, y1) = extent(self.series.iter().flat_map(|s| {
            s.points
                .iter()
                .map(|p| p.1)
                .chain(s.band.iter().flat_map(|b| [b.1, b.2]))
        }));
        let pw = W - PAD_L - PAD_R;
        let ph = H - PAD_T - PAD_B;
        let sx = |x: f64| PAD_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| PAD_T + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, PAD_L + pw / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{PAD_L}" y="{PAD_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let y = y0 + (y1 - y0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                PAD_L - 6.0,
                sy(y) + 4.0,
                fmt_tick(y)
            );
        }
        if dots {
            for (i, c) in self.categories.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                    sx(i as f64),
                    H - PAD_B + 18.0,
                    esc(c)
                );
            }
        } else {
            for i in 0..=4 {
                let x = x0 + (x1 - x0) * i as f64 / 4.0;
                let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(x), H - PAD_B + 18.0, fmt_tick(x));
            }
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, PAD_L + pw / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            PAD_T + ph / 2.0,
            PAD_T + ph / 2.0,
            esc(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            if !series.band.is_empty() {
                let mut pts: Vec<String> = series.band.iter().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.2))).collect();
                pts.extend(series.band.iter().rev().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.1))));
                let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
            }
            if dots {
                for p in &series.points {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, sx(p.0), sy(p.1));
                }
            } else {
                let pts: Vec<String> = series.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
            }
            let ly = PAD_T + 16.0 * k as f64 + 8.0;
            let lx = W - PAD_R + 12.0;
            let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/>"#, ly - 8.0);
            let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 14.0, esc(&series.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_plot_has_one_position_per_category() {
        let cats: Vec<String> = (1..=5).map(|i| format!("stage{i}")).collect();
        let chart = Chart {
            title: "CKA <by> stage".into(),
            categories: cats.clone(),
            series: vec![Series {
                name: "seed 0".into(),
                points: (0..5).map(|i| (i as f64, 1.0 - 0.1 * i as f64)).collect(),
                band: Vec::new(),
            }],
            ..Chart::default()
        };
        assert_eq!(chart.x_positions(), 5);
        let svg = chart.render();
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(svg.contains("CKA &lt;by&gt; stage"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
