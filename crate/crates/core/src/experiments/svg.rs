//! Minimal standalone SVG writer for line plots and heat maps.

use std::fmt::Write;

use nalgebra::DMatrix;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(out: &mut String, lo: f64, hi: f64, vertical: bool) {
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        if vertical {
            let y = TOP + (H - TOP - BOTTOM) * (1.0 - i as f64 / 4.0);
            let _ = write!(
                out,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.3}</text>"#,
                LEFT - 4.0,
                LEFT - 6.0,
                y + 3.0
            );
        } else {
            let x = LEFT + (W - LEFT - RIGHT) * i as f64 / 4.0;
            let _ = write!(
                out,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{v:.3}</text>"#,
                H - BOTTOM,
                H - BOTTOM + 4.0,
                H - BOTTOM + 16.0
            );
        }
    }
}

pub fn line_plot(title: &str, x_label: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (x0, x1) = extent(xs.iter().copied());
    let (y0, y1) = extent(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * (H - TOP - BOTTOM);
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}"><rect width="100%" height="100%" fill="white"/><text x="{:.1}" y="18" font-size="14" text-anchor="middle">{}</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        escape(title)
    );
    let _ = write!(
        out,
        r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM,
        H - BOTTOM
    );
    ticks(&mut out, x0, x1, false);
    ticks(&mut out, y0, y1, true);
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        H - 6.0,
        escape(x_label)
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = write!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 16.0 * i as f64;
        let _ = write!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 34.0,
            ly + 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Blue-white-red diverging map over the symmetric range `[-m, m]`.
fn color(v: f64, m: f64) -> String {
    let t = if m > 0.0 { (v / m).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

pub fn heatmap(title: &str, xs: &[f64], matrix: &DMatrix<f64>) -> String {
    let n = matrix.nrows().max(1);
    let side = (H - TOP - BOTTOM).min(W - LEFT - RIGHT);
    let cell = side / n as f64;
    let m = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}"><rect width="100%" height="100%" fill="white"/><text x="{:.1}" y="18" font-size="14" text-anchor="middle">{}</text>"#,
        LEFT + side / 2.0,
        escape(title)
    );
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                LEFT + j as f64 * cell,
                TOP + i as f64 * cell,
                cell + 0.05,
                cell + 0.05,
                color(matrix[(i, j)], m)
            );
        }
    }
    if let (Some(first), Some(last)) = (xs.first(), xs.last()) {
        let _ = write!(
            out,
            r#"<text x="{LEFT}" y="{:.1}" font-size="10">{first:.3}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{last:.3}</text>"#,
            TOP + side + 14.0,
            LEFT + side,
            TOP + side + 14.0
        );
    }
    // colour bar
    for k in 0..=20 {
        let v = m * (1.0 - k as f64 / 10.0);
        let _ = write!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="14" height="{:.2}" fill="{}"/>"#,
            LEFT + side + 20.0,
            TOP + k as f64 * side / 21.0,
            side / 21.0 + 0.05,
            color(v, m)
        );
    }
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="10">{m:.3}</text><text x="{:.1}" y="{:.1}" font-size="10">{:.3}</text>"#,
        LEFT + side + 38.0,
        TOP + 8.0,
        LEFT + side + 38.0,
        TOP + side,
        -m
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_standalone_svg() {
        let s = line_plot(
            "a < b",
            "tau",
            &[0.0, 1.0, 2.0],
            &[("k".into(), vec![1.0, 0.5, f64::NAN])],
        );
        assert!(s.starts_with("<svg xmlns="));
        assert!(s.contains("a &lt; b"));
        assert!(s.contains("<polyline"));
        assert!(s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_has_one_cell_per_entry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]);
        let s = heatmap("cov", &[0.0, 1.0], &m);
        // four cells, 21 colour-bar swatches, one background
        assert_eq!(s.matches("<rect").count(), 4 + 21 + 1);
        assert!(s.contains("#ff0000"));
    }
}
