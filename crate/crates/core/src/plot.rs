//! SVG rendering of 2-D scatter exports and similarity heat maps, plus the
//! CSV formats those plots are drawn from.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// One projected sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut s = String::from("pc1,pc2,label\n");
    for p in points {
        let _ = writeln!(s, "{:?},{:?},{}", p.x, p.y, p.label);
    }
    s
}

pub fn parse_scatter_csv(text: &str) -> Result<Vec<ScatterPoint>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "pc1,pc2,label" => {}
        other => return Err(Error::Parse(format!("scatter header {other:?}"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("scatter row {}: `{line}`", n + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let x: f64 = f[0].trim().parse().map_err(|_| bad())?;
        let y: f64 = f[1].trim().parse().map_err(|_| bad())?;
        let label: usize = f[2].trim().parse().map_err(|_| bad())?;
        if !x.is_finite() || !y.is_finite() {
            return Err(bad());
        }
        out.push(ScatterPoint { x, y, label });
    }
    Ok(out)
}

/// Matrix as CSV with a header of column indices and a leading row-index column.
pub fn similarity_csv(m: &Matrix) -> String {
    let mut s = String::from("row");
    for k in 0..m.cols() {
        let _ = write!(s, ",{k}");
    }
    s.push('\n');
    for (i, r) in m.iter_rows().enumerate() {
        let _ = write!(s, "{i}");
        for v in r {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_similarity_csv(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("similarity CSV is empty".into()))?;
    let cols = header.split(',').count().saturating_sub(1);
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols + 1 {
            return Err(Error::Parse(format!(
                "similarity row {n}: {} fields, expected {}",
                f.len(),
                cols + 1
            )));
        }
        let vals = f[1..]
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("similarity row {n}: {e}")))?;
        rows.push(vals);
    }
    if rows.is_empty() || cols == 0 {
        return Err(Error::Parse("similarity CSV has no cells".into()));
    }
    Matrix::from_rows(&rows)
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Class-coloured scatter plot with a legend and PC1/PC2 axes.
pub fn scatter_svg(points: &[ScatterPoint], title: &str) -> Result<String> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("scatter plot needs at least one point".into()));
    }
    let (w, h, margin) = (520.0, 480.0, 50.0);
    let plot_w = w - 2.0 * margin - 90.0;
    let plot_h = h - 2.0 * margin;
    let (x0, x1) = bounds(points.iter().map(|p| p.x));
    let (y0, y1) = bounds(points.iter().map(|p| p.y));
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| margin + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        margin + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">PC1</text>"#,
        margin + plot_w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">PC2</text>"#,
        margin + plot_h / 2.0,
        margin + plot_h / 2.0
    );
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            sx(p.x),
            sy(p.y),
            PALETTE[p.label % PALETTE.len()]
        );
    }
    let mut classes: Vec<usize> = points.iter().map(|p| p.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let lx = margin + plot_w + 15.0;
    for (i, c) in classes.iter().enumerate() {
        let ly = margin + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{lx}" cy="{ly}" r="5" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">class {c}</text>"#,
            PALETTE[c % PALETTE.len()],
            lx + 10.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Grey level (0 = black, 255 = white) for a value in [lo, hi]; larger values are darker.
pub fn shade(v: f64, lo: f64, hi: f64) -> u8 {
    let t = if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (255.0 * (1.0 - t)).round() as u8
}

/// Grayscale heat map of a matrix with values in [-1, 1], with row/column labels.
pub fn heatmap_svg(m: &Matrix, title: &str) -> Result<String> {
    if m.is_empty() {
        return Err(Error::InvalidArgument("heat map of an empty matrix".into()));
    }
    let cell = 14.0;
    let (left, top) = (40.0, 50.0);
    let w = left + cell * m.cols() as f64 + 20.0;
    let h = top + cell * m.rows() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="18" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    for k in 0..m.cols() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="7" text-anchor="middle">{k}</text>"#,
            left + cell * (k as f64 + 0.5),
            top - 4.0
        );
    }
    for i in 0..m.rows() {
        let y = top + cell * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="7" text-anchor="end">{i}</text>"#,
            left - 4.0,
            y + cell * 0.7
        );
        for k in 0..m.cols() {
            let g = shade(m[(i, k)], -1.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>"#,
                left + cell * k as f64
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_round_trip() {
        let pts = vec![
            ScatterPoint {
                x: 0.1,
                y: -2.5,
                label: 0,
            },
            ScatterPoint {
                x: 3.0,
                y: 1e-9,
                label: 2,
            },
        ];
        assert_eq!(parse_scatter_csv(&scatter_csv(&pts)).unwrap(), pts);
        assert!(parse_scatter_csv("a,b\n").is_err());
    }

    #[test]
    fn scatter_svg_has_one_circle_per_point_plus_legend() {
        let pts: Vec<_> = (0..9)
            .map(|i| ScatterPoint {
                x: i as f64,
                y: (i * i) as f64,
                label: i % 3,
            })
            .collect();
        let svg = scatter_svg(&pts, "features").unwrap();
        assert_eq!(svg.matches("<circle").count(), 9 + 3);
        assert!(svg.contains(">PC1<") && svg.contains(">PC2<") && svg.contains("class 2"));
        assert_eq!(svg, scatter_svg(&pts, "features").unwrap());
    }

    #[test]
    fn similarity_round_trip_and_empty() {
        let m = Matrix::from_rows(&[vec![0.5, -1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(parse_similarity_csv(&similarity_csv(&m)).unwrap(), m);
        assert!(parse_similarity_csv("").is_err());
        assert!(parse_similarity_csv("row,0\n").is_err());
    }

    #[test]
    fn shade_is_monotone() {
        let mut prev = 256u16;
        for i in 0..=100 {
            let g = shade(-1.0 + i as f64 * 0.02, -1.0, 1.0) as u16;
            assert!(g <= prev);
            prev = g;
        }
        assert_eq!(shade(-1.0, -1.0, 1.0), 255);
        assert_eq!(shade(1.0, -1.0, 1.0), 0);
    }
}
