//! Minimal SVG rendering of a figure CSV. Reads only the CSV text.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Parsed {
    title: String,
    columns: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

fn parse(csv: &str) -> Parsed {
    let mut title = String::new();
    let mut columns = vec![];
    let mut rows = vec![];
    for line in csv.lines() {
        if let Some(c) = line.strip_prefix('#') {
            if title.is_empty() {
                title = c.trim().to_string();
            }
        } else if columns.is_empty() {
            columns = line.split(',').map(|s| s.trim().to_string()).collect();
        } else if !line.trim().is_empty() {
            rows.push(line.split(',').map(|s| s.trim().parse::<f64>().ok()).collect());
        }
    }
    Parsed { title, columns, rows }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-300 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Renders every column after the first against the first. Columns named
/// `<x>_sigma` become error bars on `<x>`; columns with Monte Carlo or
/// count data are drawn as markers, the rest as lines.
pub fn render_svg(csv: &str) -> String {
    let p = parse(csv);
    let n_cols = p.columns.len();
    let cell = |r: &Vec<Option<f64>>, k: usize| r.get(k).copied().flatten();
    let series: Vec<usize> = (1..n_cols).filter(|&k| !p.columns[k].ends_with("_sigma")).collect();
    let sigma_of = |k: usize| p.columns.iter().position(|c| *c == format!("{}_sigma", p.columns[k]));
    let (x0, x1) = range(p.rows.iter().filter_map(|r| cell(r, 0)));
    let (y0, y1) = range(series.iter().flat_map(|&k| {
        let s = sigma_of(k);
        p.rows.iter().flat_map(move |r| {
            let v = cell(r, k);
            let e = s.and_then(|j| cell(r, j)).unwrap_or(0.0);
            [v.map(|v| v - e), v.map(|v| v + e)].into_iter().flatten()
        })
    }));
    let (ml, mr, mt, mb) = MARGIN;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (W - ml - mr);
    let sy = |y: f64| H - mb - (y - y0) / (y1 - y0) * (H - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(&p.title));
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - ml - mr, H - mt - mb);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#, sx(fx), H - mb + 16.0, fx);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3e}</text>"#, ml - 4.0, sy(fy) + 4.0, fy);
    }
    if let Some(xl) = p.columns.first() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xl));
    }
    for (ci, &k) in series.iter().enumerate() {
        let color = COLORS[ci % COLORS.len()];
        let name = &p.columns[k];
        let markers = name.contains("mc") || name.contains("counts");
        let pts: Vec<(f64, f64, Option<f64>)> = p
            .rows
            .iter()
            .filter_map(|r| Some((cell(r, 0)?, cell(r, k)?, sigma_of(k).and_then(|j| cell(r, j)))))
            .collect();
        if markers {
            for &(x, y, e) in &pts {
                if let Some(e) = e {
                    let _ = writeln!(s, r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{color}"/>"#, sx(x), sy(y - e), sy(y + e));
                }
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
            }
        } else if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|&(x, y, _)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#, ml + 8.0, mt + 14.0 + 14.0 * ci as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
