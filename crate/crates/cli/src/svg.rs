//! Static SVG scatter plots of real and generated samples.

use std::fmt::Write;

use introlab::Matrix;

const SIZE: f64 = 560.0;
const MARGIN: f64 = 60.0;
const EXTENT: f64 = 4.0;
pub const REAL_COLOR: &str = "#1f77b4";
pub const GENERATED_COLOR: &str = "#d62728";

fn px(v: f64) -> f64 {
    MARGIN + (v + EXTENT) / (2.0 * EXTENT) * SIZE
}

fn py(v: f64) -> f64 {
    MARGIN + (EXTENT - v) / (2.0 * EXTENT) * SIZE
}

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Scatter of two point clouds on fixed axes `[-4, 4]^2`. Points outside the
/// axes are dropped.
pub fn scatter(title: &str, description: &str, real: &Matrix, generated: &Matrix) -> String {
    let total = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, "<desc>{}</desc>", escape(description));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{total}" height="{total}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        total / 2.0,
        MARGIN / 2.0,
        escape(title)
    );

    let _ = writeln!(s, r##"<g id="axes" stroke="#444" stroke-width="1" fill="none">"##);
    let _ = writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}"/>"#);
    let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke-dasharray="3,3"/>"#, px(0.0), py(-EXTENT), px(0.0), py(EXTENT));
    let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke-dasharray="3,3"/>"#, px(-EXTENT), py(0.0), px(EXTENT), py(0.0));
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g id="ticks" font-family="sans-serif" font-size="11" fill="#222">"##);
    for t in [-4, -2, 0, 2, 4] {
        let v = t as f64;
        let bottom = MARGIN + SIZE;
        let _ = writeln!(s, r##"<line x1="{x}" y1="{bottom}" x2="{x}" y2="{}" stroke="#444"/>"##, bottom + 5.0, x = px(v));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, px(v), bottom + 18.0);
        let _ = writeln!(s, r##"<line x1="{}" y1="{y}" x2="{MARGIN}" y2="{y}" stroke="#444"/>"##, MARGIN - 5.0, y = py(v));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, MARGIN - 8.0, py(v) + 4.0);
    }
    let _ = writeln!(s, "</g>");

    for (id, color, points) in [("real", REAL_COLOR, real), ("generated", GENERATED_COLOR, generated)] {
        let _ = writeln!(s, r#"<g id="{id}" fill="{color}" fill-opacity="0.45">"#);
        for row in points.outer_iter() {
            let (x, y) = (row[0], row[1]);
            if (-EXTENT..=EXTENT).contains(&x) && (-EXTENT..=EXTENT).contains(&y) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.3"/>"#, px(x), py(y));
            }
        }
        let _ = writeln!(s, "</g>");
    }

    let lx = MARGIN + 12.0;
    let ly = MARGIN + 12.0;
    let _ = writeln!(s, r#"<g id="legend" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r##"<rect x="{lx}" y="{ly}" width="110" height="46" fill="white" fill-opacity="0.85" stroke="#888"/>"##);
    for (k, (label, color)) in [("real", REAL_COLOR), ("generated", GENERATED_COLOR)].into_iter().enumerate() {
        let y = ly + 15.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{y}" r="5" fill="{color}"/>"#, lx + 12.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, lx + 24.0, y + 4.0);
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
