//! Minimal static scatter plots.

use std::fmt::Write;

use ndarray::Array2;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 16.0;

/// Scatter of the first two columns of `points`, optionally over a grey
/// `reference` cloud. Both share one square frame.
pub fn scatter(points: &Array2<f64>, reference: Option<&Array2<f64>>) -> String {
    let layers: Vec<&Array2<f64>> = reference.into_iter().chain(Some(points)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in &layers {
        for v in m.iter().filter(|v| v.is_finite()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let k = (SIZE - 2.0 * MARGIN) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (layer, m) in layers.iter().enumerate() {
        let (class, fill) = if reference.is_some() && layer == 0 {
            ("reference", "#bbbbbb")
        } else {
            ("samples", "#1f5fa8")
        };
        let _ = writeln!(s, r#"<g class="{class}" fill="{fill}" fill-opacity="0.6">"#);
        for row in m.rows() {
            let (x, y) = (row[0], row[1]);
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let px = MARGIN + (x - lo) * k;
            let py = SIZE - MARGIN - (y - lo) * k;
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.5"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
