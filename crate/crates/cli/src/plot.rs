//! Minimal SVG line plot of coverage-risk curves.

use std::fmt::Write;

use zksense::calibrate::CoverageRiskCurve;

const W: f64 = 480.0;
const H: f64 = 360.0;
const M: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Risk (y) against coverage (x), one polyline per named curve.
pub fn coverage_risk_svg(curves: &[(&str, &CoverageRiskCurve)]) -> String {
    let y_max = curves
        .iter()
        .flat_map(|(_, c)| c.points.iter().map(|p| p.risk))
        .fold(0.05f64, f64::max)
        .min(1.0);
    let px = |cov: f64| M + cov * (W - 2.0 * M);
    let py = |risk: f64| H - M - risk / y_max * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y0} H{x1} M{x0} {y0} V{y1}" stroke="black" fill="none"/>"#,
        x0 = M,
        y0 = H - M,
        x1 = W - M,
        y1 = M
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{f:.2}</text>"#, px(f), H - M + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#, M - 6.0, py(f * y_max) + 4.0, f * y_max);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">coverage</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">selective risk</text>"#, H / 2.0, H / 2.0);
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .filter(|p| p.coverage > 0.0)
            .map(|p| format!("{:.2},{:.2}", px(p.coverage), py(p.risk)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" fill="{color}">{name}</text>"#, M + 10.0, M + 16.0 * (i as f64 + 1.0));
    }
    s.push_str("</svg>\n");
    s
}
