//! Self-contained SVG chart: mean accuracy and cumulative total cost per
//! round, side by side.

use std::fmt::Write;

const W: f64 = 360.0;
const H: f64 = 240.0;
const PAD: f64 = 40.0;

fn panel(out: &mut String, x0: f64, title: &str, ys: &[f64], color: &str) {
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let n = ys.len().max(2) - 1;
    let px = |i: usize| x0 + PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
    let py = |y: f64| H - PAD - (H - 2.0 * PAD) * (y - lo) / (hi - lo);
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        x0 + PAD,
        PAD,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(out, r##"<text x="{}" y="{}" font-size="12" text-anchor="middle">{title}</text>"##, x0 + W / 2.0, PAD - 12.0);
    let _ = writeln!(out, r##"<text x="{}" y="{}" font-size="10" text-anchor="end">{hi:.3}</text>"##, x0 + PAD - 4.0, PAD + 4.0);
    let _ = writeln!(out, r##"<text x="{}" y="{}" font-size="10" text-anchor="end">{lo:.3}</text>"##, x0 + PAD - 4.0, H - PAD);
    let _ = writeln!(out, r##"<text x="{}" y="{}" font-size="10" text-anchor="middle">round</text>"##, x0 + W / 2.0, H - PAD + 16.0);
    let points: Vec<String> = ys.iter().enumerate().map(|(i, &y)| format!("{:.2},{:.2}", px(i), py(y))).collect();
    let _ = writeln!(out, r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##, points.join(" "));
}

pub fn render(avg_acc: &[f64], cum_cost_mj: &[f64]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" viewBox="0 0 {} {H}" font-family="sans-serif">"##,
        2.0 * W,
        2.0 * W
    );
    panel(&mut out, 0.0, "mean test accuracy", avg_acc, "#1f77b4");
    panel(&mut out, W, "cumulative total cost (MJ)", cum_cost_mj, "#d62728");
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_both_series() {
        let svg = render(&[0.1, 0.5, 0.7], &[1.0, 2.0, 3.0]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(render(&[], &[]).ends_with("</svg>\n"));
    }
}
