//! Static SVG line charts with a logarithmic y axis.

use std::fmt::Write;

const W: f64 = 800.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub label: String,
    pub values: &'a [f64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart(title: &str, times: &[f64], series: &[Series], markers: &[f64]) -> String {
    let (t0, t1) = (times.first().copied().unwrap_or(0.0), times.last().copied().unwrap_or(1.0));
    let positive = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0)) } else { (-1.0, 0.0) };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let span = (t1 - t0).max(f64::MIN_POSITIVE);
    let x = |t: f64| LEFT + (t - t0) / span * pw;
    let y = |v: f64| TOP + (hi - v.max(10f64.powf(lo)).log10()) / (hi - lo) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    for m in markers.iter().filter(|m| **m > t0 && **m < t1) {
        let _ = writeln!(svg, r##"<line x1="{0:.2}" y1="{TOP}" x2="{0:.2}" y2="{1}" stroke="#cccccc" stroke-width="0.6"/>"##, x(*m), TOP + ph);
    }
    let mut decade = lo;
    while decade <= hi {
        let yy = y(10f64.powf(decade));
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#eeeeee"/>"##, LEFT + pw);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{decade}</text>"#, LEFT - 6.0, yy + 4.0);
        decade += 1.0;
    }
    for k in 0..=5 {
        let t = t0 + span * k as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{t:.2}</text>"#, x(t), TOP + ph + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">time [s]</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(svg, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##);

    let stride = (times.len() / MAX_POINTS).max(1);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        for k in (0..times.len()).step_by(stride).chain(std::iter::once(times.len().saturating_sub(1))) {
            if let Some(v) = s.values.get(k).filter(|v| v.is_finite()) {
                let _ = write!(pts, "{:.2},{:.2} ", x(times[k]), y(*v));
            }
        }
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.4" points="{}"/>"#, pts.trim_end());
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, LEFT + pw - 150.0, LEFT + pw - 130.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, LEFT + pw - 125.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        let svg = line_chart("a < b", &t, &[Series { label: "d".into(), values: &v }], &[1.0, 2.0]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("stroke=\"#cccccc\"").count(), 2);
    }
}
