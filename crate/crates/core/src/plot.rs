//! Plot output: a two-column text block or a standalone SVG line plot.

use std::fmt::Write as _;

/// `# time_us signal` followed by one whitespace-separated row per sample.
pub fn plot_data(times: &[f64], values: &[f64]) -> String {
    let mut out = String::from("# time_us signal\n");
    for (t, v) in times.iter().zip(values) {
        let _ = writeln!(out, "{t} {v}");
    }
    out
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

/// Round tick step giving roughly `target` intervals over `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(hi - lo, 5.0);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Self-contained SVG of a single line with axes labelled `time_us` and `signal`.
pub fn svg_line_plot(times: &[f64], values: &[f64], title: &str) -> String {
    let (mut x0, mut x1) = times.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let (mut y0, mut y1) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |t: f64| MARGIN_L + (t - x0) / (x1 - x0) * pw;
    let sy = |v: f64| MARGIN_T + (1.0 - (v - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{b2}" stroke="black"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{t}</text>"#,
            b = MARGIN_T + ph,
            b2 = MARGIN_T + ph + 5.0,
            ty = MARGIN_T + ph + 18.0,
            t = fmt_tick(t)
        );
    }
    for v in ticks(y0, y1) {
        let y = sy(v);
        let _ = writeln!(
            s,
            r#"<line x1="{a}" y1="{y:.2}" x2="{MARGIN_L}" y2="{y:.2}" stroke="black"/><text x="{tx}" y="{yy:.2}" text-anchor="end">{v}</text>"#,
            a = MARGIN_L - 5.0,
            tx = MARGIN_L - 8.0,
            yy = y + 4.0,
            v = fmt_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">time_us</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{c}" text-anchor="middle" transform="rotate(-90 16 {c})">signal</text>"#,
        c = MARGIN_T + ph / 2.0
    );
    s.push_str(r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points=""##);
    for (i, (&t, &v)) in times.iter().zip(values).enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.2},{:.2}", sx(t), sy(v));
    }
    s.push_str("\"/>\n</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
