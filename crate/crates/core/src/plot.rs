//! Static SVG charts: signed horizontal bars and multi-series lines.

use std::fmt::Write as _;

pub const POSITIVE: (u8, u8, u8) = (214, 39, 40);
pub const NEGATIVE: (u8, u8, u8) = (31, 119, 180);

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn rgb((r, g, b): (u8, u8, u8)) -> String {
    format!("rgb({r},{g},{b})")
}

/// One bar per item, drawn left of the axis when negative.
pub fn bar_chart(title: &str, items: &[(String, f64)]) -> String {
    let row = 18.0;
    let label_w = 170.0;
    let plot_w = 420.0;
    let top = 34.0;
    let height = top + row * items.len().max(1) as f64 + 20.0;
    let width = label_w + plot_w + 90.0;
    let max = items.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    let any_negative = items.iter().any(|(_, v)| *v < 0.0);
    let axis = if any_negative { label_w + plot_w / 2.0 } else { label_w };
    let span = if any_negative { plot_w / 2.0 } else { plot_w };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="8" y="18" font-size="13">{}</text>"#, escape(title));
    for (i, (label, v)) in items.iter().enumerate() {
        let y = top + row * i as f64;
        let len = if max > 0.0 { v.abs() / max * span } else { 0.0 };
        let x = if *v < 0.0 { axis - len } else { axis };
        let color = if *v < 0.0 { NEGATIVE } else { POSITIVE };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            label_w - 6.0,
            y + 12.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.1}" width="{len:.2}" height="{:.1}" fill="{}"/>"#,
            y + 2.0,
            row - 4.0,
            rgb(color)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{v:.4}</text>"#,
            label_w + plot_w + 6.0,
            y + 12.0
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{axis:.1}" y1="{top}" x2="{axis:.1}" y2="{:.1}" stroke="#444"/>"##,
        height - 20.0
    );
    s.push_str("</svg>\n");
    s
}

pub struct Series<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
    pub color: &'a str,
}

/// Lines over a shared x axis labeled by `x_labels` (first and last shown).
pub fn line_chart(title: &str, x_labels: &[String], series: &[Series]) -> String {
    let (width, height) = (760.0, 340.0);
    let (left, right, top, bottom) = (60.0, 20.0, 34.0, 40.0);
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let px = |i: usize| left + (width - left - right) * i as f64 / (n.max(2) - 1) as f64;
    let py = |v: f64| top + (height - top - bottom) * (hi - v) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="8" y="18" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        width - left - right,
        height - top - bottom
    );
    let _ = writeln!(s, r#"<text x="4" y="{:.1}">{hi:.1}</text>"#, top + 10.0);
    let _ = writeln!(s, r#"<text x="4" y="{:.1}">{lo:.1}</text>"#, height - bottom);
    if let (Some(first), Some(last)) = (x_labels.first(), x_labels.last()) {
        let _ = writeln!(s, r#"<text x="{left}" y="{:.1}">{}</text>"#, height - 22.0, escape(first));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            width - right,
            height - 22.0,
            escape(last)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let mut pts = String::new();
        for (i, v) in ser.values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let _ = write!(pts, "{:.2},{:.2} ", px(i), py(*v));
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            pts.trim_end(),
            ser.color
        );
        let ly = height - 8.0;
        let lx = left + 140.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.1}" width="12" height="3" fill="{}"/><text x="{:.1}" y="{ly}">{}</text>"#,
            ly - 4.0,
            ser.color,
            lx + 16.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
