//! CSV and SVG output for evaluation curves and bias indicators.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{BiasIndicatorSeries, EvaluationCurve};

/// Formats `v` with 6 significant digits, like C's `%.6g`.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".to_string() } else { v.to_string() };
    }
    let exponent = v.abs().log10().floor() as i32;
    // rounding can carry into the next decade, re-derive from the scientific form
    let sci = format!("{v:.5e}");
    let exponent = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse::<i32>().ok())
        .unwrap_or(exponent);
    if (-4..6).contains(&exponent) {
        let decimals = (5 - exponent).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let (mantissa, exp) = sci.split_once('e').expect("scientific format");
        let exp: i32 = exp.parse().expect("exponent");
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), sign, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn curves_to_csv(curves: &[EvaluationCurve]) -> Result<String> {
    if let Some(first) = curves.first() {
        if curves.iter().any(|c| c.eta != first.eta) {
            return Err(Error::GridMismatch);
        }
    }
    let mut out = String::from("eta");
    for c in curves {
        write!(out, ",{0}_mean,{0}_stderr", c.name).unwrap();
    }
    out.push('\n');
    let Some(first) = curves.first() else {
        return Ok(out);
    };
    for (i, &eta) in first.eta.iter().enumerate() {
        out.push_str(&format_g6(eta));
        for c in curves {
            write!(
                out,
                ",{},{}",
                format_g6(c.acc_mean[i]),
                format_g6(c.acc_stderr[i])
            )
            .unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_curve_csv(curves: &[EvaluationCurve], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = curves_to_csv(curves)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Header `eta,<name>_gamma,...`, one row per grid point.
pub fn gamma_to_csv(series: &[(String, BiasIndicatorSeries)]) -> Result<String> {
    if let Some((_, first)) = series.first() {
        if series.iter().any(|(_, s)| s.eta != first.eta) {
            return Err(Error::GridMismatch);
        }
    }
    let mut out = String::from("eta");
    for (name, _) in series {
        write!(out, ",{name}_gamma").unwrap();
    }
    out.push('\n');
    let Some((_, first)) = series.first() else {
        return Ok(out);
    };
    for (i, &eta) in first.eta.iter().enumerate() {
        out.push_str(&format_g6(eta));
        for (_, s) in series {
            write!(out, ",{}", format_g6(s.gamma[i])).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone line plot of accuracy against the grid, one polyline per curve.
pub fn curves_to_svg(curves: &[EvaluationCurve], title: &str) -> Result<String> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    if let Some(first) = curves.first() {
        if curves.iter().any(|c| c.eta != first.eta) {
            return Err(Error::GridMismatch);
        }
    }
    let eta = curves.first().map(|c| c.eta.clone()).unwrap_or_default();
    let (x_lo, x_hi) = match (eta.first(), eta.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (0.0, 1.0),
    };
    let values = curves.iter().flat_map(|c| c.acc_mean.iter().copied());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (y_lo, y_hi) = if lo.is_finite() && hi > lo {
        ((lo * 10.0).floor() / 10.0, (hi * 10.0).ceil() / 10.0)
    } else {
        (0.0, 1.0)
    };
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y_lo) / (y_hi - y_lo) * (H - TOP - BOTTOM);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape_xml(title)).unwrap();
    let (x0, x1, y0, y1) = (px(x_lo), px(x_hi), py(y_lo), py(y_hi));
    writeln!(out, r#"<path d="M{x0:.1},{y1:.1}V{y0:.1}H{x1:.1}" fill="none" stroke="black"/>"#).unwrap();
    for &e in &eta {
        let x = px(e);
        writeln!(out, r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 4.0).unwrap();
        writeln!(out, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 18.0, format_g6(e)).unwrap();
    }
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = py(v);
        writeln!(out, r##"<line x1="{:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#dddddd"/>"##, x0).unwrap();
        writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, format_g6((v * 1e6).round() / 1e6)).unwrap();
    }
    writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">fraction</text>"#, (x0 + x1) / 2.0, H - 10.0).unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
    .unwrap();
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = c
            .eta
            .iter()
            .zip(&c.acc_mean)
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, points.join(" ")).unwrap();
        let ly = TOP + 18.0 * i as f64;
        writeln!(out, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/>"#, W - RIGHT + 15.0, W - RIGHT + 35.0).unwrap();
        writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - RIGHT + 40.0, ly + 4.0, escape_xml(&c.name)).unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}
