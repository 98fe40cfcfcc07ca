//! Hand-written SVG reward curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::run::MetricsRow;
use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Windowed-mean return of one method, aggregated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub method: String,
    /// Episode index at the end of each window.
    pub episodes: Vec<usize>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

fn sliding_mean(xs: &[f64], window: usize) -> Vec<f64> {
    if xs.len() < window {
        return Vec::new();
    }
    let mut sum: f64 = xs[..window].iter().sum();
    let mut out = vec![sum / window as f64];
    for i in window..xs.len() {
        sum += xs[i] - xs[i - window];
        out.push(sum / window as f64);
    }
    out
}

type Point = (usize, f64);

/// One curve per method. Seeds that stopped early contribute only to the
/// windows they cover.
pub fn curves(rows: &[MetricsRow], window: usize) -> Result<Vec<Curve>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    // method → seed → (episode, return)
    let mut by_method: BTreeMap<&str, BTreeMap<u64, Vec<Point>>> = BTreeMap::new();
    for r in rows {
        by_method
            .entry(&r.method)
            .or_default()
            .entry(r.seed)
            .or_default()
            .push((r.episode, r.episode_return));
    }
    let mut out = Vec::new();
    for (method, seeds) in by_method {
        let series: Vec<Vec<f64>> = seeds
            .into_values()
            .map(|mut v| {
                v.sort_by_key(|&(e, _)| e);
                sliding_mean(&v.into_iter().map(|(_, r)| r).collect::<Vec<_>>(), window)
            })
            .collect();
        let len = series.iter().map(Vec::len).max().unwrap_or(0);
        if len == 0 {
            return Err(Error::InvalidArgument(format!(
                "method `{method}` has fewer than {window} episodes"
            )));
        }
        let mut c = Curve {
            method: method.to_string(),
            episodes: Vec::with_capacity(len),
            mean: Vec::with_capacity(len),
            min: Vec::with_capacity(len),
            max: Vec::with_capacity(len),
        };
        for i in 0..len {
            let vals: Vec<f64> = series.iter().filter_map(|s| s.get(i).copied()).collect();
            c.episodes.push(i + window);
            c.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
            c.min.push(vals.iter().copied().fold(f64::INFINITY, f64::min));
            c.max.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        out.push(c);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no metrics to plot".into()));
    }
    Ok(out)
}

/// Tick spacing from {1, 2, 5}·10^k giving roughly `target` intervals.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 5.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Renders the curves as an 800×500 SVG line chart with min–max bands.
pub fn render_svg(curves: &[Curve], title: &str) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no curves to plot".into()));
    }
    let x_lo = curves.iter().map(|c| c.episodes[0]).min().unwrap_or(0) as f64;
    let x_hi = curves.iter().map(|c| *c.episodes.last().unwrap_or(&0)).max().unwrap_or(0) as f64;
    let mut y_lo = curves.iter().flat_map(|c| &c.min).copied().fold(f64::INFINITY, f64::min);
    let mut y_hi = curves.iter().flat_map(|c| &c.max).copied().fold(f64::NEG_INFINITY, f64::max);
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let (x_hi, x_lo) = if x_hi > x_lo { (x_hi, x_lo) } else { (x_lo + 1.0, x_lo) };
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (WIDTH - LEFT - RIGHT);
    let py = |y: f64| HEIGHT - BOTTOM - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{title}</text>"#, WIDTH / 2.0);
    let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{TOP}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for t in ticks(x_lo, x_hi) {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y_lo, y_hi) {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">windowed return</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0
    );

    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut band = String::new();
        for (e, v) in c.episodes.iter().zip(&c.max) {
            let _ = write!(band, "{:.2},{:.2} ", px(*e as f64), py(*v));
        }
        for (e, v) in c.episodes.iter().zip(&c.min).rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(*e as f64), py(*v));
        }
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let mut d = String::new();
        for (i, (e, v)) in c.episodes.iter().zip(&c.mean).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, px(*e as f64), py(*v));
        }
        let _ = writeln!(
            s,
            r#"<path class="curve" data-method="{}" d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            c.method
        );
        let ly = TOP + 8.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            WIDTH - RIGHT - 110.0,
            ly - 4.0,
            WIDTH - RIGHT - 92.0,
            ly,
            c.method
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads metrics rows and renders them.
pub fn plot_curves(rows: &[MetricsRow], window: usize, title: &str) -> Result<String> {
    render_svg(&curves(rows, window)?, title)
}
