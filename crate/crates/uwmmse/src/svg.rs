//! Static SVG figures: margin histogram and per-method box plot.
//!
//! Output depends only on the inputs; numbers are printed with fixed
//! precision so identical inputs give identical bytes.

use std::fmt::Write;

use uwmmse_core::stability::Histogram;

use crate::error::{Result, RunError};
use crate::stats::Summary;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 60.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <title>{}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n",
        escape(title)
    );
}

fn axes(out: &mut String) {
    let (x0, y0, x1, y1) = (LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, TOP);
    let _ = writeln!(
        out,
        "<path d=\"M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}\" stroke=\"black\" fill=\"none\"/>"
    );
}

/// Bars of `histogram`, overflow bins reported in the caption.
pub fn render_histogram_counts(histogram: &Histogram, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let (lo, hi) = (histogram.edges[0], histogram.edges[histogram.edges.len() - 1]);
    let xmap = |x: f64| LEFT + (x - lo) / (hi - lo) * plot_w;
    let peak = histogram.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    out.push_str("<g fill=\"steelblue\" stroke=\"white\">\n");
    for (n, &c) in histogram.counts.iter().enumerate() {
        let (a, b) = (xmap(histogram.edges[n]), xmap(histogram.edges[n + 1]));
        let h = c as f64 / peak * plot_h;
        let _ = writeln!(
            out,
            "<rect class=\"bin\" data-count=\"{c}\" x=\"{a:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\"/>",
            HEIGHT - BOTTOM - h,
            b - a
        );
    }
    out.push_str("</g>\n");
    for (x, anchor) in [(lo, "start"), (hi, "end")] {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"{anchor}\">{x}</text>",
            xmap(x),
            HEIGHT - BOTTOM + 15.0
        );
    }
    if lo < 0.0 && hi > 0.0 {
        let _ = writeln!(
            out,
            "<line x1=\"{0:.2}\" y1=\"{TOP:.2}\" x2=\"{0:.2}\" y2=\"{1:.2}\" stroke=\"firebrick\" stroke-dasharray=\"4 3\"/>",
            xmap(0.0),
            HEIGHT - BOTTOM
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">margin (rhs − lhs); below range {}, above range {}</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0,
        histogram.underflow,
        histogram.overflow
    );
    let _ = writeln!(out, "<text x=\"{LEFT:.2}\" y=\"{:.2}\">max bin {}</text>", TOP - 10.0, peak as u64);
    out.push_str("</svg>\n");
    out
}

/// Bins `values` over `edges` and renders the histogram.
pub fn render_histogram(values: &[f64], edges: &[f64]) -> Result<String> {
    if values.is_empty() {
        return Err(RunError::Config("histogram needs at least one value".into()));
    }
    let mut h = Histogram::with_edges(edges.to_vec()).map_err(|e| RunError::Config(e.to_string()))?;
    values.iter().for_each(|&v| h.add(v));
    Ok(render_histogram_counts(&h, "margin histogram"))
}

/// One box-plot series.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSeries<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
    /// Drawn as a point against the right axis.
    pub sum_rate: Option<f64>,
}

fn nice_max(x: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|s| s * mag).find(|&v| v >= x).unwrap_or(10.0 * mag)
}

/// Box plot of normalized variation per method, whiskers at min/max, with
/// the mean sum-rate overlay on a second axis.
pub fn render_box(series: &[BoxSeries<'_>]) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.values.is_empty()) {
        return Err(RunError::Config("box plot needs a nonempty value set per method".into()));
    }
    let summaries: Vec<Summary> = series.iter().map(|s| Summary::of(s.values).expect("nonempty")).collect();
    let vmax = nice_max(summaries.iter().map(|s| s.max).fold(0.0, f64::max));
    let rmax = nice_max(series.iter().filter_map(|s| s.sum_rate).fold(0.0, f64::max));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y = |v: f64, top: f64| HEIGHT - BOTTOM - v / top * plot_h;
    let slot = plot_w / series.len() as f64;

    let mut out = String::new();
    header(&mut out, "normalized variation and mean sum-rate");
    axes(&mut out);
    let _ = writeln!(
        out,
        "<line x1=\"{0:.2}\" y1=\"{TOP:.2}\" x2=\"{0:.2}\" y2=\"{1:.2}\" stroke=\"black\"/>",
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{vmax}</text>", LEFT - 4.0, TOP + 4.0);
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{rmax}</text>", WIDTH - RIGHT + 4.0, TOP + 4.0);
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">left: normalized variation, right: mean sum-rate (bit/s/Hz)</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let mut rate_points = Vec::new();
    for (n, (s, q)) in series.iter().zip(&summaries).enumerate() {
        let cx = LEFT + slot * (n as f64 + 0.5);
        let half = slot * 0.2;
        let _ = writeln!(
            out,
            "<g class=\"box\" data-method=\"{}\" data-median=\"{}\">\n\
             <line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
             <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"lightsteelblue\" stroke=\"black\"/>\n\
             <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>\n\
             </g>",
            escape(s.name),
            q.median,
            y(q.max, vmax),
            y(q.min, vmax),
            cx - half,
            y(q.q3, vmax),
            2.0 * half,
            y(q.q1, vmax) - y(q.q3, vmax),
            cx - half,
            y(q.median, vmax),
            cx + half,
            y(q.median, vmax),
        );
        let _ = writeln!(
            out,
            "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            HEIGHT - BOTTOM + 15.0,
            escape(s.name)
        );
        if let Some(r) = s.sum_rate {
            rate_points.push((cx, y(r, rmax), r));
        }
    }
    if !rate_points.is_empty() {
        let d: Vec<String> = rate_points
            .iter()
            .enumerate()
            .map(|(n, (x, y, _))| format!("{}{x:.2} {y:.2}", if n == 0 { "M" } else { " L" }))
            .collect();
        let _ = writeln!(out, "<path d=\"{}\" stroke=\"darkorange\" fill=\"none\"/>", d.concat());
        for (x, y, r) in &rate_points {
            let _ = writeln!(
                out,
                "<circle class=\"rate\" data-sum-rate=\"{r}\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"darkorange\"/>"
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
