//! Minimal static SVG emission: per-area point estimates with interval
//! whiskers, areas ordered by sample size (largest first).

/// One area on the x-axis.
pub struct PlotArea {
    pub label: String,
    pub n: usize,
    /// (series tag, value) point markers.
    pub points: Vec<(String, f64)>,
    /// (series tag, lower, upper) whiskers.
    pub whiskers: Vec<(String, f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render the whisker plot. Output is deterministic for identical input.
pub fn whisker_plot_svg(title: &str, areas: &[PlotArea]) -> String {
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| areas[b].n.cmp(&areas[a].n).then(a.cmp(&b)));

    let width = 160.0 + 46.0 * areas.len().max(1) as f64;
    let height = 420.0;
    let (left, right, top, bottom) = (70.0, 30.0, 48.0, 70.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in areas {
        for (_, v) in &a.points {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        for (_, l, u) in &a.whiskers {
            lo = lo.min(*l);
            hi = hi.max(*u);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.06 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y_of = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));

    // Stable series -> color assignment in first-appearance order.
    let mut series: Vec<String> = Vec::new();
    for a in areas {
        for (tag, _) in &a.points {
            if !series.contains(tag) {
                series.push(tag.clone());
            }
        }
        for (tag, _, _) in &a.whiskers {
            if !series.contains(tag) {
                series.push(tag.clone());
            }
        }
    }
    let color = |tag: &str| {
        let idx = series.iter().position(|s| s == tag).unwrap_or(0);
        PALETTE[idx % PALETTE.len()]
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        fmt(width / 2.0),
        title
    ));

    // Axes and y ticks.
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"#333\"/>\n\
         <line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#333\"/>\n",
        l = fmt(left),
        t = fmt(top),
        b = fmt(top + plot_h),
        r = fmt(left + plot_w)
    ));
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ccc\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(left - 4.0),
            fmt(left + plot_w),
            fmt(left - 8.0),
            fmt(y + 4.0),
            fmt(v),
            y = fmt(y)
        ));
    }

    let slot = plot_w / areas.len().max(1) as f64;
    for (pos, &idx) in order.iter().enumerate() {
        let area = &areas[idx];
        let x0 = left + slot * (pos as f64 + 0.5);
        let k = area.whiskers.len().max(1) as f64;
        for (j, (tag, l, u)) in area.whiskers.iter().enumerate() {
            let dx = (j as f64 - (k - 1.0) / 2.0) * (slot * 0.7 / k);
            let x = x0 + dx;
            let c = color(tag);
            svg.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"{c}\" stroke-width=\"1.5\"/>\n\
                 <line x1=\"{}\" y1=\"{yl}\" x2=\"{}\" y2=\"{yl}\" stroke=\"{c}\"/>\n\
                 <line x1=\"{}\" y1=\"{yu}\" x2=\"{}\" y2=\"{yu}\" stroke=\"{c}\"/>\n",
                fmt(y_of(*l)),
                fmt(y_of(*u)),
                fmt(x0 + dx - 4.0),
                fmt(x0 + dx + 4.0),
                fmt(x0 + dx - 4.0),
                fmt(x0 + dx + 4.0),
                x = fmt(x),
                yl = fmt(y_of(*l)),
                yu = fmt(y_of(*u)),
            ));
        }
        for (tag, v) in &area.points {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                fmt(x0),
                fmt(y_of(*v)),
                color(tag)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" \
             transform=\"rotate(-60 {} {})\">{} (n={})</text>\n",
            fmt(x0),
            fmt(top + plot_h + 14.0),
            fmt(x0),
            fmt(top + plot_h + 14.0),
            area.label,
            area.n
        ));
    }

    // Legend.
    for (i, tag) in series.iter().enumerate() {
        let x = left + 110.0 * i as f64;
        let y = height - 18.0;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\">{}</text>\n",
            fmt(x),
            fmt(y - 9.0),
            color(tag),
            fmt(x + 14.0),
            fmt(y),
            tag
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_deterministically_and_orders_by_n() {
        let areas = vec![
            PlotArea {
                label: "small".into(),
                n: 5,
                points: vec![("eb".into(), 0.4)],
                whiskers: vec![("TDirect".into(), 0.2, 0.6)],
            },
            PlotArea {
                label: "big".into(),
                n: 50,
                points: vec![("eb".into(), 0.5)],
                whiskers: vec![("TDirect".into(), 0.45, 0.55)],
            },
        ];
        let a = whisker_plot_svg("test", &areas);
        let b = whisker_plot_svg("test", &areas);
        assert_eq!(a, b);
        // Largest n comes first on the x axis.
        let big_pos = a.find("big (n=50)").unwrap();
        let small_pos = a.find("small (n=5)").unwrap();
        assert!(big_pos < small_pos);
        assert!(a.starts_with("<svg"));
    }
}
