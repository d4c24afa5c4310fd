//! Minimal hand-written SVG: a few primitives, linear axes and colormaps.
//! Coordinates are printed with two decimals so output is byte-stable.

use std::fmt::Write as _;

pub const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";

/// Qualitative palette for lines and discrete groups.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Short tick label: three significant digits, no exponent for ordinary ranges.
pub fn tick_label(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-3..5).contains(&mag) {
        return format!("{v:.1e}");
    }
    let decimals = (2 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        let mut svg = Svg {
            width,
            height,
            body: String::new(),
        };
        svg.rect(0.0, 0.0, width, height, "#ffffff", None);
        svg
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke.map(|s| format!(" stroke=\"{s}\"")).unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"{stroke}/>"
        );
    }

    pub fn line(&mut self, (x1, y1): (f64, f64), (x2, y2): (f64, f64), stroke: &str, width: f64, dash: Option<&str>) {
        let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width:.2}\"{dash}/>"
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64) {
        if points.len() < 2 {
            return;
        }
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width:.2}\"/>",
            pts.join(" ")
        );
    }

    pub fn circle(&mut self, (cx, cy): (f64, f64), r: f64, fill: &str) {
        let _ = writeln!(self.body, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{r:.2}\" fill=\"{fill}\"/>");
    }

    pub fn text(&mut self, (x, y): (f64, f64), size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size:.1}\" text-anchor=\"{anchor}\" {FONT}>{}</text>",
            escape(content)
        );
    }

    /// Text rotated by -90 degrees about its anchor point.
    pub fn vertical_text(&mut self, (x, y): (f64, f64), size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 {x:.2} {y:.2})\" {FONT}>{}</text>",
            escape(content)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// A plotting rectangle mapping data ranges to pixels (y grows upward).
#[derive(Debug, Clone, Copy)]
pub struct Axes {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
    pub xr: (f64, f64),
    pub yr: (f64, f64),
}

/// Range of `values` padded by 5%; a degenerate range is widened to unit size.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Axes {
    pub fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    pub fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    pub fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (self.px(x), self.py(y))
    }

    /// The part of the line `y = a + b x` inside the plotting rectangle.
    pub fn clip_line(&self, a: f64, b: f64) -> Option<((f64, f64), (f64, f64))> {
        let (mut lo, mut hi) = self.xr;
        if b != 0.0 {
            let xa = (self.yr.0 - a) / b;
            let xb = (self.yr.1 - a) / b;
            lo = lo.max(xa.min(xb));
            hi = hi.min(xa.max(xb));
        } else if !(self.yr.0..=self.yr.1).contains(&a) {
            return None;
        }
        (lo < hi).then(|| (self.map((lo, a + b * lo)), self.map((hi, a + b * hi))))
    }

    /// Frame, title and three ticks per axis.
    pub fn draw_frame(&self, svg: &mut Svg, title: &str, xlabel: &str, ylabel: &str) {
        svg.rect(self.x0, self.y0, self.w, self.h, "none", Some("#444444"));
        svg.text((self.x0 + self.w / 2.0, self.y0 - 8.0), 13.0, "middle", title);
        svg.text((self.x0 + self.w / 2.0, self.y0 + self.h + 32.0), 11.0, "middle", xlabel);
        svg.vertical_text((self.x0 - 48.0, self.y0 + self.h / 2.0), 11.0, ylabel);
        for t in [0.0, 0.5, 1.0] {
            let x = self.xr.0 + t * (self.xr.1 - self.xr.0);
            let px = self.px(x);
            svg.line((px, self.y0 + self.h), (px, self.y0 + self.h + 4.0), "#444444", 1.0, None);
            svg.text((px, self.y0 + self.h + 16.0), 9.0, "middle", &tick_label(x));
            let y = self.yr.0 + t * (self.yr.1 - self.yr.0);
            let py = self.py(y);
            svg.line((self.x0 - 4.0, py), (self.x0, py), "#444444", 1.0, None);
            svg.text((self.x0 - 6.0, py + 3.0), 9.0, "end", &tick_label(y));
        }
    }
}

fn lerp_rgb(stops: &[(f64, [u8; 3])], t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = stops.iter().rposition(|(s, _)| *s <= t).unwrap_or(0).min(stops.len() - 2);
    let (s0, c0) = stops[k];
    let (s1, c1) = stops[k + 1];
    let u = if s1 > s0 { (t - s0) / (s1 - s0) } else { 0.0 };
    let ch = |i: usize| (f64::from(c0[i]) + u * (f64::from(c1[i]) - f64::from(c0[i]))).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

/// Sequential colormap (dark purple to yellow) for `t` in `[0, 1]`.
pub fn sequential(t: f64) -> String {
    lerp_rgb(
        &[
            (0.0, [68, 1, 84]),
            (0.25, [59, 82, 139]),
            (0.5, [33, 145, 140]),
            (0.75, [94, 201, 98]),
            (1.0, [253, 231, 37]),
        ],
        t,
    )
}

/// Diverging colormap (blue, white, red) for `v` in `[-1, 1]`.
pub fn diverging(v: f64) -> String {
    lerp_rgb(&[(0.0, [33, 102, 172]), (0.5, [247, 247, 247]), (1.0, [178, 24, 43])], (v + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormaps_hit_their_endpoints() {
        assert_eq!(sequential(0.0), "#440154");
        assert_eq!(sequential(1.0), "#fde725");
        assert_eq!(sequential(7.0), "#fde725");
        assert_eq!(diverging(0.0), "#f7f7f7");
        assert_eq!(diverging(-1.0), "#2166ac");
        assert_eq!(diverging(f64::NAN), "#2166ac");
    }

    #[test]
    fn axes_map_corners() {
        let a = Axes { x0: 10.0, y0: 20.0, w: 100.0, h: 50.0, xr: (0.0, 1.0), yr: (-1.0, 1.0) };
        assert_eq!(a.map((0.0, -1.0)), (10.0, 70.0));
        assert_eq!(a.map((1.0, 1.0)), (110.0, 20.0));
    }

    #[test]
    fn clipped_line_stays_inside() {
        let a = Axes { x0: 0.0, y0: 0.0, w: 100.0, h: 100.0, xr: (0.0, 1.0), yr: (0.0, 1.0) };
        let (p, q) = a.clip_line(-0.5, 2.0).unwrap();
        assert_eq!(p, (25.0, 100.0));
        assert_eq!(q, (75.0, 0.0));
        assert!(a.clip_line(5.0, 0.0).is_none());
        assert_eq!(a.clip_line(0.5, 0.0).unwrap(), ((0.0, 50.0), (100.0, 50.0)));
    }

    #[test]
    fn ranges_and_labels() {
        assert_eq!(padded_range([1.0, 1.0]), (0.5, 1.5));
        assert_eq!(padded_range([f64::NAN]), (0.0, 1.0));
        let (lo, hi) = padded_range([0.0, 10.0]);
        assert!((lo + 0.5).abs() < 1e-12 && (hi - 10.5).abs() < 1e-12);
        assert_eq!(tick_label(0.5), "0.5");
        assert_eq!(tick_label(-12.34), "-12.3");
        assert_eq!(tick_label(123456.0), "1.2e5");
    }

    #[test]
    fn text_is_escaped() {
        let mut s = Svg::new(10.0, 10.0);
        s.text((0.0, 0.0), 10.0, "start", "a<b & \"c\"");
        assert!(s.finish().contains("a&lt;b &amp; &quot;c&quot;"));
    }
}
