//! Minimal self-contained SVG charts: log or linear axes, polyline series,
//! dashed guides and horizontal marker lines.  No external assets, no
//! timestamps — the rendering is a pure function of its inputs, so plot
//! artifacts inherit the byte-level determinism of the records they come
//! from.

use crate::{Error, Result};

/// One polyline.  Dashed series are used for guide lines; an empty label
/// keeps a series out of the legend.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
}

/// Default qualitative palette, cycled over series.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
];

/// A 2-D chart with independently log or linear axes.
#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
    /// Horizontal dashed marker lines (steady-state asymptotes and
    /// reference levels), with a small right-aligned label.
    pub hlines: Vec<(f64, String)>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 86.0;
const RIGHT: f64 = 770.0;
const TOP: f64 = 52.0;
const BOTTOM: f64 = 540.0;

struct AxisMap {
    lo: f64,
    hi: f64,
    log: bool,
}

impl AxisMap {
    fn transform(&self, v: f64) -> Option<f64> {
        if self.log {
            if v > 0.0 {
                Some(v.log10())
            } else {
                None
            }
        } else {
            Some(v)
        }
    }

    /// Fraction of the axis range, 0 at `lo`.
    fn fraction(&self, v: f64) -> Option<f64> {
        let t = self.transform(v)?;
        if !t.is_finite() {
            return None;
        }
        Some((t - self.lo) / (self.hi - self.lo))
    }
}

fn fmt_tick(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    let magnitude = value.abs();
    if (1e-3..1e4).contains(&magnitude) {
        let s = format!("{value}");
        if s.len() <= 7 {
            s
        } else {
            format!("{value:.3}")
        }
    } else {
        format!("{value:e}")
    }
}

/// Tick positions in transformed coordinates plus their labels.
fn ticks(map: &AxisMap) -> Vec<(f64, String)> {
    if map.log {
        let first = map.lo.ceil() as i64;
        let last = map.hi.floor() as i64;
        let count = (last - first).max(0) + 1;
        let step = 1 + (count as usize).saturating_sub(1) / 10;
        (first..=last)
            .step_by(step.max(1))
            .map(|k| (k as f64, format!("1e{k}")))
            .collect()
    } else {
        let range = map.hi - map.lo;
        let raw = range / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = match raw / mag {
            r if r < 1.5 => mag,
            r if r < 3.5 => 2.0 * mag,
            r if r < 7.5 => 5.0 * mag,
            _ => 10.0 * mag,
        };
        let first = (map.lo / step).ceil() as i64;
        let last = (map.hi / step).floor() as i64;
        (first..=last)
            .map(|k| {
                let v = k as f64 * step;
                (v, fmt_tick(v))
            })
            .collect()
    }
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn ranges(&self) -> Result<(AxisMap, AxisMap)> {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if !(x.is_finite() && y.is_finite()) {
                    continue;
                }
                if self.x_log && x <= 0.0 {
                    continue;
                }
                if self.y_log && y <= 0.0 {
                    continue;
                }
                xs.push(if self.x_log { x.log10() } else { x });
                ys.push(if self.y_log { y.log10() } else { y });
            }
        }
        for &(y, _) in &self.hlines {
            if y.is_finite() && !(self.y_log && y <= 0.0) {
                ys.push(if self.y_log { y.log10() } else { y });
            }
        }
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::PlotInput(
                "chart has no drawable points (after log-axis filtering)".into(),
            ));
        }
        let (mut xlo, mut xhi) = minmax(&xs);
        let (mut ylo, mut yhi) = minmax(&ys);
        pad(&mut xlo, &mut xhi);
        pad(&mut ylo, &mut yhi);
        Ok((
            AxisMap {
                lo: xlo,
                hi: xhi,
                log: self.x_log,
            },
            AxisMap {
                lo: ylo,
                hi: yhi,
                log: self.y_log,
            },
        ))
    }

    /// Render to SVG text.
    pub fn render(&self) -> Result<String> {
        let (xmap, ymap) = self.ranges()?;
        let px = |fx: f64| LEFT + fx * (RIGHT - LEFT);
        let py = |fy: f64| BOTTOM - fy * (BOTTOM - TOP);

        let mut out = String::with_capacity(16 * 1024);
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
             font-family=\"sans-serif\">\n"
        ));
        out.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        out.push_str(&format!(
            "<clipPath id=\"plot\"><rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\"/></clipPath>\n",
            RIGHT - LEFT,
            BOTTOM - TOP
        ));

        // Frame, title, axis labels.
        out.push_str(&format!(
            "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" \
             stroke=\"black\" stroke-width=\"1\"/>\n",
            RIGHT - LEFT,
            BOTTOM - TOP
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-size=\"19\">{}</text>\n",
            (LEFT + RIGHT) / 2.0,
            xml_escape(&self.title)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"585\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
            (LEFT + RIGHT) / 2.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"24\" y=\"{}\" text-anchor=\"middle\" font-size=\"16\" \
             transform=\"rotate(-90 24 {})\">{}</text>\n",
            (TOP + BOTTOM) / 2.0,
            (TOP + BOTTOM) / 2.0,
            xml_escape(&self.y_label)
        ));

        // Ticks and grid.
        for (t, label) in ticks(&xmap) {
            let f = (t - xmap.lo) / (xmap.hi - xmap.lo);
            if !(0.0..=1.0).contains(&f) {
                continue;
            }
            let x = px(f);
            out.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{BOTTOM}\" \
                 stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
            ));
            out.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{BOTTOM}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
                BOTTOM + 6.0
            ));
            out.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
                BOTTOM + 22.0,
                xml_escape(&label)
            ));
        }
        for (t, label) in ticks(&ymap) {
            let f = (t - ymap.lo) / (ymap.hi - ymap.lo);
            if !(0.0..=1.0).contains(&f) {
                continue;
            }
            let y = py(f);
            out.push_str(&format!(
                "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{RIGHT}\" y2=\"{y:.2}\" \
                 stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
            ));
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
                LEFT - 6.0
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"13\">{}</text>\n",
                LEFT - 10.0,
                y + 4.0,
                xml_escape(&label)
            ));
        }

        // Horizontal marker lines.
        for (value, label) in &self.hlines {
            let Some(f) = ymap.fraction(*value) else { continue };
            if !(0.0..=1.0).contains(&f) {
                continue;
            }
            let y = py(f);
            out.push_str(&format!(
                "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{RIGHT}\" y2=\"{y:.2}\" \
                 stroke=\"#888888\" stroke-width=\"1\" stroke-dasharray=\"2,4\"/>\n"
            ));
            if !label.is_empty() {
                out.push_str(&format!(
                    "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"12\" \
                     fill=\"#555555\">{}</text>\n",
                    RIGHT - 6.0,
                    y - 5.0,
                    xml_escape(label)
                ));
            }
        }

        // Series, clipped to the frame; log-invalid points break the line.
        out.push_str("<g clip-path=\"url(#plot)\">\n");
        for s in &self.series {
            let dash = if s.dashed {
                " stroke-dasharray=\"7,5\""
            } else {
                ""
            };
            let mut segment: Vec<String> = Vec::new();
            let flush = |seg: &mut Vec<String>, out: &mut String| {
                if seg.len() >= 2 {
                    out.push_str(&format!(
                        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"{dash} \
                         points=\"{}\"/>\n",
                        s.color,
                        seg.join(" ")
                    ));
                }
                seg.clear();
            };
            for &(x, y) in &s.points {
                match (xmap.fraction(x), ymap.fraction(y)) {
                    (Some(fx), Some(fy)) => {
                        segment.push(format!("{:.2},{:.2}", px(fx), py(fy)));
                    }
                    _ => flush(&mut segment, &mut out),
                }
            }
            flush(&mut segment, &mut out);
        }
        out.push_str("</g>\n");

        // Legend for labeled series.
        let mut row = 0usize;
        for s in self.series.iter().filter(|s| !s.label.is_empty()) {
            let y = TOP + 18.0 + 20.0 * row as f64;
            let dash = if s.dashed {
                " stroke-dasharray=\"7,5\""
            } else {
                ""
            };
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"{}\" \
                 stroke-width=\"2\"{dash}/>\n",
                LEFT + 12.0,
                LEFT + 44.0,
                s.color
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.2}\" font-size=\"13\">{}</text>\n",
                LEFT + 50.0,
                y + 4.0,
                xml_escape(&s.label)
            ));
            row += 1;
        }

        out.push_str("</svg>\n");
        Ok(out)
    }
}

fn minmax(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// 4% padding in transformed coordinates; degenerate ranges get a unit pad.
fn pad(lo: &mut f64, hi: &mut f64) {
    if *hi <= *lo {
        *lo -= 0.5;
        *hi += 0.5;
        return;
    }
    let margin = 0.04 * (*hi - *lo);
    *lo -= margin;
    *hi += margin;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_chart() -> Chart {
        Chart {
            title: "growth".into(),
            x_label: "t".into(),
            y_label: "kappa".into(),
            x_log: true,
            y_log: true,
            series: vec![
                Series {
                    label: "N=10".into(),
                    points: (0..40)
                        .map(|i| {
                            let t = 0.1 * 1.3f64.powi(i);
                            (t, 2.0 * t.sqrt())
                        })
                        .collect(),
                    color: PALETTE[0].into(),
                    dashed: false,
                },
                Series {
                    label: String::new(),
                    points: vec![(1.0, 1.0), (100.0, 10.0)],
                    color: "#888888".into(),
                    dashed: true,
                },
            ],
            hlines: vec![(8.0, "steady".into())],
        }
    }

    #[test]
    fn renders_expected_structure() {
        let svg = demo_chart().render().unwrap();
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("1e0"));
        assert!(svg.contains("N=10"));
        assert!(svg.contains("steady"));
        assert!(svg.contains("stroke-dasharray"));
        // Legend skips the unlabeled guide.
        assert_eq!(svg.matches("<text").count() >= 6, true);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = demo_chart().render().unwrap();
        let b = demo_chart().render().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_axis_drops_nonpositive_points_but_keeps_the_rest() {
        let chart = Chart {
            title: String::new(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_log: true,
            y_log: true,
            series: vec![Series {
                label: "broken".into(),
                points: vec![(1.0, 1.0), (2.0, -1.0), (4.0, 2.0), (8.0, 3.0)],
                color: PALETTE[1].into(),
                dashed: false,
            }],
            hlines: vec![],
        };
        let svg = chart.render().unwrap();
        // The negative point splits the polyline; only the 2-point tail
        // segment survives as a drawable line.
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn empty_chart_is_a_plot_input_error() {
        let chart = Chart {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            x_log: true,
            y_log: true,
            series: vec![Series {
                label: "nothing".into(),
                points: vec![(-1.0, 1.0)],
                color: "#000000".into(),
                dashed: false,
            }],
            hlines: vec![],
        };
        let err = chart.render().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn linear_axis_uses_nice_ticks() {
        let chart = Chart {
            title: String::new(),
            x_label: "T".into(),
            y_label: "alpha".into(),
            x_log: true,
            y_log: false,
            series: vec![Series {
                label: "wc=500".into(),
                points: vec![(10.0, 0.42), (100.0, 0.55), (1000.0, 0.93)],
                color: PALETTE[0].into(),
                dashed: false,
            }],
            hlines: vec![(0.5, "sqrt".into()), (1.0, "linear".into())],
        };
        let svg = chart.render().unwrap();
        assert!(svg.contains(">0.5<") || svg.contains(">0.6<"), "{svg}");
    }
}
