//! Figure pipelines: condense result records into plot-ready artifacts.
//!
//! Every figure emits three files into the output directory: a long-format
//! data CSV (`series,x,y`), a standalone matplotlib script that rebuilds the
//! figure from that CSV, and a pre-rendered self-contained SVG.  All three
//! are pure functions of the records, so repeat emissions are byte-identical.
//!
//! Layouts:
//! * `fig1` — fluctuation growth: kappa vs t, one curve per particle number,
//!   log-log, sqrt(t) guide, steady-state asymptote markers.
//! * `fig2` — heating-time collapse: kappa/N^2 vs t/tau for at least three
//!   particle numbers, sqrt(t) guide, rescaled steady asymptotes.
//! * `fig3` — bath-driven growth: kappa vs t, one curve per temperature,
//!   log-log, each curve's fitted power law drawn over its window.
//! * `fig4` — exponent trend: alpha vs T, one line per cutoff, log T axis,
//!   reference levels at alpha = 1/2 and alpha = 1.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::experiment::ResultRecord;
use crate::svg::{Chart, Series, PALETTE};
use crate::{Error, Result};

/// The four supported figure layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    pub fn tag(&self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Figure::Fig1),
            "fig2" => Ok(Figure::Fig2),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            other => Err(Error::PlotInput(format!(
                "unknown figure \"{other}\"; expected fig1, fig2, fig3 or fig4"
            ))),
        }
    }
}

/// Paths written for one figure.
#[derive(Debug, Clone)]
pub struct PlotArtifacts {
    pub data: PathBuf,
    pub script: PathBuf,
    pub image: PathBuf,
}

struct FigureLayout {
    title: String,
    x_label: String,
    y_label: String,
    x_log: bool,
    y_log: bool,
    series: Vec<Series>,
    hlines: Vec<(f64, String)>,
}

/// Emit the artifacts for `figure` from `records` into `dir`.
pub fn emit(figure: Figure, records: &[ResultRecord], dir: &Path) -> Result<PlotArtifacts> {
    if records.is_empty() {
        return Err(Error::PlotInput(format!(
            "{}: no records supplied",
            figure.tag()
        )));
    }
    let layout = match figure {
        Figure::Fig1 => fig_growth(records, false)?,
        Figure::Fig2 => fig_growth(records, true)?,
        Figure::Fig3 => fig_temperatures(records)?,
        Figure::Fig4 => fig_exponents(records)?,
    };

    std::fs::create_dir_all(dir)?;
    let tag = figure.tag();
    let data = dir.join(format!("{tag}_data.csv"));
    let script = dir.join(format!("{tag}_plot.py"));
    let image = dir.join(format!("{tag}.svg"));

    std::fs::write(&data, data_csv(&layout.series))?;
    std::fs::write(&script, python_script(tag, &layout))?;
    let chart = Chart {
        title: layout.title,
        x_label: layout.x_label,
        y_label: layout.y_label,
        x_log: layout.x_log,
        y_log: layout.y_log,
        series: layout.series,
        hlines: layout.hlines,
    };
    std::fs::write(&image, chart.render()?)?;
    Ok(PlotArtifacts {
        data,
        script,
        image,
    })
}

// ---------------------------------------------------------------------------
// Figure builders.
// ---------------------------------------------------------------------------

/// First record per distinct particle number, ascending.
fn by_particles(records: &[ResultRecord]) -> Vec<(u32, &ResultRecord)> {
    let mut groups: Vec<(u32, &ResultRecord)> = Vec::new();
    for r in records {
        let n = r.trajectory.provenance.particles;
        if !groups.iter().any(|(g, _)| *g == n) {
            groups.push((n, r));
        }
    }
    groups.sort_by_key(|(n, _)| *n);
    groups
}

/// fig1 (raw axes) and fig2 (rescaled axes) share one builder.
fn fig_growth(records: &[ResultRecord], rescaled: bool) -> Result<FigureLayout> {
    let groups = by_particles(records);
    let tag = if rescaled { "fig2" } else { "fig1" };
    let needed = if rescaled { 3 } else { 2 };
    if groups.len() < needed {
        let found: Vec<String> = groups.iter().map(|(n, _)| n.to_string()).collect();
        return Err(Error::PlotInput(format!(
            "{tag} needs {needed} distinct particle numbers, found {}: N = {}",
            groups.len(),
            found.join(", ")
        )));
    }

    let mut series = Vec::new();
    let mut hlines = Vec::new();
    for (i, (n, record)) in groups.iter().enumerate() {
        let traj = &record.trajectory;
        let points: Vec<(f64, f64)> = if rescaled {
            let tau = traj.rescale.tau;
            traj.times
                .iter()
                .zip(&traj.kappa_rescaled)
                .map(|(&t, &k)| (t / tau, k))
                .collect()
        } else {
            traj.times
                .iter()
                .zip(&traj.kappa)
                .map(|(&t, &k)| (t, k))
                .collect()
        };
        series.push(Series {
            label: format!("N={n}"),
            points,
            color: PALETTE[i % PALETTE.len()].into(),
            dashed: false,
        });
        if let Some(kss) = record.steady.kappa_over_n2 {
            let value = if rescaled {
                kss
            } else {
                kss * (*n as f64).powi(2)
            };
            hlines.push((value, format!("N={n} steady")));
        }
    }

    // One sqrt(t) guide anchored on the first curve.
    let anchor_fit = groups[0].1.fit_time.window.map(|(lo, hi)| {
        if rescaled {
            let tau = groups[0].1.trajectory.rescale.tau;
            (lo / tau, hi / tau)
        } else {
            (lo, hi)
        }
    });
    if let Some(guide) = power_guide(&series[0].points, anchor_fit, 0.5, "t^1/2") {
        series.push(guide);
    }

    Ok(FigureLayout {
        title: if rescaled {
            "Fluctuation collapse under the heating-time rescaling".into()
        } else {
            "Fluctuation growth".into()
        },
        x_label: if rescaled { "t / tau" } else { "t" }.into(),
        y_label: if rescaled { "kappa / N^2" } else { "kappa" }.into(),
        x_log: true,
        y_log: true,
        series,
        hlines,
    })
}

/// fig3: one curve per temperature, fitted guides over their windows.
fn fig_temperatures(records: &[ResultRecord]) -> Result<FigureLayout> {
    let mut groups: Vec<(f64, &ResultRecord)> = Vec::new();
    for r in records {
        let Some(t) = r.trajectory.provenance.temperature else {
            continue;
        };
        if !groups.iter().any(|(g, _)| *g == t) {
            groups.push((t, r));
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    if groups.len() < 2 {
        let found: Vec<String> = groups.iter().map(|(t, _)| format!("{t}")).collect();
        return Err(Error::PlotInput(if groups.is_empty() {
            "fig3 needs finite-temperature records; none of the supplied records carry a \
             bath temperature"
                .into()
        } else {
            format!(
                "fig3 needs 2 distinct temperatures, found {}: T = {}",
                groups.len(),
                found.join(", ")
            )
        }));
    }

    let mut series = Vec::new();
    let mut guides = Vec::new();
    let mut hlines = Vec::new();
    for (i, (t, record)) in groups.iter().enumerate() {
        let traj = &record.trajectory;
        let points: Vec<(f64, f64)> = traj
            .times
            .iter()
            .zip(&traj.kappa)
            .map(|(&t, &k)| (t, k))
            .collect();
        if record.fit_time.accepted {
            if let Some(guide) = power_guide(
                &points,
                record.fit_time.window,
                record.fit_time.alpha,
                &format!("t^{:.2}", record.fit_time.alpha),
            ) {
                guides.push(guide);
            }
        }
        series.push(Series {
            label: format!("T={t}"),
            points,
            color: PALETTE[i % PALETTE.len()].into(),
            dashed: false,
        });
        if let Some(kss) = record.steady.kappa_over_n2 {
            let n2 = (traj.provenance.particles as f64).powi(2);
            hlines.push((kss * n2, format!("T={t} steady")));
        }
    }
    series.extend(guides);

    Ok(FigureLayout {
        title: "Bath-driven fluctuation growth by temperature".into(),
        x_label: "t".into(),
        y_label: "kappa".into(),
        x_log: true,
        y_log: true,
        series,
        hlines,
    })
}

/// fig4: alpha vs T, one line per cutoff, accepted fits only.
fn fig_exponents(records: &[ResultRecord]) -> Result<FigureLayout> {
    let mut cutoffs: Vec<f64> = Vec::new();
    for r in records {
        if let Some(wc) = r.trajectory.provenance.cutoff {
            if !cutoffs.contains(&wc) {
                cutoffs.push(wc);
            }
        }
    }
    cutoffs.sort_by(f64::total_cmp);
    if cutoffs.is_empty() {
        return Err(Error::PlotInput(
            "fig4 needs bath records; none of the supplied records carry a cutoff".into(),
        ));
    }

    let mut series = Vec::new();
    let mut shortfalls = Vec::new();
    for (i, wc) in cutoffs.iter().enumerate() {
        let mut points: Vec<(f64, f64)> = Vec::new();
        for r in records {
            let prov = &r.trajectory.provenance;
            if prov.cutoff != Some(*wc) || !r.fit_time.accepted {
                continue;
            }
            let Some(t) = prov.temperature else { continue };
            if !points.iter().any(|(x, _)| *x == t) {
                points.push((t, r.fit_time.alpha));
            }
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.len() < 2 {
            shortfalls.push(format!(
                "wc = {wc} has {} accepted exponent(s)",
                points.len()
            ));
            continue;
        }
        series.push(Series {
            label: format!("wc={wc}"),
            points,
            color: PALETTE[i % PALETTE.len()].into(),
            dashed: false,
        });
    }
    if series.is_empty() {
        return Err(Error::PlotInput(format!(
            "fig4 needs at least two accepted exponents along the temperature axis for some \
             cutoff; {}",
            shortfalls.join("; ")
        )));
    }

    Ok(FigureLayout {
        title: "Growth exponent vs bath temperature".into(),
        x_label: "T".into(),
        y_label: "alpha".into(),
        x_log: true,
        y_log: false,
        series,
        hlines: vec![(0.5, "alpha = 1/2".into()), (1.0, "alpha = 1".into())],
    })
}

// ---------------------------------------------------------------------------
// Guides and serialization.
// ---------------------------------------------------------------------------

/// Ordinate of a positive curve at `x`, interpolated in log-log space.
fn log_interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let clean: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(px, py)| px > 0.0 && py > 0.0)
        .collect();
    if clean.len() < 2 || x < clean[0].0 || x > clean[clean.len() - 1].0 {
        return None;
    }
    let lx = x.log10();
    let idx = clean.partition_point(|&(px, _)| px < x).clamp(1, clean.len() - 1);
    let (x0, y0) = clean[idx - 1];
    let (x1, y1) = clean[idx];
    let (lx0, lx1) = (x0.log10(), x1.log10());
    let w = if lx1 > lx0 { (lx - lx0) / (lx1 - lx0) } else { 0.0 };
    Some(10f64.powf(y0.log10() * (1.0 - w) + y1.log10() * w))
}

/// Dashed power-law guide `y = y_a (x / x_a)^slope`, anchored on the curve
/// at the geometric center of `window` (or of the curve's positive span)
/// and drawn across that window.
fn power_guide(
    points: &[(f64, f64)],
    window: Option<(f64, f64)>,
    slope: f64,
    label: &str,
) -> Option<Series> {
    let positive: Vec<f64> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, _)| x)
        .collect();
    let (lo, hi) = match window {
        Some((lo, hi)) if hi > lo && lo > 0.0 => (lo, hi),
        _ => {
            let first = *positive.first()?;
            let last = *positive.last()?;
            if !(last > first) {
                return None;
            }
            // Central half of the curve, in decades.
            let span = (last / first).log10();
            (
                first * 10f64.powf(span * 0.25),
                first * 10f64.powf(span * 0.75),
            )
        }
    };
    let x_anchor = (lo * hi).sqrt();
    let y_anchor = log_interpolate(points, x_anchor)?;
    let steps = 16usize;
    let guide_points: Vec<(f64, f64)> = (0..=steps)
        .map(|k| {
            let x = lo * (hi / lo).powf(k as f64 / steps as f64);
            (x, y_anchor * (x / x_anchor).powf(slope))
        })
        .collect();
    Some(Series {
        label: format!("guide:{label}"),
        points: guide_points,
        color: "#666666".into(),
        dashed: true,
    })
}

fn fmt17(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

/// Long-format data file: `series,x,y`.  Series labels never contain commas.
fn data_csv(series: &[Series]) -> String {
    let mut out = String::from("series,x,y\n");
    for s in series {
        for &(x, y) in &s.points {
            out.push_str(&format!("{},{},{}\n", s.label, fmt17(x), fmt17(y)));
        }
    }
    out
}

/// Standalone matplotlib script rebuilding the figure from its data CSV.
fn python_script(tag: &str, layout: &FigureLayout) -> String {
    let mut hlines = String::from("[");
    for (y, label) in &layout.hlines {
        hlines.push_str(&format!("({}, \"{}\"), ", fmt17(*y), label));
    }
    hlines.push(']');
    format!(
        r#"#!/usr/bin/env python3
"""Rebuild {tag}.pdf from {tag}_data.csv."""
import csv
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HLINES = {hlines}

series = OrderedDict()
with open("{tag}_data.csv") as fh:
    for row in csv.DictReader(fh):
        series.setdefault(row["series"], []).append(
            (float(row["x"]), float(row["y"]))
        )

fig, ax = plt.subplots(figsize=(6.4, 4.8))
for label, pts in series.items():
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    if label.startswith("guide:"):
        ax.plot(xs, ys, "--", color="0.35", lw=1.2, label=label[len("guide:"):])
    else:
        ax.plot(xs, ys, lw=1.7, label=label)
for y, text in HLINES:
    ax.axhline(y, ls=":", lw=1.0, color="0.55")
    ax.annotate(text, xy=(0.99, y), xycoords=("axes fraction", "data"),
                ha="right", va="bottom", fontsize=8, color="0.35")
ax.set_xscale("{x_scale}")
ax.set_yscale("{y_scale}")
ax.set_xlabel("{x_label}")
ax.set_ylabel("{y_label}")
ax.set_title("{title}")
ax.legend(frameon=False, fontsize=9)
fig.savefig("{tag}.pdf", bbox_inches="tight")
print("wrote {tag}.pdf")
"#,
        x_scale = if layout.x_log { "log" } else { "linear" },
        y_scale = if layout.y_log { "log" } else { "linear" },
        x_label = layout.x_label,
        y_label = layout.y_label,
        title = layout.title,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::experiment::execute;

    fn tiny_record(particles: u32) -> ResultRecord {
        let text = format!(
            r#"
                schema_version = 1
                solver = "lindblad"

                [system]
                particles = {particles}
                tunneling = 1.0
                interaction = 10.0

                [lindblad]
                rate = 0.1

                [grid]
                t_min = 0.5
                t_max = 50.0
                ratio = 1.5
            "#
        );
        let config = ExperimentConfig::from_toml_str(&text).unwrap();
        execute(&config, None, None).unwrap().record
    }

    fn tmp_dir(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("dwell-plots-{tag}-{}", std::process::id()))
    }

    #[test]
    fn fig1_emits_three_artifacts() {
        let records = vec![tiny_record(3), tiny_record(4)];
        let dir = tmp_dir("fig1");
        let arts = emit(Figure::Fig1, &records, &dir).unwrap();
        let data = std::fs::read_to_string(&arts.data).unwrap();
        assert!(data.starts_with("series,x,y\n"));
        assert!(data.contains("N=3"));
        assert!(data.contains("guide:t^1/2"));
        let script = std::fs::read_to_string(&arts.script).unwrap();
        assert!(script.contains("fig1_data.csv"));
        assert!(script.contains("set_xscale(\"log\")"));
        let svg = std::fs::read_to_string(&arts.image).unwrap();
        assert!(svg.starts_with("<svg"));
        // Steady asymptote markers present for both N.
        assert!(svg.contains("N=3 steady") && svg.contains("N=4 steady"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn fig2_requires_three_particle_numbers_and_lists_found() {
        let records = vec![tiny_record(3), tiny_record(4)];
        let err = emit(Figure::Fig2, &records, &tmp_dir("fig2-err")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3") && msg.contains("N = 3, 4"), "{msg}");
        assert_eq!(err.exit_code(), 2);

        let full = vec![tiny_record(3), tiny_record(4), tiny_record(5)];
        let dir = tmp_dir("fig2");
        let arts = emit(Figure::Fig2, &full, &dir).unwrap();
        let data = std::fs::read_to_string(&arts.data).unwrap();
        assert!(data.contains("N=5"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn fig3_demands_temperatures() {
        let records = vec![tiny_record(3), tiny_record(4)];
        let err = emit(Figure::Fig3, &records, &tmp_dir("fig3-err")).unwrap_err();
        assert!(err.to_string().contains("temperature"), "{err}");

        // Decorate the records as if they came from a bath-driven sweep.
        let mut warm = tiny_record(3);
        warm.trajectory.provenance.temperature = Some(100.0);
        let mut hot = tiny_record(3);
        hot.trajectory.provenance.temperature = Some(1000.0);
        let dir = tmp_dir("fig3");
        let arts = emit(Figure::Fig3, &[warm, hot], &dir).unwrap();
        let data = std::fs::read_to_string(&arts.data).unwrap();
        assert!(data.contains("T=100") && data.contains("T=1000"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn fig4_groups_accepted_exponents_by_cutoff() {
        let mut records = Vec::new();
        for (t, alpha) in [(10.0, 0.42), (100.0, 0.55), (1200.0, 0.95)] {
            let mut r = tiny_record(3);
            r.trajectory.provenance.temperature = Some(t);
            r.trajectory.provenance.cutoff = Some(500.0);
            r.fit_time.accepted = true;
            r.fit_time.alpha = alpha;
            r.fit_time.window = Some((1.0, 100.0));
            records.push(r);
        }
        let dir = tmp_dir("fig4");
        let arts = emit(Figure::Fig4, &records, &dir).unwrap();
        let data = std::fs::read_to_string(&arts.data).unwrap();
        assert!(data.contains("wc=500"));
        let script = std::fs::read_to_string(&arts.script).unwrap();
        assert!(script.contains("set_yscale(\"linear\")"));
        assert!(script.contains("alpha = 1/2"));
        std::fs::remove_dir_all(&dir).ok();

        // Rejected fits never enter the exponent trend.
        let mut rejected = records.clone();
        for r in &mut rejected {
            r.fit_time.accepted = false;
        }
        let err = emit(Figure::Fig4, &rejected, &tmp_dir("fig4-err")).unwrap_err();
        assert!(err.to_string().contains("accepted"), "{err}");
    }

    #[test]
    fn empty_record_list_is_exit_2() {
        let err = emit(Figure::Fig1, &[], &tmp_dir("empty")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn emission_is_deterministic() {
        let records = vec![tiny_record(3), tiny_record(4)];
        let d1 = tmp_dir("det-1");
        let d2 = tmp_dir("det-2");
        let a = emit(Figure::Fig1, &records, &d1).unwrap();
        let b = emit(Figure::Fig1, &records, &d2).unwrap();
        assert_eq!(
            std::fs::read(&a.data).unwrap(),
            std::fs::read(&b.data).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.image).unwrap(),
            std::fs::read(&b.image).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.script).unwrap(),
            std::fs::read(&b.script).unwrap()
        );
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
    }

    #[test]
    fn figure_names_parse() {
        assert_eq!("fig2".parse::<Figure>().unwrap(), Figure::Fig2);
        let err = "fig9".parse::<Figure>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
