//! Forest plots (SVG and fixed-width text) and summary tables.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::classical::{EffectEstimate, Measure};
use crate::error::{Error, Result};
use crate::math::{exp, ln, sqrt};
use crate::mcmc::{PosteriorSummary, QuantitySummary};

/// How a per-study row is marked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowMarker {
    /// Share of the pooled weight in `[0, 1]`; drawn as a square of
    /// proportional area.
    Weight(f64),
    /// Posterior median with a 95% HDI; drawn as a uniform dot.
    Hdi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestRow {
    pub label: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub marker: RowMarker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledRow {
    pub label: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: Option<f64>,
}

/// A forest plot on the ratio scale, drawn on a log axis with a reference
/// line at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestPlotSpec {
    pub title: String,
    pub measure_label: String,
    pub rows: Vec<ForestRow>,
    pub pooled: PooledRow,
}

fn measure_label(m: Measure) -> &'static str {
    match m {
        Measure::LogRelativeRisk => "RR",
        Measure::PetoLogOddsRatio => "Peto OR",
    }
}

fn check_interval(label: &str, point: f64, lo: f64, hi: f64) -> Result<()> {
    let positive = [point, lo, hi].iter().all(|v| v.is_finite() && *v > 0.0);
    if positive && lo <= point && point <= hi {
        Ok(())
    } else {
        Err(Error::InvalidRow(String::from(label)))
    }
}

impl ForestPlotSpec {
    /// Per-study estimates with their confidence intervals, squares sized by
    /// weight, and the pooled estimate with its p-value. Studies excluded by
    /// the zero-cell policy are left out.
    pub fn from_classical(est: &EffectEstimate, title: &str) -> Result<Self> {
        let z = crate::classical::ClassicalConfig::with_confidence(est.confidence_level)?.z_critical();
        let total: f64 = est.contributing().map(|s| s.weight).sum();
        let rows = est
            .contributing()
            .filter_map(|s| {
                let (point, se) = (s.point?, s.se?);
                Some(ForestRow {
                    label: s.label.clone(),
                    point: exp(point),
                    ci_low: exp(point - z * se),
                    ci_high: exp(point + z * se),
                    marker: RowMarker::Weight(if total > 0.0 { s.weight / total } else { 0.0 }),
                })
            })
            .collect();
        let (ci_low, ci_high) = est.ratio_ci();
        let spec = Self {
            title: String::from(title),
            measure_label: String::from(measure_label(est.measure)),
            rows,
            pooled: PooledRow {
                label: String::from("Fixed effect"),
                point: est.ratio(),
                ci_low,
                ci_high,
                p_value: Some(est.p_value),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Per-study `rr[id]` and the pooled `total_rr`, each as posterior median
    /// with its 95% HDI.
    pub fn from_posterior(summary: &PosteriorSummary, labels: &[(&str, &str)], title: &str) -> Result<Self> {
        let row = |q: &QuantitySummary| (q.median, q.hdi_low, q.hdi_high);
        let mut rows = Vec::with_capacity(labels.len());
        for (id, label) in labels {
            let name = format!("rr[{id}]");
            let q = summary.get(&name).ok_or_else(|| Error::InvalidRow(name.clone()))?;
            let (point, ci_low, ci_high) = row(q);
            rows.push(ForestRow {
                label: String::from(*label),
                point,
                ci_low,
                ci_high,
                marker: RowMarker::Hdi,
            });
        }
        let total = summary
            .get("total_rr")
            .ok_or_else(|| Error::InvalidRow(String::from("total_rr")))?;
        let (point, ci_low, ci_high) = row(total);
        let spec = Self {
            title: String::from(title),
            measure_label: String::from("RR"),
            rows,
            pooled: PooledRow {
                label: String::from("Posterior total RR"),
                point,
                ci_low,
                ci_high,
                p_value: None,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::EmptySpec);
        }
        for r in &self.rows {
            check_interval(&r.label, r.point, r.ci_low, r.ci_high)?;
        }
        let p = &self.pooled;
        check_interval(&p.label, p.point, p.ci_low, p.ci_high)
    }

    fn intervals(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.rows
            .iter()
            .map(|r| (r.point, r.ci_low, r.ci_high))
            .chain(core::iter::once((self.pooled.point, self.pooled.ci_low, self.pooled.ci_high)))
    }

    /// Half-width of a log axis centred on 1 that covers every interval,
    /// bounded to `[ln 1.25, max_half]`.
    fn log_half_range(&self, max_half: f64) -> f64 {
        self.intervals()
            .flat_map(|(p, lo, hi)| [ln(p).abs(), ln(lo).abs(), ln(hi).abs()])
            .fold(ln(1.25), f64::max)
            .min(max_half)
    }
}

/// Formats a p-value as `p=0.023`, or `p<0.001` below one in a thousand.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        String::from("p<0.001")
    } else {
        format!("p={p:.3}")
    }
}

fn format_interval(point: f64, lo: f64, hi: f64) -> String {
    format!("{point:.2} [{lo:.2}, {hi:.2}]")
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const SVG_WIDTH: f64 = 800.0;
const SVG_HEADER: f64 = 60.0;
const SVG_ROW: f64 = 40.0;
const PLOT_LEFT: f64 = 250.0;
const PLOT_RIGHT: f64 = 590.0;
const SVG_MAX_HALF: f64 = 6.907_755_278_982_137;
const TICKS: [f64; 15] = [
    0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 0.8, 1.0, 1.25, 2.0, 5.0, 10.0, 20.0, 100.0, 1000.0,
];

/// Horizontal pixel position of ratio `r` on a log axis of half-width `half`.
fn svg_x(r: f64, half: f64) -> f64 {
    let t = ((ln(r) + half) / (2.0 * half)).clamp(0.0, 1.0);
    PLOT_LEFT + t * (PLOT_RIGHT - PLOT_LEFT)
}

/// Renders the plot as a standalone SVG 1.1 document on an
/// `800 x (60 + 40 * rows)` canvas, where `rows` counts the pooled row.
pub fn render_forest_svg(spec: &ForestPlotSpec) -> Result<String> {
    spec.validate()?;
    let half = spec.log_half_range(SVG_MAX_HALF);
    let n = spec.rows.len() + 1;
    let height = SVG_HEADER + SVG_ROW * n as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_WIDTH:.0}" height="{height:.0}" viewBox="0 0 {SVG_WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SVG_WIDTH:.0}" height="{height:.0}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="10" y="22" font-size="16" font-weight="bold">{}</text>"#,
        xml_escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="end">{} (log scale)</text>"#,
        SVG_WIDTH - 10.0,
        xml_escape(&spec.measure_label)
    );
    for t in TICKS.iter().filter(|t| ln(**t).abs() <= half + 1e-12) {
        let x = svg_x(*t, half);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="44" x2="{x:.2}" y2="50" stroke="black"/><text x="{x:.2}" y="40" text-anchor="middle" font-size="11">{t}</text>"#
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{PLOT_LEFT:.2}" y1="50" x2="{PLOT_RIGHT:.2}" y2="50" stroke="black"/>"#
    );
    let x1 = svg_x(1.0, half);
    let _ = writeln!(
        s,
        r#"<line class="reference" x1="{x1:.2}" y1="50" x2="{x1:.2}" y2="{height:.2}" stroke="grey" stroke-dasharray="4,3"/>"#
    );

    for (i, r) in spec.rows.iter().enumerate() {
        let y = SVG_HEADER + SVG_ROW * (i as f64 + 0.5);
        let (xp, xl, xh) = (svg_x(r.point, half), svg_x(r.ci_low, half), svg_x(r.ci_high, half));
        let _ = writeln!(s, r#"<g class="row">"#);
        let _ = writeln!(
            s,
            r#"<text x="10" y="{:.2}">{}</text>"#,
            y + 4.0,
            xml_escape(&r.label)
        );
        let _ = writeln!(s, r#"<line x1="{xl:.2}" y1="{y:.2}" x2="{xh:.2}" y2="{y:.2}" stroke="black"/>"#);
        match r.marker {
            RowMarker::Weight(w) => {
                let side = 4.0 + 16.0 * sqrt(w.clamp(0.0, 1.0));
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="black"/>"#,
                    xp - side / 2.0,
                    y - side / 2.0
                );
            }
            RowMarker::Hdi => {
                let _ = writeln!(s, r#"<circle cx="{xp:.2}" cy="{y:.2}" r="5" fill="black"/>"#);
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="610" y="{:.2}">{}</text>"#,
            y + 4.0,
            format_interval(r.point, r.ci_low, r.ci_high)
        );
        let _ = writeln!(s, "</g>");
    }

    let p = &spec.pooled;
    let y = SVG_HEADER + SVG_ROW * (n as f64 - 0.5);
    let (xp, xl, xh) = (svg_x(p.point, half), svg_x(p.ci_low, half), svg_x(p.ci_high, half));
    let mut text = format_interval(p.point, p.ci_low, p.ci_high);
    if let Some(pv) = p.p_value {
        text.push(' ');
        text.push_str(&format_p(pv));
    }
    let _ = writeln!(s, r#"<g class="row pooled">"#);
    let _ = writeln!(
        s,
        r#"<text x="10" y="{:.2}" font-weight="bold">{}</text>"#,
        y + 4.0,
        xml_escape(&p.label)
    );
    let _ = writeln!(
        s,
        r#"<polygon points="{xl:.2},{y:.2} {xp:.2},{:.2} {xh:.2},{y:.2} {xp:.2},{:.2}" fill="black"/>"#,
        y - 8.0,
        y + 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="610" y="{:.2}" font-weight="bold">{}</text>"#,
        y + 4.0,
        xml_escape(&text)
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

const TEXT_WIDTH: usize = 80;
const LABEL_COLS: usize = 16;
const PLOT_COLS: usize = 33;
const TEXT_MAX_HALF: f64 = core::f64::consts::LN_10;

fn pad(s: &str, width: usize) -> String {
    let mut out: String = s.chars().take(width).collect();
    let len = out.chars().count();
    out.extend(core::iter::repeat_n(' ', width - len));
    out
}

/// Column of ratio `r`, or `None` when it falls outside the axis.
fn text_col(r: f64, half: f64) -> Option<usize> {
    let t = (ln(r) + half) / (2.0 * half);
    let c = t * (PLOT_COLS - 1) as f64;
    let c = if c >= 0.0 { (c + 0.5) as i64 } else { -1 };
    (0..PLOT_COLS as i64).contains(&c).then_some(c as usize)
}

fn text_bar(point: f64, lo: f64, hi: f64, half: f64, dash: char, mark: char) -> String {
    let mut cells = [' '; PLOT_COLS];
    let mid = PLOT_COLS / 2;
    cells[mid] = '|';
    let a = text_col(lo, half).unwrap_or(0);
    let b = text_col(hi, half).unwrap_or(PLOT_COLS - 1);
    for c in &mut cells[a..=b] {
        *c = dash;
    }
    if text_col(lo, half).is_none() {
        cells[0] = '<';
    }
    if text_col(hi, half).is_none() {
        cells[PLOT_COLS - 1] = '>';
    }
    match text_col(point, half) {
        Some(c) => cells[c] = mark,
        None if point < 1.0 => cells[0] = '<',
        None => cells[PLOT_COLS - 1] = '>',
    }
    cells.iter().collect()
}

fn push_line(out: &mut String, line: &str) {
    let trimmed = line.trim_end();
    let clipped: String = trimmed.chars().take(TEXT_WIDTH).collect();
    out.push_str(&clipped);
    out.push('\n');
}

/// Renders the plot in 80 monospace columns. Intervals are dashes, points
/// are `o` (`#` for the pooled row, whose interval uses `=`), and `<` or `>`
/// mark an interval running past the axis.
pub fn render_forest_text(spec: &ForestPlotSpec) -> Result<String> {
    spec.validate()?;
    let half = spec.log_half_range(TEXT_MAX_HALF);
    let mut out = String::new();
    push_line(&mut out, &spec.title);
    push_line(&mut out, "");
    for r in &spec.rows {
        let line = format!(
            "{} {} {}",
            pad(&r.label, LABEL_COLS),
            text_bar(r.point, r.ci_low, r.ci_high, half, '-', 'o'),
            format_interval(r.point, r.ci_low, r.ci_high)
        );
        push_line(&mut out, &line);
    }
    let rule: String = core::iter::repeat_n('-', TEXT_WIDTH).collect();
    push_line(&mut out, &rule);
    let p = &spec.pooled;
    let mut text = format_interval(p.point, p.ci_low, p.ci_high);
    if let Some(pv) = p.p_value {
        text.push(' ');
        text.push_str(&format_p(pv));
    }
    let line = format!(
        "{} {} {}",
        pad(&p.label, LABEL_COLS),
        text_bar(p.point, p.ci_low, p.ci_high, half, '=', '#'),
        text
    );
    push_line(&mut out, &line);

    let mut axis = pad("", LABEL_COLS + 1);
    axis.push('+');
    axis.extend(core::iter::repeat_n('-', PLOT_COLS - 2));
    axis.push('+');
    push_line(&mut out, &axis);
    let (lo, hi) = (format!("{:.2}", exp(-half)), format!("{:.2}", exp(half)));
    let mut labels: Vec<char> = pad("", LABEL_COLS + 1 + PLOT_COLS).chars().collect();
    let place = |labels: &mut Vec<char>, at: usize, s: &str| {
        for (i, c) in s.chars().enumerate() {
            if let Some(slot) = labels.get_mut(at + i) {
                *slot = c;
            }
        }
    };
    place(&mut labels, LABEL_COLS + 1, &lo);
    place(&mut labels, LABEL_COLS + 1 + PLOT_COLS / 2, "1");
    place(&mut labels, LABEL_COLS + 1 + PLOT_COLS - hi.len(), &hi);
    let mut label_line: String = labels.into_iter().collect();
    label_line.push(' ');
    label_line.push_str(&spec.measure_label);
    label_line.push_str(" (log scale)");
    push_line(&mut out, &label_line);
    Ok(out)
}

/// Input of [`summary_table`].
#[derive(Debug, Clone, Copy)]
pub enum TableSource<'a> {
    Classical(&'a EffectEstimate),
    Posterior(&'a PosteriorSummary),
}

fn format_level(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - libm::round(pct)).abs() < 1e-9 {
        format!("{pct:.0}%")
    } else {
        format!("{pct}%")
    }
}

/// Formats `point (95% HDI low-high)` at two decimals.
pub fn format_hdi(point: f64, low: f64, high: f64) -> String {
    format!("{point:.2} (95% HDI {low:.2}-{high:.2})")
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(&pad(cell, widths[c]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// An aligned text table: one row per study, then the pooled (classical) or
/// population-level (posterior) rows.
pub fn summary_table(source: TableSource<'_>) -> String {
    match source {
        TableSource::Classical(est) => classical_table(est),
        TableSource::Posterior(summary) => posterior_table(summary),
    }
}

fn classical_table(est: &EffectEstimate) -> String {
    let level = format_level(est.confidence_level);
    let label = measure_label(est.measure);
    let z = crate::classical::ClassicalConfig::with_confidence(est.confidence_level)
        .map(|c| c.z_critical())
        .unwrap_or(f64::NAN);
    let total: f64 = est.contributing().map(|s| s.weight).sum();
    let mut rows = Vec::new();
    rows.push(alloc::vec![
        String::from("Study"),
        format!("{label} ({level} CI)"),
        String::from("Weight"),
        String::new(),
    ]);
    for s in &est.per_study {
        let cell = match (s.point, s.se) {
            (Some(p), Some(se)) if !s.excluded => {
                format!("{:.2} (CI {:.2}-{:.2})", exp(p), exp(p - z * se), exp(p + z * se))
            }
            _ => String::from("excluded"),
        };
        let weight = if s.excluded || total <= 0.0 {
            String::from("-")
        } else {
            format!("{:.1}%", 100.0 * s.weight / total)
        };
        rows.push(alloc::vec![s.label.clone(), cell, weight, String::new()]);
    }
    let (lo, hi) = est.ratio_ci();
    rows.push(alloc::vec![
        String::from("Fixed effect"),
        format!("{:.2} (CI {lo:.2}-{hi:.2})", est.ratio()),
        String::from("100.0%"),
        format_p(est.p_value),
    ]);
    if est.q_df > 0 {
        rows.push(alloc::vec![
            String::from("Heterogeneity"),
            format!("Q={:.2}, df={}", est.q_statistic, est.q_df),
            format!("I2={:.0}%", 100.0 * est.i_squared),
            format_p(est.q_p_value),
        ]);
    }
    align(&rows)
}

fn posterior_table(summary: &PosteriorSummary) -> String {
    let fmt_opt = |v: Option<f64>, digits: usize| match v {
        Some(v) => format!("{v:.digits$}"),
        None => String::from("-"),
    };
    let mut rows = Vec::new();
    rows.push(alloc::vec![
        String::from("Quantity"),
        String::from("Mean (95% HDI)"),
        String::from("R-hat"),
        String::from("ESS"),
    ]);
    let study_rows = summary.quantities.iter().filter(|q| q.name.starts_with("rr["));
    let population = ["total_rr", "mu", "theta", "beta"]
        .into_iter()
        .filter_map(|name| summary.get(name));
    for q in study_rows.chain(population) {
        rows.push(alloc::vec![
            q.name.clone(),
            format_hdi(q.mean, q.hdi_low, q.hdi_high),
            fmt_opt(q.rhat, 3),
            fmt_opt(q.ess, 0),
        ]);
    }
    align(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(label: &str, point: f64, lo: f64, hi: f64) -> ForestRow {
        ForestRow {
            label: String::from(label),
            point,
            ci_low: lo,
            ci_high: hi,
            marker: RowMarker::Weight(0.5),
        }
    }

    fn spec(rows: Vec<ForestRow>, pooled: (f64, f64, f64)) -> ForestPlotSpec {
        ForestPlotSpec {
            title: String::from("Primary outcome"),
            measure_label: String::from("RR"),
            rows,
            pooled: PooledRow {
                label: String::from("Fixed effect"),
                point: pooled.0,
                ci_low: pooled.1,
                ci_high: pooled.2,
                p_value: Some(0.0004),
            },
        }
    }

    fn well_formed(xml: &str) -> bool {
        roxmltree::Document::parse(xml).is_ok()
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let s = spec(vec![row("A & <B>", 1.0, 0.5, 2.0)], (1.0, 0.8, 1.25));
        let a = render_forest_svg(&s).unwrap();
        let b = render_forest_svg(&s).unwrap();
        assert_eq!(a, b);
        assert!(well_formed(&a));
        assert!(a.contains("A &amp; &lt;B&gt;"));
        assert!(a.contains(r#"width="800" height="140""#));
        let reference = svg_x(1.0, s.log_half_range(SVG_MAX_HALF));
        assert!(a.contains(&format!(r#"class="reference" x1="{reference:.2}""#)));
        assert!(a.contains(&format!("{reference:.2},{:.2}", SVG_HEADER + SVG_ROW * 1.5 - 8.0)));
    }

    #[test]
    fn svg_has_one_group_per_row() {
        let rows = (0..6)
            .map(|i| row(&format!("S{i}"), 1.1 + 0.1 * i as f64, 0.9, 1.9))
            .collect();
        let svg = render_forest_svg(&spec(rows, (1.39, 1.27, 1.51))).unwrap();
        assert_eq!(svg.matches(r#"<g class="row"#).count(), 7);
        assert_eq!(svg.matches(r#"<g class="row pooled">"#).count(), 1);
        assert!(well_formed(&svg));
    }

    #[test]
    fn svg_positions_are_linear_in_log_ratio() {
        let half = 2.0;
        let pts = [0.3, 1.0, 4.0];
        let xs: Vec<f64> = pts.iter().map(|r| svg_x(*r, half)).collect();
        let slope1 = (xs[1] - xs[0]) / (ln(pts[1]) - ln(pts[0]));
        let slope2 = (xs[2] - xs[1]) / (ln(pts[2]) - ln(pts[1]));
        assert!((slope1 - slope2).abs() < 1e-9);
        assert_eq!(svg_x(1.0, half), (PLOT_LEFT + PLOT_RIGHT) / 2.0);
    }

    #[test]
    fn empty_and_invalid_specs_are_rejected() {
        assert_eq!(render_forest_svg(&spec(vec![], (1.0, 0.9, 1.1))), Err(Error::EmptySpec));
        assert_eq!(render_forest_text(&spec(vec![], (1.0, 0.9, 1.1))), Err(Error::EmptySpec));
        let bad = spec(vec![row("S1", 2.0, 0.5, 1.5)], (1.0, 0.9, 1.1));
        assert_eq!(render_forest_svg(&bad), Err(Error::InvalidRow(String::from("S1"))));
    }

    #[test]
    fn text_marker_sits_on_reference_column() {
        let out = render_forest_text(&spec(vec![row("S1", 1.0, 0.5, 2.0)], (1.0, 0.8, 1.25))).unwrap();
        let line = out.lines().find(|l| l.starts_with("S1")).unwrap();
        let col = LABEL_COLS + 1 + PLOT_COLS / 2;
        assert_eq!(line.chars().nth(col), Some('o'));
        assert!(out.lines().all(|l| l.chars().count() <= TEXT_WIDTH));
    }

    #[test]
    fn text_clips_with_arrows() {
        let out = render_forest_text(&spec(vec![row("S1", 3.0, 1.5, 400.0)], (1.2, 1.0, 1.4))).unwrap();
        let line = out.lines().find(|l| l.starts_with("S1")).unwrap();
        assert_eq!(line.chars().nth(LABEL_COLS + PLOT_COLS), Some('>'));
        let low = render_forest_text(&spec(vec![row("S1", 0.3, 0.001, 0.9)], (1.2, 1.0, 1.4))).unwrap();
        let line = low.lines().find(|l| l.starts_with("S1")).unwrap();
        assert_eq!(line.chars().nth(LABEL_COLS + 1), Some('<'));
    }

    #[test]
    fn pooled_text_row_shows_p_value() {
        let mut s = spec(vec![row("S1", 1.4, 1.2, 1.6)], (1.39, 1.27, 1.51));
        let out = render_forest_text(&s).unwrap();
        let pooled = out.lines().find(|l| l.starts_with("Fixed effect")).unwrap();
        assert!(pooled.ends_with("1.39 [1.27, 1.51] p<0.001"), "{pooled}");
        assert!(pooled.contains('#') && pooled.contains('='));
        s.pooled.p_value = Some(0.0234);
        let out = render_forest_text(&s).unwrap();
        assert!(out.contains("p=0.023"));
    }

    #[test]
    fn p_value_formats() {
        assert_eq!(format_p(0.0004), "p<0.001");
        assert_eq!(format_p(0.001), "p=0.001");
        assert_eq!(format_p(0.05), "p=0.050");
    }

    fn quantity(name: &str, mean: f64, lo: f64, hi: f64) -> QuantitySummary {
        QuantitySummary {
            name: String::from(name),
            mean,
            sd: 0.1,
            median: mean,
            hdi_low: lo,
            hdi_high: hi,
            rhat: Some(1.001),
            ess: Some(1234.0),
        }
    }

    fn posterior(quantities: Vec<QuantitySummary>) -> PosteriorSummary {
        PosteriorSummary {
            quantities,
            num_chains: 4,
            draws_per_chain: 1000,
            divergences: 0,
            step_sizes: vec![0.1; 4],
            accept_rates: vec![0.8; 4],
            warnings: vec![],
        }
    }

    #[test]
    fn posterior_cell_format() {
        assert_eq!(format_hdi(1.0415, 0.93, 1.18), "1.04 (95% HDI 0.93-1.18)");
        let table = summary_table(TableSource::Posterior(&posterior(vec![quantity("total_rr", 1.0415, 0.93, 1.18)])));
        assert_eq!(table.lines().count(), 2);
        assert!(table.contains("total_rr  1.04 (95% HDI 0.93-1.18)"));
    }

    #[test]
    fn posterior_forest_rows_follow_labels() {
        let summary = posterior(vec![
            quantity("rr[S1]", 1.2, 0.9, 1.6),
            quantity("rr[S2]", 0.8, 0.5, 1.1),
            quantity("total_rr", 1.0, 0.9, 1.1),
        ]);
        let s = ForestPlotSpec::from_posterior(&summary, &[("S1", "Study one"), ("S2", "Study two")], "t").unwrap();
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[1].label, "Study two");
        assert_eq!(s.rows[0].marker, RowMarker::Hdi);
        assert!(s.pooled.p_value.is_none());
        assert!(ForestPlotSpec::from_posterior(&summary, &[("S9", "x")], "t").is_err());
    }

    #[test]
    fn classical_table_and_forest() {
        use crate::classical::{fixed_effect_rr, ClassicalConfig};
        use crate::data::{MetaDataset, StudyRecord};
        let data = MetaDataset::new(vec![
            StudyRecord::new("S1", 84, 89, 155, 345),
            StudyRecord::new("S2", 80, 93, 150, 350),
        ]);
        let est = fixed_effect_rr(&data, &ClassicalConfig::default()).unwrap();
        let table = summary_table(TableSource::Classical(&est));
        assert_eq!(table.lines().count(), 5);
        let pooled = table.lines().find(|l| l.starts_with("Fixed effect")).unwrap();
        assert!(pooled.ends_with("p<0.001"), "{pooled}");
        let spec = ForestPlotSpec::from_classical(&est, "t").unwrap();
        assert_eq!(spec.rows.len(), 2);
        let shares: f64 = spec
            .rows
            .iter()
            .map(|r| match r.marker {
                RowMarker::Weight(w) => w,
                RowMarker::Hdi => 0.0,
            })
            .sum();
        assert!((shares - 1.0).abs() < 1e-12);
    }
}
