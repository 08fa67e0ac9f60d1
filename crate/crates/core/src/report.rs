//! Tables, curve exports and SVG step plots.
//!
//! Everything here is deterministic: identical inputs give byte-identical
//! output. Tables are checked against their accounting identities before they
//! are returned, so an inconsistent table is never written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{greenwood_ci, EstimatorError, LogRankResult, SurvivalCurve, SurvivalSummary};
use crate::ingest::{assign_entry_period, EntryPeriod};
use crate::outcomes::OutcomeId;
use crate::trajectory::{Transition, TransitionKind};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("accounting identity violated: {0}")]
    Accounting(String),
    #[error("curve file: {0}")]
    CurveFormat(String),
    #[error("nothing to plot")]
    NoCurves,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `inf` for +inf medians, two decimals otherwise.
pub fn format_median(m: f64) -> String {
    if m.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{m:.2}")
    }
}

/// Share in percent with one decimal, e.g. `39.4`.
pub fn percent(part: usize, whole: usize) -> String {
    if whole == 0 {
        return "na".to_owned();
    }
    format!("{:.1}", 100.0 * part as f64 / whole as f64)
}

// ── mobility ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MobilityRow {
    pub transition_year: i32,
    pub major_switch: usize,
    pub plan_change_same_title: usize,
    pub reentry_same_plan: usize,
    pub total: usize,
}

impl MobilityRow {
    fn add(&mut self, kind: TransitionKind) {
        match kind {
            TransitionKind::MajorSwitch => self.major_switch += 1,
            TransitionKind::PlanChangeSameTitle => self.plan_change_same_title += 1,
            TransitionKind::ReentrySamePlan => self.reentry_same_plan += 1,
        }
        self.total += 1;
    }

    pub fn count(&self, kind: TransitionKind) -> usize {
        match kind {
            TransitionKind::MajorSwitch => self.major_switch,
            TransitionKind::PlanChangeSameTitle => self.plan_change_same_title,
            TransitionKind::ReentrySamePlan => self.reentry_same_plan,
        }
    }

    fn balanced(&self) -> bool {
        self.total == self.major_switch + self.plan_change_same_title + self.reentry_same_plan
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MobilityTable {
    pub rows: Vec<MobilityRow>,
}

/// Year-by-kind transition counts, keyed by the calendar year of each
/// transition's date.
pub fn mobility_table<'a>(transitions: impl IntoIterator<Item = &'a Transition>) -> MobilityTable {
    use chrono::Datelike;
    let mut by_year: BTreeMap<i32, MobilityRow> = BTreeMap::new();
    for t in transitions {
        let year = t.date.year();
        by_year
            .entry(year)
            .or_insert(MobilityRow {
                transition_year: year,
                ..Default::default()
            })
            .add(t.kind);
    }
    MobilityTable {
        rows: by_year.into_values().collect(),
    }
}

impl MobilityTable {
    pub fn check(&self) -> Result<(), ReportError> {
        match self.rows.iter().find(|r| !r.balanced()) {
            Some(r) => Err(ReportError::Accounting(format!(
                "mobility row {} total {} != kind sum",
                r.transition_year, r.total
            ))),
            None => Ok(()),
        }
    }

    /// Per-period totals, using the entry-period year bands.
    pub fn rollup_by_period(&self) -> Vec<(String, MobilityRow)> {
        let mut out: BTreeMap<String, MobilityRow> = BTreeMap::new();
        for r in &self.rows {
            let key = assign_entry_period(r.transition_year)
                .map_or("pre-1980".to_owned(), |p| p.label().to_owned());
            let acc = out.entry(key).or_default();
            acc.major_switch += r.major_switch;
            acc.plan_change_same_title += r.plan_change_same_title;
            acc.reentry_same_plan += r.reentry_same_plan;
            acc.total += r.total;
        }
        out.into_iter().collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        self.check()?;
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["transition_year", "major_switch", "plan_change_same_title", "reentry_same_plan", "total"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        self.check()?;
        Ok(serde_json::to_string_pretty(&self.rows).expect("rows serialize"))
    }
}

// ── summary tables ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub outcome: OutcomeId,
    pub stratum: String,
    pub stratum_value: String,
    pub n_total: usize,
    pub n_events: usize,
    pub n_censored: usize,
    pub median_survival_time: f64,
    pub probe_survival: Vec<(f64, f64)>,
    /// Stratum median minus the global median.
    pub median_delta_vs_global: Option<f64>,
    /// Log-rank p across strata, carried on the global row only.
    pub logrank_p: Option<f64>,
}

impl SummaryRow {
    fn balanced(&self) -> bool {
        self.n_events + self.n_censored == self.n_total
    }
}

/// Global row plus one row per entry period, in period order.
pub fn summary_table(
    outcome: OutcomeId,
    global: &SurvivalSummary,
    strata: &[(EntryPeriod, SurvivalSummary)],
    log_rank: Option<&LogRankResult>,
) -> Result<Vec<SummaryRow>, ReportError> {
    let row = |stratum: &str, value: &str, s: &SurvivalSummary| SummaryRow {
        outcome,
        stratum: stratum.to_owned(),
        stratum_value: value.to_owned(),
        n_total: s.n_total,
        n_events: s.n_events,
        n_censored: s.n_censored,
        median_survival_time: s.median_survival,
        probe_survival: s.probe_survival.clone(),
        median_delta_vs_global: None,
        logrank_p: None,
    };
    let mut rows = vec![SummaryRow {
        logrank_p: log_rank.map(|l| l.p_value),
        ..row("Global", "All", global)
    }];
    let mut sorted: Vec<_> = strata.iter().collect();
    sorted.sort_by_key(|(p, _)| *p);
    for (p, s) in sorted {
        let delta = (s.median_survival.is_finite() && global.median_survival.is_finite())
            .then_some(s.median_survival - global.median_survival);
        rows.push(SummaryRow {
            median_delta_vs_global: delta,
            ..row("Entry Period", p.label(), s)
        });
    }
    check_summary(&rows)?;
    Ok(rows)
}

pub fn check_summary(rows: &[SummaryRow]) -> Result<(), ReportError> {
    if let Some(r) = rows.iter().find(|r| !r.balanced()) {
        return Err(ReportError::Accounting(format!(
            "{} {} {}: {} events + {} censored != {} total",
            r.outcome, r.stratum, r.stratum_value, r.n_events, r.n_censored, r.n_total
        )));
    }
    let global: Vec<_> = rows.iter().filter(|r| r.stratum == "Global").collect();
    let strata: Vec<_> = rows.iter().filter(|r| r.stratum != "Global").collect();
    if let [g] = global.as_slice() {
        if !strata.is_empty() {
            let sum: usize = strata.iter().map(|r| r.n_total).sum();
            let ev: usize = strata.iter().map(|r| r.n_events).sum();
            if sum != g.n_total || ev != g.n_events {
                return Err(ReportError::Accounting(format!(
                    "strata sum to {sum} subjects / {ev} events, global has {} / {}",
                    g.n_total, g.n_events
                )));
            }
        }
    }
    Ok(())
}

fn probe_header(t: f64) -> String {
    format!("S({t})")
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.prec$}"))
}

fn summary_cells(r: &SummaryRow) -> Vec<String> {
    let mut cells = vec![
        r.outcome.to_string(),
        r.stratum.clone(),
        r.stratum_value.clone(),
        r.n_total.to_string(),
        r.n_events.to_string(),
        r.n_censored.to_string(),
        format_median(r.median_survival_time),
    ];
    cells.extend(r.probe_survival.iter().map(|(_, s)| format!("{s:.4}")));
    cells.push(fmt_opt(r.median_delta_vs_global, 2));
    cells.push(r.logrank_p.map_or(String::new(), |p| format!("{p:.4e}")));
    cells
}

fn summary_header(rows: &[SummaryRow]) -> Vec<String> {
    let mut h: Vec<String> = [
        "outcome",
        "stratum",
        "stratum_value",
        "n_total",
        "n_events",
        "n_censored",
        "median_survival_time",
    ]
    .map(String::from)
    .to_vec();
    if let Some(r) = rows.first() {
        h.extend(r.probe_survival.iter().map(|(t, _)| probe_header(*t)));
    }
    h.push("median_delta_vs_global".into());
    h.push("logrank_p".into());
    h
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), ReportError> {
    check_summary(rows)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(summary_header(rows))?;
    for r in rows {
        w.write_record(summary_cells(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_json(rows: &[SummaryRow]) -> Result<String, ReportError> {
    check_summary(rows)?;
    let v: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            let probes: serde_json::Map<String, serde_json::Value> = r
                .probe_survival
                .iter()
                .map(|(t, s)| (t.to_string(), serde_json::json!(s)))
                .collect();
            serde_json::json!({
                "outcome": r.outcome.to_string(),
                "stratum": r.stratum,
                "stratum_value": r.stratum_value,
                "n_total": r.n_total,
                "n_events": r.n_events,
                "n_censored": r.n_censored,
                "median_survival_time": format_median(r.median_survival_time),
                "probe_survival": probes,
                "median_delta_vs_global": r.median_delta_vs_global,
                "logrank_p": r.logrank_p,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&v).expect("json"))
}

/// Space-aligned plain-text rendering of the summary table.
pub fn summary_text(rows: &[SummaryRow]) -> Result<String, ReportError> {
    check_summary(rows)?;
    let mut table = vec![summary_header(rows)];
    table.extend(rows.iter().map(summary_cells));
    Ok(align(&table))
}

fn align(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One sentence per row with explicit denominators, e.g.
/// `P4 (2010+): 39.4% events (2471/6276), 60.6% censored, median 5.05 y`.
pub fn narrative(rows: &[SummaryRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "{} {}: {}% events ({}/{}), {}% censored ({}/{}), median {}",
                r.outcome,
                r.stratum_value,
                percent(r.n_events, r.n_total),
                r.n_events,
                r.n_total,
                percent(r.n_censored, r.n_total),
                r.n_censored,
                r.n_total,
                match format_median(r.median_survival_time).as_str() {
                    "inf" => "inf".to_owned(),
                    m => format!("{m} y"),
                }
            )
        })
        .collect()
}

// ── curve export ────────────────────────────────────────────────────────────

pub const CURVE_HEADER: [&str; 7] = ["time", "n_risk", "n_events", "n_censored", "survival", "ci_lower", "ci_upper"];

/// One row per distinct observed time (event or censoring). `n_censored`
/// counts censorings at exactly that time; the curve only steps on rows with
/// `n_events > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub time: f64,
    pub n_risk: usize,
    pub n_events: usize,
    pub n_censored: usize,
    pub survival: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn from_curve(curve: &SurvivalCurve, level: f64) -> Result<Self, ReportError> {
        let band = greenwood_ci(curve, level)?;
        let mut rows = Vec::new();
        let (mut ei, mut ci) = (0, 0);
        let mut at_risk = curve.n_subjects;
        let (mut s, mut lo, mut hi) = (1.0, 1.0, 1.0);
        while ei < curve.times.len() || ci < curve.censor_times.len() {
            let te = curve.times.get(ei).copied().unwrap_or(f64::INFINITY);
            let tc = curve.censor_times.get(ci).map_or(f64::INFINITY, |c| c.0);
            let t = te.min(tc);
            let mut d = 0;
            if te == t {
                d = curve.n_event[ei];
                s = curve.survival[ei];
                (lo, hi) = band[ei];
                ei += 1;
            }
            let mut c = 0;
            if tc == t {
                c = curve.censor_times[ci].1;
                ci += 1;
            }
            rows.push(CurveRow {
                time: t,
                n_risk: at_risk,
                n_events: d,
                n_censored: c,
                survival: s,
                ci_lower: lo,
                ci_upper: hi,
            });
            at_risk -= d + c;
        }
        Ok(Self { rows })
    }

    pub fn n_total(&self) -> usize {
        self.rows.first().map_or(0, |r| r.n_risk)
    }

    pub fn n_events(&self) -> usize {
        self.rows.iter().map(|r| r.n_events).sum()
    }

    pub fn n_censored(&self) -> usize {
        self.rows.iter().map(|r| r.n_censored).sum()
    }

    pub fn max_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.time)
    }

    pub fn median(&self) -> f64 {
        self.rows
            .iter()
            .find(|r| r.n_events > 0 && r.survival <= 0.5)
            .map_or(f64::INFINITY, |r| r.time)
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .take_while(|r| r.time <= t)
            .filter(|r| r.n_events > 0)
            .last()
            .map_or(1.0, |r| r.survival)
    }

    pub fn summary(&self, probes: &[f64]) -> SurvivalSummary {
        SurvivalSummary {
            n_total: self.n_total(),
            n_events: self.n_events(),
            n_censored: self.n_censored(),
            median_survival: self.median(),
            probe_survival: probes.iter().map(|&p| (p, self.survival_at(p))).collect(),
        }
    }

    /// Step-function corners in data coordinates, starting at (0, 1) and
    /// ending at the last observed time.
    pub fn step_vertices(&self) -> Vec<(f64, f64)> {
        let mut pts = vec![(0.0, 1.0)];
        let mut s = 1.0;
        for r in self.rows.iter().filter(|r| r.n_events > 0) {
            pts.push((r.time, s));
            s = r.survival;
            pts.push((r.time, s));
        }
        pts.push((self.max_time(), s));
        pts
    }

    fn band_vertices(&self, upper: bool) -> Vec<(f64, f64)> {
        let mut pts = vec![(0.0, 1.0)];
        let mut v = 1.0;
        for r in self.rows.iter().filter(|r| r.n_events > 0) {
            pts.push((r.time, v));
            v = if upper { r.ci_upper } else { r.ci_lower };
            pts.push((r.time, v));
        }
        pts.push((self.max_time(), v));
        pts
    }

    fn check(&self) -> Result<(), ReportError> {
        for w in self.rows.windows(2) {
            if w[1].n_risk + w[0].n_events + w[0].n_censored != w[0].n_risk || w[1].time <= w[0].time {
                return Err(ReportError::Accounting(format!(
                    "curve rows at {} and {} do not chain",
                    w[0].time, w[1].time
                )));
            }
        }
        if let Some(last) = self.rows.last() {
            if last.n_risk != last.n_events + last.n_censored {
                return Err(ReportError::Accounting("final risk set not exhausted".into()));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        self.check()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CURVE_HEADER)?;
        for r in &self.rows {
            w.write_record([
                format!("{:.6}", r.time),
                r.n_risk.to_string(),
                r.n_events.to_string(),
                r.n_censored.to_string(),
                format!("{:.6}", r.survival),
                format!("{:.6}", r.ci_lower),
                format!("{:.6}", r.ci_upper),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ReportError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CURVE_HEADER {
            return Err(ReportError::CurveFormat(format!(
                "expected header `{}`",
                CURVE_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let f = |k: usize| -> Result<f64, ReportError> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|_| ReportError::CurveFormat(format!("row {i}: bad {} `{}`", CURVE_HEADER[k], &rec[k])))
            };
            let n = |k: usize| -> Result<usize, ReportError> {
                rec[k]
                    .parse::<usize>()
                    .map_err(|_| ReportError::CurveFormat(format!("row {i}: bad {} `{}`", CURVE_HEADER[k], &rec[k])))
            };
            rows.push(CurveRow {
                time: f(0)?,
                n_risk: n(1)?,
                n_events: n(2)?,
                n_censored: n(3)?,
                survival: f(4)?,
                ci_lower: f(5)?,
                ci_upper: f(6)?,
            });
        }
        let table = Self { rows };
        table.check().map_err(|e| ReportError::CurveFormat(e.to_string()))?;
        Ok(table)
    }
}

// ── SVG ─────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub title: String,
    pub width: f64,
    pub height: f64,
    pub show_ci: bool,
    pub x_label: String,
    pub y_label: String,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            title: "Kaplan-Meier estimate".into(),
            width: 720.0,
            height: 480.0,
            show_ci: true,
            x_label: "Years since first enrolment".into(),
            y_label: "Survival probability".into(),
        }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// Plot area mapping from data to pixel coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x_max: f64,
    pub width: f64,
    pub height: f64,
}

impl Frame {
    pub fn x(&self, t: f64) -> f64 {
        MARGIN_LEFT + t / self.x_max * (self.width - MARGIN_LEFT - MARGIN_RIGHT)
    }

    pub fn y(&self, s: f64) -> f64 {
        MARGIN_TOP + (1.0 - s) * (self.height - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

pub fn frame_for(curves: &[(String, CurveTable)], options: &SvgOptions) -> Frame {
    let longest = curves.iter().map(|(_, c)| c.max_time()).fold(0.0, f64::max);
    Frame {
        x_max: longest.ceil().max(1.0),
        width: options.width,
        height: options.height,
    }
}

fn path_data(points: &[(f64, f64)], frame: &Frame) -> String {
    let mut d = String::new();
    for (i, &(t, s)) in points.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd}{:.2},{:.2} ", frame.x(t), frame.y(s));
    }
    d.trim_end().to_owned()
}

/// Render labelled curves as one SVG 1.1 document.
pub fn render_svg(curves: &[(String, CurveTable)], options: &SvgOptions) -> Result<String, ReportError> {
    if curves.is_empty() {
        return Err(ReportError::NoCurves);
    }
    let f = frame_for(curves, options);
    let (w, h) = (options.width, options.height);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (f.x(0.0) + f.x(f.x_max)) / 2.0,
        xml_escape(&options.title)
    );

    // axes and grid
    let step = nice_step(f.x_max);
    let _ = writeln!(s, r##"<g class="grid" stroke="#dddddd" stroke-width="1">"##);
    let mut t = 0.0;
    while t <= f.x_max + 1e-9 {
        let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#, f.x(t), f.y(0.0), f.y(1.0));
        t += step;
    }
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}"/>"#, f.x(0.0), f.y(v), f.x(f.x_max));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black" stroke-width="1"><line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}"/><line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{3:.2}"/></g>"#,
        f.x(0.0),
        f.y(0.0),
        f.x(f.x_max),
        f.y(1.0)
    );
    let _ = writeln!(s, r#"<g class="ticks" text-anchor="middle">"#);
    let mut t = 0.0;
    while t <= f.x_max + 1e-9 {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, f.x(t), f.y(0.0) + 18.0, t);
        t += step;
    }
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, f.x(0.0) - 8.0, f.y(v) + 4.0);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (f.x(0.0) + f.x(f.x_max)) / 2.0,
        h - 18.0,
        xml_escape(&options.x_label)
    );
    let ymid = (f.y(0.0) + f.y(1.0)) / 2.0;
    let _ = writeln!(
        s,
        r#"<text x="20" y="{ymid:.2}" text-anchor="middle" transform="rotate(-90 20 {ymid:.2})">{}</text>"#,
        xml_escape(&options.y_label)
    );

    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if options.show_ci {
            let mut band = curve.band_vertices(true);
            band.extend(curve.band_vertices(false).into_iter().rev());
            let _ = writeln!(
                s,
                r#"<path class="ci" d="{} Z" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                path_data(&band, &f)
            );
        }
        let _ = writeln!(
            s,
            r#"<path class="km" data-label="{}" d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            xml_escape(label),
            path_data(&curve.step_vertices(), &f)
        );
    }

    let lx = w - MARGIN_RIGHT + 16.0;
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, (label, _)) in curves.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 20.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            y + 4.0,
            xml_escape(label)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

// ── run manifest ────────────────────────────────────────────────────────────

/// Audit record of one CLI run. Holds no timestamps so that repeated runs
/// produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub input: Option<InputDigest>,
    pub config: serde_json::Value,
    pub counts: BTreeMap<String, usize>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl InputDigest {
    pub fn of(path: &str, bytes: &[u8]) -> Self {
        use sha2::{Digest, Sha256};
        Self {
            path: path.to_owned(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::km_fit_pairs;

    fn hand_curve() -> SurvivalCurve {
        km_fit_pairs(&[(1.0, true), (2.0, false), (3.0, true), (4.0, true), (5.0, false)]).unwrap()
    }

    fn tr(year: i32, kind: TransitionKind) -> Transition {
        Transition {
            student_id: "s".into(),
            kind,
            date: chrono::NaiveDate::from_ymd_opt(year, 6, 1).unwrap(),
            from_major: String::new(),
            from_plan: String::new(),
            to_major: String::new(),
            to_plan: String::new(),
        }
    }

    #[test]
    fn mobility_first_published_row() {
        let ts: Vec<_> = (0..3).map(|_| tr(1984, TransitionKind::MajorSwitch)).collect();
        let t = mobility_table(&ts);
        assert_eq!(
            t.rows,
            vec![MobilityRow {
                transition_year: 1984,
                major_switch: 3,
                plan_change_same_title: 0,
                reentry_same_plan: 0,
                total: 3
            }]
        );
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "transition_year,major_switch,plan_change_same_title,reentry_same_plan,total\n1984,3,0,0,3\n"
        );
    }

    #[test]
    fn mobility_empty_and_rollup() {
        assert!(mobility_table(&[]).rows.is_empty());
        let ts = vec![
            tr(1987, TransitionKind::PlanChangeSameTitle),
            tr(1989, TransitionKind::ReentrySamePlan),
            tr(2004, TransitionKind::PlanChangeSameTitle),
        ];
        let t = mobility_table(&ts);
        assert_eq!(t.rows.iter().map(|r| r.transition_year).collect::<Vec<_>>(), vec![1987, 1989, 2004]);
        let roll = t.rollup_by_period();
        assert_eq!(roll[0].0, "P1 (1980-1989)");
        assert_eq!(roll[0].1.total, 2);
        assert_eq!(roll[1].1.plan_change_same_title, 1);
    }

    #[test]
    fn unbalanced_mobility_refused() {
        let t = MobilityTable {
            rows: vec![MobilityRow {
                transition_year: 1990,
                major_switch: 1,
                plan_change_same_title: 0,
                reentry_same_plan: 0,
                total: 2,
            }],
        };
        assert!(matches!(t.write_csv(Vec::new()), Err(ReportError::Accounting(_))));
    }

    fn summary(n: usize, e: usize, c: usize, m: f64) -> SurvivalSummary {
        SurvivalSummary {
            n_total: n,
            n_events: e,
            n_censored: c,
            median_survival: m,
            probe_survival: vec![],
        }
    }

    #[test]
    fn summary_rows_from_published_counts() {
        let rows = summary_table(OutcomeId::A, &summary(24016, 19194, 4822, 4.33), &[], None).unwrap();
        let text = summary_text(&rows).unwrap();
        let line = text.lines().nth(1).unwrap();
        let cells: Vec<_> = line.split_whitespace().collect();
        assert_eq!(cells, ["A", "Global", "All", "24016", "19194", "4822", "4.33"]);

        let rows = summary_table(OutcomeId::B, &summary(24132, 5175, 18957, f64::INFINITY), &[], None).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("B,Global,All,24132,5175,18957,inf"));
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn summary_refuses_bad_accounting() {
        let err = summary_table(OutcomeId::A, &summary(10, 5, 4, 1.0), &[], None).unwrap_err();
        assert!(matches!(err, ReportError::Accounting(_)));
        let err = summary_table(
            OutcomeId::A,
            &summary(10, 5, 5, 1.0),
            &[(EntryPeriod::P1, summary(4, 2, 2, 1.0))],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ReportError::Accounting(_)));
    }

    #[test]
    fn percentages_from_published_counts() {
        assert_eq!(percent(2471, 6276), "39.4");
        assert_eq!(percent(2614, 9215), "28.4");
        assert_eq!(percent(18957, 24132), "78.6");
        assert_eq!(percent(1, 0), "na");
    }

    #[test]
    fn curve_table_layout() {
        let t = CurveTable::from_curve(&hand_curve(), 0.95).unwrap();
        let times: Vec<_> = t.rows.iter().map(|r| r.time).collect();
        assert_eq!(times, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let risk: Vec<_> = t.rows.iter().map(|r| r.n_risk).collect();
        assert_eq!(risk, vec![5, 4, 3, 2, 1]);
        assert_eq!(t.rows[1].survival, t.rows[0].survival);
        assert_eq!((t.n_total(), t.n_events(), t.n_censored()), (5, 3, 2));
        assert_eq!(t.median(), 4.0);
        assert!((t.survival_at(3.5) - 0.533_333_333_333).abs() < 1e-9);
    }

    #[test]
    fn curve_csv_is_six_decimal_and_reads_back() {
        let t = CurveTable::from_curve(&hand_curve(), 0.95).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,n_risk,n_events,n_censored,survival,ci_lower,ci_upper\n1.000000,5,1,0,0.800000,"));
        let back = CurveTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.median(), 4.0);
        assert_eq!(back.n_total(), 5);
        assert!(CurveTable::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn flat_curve_is_one_horizontal_line() {
        let c = km_fit_pairs(&[(3.0, false), (4.0, false)]).unwrap();
        let t = CurveTable::from_curve(&c, 0.95).unwrap();
        assert_eq!(t.step_vertices(), vec![(0.0, 1.0), (4.0, 1.0)]);
        let svg = render_svg(&[("All".into(), t)], &SvgOptions::default()).unwrap();
        let f = Frame {
            x_max: 4.0,
            width: 720.0,
            height: 480.0,
        };
        let want = format!("d=\"M{:.2},{:.2} L{:.2},{:.2}\"", f.x(0.0), f.y(1.0), f.x(4.0), f.y(1.0));
        assert!(svg.contains(&want), "{svg}");
    }

    #[test]
    fn hand_curve_steps_at_1_3_4() {
        let t = CurveTable::from_curve(&hand_curve(), 0.95).unwrap();
        let v = t.step_vertices();
        let xs: Vec<f64> = v.windows(2).filter(|w| w[0].0 == w[1].0).map(|w| w[0].0).collect();
        assert_eq!(xs, vec![1.0, 3.0, 4.0]);
        assert_eq!(v.last(), Some(&(5.0, t.rows[4].survival)));
    }

    #[test]
    fn four_labelled_paths() {
        let t = CurveTable::from_curve(&hand_curve(), 0.95).unwrap();
        let curves: Vec<_> = ["P1", "P2", "P3", "P4"].iter().map(|l| (l.to_string(), t.clone())).collect();
        let svg = render_svg(&curves, &SvgOptions::default()).unwrap();
        assert_eq!(svg.matches("class=\"km\"").count(), 4);
        for l in ["P1", "P2", "P3", "P4"] {
            assert!(svg.contains(&format!("data-label=\"{l}\"")));
            assert!(svg.contains(&format!(">{l}</text>")));
        }
        assert_eq!(svg, render_svg(&curves, &SvgOptions::default()).unwrap());
        assert!(render_svg(&[], &SvgOptions::default()).is_err());
    }
}
