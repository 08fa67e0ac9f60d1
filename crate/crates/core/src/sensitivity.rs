//! Robustness re-runs under alternative definitions: inactivity window,
//! academic-year time origin and exclusion of the latest entrants.
//!
//! Every variant is a full pipeline run. Results are compared with a single
//! baseline variant per outcome and stratum.

use serde::{Serialize, Serializer};

use crate::estimator::{km_fit, median_survival, survival_at, SurvivalCurve};
use crate::exec::Execution;
use crate::ingest::StudentHistory;
use crate::outcomes::{stratify, OutcomeConfig, OutcomeDataset, OutcomeId, StratifyBy, TimeOrigin, ALL_STRATUM};
use crate::pipeline::{run, AnalysisConfig};
use crate::trajectory::GapConfig;
use crate::Result;

pub const DEFAULT_WINDOWS: [f64; 3] = [1.0, 2.0, 3.0];
pub const DEFAULT_EXCLUDE_LAST: u32 = 3;
pub const DEFAULT_STABLE_THRESHOLD: f64 = 0.25;
pub const BASELINE: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSpec {
    pub name: String,
    pub inactivity_window_years: f64,
    pub time_origin: TimeOrigin,
    pub exclude_last_k_entry_years: u32,
}

impl VariantSpec {
    fn config(&self, base: &SensitivityBase) -> Result<AnalysisConfig> {
        let gap = GapConfig::new(self.inactivity_window_years, base.observation_end)?;
        let outcome = OutcomeConfig::new(gap).with_origin(self.time_origin, base.academic_year_start_month)?;
        Ok(AnalysisConfig {
            outcome,
            exclude_last_k: self.exclude_last_k_entry_years,
        })
    }
}

/// Settings shared by all variants of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBase {
    pub baseline: VariantSpec,
    pub observation_end: chrono::NaiveDate,
    pub academic_year_start_month: u32,
    /// Largest baseline-vs-variant median gap (years) still called stable.
    pub stable_threshold: f64,
}

impl SensitivityBase {
    pub fn new(window: f64, observation_end: chrono::NaiveDate) -> Self {
        Self {
            baseline: VariantSpec {
                name: BASELINE.into(),
                inactivity_window_years: window,
                time_origin: TimeOrigin::ExactDate,
                exclude_last_k_entry_years: 0,
            },
            observation_end,
            academic_year_start_month: 1,
            stable_threshold: DEFAULT_STABLE_THRESHOLD,
        }
    }

    pub fn window_variant(&self, window: f64) -> VariantSpec {
        VariantSpec {
            name: format!("window_{window}"),
            inactivity_window_years: window,
            ..self.baseline.clone()
        }
    }

    pub fn origin_variant(&self) -> VariantSpec {
        VariantSpec {
            name: "origin_academic_year".into(),
            time_origin: TimeOrigin::AcademicYear,
            ..self.baseline.clone()
        }
    }

    pub fn exclusion_variant(&self, k: u32) -> VariantSpec {
        VariantSpec {
            name: format!("exclude_last_{k}"),
            exclude_last_k_entry_years: k,
            ..self.baseline.clone()
        }
    }
}

fn ser_median<S: Serializer>(m: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if m.is_finite() {
        s.serialize_f64(*m)
    } else {
        s.serialize_str("inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub outcome: OutcomeId,
    pub stratum: String,
    pub n_total: usize,
    pub n_events: usize,
    pub n_censored: usize,
    #[serde(serialize_with = "ser_median")]
    pub median: f64,
    /// Variant minus baseline; absent when exactly one side is infinite.
    pub delta_median: Option<f64>,
    pub delta_events: i64,
    pub stable: bool,
    /// Largest |S_variant - S_baseline| over both curves' event times.
    pub sup_distance: f64,
    /// Same, restricted to times beyond the baseline median.
    pub tail_sup_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub baseline: String,
    pub variants: Vec<VariantSpec>,
    /// Students dropped by each variant's late-entrant exclusion.
    pub excluded: Vec<(String, usize)>,
    pub rows: Vec<VariantRow>,
}

impl StabilityReport {
    pub fn row(&self, variant: &str, outcome: OutcomeId, stratum: &str) -> Option<&VariantRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.outcome == outcome && r.stratum == stratum)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct VariantFit {
    excluded: usize,
    /// (outcome, stratum, dataset, curve)
    fits: Vec<(OutcomeId, String, OutcomeDataset, Option<SurvivalCurve>)>,
}

fn fit_variant(histories: &[StudentHistory], spec: &VariantSpec, base: &SensitivityBase, exec: Execution) -> Result<VariantFit> {
    let config = spec.config(base)?;
    let run = run(histories, &config, exec)?;
    let mut fits = Vec::new();
    for outcome in [OutcomeId::A, OutcomeId::B] {
        let ds = run.dataset(outcome);
        let mut parts = vec![(ALL_STRATUM.to_owned(), ds.clone())];
        parts.extend(stratify(ds, StratifyBy::EntryPeriod));
        for (stratum, part) in parts {
            let curve = if part.records.is_empty() {
                None
            } else {
                Some(km_fit(&part.records)?)
            };
            fits.push((outcome, stratum, part, curve));
        }
    }
    Ok(VariantFit {
        excluded: run.excluded,
        fits,
    })
}

fn sup_distance(a: &SurvivalCurve, b: &SurvivalCurve, from: f64) -> Option<f64> {
    let times = a.times.iter().chain(&b.times).filter(|&&t| t > from);
    times
        .map(|&t| (survival_at(a, t) - survival_at(b, t)).abs())
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |m| m.max(d))))
}

/// Run the baseline plus `variants` and compare.
pub fn run_variants(
    histories: &[StudentHistory],
    variants: &[VariantSpec],
    base: &SensitivityBase,
    exec: Execution,
) -> Result<StabilityReport> {
    let mut all = vec![base.baseline.clone()];
    all.extend(variants.iter().filter(|v| v.name != base.baseline.name).cloned());
    let fitted = exec
        .map(&all, |v| fit_variant(histories, v, base, exec))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let baseline = &fitted[0];

    let mut rows = Vec::new();
    for (spec, fit) in all.iter().zip(&fitted) {
        for (outcome, stratum, ds, curve) in &fit.fits {
            let reference = baseline
                .fits
                .iter()
                .find(|(o, s, _, _)| o == outcome && s == stratum);
            let median = curve.as_ref().map_or(f64::INFINITY, median_survival);
            let (base_n_events, base_curve) = reference.map_or((0, None), |(_, _, d, c)| (d.n_events, c.as_ref()));
            let base_median = base_curve.map_or(f64::INFINITY, median_survival);
            let delta_median = match (median.is_finite(), base_median.is_finite()) {
                (true, true) => Some(median - base_median),
                (false, false) => Some(0.0),
                _ => None,
            };
            let (sup, tail) = match (curve, base_curve) {
                (Some(c), Some(b)) => (
                    sup_distance(c, b, f64::NEG_INFINITY).unwrap_or(0.0),
                    base_median.is_finite().then(|| sup_distance(c, b, base_median).unwrap_or(0.0)),
                ),
                _ => (0.0, None),
            };
            rows.push(VariantRow {
                variant: spec.name.clone(),
                outcome: *outcome,
                stratum: stratum.clone(),
                n_total: ds.n_total,
                n_events: ds.n_events,
                n_censored: ds.n_censored,
                median,
                delta_median,
                delta_events: ds.n_events as i64 - base_n_events as i64,
                stable: delta_median.is_some_and(|d| d.abs() < base.stable_threshold),
                sup_distance: sup,
                tail_sup_distance: tail,
            });
        }
    }
    Ok(StabilityReport {
        baseline: base.baseline.name.clone(),
        excluded: all.iter().zip(&fitted).map(|(v, f)| (v.name.clone(), f.excluded)).collect(),
        variants: all,
        rows,
    })
}

pub fn run_window_variants(
    histories: &[StudentHistory],
    windows: &[f64],
    base: &SensitivityBase,
    exec: Execution,
) -> Result<StabilityReport> {
    let variants: Vec<_> = windows.iter().map(|&w| base.window_variant(w)).collect();
    run_variants(histories, &variants, base, exec)
}

pub fn run_origin_variant(histories: &[StudentHistory], base: &SensitivityBase, exec: Execution) -> Result<StabilityReport> {
    run_variants(histories, &[base.origin_variant()], base, exec)
}

pub fn exclude_late_entrants(
    histories: &[StudentHistory],
    k: u32,
    base: &SensitivityBase,
    exec: Execution,
) -> Result<StabilityReport> {
    run_variants(histories, &[base.exclusion_variant(k)], base, exec)
}

/// All three protocols in one report.
pub fn run_all(
    histories: &[StudentHistory],
    windows: &[f64],
    exclude_last: u32,
    base: &SensitivityBase,
    exec: Execution,
) -> Result<StabilityReport> {
    let mut variants: Vec<_> = windows.iter().map(|&w| base.window_variant(w)).collect();
    variants.push(base.origin_variant());
    variants.push(base.exclusion_variant(exclude_last));
    run_variants(histories, &variants, base, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::build_histories;
    use crate::synth::{generate_cohort, CohortSpec};

    fn cohort(n: usize, seed: u64) -> Vec<StudentHistory> {
        let spec = CohortSpec {
            n_students: n,
            seed,
            stopout_probability: 0.3,
            ..CohortSpec::default()
        };
        let c = generate_cohort(&spec).unwrap();
        build_histories(c.events, Execution::default()).histories
    }

    fn base() -> SensitivityBase {
        SensitivityBase::new(2.0, "2019-12-31".parse().unwrap())
    }

    #[test]
    fn baseline_window_has_zero_deltas() {
        let h = cohort(400, 3);
        let r = run_window_variants(&h, &[2.0], &base(), Execution::default()).unwrap();
        for row in r.rows.iter().filter(|r| r.variant == "window_2") {
            assert_eq!(row.delta_events, 0);
            assert_eq!(row.delta_median, Some(0.0));
            assert_eq!(row.sup_distance, 0.0);
            assert!(row.stable);
        }
        assert_eq!(r.variants.iter().filter(|v| v.name == BASELINE).count(), 1);
    }

    #[test]
    fn window_events_monotone() {
        let h = cohort(600, 11);
        let r = run_window_variants(&h, &DEFAULT_WINDOWS, &base(), Execution::default()).unwrap();
        for stratum in ["All", "P1", "P2", "P3", "P4"] {
            let ev = |v: &str| r.row(v, OutcomeId::A, stratum).map(|r| r.n_events);
            assert!(ev("window_1") >= ev("window_2"));
            assert!(ev("window_2") >= ev("window_3"));
        }
    }

    #[test]
    fn origin_changes_durations_only() {
        let h = cohort(300, 5);
        let r = run_origin_variant(&h, &base(), Execution::default()).unwrap();
        for row in r.rows.iter().filter(|r| r.variant == "origin_academic_year") {
            assert_eq!(row.delta_events, 0);
            let b = r.row(BASELINE, row.outcome, &row.stratum).unwrap();
            assert_eq!(b.n_total, row.n_total);
        }
    }

    #[test]
    fn exclusion_counts_latest_entrants() {
        let h = cohort(500, 9);
        let max_year = h.iter().map(|h| h.entry_year).max().unwrap();
        let expected = h.iter().filter(|h| h.entry_year > max_year - 3).count();
        let r = exclude_late_entrants(&h, 3, &base(), Execution::default()).unwrap();
        assert_eq!(r.excluded[1], ("exclude_last_3".to_owned(), expected));
        let all = r.row("exclude_last_3", OutcomeId::A, "All").unwrap();
        assert_eq!(all.n_total, h.len() - expected);

        let r0 = exclude_late_entrants(&h, 0, &base(), Execution::default()).unwrap();
        assert_eq!(r0.excluded[1].1, 0);
        assert!(r0.rows.iter().all(|r| r.delta_events == 0 && r.sup_distance == 0.0));
    }

    #[test]
    fn json_renders_inf_median() {
        let h = cohort(200, 1);
        let r = run_origin_variant(&h, &base(), Execution::default()).unwrap();
        let json = r.to_json();
        assert!(json.contains("\"variant\": \"baseline\""));
        assert!(json.contains("\"delta_median\""));
    }
}
