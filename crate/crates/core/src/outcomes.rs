//! Right-censored subject records for the two outcomes.
//!
//! Outcome A is time to definitive dropout; outcome B is time to the first
//! major switch. Both are measured in years from the time origin, which is the
//! first-enrolment date unless the academic-year origin is selected.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ingest::StudentHistory;
use crate::trajectory::{first_major_switch, years_between, ConfigError, GapConfig, Spell, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeId {
    A,
    B,
}

impl fmt::Display for OutcomeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeId::A => "A",
            OutcomeId::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Event,
    Censored,
}

impl Status {
    pub fn is_event(self) -> bool {
        self == Status::Event
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Event => "event",
            Status::Censored => "censored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub student_id: String,
    pub duration_years: f64,
    pub status: Status,
    pub stratum: String,
}

impl SubjectRecord {
    pub fn new(student_id: impl Into<String>, duration_years: f64, status: Status, stratum: impl Into<String>) -> Self {
        Self {
            student_id: student_id.into(),
            duration_years,
            status,
            stratum: stratum.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDataset {
    pub outcome: OutcomeId,
    pub records: Vec<SubjectRecord>,
    pub n_total: usize,
    pub n_events: usize,
    pub n_censored: usize,
}

impl OutcomeDataset {
    pub fn new(outcome: OutcomeId, records: Vec<SubjectRecord>) -> Self {
        let n_events = records.iter().filter(|r| r.status.is_event()).count();
        Self {
            outcome,
            n_total: records.len(),
            n_censored: records.len() - n_events,
            n_events,
            records,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.n_events + self.n_censored == self.n_total && self.n_total == self.records.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["student_id", "duration_years", "status", "stratum"])?;
        for r in &self.records {
            w.write_record([
                r.student_id.as_str(),
                &format!("{:.6}", r.duration_years),
                r.status.as_str(),
                &r.stratum,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeOrigin {
    #[default]
    ExactDate,
    AcademicYear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeConfig {
    pub gap: GapConfig,
    pub origin: TimeOrigin,
    /// First month of the academic year (1 = January).
    pub academic_year_start_month: u32,
}

impl OutcomeConfig {
    pub fn new(gap: GapConfig) -> Self {
        Self {
            gap,
            origin: TimeOrigin::ExactDate,
            academic_year_start_month: 1,
        }
    }

    pub fn with_origin(mut self, origin: TimeOrigin, start_month: u32) -> Result<Self, ConfigError> {
        if !(1..=12).contains(&start_month) {
            return Err(ConfigError::Month(start_month));
        }
        self.origin = origin;
        self.academic_year_start_month = start_month;
        Ok(self)
    }

    /// Time origin for one student.
    pub fn origin_date(&self, history: &StudentHistory) -> NaiveDate {
        let first = history.first_enrolment_date;
        match self.origin {
            TimeOrigin::ExactDate => first,
            TimeOrigin::AcademicYear => {
                let m = self.academic_year_start_month;
                let year = if first.month() >= m { first.year() } else { first.year() - 1 };
                NaiveDate::from_ymd_opt(year, m, 1).expect("month validated")
            }
        }
    }
}

/// Definitive dropout: no graduation and a silence after the last event that
/// strictly exceeds the inactivity window before observation ends.
pub fn is_dropout(history: &StudentHistory, last_event: NaiveDate, gap: &GapConfig) -> bool {
    history.graduated_on.is_none() && gap.exceeds_window(last_event, gap.observation_end)
}

fn last_event(history: &StudentHistory, spells: &[Spell]) -> NaiveDate {
    spells.last().map_or(history.first_enrolment_date, |s| s.end_date)
}

pub fn build_outcome_a(history: &StudentHistory, spells: &[Spell], config: &OutcomeConfig) -> SubjectRecord {
    let origin = config.origin_date(history);
    let last = last_event(history, spells);
    let (end, status) = if let Some(grad) = history.graduated_on {
        (grad, Status::Censored)
    } else if is_dropout(history, last, &config.gap) {
        (last, Status::Event)
    } else {
        (config.gap.observation_end, Status::Censored)
    };
    SubjectRecord::new(
        history.student_id.clone(),
        years_between(origin, end),
        status,
        history.entry_period.code(),
    )
}

/// Non-switchers are censored at graduation, at their last event when they
/// dropped out, or at observation end.
pub fn build_outcome_b(
    history: &StudentHistory,
    spells: &[Spell],
    transitions: &[Transition],
    config: &OutcomeConfig,
) -> SubjectRecord {
    let origin = config.origin_date(history);
    let (end, status) = match first_major_switch(transitions) {
        Some(date) => (date, Status::Event),
        None => {
            let last = last_event(history, spells);
            let end = if let Some(grad) = history.graduated_on {
                grad
            } else if is_dropout(history, last, &config.gap) {
                last
            } else {
                config.gap.observation_end
            };
            (end, Status::Censored)
        }
    };
    SubjectRecord::new(
        history.student_id.clone(),
        years_between(origin, end),
        status,
        history.entry_period.code(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyBy {
    #[default]
    EntryPeriod,
    None,
}

pub const ALL_STRATUM: &str = "All";

/// Partition a dataset by stratum label. `StratifyBy::None` yields a single
/// `"All"` stratum.
pub fn stratify(dataset: &OutcomeDataset, key: StratifyBy) -> BTreeMap<String, OutcomeDataset> {
    let mut parts: BTreeMap<String, Vec<SubjectRecord>> = BTreeMap::new();
    for r in &dataset.records {
        let label = match key {
            StratifyBy::EntryPeriod => r.stratum.clone(),
            StratifyBy::None => ALL_STRATUM.to_owned(),
        };
        parts.entry(label).or_default().push(r.clone());
    }
    parts
        .into_iter()
        .map(|(k, v)| (k, OutcomeDataset::new(dataset.outcome, v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::ingest::{build_histories, EventKind, EventRecord};
    use crate::trajectory::Trajectory;

    fn history(rows: &[(&str, EventKind, &str)]) -> StudentHistory {
        let events = rows
            .iter()
            .enumerate()
            .map(|(i, (d, k, m))| EventRecord {
                student_id: "s".into(),
                date: d.parse().unwrap(),
                kind: *k,
                major_code: (*m).into(),
                plan_code: "1985".into(),
                seq: i as u64,
            })
            .collect();
        build_histories(events, Execution::Sequential).histories.remove(0)
    }

    fn config() -> OutcomeConfig {
        OutcomeConfig::new(GapConfig::new(2.0, "2019-12-31".parse().unwrap()).unwrap())
    }

    fn both(h: &StudentHistory, c: &OutcomeConfig) -> (SubjectRecord, SubjectRecord) {
        let t = Trajectory::build(h, &c.gap);
        (
            build_outcome_a(h, &t.spells, c),
            build_outcome_b(h, &t.spells, &t.transitions, c),
        )
    }

    use EventKind::*;

    #[test]
    fn dropout_event_at_last_activity() {
        let h = history(&[("2000-03-01", Enrolment, "CIV"), ("2010-05-01", Exam, "CIV")]);
        let (a, b) = both(&h, &config());
        assert_eq!(a.status, Status::Event);
        assert!((a.duration_years - 3713.0 / 365.25).abs() < 1e-12);
        assert!((a.duration_years - 10.17).abs() < 0.005);
        // non-switching dropout: B censored at the same instant
        assert_eq!(b.status, Status::Censored);
        assert_eq!(b.duration_years, a.duration_years);
    }

    #[test]
    fn graduate_is_censored_at_graduation() {
        let h = history(&[
            ("2000-03-01", Enrolment, "CIV"),
            ("2003-03-01", Exam, "CIV"),
            ("2006-12-15", Graduation, ""),
        ]);
        let (a, b) = both(&h, &config());
        assert_eq!(a.status, Status::Censored);
        assert!((a.duration_years - 2480.0 / 365.25).abs() < 1e-12);
        assert!((a.duration_years - 6.79).abs() < 0.005);
        assert_eq!(b.status, Status::Censored);
        assert_eq!(b.duration_years, a.duration_years);
    }

    #[test]
    fn recent_activity_is_censored_at_observation_end() {
        let h = history(&[("2018-03-01", Enrolment, "CIV"), ("2019-06-01", Exam, "CIV")]);
        let (a, b) = both(&h, &config());
        assert_eq!(a.status, Status::Censored);
        assert!((a.duration_years - 670.0 / 365.25).abs() < 1e-12);
        // 1.834 y; the worked example quotes 1.84
        assert!((a.duration_years - 1.84).abs() < 0.01);
        assert_eq!(b.status, Status::Censored);
        assert_eq!(b.duration_years, a.duration_years);
    }

    #[test]
    fn switch_is_outcome_b_event() {
        let h = history(&[
            ("2000-03-01", Enrolment, "CIV"),
            ("2001-03-01", Enrolment, "IND"),
            ("2002-03-01", Exam, "IND"),
        ]);
        let (_, b) = both(&h, &config());
        assert_eq!(b.status, Status::Event);
        assert!((b.duration_years - 365.0 / 365.25).abs() < 1e-12);
        assert!((b.duration_years - 1.0).abs() < 0.001);
    }

    #[test]
    fn academic_year_origin() {
        let h = history(&[("2000-07-01", Enrolment, "CIV"), ("2004-07-01", Exam, "CIV")]);
        let exact = config();
        let (a, _) = both(&h, &exact);
        assert_eq!(a.status, Status::Event);
        assert!((a.duration_years - 4.0).abs() < 1e-12);
        let academic = config().with_origin(TimeOrigin::AcademicYear, 1).unwrap();
        let (a2, _) = both(&h, &academic);
        assert_eq!(a2.status, a.status);
        assert!((a2.duration_years - 1643.0 / 365.25).abs() < 1e-12);
        assert!((a2.duration_years - 4.50).abs() < 0.005);

        // March academic year: a July entrant starts the March before
        let march = config().with_origin(TimeOrigin::AcademicYear, 3).unwrap();
        assert_eq!(march.origin_date(&h), "2000-03-01".parse().unwrap());
        let h2 = history(&[("2000-02-01", Enrolment, "CIV")]);
        assert_eq!(march.origin_date(&h2), "1999-03-01".parse().unwrap());
        assert!(config().with_origin(TimeOrigin::AcademicYear, 13).is_err());
    }

    #[test]
    fn origin_on_boundary_changes_nothing() {
        let h = history(&[("2000-01-01", Enrolment, "CIV"), ("2004-07-01", Exam, "CIV")]);
        let academic = config().with_origin(TimeOrigin::AcademicYear, 1).unwrap();
        assert_eq!(both(&h, &config()), both(&h, &academic));
    }

    fn published(outcome: OutcomeId, rows: &[(&str, usize, usize)]) -> OutcomeDataset {
        let mut recs = Vec::new();
        for (stratum, events, censored) in rows {
            for i in 0..*events {
                recs.push(SubjectRecord::new(format!("{stratum}e{i}"), 1.0, Status::Event, *stratum));
            }
            for i in 0..*censored {
                recs.push(SubjectRecord::new(format!("{stratum}c{i}"), 2.0, Status::Censored, *stratum));
            }
        }
        OutcomeDataset::new(outcome, recs)
    }

    #[test]
    fn stratify_outcome_a_published_counts() {
        let ds = published(
            OutcomeId::A,
            &[("P4", 2471, 3805), ("P1", 3912, 15), ("P3", 8250, 919), ("P2", 4561, 83)],
        );
        assert_eq!((ds.n_total, ds.n_events, ds.n_censored), (24016, 19194, 4822));
        let parts = stratify(&ds, StratifyBy::EntryPeriod);
        assert_eq!(parts.values().map(|d| d.n_total).sum::<usize>(), 24016);
        assert_eq!(
            parts.values().map(|d| d.n_total).collect::<Vec<_>>(),
            vec![3927, 4644, 9169, 6276]
        );
        assert!(parts.values().all(OutcomeDataset::is_balanced));
    }

    #[test]
    fn stratify_outcome_b_published_counts() {
        let ds = published(
            OutcomeId::B,
            &[("P4", 981, 5365), ("P1", 322, 3605), ("P3", 2614, 6601), ("P2", 1258, 3386)],
        );
        assert_eq!((ds.n_total, ds.n_events, ds.n_censored), (24132, 5175, 18957));
        let parts = stratify(&ds, StratifyBy::EntryPeriod);
        assert_eq!(parts.values().map(|d| d.n_total).sum::<usize>(), 24132);
        assert_eq!(parts["P3"].n_events, 2614);
    }

    #[test]
    fn stratify_none_is_identity() {
        let ds = published(OutcomeId::A, &[("P1", 3, 2), ("P2", 1, 1)]);
        let parts = stratify(&ds, StratifyBy::None);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[ALL_STRATUM].records, ds.records);
    }

    #[test]
    fn csv_has_six_decimals() {
        let ds = OutcomeDataset::new(OutcomeId::A, vec![SubjectRecord::new("s1", 10.0 / 3.0, Status::Event, "P3")]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "student_id,duration_years,status,stratum\ns1,3.333333,event,P3\n"
        );
    }
}
