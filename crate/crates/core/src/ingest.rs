//! Event CSV parsing and per-student history assembly.
//!
//! Input is one row per administrative event with the header
//! `student_id,date,kind,major_code,plan_code`. Malformed rows never vanish:
//! they come back as [`RecordError`]s so every data row is accounted for.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

pub const HEADER: [&str; 5] = ["student_id", "date", "kind", "major_code", "plan_code"];

/// First calendar year covered by the entry-period scheme.
pub const FIRST_ENTRY_YEAR: i32 = 1980;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read event source: {0}")]
    Read(#[from] std::io::Error),
    #[error("bad header: expected `{}`, found `{found}`", HEADER.join(","))]
    Header { found: String },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Enrolment,
    Exam,
    StatusUpdate,
    PlanChange,
    Graduation,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enrolment => "enrolment",
            EventKind::Exam => "exam",
            EventKind::StatusUpdate => "status_update",
            EventKind::PlanChange => "plan_change",
            EventKind::Graduation => "graduation",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "enrolment" => EventKind::Enrolment,
            "exam" => EventKind::Exam,
            "status_update" => EventKind::StatusUpdate,
            "plan_change" => EventKind::PlanChange,
            "graduation" => EventKind::Graduation,
            other => return Err(format!("unknown kind `{other}`")),
        })
    }
}

/// One administrative event for one student on one date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub student_id: String,
    pub date: NaiveDate,
    pub kind: EventKind,
    pub major_code: String,
    pub plan_code: String,
    /// Zero-based data-row ordinal in the source; breaks same-day ties.
    pub seq: u64,
}

/// A data row that could not be turned into an [`EventRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// Zero-based data-row ordinal, same numbering as [`EventRecord::seq`].
    pub row: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Default, Clone)]
pub struct ParsedEvents {
    pub events: Vec<EventRecord>,
    pub errors: Vec<RecordError>,
    /// Non-fatal remarks about the source, e.g. ignored extra columns.
    pub warnings: Vec<String>,
}

impl ParsedEvents {
    pub fn rows(&self) -> usize {
        self.events.len() + self.errors.len()
    }
}

/// Parse event CSV. Only an unreadable stream or a wrong header is fatal.
pub fn parse_events<R: Read>(source: R) -> Result<ParsedEvents, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let header = reader.headers().map_err(csv_error)?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found.len() < HEADER.len() || found[..HEADER.len()] != HEADER {
        return Err(IngestError::Header {
            found: found.join(","),
        });
    }
    let mut out = ParsedEvents::default();
    if found.len() > HEADER.len() {
        out.warnings.push(format!(
            "ignoring extra columns: {}",
            found[HEADER.len()..].join(",")
        ));
    }

    let mut raw = csv::ByteRecord::new();
    let mut row: u64 = 0;
    loop {
        match reader.read_byte_record(&mut raw) {
            Ok(false) => break,
            Ok(true) => {
                match parse_row(&raw, row) {
                    Ok(ev) => out.events.push(ev),
                    Err(e) => out.errors.push(e),
                }
                row += 1;
            }
            Err(e) => match e.kind() {
                csv::ErrorKind::Io(_) => return Err(csv_error(e)),
                _ => {
                    out.errors.push(RecordError {
                        row,
                        student_id: None,
                        reason: e.to_string(),
                    });
                    row += 1;
                }
            },
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> IngestError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Read(io),
            _ => unreachable!(),
        }
    } else {
        IngestError::Csv(e.to_string())
    }
}

fn parse_row(raw: &csv::ByteRecord, row: u64) -> Result<EventRecord, RecordError> {
    let fail = |student_id: Option<&str>, reason: String| RecordError {
        row,
        student_id: student_id.filter(|s| !s.is_empty()).map(str::to_owned),
        reason,
    };
    let field = |i: usize| -> Result<&str, RecordError> {
        std::str::from_utf8(raw.get(i).unwrap_or_default())
            .map_err(|_| fail(None, format!("field {} is not valid UTF-8", i + 1)))
    };
    if raw.len() < HEADER.len() {
        return Err(fail(
            None,
            format!("expected {} fields, found {}", HEADER.len(), raw.len()),
        ));
    }
    let student_id = field(0)?;
    if student_id.is_empty() {
        return Err(fail(None, "empty student_id".into()));
    }
    let sid = Some(student_id);
    let date_text = field(1)?;
    let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d")
        .map_err(|_| fail(sid, format!("invalid date `{date_text}`")))?;
    let kind: EventKind = field(2)?.parse().map_err(|e| fail(sid, e))?;
    let major_code = field(3)?;
    let plan_code = field(4)?;
    if kind != EventKind::Graduation && (major_code.is_empty() || plan_code.is_empty()) {
        return Err(fail(sid, format!("{kind} event without major/plan code")));
    }
    Ok(EventRecord {
        student_id: student_id.to_owned(),
        date,
        kind,
        major_code: major_code.to_owned(),
        plan_code: plan_code.to_owned(),
        seq: row,
    })
}

/// Regulatory-era stratum of the entry year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntryPeriod {
    P1,
    P2,
    P3,
    P4,
}

impl EntryPeriod {
    pub const ALL: [EntryPeriod; 4] = [EntryPeriod::P1, EntryPeriod::P2, EntryPeriod::P3, EntryPeriod::P4];

    pub fn code(self) -> &'static str {
        match self {
            EntryPeriod::P1 => "P1",
            EntryPeriod::P2 => "P2",
            EntryPeriod::P3 => "P3",
            EntryPeriod::P4 => "P4",
        }
    }

    /// Label used in summary tables, e.g. `P1 (1980-1989)`.
    pub fn label(self) -> &'static str {
        match self {
            EntryPeriod::P1 => "P1 (1980-1989)",
            EntryPeriod::P2 => "P2 (1990-1999)",
            EntryPeriod::P3 => "P3 (2000-2009)",
            EntryPeriod::P4 => "P4 (2010+)",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.code() == code)
    }
}

impl fmt::Display for EntryPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("entry year {year} precedes {FIRST_ENTRY_YEAR}")]
pub struct PeriodError {
    pub year: i32,
}

pub fn assign_entry_period(entry_year: i32) -> Result<EntryPeriod, PeriodError> {
    match entry_year {
        y if y < FIRST_ENTRY_YEAR => Err(PeriodError { year: y }),
        1980..=1989 => Ok(EntryPeriod::P1),
        1990..=1999 => Ok(EntryPeriod::P2),
        2000..=2009 => Ok(EntryPeriod::P3),
        _ => Ok(EntryPeriod::P4),
    }
}

/// All events of one student, ordered by `(date, seq)`, with baseline
/// covariates taken from the first enrolment event only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentHistory {
    pub student_id: String,
    pub events: Vec<EventRecord>,
    pub first_enrolment_date: NaiveDate,
    pub entry_year: i32,
    pub entry_period: EntryPeriod,
    pub first_major: String,
    pub graduated_on: Option<NaiveDate>,
}

impl StudentHistory {
    /// Events from the first enrolment up to and including the first
    /// graduation. Earlier records predate the trajectory and later ones
    /// follow its close, so neither takes part in spell construction.
    pub fn trajectory_events(&self) -> &[EventRecord] {
        let start = self
            .events
            .iter()
            .position(|e| e.kind == EventKind::Enrolment)
            .unwrap_or(self.events.len());
        let end = self.events[start..]
            .iter()
            .position(|e| e.kind == EventKind::Graduation)
            .map_or(self.events.len(), |i| start + i + 1);
        &self.events[start..end]
    }

    /// Date of the last event on the trajectory.
    pub fn last_event_date(&self) -> NaiveDate {
        self.trajectory_events()
            .last()
            .map_or(self.first_enrolment_date, |e| e.date)
    }
}

/// A student left out of the history set, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedStudent {
    pub student_id: String,
    pub reason: String,
}

#[derive(Debug, Default, Clone)]
pub struct Histories {
    pub histories: Vec<StudentHistory>,
    pub skipped: Vec<SkippedStudent>,
}

/// Group events by student and derive baseline covariates.
///
/// Output is sorted by `student_id`; each history is sorted by
/// `(date, seq)`. The result does not depend on `exec`.
pub fn build_histories(events: Vec<EventRecord>, exec: Execution) -> Histories {
    let mut grouped: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
    for ev in events {
        grouped.entry(ev.student_id.clone()).or_default().push(ev);
    }
    let mut groups: Vec<(String, Vec<EventRecord>)> = grouped.into_iter().collect();
    exec.for_each_mut(&mut groups, |(_, evs)| {
        evs.sort_by_key(|e| (e.date, e.seq));
    });

    let built = exec.map(&groups, |(id, evs)| assemble(id, evs));
    let mut out = Histories::default();
    for item in built {
        match item {
            Ok(h) => out.histories.push(h),
            Err(s) => out.skipped.push(s),
        }
    }
    out
}

fn assemble(student_id: &str, events: &[EventRecord]) -> Result<StudentHistory, SkippedStudent> {
    let skip = |reason: String| SkippedStudent {
        student_id: student_id.to_owned(),
        reason,
    };
    let first_idx = events
        .iter()
        .position(|e| e.kind == EventKind::Enrolment)
        .ok_or_else(|| skip("no enrolment event".into()))?;
    if events[..first_idx].iter().any(|e| e.kind == EventKind::Graduation) {
        return Err(skip("graduation precedes first enrolment".into()));
    }
    let first = &events[first_idx];
    let entry_year = first.date.year();
    let entry_period = assign_entry_period(entry_year).map_err(|e| skip(e.to_string()))?;
    let graduated_on = events
        .iter()
        .find(|e| e.kind == EventKind::Graduation)
        .map(|e| e.date);
    Ok(StudentHistory {
        student_id: student_id.to_owned(),
        first_enrolment_date: first.date,
        entry_year,
        entry_period,
        first_major: first.major_code.clone(),
        graduated_on,
        events: events.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(body: &str) -> ParsedEvents {
        let src = format!("student_id,date,kind,major_code,plan_code\n{body}");
        parse_events(src.as_bytes()).unwrap()
    }

    fn ev(id: &str, date: &str, kind: EventKind, seq: u64) -> EventRecord {
        EventRecord {
            student_id: id.into(),
            date: date.parse().unwrap(),
            kind,
            major_code: "CIV".into(),
            plan_code: "1985".into(),
            seq,
        }
    }

    #[test]
    fn well_formed_row_maps_fields() {
        let p = parse("s1,2000-03-15,enrolment,CIV,1985\n");
        assert!(p.errors.is_empty());
        assert_eq!(
            p.events,
            vec![EventRecord {
                student_id: "s1".into(),
                date: NaiveDate::from_ymd_opt(2000, 3, 15).unwrap(),
                kind: EventKind::Enrolment,
                major_code: "CIV".into(),
                plan_code: "1985".into(),
                seq: 0,
            }]
        );
    }

    #[test]
    fn impossible_date_is_a_record_error() {
        let p = parse("s1,2000-13-40,enrolment,CIV,1985\n");
        assert!(p.events.is_empty());
        assert_eq!(p.errors.len(), 1);
        assert_eq!(p.errors[0].row, 0);
        assert_eq!(p.errors[0].student_id.as_deref(), Some("s1"));
        assert!(p.errors[0].reason.contains("invalid date"));
    }

    #[test]
    fn unknown_kind_is_a_record_error() {
        let p = parse("s1,2000-03-15,tutoring,CIV,1985\n");
        assert_eq!(p.errors.len(), 1);
        assert!(p.errors[0].reason.contains("unknown kind"));
    }

    #[test]
    fn missing_codes_only_allowed_on_graduation() {
        let p = parse("s1,2000-03-15,exam,,1985\ns1,2006-03-15,graduation,,\ns1,2001-01-01\n");
        assert_eq!(p.events.len(), 1);
        assert_eq!(p.events[0].kind, EventKind::Graduation);
        assert_eq!(p.events[0].seq, 1);
        assert_eq!(p.errors.iter().map(|e| e.row).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(p.rows(), 3);
    }

    #[test]
    fn wrong_header_is_fatal() {
        let err = parse_events("id,date,kind,major,plan\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Header { .. }));
    }

    #[test]
    fn extra_columns_warn() {
        let src = "student_id,date,kind,major_code,plan_code,campus\ns1,2000-03-15,enrolment,CIV,1985,north\n";
        let p = parse_events(src.as_bytes()).unwrap();
        assert_eq!(p.events.len(), 1);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn entry_periods() {
        assert_eq!(assign_entry_period(1985), Ok(EntryPeriod::P1));
        assert_eq!(assign_entry_period(1980), Ok(EntryPeriod::P1));
        assert_eq!(assign_entry_period(1999), Ok(EntryPeriod::P2));
        assert_eq!(assign_entry_period(2009), Ok(EntryPeriod::P3));
        assert_eq!(assign_entry_period(2010), Ok(EntryPeriod::P4));
        assert_eq!(assign_entry_period(2019), Ok(EntryPeriod::P4));
        assert_eq!(assign_entry_period(1979), Err(PeriodError { year: 1979 }));
    }

    #[test]
    fn single_student_history() {
        let h = build_histories(
            vec![
                ev("s1", "2002-07-01", EventKind::Exam, 0),
                ev("s1", "2001-08-01", EventKind::Enrolment, 1),
                ev("s1", "2001-03-01", EventKind::Enrolment, 2),
            ],
            Execution::Sequential,
        );
        assert!(h.skipped.is_empty());
        let s1 = &h.histories[0];
        assert_eq!(s1.first_enrolment_date, "2001-03-01".parse().unwrap());
        assert_eq!(s1.entry_year, 2001);
        assert_eq!(s1.entry_period, EntryPeriod::P3);
        assert_eq!(s1.events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![2, 1, 0]);
    }

    #[test]
    fn interleaved_students_group_and_sort() {
        let h = build_histories(
            vec![
                ev("s2", "1995-05-01", EventKind::Exam, 0),
                ev("s1", "1990-03-01", EventKind::Exam, 1),
                ev("s2", "1995-03-01", EventKind::Enrolment, 2),
                ev("s1", "1990-03-01", EventKind::Enrolment, 3),
            ],
            Execution::Parallel,
        );
        let ids: Vec<_> = h.histories.iter().map(|h| h.student_id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2"]);
        // same-day tie broken by seq
        assert_eq!(h.histories[0].events[0].seq, 1);
        assert_eq!(h.histories[1].events[0].date, "1995-03-01".parse().unwrap());
    }

    #[test]
    fn exam_only_student_is_skipped() {
        let h = build_histories(
            vec![ev("s3", "2000-01-01", EventKind::Exam, 0)],
            Execution::Sequential,
        );
        assert!(h.histories.is_empty());
        assert_eq!(h.skipped[0].reason, "no enrolment event");
    }

    #[test]
    fn pre_1980_entrant_is_rejected_by_name() {
        let h = build_histories(
            vec![ev("old", "1975-03-01", EventKind::Enrolment, 0)],
            Execution::Sequential,
        );
        assert_eq!(h.skipped[0].student_id, "old");
        assert!(h.skipped[0].reason.contains("1975"));
    }

    #[test]
    fn graduation_and_trajectory_window() {
        let h = build_histories(
            vec![
                ev("s1", "1999-12-01", EventKind::Exam, 0),
                ev("s1", "2000-03-01", EventKind::Enrolment, 1),
                ev("s1", "2004-12-01", EventKind::Graduation, 2),
                ev("s1", "2005-03-01", EventKind::Exam, 3),
                ev("s1", "2006-12-01", EventKind::Graduation, 4),
            ],
            Execution::Sequential,
        );
        let s1 = &h.histories[0];
        assert_eq!(s1.graduated_on, Some("2004-12-01".parse().unwrap()));
        let seqs: Vec<_> = s1.trajectory_events().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2]);
        assert_eq!(s1.last_event_date(), "2004-12-01".parse().unwrap());
    }
}
