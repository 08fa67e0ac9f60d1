//! Spell reconstruction and typed transitions.
//!
//! A spell is a run of consecutive events in one major-plan combination. It
//! closes when the codes change or when two consecutive events are separated
//! by strictly more than the inactivity window.

use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::ingest::{EventKind, StudentHistory};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Elapsed time from `from` to `to` in years of 365.25 days.
pub fn years_between(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / DAYS_PER_YEAR
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("inactivity window must be positive and finite, got {0}")]
    Window(f64),
    #[error("observation end {obs_end} precedes latest event {latest}")]
    ObservationEnd { obs_end: NaiveDate, latest: NaiveDate },
    #[error("academic year start month must be 1..=12, got {0}")]
    Month(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub inactivity_window_years: f64,
    pub observation_end: NaiveDate,
}

impl GapConfig {
    pub const DEFAULT_WINDOW: f64 = 2.0;

    pub fn new(inactivity_window_years: f64, observation_end: NaiveDate) -> Result<Self, ConfigError> {
        if !(inactivity_window_years > 0.0 && inactivity_window_years.is_finite()) {
            return Err(ConfigError::Window(inactivity_window_years));
        }
        Ok(Self {
            inactivity_window_years,
            observation_end,
        })
    }

    pub fn window_days(&self) -> f64 {
        self.inactivity_window_years * DAYS_PER_YEAR
    }

    /// True when the gap from `from` to `to` strictly exceeds the window.
    pub fn exceeds_window(&self, from: NaiveDate, to: NaiveDate) -> bool {
        (to - from).num_days() as f64 > self.window_days()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spell {
    pub student_id: String,
    pub major_code: String,
    pub plan_code: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub index: usize,
    pub event_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    MajorSwitch,
    PlanChangeSameTitle,
    ReentrySamePlan,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 3] = [
        TransitionKind::MajorSwitch,
        TransitionKind::PlanChangeSameTitle,
        TransitionKind::ReentrySamePlan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransitionKind::MajorSwitch => "major_switch",
            TransitionKind::PlanChangeSameTitle => "plan_change_same_title",
            TransitionKind::ReentrySamePlan => "reentry_same_plan",
        }
    }

    /// Type of the move between two (major, plan) pairs.
    pub fn between(from_major: &str, from_plan: &str, to_major: &str, to_plan: &str) -> Self {
        if from_major != to_major {
            TransitionKind::MajorSwitch
        } else if from_plan != to_plan {
            TransitionKind::PlanChangeSameTitle
        } else {
            TransitionKind::ReentrySamePlan
        }
    }
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub student_id: String,
    pub kind: TransitionKind,
    /// Start of the destination spell.
    pub date: NaiveDate,
    pub from_major: String,
    pub from_plan: String,
    pub to_major: String,
    pub to_plan: String,
}

/// Split a history into spells.
///
/// Graduation events carry no codes of their own: they join the open spell
/// and end the trajectory. Only [`StudentHistory::trajectory_events`] are
/// scanned.
pub fn build_spells(history: &StudentHistory, config: &GapConfig) -> Vec<Spell> {
    let mut spells: Vec<Spell> = Vec::new();
    for ev in history.trajectory_events() {
        if ev.kind == EventKind::Graduation {
            if let Some(open) = spells.last_mut() {
                open.end_date = ev.date;
                open.event_count += 1;
            }
            break;
        }
        let extends = spells.last().is_some_and(|open| {
            open.major_code == ev.major_code
                && open.plan_code == ev.plan_code
                && !config.exceeds_window(open.end_date, ev.date)
        });
        if extends {
            let open = spells.last_mut().expect("checked above");
            open.end_date = ev.date;
            open.event_count += 1;
        } else {
            spells.push(Spell {
                student_id: history.student_id.clone(),
                major_code: ev.major_code.clone(),
                plan_code: ev.plan_code.clone(),
                start_date: ev.date,
                end_date: ev.date,
                index: spells.len(),
                event_count: 1,
            });
        }
    }
    spells
}

/// One transition per consecutive spell pair.
pub fn classify_transitions(spells: &[Spell]) -> Vec<Transition> {
    spells
        .windows(2)
        .map(|pair| {
            let (from, to) = (&pair[0], &pair[1]);
            Transition {
                student_id: to.student_id.clone(),
                kind: TransitionKind::between(&from.major_code, &from.plan_code, &to.major_code, &to.plan_code),
                date: to.start_date,
                from_major: from.major_code.clone(),
                from_plan: from.plan_code.clone(),
                to_major: to.major_code.clone(),
                to_plan: to.plan_code.clone(),
            }
        })
        .collect()
}

pub fn first_major_switch(transitions: &[Transition]) -> Option<NaiveDate> {
    transitions
        .iter()
        .filter(|t| t.kind == TransitionKind::MajorSwitch)
        .map(|t| t.date)
        .min()
}

/// A reconstructed trajectory: spells plus the transitions between them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub student_id: String,
    pub spells: Vec<Spell>,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn build(history: &StudentHistory, config: &GapConfig) -> Self {
        let spells = build_spells(history, config);
        let transitions = classify_transitions(&spells);
        Self {
            student_id: history.student_id.clone(),
            spells,
            transitions,
        }
    }
}

/// Reconstruct every history, preserving input order.
pub fn reconstruct(histories: &[StudentHistory], config: &GapConfig, exec: Execution) -> Vec<Trajectory> {
    exec.map(histories, |h| Trajectory::build(h, config))
}

pub fn write_spells_csv<W: Write>(trajectories: &[Trajectory], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "index", "major", "plan", "start", "end", "events"])?;
    for s in trajectories.iter().flat_map(|t| &t.spells) {
        w.write_record([
            s.student_id.clone(),
            s.index.to_string(),
            s.major_code.clone(),
            s.plan_code.clone(),
            s.start_date.to_string(),
            s.end_date.to_string(),
            s.event_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_transitions_csv<W: Write>(trajectories: &[Trajectory], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "kind", "date", "from_major", "from_plan", "to_major", "to_plan"])?;
    for t in trajectories.iter().flat_map(|t| &t.transitions) {
        w.write_record([
            t.student_id.as_str(),
            t.kind.as_str(),
            &t.date.to_string(),
            &t.from_major,
            &t.from_plan,
            &t.to_major,
            &t.to_plan,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_histories, EventRecord};

    fn history(rows: &[(&str, EventKind, &str, &str)]) -> StudentHistory {
        let events = rows
            .iter()
            .enumerate()
            .map(|(i, (d, k, m, p))| EventRecord {
                student_id: "s".into(),
                date: d.parse().unwrap(),
                kind: *k,
                major_code: (*m).into(),
                plan_code: (*p).into(),
                seq: i as u64,
            })
            .collect();
        build_histories(events, Execution::Sequential).histories.remove(0)
    }

    fn cfg(window: f64) -> GapConfig {
        GapConfig::new(window, "2019-12-31".parse().unwrap()).unwrap()
    }

    use EventKind::*;

    #[test]
    fn no_boundary_gives_one_spell() {
        let h = history(&[("2000-03-01", Enrolment, "CIV", "1985"), ("2000-08-01", Exam, "CIV", "1985")]);
        let spells = build_spells(&h, &cfg(2.0));
        assert_eq!(spells.len(), 1);
        assert_eq!(spells[0].start_date, "2000-03-01".parse().unwrap());
        assert_eq!(spells[0].end_date, "2000-08-01".parse().unwrap());
        assert_eq!(spells[0].event_count, 2);
    }

    #[test]
    fn long_gap_splits_same_plan() {
        // 1187 days / 365.25 = 3.25 years
        let a: NaiveDate = "2000-03-01".parse().unwrap();
        let b: NaiveDate = "2003-06-01".parse().unwrap();
        assert_eq!((b - a).num_days(), 1187);
        let h = history(&[("2000-03-01", Enrolment, "CIV", "1985"), ("2003-06-01", Enrolment, "CIV", "1985")]);
        let spells = build_spells(&h, &cfg(2.0));
        assert_eq!(spells.len(), 2);
        assert_eq!(spells[1].index, 1);
        let t = classify_transitions(&spells);
        assert_eq!(t[0].kind, TransitionKind::ReentrySamePlan);
        // a 4-year window absorbs the gap
        assert_eq!(build_spells(&h, &cfg(4.0)).len(), 1);
    }

    #[test]
    fn gap_exactly_at_window_does_not_split() {
        // 731 days > 730.5, 730 days is not
        let h = history(&[("2000-01-01", Enrolment, "CIV", "1985"), ("2001-12-31", Exam, "CIV", "1985")]);
        assert_eq!(build_spells(&h, &cfg(2.0)).len(), 1);
        let h = history(&[("2000-01-01", Enrolment, "CIV", "1985"), ("2002-01-01", Exam, "CIV", "1985")]);
        assert_eq!(build_spells(&h, &cfg(2.0)).len(), 2);
    }

    #[test]
    fn code_change_splits() {
        let h = history(&[("2000-03-01", Enrolment, "CIV", "1985"), ("2000-08-01", Enrolment, "IND", "2005")]);
        let spells = build_spells(&h, &cfg(2.0));
        assert_eq!(spells.len(), 2);
        assert_eq!(spells[1].major_code, "IND");
    }

    #[test]
    fn three_archetypes() {
        let cases = [
            (("CIV", "1985"), ("IND", "2005"), TransitionKind::MajorSwitch),
            (("CIV", "1985"), ("CIV", "2005"), TransitionKind::PlanChangeSameTitle),
            (("CIV", "1985"), ("CIV", "1985"), TransitionKind::ReentrySamePlan),
        ];
        for ((fm, fp), (tm, tp), want) in cases {
            let second = if want == TransitionKind::ReentrySamePlan { "2004-01-01" } else { "2001-03-01" };
            let h = history(&[("2000-03-01", Enrolment, fm, fp), (second, Enrolment, tm, tp)]);
            let spells = build_spells(&h, &cfg(2.0));
            let t = classify_transitions(&spells);
            assert_eq!(t.len(), 1);
            assert_eq!(t[0].kind, want);
            assert_eq!(t[0].date, second.parse().unwrap());
        }
    }

    #[test]
    fn graduation_closes_and_inherits_codes() {
        let h = history(&[
            ("2000-03-01", Enrolment, "CIV", "1985"),
            ("2001-03-01", Exam, "CIV", "1985"),
            ("2005-03-01", Graduation, "", ""),
            ("2006-03-01", Enrolment, "IND", "2005"),
        ]);
        let spells = build_spells(&h, &cfg(2.0));
        assert_eq!(spells.len(), 1);
        assert_eq!(spells[0].end_date, "2005-03-01".parse().unwrap());
        assert_eq!(spells[0].event_count, 3);
    }

    #[test]
    fn first_switch_picks_earliest() {
        let mk = |kind, d: &str| Transition {
            student_id: "s".into(),
            kind,
            date: d.parse().unwrap(),
            from_major: String::new(),
            from_plan: String::new(),
            to_major: String::new(),
            to_plan: String::new(),
        };
        let ts = vec![
            mk(TransitionKind::PlanChangeSameTitle, "2002-01-01"),
            mk(TransitionKind::MajorSwitch, "2004-01-01"),
            mk(TransitionKind::MajorSwitch, "2007-01-01"),
        ];
        assert_eq!(first_major_switch(&ts), Some("2004-01-01".parse().unwrap()));
        assert_eq!(first_major_switch(&[mk(TransitionKind::ReentrySamePlan, "2003-01-01")]), None);
        assert_eq!(first_major_switch(&[]), None);
    }

    #[test]
    fn bad_window_rejected() {
        assert!(GapConfig::new(0.0, "2019-12-31".parse().unwrap()).is_err());
        assert!(GapConfig::new(f64::NAN, "2019-12-31".parse().unwrap()).is_err());
    }
}
