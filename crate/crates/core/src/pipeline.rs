//! End-to-end runs: histories to outcome datasets to fitted curves.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::estimator::{km_fit, log_rank, LogRankResult, SurvivalCurve, SurvivalSummary};
use crate::exec::Execution;
use crate::ingest::{EntryPeriod, StudentHistory};
use crate::outcomes::{
    build_outcome_a, build_outcome_b, stratify, OutcomeConfig, OutcomeDataset, OutcomeId, StratifyBy,
};
use crate::trajectory::{reconstruct, ConfigError, Trajectory};
use crate::Result;

pub const DEFAULT_PROBES_A: [f64; 4] = [1.0, 3.0, 5.0, 8.0];
pub const DEFAULT_PROBES_B: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub outcome: OutcomeConfig,
    /// Drop entrants from the last `k` entry years present in the data.
    pub exclude_last_k: u32,
}

impl AnalysisConfig {
    pub fn new(outcome: OutcomeConfig) -> Self {
        Self {
            outcome,
            exclude_last_k: 0,
        }
    }
}

/// Latest event date over all histories.
pub fn latest_event_date(histories: &[StudentHistory]) -> Option<NaiveDate> {
    histories
        .iter()
        .filter_map(|h| h.events.last().map(|e| e.date))
        .max()
}

/// Histories kept after dropping entrants with
/// `entry_year > max_entry_year - k`, and the number dropped.
pub fn exclude_late_entrants(histories: &[StudentHistory], k: u32) -> (Vec<&StudentHistory>, usize) {
    let Some(max_year) = histories.iter().map(|h| h.entry_year).max() else {
        return (Vec::new(), 0);
    };
    let cutoff = max_year - k as i32;
    let kept: Vec<&StudentHistory> = histories.iter().filter(|h| h.entry_year <= cutoff).collect();
    let dropped = histories.len() - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub trajectories: Vec<Trajectory>,
    pub outcome_a: OutcomeDataset,
    pub outcome_b: OutcomeDataset,
    pub excluded: usize,
}

impl PipelineRun {
    pub fn dataset(&self, outcome: OutcomeId) -> &OutcomeDataset {
        match outcome {
            OutcomeId::A => &self.outcome_a,
            OutcomeId::B => &self.outcome_b,
        }
    }
}

pub fn run(histories: &[StudentHistory], config: &AnalysisConfig, exec: Execution) -> Result<PipelineRun> {
    let obs_end = config.outcome.gap.observation_end;
    if let Some(latest) = latest_event_date(histories) {
        if latest > obs_end {
            return Err(ConfigError::ObservationEnd { obs_end, latest }.into());
        }
    }
    let (kept, excluded) = exclude_late_entrants(histories, config.exclude_last_k);
    let kept: Vec<StudentHistory> = kept.into_iter().cloned().collect();
    let trajectories = reconstruct(&kept, &config.outcome.gap, exec);
    let pairs = exec.map_range(kept.len(), |i| {
        let (h, t) = (&kept[i], &trajectories[i]);
        (
            build_outcome_a(h, &t.spells, &config.outcome),
            build_outcome_b(h, &t.spells, &t.transitions, &config.outcome),
        )
    });
    let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(PipelineRun {
        trajectories,
        outcome_a: OutcomeDataset::new(OutcomeId::A, a),
        outcome_b: OutcomeDataset::new(OutcomeId::B, b),
        excluded,
    })
}

#[derive(Debug, Clone)]
pub struct StratumFit {
    pub period: EntryPeriod,
    pub curve: SurvivalCurve,
    pub summary: SurvivalSummary,
}

/// Global and per-entry-period fits for one outcome.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub outcome: OutcomeId,
    pub global: Option<(SurvivalCurve, SurvivalSummary)>,
    pub strata: Vec<StratumFit>,
    /// Test across entry periods; absent with fewer than two periods.
    pub log_rank: Option<LogRankResult>,
}

pub fn fit_outcome(dataset: &OutcomeDataset, probes: &[f64], exec: Execution) -> Result<OutcomeFit> {
    let global = if dataset.records.is_empty() {
        None
    } else {
        let curve = km_fit(&dataset.records)?;
        let summary = SurvivalSummary::from_curve(&curve, probes);
        Some((curve, summary))
    };
    let parts: Vec<(EntryPeriod, OutcomeDataset)> = stratify(dataset, StratifyBy::EntryPeriod)
        .into_iter()
        .filter_map(|(k, v)| EntryPeriod::from_code(&k).map(|p| (p, v)))
        .collect();
    let strata = exec
        .map(&parts, |(p, ds)| {
            km_fit(&ds.records).map(|curve| StratumFit {
                period: *p,
                summary: SurvivalSummary::from_curve(&curve, probes),
                curve,
            })
        })
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let log_rank = if parts.len() >= 2 {
        let groups: Vec<(&str, &[_])> = parts.iter().map(|(p, d)| (p.code(), d.records.as_slice())).collect();
        Some(log_rank(&groups)?)
    } else {
        None
    };
    Ok(OutcomeFit {
        outcome: dataset.outcome,
        global,
        strata,
        log_rank,
    })
}
