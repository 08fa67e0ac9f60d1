//! Kaplan-Meier estimation, Greenwood bands and the K-group log-rank test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::outcomes::SubjectRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("no subjects to estimate from")]
    Empty,
    #[error("duration at index {index} is negative ({value})")]
    NegativeDuration { index: usize, value: f64 },
    #[error("duration at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error("log-rank needs at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
}

/// Product-limit step function.
///
/// Censorings at an event time are counted in that time's risk set and leave
/// afterwards. `n_censored_in_gap[i]` counts censorings in `[t_{i-1}, t_i)`
/// (with `[0, t_0)` for the first entry), so
/// `n_risk[i + 1] = n_risk[i] - n_event[i] - n_censored_in_gap[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub n_risk: Vec<usize>,
    pub n_event: Vec<usize>,
    pub n_censored_in_gap: Vec<usize>,
    /// Censorings at or after the last event time.
    pub n_censored_tail: usize,
    pub survival: Vec<f64>,
    /// Greenwood variance of S at each event time.
    pub variance: Vec<f64>,
    /// Running sum of d / (n (n - d)).
    pub greenwood_sum: Vec<f64>,
    /// Distinct censoring times with their counts, ascending.
    pub censor_times: Vec<(f64, usize)>,
    pub n_subjects: usize,
    /// Largest observed duration.
    pub max_time: f64,
}

impl SurvivalCurve {
    pub fn n_events(&self) -> usize {
        self.n_event.iter().sum()
    }

    pub fn n_censored(&self) -> usize {
        self.n_subjects - self.n_events()
    }
}

/// Fit from subject records.
pub fn km_fit(records: &[SubjectRecord]) -> Result<SurvivalCurve, EstimatorError> {
    let obs: Vec<(f64, bool)> = records
        .iter()
        .map(|r| (r.duration_years, r.status.is_event()))
        .collect();
    km_fit_pairs(&obs)
}

/// Fit from `(duration, is_event)` pairs.
pub fn km_fit_pairs(obs: &[(f64, bool)]) -> Result<SurvivalCurve, EstimatorError> {
    validate(obs)?;
    let mut sorted = obs.to_vec();
    // events ahead of censorings at equal times
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let n = sorted.len();
    let mut curve = SurvivalCurve {
        times: Vec::new(),
        n_risk: Vec::new(),
        n_event: Vec::new(),
        n_censored_in_gap: Vec::new(),
        n_censored_tail: 0,
        survival: Vec::new(),
        variance: Vec::new(),
        greenwood_sum: Vec::new(),
        censor_times: Vec::new(),
        n_subjects: n,
        max_time: sorted[n - 1].0,
    };

    let mut at_risk = n;
    let mut s = 1.0_f64;
    // Between censorings the product telescopes to a single ratio of risk
    // sets; evaluating it that way keeps uncensored curves exactly equal to
    // the correctly rounded (n - k) / n.
    let mut anchor_s = 1.0_f64;
    let mut anchor_n = n;
    let mut gw = 0.0_f64;
    let mut pending_censored = 0usize;
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let mut d = 0;
        let mut c = 0;
        while i < n && sorted[i].0 == t {
            if sorted[i].1 {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        if d > 0 {
            s = anchor_s * ((at_risk - d) as f64 / anchor_n as f64);
            gw += if at_risk > d {
                d as f64 / (at_risk as f64 * (at_risk - d) as f64)
            } else {
                f64::INFINITY
            };
            curve.times.push(t);
            curve.n_risk.push(at_risk);
            curve.n_event.push(d);
            curve.n_censored_in_gap.push(pending_censored);
            curve.survival.push(s);
            curve.variance.push(if s > 0.0 { s * s * gw } else { 0.0 });
            curve.greenwood_sum.push(gw);
            pending_censored = 0;
        }
        if c > 0 {
            curve.censor_times.push((t, c));
            pending_censored += c;
        }
        at_risk -= d + c;
        if c > 0 {
            anchor_s = s;
            anchor_n = at_risk;
        }
    }
    curve.n_censored_tail = pending_censored;
    Ok(curve)
}

fn validate(obs: &[(f64, bool)]) -> Result<(), EstimatorError> {
    if obs.is_empty() {
        return Err(EstimatorError::Empty);
    }
    for (index, &(t, _)) in obs.iter().enumerate() {
        if !t.is_finite() {
            return Err(EstimatorError::NonFinite { index });
        }
        if t < 0.0 {
            return Err(EstimatorError::NegativeDuration { index, value: t });
        }
    }
    Ok(())
}

/// Smallest event time with S(t) <= 0.5, or +inf when the curve never gets
/// there. No interpolation between steps.
pub fn median_survival(curve: &SurvivalCurve) -> f64 {
    curve
        .times
        .iter()
        .zip(&curve.survival)
        .find(|(_, &s)| s <= 0.5)
        .map_or(f64::INFINITY, |(&t, _)| t)
}

/// Right-continuous lookup of S(t).
pub fn survival_at(curve: &SurvivalCurve, t: f64) -> f64 {
    let k = curve.times.partition_point(|&ti| ti <= t);
    if k == 0 {
        1.0
    } else {
        curve.survival[k - 1]
    }
}

/// Pointwise log-log Greenwood band at each event time, clipped to [0, 1].
pub fn greenwood_ci(curve: &SurvivalCurve, level: f64) -> Result<Vec<(f64, f64)>, EstimatorError> {
    let z = normal_quantile_two_sided(level)?;
    Ok(curve
        .survival
        .iter()
        .zip(&curve.greenwood_sum)
        .map(|(&s, &gw)| log_log_band(s, gw, z))
        .collect())
}

fn log_log_band(s: f64, gw: f64, z: f64) -> (f64, f64) {
    if s <= 0.0 || s >= 1.0 || !gw.is_finite() {
        return (s, s);
    }
    let se = gw.sqrt() / s.ln().abs();
    let lower = s.powf((z * se).exp());
    let upper = s.powf((-z * se).exp());
    (lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0))
}

/// z with P(|Z| <= z) = level, found by bisection on the one-degree
/// chi-square tail.
pub fn normal_quantile_two_sided(level: f64) -> Result<f64, EstimatorError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::Level(level));
    }
    let target = 1.0 - level;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while chi_square_sf(hi, 1) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_square_sf(mid, 1) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSummary {
    pub n_total: usize,
    pub n_events: usize,
    pub n_censored: usize,
    /// +inf when S never reaches 0.5.
    pub median_survival: f64,
    /// `(probe time, S(probe))` pairs in the order requested.
    pub probe_survival: Vec<(f64, f64)>,
}

impl SurvivalSummary {
    pub fn from_curve(curve: &SurvivalCurve, probes: &[f64]) -> Self {
        let n_events = curve.n_events();
        Self {
            n_total: curve.n_subjects,
            n_events,
            n_censored: curve.n_subjects - n_events,
            median_survival: median_survival(curve),
            probe_survival: probes.iter().map(|&p| (p, survival_at(curve, p))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub labels: Vec<String>,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

/// K-group log-rank test.
///
/// At each distinct event time the pooled deaths are spread over groups in
/// proportion to their risk sets (hypergeometric null). The statistic is the
/// quadratic form of observed minus expected in the inverse of the
/// accumulated covariance, with the last group dropped. A rank-deficient
/// covariance (e.g. a group never at risk when deaths occur) lowers `df` to
/// its rank instead of failing.
pub fn log_rank<L: AsRef<str>>(groups: &[(L, &[SubjectRecord])]) -> Result<LogRankResult, EstimatorError> {
    if groups.len() < 2 {
        return Err(EstimatorError::TooFewGroups(groups.len()));
    }
    let k = groups.len();
    let mut pooled: Vec<(f64, bool, usize)> = Vec::new();
    for (g, (label, recs)) in groups.iter().enumerate() {
        if recs.is_empty() {
            return Err(EstimatorError::EmptyGroup(label.as_ref().to_owned()));
        }
        let pairs: Vec<(f64, bool)> = recs.iter().map(|r| (r.duration_years, r.status.is_event())).collect();
        validate(&pairs)?;
        pooled.extend(pairs.into_iter().map(|(t, e)| (t, e, g)));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut at_risk: Vec<f64> = groups.iter().map(|(_, r)| r.len() as f64).collect();
    let mut observed = vec![0.0; k];
    let mut expected = vec![0.0; k];
    let mut cov = vec![vec![0.0; k]; k];
    let mut deaths = vec![0.0; k];
    let mut leaving = vec![0.0; k];

    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        deaths.iter_mut().for_each(|x| *x = 0.0);
        leaving.iter_mut().for_each(|x| *x = 0.0);
        while i < pooled.len() && pooled[i].0 == t {
            let (_, ev, g) = pooled[i];
            if ev {
                deaths[g] += 1.0;
            }
            leaving[g] += 1.0;
            i += 1;
        }
        let d: f64 = deaths.iter().sum();
        if d > 0.0 {
            let n: f64 = at_risk.iter().sum();
            let spread = if n > 1.0 { d * (n - d) / (n * n * (n - 1.0)) } else { 0.0 };
            for a in 0..k {
                observed[a] += deaths[a];
                expected[a] += d * at_risk[a] / n;
                for b in 0..k {
                    let diag = if a == b { n * at_risk[a] } else { 0.0 };
                    cov[a][b] += spread * (diag - at_risk[a] * at_risk[b]);
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
    }

    let labels = groups.iter().map(|(l, _)| l.as_ref().to_owned()).collect();
    let total_deaths: f64 = observed.iter().sum();
    if total_deaths == 0.0 {
        return Ok(LogRankResult {
            statistic: 0.0,
            df: k - 1,
            p_value: 1.0,
            labels,
            observed,
            expected,
        });
    }

    let m = k - 1;
    let diff: Vec<f64> = (0..m).map(|a| observed[a] - expected[a]).collect();
    let mut sub: Vec<Vec<f64>> = cov[..m].iter().map(|row| row[..m].to_vec()).collect();
    let rank = generalized_cholesky(&mut sub, 1e-9);
    let solved = cholesky_solve(&sub, &diff);
    let statistic = diff.iter().zip(&solved).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    let p_value = if rank == 0 { 1.0 } else { chi_square_sf(statistic, rank) };
    Ok(LogRankResult {
        statistic,
        df: rank,
        p_value,
        labels,
        observed,
        expected,
    })
}

/// In-place LDL' of a symmetric positive semi-definite matrix (upper
/// triangle used). Pivots below `toler` times the largest diagonal are zeroed.
/// Returns the rank.
#[allow(clippy::needless_range_loop)]
fn generalized_cholesky(a: &mut [Vec<f64>], toler: f64) -> usize {
    let n = a.len();
    let eps = a.iter().enumerate().map(|(i, r)| r[i].abs()).fold(0.0, f64::max) * toler;
    let mut rank = 0;
    for i in 0..n {
        let pivot = a[i][i];
        if !pivot.is_finite() || pivot <= eps {
            a[i][i..].fill(0.0);
            continue;
        }
        rank += 1;
        for j in (i + 1)..n {
            let temp = a[i][j] / pivot;
            a[i][j] = temp;
            a[j][j] -= temp * temp * pivot;
            for col in (j + 1)..n {
                a[j][col] -= temp * a[i][col];
            }
        }
    }
    rank
}

fn cholesky_solve(factor: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut y = rhs.to_vec();
    for i in 0..n {
        for j in 0..i {
            y[i] -= y[j] * factor[j][i];
        }
    }
    for i in 0..n {
        y[i] = if factor[i][i] == 0.0 { 0.0 } else { y[i] / factor[i][i] };
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            y[i] -= y[j] * factor[i][j];
        }
    }
    y
}

/// Upper tail of the chi-square distribution, `Q(df/2, x/2)`.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    assert!(df > 0, "chi-square needs positive degrees of freedom");
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_q(0.5 * df as f64, 0.5 * x)
}

/// Regularized upper incomplete gamma Q(a, x).
fn gamma_q(a: f64, x: f64) -> f64 {
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

// modified Lentz
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (h.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Lanczos approximation (g = 7, 9 terms).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
