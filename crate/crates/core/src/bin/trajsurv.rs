use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use trajsurv::estimator::SurvivalSummary;
use trajsurv::ingest::{build_histories, parse_events, Histories, ParsedEvents};
use trajsurv::outcomes::{OutcomeConfig, OutcomeId, TimeOrigin};
use trajsurv::pipeline::{self, AnalysisConfig, OutcomeFit, DEFAULT_PROBES_A, DEFAULT_PROBES_B};
use trajsurv::report::{self, CurveTable, InputDigest, RunManifest, SummaryRow, SvgOptions};
use trajsurv::sensitivity::{self, SensitivityBase, DEFAULT_EXCLUDE_LAST, DEFAULT_WINDOWS};
use trajsurv::synth::{generate_cohort_with, CohortSpec};
use trajsurv::trajectory::{write_spells_csv, write_transitions_csv, GapConfig};
use trajsurv::{Error, Execution, Result};

const CI_LEVEL: f64 = 0.95;

#[derive(Parser)]
#[command(name = "trajsurv", version, about = "Student trajectory reconstruction and dual-outcome survival analysis")]
struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an event CSV and write per-student histories.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value = "trajsurv-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Reconstruct trajectories, build both outcomes and fit curves.
    Analyze {
        input: PathBuf,
        #[command(flatten)]
        opts: AnalysisArgs,
        /// Drop entrants from the last K entry years.
        #[arg(long, value_name = "K", default_value_t = 0)]
        exclude_last: u32,
        /// Probe times in years, comma separated; applies to both outcomes.
        #[arg(long, value_delimiter = ',')]
        probes: Option<Vec<f64>>,
        /// Fail when any input row or student was rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Re-run the analysis under window, origin and exclusion variants.
    Sensitivity {
        input: PathBuf,
        #[command(flatten)]
        opts: AnalysisArgs,
        /// Inactivity windows to compare, in years.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WINDOWS)]
        windows: Vec<f64>,
        #[arg(long, value_name = "K", default_value_t = DEFAULT_EXCLUDE_LAST)]
        exclude_last: u32,
    },
    /// Generate a synthetic event CSV.
    Simulate {
        /// Cohort spec in JSON or TOML; built-in defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of students.
        #[arg(long)]
        n: Option<usize>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-student ground truth as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Render summaries and an SVG plot from saved curve files.
    Report {
        #[arg(required = true)]
        curves: Vec<PathBuf>,
        /// Legend labels, one per curve file; file stems otherwise.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        probes: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = OutcomeArg::A)]
        outcome: OutcomeArg,
        #[arg(long)]
        no_ci: bool,
        #[arg(long, default_value = "trajsurv-report")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Args)]
struct AnalysisArgs {
    /// Inactivity window in years.
    #[arg(long, default_value_t = GapConfig::DEFAULT_WINDOW)]
    window: f64,
    /// End of observation (YYYY-MM-DD); latest event date otherwise.
    #[arg(long)]
    obs_end: Option<NaiveDate>,
    #[arg(long, value_enum, default_value_t = Origin::Exact)]
    origin: Origin,
    /// First month of the academic year for `--origin academic-year`.
    #[arg(long, default_value_t = 1)]
    academic_month: u32,
    #[arg(long, default_value = "trajsurv-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Origin {
    Exact,
    AcademicYear,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    A,
    B,
}

impl From<Origin> for TimeOrigin {
    fn from(o: Origin) -> Self {
        match o {
            Origin::Exact => TimeOrigin::ExactDate,
            Origin::AcademicYear => TimeOrigin::AcademicYear,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match cli.command {
        Command::Ingest { input, out, format } => ingest(&input, &out, format, exec),
        Command::Analyze {
            input,
            opts,
            exclude_last,
            probes,
            strict,
        } => analyze(&input, &opts, exclude_last, probes, strict, exec),
        Command::Sensitivity {
            input,
            opts,
            windows,
            exclude_last,
        } => run_sensitivity(&input, &opts, &windows, exclude_last, exec),
        Command::Simulate {
            config,
            seed,
            n,
            out,
            truth,
        } => simulate(config, seed, n, out, truth, exec),
        Command::Report {
            curves,
            labels,
            probes,
            outcome,
            no_ci,
            out,
            format,
        } => render_report(&curves, labels, probes, outcome, !no_ci, &out, format),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

// ── io helpers ──────────────────────────────────────────────────────────────

struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_owned(),
            written: Vec::new(),
        })
    }

    /// Render into memory first so a failing check leaves no partial file.
    fn write<F>(&mut self, name: &str, render: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_owned());
        Ok(())
    }

    fn write_str(&mut self, name: &str, text: &str) -> Result<()> {
        self.write(name, |b| {
            b.extend_from_slice(text.as_bytes());
            Ok(())
        })
    }
}

fn csv_err(path: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Validation(format!("{path}: {e}"))
}

struct Loaded {
    digest: InputDigest,
    parsed_rows: usize,
    record_errors: Vec<trajsurv::ingest::RecordError>,
    warnings: Vec<String>,
    histories: Histories,
}

fn load(input: &Path, exec: Execution) -> Result<Loaded> {
    let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
    let ParsedEvents {
        events,
        errors,
        warnings,
    } = parse_events(bytes.as_slice())?;
    let parsed_rows = events.len() + errors.len();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(Loaded {
        digest: InputDigest::of(&input.display().to_string(), &bytes),
        parsed_rows,
        record_errors: errors,
        warnings,
        histories: build_histories(events, exec),
    })
}

fn write_rejections(dir: &mut OutDir, loaded: &Loaded, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            dir.write("record_errors.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["row", "student_id", "reason"]).map_err(csv_err("record_errors.csv"))?;
                for e in &loaded.record_errors {
                    w.write_record([e.row.to_string().as_str(), e.student_id.as_deref().unwrap_or(""), &e.reason])
                        .map_err(csv_err("record_errors.csv"))?;
                }
                w.flush().map_err(|e| Error::io("record_errors.csv", e))
            })?;
            dir.write("skipped_students.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["student_id", "reason"]).map_err(csv_err("skipped_students.csv"))?;
                for s in &loaded.histories.skipped {
                    w.write_record([&s.student_id, &s.reason]).map_err(csv_err("skipped_students.csv"))?;
                }
                w.flush().map_err(|e| Error::io("skipped_students.csv", e))
            })
        }
        Format::Json => {
            dir.write_str("record_errors.json", &pretty(&loaded.record_errors))?;
            dir.write_str("skipped_students.json", &pretty(&loaded.histories.skipped))
        }
    }
}

fn pretty<T: serde::Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn resolve_obs_end(opts: &AnalysisArgs, histories: &Histories) -> Result<NaiveDate> {
    match opts.obs_end {
        Some(d) => Ok(d),
        None => pipeline::latest_event_date(&histories.histories)
            .ok_or_else(|| Error::Validation("no usable students; pass --obs-end or fix the input".into())),
    }
}

fn manifest(
    command: &str,
    digest: Option<InputDigest>,
    config: serde_json::Value,
    counts: BTreeMap<String, usize>,
    outputs: Vec<String>,
) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        input: digest,
        config,
        counts,
        outputs,
    }
}

// ── ingest ──────────────────────────────────────────────────────────────────

fn ingest(input: &Path, out: &Path, format: Format, exec: Execution) -> Result<ExitCode> {
    let loaded = load(input, exec)?;
    let mut dir = OutDir::create(out)?;
    let h = &loaded.histories;
    match format {
        Format::Csv => dir.write("histories.csv", |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record([
                "student_id",
                "first_enrolment_date",
                "entry_year",
                "entry_period",
                "first_major",
                "graduated_on",
                "n_events",
            ])
            .map_err(csv_err("histories.csv"))?;
            for s in &h.histories {
                w.write_record([
                    s.student_id.clone(),
                    s.first_enrolment_date.to_string(),
                    s.entry_year.to_string(),
                    s.entry_period.code().to_owned(),
                    s.first_major.clone(),
                    s.graduated_on.map(|d| d.to_string()).unwrap_or_default(),
                    s.events.len().to_string(),
                ])
                .map_err(csv_err("histories.csv"))?;
            }
            w.flush().map_err(|e| Error::io("histories.csv", e))
        })?,
        Format::Json => dir.write_str("histories.json", &pretty(&h.histories))?,
    }
    write_rejections(&mut dir, &loaded, format)?;
    let counts = BTreeMap::from([
        ("rows".to_owned(), loaded.parsed_rows),
        ("record_errors".to_owned(), loaded.record_errors.len()),
        ("students".to_owned(), h.histories.len()),
        ("skipped_students".to_owned(), h.skipped.len()),
        ("warnings".to_owned(), loaded.warnings.len()),
    ]);
    let m = manifest("ingest", Some(loaded.digest.clone()), serde_json::json!({}), counts, dir.written.clone());
    dir.write_str("manifest.json", &pretty(&m))?;

    eprintln!(
        "{} rows, {} students, {} rejected rows, {} skipped students",
        loaded.parsed_rows,
        h.histories.len(),
        loaded.record_errors.len(),
        h.skipped.len()
    );
    if loaded.record_errors.is_empty() && h.skipped.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

// ── analyze ─────────────────────────────────────────────────────────────────

fn outcome_slug(o: OutcomeId) -> &'static str {
    match o {
        OutcomeId::A => "outcome_a",
        OutcomeId::B => "outcome_b",
    }
}

fn summary_rows(fit: &OutcomeFit) -> Result<Vec<SummaryRow>> {
    let Some((_, global)) = &fit.global else {
        return Ok(Vec::new());
    };
    let strata: Vec<_> = fit.strata.iter().map(|s| (s.period, s.summary.clone())).collect();
    // a lone stratum is the global population again
    let strata = if strata.len() > 1 { strata } else { Vec::new() };
    Ok(report::summary_table(fit.outcome, global, &strata, fit.log_rank.as_ref())?)
}

fn write_summary(dir: &mut OutDir, stem: &str, rows: &[SummaryRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => dir.write(&format!("{stem}.csv"), |b| Ok(report::write_summary_csv(rows, b)?))?,
        Format::Json => {
            let mut json = report::summary_json(rows)?;
            json.push('\n');
            dir.write_str(&format!("{stem}.json"), &json)?
        }
    }
    dir.write_str(&format!("{stem}.txt"), &report::summary_text(rows)?)
}

fn write_fit(dir: &mut OutDir, fit: &OutcomeFit, format: Format) -> Result<Vec<SummaryRow>> {
    let slug = outcome_slug(fit.outcome);
    let mut plotted = Vec::new();
    if let Some((curve, _)) = &fit.global {
        let table = CurveTable::from_curve(curve, CI_LEVEL)?;
        dir.write(&format!("curves/{slug}_global.csv"), |b| Ok(table.write_csv(b)?))?;
        plotted.push(("All".to_owned(), table));
    }
    let mut strata_tables = Vec::new();
    for s in &fit.strata {
        let table = CurveTable::from_curve(&s.curve, CI_LEVEL)?;
        dir.write(&format!("curves/{slug}_{}.csv", s.period.code()), |b| Ok(table.write_csv(b)?))?;
        strata_tables.push((s.period.label().to_owned(), table));
    }
    let title = match fit.outcome {
        OutcomeId::A => "Time to definitive dropout",
        OutcomeId::B => "Time to first major switch",
    };
    if !plotted.is_empty() {
        let opts = SvgOptions {
            title: title.into(),
            ..SvgOptions::default()
        };
        dir.write_str(&format!("plots/{slug}_global.svg"), &report::render_svg(&plotted, &opts)?)?;
        if strata_tables.len() > 1 {
            let opts = SvgOptions {
                title: format!("{title} by entry period"),
                show_ci: false,
                ..SvgOptions::default()
            };
            dir.write_str(&format!("plots/{slug}_by_period.svg"), &report::render_svg(&strata_tables, &opts)?)?;
        }
    }
    let rows = summary_rows(fit)?;
    write_summary(dir, &format!("summary_{slug}"), &rows, format)?;
    Ok(rows)
}

fn analyze(
    input: &Path,
    opts: &AnalysisArgs,
    exclude_last: u32,
    probes: Option<Vec<f64>>,
    strict: bool,
    exec: Execution,
) -> Result<ExitCode> {
    let loaded = load(input, exec)?;
    let rejected = loaded.record_errors.len() + loaded.histories.skipped.len();
    if strict && rejected > 0 {
        return Err(Error::Validation(format!("{rejected} rows or students rejected (see `trajsurv ingest`)")));
    }
    let obs_end = resolve_obs_end(opts, &loaded.histories)?;
    let gap = GapConfig::new(opts.window, obs_end)?;
    let outcome = OutcomeConfig::new(gap).with_origin(opts.origin.into(), opts.academic_month)?;
    let config = AnalysisConfig {
        outcome,
        exclude_last_k: exclude_last,
    };
    let histories = &loaded.histories.histories;
    let run = pipeline::run(histories, &config, exec)?;
    let probes_a = probes.clone().unwrap_or(DEFAULT_PROBES_A.to_vec());
    let probes_b = probes.clone().unwrap_or(DEFAULT_PROBES_B.to_vec());
    let fit_a = pipeline::fit_outcome(&run.outcome_a, &probes_a, exec)?;
    let fit_b = pipeline::fit_outcome(&run.outcome_b, &probes_b, exec)?;

    for ds in [&run.outcome_a, &run.outcome_b] {
        if !ds.is_balanced() {
            return Err(Error::Validation(format!("outcome {} counts do not balance", ds.outcome)));
        }
    }

    let mut dir = OutDir::create(&opts.out)?;
    write_rejections(&mut dir, &loaded, opts.format)?;
    dir.write("spells.csv", |b| write_spells_csv(&run.trajectories, b).map_err(csv_err("spells.csv")))?;
    dir.write("transitions.csv", |b| {
        write_transitions_csv(&run.trajectories, b).map_err(csv_err("transitions.csv"))
    })?;
    let mobility = report::mobility_table(run.trajectories.iter().flat_map(|t| &t.transitions));
    match opts.format {
        Format::Csv => dir.write("mobility.csv", |b| Ok(mobility.write_csv(b)?))?,
        Format::Json => dir.write_str("mobility.json", &(mobility.to_json()? + "\n"))?,
    }
    let rollup: Vec<serde_json::Value> = mobility
        .rollup_by_period()
        .into_iter()
        .map(|(p, r)| {
            serde_json::json!({
                "period": p,
                "major_switch": r.major_switch,
                "plan_change_same_title": r.plan_change_same_title,
                "reentry_same_plan": r.reentry_same_plan,
                "total": r.total,
            })
        })
        .collect();
    dir.write_str("mobility_by_period.json", &pretty(&rollup))?;
    for ds in [&run.outcome_a, &run.outcome_b] {
        let name = format!("{}.csv", outcome_slug(ds.outcome));
        dir.write(&name, |b| ds.write_csv(b).map_err(csv_err(&name)))?;
    }
    let rows_a = write_fit(&mut dir, &fit_a, opts.format)?;
    let rows_b = write_fit(&mut dir, &fit_b, opts.format)?;
    let mut narrative = report::narrative(&rows_a);
    narrative.extend(report::narrative(&rows_b));
    for fit in [&fit_a, &fit_b] {
        if let Some(lr) = &fit.log_rank {
            narrative.push(format!(
                "{} log-rank across entry periods: chi2 = {:.3}, df = {}, p = {:.4e}",
                fit.outcome, lr.statistic, lr.df, lr.p_value
            ));
        }
    }
    dir.write_str("narrative.txt", &(narrative.join("\n") + "\n"))?;

    let n_spells: usize = run.trajectories.iter().map(|t| t.spells.len()).sum();
    let n_transitions: usize = run.trajectories.iter().map(|t| t.transitions.len()).sum();
    let counts = BTreeMap::from([
        ("rows".to_owned(), loaded.parsed_rows),
        ("record_errors".to_owned(), loaded.record_errors.len()),
        ("skipped_students".to_owned(), loaded.histories.skipped.len()),
        ("students".to_owned(), histories.len()),
        ("excluded_late_entrants".to_owned(), run.excluded),
        ("spells".to_owned(), n_spells),
        ("transitions".to_owned(), n_transitions),
        ("outcome_a_events".to_owned(), run.outcome_a.n_events),
        ("outcome_a_censored".to_owned(), run.outcome_a.n_censored),
        ("outcome_b_events".to_owned(), run.outcome_b.n_events),
        ("outcome_b_censored".to_owned(), run.outcome_b.n_censored),
    ]);
    let cfg = serde_json::json!({
        "window_years": opts.window,
        "observation_end": obs_end.to_string(),
        "origin": config.outcome.origin,
        "academic_year_start_month": opts.academic_month,
        "exclude_last": exclude_last,
        "probes_a": probes_a,
        "probes_b": probes_b,
        "ci_level": CI_LEVEL,
    });
    let m = manifest("analyze", Some(loaded.digest.clone()), cfg, counts, dir.written.clone());
    dir.write_str("manifest.json", &pretty(&m))?;

    print!("{}", report::summary_text(&rows_a)?);
    print!("{}", report::summary_text(&rows_b)?);
    if rejected > 0 {
        eprintln!("warning: {rejected} rows or students rejected; see record_errors and skipped_students");
    }
    Ok(ExitCode::SUCCESS)
}

// ── sensitivity ─────────────────────────────────────────────────────────────

fn run_sensitivity(
    input: &Path,
    opts: &AnalysisArgs,
    windows: &[f64],
    exclude_last: u32,
    exec: Execution,
) -> Result<ExitCode> {
    let loaded = load(input, exec)?;
    let obs_end = resolve_obs_end(opts, &loaded.histories)?;
    GapConfig::new(opts.window, obs_end)?;
    for &w in windows {
        GapConfig::new(w, obs_end)?;
    }
    let mut base = SensitivityBase::new(opts.window, obs_end);
    base.baseline.time_origin = opts.origin.into();
    base.academic_year_start_month = opts.academic_month;
    let report = sensitivity::run_all(&loaded.histories.histories, windows, exclude_last, &base, exec)?;

    let mut dir = OutDir::create(&opts.out)?;
    match opts.format {
        Format::Json => dir.write_str("sensitivity.json", &(report.to_json() + "\n"))?,
        Format::Csv => dir.write("sensitivity.csv", |b| {
            let mut w = csv::Writer::from_writer(b);
            for r in &report.rows {
                w.serialize(r).map_err(csv_err("sensitivity.csv"))?;
            }
            w.flush().map_err(|e| Error::io("sensitivity.csv", e))
        })?,
    }
    let counts = BTreeMap::from([
        ("students".to_owned(), loaded.histories.histories.len()),
        ("variants".to_owned(), report.variants.len()),
        ("rows".to_owned(), report.rows.len()),
    ]);
    let cfg = serde_json::json!({
        "window_years": opts.window,
        "windows": windows,
        "observation_end": obs_end.to_string(),
        "origin": base.baseline.time_origin,
        "exclude_last": exclude_last,
    });
    let m = manifest("sensitivity", Some(loaded.digest.clone()), cfg, counts, dir.written.clone());
    dir.write_str("manifest.json", &pretty(&m))?;

    for r in report.rows.iter().filter(|r| r.stratum == trajsurv::outcomes::ALL_STRATUM) {
        println!(
            "{:<22} {} events {:>7} ({:+}) median {:>6} stable {}",
            r.variant,
            r.outcome,
            r.n_events,
            r.delta_events,
            report::format_median(r.median),
            r.stable
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ── simulate ────────────────────────────────────────────────────────────────

fn simulate(
    config: Option<PathBuf>,
    seed: Option<u64>,
    n: Option<usize>,
    out: Option<PathBuf>,
    truth: Option<PathBuf>,
    exec: Execution,
) -> Result<ExitCode> {
    let mut spec = match &config {
        Some(p) => CohortSpec::from_path(p)?,
        None => CohortSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = n {
        spec.n_students = n;
    }
    let cohort = generate_cohort_with(&spec, exec)?;
    let mut buf = Vec::new();
    cohort.write_csv(&mut buf).map_err(csv_err("events"))?;
    match &out {
        Some(p) => fs::write(p, &buf).map_err(|e| Error::io(p, e))?,
        None => std::io::stdout().write_all(&buf).map_err(|e| Error::io("<stdout>", e))?,
    }
    if let Some(p) = &truth {
        let doc = serde_json::json!({ "students": cohort.truth, "transitions": cohort.injected });
        fs::write(p, pretty(&doc)).map_err(|e| Error::io(p, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

// ── report ──────────────────────────────────────────────────────────────────

fn render_report(
    paths: &[PathBuf],
    labels: Option<Vec<String>>,
    probes: Option<Vec<f64>>,
    outcome: OutcomeArg,
    show_ci: bool,
    out: &Path,
    format: Format,
) -> Result<ExitCode> {
    let outcome = match outcome {
        OutcomeArg::A => OutcomeId::A,
        OutcomeArg::B => OutcomeId::B,
    };
    let labels = match labels {
        Some(l) if l.len() != paths.len() => {
            return Err(Error::Validation(format!("{} labels for {} curve files", l.len(), paths.len())));
        }
        Some(l) => l,
        None => paths
            .iter()
            .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
            .collect(),
    };
    let probes = probes.unwrap_or_else(|| match outcome {
        OutcomeId::A => DEFAULT_PROBES_A.to_vec(),
        OutcomeId::B => DEFAULT_PROBES_B.to_vec(),
    });
    let mut curves = Vec::new();
    for (p, label) in paths.iter().zip(labels) {
        let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
        let table = CurveTable::read_csv(file).map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?;
        curves.push((label, table));
    }
    let rows: Vec<SummaryRow> = curves
        .iter()
        .map(|(label, t)| {
            let s: SurvivalSummary = t.summary(&probes);
            SummaryRow {
                outcome,
                stratum: "Curve".into(),
                stratum_value: label.clone(),
                n_total: s.n_total,
                n_events: s.n_events,
                n_censored: s.n_censored,
                median_survival_time: s.median_survival,
                probe_survival: s.probe_survival,
                median_delta_vs_global: None,
                logrank_p: None,
            }
        })
        .collect();

    let mut dir = OutDir::create(out)?;
    write_summary(&mut dir, "summary", &rows, format)?;
    let opts = SvgOptions {
        show_ci,
        ..SvgOptions::default()
    };
    dir.write_str("curves.svg", &report::render_svg(&curves, &opts)?)?;
    dir.write_str("narrative.txt", &(report::narrative(&rows).join("\n") + "\n"))?;
    print!("{}", report::summary_text(&rows)?);
    Ok(ExitCode::SUCCESS)
}
