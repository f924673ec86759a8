//! Report emission: JSON, Markdown and plot-ready CSV files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::experiment::{correlation_table, error_table, overlap_table, SuiteResult, TauSummary};
use crate::pipeline::{CandidateStatus, RunReport};

/// Pretty JSON with a trailing newline. Non-finite numbers become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn status_str(s: CandidateStatus) -> &'static str {
    match s {
        CandidateStatus::Ok => "ok",
        CandidateStatus::FitFailed => "fit-failed",
        CandidateStatus::MatchingFailed => "matching-failed",
        CandidateStatus::A2aUnavailable => "a2a-unavailable",
    }
}

pub fn to_markdown(r: &RunReport) -> String {
    let mut s = String::new();
    let t = &r.task;
    let _ = writeln!(s, "# PSM run report\n");
    let _ = writeln!(s, "- source: {}", t.source);
    let _ = writeln!(
        s,
        "- samples: {} ({} control, {} treated), {} features",
        t.n_rows,
        t.n_control,
        t.n_treated,
        t.features.len()
    );
    let _ = writeln!(
        s,
        "- unadjusted ATE: {:.4}, unadjusted SMD: {:.4}",
        t.unadjusted.ate, t.unadjusted.smd
    );
    let c = &r.provenance.config;
    let _ = writeln!(
        s,
        "- seed: {}, bootstraps: {}, SMD threshold: {}, SMD aggregate: {:?}",
        c.seed, c.n_bootstraps, c.smd_threshold, c.smd_aggregate
    );
    for w in &t.encoding_warnings {
        let _ = writeln!(s, "- warning: {w}");
    }

    let _ = writeln!(s, "\n## Propensity models\n");
    let _ = writeln!(s, "| model | link | selected | CV overlap | valid |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for f in &r.model_selection {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            f.model.as_str(),
            if f.logit { "logit" } else { "raw" },
            f.selected.as_deref().unwrap_or("-"),
            opt(f.overlap),
            if f.overlap_valid { "yes" } else { "no" }
        );
    }

    let _ = writeln!(s, "\n## Candidates\n");
    let _ = writeln!(s, "| pipeline | status | SMD | A2A | ATE | SMD valid | overlap valid |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for c in &r.candidates {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            c.pipeline_id,
            status_str(c.status),
            opt(c.smd),
            opt(c.a2a.as_ref().map(|a| a.mean)),
            opt(c.ate),
            if c.smd_valid { "yes" } else { "no" },
            if c.overlap_valid { "yes" } else { "no" }
        );
    }
    let failed: Vec<_> = r.candidates.iter().filter(|c| c.error.is_some()).collect();
    if !failed.is_empty() {
        let _ = writeln!(s);
        for c in failed {
            let _ = writeln!(s, "- {}: {}", c.pipeline_id, c.error.as_deref().unwrap_or_default());
        }
    }

    let _ = writeln!(s, "\n## Strategies\n");
    let _ = writeln!(s, "| strategy | selected | ATE range | note |");
    let _ = writeln!(s, "|---|---|---|---|");
    for st in &r.strategies {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {} |",
            st.strategy.as_str(),
            if st.selected.is_empty() {
                "-".into()
            } else {
                st.selected.join(", ")
            },
            st.ate_range,
            st.warning.as_deref().unwrap_or("")
        );
    }
    s
}

#[derive(Serialize)]
struct CandidateRow<'a> {
    pipeline_id: &'a str,
    model: &'a str,
    link: &'a str,
    matcher: &'a str,
    status: &'a str,
    propensity: Option<&'a str>,
    cv_overlap: Option<f64>,
    overlap_valid: bool,
    smd: Option<f64>,
    smd_valid: bool,
    a2a: Option<f64>,
    a2a_failures: Option<usize>,
    ate: Option<f64>,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct BootstrapRow<'a> {
    bootstrap: usize,
    pipeline_id: &'a str,
    unadjusted_ate: Option<f64>,
    unadjusted_smd: Option<f64>,
    achieved_loss: Option<f64>,
    ate: Option<f64>,
    abs_ate: Option<f64>,
    smd: Option<f64>,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct BalanceRow<'a> {
    pipeline_id: &'a str,
    feature: &'a str,
    kind: String,
    smd: f64,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    pipeline_id: &'a str,
    smd: f64,
    a2a: f64,
    ate: f64,
    smd_valid: bool,
    overlap_valid: bool,
}

#[derive(Serialize)]
struct FoldRow<'a> {
    model: &'a str,
    link: &'a str,
    propensity: &'a str,
    fold: usize,
    accuracy: f64,
    extremes_ratio: f64,
    overlap: f64,
    composite: f64,
}

/// Writes `report.json`, `report.md` and the CSV files into `dir` (created
/// if needed). Returns the written paths.
pub fn write_run_outputs(r: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let path = |name: &str| dir.join(name);
    let mut written = Vec::new();

    fs::write(path("report.json"), to_json(r)?)?;
    written.push(path("report.json"));
    fs::write(path("report.md"), to_markdown(r))?;
    written.push(path("report.md"));

    write_csv(
        &path("candidates.csv"),
        r.candidates.iter().map(|c| CandidateRow {
            pipeline_id: &c.pipeline_id,
            model: c.spec.model.as_str(),
            link: if c.spec.logit { "logit" } else { "raw" },
            matcher: c.spec.matcher.as_str(),
            status: status_str(c.status),
            propensity: c.propensity.as_deref(),
            cv_overlap: c.cv_diagnostics.map(|d| d.overlap),
            overlap_valid: c.overlap_valid,
            smd: c.smd,
            smd_valid: c.smd_valid,
            a2a: c.a2a.as_ref().map(|a| a.mean),
            a2a_failures: c.a2a.as_ref().map(|a| a.failures),
            ate: c.ate,
            error: c.error.as_deref(),
        }),
    )?;
    written.push(path("candidates.csv"));

    let mut rows = Vec::new();
    for b in &r.artificial_tasks {
        for (p, id) in r.artificial_task_pipelines.iter().enumerate() {
            let out = b.outcomes.get(p).copied().flatten();
            rows.push(BootstrapRow {
                bootstrap: b.index,
                pipeline_id: id,
                unadjusted_ate: b.unadjusted.map(|u| u.ate),
                unadjusted_smd: b.unadjusted.map(|u| u.smd),
                achieved_loss: b.achieved_loss,
                ate: out.map(|o| o.ate),
                abs_ate: out.map(|o| o.ate.abs()),
                smd: out.map(|o| o.smd),
                error: b.errors.get(p).and_then(|e| e.as_deref()),
            });
        }
    }
    write_csv(&path("a2a_bootstraps.csv"), rows)?;
    written.push(path("a2a_bootstraps.csv"));

    write_csv(
        &path("balance.csv"),
        r.candidates.iter().flat_map(|c| {
            c.balance.iter().flat_map(|b| &b.per_feature).map(|f| BalanceRow {
                pipeline_id: &c.pipeline_id,
                feature: &f.feature,
                kind: format!("{:?}", f.kind).to_lowercase(),
                smd: f.smd,
            })
        }),
    )?;
    written.push(path("balance.csv"));

    write_csv(
        &path("smd_a2a.csv"),
        r.evaluations.iter().map(|e| ScatterRow {
            pipeline_id: &e.pipeline_id,
            smd: e.smd,
            a2a: e.a2a,
            ate: e.ate,
            smd_valid: e.smd_valid,
            overlap_valid: e.overlap_valid,
        }),
    )?;
    written.push(path("smd_a2a.csv"));

    write_csv(
        &path("propensity_cv.csv"),
        r.model_selection.iter().flat_map(|f| {
            f.grid.iter().flat_map(move |g| {
                g.folds.iter().map(move |fd| FoldRow {
                    model: f.model.as_str(),
                    link: if f.logit { "logit" } else { "raw" },
                    propensity: &g.propensity,
                    fold: fd.fold,
                    accuracy: fd.scores.accuracy,
                    extremes_ratio: fd.scores.extremes_ratio,
                    overlap: fd.scores.overlap,
                    composite: fd.scores.composite,
                })
            })
        }),
    )?;
    written.push(path("propensity_cv.csv"));
    Ok(written)
}

#[derive(Serialize)]
struct CorrelationCsvRow {
    k: usize,
    magnitude_tau_mean: f64,
    magnitude_tau_sd: f64,
    magnitude_p_mean: f64,
    ground_truth_tau_mean: f64,
    ground_truth_tau_sd: f64,
    ground_truth_p_mean: f64,
    random_tau_mean: f64,
    random_tau_sd: f64,
    random_p_mean: f64,
    n_tasks: usize,
    skipped_tasks: usize,
    undefined_tau: usize,
}

/// Writes the confounder-sweep tables: `overlap.csv` and `strategy_errors.csv`.
pub fn write_confounder_tables(s: &SuiteResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let overlap = dir.join("overlap.csv");
    write_csv(&overlap, overlap_table(s))?;
    let errors = dir.join("strategy_errors.csv");
    write_csv(&errors, error_table(s))?;
    Ok(vec![overlap, errors])
}

/// Writes `smd_correlation.csv`.
pub fn write_correlation_table(s: &SuiteResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let path = dir.join("smd_correlation.csv");
    let split = |t: TauSummary| (t.mean_tau, t.sd_tau, t.mean_p);
    write_csv(
        &path,
        correlation_table(s).into_iter().map(|r| {
            let (mt, ms, mp) = split(r.magnitude);
            let (gt, gs, gp) = split(r.ground_truth);
            let (rt, rs, rp) = split(r.random);
            CorrelationCsvRow {
                k: r.k,
                magnitude_tau_mean: mt,
                magnitude_tau_sd: ms,
                magnitude_p_mean: mp,
                ground_truth_tau_mean: gt,
                ground_truth_tau_sd: gs,
                ground_truth_p_mean: gp,
                random_tau_mean: rt,
                random_tau_sd: rs,
                random_p_mean: rp,
                n_tasks: r.magnitude.n_tasks,
                skipped_tasks: r.skipped_tasks,
                undefined_tau: r.undefined_tau,
            }
        }),
    )?;
    Ok(vec![path])
}
