//! Synthetic-suite experiments: overlap validity per link, SMD rank
//! correlations on artificial tasks, and per-strategy ATE range and error
//! across confounder counts.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::kendall_tau;
use crate::pipeline::{run_on_dataset, RunConfig, RunReport};
use crate::rng::{rng_from, stream};
use crate::strategy::Strategy;
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Template task; `n_confounders` and `seed` are overridden per setting.
    pub base: SynthConfig,
    pub k_values: Vec<usize>,
    /// Each seed drives both the generated task and the pipeline run.
    pub seeds: Vec<u64>,
    pub run: RunConfig,
}

impl SuiteConfig {
    /// k = 0..=10 on 3000 samples, 5 seeds, 100 bootstraps.
    pub fn full() -> Self {
        Self {
            base: SynthConfig::default(),
            k_values: (0..=10).collect(),
            seeds: (0..5).collect(),
            run: RunConfig::default(),
        }
    }

    /// [`SuiteConfig::full`] on 600 samples with 20 bootstraps.
    pub fn quick() -> Self {
        let mut s = Self::full();
        s.base.n_samples = 600;
        s.run.n_bootstraps = 20;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("the suite needs at least one k and one seed".into()));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k > self.base.n_features) {
            return Err(Error::Config(format!(
                "k = {k} exceeds n_features = {}",
                self.base.n_features
            )));
        }
        self.base.validate()?;
        self.run.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingRun {
    pub k: usize,
    pub seed: u64,
    pub true_ate: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub config: SuiteConfig,
    /// Ordered by k, then seed.
    pub runs: Vec<SettingRun>,
}

impl SuiteResult {
    fn at(&self, k: usize) -> impl Iterator<Item = &SettingRun> {
        self.runs.iter().filter(move |r| r.k == k)
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteResult> {
    cfg.validate()?;
    let settings: Vec<(usize, u64)> = cfg
        .k_values
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let runs = settings
        .par_iter()
        .map(|&(k, seed)| {
            let task = generate(&SynthConfig {
                n_confounders: k,
                seed,
                ..cfg.base
            })?;
            let run = RunConfig {
                seed,
                ..cfg.run.clone()
            };
            let mut report = run_on_dataset(&task.dataset, &run, &format!("synth k={k} seed={seed}"))?;
            report.synthetic = Some(task.summary());
            log::info!("suite: k={k} seed={seed} done");
            Ok(SettingRun {
                k,
                seed,
                true_ate: task.true_ate,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult {
        config: cfg.clone(),
        runs,
    })
}

/// Overlap validity of the selected propensity models, split by link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub k: usize,
    pub fits_raw: usize,
    pub fits_logit: usize,
    pub invalid_fraction_raw: f64,
    pub invalid_fraction_logit: f64,
    pub mean_overlap_lr_raw: f64,
    pub mean_overlap_lr_logit: f64,
    pub mean_overlap_clr_raw: f64,
    pub mean_overlap_clr_logit: f64,
    pub mean_overlap_rf_raw: f64,
    pub mean_overlap_rf_logit: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One row per k. A fit is one (model, link) family of one run; a family
/// whose selection failed counts as invalid.
pub fn overlap_table(s: &SuiteResult) -> Vec<OverlapRow> {
    use crate::propensity::ModelKind::{Clr, Lr, Rf};
    s.config
        .k_values
        .iter()
        .map(|&k| {
            let fams: Vec<_> = s.at(k).flat_map(|r| &r.report.model_selection).collect();
            let count = |logit: bool| fams.iter().filter(|f| f.logit == logit).count();
            let invalid = |logit: bool| {
                let n = count(logit);
                let bad = fams.iter().filter(|f| f.logit == logit && !f.overlap_valid).count();
                if n == 0 {
                    f64::NAN
                } else {
                    bad as f64 / n as f64
                }
            };
            let overlap = |model, logit: bool| {
                let v: Vec<f64> = fams
                    .iter()
                    .filter(|f| f.model == model && f.logit == logit)
                    .filter_map(|f| f.overlap)
                    .collect();
                mean(&v)
            };
            OverlapRow {
                k,
                fits_raw: count(false),
                fits_logit: count(true),
                invalid_fraction_raw: invalid(false),
                invalid_fraction_logit: invalid(true),
                mean_overlap_lr_raw: overlap(Lr, false),
                mean_overlap_lr_logit: overlap(Lr, true),
                mean_overlap_clr_raw: overlap(Clr, false),
                mean_overlap_clr_logit: overlap(Clr, true),
                mean_overlap_rf_raw: overlap(Rf, false),
                mean_overlap_rf_logit: overlap(Rf, true),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub mean_tau: f64,
    pub sd_tau: f64,
    pub mean_p: f64,
    pub n_tasks: usize,
}

impl TauSummary {
    fn from_values(v: &[(f64, f64)]) -> Self {
        let taus: Vec<f64> = v.iter().map(|x| x.0).collect();
        let ps: Vec<f64> = v.iter().map(|x| x.1).collect();
        Self {
            mean_tau: mean(&taus),
            sd_tau: sd(&taus),
            mean_p: mean(&ps),
            n_tasks: v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub k: usize,
    /// SMD vs |unadjusted ATE − matched ATE|.
    pub magnitude: TauSummary,
    /// SMD vs |matched ATE|; the true effect of an artificial task is zero.
    pub ground_truth: TauSummary,
    pub random: TauSummary,
    /// Artificial tasks with fewer than three candidate outcomes.
    pub skipped_tasks: usize,
    /// Tasks where a τ was undefined because one ranking was constant.
    pub undefined_tau: usize,
}

/// Kendall τ per artificial task between the SMD ranking of the candidates
/// and three reference rankings. Only raw-link candidates enter.
pub fn correlation_table(s: &SuiteResult) -> Vec<CorrelationRow> {
    s.config
        .k_values
        .iter()
        .map(|&k| {
            let mut magnitude = Vec::new();
            let mut truth = Vec::new();
            let mut random = Vec::new();
            let (mut skipped, mut undefined) = (0, 0);
            for run in s.at(k) {
                let ids = &run.report.artificial_task_pipelines;
                let raw: Vec<usize> = (0..ids.len())
                    .filter(|&p| run.report.candidate(&ids[p]).is_some_and(|c| !c.spec.logit))
                    .collect();
                for b in &run.report.artificial_tasks {
                    let Some(unadjusted) = b.unadjusted else {
                        skipped += 1;
                        continue;
                    };
                    let outs: Vec<_> = raw.iter().filter_map(|&p| b.outcomes[p]).collect();
                    if outs.len() < 3 {
                        skipped += 1;
                        continue;
                    }
                    let smd: Vec<f64> = outs.iter().map(|o| o.smd).collect();
                    let mag: Vec<f64> = outs.iter().map(|o| (unadjusted.ate - o.ate).abs()).collect();
                    let err: Vec<f64> = outs.iter().map(|o| o.ate.abs()).collect();
                    let mut rng = rng_from(run.seed, &[stream::RANDOM_RANKING, k as u64, b.index as u64]);
                    let rnd: Vec<f64> = outs.iter().map(|_| rng.random()).collect();
                    for (target, out) in [(&mag, &mut magnitude), (&err, &mut truth), (&rnd, &mut random)] {
                        match kendall_tau(&smd, target) {
                            Ok(t) => out.push((t.tau, t.p_value)),
                            Err(_) => undefined += 1,
                        }
                    }
                }
            }
            CorrelationRow {
                k,
                magnitude: TauSummary::from_values(&magnitude),
                ground_truth: TauSummary::from_values(&truth),
                random: TauSummary::from_values(&random),
                skipped_tasks: skipped,
                undefined_tau: undefined,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub k: usize,
    pub strategy: Strategy,
    /// Mean over runs where the strategy selected something.
    pub ate_range: f64,
    pub ate_range_sd: f64,
    /// Mean over those runs of the mean squared error of the selected ATEs.
    pub mse: f64,
    pub mean_selected: f64,
    pub runs_with_selection: usize,
    pub runs: usize,
    /// Squared error of the unadjusted ATE, averaged over runs.
    pub unadjusted_mse: f64,
}

/// One row per (k, strategy).
pub fn error_table(s: &SuiteResult) -> Vec<ErrorRow> {
    let mut rows = Vec::new();
    for &k in &s.config.k_values {
        let runs: Vec<&SettingRun> = s.at(k).collect();
        let unadjusted: Vec<f64> = runs
            .iter()
            .map(|r| (r.report.task.unadjusted.ate - r.true_ate).powi(2))
            .collect();
        for strategy in Strategy::ALL {
            let mut ranges = Vec::new();
            let mut errors = Vec::new();
            let mut sizes = Vec::new();
            for r in &runs {
                let Some(sel) = r.report.strategy(strategy) else {
                    continue;
                };
                if sel.selected.is_empty() {
                    continue;
                }
                ranges.push(sel.ate_range);
                sizes.push(sel.selected.len() as f64);
                let e: Vec<f64> = sel.ates.iter().map(|&a| (a - r.true_ate).powi(2)).collect();
                errors.push(mean(&e));
            }
            rows.push(ErrorRow {
                k,
                strategy,
                ate_range: mean(&ranges),
                ate_range_sd: sd(&ranges),
                mse: mean(&errors),
                mean_selected: mean(&sizes),
                runs_with_selection: ranges.len(),
                runs: runs.len(),
                unadjusted_mse: mean(&unadjusted),
            });
        }
    }
    rows
}
