//! End-to-end evaluation of a grid of PSM pipelines on one task.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::a2a::{
    compute_a2a_batch, A2AConfig, A2AResult, BiasReference, BootstrapRecord, PipelineOutcome, PipelineSet,
};
use crate::error::{Error, Result};
use crate::matching::{extract_matched, match_values, Arms, Matcher};
use crate::metrics::{ate, balance_report_with, BalanceOptions, BalanceReport, SmdAggregate, SMD_THRESHOLD};
use crate::propensity::{
    fit_model, select_model, ClipBounds, DiagnosticScores, FoldDiagnostics, ModelKind, PropensityConfig, PropensityFit,
};
use crate::rng::derive_seed;
use crate::strategy::{apply_all, CandidateEvaluation, SelectionResult, StrategyParams};
use crate::synth::SynthSummary;
use crate::tabular::{encode, impute, Dataset, DesignMatrix};

/// One pipeline: propensity model, link and matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub model: ModelKind,
    pub logit: bool,
    pub matcher: Matcher,
}

impl CandidateSpec {
    /// `MODEL-LINK-MATCHER`, e.g. `CLR-logit-optimal`.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.model.as_str(),
            if self.logit { "logit" } else { "raw" },
            self.matcher.as_str()
        )
    }

    /// {LR, CLR, RF} × {raw, logit} × {nearest, optimal}.
    pub fn default_grid() -> Vec<CandidateSpec> {
        let mut v = Vec::with_capacity(12);
        for model in ModelKind::ALL {
            for logit in [false, true] {
                for matcher in [Matcher::Nearest, Matcher::Optimal] {
                    v.push(CandidateSpec { model, logit, matcher });
                }
            }
        }
        v
    }
}

impl FromStr for CandidateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        let [model, link, matcher] = parts.as_slice() else {
            return Err(Error::Config(format!("candidate `{s}` is not MODEL-LINK-MATCHER")));
        };
        let logit = match *link {
            "raw" => false,
            "logit" => true,
            other => return Err(Error::Config(format!("unknown link `{other}`"))),
        };
        Ok(Self {
            model: model.parse()?,
            logit,
            matcher: matcher.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub candidates: Vec<CandidateSpec>,
    pub n_bootstraps: usize,
    pub seed: u64,
    pub smd_aggregate: SmdAggregate,
    pub smd_threshold: f64,
    pub strategy: StrategyParams,
    /// Forest sizes tried by CV model selection for RF.
    pub rf_tree_grid: Vec<usize>,
    pub cv_folds: usize,
    pub clip: ClipBounds,
    pub hill_climb_iters: usize,
    pub hill_climb_patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            candidates: CandidateSpec::default_grid(),
            n_bootstraps: 100,
            seed: 0,
            smd_aggregate: SmdAggregate::Mean,
            smd_threshold: SMD_THRESHOLD,
            strategy: StrategyParams::default(),
            rf_tree_grid: vec![25, 100],
            cv_folds: 5,
            clip: ClipBounds::default(),
            hill_climb_iters: 20_000,
            hill_climb_patience: 2_000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config("no candidate pipelines".into()));
        }
        let mut ids: Vec<String> = self.candidates.iter().map(CandidateSpec::id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate candidate pipelines".into()));
        }
        if self.n_bootstraps == 0 {
            return Err(Error::Config("n_bootstraps must be at least 1".into()));
        }
        if self.rf_tree_grid.is_empty() || self.rf_tree_grid.contains(&0) {
            return Err(Error::Config("rf_tree_grid must list positive forest sizes".into()));
        }
        if !(self.smd_threshold > 0.0) {
            return Err(Error::Config("smd_threshold must be positive".into()));
        }
        if !(self.strategy.eps > 0.0) || self.strategy.min_pts == 0 {
            return Err(Error::Config("DBSCAN needs eps > 0 and min_pts >= 1".into()));
        }
        Ok(())
    }

    fn balance_options(&self) -> BalanceOptions {
        BalanceOptions {
            threshold: self.smd_threshold,
            aggregate: self.smd_aggregate,
        }
    }

    fn a2a_config(&self) -> A2AConfig {
        A2AConfig {
            n_bootstraps: self.n_bootstraps,
            seed: derive_seed(self.seed, &[SEED_A2A]),
            max_iters: self.hill_climb_iters,
            patience: self.hill_climb_patience,
            smd_aggregate: self.smd_aggregate,
        }
    }

    /// Seed shared by every propensity config of one model kind, so grid
    /// members are compared on the same folds and raw/logit variants share
    /// their fits.
    fn family_seed(&self, model: ModelKind) -> u64 {
        derive_seed(self.seed, &[SEED_PROPENSITY, model_code(model)])
    }

    fn grid(&self, model: ModelKind, logit: bool) -> Vec<PropensityConfig> {
        let base = PropensityConfig {
            model,
            use_logit_link: logit,
            clip: self.clip,
            cv_folds: self.cv_folds,
            seed: self.family_seed(model),
            ..Default::default()
        };
        match model {
            ModelKind::Rf => self
                .rf_tree_grid
                .iter()
                .map(|&rf_trees| PropensityConfig { rf_trees, ..base })
                .collect(),
            _ => vec![base],
        }
    }
}

const SEED_PROPENSITY: u64 = 1;
const SEED_A2A: u64 = 2;

fn model_code(m: ModelKind) -> u64 {
    match m {
        ModelKind::Lr => 0,
        ModelKind::Clr => 1,
        ModelKind::Rf => 2,
    }
}

/// Configs producing identical fitted models (the link only changes how
/// scores are used).
fn same_fit(a: &PropensityConfig, b: &PropensityConfig) -> bool {
    a.model == b.model
        && a.seed == b.seed
        && (a.model != ModelKind::Rf
            || (a.rf_trees == b.rf_trees && a.rf_max_depth == b.rf_max_depth && a.rf_min_leaf == b.rf_min_leaf))
}

fn distinct_fits(configs: &[PropensityConfig]) -> (Vec<PropensityConfig>, Vec<usize>) {
    let mut keys: Vec<PropensityConfig> = Vec::new();
    let slots = configs
        .iter()
        .map(|c| match keys.iter().position(|k| same_fit(k, c)) {
            Some(i) => i,
            None => {
                keys.push(PropensityConfig {
                    use_logit_link: false,
                    ..*c
                });
                keys.len() - 1
            }
        })
        .collect();
    (keys, slots)
}

/// Matched ATE (treated minus control) and balance of one scored task.
pub fn evaluate_matching(
    m: &DesignMatrix,
    arms: &Arms,
    matching_value: &[f64],
    matcher: Matcher,
    opts: BalanceOptions,
) -> Result<(f64, BalanceReport, f64)> {
    let large: Vec<f64> = arms.large.iter().map(|&i| matching_value[i]).collect();
    let small: Vec<f64> = arms.small.iter().map(|&i| matching_value[i]).collect();
    let r = match_values(matcher, &large, &small)?;
    let (ml, ms) = extract_matched(m, arms, &r)?;
    let (control, treated) = if arms.large_is_treated { (ms, ml) } else { (ml, ms) };
    let effect = ate(control.outcome(), treated.outcome())?;
    let balance = balance_report_with(&control, &treated, opts)?;
    Ok((effect, balance, r.total_distance))
}

/// The candidate pipelines, with their selected propensity configs, as a
/// [`PipelineSet`] for A2A. Fits are shared between candidates with the same
/// propensity model.
struct PsmPipelines {
    ids: Vec<String>,
    configs: Vec<PropensityConfig>,
    matchers: Vec<Matcher>,
    balance: BalanceOptions,
}

impl PipelineSet for PsmPipelines {
    fn ids(&self) -> Vec<String> {
        self.ids.clone()
    }

    fn run(&self, task: &DesignMatrix, seed: u64) -> Vec<Result<PipelineOutcome>> {
        let (keys, slots) = distinct_fits(&self.configs);
        let fits: Vec<Result<Vec<f64>>> = keys
            .iter()
            .map(|k| {
                let cfg = PropensityConfig {
                    seed: derive_seed(seed, &[model_code(k.model)]),
                    ..*k
                };
                fit_model(task.features(), task.treatment(), &cfg).map(|(_, raw)| raw)
            })
            .collect();
        let arms = match Arms::from_matrix(task) {
            Ok(a) => a,
            Err(e) => return self.ids.iter().map(|_| Err(Error::Internal(e.to_string()))).collect(),
        };
        self.configs
            .iter()
            .zip(&slots)
            .zip(&self.matchers)
            .map(|((cfg, &slot), &matcher)| {
                let raw = fits[slot].as_ref().map_err(|e| Error::Internal(e.to_string()))?;
                let values = crate::propensity::clip_and_transform(raw, cfg);
                let (effect, balance, _) = evaluate_matching(task, &arms, &values, matcher, self.balance)?;
                Ok(PipelineOutcome {
                    ate: effect,
                    smd: balance.scalar,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStatus {
    Ok,
    FitFailed,
    MatchingFailed,
    A2aUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub pipeline_id: String,
    pub spec: CandidateSpec,
    pub status: CandidateStatus,
    pub error: Option<String>,
    /// Propensity config chosen by CV, e.g. `RF(100)+logit`.
    pub propensity: Option<String>,
    pub propensity_config: Option<PropensityConfig>,
    pub cv_diagnostics: Option<DiagnosticScores>,
    pub in_sample_diagnostics: Option<DiagnosticScores>,
    pub overlap_valid: bool,
    pub ate: Option<f64>,
    pub smd: Option<f64>,
    pub smd_valid: bool,
    pub match_distance: Option<f64>,
    pub balance: Option<BalanceReport>,
    pub a2a: Option<A2AResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub propensity: String,
    pub config: PropensityConfig,
    pub folds: Vec<FoldDiagnostics>,
    pub mean: Option<DiagnosticScores>,
    pub error: Option<String>,
}

/// CV model selection of one (model, link) family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub model: ModelKind,
    pub logit: bool,
    pub selected: Option<String>,
    pub overlap: Option<f64>,
    pub overlap_valid: bool,
    pub grid: Vec<GridEntry>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub source: String,
    pub n_rows: usize,
    pub n_control: usize,
    pub n_treated: usize,
    pub features: Vec<String>,
    pub unadjusted: BiasReference,
    pub encoding_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub propensity_seeds: Vec<(ModelKind, u64)>,
    pub a2a_seed: u64,
    pub decisions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub task: TaskSummary,
    /// Generator settings and ground truth when the task is synthetic.
    pub synthetic: Option<SynthSummary>,
    pub model_selection: Vec<FamilySelection>,
    pub candidates: Vec<CandidateReport>,
    pub evaluations: Vec<CandidateEvaluation>,
    pub strategies: Vec<SelectionResult>,
    /// Pipelines run on the artificial tasks, aligned with each record's
    /// `outcomes`.
    pub artificial_task_pipelines: Vec<String>,
    pub artificial_tasks: Vec<BootstrapRecord>,
}

impl RunReport {
    pub fn n_ok(&self) -> usize {
        self.candidates
            .iter()
            .filter(|c| c.status == CandidateStatus::Ok)
            .count()
    }

    /// 0 when every candidate succeeded, 3 when none did, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.n_ok() {
            n if n == self.candidates.len() => 0,
            0 => 3,
            _ => 2,
        }
    }

    pub fn candidate(&self, id: &str) -> Option<&CandidateReport> {
        self.candidates.iter().find(|c| c.pipeline_id == id)
    }

    pub fn strategy(&self, s: crate::strategy::Strategy) -> Option<&SelectionResult> {
        self.strategies.iter().find(|r| r.strategy == s)
    }
}

const DECISIONS: &[&str] = &[
    "standardization: population z-score fitted on the full dataset",
    "propensity: scores clipped to the clip interval before matching; diagnostics on the pre-clip link-scale score",
    "model selection: stratified k-fold CV on the composite score; overlap validity from the CV mean",
    "matching: 1:1 without replacement, smaller arm into larger arm, absolute distance of matching values",
    "smd: Cohen's d (pooled N-1 SD) on raw continuous values, Cramér's V on categorical labels",
    "a2a: larger arm resampled with replacement per bootstrap; hill-climbing towards half the real task's ATE and SMD",
    "a2a: artificial tasks reuse the real task's selected propensity configs and standardization",
    "strategies: overlap-invalid candidates excluded; SMD validity is strict (< threshold)",
];

fn family_key(s: &CandidateSpec) -> (ModelKind, bool) {
    (s.model, s.logit)
}

/// Imputes and encodes `data`, then runs [`run_pipeline`].
pub fn run_on_dataset(data: &Dataset, cfg: &RunConfig, source: &str) -> Result<RunReport> {
    let m = encode(&impute(data)?)?;
    run_pipeline(&m, cfg, source)
}

/// Evaluates every candidate of `cfg` on `m`: CV model selection, full fit,
/// matching, balance, matched ATE and A2A; then applies all strategies.
/// Per-candidate failures are recorded and do not abort the run.
pub fn run_pipeline(m: &DesignMatrix, cfg: &RunConfig, source: &str) -> Result<RunReport> {
    cfg.validate()?;
    let arms = Arms::from_matrix(m)?;
    let reference = BiasReference::from_matrix(m, cfg.smd_aggregate)?;
    let opts = cfg.balance_options();

    let mut families: Vec<(ModelKind, bool)> = Vec::new();
    for s in &cfg.candidates {
        if !families.contains(&family_key(s)) {
            families.push(family_key(s));
        }
    }
    let selections: Vec<FamilySelection> = families
        .par_iter()
        .map(|&(model, logit)| {
            let grid = cfg.grid(model, logit);
            match select_model(m, &grid) {
                Ok(sel) => {
                    let best = sel.best_scores();
                    FamilySelection {
                        model,
                        logit,
                        selected: Some(sel.best.label()),
                        overlap: Some(best.overlap),
                        overlap_valid: best.valid,
                        grid: sel
                            .candidates
                            .into_iter()
                            .map(|c| GridEntry {
                                propensity: c.config.label(),
                                config: c.config,
                                folds: c.folds,
                                mean: c.mean,
                                error: c.error,
                            })
                            .collect(),
                        error: None,
                    }
                }
                Err(e) => FamilySelection {
                    model,
                    logit,
                    selected: None,
                    overlap: None,
                    overlap_valid: false,
                    grid: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let selected_config = |s: &CandidateSpec| -> Option<(PropensityConfig, DiagnosticScores, bool)> {
        let f = &selections[families.iter().position(|k| *k == family_key(s))?];
        let label = f.selected.as_ref()?;
        let g = f.grid.iter().find(|g| &g.propensity == label)?;
        Some((g.config, g.mean?, f.overlap_valid))
    };

    // Full-data fits, one per distinct model.
    let chosen: Vec<Option<(PropensityConfig, DiagnosticScores, bool)>> =
        cfg.candidates.iter().map(selected_config).collect();
    let fit_configs: Vec<PropensityConfig> = chosen.iter().flatten().map(|c| c.0).collect();
    let (keys, _) = distinct_fits(&fit_configs);
    let fits: Vec<Result<Vec<f64>>> = keys
        .par_iter()
        .map(|k| fit_model(m.features(), m.treatment(), k).map(|(_, raw)| raw))
        .collect();

    let mut candidates: Vec<CandidateReport> = cfg
        .candidates
        .par_iter()
        .zip(&chosen)
        .map(|(spec, chosen)| {
            let mut rep = CandidateReport {
                pipeline_id: spec.id(),
                spec: *spec,
                status: CandidateStatus::FitFailed,
                error: None,
                propensity: None,
                propensity_config: None,
                cv_diagnostics: None,
                in_sample_diagnostics: None,
                overlap_valid: false,
                ate: None,
                smd: None,
                smd_valid: false,
                match_distance: None,
                balance: None,
                a2a: None,
            };
            let Some((pc, cv, overlap_valid)) = chosen else {
                let f = &selections[families.iter().position(|k| *k == family_key(spec)).expect("family")];
                rep.error = f.error.clone().or_else(|| Some("no propensity model selected".into()));
                return rep;
            };
            rep.propensity = Some(pc.label());
            rep.propensity_config = Some(*pc);
            rep.cv_diagnostics = Some(*cv);
            rep.overlap_valid = *overlap_valid;
            let slot = keys.iter().position(|k| same_fit(k, pc)).expect("fit key");
            let fit = match &fits[slot] {
                Ok(raw) => PropensityFit::from_raw(raw.clone(), m.treatment(), pc),
                Err(e) => Err(Error::Internal(e.to_string())),
            };
            let fit = match fit {
                Ok(f) => f,
                Err(e) => {
                    rep.error = Some(e.to_string());
                    return rep;
                }
            };
            rep.in_sample_diagnostics = Some(fit.diagnostics);
            match evaluate_matching(m, &arms, &fit.matching_value, spec.matcher, opts) {
                Ok((effect, balance, distance)) => {
                    rep.status = CandidateStatus::Ok;
                    rep.ate = Some(effect);
                    rep.smd = Some(balance.scalar);
                    rep.smd_valid = balance.valid;
                    rep.match_distance = Some(distance);
                    rep.balance = Some(balance);
                }
                Err(e) => {
                    rep.status = CandidateStatus::MatchingFailed;
                    rep.error = Some(e.to_string());
                }
            }
            rep
        })
        .collect();

    let runnable: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].status == CandidateStatus::Ok)
        .collect();
    let a2a_cfg = cfg.a2a_config();
    let mut artificial_tasks = Vec::new();
    let mut artificial_task_pipelines = Vec::new();
    if !runnable.is_empty() {
        let set = PsmPipelines {
            ids: runnable.iter().map(|&i| candidates[i].pipeline_id.clone()).collect(),
            configs: runnable
                .iter()
                .map(|&i| candidates[i].propensity_config.expect("fitted"))
                .collect(),
            matchers: runnable.iter().map(|&i| candidates[i].spec.matcher).collect(),
            balance: opts,
        };
        let batch = compute_a2a_batch(m, &set, &a2a_cfg)?;
        for (p, &i) in runnable.iter().enumerate() {
            match batch.result(p) {
                Ok(r) => candidates[i].a2a = Some(r),
                Err(e) => {
                    candidates[i].status = CandidateStatus::A2aUnavailable;
                    candidates[i].error = Some(e.to_string());
                }
            }
        }
        artificial_tasks = batch.bootstraps;
        artificial_task_pipelines = batch.ids;
    }

    let evaluations: Vec<CandidateEvaluation> = candidates
        .iter()
        .filter(|c| c.status == CandidateStatus::Ok)
        .map(|c| {
            CandidateEvaluation::new(
                c.pipeline_id.clone(),
                c.smd.expect("ok candidate has smd"),
                c.a2a.as_ref().expect("ok candidate has a2a").mean,
                c.ate.expect("ok candidate has ate"),
                c.overlap_valid,
                cfg.smd_threshold,
            )
        })
        .collect();
    let strategies = apply_all(&evaluations, cfg.strategy);

    Ok(RunReport {
        provenance: Provenance {
            tool: "matchforge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            propensity_seeds: families
                .iter()
                .map(|&(model, _)| model)
                .fold(Vec::new(), |mut v: Vec<ModelKind>, k| {
                    if !v.contains(&k) {
                        v.push(k);
                    }
                    v
                })
                .into_iter()
                .map(|k| (k, cfg.family_seed(k)))
                .collect(),
            a2a_seed: a2a_cfg.seed,
            decisions: DECISIONS.iter().map(|s| s.to_string()).collect(),
        },
        task: TaskSummary {
            source: source.to_string(),
            n_rows: m.n_rows(),
            n_control: m.treatment().iter().filter(|&&t| !t).count(),
            n_treated: m.treatment().iter().filter(|&&t| t).count(),
            features: m.feature_names().to_vec(),
            unadjusted: reference,
            encoding_warnings: m.warnings().to_vec(),
        },
        synthetic: None,
        model_selection: selections,
        candidates,
        evaluations,
        strategies,
        artificial_task_pipelines,
        artificial_tasks,
    })
}
