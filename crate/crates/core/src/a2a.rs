//! Artificial matching tasks with a null effect, and the A2A score.
//!
//! An artificial task splits one population into pseudo-control and
//! pseudo-treated subsets whose unadjusted ATE and SMD are pushed, by
//! hill-climbing over swaps, towards half of the real task's. Since both
//! subsets come from one population the true effect is zero, so the absolute
//! matched ATE a pipeline reports on such a task measures its error. A2A is
//! the mean of that error over bootstrapped artificial tasks.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Arms;
use crate::metrics::{ate, balance_report_with, cohens_d_moments, cramers_v_counts, BalanceOptions, SmdAggregate};
use crate::rng::{derive_seed, rng_from, stream};
use crate::tabular::{CovariateValues, DesignMatrix};

/// Unadjusted bias of a task: treated-minus-control ATE and scalar SMD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReference {
    pub ate: f64,
    pub smd: f64,
}

impl BiasReference {
    pub fn from_matrix(m: &DesignMatrix, aggregate: SmdAggregate) -> Result<Self> {
        let (c, t) = crate::tabular::split_by_treatment(m)?;
        let x0 = m.subset(&c);
        let x1 = m.subset(&t);
        let opts = BalanceOptions {
            aggregate,
            ..Default::default()
        };
        Ok(Self {
            ate: ate(x0.outcome(), x1.outcome())?,
            smd: balance_report_with(&x0, &x1, opts)?.scalar,
        })
    }
}

/// `(½ ate_ref − ATE)² + (½ smd_ref − SMD)²` of a candidate partition given
/// as two populations.
pub fn partition_loss(
    x0: &DesignMatrix,
    x1: &DesignMatrix,
    reference: &BiasReference,
    aggregate: SmdAggregate,
) -> Result<f64> {
    let opts = BalanceOptions {
        aggregate,
        ..Default::default()
    };
    let a = ate(x0.outcome(), x1.outcome())?;
    let s = balance_report_with(x0, x1, opts)?.scalar;
    Ok(loss_terms(reference, a, s))
}

fn loss_terms(reference: &BiasReference, a: f64, s: f64) -> f64 {
    (0.5 * reference.ate - a).powi(2) + (0.5 * reference.smd - s).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillClimbConfig {
    pub max_iters: usize,
    /// Stop after this many consecutive rejected swaps.
    pub patience: usize,
    pub seed: u64,
    /// `(p_control, p_treated)`; the pseudo-control size is
    /// `round(n · p_control)`, clamped so both subsets are non-empty.
    pub membership_probs: (f64, f64),
    pub smd_aggregate: SmdAggregate,
}

impl Default for HillClimbConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            patience: 2_000,
            seed: 0,
            membership_probs: (0.5, 0.5),
            smd_aggregate: SmdAggregate::Mean,
        }
    }
}

impl HillClimbConfig {
    /// Membership probabilities reproducing the arm-size ratio `n0 : n1`.
    pub fn with_ratio(mut self, n0: usize, n1: usize) -> Self {
        let total = (n0 + n1) as f64;
        self.membership_probs = (n0 as f64 / total, n1 as f64 / total);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (p0, p1) = self.membership_probs;
        if !(p0 > 0.0 && p1 > 0.0 && ((p0 + p1) - 1.0).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "membership probabilities ({p0}, {p1}) must be positive and sum to 1"
            )));
        }
        Ok(())
    }

    pub fn subset_sizes(&self, n: usize) -> (usize, usize) {
        let n0 = ((n as f64 * self.membership_probs.0).round() as usize).clamp(1, n - 1);
        (n0, n - n0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtificialTask {
    /// Sorted row indices into the source population.
    pub pseudo_control: Vec<usize>,
    pub pseudo_treated: Vec<usize>,
    pub target_ate: f64,
    pub target_smd: f64,
    pub initial_loss: f64,
    pub achieved_loss: f64,
    /// Swaps attempted before stopping.
    pub iterations: usize,
}

impl ArtificialTask {
    /// The source population relabelled with the pseudo treatment.
    pub fn design(&self, source: &DesignMatrix) -> Result<DesignMatrix> {
        let mut t = vec![false; source.n_rows()];
        for &i in &self.pseudo_treated {
            t[i] = true;
        }
        source.clone().with_treatment(t)
    }
}

enum CovStats<'a> {
    Continuous { x: Vec<f64>, sum: [f64; 2], sq: [f64; 2] },
    Categorical { codes: &'a [u32], counts: [Vec<usize>; 2] },
}

/// Per-side sufficient statistics of a two-way partition, updated in O(1)
/// per covariate when samples change sides.
struct Partition<'a> {
    y: &'a [f64],
    side: Vec<usize>,
    n: [usize; 2],
    ysum: [f64; 2],
    covs: Vec<CovStats<'a>>,
    reference: BiasReference,
    aggregate: SmdAggregate,
}

impl<'a> Partition<'a> {
    fn new(m: &'a DesignMatrix, side: Vec<usize>, reference: BiasReference, aggregate: SmdAggregate) -> Self {
        let mut covs: Vec<CovStats<'a>> = m
            .covariates()
            .iter()
            .map(|c| match &c.values {
                CovariateValues::Continuous(v) => {
                    // Centring keeps the running sums of squares well conditioned.
                    let mu = v.iter().sum::<f64>() / v.len().max(1) as f64;
                    CovStats::Continuous {
                        x: v.iter().map(|x| x - mu).collect(),
                        sum: [0.0; 2],
                        sq: [0.0; 2],
                    }
                }
                CovariateValues::Categorical { codes, levels } => CovStats::Categorical {
                    codes,
                    counts: [vec![0; levels.len()], vec![0; levels.len()]],
                },
            })
            .collect();
        let y = m.outcome();
        let mut n = [0; 2];
        let mut ysum = [0.0; 2];
        for (i, &s) in side.iter().enumerate() {
            n[s] += 1;
            ysum[s] += y[i];
            for c in covs.iter_mut() {
                match c {
                    CovStats::Continuous { x, sum, sq } => {
                        sum[s] += x[i];
                        sq[s] += x[i] * x[i];
                    }
                    CovStats::Categorical { codes, counts } => counts[s][codes[i] as usize] += 1,
                }
            }
        }
        Self {
            y,
            side,
            n,
            ysum,
            covs,
            reference,
            aggregate,
        }
    }

    fn swap(&mut self, a: usize, b: usize) {
        let (sa, sb) = (self.side[a], self.side[b]);
        debug_assert_ne!(sa, sb);
        self.ysum[sa] += self.y[b] - self.y[a];
        self.ysum[sb] += self.y[a] - self.y[b];
        for c in self.covs.iter_mut() {
            match c {
                CovStats::Continuous { x, sum, sq } => {
                    sum[sa] += x[b] - x[a];
                    sum[sb] += x[a] - x[b];
                    let d = x[b] * x[b] - x[a] * x[a];
                    sq[sa] += d;
                    sq[sb] -= d;
                }
                CovStats::Categorical { codes, counts } => {
                    let (ca, cb) = (codes[a] as usize, codes[b] as usize);
                    counts[sa][ca] -= 1;
                    counts[sa][cb] += 1;
                    counts[sb][cb] -= 1;
                    counts[sb][ca] += 1;
                }
            }
        }
        self.side.swap(a, b);
    }

    /// Loss of the current partition; infinite when an SMD is undefined.
    fn loss(&self) -> f64 {
        let n = [self.n[0] as f64, self.n[1] as f64];
        let a = self.ysum[1] / n[1] - self.ysum[0] / n[0];
        let smds: Result<Vec<f64>> = self
            .covs
            .iter()
            .map(|c| match c {
                CovStats::Continuous { sum, sq, .. } => {
                    let m = [sum[0] / n[0], sum[1] / n[1]];
                    cohens_d_moments(
                        n[0],
                        m[0],
                        sq[0] - n[0] * m[0] * m[0],
                        n[1],
                        m[1],
                        sq[1] - n[1] * m[1] * m[1],
                    )
                }
                CovStats::Categorical { counts, .. } => Ok(cramers_v_counts(&counts[0], &counts[1])),
            })
            .collect();
        match smds {
            Ok(v) => loss_terms(&self.reference, a, self.aggregate.combine(v.into_iter())),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Hill-climbing partition of `source` (its treatment labels are ignored).
/// Also returns the loss after each attempted swap, preceded by the initial
/// loss.
pub fn build_artificial_task_traced(
    source: &DesignMatrix,
    reference: &BiasReference,
    cfg: &HillClimbConfig,
) -> Result<(ArtificialTask, Vec<f64>)> {
    cfg.validate()?;
    let n = source.n_rows();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "an artificial task needs at least 4 samples, got {n}"
        )));
    }
    let (n0, _) = cfg.subset_sizes(n);
    let mut rng = rng_from(cfg.seed, &[stream::HILL_CLIMB]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut side = vec![0usize; n];
    for &i in &order[n0..] {
        side[i] = 1;
    }
    // members[s] lists the rows currently on side s.
    let mut members: [Vec<usize>; 2] = [order[..n0].to_vec(), order[n0..].to_vec()];

    let mut part = Partition::new(source, side, *reference, cfg.smd_aggregate);
    let initial_loss = part.loss();
    let mut current = initial_loss;
    let mut trace = Vec::with_capacity(cfg.max_iters.min(1 << 16) + 1);
    trace.push(current);
    let mut rejected = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iters && rejected < cfg.patience.max(1) {
        iterations += 1;
        let ka = rng.random_range(0..members[0].len());
        let kb = rng.random_range(0..members[1].len());
        let (a, b) = (members[0][ka], members[1][kb]);
        part.swap(a, b);
        let candidate = part.loss();
        if candidate < current {
            current = candidate;
            members[0][ka] = b;
            members[1][kb] = a;
            rejected = 0;
        } else {
            part.swap(b, a);
            rejected += 1;
        }
        trace.push(current);
    }

    let mut pseudo_control = std::mem::take(&mut members[0]);
    let mut pseudo_treated = std::mem::take(&mut members[1]);
    pseudo_control.sort_unstable();
    pseudo_treated.sort_unstable();
    Ok((
        ArtificialTask {
            pseudo_control,
            pseudo_treated,
            target_ate: 0.5 * reference.ate,
            target_smd: 0.5 * reference.smd,
            initial_loss,
            achieved_loss: current,
            iterations,
        },
        trace,
    ))
}

pub fn build_artificial_task(
    source: &DesignMatrix,
    reference: &BiasReference,
    cfg: &HillClimbConfig,
) -> Result<ArtificialTask> {
    build_artificial_task_traced(source, reference, cfg).map(|(t, _)| t)
}

/// Matched ATE and scalar SMD a pipeline reports on a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub ate: f64,
    pub smd: f64,
}

/// A family of pipelines evaluated together on each artificial task, so that
/// work shared between them (such as propensity fits) is done once.
pub trait PipelineSet: Sync {
    fn ids(&self) -> Vec<String>;

    /// One outcome per id, in `ids()` order.
    fn run(&self, task: &DesignMatrix, seed: u64) -> Vec<Result<PipelineOutcome>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2AConfig {
    pub n_bootstraps: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub patience: usize,
    pub smd_aggregate: SmdAggregate,
}

impl Default for A2AConfig {
    fn default() -> Self {
        Self {
            n_bootstraps: 100,
            seed: 0,
            max_iters: 20_000,
            patience: 2_000,
            smd_aggregate: SmdAggregate::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub index: usize,
    /// Unadjusted bias of the artificial task (pseudo-treated minus
    /// pseudo-control).
    pub unadjusted: Option<BiasReference>,
    pub achieved_loss: Option<f64>,
    /// Per pipeline, aligned with the pipeline ids.
    pub outcomes: Vec<Option<PipelineOutcome>>,
    pub errors: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2AResult {
    /// |matched ATE| of each successful bootstrap, in bootstrap order.
    pub per_bootstrap: Vec<f64>,
    /// Bootstrap index of each entry of `per_bootstrap`.
    pub bootstrap_index: Vec<usize>,
    pub mean: f64,
    pub n_bootstraps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2ABatch {
    pub ids: Vec<String>,
    pub reference: BiasReference,
    pub bootstraps: Vec<BootstrapRecord>,
}

impl A2ABatch {
    /// A2A of pipeline `p`; unavailable when more than half the bootstraps
    /// failed.
    pub fn result(&self, p: usize) -> Result<A2AResult> {
        let mut per_bootstrap = Vec::new();
        let mut bootstrap_index = Vec::new();
        for b in &self.bootstraps {
            if let Some(o) = b.outcomes[p] {
                per_bootstrap.push(o.ate.abs());
                bootstrap_index.push(b.index);
            }
        }
        let total = self.bootstraps.len();
        let failures = total - per_bootstrap.len();
        if per_bootstrap.is_empty() || 2 * failures > total {
            return Err(Error::A2AUnavailable {
                failed: failures,
                total,
            });
        }
        let mean = per_bootstrap.iter().sum::<f64>() / per_bootstrap.len() as f64;
        Ok(A2AResult {
            per_bootstrap,
            bootstrap_index,
            mean,
            n_bootstraps: total,
            failures,
        })
    }

    pub fn results(&self) -> Vec<Result<A2AResult>> {
        (0..self.ids.len()).map(|p| self.result(p)).collect()
    }
}

fn run_bootstrap(
    m: &DesignMatrix,
    arms: &Arms,
    reference: &BiasReference,
    set: &dyn PipelineSet,
    n_pipelines: usize,
    cfg: &A2AConfig,
    b: usize,
) -> BootstrapRecord {
    let fail = |e: Error| BootstrapRecord {
        index: b,
        unadjusted: None,
        achieved_loss: None,
        outcomes: vec![None; n_pipelines],
        errors: vec![Some(e.to_string()); n_pipelines],
    };
    let mut rng = rng_from(cfg.seed, &[stream::A2A, stream::RESAMPLE, b as u64]);
    let rows: Vec<usize> = (0..arms.large.len())
        .map(|_| arms.large[rng.random_range(0..arms.large.len())])
        .collect();
    let source = m.subset(&rows);
    let (n0, n1) = (
        m.treatment().iter().filter(|&&t| !t).count(),
        m.treatment().iter().filter(|&&t| t).count(),
    );
    let hc = HillClimbConfig {
        max_iters: cfg.max_iters,
        patience: cfg.patience,
        seed: derive_seed(cfg.seed, &[stream::A2A, stream::HILL_CLIMB, b as u64]),
        smd_aggregate: cfg.smd_aggregate,
        ..Default::default()
    }
    .with_ratio(n0, n1);
    let task = match build_artificial_task(&source, reference, &hc).and_then(|t| Ok((t.design(&source)?, t))) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let (design, task) = task;
    let unadjusted = match BiasReference::from_matrix(&design, cfg.smd_aggregate) {
        Ok(u) => u,
        Err(e) => return fail(e),
    };
    let results = set.run(
        &design,
        derive_seed(cfg.seed, &[stream::A2A, stream::PIPELINE, b as u64]),
    );
    debug_assert_eq!(results.len(), n_pipelines);
    let mut outcomes = Vec::with_capacity(n_pipelines);
    let mut errors = Vec::with_capacity(n_pipelines);
    for r in results {
        match r {
            Ok(o) => {
                outcomes.push(Some(o));
                errors.push(None);
            }
            Err(e) => {
                outcomes.push(None);
                errors.push(Some(e.to_string()));
            }
        }
    }
    BootstrapRecord {
        index: b,
        unadjusted: Some(unadjusted),
        achieved_loss: Some(task.achieved_loss),
        outcomes,
        errors,
    }
}

/// Runs every pipeline of `set` on `n_bootstraps` artificial tasks built from
/// resamples of the larger arm of `m`. Bootstrap `b` draws all of its
/// randomness from `(seed, b)`, so the batch is independent of scheduling.
pub fn compute_a2a_batch(m: &DesignMatrix, set: &dyn PipelineSet, cfg: &A2AConfig) -> Result<A2ABatch> {
    if cfg.n_bootstraps == 0 {
        return Err(Error::Config("n_bootstraps must be at least 1".into()));
    }
    let arms = Arms::from_matrix(m)?;
    let reference = BiasReference::from_matrix(m, cfg.smd_aggregate)?;
    let ids = set.ids();
    let n_pipelines = ids.len();
    let bootstraps = (0..cfg.n_bootstraps)
        .into_par_iter()
        .map(|b| run_bootstrap(m, &arms, &reference, set, n_pipelines, cfg, b))
        .collect();
    Ok(A2ABatch {
        ids,
        reference,
        bootstraps,
    })
}

/// A2A of a single-pipeline set.
pub fn compute_a2a(m: &DesignMatrix, pipeline: &dyn PipelineSet, cfg: &A2AConfig) -> Result<A2AResult> {
    let batch = compute_a2a_batch(m, pipeline, cfg)?;
    if batch.ids.len() != 1 {
        return Err(Error::Config(format!("expected one pipeline, got {}", batch.ids.len())));
    }
    batch.result(0)
}
