//! Propensity score estimation.
//!
//! Three estimators are available: class-balanced logistic regression (LR),
//! chunked logistic regression (CLR), which averages LR models fitted on
//! chunks of the larger arm paired with the whole smaller arm, and a
//! Platt-calibrated random forest (RF). Scores are clipped to the configured
//! interval and optionally mapped to the logit scale before matching.

pub mod diagnostics;
pub mod forest;
pub mod logistic;
mod selection;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use diagnostics::{accuracy_score, diagnose, extremes_ratio, overlap_coefficient, DiagnosticScores};
pub use forest::{fit_forest, Forest, ForestParams};
pub use logistic::{balanced_weights, fit_logistic, LogisticModel, LogisticOptions};
pub use selection::{select_model, stratified_folds, CandidateSelection, FoldDiagnostics, ModelSelection};

use crate::error::{Error, Result};
use crate::matching::Arms;
use crate::rng::{derive_seed, rng_from, stream};
use crate::tabular::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "CLR")]
    Clr,
    #[serde(rename = "RF")]
    Rf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lr, ModelKind::Clr, ModelKind::Rf];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::Clr => "CLR",
            ModelKind::Rf => "RF",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LR" => Ok(Self::Lr),
            "CLR" => Ok(Self::Clr),
            "RF" => Ok(Self::Rf),
            _ => Err(Error::Config(format!("unknown propensity model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub low: f64,
    pub high: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { low: 0.05, high: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    pub model: ModelKind,
    pub use_logit_link: bool,
    pub clip: ClipBounds,
    pub rf_trees: usize,
    pub rf_max_depth: Option<usize>,
    pub rf_min_leaf: usize,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Lr,
            use_logit_link: false,
            clip: ClipBounds::default(),
            rf_trees: 100,
            rf_max_depth: None,
            rf_min_leaf: 5,
            cv_folds: 5,
            seed: 0,
        }
    }
}

impl PropensityConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ClipBounds { low, high } = self.clip;
        if !(0.0 < low && low < high && high < 1.0) {
            return Err(Error::Config(format!(
                "clip bounds ({low}, {high}) must satisfy 0 < low < high < 1"
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        if self.model == ModelKind::Rf && self.rf_trees == 0 {
            return Err(Error::Config("rf_trees must be at least 1".into()));
        }
        Ok(())
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.rf_trees,
            max_depth: self.rf_max_depth,
            min_leaf: self.rf_min_leaf,
            max_features: None,
        }
    }

    /// Short human-readable label, e.g. `RF(100)+logit`.
    pub fn label(&self) -> String {
        let mut s = match self.model {
            ModelKind::Rf => format!("RF({})", self.rf_trees),
            m => m.as_str().to_string(),
        };
        if self.use_logit_link {
            s.push_str("+logit");
        }
        s
    }
}

/// A fitted propensity model able to score new samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Logistic(LogisticModel),
    Chunked(Vec<LogisticModel>),
    Forest(Forest),
}

impl FittedModel {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Vec<f64> {
        match self {
            FittedModel::Logistic(m) => m.predict_proba(x),
            FittedModel::Chunked(models) => chunk_average(models, x),
            FittedModel::Forest(f) => f.predict_proba(x),
        }
    }
}

fn chunk_average(models: &[LogisticModel], x: &Array2<f64>) -> Vec<f64> {
    let mut acc = vec![0.0; x.nrows()];
    for m in models {
        for (a, p) in acc.iter_mut().zip(m.predict_proba(x)) {
            *a += p;
        }
    }
    let k = models.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    /// Pre-clip probabilities.
    pub raw: Vec<f64>,
    pub clipped: Vec<f64>,
    /// Clipped probability, or its logit under the logit link.
    pub matching_value: Vec<f64>,
    /// In-sample diagnostics on the link scale.
    pub diagnostics: DiagnosticScores,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Clamps each probability into the clip interval, then applies the logit
/// link if configured.
pub fn clip_and_transform(scores: &[f64], cfg: &PropensityConfig) -> Vec<f64> {
    scores
        .iter()
        .map(|&p| {
            let c = p.clamp(cfg.clip.low, cfg.clip.high);
            if cfg.use_logit_link {
                logit(c)
            } else {
                c
            }
        })
        .collect()
}

/// Pre-clip scores on the scale the pipeline treats as "the propensity":
/// the probability itself, or its logit under the logit link (±∞ at 0 and 1).
pub fn link_scale(scores: &[f64], cfg: &PropensityConfig) -> Vec<f64> {
    if cfg.use_logit_link {
        scores.iter().map(|&p| logit(p)).collect()
    } else {
        scores.to_vec()
    }
}

fn require_arms(t: &[bool]) -> Result<(usize, usize)> {
    let n1 = t.iter().filter(|&&v| v).count();
    let n0 = t.len() - n1;
    if n0 == 0 {
        return Err(Error::SingleArm { arm: 0 });
    }
    if n1 == 0 {
        return Err(Error::SingleArm { arm: 1 });
    }
    Ok((n0, n1))
}

pub(crate) fn fit_lr_model(x: &Array2<f64>, t: &[bool]) -> Result<LogisticModel> {
    require_arms(t)?;
    let targets: Vec<f64> = t.iter().map(|&v| f64::from(u8::from(v))).collect();
    fit_logistic(x, &targets, &balanced_weights(t), &LogisticOptions::default())
}

/// Chunk models for CLR: the larger arm is shuffled and cut into
/// ⌈N_large / N_small⌉ chunks of N_small samples (the last may be smaller);
/// each chunk is fitted together with the whole smaller arm.
pub(crate) fn fit_clr_models(x: &Array2<f64>, t: &[bool], seed: u64) -> Result<Vec<LogisticModel>> {
    let control: Vec<usize> = (0..t.len()).filter(|&i| !t[i]).collect();
    let treated: Vec<usize> = (0..t.len()).filter(|&i| t[i]).collect();
    if control.is_empty() || treated.is_empty() {
        return Err(Error::SingleArm {
            arm: u8::from(!control.is_empty()),
        });
    }
    let arms = Arms::new(control, treated);
    if arms.small.len() < 2 {
        return Err(Error::InsufficientData(
            "CLR needs at least two samples in the smaller arm".into(),
        ));
    }
    let mut large = arms.large.clone();
    large.shuffle(&mut rng_from(seed, &[stream::CHUNKS]));
    large
        .chunks(arms.small.len())
        .map(|chunk| {
            let mut rows: Vec<usize> = chunk.iter().chain(&arms.small).copied().collect();
            rows.sort_unstable();
            let sub_t: Vec<bool> = rows.iter().map(|&r| t[r]).collect();
            fit_lr_model(&x.select(Axis(0), &rows), &sub_t)
        })
        .collect()
}

/// Number and sizes of CLR chunks for the given arm sizes.
pub fn clr_chunk_sizes(n_large: usize, n_small: usize) -> Vec<usize> {
    if n_small == 0 {
        return Vec::new();
    }
    (0..n_large.div_ceil(n_small))
        .map(|c| n_small.min(n_large - c * n_small))
        .collect()
}

/// Fits the configured model on `(x, t)` and returns it with its in-sample
/// probabilities.
pub fn fit_model(x: &Array2<f64>, t: &[bool], cfg: &PropensityConfig) -> Result<(FittedModel, Vec<f64>)> {
    cfg.validate()?;
    require_arms(t)?;
    match cfg.model {
        ModelKind::Lr => {
            let m = fit_lr_model(x, t)?;
            let p = m.predict_proba(x);
            Ok((FittedModel::Logistic(m), p))
        }
        ModelKind::Clr => {
            let models = fit_clr_models(x, t, derive_seed(cfg.seed, &[stream::FIT]))?;
            let p = chunk_average(&models, x);
            Ok((FittedModel::Chunked(models), p))
        }
        ModelKind::Rf => {
            let (forest, p) = fit_forest(x, t, &cfg.forest_params(), derive_seed(cfg.seed, &[stream::FIT]))?;
            Ok((FittedModel::Forest(forest), p))
        }
    }
}

impl PropensityFit {
    /// Clipping, link transform and in-sample diagnostics of raw
    /// probabilities.
    pub fn from_raw(raw: Vec<f64>, treatment: &[bool], cfg: &PropensityConfig) -> Result<Self> {
        let clipped: Vec<f64> = raw.iter().map(|p| p.clamp(cfg.clip.low, cfg.clip.high)).collect();
        let matching_value = clip_and_transform(&raw, cfg);
        let diagnostics = diagnose(&link_scale(&raw, cfg), treatment)?;
        Ok(Self {
            raw,
            clipped,
            matching_value,
            diagnostics,
        })
    }
}

/// Fits a propensity model on the whole design matrix.
pub fn fit_propensity(m: &DesignMatrix, cfg: &PropensityConfig) -> Result<(FittedModel, PropensityFit)> {
    let (model, raw) = fit_model(m.features(), m.treatment(), cfg)?;
    let fit = PropensityFit::from_raw(raw, m.treatment(), cfg)?;
    Ok((model, fit))
}

/// Class-balanced logistic regression.
pub fn fit_lr(m: &DesignMatrix, cfg: &PropensityConfig) -> Result<PropensityFit> {
    fit_propensity(
        m,
        &PropensityConfig {
            model: ModelKind::Lr,
            ..*cfg
        },
    )
    .map(|(_, f)| f)
}

/// Chunked logistic regression.
pub fn fit_clr(m: &DesignMatrix, cfg: &PropensityConfig) -> Result<PropensityFit> {
    fit_propensity(
        m,
        &PropensityConfig {
            model: ModelKind::Clr,
            ..*cfg
        },
    )
    .map(|(_, f)| f)
}

/// Platt-calibrated random forest.
pub fn fit_rf(m: &DesignMatrix, cfg: &PropensityConfig) -> Result<PropensityFit> {
    fit_propensity(
        m,
        &PropensityConfig {
            model: ModelKind::Rf,
            ..*cfg
        },
    )
    .map(|(_, f)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn design(x: Vec<Vec<f64>>, t: Vec<bool>) -> DesignMatrix {
        let names: Vec<String> = (0..x.len()).map(|j| format!("x{j}")).collect();
        let n = t.len();
        DesignMatrix::from_continuous(&names, &x, t, vec![0.0; n]).unwrap()
    }

    #[test]
    fn separable_lr_has_perfect_accuracy() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 - 19.5).collect();
        let t: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
        let fit = fit_lr(&design(vec![x], t), &PropensityConfig::default()).unwrap();
        assert_eq!(fit.diagnostics.accuracy, 2.0);
        assert!(fit.clipped.iter().all(|&p| (0.05..=0.95).contains(&p)));
    }

    #[test]
    fn zero_features_give_one_half() {
        let t: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let fit = fit_lr(&design(vec![vec![0.0; 30]], t), &PropensityConfig::default()).unwrap();
        assert!(fit.raw.iter().all(|p| (p - 0.5).abs() < 1e-9));
    }

    /// Independent balanced-likelihood fit for one feature: coordinate grid
    /// refinement on (b0, b1), no Newton machinery.
    fn grid_fit(x: &[f64], t: &[bool]) -> (f64, f64) {
        let w = balanced_weights(t);
        let loss = |b0: f64, b1: f64| {
            x.iter()
                .zip(t)
                .zip(&w)
                .map(|((&xi, &ti), &wi)| {
                    let z = b0 + b1 * xi;
                    let p = 1.0 / (1.0 + (-z).exp());
                    -wi * if ti { p.ln() } else { (1.0 - p).ln() }
                })
                .sum::<f64>()
        };
        let (mut b0, mut b1, mut step) = (0.0, 0.0, 1.0);
        while step > 1e-7 {
            let mut moved = false;
            for (d0, d1) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                if loss(b0 + d0, b1 + d1) < loss(b0, b1) {
                    b0 += d0;
                    b1 += d1;
                    moved = true;
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        (b0, b1)
    }

    #[test]
    fn balanced_lr_matches_independent_fit_on_imbalanced_arms() {
        let mut rng = rng_from(42, &[]);
        let t: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let x: Vec<f64> = t
            .iter()
            .map(|&ti| rng.sample::<f64, _>(StandardNormal) + if ti { 1.0 } else { 0.0 })
            .collect();
        let fit = fit_lr(&design(vec![x.clone()], t.clone()), &PropensityConfig::default()).unwrap();
        let (b0, b1) = grid_fit(&x, &t);
        for (i, &xi) in x.iter().enumerate() {
            let p = 1.0 / (1.0 + (-(b0 + b1 * xi)).exp());
            assert!((fit.raw[i] - p).abs() < 1e-4, "{} vs {p}", fit.raw[i]);
        }
        // Balanced weights make the two arm means of the scores average to 0.5.
        let arm_mean = |arm: bool| {
            let v: Vec<f64> = fit
                .raw
                .iter()
                .zip(&t)
                .filter(|(_, &ti)| ti == arm)
                .map(|(p, _)| *p)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let balanced_mean = 0.5 * (arm_mean(false) + arm_mean(true));
        assert!(
            (balanced_mean - 0.5).abs() < 1e-5,
            "balanced mean score {balanced_mean}"
        );
    }

    #[test]
    fn clr_chunk_arithmetic() {
        assert_eq!(clr_chunk_sizes(100, 30), vec![30, 30, 30, 10]);
        assert_eq!(clr_chunk_sizes(30, 30), vec![30]);
    }

    #[test]
    fn clr_chunk_count_follows_sizes() {
        let mut rng = rng_from(1, &[]);
        let t: Vec<bool> = (0..130).map(|i| i < 30).collect();
        let x: Vec<f64> = (0..130).map(|_| rng.sample(StandardNormal)).collect();
        let d = design(vec![x], t);
        let (model, _) = fit_propensity(&d, &PropensityConfig::new(ModelKind::Clr)).unwrap();
        let FittedModel::Chunked(models) = model else { panic!() };
        assert_eq!(models.len(), 4);
    }

    #[test]
    fn clr_with_one_chunk_is_lr() {
        let mut rng = rng_from(2, &[]);
        let t: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..60).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let d = design(cols, t);
        let cfg = PropensityConfig::default();
        let lr = fit_lr(&d, &cfg).unwrap();
        let clr = fit_clr(&d, &cfg).unwrap();
        assert_eq!(
            lr.raw.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            clr.raw.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn clr_on_duplicated_arms_is_near_one_half() {
        // The larger arm holds two copies of the smaller one; each chunk is a
        // random half of it, so chunk models are only nearly uninformative.
        let mut rng = rng_from(5, &[]);
        let base: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<f64> = base.iter().chain(&base).chain(&base).copied().collect();
        let t: Vec<bool> = (0..600).map(|i| i < 200).collect();
        let fit = fit_clr(&design(vec![x], t), &PropensityConfig::default()).unwrap();
        assert!(
            fit.raw.iter().all(|p| (p - 0.5).abs() < 0.05),
            "{:?}",
            fit.raw.iter().fold(0.0f64, |m, p| m.max((p - 0.5).abs()))
        );
    }

    #[test]
    fn clr_requires_two_in_small_arm() {
        let t: Vec<bool> = (0..10).map(|i| i == 0).collect();
        let d = design(vec![(0..10).map(f64::from).collect()], t);
        assert!(matches!(
            fit_clr(&d, &PropensityConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn rf_beats_lr_on_xor() {
        let mut rng = rng_from(400, &[]);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut t = Vec::new();
        for _ in 0..400 {
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(-1.0..1.0);
            a.push(u);
            b.push(v);
            t.push((u > 0.0) != (v > 0.0));
        }
        let d = design(vec![a, b], t);
        let cfg = PropensityConfig::default();
        let lr = fit_lr(&d, &cfg).unwrap();
        let rf = fit_rf(&d, &cfg).unwrap();
        assert!(
            rf.diagnostics.accuracy > lr.diagnostics.accuracy,
            "rf {} lr {}",
            rf.diagnostics.accuracy,
            lr.diagnostics.accuracy
        );
    }

    #[test]
    fn clip_and_link() {
        let cfg = PropensityConfig::default();
        assert_eq!(clip_and_transform(&[0.01, 0.5, 0.99], &cfg), vec![0.05, 0.5, 0.95]);
        let logit_cfg = PropensityConfig {
            use_logit_link: true,
            ..cfg
        };
        let v = clip_and_transform(&[0.5, 0.95, 1.0, 0.0], &logit_cfg);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 19f64.ln()).abs() < 1e-12);
        assert!((v[1] - 2.9444).abs() < 1e-4);
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(v[2], v[1]);
    }

    #[test]
    fn config_validation() {
        let mut c = PropensityConfig::default();
        assert!(c.validate().is_ok());
        c.clip = ClipBounds { low: 0.6, high: 0.4 };
        assert!(c.validate().is_err());
        c = PropensityConfig {
            cv_folds: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = PropensityConfig {
            model: ModelKind::Rf,
            rf_trees: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn matching_value_monotone_in_clipped(
            mut p in proptest::collection::vec(0.0f64..=1.0, 2..30),
            link in proptest::bool::ANY,
        ) {
            p.sort_by(f64::total_cmp);
            let cfg = PropensityConfig { use_logit_link: link, ..Default::default() };
            let v = clip_and_transform(&p, &cfg);
            for w in v.windows(2) {
                proptest::prop_assert!(w[0] <= w[1]);
            }
            proptest::prop_assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}
