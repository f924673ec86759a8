//! Cross-validated model selection on the composite diagnostic score.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{diagnose, fit_model, link_scale, DiagnosticScores, PropensityConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream};
use crate::tabular::DesignMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub scores: DiagnosticScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSelection {
    pub config: PropensityConfig,
    pub folds: Vec<FoldDiagnostics>,
    /// Fold mean; `None` when any fold failed to fit.
    pub mean: Option<DiagnosticScores>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub best_index: usize,
    pub best: PropensityConfig,
    pub candidates: Vec<CandidateSelection>,
}

impl ModelSelection {
    pub fn best_scores(&self) -> DiagnosticScores {
        self.candidates[self.best_index]
            .mean
            .expect("the selected candidate has fold scores")
    }
}

/// Fold id per sample: each arm is shuffled and dealt round-robin into `k`
/// folds. Both arms need at least `k` samples.
pub fn stratified_folds(treatment: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng_from(seed, &[stream::CV_FOLDS]);
    let mut fold = vec![0; treatment.len()];
    for arm in [false, true] {
        let mut idx: Vec<usize> = (0..treatment.len()).filter(|&i| treatment[i] == arm).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "{k}-fold stratification needs {k} samples per arm, arm {} has {}",
                u8::from(arm),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

fn fold_scores(
    m: &DesignMatrix,
    cfg: &PropensityConfig,
    folds: &[usize],
    fold: usize,
    seed: u64,
) -> Result<DiagnosticScores> {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..m.n_rows()).partition(|&i| folds[i] == fold);
    let x = m.features();
    let t = m.treatment();
    let train_t: Vec<bool> = train.iter().map(|&i| t[i]).collect();
    let test_t: Vec<bool> = test.iter().map(|&i| t[i]).collect();
    let fit_cfg = PropensityConfig { seed, ..*cfg };
    let (model, _) = fit_model(&x.select(Axis(0), &train), &train_t, &fit_cfg)?;
    let pred = model.predict_proba(&x.select(Axis(0), &test));
    diagnose(&link_scale(&pred, cfg), &test_t)
}

/// Scores every candidate by stratified k-fold CV (held-out diagnostics,
/// averaged over folds) and returns the argmax of the mean composite; ties go
/// to the earlier candidate. Folds depend only on each candidate's seed, so
/// candidates sharing a seed are compared on identical splits.
pub fn select_model(m: &DesignMatrix, candidates: &[PropensityConfig]) -> Result<ModelSelection> {
    if candidates.is_empty() {
        return Err(Error::NoModel("no candidate propensity models".into()));
    }
    for c in candidates {
        c.validate()?;
    }
    let evaluated: Vec<CandidateSelection> = candidates
        .par_iter()
        .enumerate()
        .map(|(ci, cfg)| {
            let folds = match stratified_folds(m.treatment(), cfg.cv_folds, cfg.seed) {
                Ok(f) => f,
                Err(e) => {
                    return CandidateSelection {
                        config: *cfg,
                        folds: Vec::new(),
                        mean: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            let results: Vec<Result<DiagnosticScores>> = (0..cfg.cv_folds)
                .into_par_iter()
                .map(|f| {
                    let seed = derive_seed(cfg.seed, &[stream::CV_FOLDS, ci as u64, f as u64]);
                    fold_scores(m, cfg, &folds, f, seed)
                })
                .collect();
            let mut records = Vec::with_capacity(results.len());
            let mut error = None;
            for (fold, r) in results.into_iter().enumerate() {
                match r {
                    Ok(scores) => records.push(FoldDiagnostics { fold, scores }),
                    Err(e) => {
                        error.get_or_insert_with(|| format!("fold {fold}: {e}"));
                    }
                }
            }
            let mean = if error.is_none() {
                DiagnosticScores::mean(&records.iter().map(|r| r.scores).collect::<Vec<_>>())
            } else {
                None
            };
            CandidateSelection {
                config: *cfg,
                folds: records,
                mean,
                error,
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, c) in evaluated.iter().enumerate() {
        if let Some(s) = c.mean {
            if best.is_none_or(|(_, b)| s.composite > b) {
                best = Some((i, s.composite));
            }
        }
    }
    let Some((best_index, _)) = best else {
        let reasons: Vec<String> = evaluated.iter().filter_map(|c| c.error.clone()).collect();
        return Err(Error::NoModel(reasons.join("; ")));
    };
    Ok(ModelSelection {
        best_index,
        best: candidates[best_index],
        candidates: evaluated,
    })
}
