//! Propensity diagnostics: class-recall accuracy, extreme-value ratio and the
//! stratified overlap coefficient, combined into the model-selection score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores outside this closed interval count as extreme.
pub const EXTREME_BOUNDS: (f64, f64) = (0.05, 0.95);

/// A propensity model is valid when its overlap reaches this value.
pub const OVERLAP_VALIDITY: f64 = 0.5;

/// Stratum edges: bin i covers `[EDGES[i-1], EDGES[i])`, the last bin is
/// closed at 0.95.
const EDGES: [f64; 10] = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticScores {
    pub accuracy: f64,
    pub extremes_ratio: f64,
    pub overlap: f64,
    pub composite: f64,
    pub valid: bool,
}

impl DiagnosticScores {
    pub fn new(accuracy: f64, extremes_ratio: f64, overlap: f64) -> Self {
        Self {
            accuracy,
            extremes_ratio,
            overlap,
            composite: accuracy + (1.0 - extremes_ratio) + overlap,
            valid: overlap >= OVERLAP_VALIDITY,
        }
    }

    /// Component-wise mean (the composite is linear, so it is the mean
    /// composite as well).
    pub fn mean(scores: &[DiagnosticScores]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let avg = |f: fn(&DiagnosticScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Some(Self::new(
            avg(|s| s.accuracy),
            avg(|s| s.extremes_ratio),
            avg(|s| s.overlap),
        ))
    }
}

/// Sum of the two class recalls at threshold 0.5 (range `[0, 2]`).
pub fn accuracy_score(scores: &[f64], treatment: &[bool]) -> Result<f64> {
    if scores.len() != treatment.len() {
        return Err(Error::Validation("scores and treatment differ in length".into()));
    }
    let (mut n0, mut n1, mut hit0, mut hit1) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in scores.iter().zip(treatment) {
        if t {
            n1 += 1;
            hit1 += usize::from(s >= 0.5);
        } else {
            n0 += 1;
            hit0 += usize::from(s < 0.5);
        }
    }
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleArm { arm: u8::from(n0 != 0) });
    }
    Ok(hit0 as f64 / n0 as f64 + hit1 as f64 / n1 as f64)
}

/// Fraction of scores outside `[0.05, 0.95]`.
pub fn extremes_ratio(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let (lo, hi) = EXTREME_BOUNDS;
    scores.iter().filter(|&&s| !(lo..=hi).contains(&s)).count() as f64 / scores.len() as f64
}

fn stratum(s: f64) -> Option<usize> {
    if !(EDGES[0]..=EDGES[9]).contains(&s) {
        return None;
    }
    Some((1..9).rev().find(|&i| s >= EDGES[i]).unwrap_or(0))
}

/// Normalized histogram over the nine 0.1-wide strata centred on 0.1..0.9.
pub fn strata_histogram(scores: &[f64]) -> [f64; 9] {
    let mut h = [0.0; 9];
    if scores.is_empty() {
        return h;
    }
    for &s in scores {
        if let Some(i) = stratum(s) {
            h[i] += 1.0;
        }
    }
    let n = scores.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Σᵢ min(NHᵢ(X0), NHᵢ(X1)). Scores outside `[0.05, 0.95]` fall in no stratum.
pub fn overlap_coefficient(scores0: &[f64], scores1: &[f64]) -> Result<f64> {
    if scores0.is_empty() || scores1.is_empty() {
        return Err(Error::InsufficientData("overlap needs two non-empty score sets".into()));
    }
    let h0 = strata_histogram(scores0);
    let h1 = strata_histogram(scores1);
    Ok(h0.iter().zip(&h1).map(|(a, b)| a.min(*b)).sum::<f64>().min(1.0))
}

/// All diagnostics of one set of scores against the treatment labels.
pub fn diagnose(scores: &[f64], treatment: &[bool]) -> Result<DiagnosticScores> {
    let accuracy = accuracy_score(scores, treatment)?;
    let (s1, s0): (Vec<f64>, Vec<f64>) = {
        let mut s0 = Vec::new();
        let mut s1 = Vec::new();
        for (&s, &t) in scores.iter().zip(treatment) {
            if t {
                s1.push(s)
            } else {
                s0.push(s)
            }
        }
        (s1, s0)
    };
    let overlap = overlap_coefficient(&s0, &s1)?;
    Ok(DiagnosticScores::new(accuracy, extremes_ratio(scores), overlap))
}
