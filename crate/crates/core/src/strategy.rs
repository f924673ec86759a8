//! Pipeline selection strategies over evaluated candidates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub pipeline_id: String,
    pub smd: f64,
    pub a2a: f64,
    pub ate: f64,
    pub smd_valid: bool,
    pub overlap_valid: bool,
}

impl CandidateEvaluation {
    /// Builds an evaluation whose SMD validity follows `smd < threshold`.
    pub fn new(
        pipeline_id: impl Into<String>,
        smd: f64,
        a2a: f64,
        ate: f64,
        overlap_valid: bool,
        threshold: f64,
    ) -> Self {
        Self {
            pipeline_id: pipeline_id.into(),
            smd,
            a2a,
            ate,
            smd_valid: smd < threshold,
            overlap_valid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SmdThreshold,
    MinSmd,
    MinA2a,
    SmdXA2a,
    Pareto,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SmdThreshold,
        Strategy::MinSmd,
        Strategy::MinA2a,
        Strategy::SmdXA2a,
        Strategy::Pareto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SmdThreshold => "smd_threshold",
            Strategy::MinSmd => "min_smd",
            Strategy::MinA2a => "min_a2a",
            Strategy::SmdXA2a => "smd_x_a2a",
            Strategy::Pareto => "pareto",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    /// Selected ids in lexicographic order.
    pub selected: Vec<String>,
    /// ATE of each selected candidate, aligned with `selected`.
    pub ates: Vec<f64>,
    /// max − min of `ates`; 0 for fewer than two selections.
    pub ate_range: f64,
    pub warning: Option<String>,
}

impl SelectionResult {
    fn from_members(strategy: Strategy, mut members: Vec<&CandidateEvaluation>) -> Self {
        members.sort_by(|a, b| a.pipeline_id.cmp(&b.pipeline_id));
        let ates: Vec<f64> = members.iter().map(|c| c.ate).collect();
        let warning = members.is_empty().then(|| "no candidate selected".to_string());
        Self {
            strategy,
            selected: members.iter().map(|c| c.pipeline_id.clone()).collect(),
            ate_range: ate_range(&ates),
            ates,
            warning,
        }
    }

    fn empty(strategy: Strategy, reason: String) -> Self {
        Self {
            strategy,
            selected: Vec::new(),
            ates: Vec::new(),
            ate_range: 0.0,
            warning: Some(reason),
        }
    }
}

pub fn ate_range(ates: &[f64]) -> f64 {
    if ates.len() < 2 {
        return 0.0;
    }
    let max = ates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ates.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self { eps: 0.15, min_pts: 2 }
    }
}

fn valid(cands: &[CandidateEvaluation]) -> Vec<&CandidateEvaluation> {
    cands.iter().filter(|c| c.smd_valid).collect()
}

fn argmin_by<'a>(
    cands: &[&'a CandidateEvaluation],
    key: impl Fn(&CandidateEvaluation) -> f64,
) -> Option<&'a CandidateEvaluation> {
    cands.iter().copied().min_by(|a, b| {
        key(a)
            .total_cmp(&key(b))
            .then_with(|| a.pipeline_id.cmp(&b.pipeline_id))
    })
}

/// Every candidate with SMD below the threshold.
pub fn select_smd_threshold(cands: &[CandidateEvaluation]) -> SelectionResult {
    SelectionResult::from_members(Strategy::SmdThreshold, valid(cands))
}

pub fn select_min_smd(cands: &[CandidateEvaluation]) -> Result<SelectionResult> {
    let best = argmin_by(&valid(cands), |c| c.smd).ok_or(Error::NoSelection)?;
    Ok(SelectionResult::from_members(Strategy::MinSmd, vec![best]))
}

pub fn select_min_a2a(cands: &[CandidateEvaluation]) -> Result<SelectionResult> {
    let best = argmin_by(&valid(cands), |c| c.a2a).ok_or(Error::NoSelection)?;
    Ok(SelectionResult::from_members(Strategy::MinA2a, vec![best]))
}

/// DBSCAN over points min-max normalized per axis (a constant axis maps to
/// 0). Neighbourhoods include the point itself and are closed at `eps`.
/// Returns a cluster id per point, −1 for noise; ids follow input order.
pub fn dbscan(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<i32> {
    let norm = |sel: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        let lo = points.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        points
            .iter()
            .map(|p| if span > 0.0 { (sel(p) - lo) / span } else { 0.0 })
            .collect()
    };
    let xs = norm(|p| p.0);
    let ys = norm(|p| p.1);
    let n = points.len();
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| (xs[i] - xs[j]).hypot(ys[i] - ys[j]) <= eps)
            .collect()
    };

    const UNSEEN: i32 = -2;
    let mut label = vec![UNSEEN; n];
    let mut cluster = 0;
    for i in 0..n {
        if label[i] != UNSEEN {
            continue;
        }
        let seeds = neighbours(i);
        if seeds.len() < min_pts {
            label[i] = -1;
            continue;
        }
        label[i] = cluster;
        let mut queue: VecDeque<usize> = seeds.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if label[j] == -1 {
                label[j] = cluster;
            }
            if label[j] != UNSEEN {
                continue;
            }
            label[j] = cluster;
            let nj = neighbours(j);
            if nj.len() >= min_pts {
                queue.extend(nj);
            }
        }
        cluster += 1;
    }
    label
}

/// The DBSCAN cluster, in (SMD, A2A) space, of the best-A2A valid candidate;
/// that candidate alone if it is noise.
pub fn select_smd_x_a2a(cands: &[CandidateEvaluation], params: StrategyParams) -> Result<SelectionResult> {
    let v = valid(cands);
    let best = argmin_by(&v, |c| c.a2a).ok_or(Error::NoSelection)?;
    let points: Vec<(f64, f64)> = v.iter().map(|c| (c.smd, c.a2a)).collect();
    let labels = dbscan(&points, params.eps, params.min_pts);
    let at = v
        .iter()
        .position(|c| std::ptr::eq(*c, best))
        .expect("best is among the valid candidates");
    let members = if labels[at] < 0 {
        vec![best]
    } else {
        v.iter()
            .zip(&labels)
            .filter(|(_, &l)| l == labels[at])
            .map(|(c, _)| *c)
            .collect()
    };
    Ok(SelectionResult::from_members(Strategy::SmdXA2a, members))
}

fn dominates(a: &CandidateEvaluation, b: &CandidateEvaluation) -> bool {
    a.smd <= b.smd && a.a2a <= b.a2a && (a.smd < b.smd || a.a2a < b.a2a)
}

/// Valid candidates not dominated in (SMD, A2A) by another valid candidate.
pub fn select_pareto(cands: &[CandidateEvaluation]) -> Result<SelectionResult> {
    let v = valid(cands);
    if v.is_empty() {
        return Err(Error::NoSelection);
    }
    let front = v
        .iter()
        .filter(|c| !v.iter().any(|o| dominates(o, c)))
        .copied()
        .collect();
    Ok(SelectionResult::from_members(Strategy::Pareto, front))
}

/// Runs one strategy; a missing valid candidate yields an empty selection
/// carrying a warning.
pub fn apply(strategy: Strategy, cands: &[CandidateEvaluation], params: StrategyParams) -> SelectionResult {
    let r = match strategy {
        Strategy::SmdThreshold => Ok(select_smd_threshold(cands)),
        Strategy::MinSmd => select_min_smd(cands),
        Strategy::MinA2a => select_min_a2a(cands),
        Strategy::SmdXA2a => select_smd_x_a2a(cands, params),
        Strategy::Pareto => select_pareto(cands),
    };
    r.unwrap_or_else(|e| SelectionResult::empty(strategy, e.to_string()))
}

/// All five strategies over the overlap-valid candidates.
pub fn apply_all(cands: &[CandidateEvaluation], params: StrategyParams) -> Vec<SelectionResult> {
    let eligible: Vec<CandidateEvaluation> = cands.iter().filter(|c| c.overlap_valid).cloned().collect();
    Strategy::ALL.iter().map(|&s| apply(s, &eligible, params)).collect()
}
