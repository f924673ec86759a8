//! 1:1 matching without replacement of the smaller population into the
//! larger one, on scalar matching values (probability or logit scale).

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    Nearest,
    Optimal,
}

impl Matcher {
    pub fn as_str(self) -> &'static str {
        match self {
            Matcher::Nearest => "nearest",
            Matcher::Optimal => "optimal",
        }
    }
}

impl std::str::FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "optimal" => Ok(Self::Optimal),
            other => Err(Error::Config(format!("unknown matcher `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(index into the larger population, index into the smaller one)`,
    /// ordered by the smaller-population index.
    pub pairs: Vec<(usize, usize)>,
    pub method: Matcher,
    pub total_distance: f64,
}

impl MatchResult {
    fn new(mut pairs: Vec<(usize, usize)>, method: Matcher, large: &[f64], small: &[f64]) -> Self {
        pairs.sort_unstable_by_key(|p| p.1);
        let total_distance = pairs.iter().map(|&(l, s)| (large[l] - small[s]).abs()).sum();
        Self {
            pairs,
            method,
            total_distance,
        }
    }
}

fn check_sizes(large: &[f64], small: &[f64]) -> Result<()> {
    if small.is_empty() || large.len() < small.len() {
        return Err(Error::Validation(format!(
            "cannot match {} samples into {} without replacement",
            small.len(),
            large.len()
        )));
    }
    if large.iter().chain(small).any(|v| !v.is_finite()) {
        return Err(Error::Validation("matching values must be finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Key(f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Greedy nearest-neighbour matching. Smaller-population samples are taken in
/// descending matching value (lower index first among equal values); each
/// takes the closest still-unmatched larger-population sample, ties going to
/// the lower index.
pub fn match_nearest(values_large: &[f64], values_small: &[f64]) -> Result<MatchResult> {
    check_sizes(values_large, values_small)?;
    let mut pool: BTreeSet<(Key, usize)> = values_large.iter().enumerate().map(|(i, &v)| (Key(v), i)).collect();

    let mut order: Vec<usize> = (0..values_small.len()).collect();
    order.sort_by(|&a, &b| values_small[b].total_cmp(&values_small[a]).then(a.cmp(&b)));

    let mut pairs = Vec::with_capacity(values_small.len());
    for s in order {
        let v = values_small[s];
        let right = pool.range((Key(v), 0)..).next().copied();
        let left = pool
            .range(..(Key(v), 0))
            .next_back()
            .and_then(|&(lv, _)| pool.range((lv, 0)..).next().copied());
        let pick = match (left, right) {
            (Some(l), Some(r)) => {
                let dl = v - l.0 .0;
                let dr = r.0 .0 - v;
                match dl.total_cmp(&dr) {
                    Ordering::Less => l,
                    Ordering::Greater => r,
                    Ordering::Equal => {
                        if l.1 < r.1 {
                            l
                        } else {
                            r
                        }
                    }
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("pool never runs dry"),
        };
        pool.remove(&pick);
        pairs.push((pick.1, s));
    }
    Ok(MatchResult::new(pairs, Matcher::Nearest, values_large, values_small))
}

/// Minimum total absolute-difference matching.
///
/// With |a − b| costs on the real line some optimal assignment never crosses:
/// after sorting both sides, the i-th smallest small value is matched to the
/// i-th element of an increasing subsequence of the large values. A banded
/// dynamic program over that structure finds the exact optimum in
/// O(n_small · (n_large − n_small + 1)).
pub fn match_optimal(values_large: &[f64], values_small: &[f64]) -> Result<MatchResult> {
    check_sizes(values_large, values_small)?;
    let sort_idx = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        idx
    };
    let ls = sort_idx(values_large);
    let ss = sort_idx(values_small);
    let n = ss.len();
    let slack = ls.len() - n;
    let width = slack + 1;

    // cur[k]: cost of matching the first i+1 small values within the first
    // i+k+1 large values; take[i][k] records whether large i+k was used.
    let mut prev = vec![0.0f64; width];
    let mut take = vec![false; n * width];
    for i in 0..n {
        let s = values_small[ss[i]];
        let mut cur = vec![f64::INFINITY; width];
        for k in 0..width {
            let matched = prev[k] + (values_large[ls[i + k]] - s).abs();
            let skipped = if k > 0 { cur[k - 1] } else { f64::INFINITY };
            if matched <= skipped {
                cur[k] = matched;
                take[i * width + k] = true;
            } else {
                cur[k] = skipped;
            }
        }
        prev = cur;
    }

    let mut pairs = Vec::with_capacity(n);
    let mut k = slack;
    for i in (0..n).rev() {
        while !take[i * width + k] {
            k -= 1;
        }
        pairs.push((ls[i + k], ss[i]));
    }
    Ok(MatchResult::new(pairs, Matcher::Optimal, values_large, values_small))
}

pub fn match_values(method: Matcher, values_large: &[f64], values_small: &[f64]) -> Result<MatchResult> {
    match method {
        Matcher::Nearest => match_nearest(values_large, values_small),
        Matcher::Optimal => match_optimal(values_large, values_small),
    }
}

/// The two arms of a task ordered by size. On equal sizes the control arm is
/// treated as the larger one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arms {
    pub large: Vec<usize>,
    pub small: Vec<usize>,
    pub large_is_treated: bool,
}

impl Arms {
    pub fn new(control: Vec<usize>, treated: Vec<usize>) -> Self {
        if treated.len() > control.len() {
            Self {
                large: treated,
                small: control,
                large_is_treated: true,
            }
        } else {
            Self {
                large: control,
                small: treated,
                large_is_treated: false,
            }
        }
    }

    pub fn from_matrix(m: &DesignMatrix) -> Result<Self> {
        let (x0, x1) = crate::tabular::split_by_treatment(m)?;
        Ok(Self::new(x0, x1))
    }
}

/// Matched sub-populations `(from larger arm, from smaller arm)` in pair order.
pub fn extract_matched(d: &DesignMatrix, arms: &Arms, r: &MatchResult) -> Result<(DesignMatrix, DesignMatrix)> {
    if r.pairs.is_empty() {
        return Err(Error::Internal("empty match".into()));
    }
    let mut large_rows = Vec::with_capacity(r.pairs.len());
    let mut small_rows = Vec::with_capacity(r.pairs.len());
    for &(l, s) in &r.pairs {
        let (Some(&lr), Some(&sr)) = (arms.large.get(l), arms.small.get(s)) else {
            return Err(Error::Internal(format!("pair ({l}, {s}) out of range")));
        };
        if lr >= d.n_rows() || sr >= d.n_rows() {
            return Err(Error::Internal(format!("row ({lr}, {sr}) out of range")));
        }
        large_rows.push(lr);
        small_rows.push(sr);
    }
    Ok((d.subset(&large_rows), d.subset(&small_rows)))
}
