//! Effect and balance metrics.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::tabular::{CovariateValues, DesignMatrix};

/// Conventional balance threshold: a matching is balanced when its scalar
/// SMD is strictly below this value.
pub const SMD_THRESHOLD: f64 = 0.10;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `mean(y1) - mean(y0)`.
pub fn ate(y0: &[f64], y1: &[f64]) -> Result<f64> {
    if y0.is_empty() || y1.is_empty() {
        return Err(Error::InsufficientData(
            "ATE needs two non-empty outcome vectors".into(),
        ));
    }
    Ok(mean(y1) - mean(y0))
}

/// Cohen's d from per-group count, mean and sum of squared deviations.
pub(crate) fn cohens_d_moments(n0: f64, mean0: f64, ss0: f64, n1: f64, mean1: f64, ss1: f64) -> Result<f64> {
    if n0 < 1.0 || n1 < 1.0 || n0 + n1 < 3.0 {
        return Err(Error::InsufficientData(
            "Cohen's d needs at least three samples across two non-empty groups".into(),
        ));
    }
    let pooled_var = (ss0.max(0.0) + ss1.max(0.0)) / (n0 + n1 - 2.0);
    let diff = mean0 - mean1;
    if pooled_var > 0.0 {
        Ok(diff / pooled_var.sqrt())
    } else if diff == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::InfiniteEffect { mean0, mean1 })
    }
}

/// Cohen's d with pooled (N-1)-denominator standard deviation:
/// `(mean(x0) - mean(x1)) / pooled_sd`.
pub fn cohens_d(x0: &[f64], x1: &[f64]) -> Result<f64> {
    if x0.is_empty() || x1.is_empty() {
        return Err(Error::InsufficientData("Cohen's d needs two non-empty groups".into()));
    }
    let (m0, m1) = (mean(x0), mean(x1));
    let ss = |x: &[f64], m: f64| x.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    cohens_d_moments(x0.len() as f64, m0, ss(x0, m0), x1.len() as f64, m1, ss(x1, m1))
}

/// Cramér's V of the 2×c contingency table given per-level counts of each
/// population. Levels absent from both populations are ignored. No
/// continuity correction.
pub fn cramers_v_counts(counts0: &[usize], counts1: &[usize]) -> f64 {
    debug_assert_eq!(counts0.len(), counts1.len());
    let n0: usize = counts0.iter().sum();
    let n1: usize = counts1.iter().sum();
    let n = (n0 + n1) as f64;
    let observed_levels = counts0.iter().zip(counts1).filter(|(a, b)| **a + **b > 0).count();
    if observed_levels < 2 || n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let mut chi2 = 0.0;
    for (&a, &b) in counts0.iter().zip(counts1) {
        let col = (a + b) as f64;
        if col == 0.0 {
            continue;
        }
        let e0 = n0 as f64 * col / n;
        let e1 = n1 as f64 * col / n;
        chi2 += (a as f64 - e0).powi(2) / e0 + (b as f64 - e1).powi(2) / e1;
    }
    // r = 2 populations, so min(c-1, r-1) = 1 once two levels are observed.
    (chi2 / n).sqrt().min(1.0)
}

/// Cramér's V between two samples of category codes.
pub fn cramers_v(x0: &[u32], x1: &[u32]) -> Result<f64> {
    if x0.is_empty() || x1.is_empty() {
        return Err(Error::InsufficientData("Cramér's V needs two non-empty groups".into()));
    }
    let levels = x0.iter().chain(x1).copied().max().unwrap() as usize + 1;
    let mut c0 = vec![0usize; levels];
    let mut c1 = vec![0usize; levels];
    x0.iter().for_each(|&c| c0[c as usize] += 1);
    x1.iter().for_each(|&c| c1[c as usize] += 1);
    Ok(cramers_v_counts(&c0, &c1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmdAggregate {
    /// Mean of per-feature absolute SMDs.
    #[default]
    Mean,
    /// Largest per-feature absolute SMD.
    Max,
}

impl SmdAggregate {
    pub fn combine(self, values: impl Iterator<Item = f64>) -> f64 {
        let mut n = 0usize;
        let mut acc = 0.0f64;
        for v in values {
            let v = v.abs();
            n += 1;
            acc = match self {
                SmdAggregate::Mean => acc + v,
                SmdAggregate::Max => acc.max(v),
            };
        }
        match (self, n) {
            (_, 0) => 0.0,
            (SmdAggregate::Mean, n) => acc / n as f64,
            (SmdAggregate::Max, _) => acc,
        }
    }
}

impl std::str::FromStr for SmdAggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!("unknown SMD aggregate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmdKind {
    CohensD,
    CramersV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBalance {
    pub feature: String,
    pub smd: f64,
    pub kind: SmdKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceOptions {
    pub threshold: f64,
    pub aggregate: SmdAggregate,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            threshold: SMD_THRESHOLD,
            aggregate: SmdAggregate::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub per_feature: Vec<FeatureBalance>,
    /// Mean of absolute per-feature SMDs.
    pub aggregate: f64,
    pub max_abs: f64,
    /// `aggregate` or `max_abs`, depending on the configured aggregation.
    pub scalar: f64,
    pub valid: bool,
}

/// Per-covariate SMD between two populations sharing a covariate layout.
pub fn feature_smds(a: &DesignMatrix, b: &DesignMatrix) -> Result<Vec<FeatureBalance>> {
    if a.covariates().len() != b.covariates().len() {
        return Err(Error::Validation("populations do not share a schema".into()));
    }
    a.covariates()
        .iter()
        .zip(b.covariates())
        .map(|(ca, cb)| {
            let (smd, kind) = match (&ca.values, &cb.values) {
                (CovariateValues::Continuous(x), CovariateValues::Continuous(y)) => (cohens_d(x, y)?, SmdKind::CohensD),
                (CovariateValues::Categorical { codes: x, .. }, CovariateValues::Categorical { codes: y, .. }) => {
                    (cramers_v(x, y)?, SmdKind::CramersV)
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "covariate `{}` has different kinds in the two populations",
                        ca.name
                    )))
                }
            };
            Ok(FeatureBalance {
                feature: ca.name.clone(),
                smd,
                kind,
            })
        })
        .collect()
}

pub fn balance_report_with(a: &DesignMatrix, b: &DesignMatrix, opts: BalanceOptions) -> Result<BalanceReport> {
    let per_feature = feature_smds(a, b)?;
    let aggregate = SmdAggregate::Mean.combine(per_feature.iter().map(|f| f.smd));
    let max_abs = SmdAggregate::Max.combine(per_feature.iter().map(|f| f.smd));
    let scalar = match opts.aggregate {
        SmdAggregate::Mean => aggregate,
        SmdAggregate::Max => max_abs,
    };
    Ok(BalanceReport {
        per_feature,
        aggregate,
        max_abs,
        scalar,
        valid: scalar < opts.threshold,
    })
}

/// Balance of two (matched) populations on their raw covariates, with the
/// default mean aggregation and 0.10 threshold.
pub fn balance_report(a: &DesignMatrix, b: &DesignMatrix) -> Result<BalanceReport> {
    balance_report_with(a, b, BalanceOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallTau {
    pub tau: f64,
    pub p_value: f64,
}

/// Kendall's τ-b with a two-sided p-value from the tie-corrected normal
/// approximation. Inputs must be finite.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<KendallTau> {
    let n = a.len();
    if n != b.len() || n < 2 {
        return Err(Error::InsufficientData(
            "kendall tau needs two rankings of equal length >= 2".into(),
        ));
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]).expect("finite input") as i64;
            let db = b[i].partial_cmp(&b[j]).expect("finite input") as i64;
            s += da * db;
        }
    }
    let ties_a = tie_groups(a);
    let ties_b = tie_groups(b);
    let pairs = (n * (n - 1) / 2) as f64;
    let tied = |g: &[usize]| g.iter().map(|&t| (t * (t - 1) / 2) as f64).sum::<f64>();
    let (ta, tb) = (tied(&ties_a), tied(&ties_b));
    if ta == pairs || tb == pairs {
        return Err(Error::UndefinedTau);
    }
    let s = s as f64;
    let tau = s / ((pairs - ta) * (pairs - tb)).sqrt();

    let nf = n as f64;
    let sum = |g: &[usize], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = |t: f64| t * (t - 1.0) * (2.0 * t + 5.0);
    let v1 = |t: f64| t * (t - 1.0);
    let v2 = |t: f64| t * (t - 1.0) * (t - 2.0);
    let mut var = (v0(nf) - sum(&ties_a, &v0) - sum(&ties_b, &v0)) / 18.0
        + sum(&ties_a, &v1) * sum(&ties_b, &v1) / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var += sum(&ties_a, &v2) * sum(&ties_b, &v2) / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let p_value = if var > 0.0 {
        erfc((s / var.sqrt()).abs() / std::f64::consts::SQRT_2).min(1.0)
    } else {
        1.0
    };
    Ok(KendallTau {
        tau: tau.clamp(-1.0, 1.0),
        p_value,
    })
}

fn tie_groups(x: &[f64]) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|p, q| p.partial_cmp(q).expect("finite input"));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            groups.push(j - i);
        }
        i = j;
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ate_examples() {
        assert_eq!(ate(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(ate(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 3.0);
        let y0: Vec<f64> = (0..10).map(|i| if i < 2 { 1.0 } else { 0.0 }).collect();
        let y1: Vec<f64> = (0..10).map(|i| if i < 5 { 1.0 } else { 0.0 }).collect();
        assert_abs_diff_eq!(ate(&y0, &y1).unwrap(), 0.3, epsilon = 1e-12);
        assert!(ate(&[], &[1.0]).is_err());
    }

    #[test]
    fn cohens_d_examples() {
        assert_eq!(cohens_d(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 0.0);
        let d = cohens_d(&[0.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(d, -1.0 / (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d, -1.7320508075688772, epsilon = 1e-12);
        assert_eq!(cohens_d(&[5.0, 5.0], &[5.0, 5.0]).unwrap(), 0.0);
        assert!(matches!(
            cohens_d(&[5.0, 5.0], &[6.0, 6.0]),
            Err(Error::InfiniteEffect { .. })
        ));
        assert!(cohens_d(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn cramers_v_examples() {
        assert_eq!(cramers_v(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cramers_v_counts(&[10, 0], &[0, 10]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cramers_v_counts(&[30, 10], &[10, 30]), 0.5, epsilon = 1e-12);
        assert_eq!(cramers_v(&[0, 0], &[0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn kendall_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(kendall_tau(&a, &a).unwrap().tau, 1.0);
        assert_abs_diff_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap().tau, -1.0);
        assert_abs_diff_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().tau,
            1.0 / 3.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedTau)
        ));
    }

    #[test]
    fn kendall_p_value_matches_untied_normal_approximation() {
        // n = 5, S = 10: var = 5*4*15/18, z = 10 / sqrt(var)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = kendall_tau(&a, &a).unwrap();
        let z = 10.0 / (5.0f64 * 4.0 * 15.0 / 18.0).sqrt();
        assert_abs_diff_eq!(r.p_value, erfc(z / std::f64::consts::SQRT_2), epsilon = 1e-14);
        assert!(r.p_value > 0.0 && r.p_value < 0.05);
    }

    #[test]
    fn aggregate_mean_and_max() {
        let v = [0.1, -0.3, 0.2];
        assert_abs_diff_eq!(SmdAggregate::Mean.combine(v.into_iter()), 0.2, epsilon = 1e-12);
        assert_eq!(SmdAggregate::Max.combine(v.into_iter()), 0.3);
        assert_eq!(SmdAggregate::Mean.combine(std::iter::empty()), 0.0);
    }

    fn matrix(x: Vec<f64>, c: Vec<u32>) -> DesignMatrix {
        let n = x.len();
        let mut m = DesignMatrix::from_continuous(&["x".into()], &[x], vec![false; n], vec![0.0; n]).unwrap();
        if !c.is_empty() {
            let covs = vec![
                m.covariates()[0].clone(),
                crate::tabular::Covariate {
                    name: "c".into(),
                    values: CovariateValues::Categorical {
                        codes: c,
                        levels: vec!["a".into(), "b".into()],
                    },
                    features: 0..1,
                    scaling: None,
                },
            ];
            m = DesignMatrix::from_parts(
                m.features().clone(),
                m.feature_names().to_vec(),
                m.treatment().to_vec(),
                m.outcome().to_vec(),
                covs,
            )
            .unwrap();
        }
        m
    }

    #[test]
    fn balance_report_semantics() {
        let a = matrix(vec![0.0, 1.0, 2.0], vec![0, 1, 1]);
        let r = balance_report(&a, &a).unwrap();
        assert_eq!(r.aggregate, 0.0);
        assert!(r.valid);

        let r = balance_report(
            &matrix(vec![0.0, 0.0, 1.0, 1.0], vec![]),
            &matrix(vec![1.0, 1.0, 2.0, 2.0], vec![]),
        )
        .unwrap();
        assert_abs_diff_eq!(r.aggregate, 1.7320508075688772, epsilon = 1e-12);
        assert_eq!(r.per_feature[0].kind, SmdKind::CohensD);
        assert!(!r.valid);
    }

    #[test]
    fn table_threshold_semantics() {
        assert!(!(0.118 < SMD_THRESHOLD));
        assert!(0.052 < SMD_THRESHOLD);
        assert!(!(0.10 < SMD_THRESHOLD));
    }

    proptest! {
        #[test]
        fn cohens_d_antisymmetric_and_affine_invariant(
            x0 in proptest::collection::vec(-10.0f64..10.0, 2..20),
            x1 in proptest::collection::vec(-10.0f64..10.0, 2..20),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let d = cohens_d(&x0, &x1);
            prop_assume!(d.is_ok());
            let d = d.unwrap();
            prop_assert!((d + cohens_d(&x1, &x0).unwrap()).abs() < 1e-9);
            let t = |x: &[f64]| x.iter().map(|v| v * scale + shift).collect::<Vec<_>>();
            let d2 = cohens_d(&t(&x0), &t(&x1)).unwrap();
            prop_assert!((d - d2).abs() < 1e-7 * (1.0 + d.abs()));
        }

        #[test]
        fn cramers_v_bounded_and_relabel_invariant(
            x0 in proptest::collection::vec(0u32..4, 1..30),
            x1 in proptest::collection::vec(0u32..4, 1..30),
        ) {
            let v = cramers_v(&x0, &x1).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let relabel = |x: &[u32]| x.iter().map(|c| 3 - c).collect::<Vec<_>>();
            let v2 = cramers_v(&relabel(&x0), &relabel(&x1)).unwrap();
            prop_assert!((v - v2).abs() < 1e-12);
        }

        #[test]
        fn ate_is_linear(
            y0 in proptest::collection::vec(-10.0f64..10.0, 1..20),
            y1 in proptest::collection::vec(-10.0f64..10.0, 1..20),
            c in -5.0f64..5.0,
        ) {
            prop_assert_eq!(ate(&y0, &y0).unwrap(), 0.0);
            let shifted: Vec<f64> = y1.iter().map(|v| v + c).collect();
            prop_assert!((ate(&y0, &shifted).unwrap() - ate(&y0, &y1).unwrap() - c).abs() < 1e-9);
        }

        #[test]
        fn kendall_invariant_under_monotone_maps(
            pairs in proptest::collection::vec((-5i32..5, -5i32..5), 3..15),
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let r = kendall_tau(&a, &b);
            prop_assume!(r.is_ok());
            let r = r.unwrap();
            let ea: Vec<f64> = a.iter().map(|v| v.exp()).collect();
            let cb: Vec<f64> = b.iter().map(|v| v * v * v - 7.0).collect();
            let r2 = kendall_tau(&ea, &cb).unwrap();
            prop_assert!((r.tau - r2.tau).abs() < 1e-12);
            prop_assert!((r.p_value - r2.p_value).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r.tau));
        }
    }
}
