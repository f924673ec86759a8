//! Synthetic matching tasks with known per-sample treatment effects and a
//! controllable number of confounders.
//!
//! Features are i.i.d. standard normal. The first `k` features drive both
//! selection and outcome; of the rest, the first half drives selection only
//! and the remainder drives the outcome only. With selection features `S`,
//! `T ~ Bernoulli(σ(a + c · Σ_{j∈S} x_j / √|S|))`, so the logit is `N(a, c²)`.
//! Outcome features `o_0, o_1, …` feed five standard-normal slots: slot `i`
//! is `Σ_{j ≡ i mod 5} x_{o_j} / √count`, with features reused cyclically when
//! there are fewer than five. Then
//! `b(x) = max(z_0 + z_1, z_2, 0) + max(z_3 + z_4, 0)`,
//! `τ(x) = effect_scale · (z_0 + softplus(z_1))` and
//! `Y = b(x) + T τ(x) + N(0, noise_sd²)`.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propensity::logistic::sigmoid;
use crate::rng::{rng_from, stream};
use crate::tabular::{Cell, ColumnKind, ColumnSchema, Dataset, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_confounders: usize,
    pub effect_scale: f64,
    pub noise_sd: f64,
    /// Standard deviation `c` of the selection logit.
    pub selection_strength: f64,
    /// Intercept of the selection logit; negative values make the treated
    /// arm the minority.
    pub selection_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 3000,
            n_features: 10,
            n_confounders: 0,
            effect_scale: 1.0,
            noise_sd: 1.0,
            selection_strength: 1.0,
            selection_offset: -1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(Error::Config("n_features must be at least 1".into()));
        }
        if self.n_confounders > self.n_features {
            return Err(Error::Config(format!(
                "n_confounders = {} exceeds n_features = {}",
                self.n_confounders, self.n_features
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("n_samples must be at least 2".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be finite and non-negative".into()));
        }
        if !self.effect_scale.is_finite() || !self.selection_strength.is_finite() || !self.selection_offset.is_finite()
        {
            return Err(Error::Config(
                "effect_scale and selection parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn roles(&self) -> FeatureRoles {
        let k = self.n_confounders;
        let rest = self.n_features - k;
        let n_sel = rest / 2;
        FeatureRoles {
            confounders: (0..k).collect(),
            selection_only: (k..k + n_sel).collect(),
            outcome_only: (k + n_sel..self.n_features).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRoles {
    pub confounders: Vec<usize>,
    pub selection_only: Vec<usize>,
    pub outcome_only: Vec<usize>,
}

impl FeatureRoles {
    pub fn selection(&self) -> Vec<usize> {
        self.confounders.iter().chain(&self.selection_only).copied().collect()
    }

    pub fn outcome(&self) -> Vec<usize> {
        self.confounders.iter().chain(&self.outcome_only).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub config: SynthConfig,
    pub roles: FeatureRoles,
    /// Weight of each selection feature in the selection logit.
    pub selection_weight: f64,
    pub dataset: Dataset,
    pub true_propensity: Vec<f64>,
    pub true_ite: Vec<f64>,
    pub true_ate: f64,
}

/// Everything about a task except its data, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub config: SynthConfig,
    pub roles: FeatureRoles,
    pub selection_weight: f64,
    pub true_ate: f64,
}

impl SynthTask {
    pub fn summary(&self) -> SynthSummary {
        SynthSummary {
            config: self.config,
            roles: self.roles.clone(),
            selection_weight: self.selection_weight,
            true_ate: self.true_ate,
        }
    }
}

pub fn feature_name(j: usize) -> String {
    format!("x{j}")
}

pub const TREATMENT_COLUMN: &str = "treatment";
pub const OUTCOME_COLUMN: &str = "outcome";

pub fn schema(n_features: usize) -> Schema {
    let mut cols: Vec<ColumnSchema> = (0..n_features)
        .map(|j| ColumnSchema::new(feature_name(j), ColumnKind::Continuous))
        .collect();
    cols.push(ColumnSchema::new(TREATMENT_COLUMN, ColumnKind::Treatment));
    cols.push(ColumnSchema::new(OUTCOME_COLUMN, ColumnKind::Outcome));
    Schema::new(cols).expect("synthetic schema is well formed")
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Baseline outcome and effect of one sample given its outcome features.
pub fn outcome_terms(x: &[f64], outcome: &[usize], effect_scale: f64) -> (f64, f64) {
    let mut z = [0.0; 5];
    if outcome.len() < 5 {
        for (i, slot) in z.iter_mut().enumerate() {
            *slot = x[outcome[i % outcome.len()]];
        }
    } else {
        let mut count = [0usize; 5];
        for (j, &o) in outcome.iter().enumerate() {
            z[j % 5] += x[o];
            count[j % 5] += 1;
        }
        for (slot, c) in z.iter_mut().zip(count) {
            *slot /= (c as f64).sqrt();
        }
    }
    let f = |i: usize| z[i];
    let baseline = (f(0) + f(1)).max(f(2)).max(0.0) + (f(3) + f(4)).max(0.0);
    let tau = effect_scale * (f(0) + softplus(f(1)));
    (baseline, tau)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthTask> {
    cfg.validate()?;
    let roles = cfg.roles();
    let selection = roles.selection();
    let outcome = roles.outcome();
    let selection_weight = if selection.is_empty() {
        0.0
    } else {
        cfg.selection_strength / (selection.len() as f64).sqrt()
    };
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng_from(cfg.seed, &[stream::SYNTH]);

    let d = cfg.n_features;
    let mut rows = Vec::with_capacity(cfg.n_samples);
    let mut true_propensity = Vec::with_capacity(cfg.n_samples);
    let mut true_ite = Vec::with_capacity(cfg.n_samples);
    let mut x = vec![0.0; d];
    for _ in 0..cfg.n_samples {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let p = sigmoid(cfg.selection_offset + selection_weight * selection.iter().map(|&j| x[j]).sum::<f64>());
        let t = rng.random::<f64>() < p;
        let (baseline, tau) = outcome_terms(&x, &outcome, cfg.effect_scale);
        let y = baseline + if t { tau } else { 0.0 } + noise.sample(&mut rng);
        let mut row: Vec<Cell> = x.iter().map(|&v| Cell::Number(v)).collect();
        row.push(Cell::Number(f64::from(u8::from(t))));
        row.push(Cell::Number(y));
        rows.push(row);
        true_propensity.push(p);
        true_ite.push(tau);
    }
    let true_ate = true_ite.iter().sum::<f64>() / true_ite.len() as f64;
    Ok(SynthTask {
        config: *cfg,
        roles,
        selection_weight,
        dataset: Dataset::new(schema(d), rows)?,
        true_propensity,
        true_ite,
        true_ate,
    })
}

/// Squared error of an ATE estimate against the task's true ATE.
pub fn oracle_error(task: &SynthTask, estimated_ate: f64) -> f64 {
    (estimated_ate - task.true_ate).powi(2)
}

/// Writes `data.csv` and `schema.json` into `dir` (created if needed).
pub fn export(task: &SynthTask, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    task.dataset.write_csv(std::fs::File::create(dir.join("data.csv"))?)?;
    std::fs::write(dir.join("schema.json"), task.dataset.schema().to_json_string() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ate;
    use crate::tabular::{encode, load_csv};

    fn small(k: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_samples: 500,
            n_confounders: k,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn null_effect() {
        let t = generate(&SynthConfig {
            effect_scale: 0.0,
            ..small(3, 1)
        })
        .unwrap();
        assert_eq!(t.true_ate, 0.0);
        assert!(t.true_ite.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn roles_partition_features() {
        for k in 0..=10 {
            let r = small(k, 0).roles();
            let mut all: Vec<usize> = r
                .confounders
                .iter()
                .chain(&r.selection_only)
                .chain(&r.outcome_only)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
            assert_eq!(r.confounders.len(), k);
            assert!(r.outcome_only.len() >= r.selection_only.len());
        }
        let r = small(0, 0).roles();
        assert!(r.selection().iter().all(|j| !r.outcome().contains(j)));
        assert_eq!(small(3, 0).roles().selection_only, vec![3, 4, 5]);
    }

    #[test]
    fn every_outcome_feature_moves_the_effect() {
        let outcome: Vec<usize> = (0..8).collect();
        let x = [0.3, -0.2, 0.1, 0.5, -0.4, 0.2, 0.6, -0.1];
        let (_, tau) = outcome_terms(&x, &outcome, 1.0);
        for j in [0, 1, 5, 6] {
            let mut y = x;
            y[j] += 1.0;
            assert_ne!(outcome_terms(&y, &outcome, 1.0).1, tau, "feature {j}");
        }
        // Slots 0 and 1 pool features {0, 5} and {1, 6}.
        let z0 = (0.3 + 0.2) / 2f64.sqrt();
        let z1 = (-0.2 + 0.6) / 2f64.sqrt();
        assert!((tau - (z0 + (1.0 + z1.exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small(4, 9)).unwrap();
        let b = generate(&small(4, 9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.dataset, generate(&small(4, 10)).unwrap().dataset);
    }

    #[test]
    fn true_ate_is_mean_ite() {
        let t = generate(&small(5, 2)).unwrap();
        let m = t.true_ite.iter().sum::<f64>() / t.true_ite.len() as f64;
        assert_eq!(t.true_ate, m);
    }

    #[test]
    fn propensities_rarely_clip() {
        for k in [0, 5, 10] {
            let t = generate(&SynthConfig {
                n_confounders: k,
                ..Default::default()
            })
            .unwrap();
            let clipped = t
                .true_propensity
                .iter()
                .filter(|&&p| !(0.05..=0.95).contains(&p))
                .count();
            assert!((clipped as f64) < 0.2 * 3000.0, "k={k}: {clipped}");
        }
    }

    #[test]
    fn unconfounded_unadjusted_ate_is_consistent() {
        let t = generate(&SynthConfig {
            n_samples: 100_000,
            n_confounders: 0,
            noise_sd: 0.0,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let tr = t.dataset.treatment();
        let y = t.dataset.outcome();
        let y0: Vec<f64> = y.iter().zip(&tr).filter(|(_, &t)| !t).map(|(v, _)| *v).collect();
        let y1: Vec<f64> = y.iter().zip(&tr).filter(|(_, &t)| t).map(|(v, _)| *v).collect();
        let naive = ate(&y0, &y1).unwrap();
        assert!((naive - t.true_ate).abs() < 0.05, "{naive} vs {}", t.true_ate);
    }

    #[test]
    fn oracle_error_examples() {
        let mut t = generate(&small(0, 0)).unwrap();
        t.true_ate = 0.5;
        assert!((oracle_error(&t, 0.3) - 0.04).abs() < 1e-15);
        assert_eq!(oracle_error(&t, 0.5), 0.0);
        let errs: Vec<f64> = [0.3, 0.6, 1.0].iter().map(|&e| oracle_error(&t, e)).collect();
        let mean = errs.iter().sum::<f64>() / 3.0;
        assert!((mean - (0.04 + 0.01 + 0.25) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn export_roundtrips_through_csv() {
        let t = generate(&SynthConfig {
            n_samples: 50,
            ..small(2, 4)
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        export(&t, dir.path()).unwrap();
        let schema = Schema::from_json_file(dir.path().join("schema.json")).unwrap();
        let back = load_csv(dir.path().join("data.csv"), &schema).unwrap();
        assert_eq!(back.treatment(), t.dataset.treatment());
        let a = encode(&back).unwrap();
        let b = encode(&t.dataset).unwrap();
        assert_eq!(a.features(), b.features());
    }
}
