//! The generator against an independent Monte-Carlo simulation of the same
//! model with a different random stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use matchforge::metrics::ate;
use matchforge::synth::{generate, SynthConfig};

const MC_SAMPLES: usize = 1_000_000;
const Z: f64 = 4.0;

struct Moments {
    n: f64,
    sum: f64,
    sq: f64,
}

impl Moments {
    fn new() -> Self {
        Self {
            n: 0.0,
            sum: 0.0,
            sq: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn var(&self) -> f64 {
        (self.sq - self.n * self.mean().powi(2)) / (self.n - 1.0)
    }
}

fn softplus(z: f64) -> f64 {
    (1.0 + z.exp()).ln()
}

/// d = 10, k = 5: selection uses x0..x6, the outcome x0..x4 and x7..x9.
/// Outcome slots pool (x0, x7), (x1, x8), (x2, x9), x3, x4.
fn simulate(offset: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let (mut y0, mut y1, mut tau) = (Moments::new(), Moments::new(), Moments::new());
    let mut x = [0.0f64; 10];
    for _ in 0..MC_SAMPLES {
        for v in &mut x {
            *v = rng.sample(StandardNormal);
        }
        let logit = offset + x[..7].iter().sum::<f64>() / 7f64.sqrt();
        let t = rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp());
        let r2 = 2f64.sqrt();
        let z = [(x[0] + x[7]) / r2, (x[1] + x[8]) / r2, (x[2] + x[9]) / r2, x[3], x[4]];
        let b = (z[0] + z[1]).max(z[2]).max(0.0) + (z[3] + z[4]).max(0.0);
        let effect = z[0] + softplus(z[1]);
        let noise: f64 = rng.sample(StandardNormal);
        tau.push(effect);
        if t {
            y1.push(b + effect + noise);
        } else {
            y0.push(b + noise);
        }
    }
    (y1.mean() - y0.mean(), tau.mean())
}

#[test]
fn confounded_task_matches_monte_carlo_oracle() {
    let cfg = SynthConfig {
        n_samples: 3000,
        n_features: 10,
        n_confounders: 5,
        effect_scale: 1.0,
        seed: 0,
        ..Default::default()
    };
    let (mc_naive, mc_ate) = simulate(cfg.selection_offset);
    assert!((mc_naive - mc_ate).abs() > 0.5, "oracle bias {mc_naive} vs {mc_ate}");

    let task = generate(&cfg).unwrap();
    let t = task.dataset.treatment();
    let y = task.dataset.outcome();
    let (mut m0, mut m1) = (Moments::new(), Moments::new());
    let (mut y0, mut y1) = (Vec::new(), Vec::new());
    for (v, &tr) in y.iter().zip(&t) {
        if tr {
            m1.push(*v);
            y1.push(*v);
        } else {
            m0.push(*v);
            y0.push(*v);
        }
    }
    let naive = ate(&y0, &y1).unwrap();
    let se = (m0.var() / m0.n + m1.var() / m1.n).sqrt();
    assert!(
        (naive - mc_naive).abs() < Z * se,
        "naive {naive} vs oracle {mc_naive} (se {se})"
    );
    assert!(
        (naive - task.true_ate).abs() > Z * se,
        "no bias: naive {naive}, true {}",
        task.true_ate
    );

    let ite_sd = {
        let mut m = Moments::new();
        task.true_ite.iter().for_each(|&v| m.push(v));
        m.var().sqrt()
    };
    let ate_se = ite_sd / (task.true_ite.len() as f64).sqrt();
    assert!(
        (task.true_ate - mc_ate).abs() < Z * ate_se,
        "true ATE {} vs oracle {mc_ate}",
        task.true_ate
    );
}

#[test]
fn unconfounded_naive_effect_is_unbiased() {
    let task = generate(&SynthConfig {
        n_samples: 20_000,
        n_confounders: 0,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let t = task.dataset.treatment();
    let y = task.dataset.outcome();
    let split = |arm: bool| {
        y.iter()
            .zip(&t)
            .filter(|(_, &x)| x == arm)
            .map(|(v, _)| *v)
            .collect::<Vec<_>>()
    };
    let naive = ate(&split(false), &split(true)).unwrap();
    assert!((naive - task.true_ate).abs() < 0.1, "{naive} vs {}", task.true_ate);
}
