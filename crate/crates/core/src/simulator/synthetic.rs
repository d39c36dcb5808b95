//! Direct generators of treatment datasets with a known effect function of
//! one covariate, for estimator checks that do not need whole sessions.
//!
//! The covariate x ~ U(-1, 1) is stored as `stud_ability`. Two nuisance
//! covariates (`resp_time`, `quest_num`) carry no signal. Treatment is a
//! fair coin.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::causal::{ContextVector, TreatmentDataset, TreatmentSample};
use crate::rng::stream_rng;

fn draw_context<R: Rng>(rng: &mut R) -> (f64, ContextVector) {
    let x: f64 = rng.random_range(-1.0..1.0);
    let ctx = ContextVector::default()
        .with("stud_ability", x)
        .with("resp_time", rng.random_range(2.0..60.0))
        .with("quest_num", rng.random_range(1..=20) as f64);
    (x, ctx)
}

fn dataset(outcome: &str, binary: bool, samples: Vec<TreatmentSample>) -> TreatmentDataset {
    TreatmentDataset {
        question_id: "synthetic".into(),
        treat_action: "treat".into(),
        control_action: "control".into(),
        outcome_name: outcome.to_string(),
        binary,
        samples,
    }
}

/// y = 0.5 x + w tau(x) + N(0, noise_sd^2).
pub fn continuous(tau: impl Fn(f64) -> f64, n: usize, noise_sd: f64, seed: u64) -> TreatmentDataset {
    let mut rng = stream_rng(seed, 0);
    let noise = Normal::new(0.0, noise_sd).expect("noise sd must be finite and non-negative");
    let samples = (0..n)
        .map(|_| {
            let (x, ctx) = draw_context(&mut rng);
            let w = rng.random_bool(0.5) as u8;
            let y = 0.5 * x + w as f64 * tau(x) + noise.sample(&mut rng);
            TreatmentSample { x: ctx, w, y }
        })
        .collect();
    dataset("synthetic_continuous", false, samples)
}

/// y ~ Bernoulli(base(x) + w tau(x)), probabilities clamped to [0.01, 0.99].
pub fn binary(base: impl Fn(f64) -> f64, tau: impl Fn(f64) -> f64, n: usize, seed: u64) -> TreatmentDataset {
    let mut rng = stream_rng(seed, 0);
    let samples = (0..n)
        .map(|_| {
            let (x, ctx) = draw_context(&mut rng);
            let w = rng.random_bool(0.5) as u8;
            let p = (base(x) + w as f64 * tau(x)).clamp(0.01, 0.99);
            TreatmentSample { x: ctx, w, y: rng.random_bool(p) as u8 as f64 }
        })
        .collect();
    dataset("synthetic_binary", true, samples)
}

/// Binary outcomes with exactly `per_arm` samples in each arm.
pub fn binary_balanced(
    base: impl Fn(f64) -> f64,
    tau: impl Fn(f64) -> f64,
    per_arm: usize,
    seed: u64,
) -> TreatmentDataset {
    let mut rng = stream_rng(seed, 0);
    let samples = (0..2 * per_arm)
        .map(|i| {
            let (x, ctx) = draw_context(&mut rng);
            let w = (i % 2) as u8;
            let p = (base(x) + w as f64 * tau(x)).clamp(0.01, 0.99);
            TreatmentSample { x: ctx, w, y: rng.random_bool(p) as u8 as f64 }
        })
        .collect();
    dataset("synthetic_binary", true, samples)
}

/// Value of the best constant arm and of the oracle rule "treat iff
/// tau(x) > 0" when x ~ U(-1, 1), by midpoint quadrature.
pub fn oracle_values(tau: impl Fn(f64) -> f64) -> (f64, f64) {
    let m = 100_000;
    let xs = (0..m).map(|i| -1.0 + (i as f64 + 0.5) * 2.0 / m as f64);
    let (mut treat_all, mut oracle) = (0.0, 0.0);
    for x in xs {
        let t = tau(x);
        treat_all += t;
        oracle += t.max(0.0);
    }
    (treat_all.max(0.0) / m as f64, oracle / m as f64)
}
