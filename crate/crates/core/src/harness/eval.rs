use rayon::prelude::*;

use crate::agent::{episode_rollout, HypothesisSet, Model, Policy, Scene};
use crate::datasets::NUM_CLASSES;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

use super::Probe;

const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub policies: Vec<Policy>,
    pub timesteps: usize,
    pub samples: usize,
    pub seed: u64,
    pub repeats: usize,
}

/// One CSV row: averages over scenes and repeats for a policy at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub policy: Policy,
    pub t: usize,
    pub bce: f64,
    pub max_var: f64,
    pub cat_entropy: Option<f64>,
    pub probe_acc: Option<f64>,
}

/// Metrics of a single hypothesis set against its scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub bce: f64,
    pub max_var: f64,
    pub entropy: Option<f64>,
    pub correct: Option<bool>,
}

/// Mean over hypotheses of the per-pixel binary cross-entropy to `truth`,
/// with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn mean_bce(hypotheses: &HypothesisSet, truth: &Scene) -> Result<f64> {
    let x = truth.pixels.data();
    if hypotheses.mean.len() != x.len() {
        return Err(Error::contract("hypotheses and scene differ in size"));
    }
    let n = hypotheses.len();
    let mut total = 0.0;
    for k in 0..n {
        let s: f64 = hypotheses
            .sample(k)
            .iter()
            .zip(x)
            .map(|(&p, &x)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
            })
            .sum();
        total += s / x.len() as f64;
    }
    Ok(total / n as f64)
}

/// Entropy (nats) of the empirical distribution of `classes`.
pub fn category_entropy(classes: &[usize]) -> f64 {
    let mut counts = [0usize; NUM_CLASSES];
    for &c in classes {
        counts[c.min(NUM_CLASSES - 1)] += 1;
    }
    let n = classes.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn step_metrics(hypotheses: &HypothesisSet, truth: &Scene, probe: Option<&Probe>) -> Result<StepMetrics> {
    let bce = mean_bce(hypotheses, truth)?;
    let max_var = hypotheses.max_variance();
    let (entropy, correct) = match probe {
        None => (None, None),
        Some(p) => {
            let classes = p.predict(&hypotheses.latents)?;
            let mean = Tensor::new([1, hypotheses.latents.shape()[1]], hypotheses.mean_latent())?;
            let guess = p.predict(&mean)?[0];
            let correct = truth.label.map(|l| guess == l as usize);
            (Some(category_entropy(&classes)), correct)
        }
    };
    Ok(StepMetrics {
        bce,
        max_var,
        entropy,
        correct,
    })
}

/// Roll out every scene `repeats` times per policy and average per step.
/// Both policies see the same seeds. Scenes are processed in parallel;
/// averages are reduced in scene order.
pub fn evaluate(model: &Model, probe: Option<&Probe>, scenes: &[Scene], options: &EvalOptions) -> Result<Vec<MetricsRow>> {
    if scenes.is_empty() || options.repeats == 0 || options.timesteps == 0 {
        return Err(Error::contract("evaluation needs scenes, repeats and timesteps"));
    }
    let t_max = options.timesteps;
    let mut rows = Vec::with_capacity(options.policies.len() * t_max);
    for &policy in &options.policies {
        let jobs: Vec<(usize, usize)> = (0..scenes.len()).flat_map(|i| (0..options.repeats).map(move |r| (i, r))).collect();
        let per_job = jobs
            .par_iter()
            .map(|&(i, r)| {
                let seed = derive_seed(options.seed, &[r as u64, i as u64]);
                let steps = episode_rollout(model, &scenes[i], t_max, policy, options.samples, seed)?;
                steps
                    .iter()
                    .map(|s| step_metrics(&s.hypotheses, &scenes[i], probe))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_job.len() as f64;
        for t in 0..t_max {
            let bce = per_job.iter().map(|m| m[t].bce).sum::<f64>() / n;
            let max_var = per_job.iter().map(|m| m[t].max_var).sum::<f64>() / n;
            let cat_entropy = probe.map(|_| per_job.iter().map(|m| m[t].entropy.unwrap_or(0.0)).sum::<f64>() / n);
            let labelled: Vec<bool> = per_job.iter().filter_map(|m| m[t].correct).collect();
            let probe_acc = (probe.is_some() && !labelled.is_empty())
                .then(|| labelled.iter().filter(|&&c| c).count() as f64 / labelled.len() as f64);
            rows.push(MetricsRow {
                policy,
                t: t + 1,
                bce,
                max_var,
                cat_entropy,
                probe_acc,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_extremes() {
        assert_eq!(category_entropy(&[3; 20]), 0.0);
        let uniform: Vec<usize> = (0..100).map(|i| i % 10).collect();
        assert!((category_entropy(&uniform) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_hypotheses() {
        let truth = Scene::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], Some(1)).unwrap();
        let samples = Tensor::new([2, 2, 2], [truth.pixels.data(), truth.pixels.data()].concat()).unwrap();
        let hs = HypothesisSet::from_samples(samples, Tensor::zeros([2, 3])).unwrap();
        assert!(mean_bce(&hs, &truth).unwrap() < 1e-6);
        assert_eq!(hs.max_variance(), 0.0);
    }
}
