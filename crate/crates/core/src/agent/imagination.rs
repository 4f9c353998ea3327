use super::Model;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{chacha, standard_normal};

/// `N` decoded scenes plus their pixel-wise mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    /// `[N, H, W]` Bernoulli means.
    pub samples: Tensor,
    /// `[N, d]`
    pub latents: Tensor,
    /// `[H, W]`
    pub mean: Tensor,
    /// `[H, W]`, `(1/N)·Σ (sample − mean)²`.
    pub variance: Tensor,
}

impl HypothesisSet {
    pub fn from_samples(samples: Tensor, latents: Tensor) -> Result<Self> {
        if samples.rank() != 3 || latents.rank() != 2 || samples.shape()[0] != latents.shape()[0] {
            return Err(Error::shape(
                "hypothesis_set",
                format!("samples {:?} and latents {:?}", samples.shape(), latents.shape()),
            ));
        }
        let (n, h, w) = (samples.shape()[0], samples.shape()[1], samples.shape()[2]);
        if n == 0 {
            return Err(Error::contract("a hypothesis set needs at least one sample"));
        }
        let p = h * w;
        let mut mean = vec![0.0; p];
        for k in 0..n {
            for (m, v) in mean.iter_mut().zip(&samples.data()[k * p..(k + 1) * p]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for k in 0..n {
            for ((s, v), m) in var.iter_mut().zip(&samples.data()[k * p..(k + 1) * p]).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        Ok(HypothesisSet {
            samples,
            latents,
            mean: Tensor::new([h, w], mean)?,
            variance: Tensor::new([h, w], var)?,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let p = self.mean.len();
        &self.samples.data()[k * p..(k + 1) * p]
    }

    pub fn max_variance(&self) -> f64 {
        self.variance.data().iter().copied().fold(0.0, f64::max)
    }

    /// Elementwise mean of the latents, `[d]`.
    pub fn mean_latent(&self) -> Vec<f64> {
        let (n, d) = (self.latents.shape()[0], self.latents.shape()[1]);
        (0..d)
            .map(|j| (0..n).map(|k| self.latents.data()[k * d + j]).sum::<f64>() / n as f64)
            .collect()
    }
}

/// Prediction phase: `z_k ~ N(0, I)`, `z_K = unwarp(z_k, h)`, `σ(decode(z_K))`.
pub fn imagine(model: &Model, h: &Tensor, n: usize, seed: u64) -> Result<HypothesisSet> {
    if n == 0 {
        return Err(Error::contract("imagine needs N ≥ 1"));
    }
    let c = model.config.feature_dim;
    if h.len() != c {
        return Err(Error::contract(format!("features have {} values, expected {c}", h.len())));
    }
    let d = model.config.latent_dim;
    let mut rng = chacha(seed);
    let zk = Tensor::new([n, d], standard_normal(&mut rng, n * d))?;
    let cond = h.clone().reshape([1, c])?;
    let (z_big, _) = model.vae.unwarp.transform_batch(&model.store, &zk, Some(&cond))?;
    let logits = model.vae.decode(&model.store, &z_big)?;
    let probs = logits.map(|l| 1.0 / (1.0 + (-l).exp()));
    let samples = probs.reshape([n, model.config.height, model.config.width])?;
    HypothesisSet::from_samples(samples, z_big)
}
