//! Unconditional encoder/decoder with the warp/unwarp flow pair and the
//! per-timestep training objective.
//!
//! Posterior path: `x → q(z₀|x) → warp(·, h_t) → z_k → unwarp(·, h_t) → z_K → D`.
//! Prior path: `z_k' ~ N(0, I) → unwarp(·, h_t) → z_K' → D`, scored only on the
//! observed pixels.

mod likelihood;

pub use likelihood::{
    bernoulli_loglik, bernoulli_loglik_vars, gaussian_logpdf, gaussian_logpdf_vars, standard_normal_logpdf,
    standard_normal_logpdf_vars,
};

use rand::Rng;

use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flows::{BnafConfig, BnafInit, ConditionalBnaf};
use crate::nn::Mlp;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub pixels: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Width of `h_t`, the conditioning input of both flows.
    pub conditioning_dim: usize,
    pub flow_multiplier: usize,
    pub flow_layers: usize,
}

/// Factorized Gaussian `N(μ, diag(exp(log_variance)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiag {
    pub mean: Tensor,
    pub log_variance: Tensor,
}

/// A batch of factorized Gaussians on the tape, each `[batch, d]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_variance: Var,
}

/// Which objective terms may move the recurrent extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientRouting {
    /// Every term differentiates through `h_t`; gradients are exact for the total.
    Full,
    /// `h_t` is treated as a constant inside the unconditional terms (t1, t2), so
    /// the extractor learns only from t3, t4 and t5.
    #[default]
    Split,
}

/// Per-sample objective terms on the tape, each `[batch]`.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub t1_recon_full: Var,
    pub t2_kl_unconditional: Var,
    pub t3_kl_conditional_posterior: Var,
    pub t4_masked_recon: Var,
    pub t5_kl_conditional_prior: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub t1_recon_full: f64,
    pub t2_kl_unconditional: f64,
    pub t3_kl_conditional_posterior: f64,
    pub t4_masked_recon: f64,
    pub t5_kl_conditional_prior: f64,
    pub total: f64,
}

impl ObjectiveTerms {
    /// Batch means of the per-sample terms.
    pub fn from_tape(tape: &Tape, vars: &ObjectiveVars) -> Self {
        let mean = |v: Var| {
            let t = tape.value(v);
            t.sum() / t.len() as f64
        };
        ObjectiveTerms {
            t1_recon_full: mean(vars.t1_recon_full),
            t2_kl_unconditional: mean(vars.t2_kl_unconditional),
            t3_kl_conditional_posterior: mean(vars.t3_kl_conditional_posterior),
            t4_masked_recon: mean(vars.t4_masked_recon),
            t5_kl_conditional_prior: mean(vars.t5_kl_conditional_prior),
            total: mean(vars.total),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.t1_recon_full,
            self.t2_kl_unconditional,
            self.t3_kl_conditional_posterior,
            self.t4_masked_recon,
            self.t5_kl_conditional_prior,
        ]
    }
}

/// `total pixels / observed pixels` for one mask row.
pub fn eta(mask_row: &[f64]) -> Result<f64> {
    let observed = mask_row.iter().filter(|&&m| m > 0.0).count();
    if observed == 0 {
        return Err(Error::contract("mask has no observed pixels; η is undefined"));
    }
    Ok(mask_row.len() as f64 / observed as f64)
}

/// Map a tape failure inside one term to a named non-finite error.
fn term<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain { .. } => Error::NonFinite { term: name },
        other => other,
    })
}

#[derive(Debug, Clone)]
pub struct SceneVae {
    pub config: VaeConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub warp: ConditionalBnaf,
    pub unwarp: ConditionalBnaf,
}

impl SceneVae {
    pub fn new(store: &mut ParamStore, config: VaeConfig, flow_init: BnafInit, rng: &mut impl Rng) -> Result<Self> {
        if config.pixels == 0 || config.latent_dim == 0 {
            return Err(Error::contract("VAE needs pixels and a latent dimension"));
        }
        let d = config.latent_dim;
        let mut enc = vec![config.pixels];
        enc.extend(&config.encoder_hidden);
        enc.push(2 * d);
        let mut dec = vec![d];
        dec.extend(&config.decoder_hidden);
        dec.push(config.pixels);
        let encoder = Mlp::new(store, "encoder", &enc, rng)?;
        let decoder = Mlp::new(store, "decoder", &dec, rng)?;
        let flow_cfg = BnafConfig {
            latent_dim: d,
            hidden_multiplier: config.flow_multiplier,
            num_layers: config.flow_layers,
            conditioning_dim: config.conditioning_dim,
        };
        let warp = ConditionalBnaf::new(store, "warp", flow_cfg, flow_init, rng)?;
        let unwarp = ConditionalBnaf::new(store, "unwarp", flow_cfg, flow_init, rng)?;
        Ok(SceneVae {
            config,
            encoder,
            decoder,
            warp,
            unwarp,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn decoder_params(&self) -> Vec<ParamId> {
        self.decoder.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Force `q(z₀|x) = N(0, I)` for every input by zeroing the output layer.
    pub fn force_standard_normal_encoder(&self, store: &mut ParamStore) {
        if let Some(last) = self.encoder.layers.last() {
            last.zero(store);
        }
    }

    fn check_pixels(&self, tape: &Tape, scene: Var) -> Result<usize> {
        let s = tape.shape(scene);
        if s.len() != 2 || s[1] != self.config.pixels {
            return Err(Error::contract(format!(
                "scene batch {s:?} does not match {} pixels",
                self.config.pixels
            )));
        }
        Ok(s[0])
    }

    /// `scene: [batch, pixels]` to `q(z₀|x)`.
    pub fn encode_vars(&self, tape: &mut Tape, store: &ParamStore, scene: Var) -> Result<GaussianVars> {
        self.check_pixels(tape, scene)?;
        let d = self.config.latent_dim;
        let out = self.encoder.forward(tape, store, scene)?;
        Ok(GaussianVars {
            mean: tape.slice(out, 1, 0, d)?,
            log_variance: tape.slice(out, 1, d, d)?,
        })
    }

    /// `z: [batch, d]` to Bernoulli logits `[batch, pixels]`.
    pub fn decode_vars(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        self.decoder.forward(tape, store, z)
    }

    /// Encode one flattened scene.
    pub fn encode(&self, store: &ParamStore, scene: &Tensor) -> Result<GaussianDiag> {
        if scene.len() != self.config.pixels {
            return Err(Error::contract(format!(
                "scene has {} values, model expects {}",
                scene.len(),
                self.config.pixels
            )));
        }
        let mut tape = Tape::new();
        let x = tape.input(scene.clone().reshape([1, self.config.pixels])?);
        let q = self.encode_vars(&mut tape, store, x)?;
        let d = self.config.latent_dim;
        Ok(GaussianDiag {
            mean: tape.value(q.mean).clone().reshape([d])?,
            log_variance: tape.value(q.log_variance).clone().reshape([d])?,
        })
    }

    /// Decode latents `[batch, d]` to logits `[batch, pixels]`.
    pub fn decode(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let logits = self.decode_vars(&mut tape, store, zv)?;
        Ok(tape.value(logits).clone())
    }

    /// Five-term objective for a batch at one timestep.
    ///
    /// `q` is the encoding of `scene` (shared across timesteps), `h` the
    /// recurrent features `[batch, c]`, `mask` the union of observed pixels
    /// `[batch, pixels]`, and the two noises `[batch, d]` standard normal.
    #[allow(clippy::too_many_arguments)]
    pub fn timestep_terms(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q: GaussianVars,
        scene: &Tensor,
        h: Var,
        mask: &Tensor,
        noise_posterior: &Tensor,
        noise_prior: &Tensor,
        routing: GradientRouting,
    ) -> Result<ObjectiveVars> {
        let batch = tape.shape(q.mean)[0];
        let d = self.config.latent_dim;
        let p = self.config.pixels;
        for (name, t, cols) in [
            ("scene", scene, p),
            ("mask", mask, p),
            ("posterior noise", noise_posterior, d),
            ("prior noise", noise_prior, d),
        ] {
            if t.shape() != [batch, cols] {
                return Err(Error::shape("timestep_objective", format!("{name} {:?}, expected [{batch}, {cols}]", t.shape())));
            }
        }
        let etas = (0..batch).map(|b| eta(mask.row(b))).collect::<Result<Vec<_>>>()?;
        let etas = Tensor::new([batch], etas)?;

        // Posterior path.
        let eps = tape.input(noise_posterior.clone());
        let z0 = term("t1", reparameterize_vars(tape, q, eps))?;
        let log_q0 = term("t2", gaussian_logpdf_vars(tape, z0, q))?;
        let h_uncond = match routing {
            GradientRouting::Full => h,
            GradientRouting::Split => tape.detach(h),
        };
        let warp = term("t2", self.warp.forward(tape, store, z0, Some(h_uncond)))?;
        let unwarp = term("t2", self.unwarp.forward(tape, store, warp.output, Some(h_uncond)))?;

        let t1 = term("t1", {
            let logits = self.decode_vars(tape, store, unwarp.output)?;
            bernoulli_loglik_vars(tape, scene, logits, None)
        })?;

        let t2 = term("t2", (|| {
            let prior = standard_normal_logpdf_vars(tape, unwarp.output)?;
            let a = tape.sub(log_q0, warp.log_det)?;
            let b = tape.sub(a, unwarp.log_det)?;
            tape.sub(b, prior)
        })())?;

        let t3 = term("t3", (|| {
            let warp_c = match routing {
                GradientRouting::Full => warp,
                GradientRouting::Split => self.warp.forward(tape, store, z0, Some(h))?,
            };
            let prior = standard_normal_logpdf_vars(tape, warp_c.output)?;
            let a = tape.sub(log_q0, warp_c.log_det)?;
            tape.sub(a, prior)
        })())?;

        // Prior path.
        let zk_prior = tape.input(noise_prior.clone());
        let unwarp_prior = term("t4", self.unwarp.forward(tape, store, zk_prior, Some(h)))?;
        let t4 = term("t4", (|| {
            let logits = self.decode_vars(tape, store, unwarp_prior.output)?;
            let ll = bernoulli_loglik_vars(tape, scene, logits, Some(mask))?;
            tape.mask_mul(ll, &etas)
        })())?;

        let t5 = term("t5", (|| {
            let base = standard_normal_logpdf_vars(tape, zk_prior)?;
            let target = standard_normal_logpdf_vars(tape, unwarp_prior.output)?;
            let a = tape.sub(base, unwarp_prior.log_det)?;
            tape.sub(a, target)
        })())?;

        let total = term("total", (|| {
            let a = tape.sub(t1, t2)?;
            let b = tape.sub(a, t3)?;
            let c = tape.add(b, t4)?;
            tape.sub(c, t5)
        })())?;

        Ok(ObjectiveVars {
            t1_recon_full: t1,
            t2_kl_unconditional: t2,
            t3_kl_conditional_posterior: t3,
            t4_masked_recon: t4,
            t5_kl_conditional_prior: t5,
            total,
        })
    }

    /// Single-scene objective on plain tensors.
    #[allow(clippy::too_many_arguments)]
    pub fn timestep_objective(
        &self,
        store: &ParamStore,
        scene: &Tensor,
        h: &Tensor,
        mask: &Tensor,
        noise_posterior: &Tensor,
        noise_prior: &Tensor,
    ) -> Result<ObjectiveTerms> {
        let p = self.config.pixels;
        let d = self.config.latent_dim;
        let row = |t: &Tensor, n: usize| t.clone().reshape([1, n]);
        let scene = row(scene, p)?;
        let mask = row(mask, p)?;
        let mut tape = Tape::new();
        let x = tape.input(scene.clone());
        let q = self.encode_vars(&mut tape, store, x)?;
        let hv = tape.input(row(h, h.len())?);
        let vars = self.timestep_terms(
            &mut tape,
            store,
            q,
            &scene,
            hv,
            &mask,
            &row(noise_posterior, d)?,
            &row(noise_prior, d)?,
            GradientRouting::Full,
        )?;
        Ok(ObjectiveTerms::from_tape(&tape, &vars))
    }
}

/// `z₀ = μ + exp(½ log σ²) ⊙ ε`.
pub fn reparameterize_vars(tape: &mut Tape, q: GaussianVars, noise: Var) -> Result<Var> {
    let half = tape.scale(q.log_variance, 0.5)?;
    let std = tape.exp(half)?;
    let scaled = tape.mul(std, noise)?;
    tape.add(q.mean, scaled)
}

pub fn reparameterize(q: &GaussianDiag, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != q.mean.shape() {
        return Err(Error::shape("reparameterize", format!("noise {:?} vs mean {:?}", noise.shape(), q.mean.shape())));
    }
    let data = q
        .mean
        .data()
        .iter()
        .zip(q.log_variance.data())
        .zip(noise.data())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Tensor::new(q.mean.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_counts_observed_pixels() {
        let mut m = vec![0.0; 784];
        m[..64].fill(1.0);
        assert_eq!(eta(&m).unwrap(), 12.25);
        assert!(matches!(eta(&[0.0; 4]), Err(Error::Contract(_))));
        assert_eq!(eta(&[1.0; 9]).unwrap(), 1.0);
    }

    #[test]
    fn reparameterize_closed_forms() {
        let q = GaussianDiag {
            mean: Tensor::vector(vec![0.5, -1.0]),
            log_variance: Tensor::vector(vec![0.0, 0.0]),
        };
        assert_eq!(reparameterize(&q, &Tensor::zeros([2])).unwrap(), q.mean);
        let eps = Tensor::vector(vec![0.25, 2.0]);
        assert_eq!(reparameterize(&q, &eps).unwrap().data(), &[0.75, 1.0]);
    }
}
