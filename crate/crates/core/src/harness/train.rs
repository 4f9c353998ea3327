use rand::seq::SliceRandom;
use rand::Rng;

use crate::agent::{
    fixation_random, glimpse_features, sense, update_mask, Location, Model, RecurrentExtractor, Scene,
};
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flows::BnafInit;
use crate::rng::{chacha, derive_seed, standard_normal};
use crate::vae::{GradientRouting, ObjectiveTerms, ObjectiveVars, SceneVae};

use super::{clip_grad_norm, Adam, TrainConfig};

/// Everything random about one batch of training episodes, resolved up front.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    /// `[B, H·W]`
    pub scenes: Tensor,
    /// Per timestep, `[B, w² + 2]`.
    pub glimpses: Vec<Tensor>,
    /// Per timestep, cumulative observation masks `[B, H·W]`.
    pub masks: Vec<Tensor>,
    /// Per timestep, `[B, d]`.
    pub noise_posterior: Vec<Tensor>,
    pub noise_prior: Vec<Tensor>,
}

impl EpisodeBatch {
    /// `locations[t][b]` is the fixation of scene `b` at step `t`.
    pub fn new(
        scenes: &[&Scene],
        locations: &[Vec<Location>],
        glimpse: usize,
        noise_posterior: Vec<Tensor>,
        noise_prior: Vec<Tensor>,
    ) -> Result<Self> {
        let b = scenes.len();
        if b == 0 || locations.is_empty() {
            return Err(Error::contract("an episode batch needs scenes and at least one timestep"));
        }
        if locations.iter().any(|l| l.len() != b) || noise_posterior.len() != locations.len() || noise_prior.len() != locations.len() {
            return Err(Error::contract("locations and noises must cover every timestep and scene"));
        }
        let (h, w) = (scenes[0].height, scenes[0].width);
        let p = h * w;
        let rows: Vec<&[f64]> = scenes.iter().map(|s| s.pixels.data()).collect();
        let scene_mat = Tensor::from_rows(&rows)?;
        let mut masks_now: Vec<Tensor> = (0..b).map(|_| Tensor::zeros([h, w])).collect();
        let mut glimpses = Vec::with_capacity(locations.len());
        let mut masks = Vec::with_capacity(locations.len());
        for locs in locations {
            let mut feats = Vec::with_capacity(b * (glimpse * glimpse + 2));
            let mut mask = Vec::with_capacity(b * p);
            for ((scene, &loc), m) in scenes.iter().zip(locs).zip(&mut masks_now) {
                let g = sense(scene, loc, glimpse)?;
                feats.extend(glimpse_features(g.patch.data(), g.location, h, w));
                *m = update_mask(m, &g)?;
                mask.extend_from_slice(m.data());
            }
            glimpses.push(Tensor::new([b, glimpse * glimpse + 2], feats)?);
            masks.push(Tensor::new([b, p], mask)?);
        }
        Ok(EpisodeBatch {
            scenes: scene_mat,
            glimpses,
            masks,
            noise_posterior,
            noise_prior,
        })
    }

    /// Uniformly random fixations and fresh noise for every step.
    pub fn sample(scenes: &[&Scene], timesteps: usize, glimpse: usize, latent_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let (h, w) = (scenes[0].height, scenes[0].width);
        let b = scenes.len();
        let mut locations = Vec::with_capacity(timesteps);
        let mut np = Vec::with_capacity(timesteps);
        let mut nq = Vec::with_capacity(timesteps);
        for _ in 0..timesteps {
            locations.push((0..b).map(|_| fixation_random(rng, glimpse, h, w)).collect::<Result<Vec<_>>>()?);
            np.push(Tensor::new([b, latent_dim], standard_normal(rng, b * latent_dim))?);
            nq.push(Tensor::new([b, latent_dim], standard_normal(rng, b * latent_dim))?);
        }
        Self::new(scenes, &locations, glimpse, np, nq)
    }

    pub fn batch_size(&self) -> usize {
        self.scenes.shape()[0]
    }

    pub fn timesteps(&self) -> usize {
        self.glimpses.len()
    }
}

/// `−mean_b Σ_t L_t` for a batch of episodes. The encoder runs once; the
/// recurrent features are chained through the steps on the same tape.
pub fn episode_loss(
    vae: &SceneVae,
    extractor: &RecurrentExtractor,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &EpisodeBatch,
    routing: GradientRouting,
) -> Result<(Var, Vec<ObjectiveVars>)> {
    let b = batch.batch_size();
    let x = tape.input(batch.scenes.clone());
    let q = vae.encode_vars(tape, store, x)?;
    let mut h = tape.input(Tensor::zeros([b, extractor.feature_dim()]));
    let mut terms = Vec::with_capacity(batch.timesteps());
    let mut sum: Option<Var> = None;
    for t in 0..batch.timesteps() {
        let g = tape.input(batch.glimpses[t].clone());
        h = extractor.step(tape, store, h, g)?;
        let vars = vae.timestep_terms(
            tape,
            store,
            q,
            &batch.scenes,
            h,
            &batch.masks[t],
            &batch.noise_posterior[t],
            &batch.noise_prior[t],
            routing,
        )?;
        sum = Some(match sum {
            None => vars.total,
            Some(s) => tape.add(s, vars.total)?,
        });
        terms.push(vars);
    }
    let sum = sum.expect("at least one timestep");
    let mean = tape.mean(sum, None)?;
    Ok((tape.neg(mean)?, terms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over batches of `−mean_b Σ_t L_t`.
    pub loss: f64,
    /// Mean over batches and timesteps of t1..t5.
    pub terms: [f64; 5],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub step: u64,
}

fn term_name(i: usize) -> &'static str {
    ["t1", "t2", "t3", "t4", "t5"][i]
}

/// Adam on `−Σ_t L_t` with global-norm clipping. Fixations are uniformly random.
pub fn train(config: &TrainConfig, scenes: &[Scene], mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let mut model = Model::new(config.model_config(), config.seed, BnafInit::training())?;
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut rng = chacha(derive_seed(config.seed, &[10, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut term_sum, mut batches) = (0.0, [0.0; 5], 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch_scenes: Vec<&Scene> = chunk.iter().map(|&i| &scenes[i]).collect();
            let batch = EpisodeBatch::sample(&batch_scenes, config.timesteps, config.glimpse, config.latent_dim, &mut rng)?;
            let mut tape = Tape::new();
            let (loss, vars) = episode_loss(&model.vae, &model.extractor, &mut tape, &model.store, &batch, GradientRouting::Split)?;
            let value = tape.value(loss).item();
            let mut terms = [0.0; 5];
            for v in &vars {
                let t = ObjectiveTerms::from_tape(&tape, v).as_array();
                for i in 0..5 {
                    terms[i] += t[i] / vars.len() as f64;
                }
            }
            if let Some(i) = terms.iter().position(|t| !t.is_finite()) {
                return Err(Error::NonFinite { term: term_name(i) });
            }
            if !value.is_finite() {
                return Err(Error::NonFinite { term: "total" });
            }
            model.store.zero_grads();
            tape.backward(loss, &Tensor::scalar(1.0), &mut model.store)?;
            if !clip_grad_norm(&mut model.store, config.clip_norm).is_finite() {
                return Err(Error::NonFinite { term: "gradient" });
            }
            adam.step(&mut model.store);
            step += 1;
            loss_sum += value;
            for i in 0..5 {
                term_sum[i] += terms[i];
            }
            batches += 1;
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            terms: term_sum.map(|t| t / batches as f64),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    model.store.zero_grads();
    Ok(TrainOutcome { model, log, step })
}
