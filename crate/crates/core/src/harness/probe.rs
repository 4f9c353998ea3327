use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::agent::{fixation_random, sense, update_features, Model, ObservationState, Scene};
use crate::datasets::NUM_CLASSES;
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::rng::{chacha, derive_seed};

use super::{Adam, Checkpoint, TrainConfig};

/// `d → hidden (tanh) → 10` softmax classifier on latents.
#[derive(Debug, Clone)]
pub struct Probe {
    pub store: ParamStore,
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// Mean cross-entropy per epoch.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
}

impl Probe {
    pub fn new(latent_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = chacha(seed);
        let hidden = Linear::new(&mut store, "probe.hidden", latent_dim, hidden, &mut rng)?;
        let out = Linear::new(&mut store, "probe.out", hidden.out_dim, NUM_CLASSES, &mut rng)?;
        Ok(Probe { store, hidden, out })
    }

    pub fn latent_dim(&self) -> usize {
        self.hidden.in_dim
    }

    fn logits_vars(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let a = self.hidden.forward(tape, &self.store, z)?;
        let a = tape.tanh(a)?;
        self.out.forward(tape, &self.store, a)
    }

    /// Class scores for latents `[n, d]`.
    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        if z.rank() != 2 || z.shape()[1] != self.latent_dim() {
            return Err(Error::shape("probe", format!("latents {:?}, expected [n, {}]", z.shape(), self.latent_dim())));
        }
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let l = self.logits_vars(&mut tape, zv)?;
        Ok(tape.value(l).clone())
    }

    /// Arg-max class per row; the lowest class wins ties.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(z)?;
        Ok((0..z.shape()[0])
            .map(|i| {
                let row = logits.row(i);
                (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
            })
            .collect())
    }

    /// Mean softmax cross-entropy on the tape.
    fn loss_vars(&self, tape: &mut Tape, z: &Tensor, labels: &[usize]) -> Result<Var> {
        let zv = tape.input(z.clone());
        let logits = self.logits_vars(tape, zv)?;
        let lse = tape.logsumexp(logits, 1)?;
        let idx = labels.iter().enumerate().map(|(i, &y)| i * NUM_CLASSES + y).collect();
        let picked = tape.gather(logits, idx, [labels.len()])?;
        let nll = tape.sub(lse, picked)?;
        tape.mean(nll, None)
    }

    pub fn to_checkpoint(&self, config_text: String) -> Checkpoint {
        Checkpoint::from_store(0, config_text, &self.store)
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let cfg = TrainConfig::parse(&checkpoint.config)?;
        let mut probe = Probe::new(cfg.latent_dim, cfg.probe_hidden, 0)?;
        checkpoint.restore_into(&mut probe.store)?;
        Ok(probe)
    }
}

/// Probe inputs: `z_K` from the noise-free posterior path of the full scene,
/// conditioned on the features of a seeded random-sensing episode of `T` steps.
pub fn probe_features(model: &Model, scenes: &[Scene], timesteps: usize, seed: u64) -> Result<Tensor> {
    let cfg = &model.config;
    let rows = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut rng = chacha(derive_seed(seed, &[i as u64]));
            let mut state = ObservationState::initial(cfg.height, cfg.width, cfg.feature_dim);
            for _ in 0..timesteps {
                let l = fixation_random(&mut rng, cfg.glimpse, cfg.height, cfg.width)?;
                let g = sense(scene, l, cfg.glimpse)?;
                state = update_features(&model.extractor, &model.store, &state, &g)?;
            }
            let q = model.vae.encode(&model.store, &scene.flat())?;
            let d = cfg.latent_dim;
            let mu = q.mean.reshape([1, d])?;
            let h = state.h.reshape([1, cfg.feature_dim])?;
            let (zk, _) = model.vae.warp.transform_batch(&model.store, &mu, Some(&h))?;
            let (z_big, _) = model.vae.unwarp.transform_batch(&model.store, &zk, Some(&h))?;
            Ok(z_big.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

/// Fit a probe on frozen generative parameters.
pub fn train_probe(model: &Model, scenes: &[Scene], config: &TrainConfig) -> Result<(Probe, ProbeReport)> {
    let labels: Vec<usize> = scenes
        .iter()
        .map(|s| s.label.map(usize::from).filter(|&l| l < NUM_CLASSES))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::contract("probe training needs labels 0..9 on every scene"))?;
    let features = probe_features(model, scenes, config.timesteps, derive_seed(config.seed, &[30]))?;
    let d = model.config.latent_dim;
    let mut probe = Probe::new(d, config.probe_hidden, derive_seed(config.seed, &[31]))?;
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut losses = Vec::with_capacity(config.probe_epochs);
    for epoch in 0..config.probe_epochs {
        order.shuffle(&mut chacha(derive_seed(config.seed, &[32, epoch as u64])));
        let (mut total, mut n) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| features.row(i)).collect();
            let z = Tensor::from_rows(&rows)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let loss = probe.loss_vars(&mut tape, &z, &y)?;
            total += tape.value(loss).item();
            n += 1;
            probe.store.zero_grads();
            tape.backward(loss, &Tensor::scalar(1.0), &mut probe.store)?;
            adam.step(&mut probe.store);
        }
        losses.push(total / n as f64);
    }
    probe.store.zero_grads();
    let predicted = probe.predict(&features)?;
    let correct = predicted.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok((
        probe,
        ProbeReport {
            losses,
            train_accuracy: correct as f64 / labels.len() as f64,
        },
    ))
}
