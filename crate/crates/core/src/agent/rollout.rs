use super::{
    fixation_random, fixation_uncertainty, imagine, sense, update_features, update_mask, HypothesisSet, Model,
    ObservationState, Policy, Scene,
};
use crate::error::{Error, Result};
use crate::rng::{chacha, derive_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub state: ObservationState,
    pub hypotheses: HypothesisSet,
}

/// Sense, fold and imagine for `T` steps. The first fixation is random for
/// both policies.
pub fn episode_rollout(
    model: &Model,
    scene: &Scene,
    steps: usize,
    policy: Policy,
    samples: usize,
    seed: u64,
) -> Result<Vec<RolloutStep>> {
    if steps == 0 {
        return Err(Error::contract("a rollout needs T ≥ 1"));
    }
    let cfg = &model.config;
    if scene.height != cfg.height || scene.width != cfg.width {
        return Err(Error::contract(format!(
            "scene {}×{} but model expects {}×{}",
            scene.height, scene.width, cfg.height, cfg.width
        )));
    }
    let (w, hh, ww) = (cfg.glimpse, cfg.height, cfg.width);
    let mut rng = chacha(derive_seed(seed, &[1]));
    let mut state = ObservationState::initial(hh, ww, cfg.feature_dim);
    let mut out: Vec<RolloutStep> = Vec::with_capacity(steps);
    for t in 1..=steps {
        let location = match (policy, out.last()) {
            (Policy::Uncertainty, Some(prev)) => fixation_uncertainty(&prev.hypotheses.variance, w, hh, ww)?,
            _ => fixation_random(&mut rng, w, hh, ww)?,
        };
        let percept = sense(scene, location, w)?;
        let mask = update_mask(&state.mask, &percept)?;
        state = update_features(&model.extractor, &model.store, &state, &percept)?;
        state.mask = mask;
        let hypotheses = imagine(model, &state.h, samples, derive_seed(seed, &[2, t as u64]))?;
        out.push(RolloutStep {
            state: state.clone(),
            hypotheses,
        });
    }
    Ok(out)
}
