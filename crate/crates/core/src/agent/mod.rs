//! The sensing loop: glimpses, observation masks, recurrent features,
//! imagination of complete scenes and fixation policies.

mod imagination;
mod model;
mod policy;
mod recurrent;
mod rollout;
mod sensor;

pub use imagination::{imagine, HypothesisSet};
pub use model::{Model, ModelConfig};
pub use policy::{fixation_random, fixation_uncertainty, valid_centers, Policy};
pub use recurrent::{glimpse_features, update_features, ObservationState, RecurrentExtractor};
pub use rollout::{episode_rollout, RolloutStep};
pub use sensor::{sense, update_mask, window_origin, GlimpsePercept, Location, Scene};
