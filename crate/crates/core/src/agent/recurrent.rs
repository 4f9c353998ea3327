use rand::Rng;

use super::{GlimpsePercept, Location, ModelConfig};
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{GruCell, Linear};

/// Glimpse embedding (one affine + tanh layer) feeding a gated recurrent cell.
#[derive(Debug, Clone)]
pub struct RecurrentExtractor {
    pub embed: Linear,
    pub cell: GruCell,
    pub glimpse: usize,
    pub height: usize,
    pub width: usize,
}

impl RecurrentExtractor {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let embed = Linear::new(store, "extractor.embed", config.glimpse_input_dim(), config.embed_dim, rng)?;
        let cell = GruCell::new(store, "extractor.gru", config.embed_dim, config.feature_dim, rng)?;
        Ok(RecurrentExtractor {
            embed,
            cell,
            glimpse: config.glimpse,
            height: config.height,
            width: config.width,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.cell.hidden_dim
    }

    /// `h_t = cell(h_{t−1}, tanh(embed(input)))` with `input: [batch, w² + 2]`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, h: Var, input: Var) -> Result<Var> {
        let e = self.embed.forward(tape, store, input)?;
        let e = tape.tanh(e)?;
        self.cell.forward(tape, store, e, h)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        self.embed.zero(store);
        self.cell.zero(store);
    }
}

/// `flatten(patch) ⊕ (2·row/(H−1) − 1, 2·col/(W−1) − 1)`.
pub fn glimpse_features(patch: &[f64], location: Location, height: usize, width: usize) -> Vec<f64> {
    let mut v = patch.to_vec();
    v.push(2.0 * location.row as f64 / (height - 1) as f64 - 1.0);
    v.push(2.0 * location.col as f64 / (width - 1) as f64 - 1.0);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationState {
    pub history: Vec<GlimpsePercept>,
    /// `[feature_dim]`
    pub h: Tensor,
    /// `[H, W]`, 1 where observed.
    pub mask: Tensor,
    pub t: usize,
}

impl ObservationState {
    pub fn initial(height: usize, width: usize, feature_dim: usize) -> Self {
        ObservationState {
            history: Vec::new(),
            h: Tensor::zeros([feature_dim]),
            mask: Tensor::zeros([height, width]),
            t: 0,
        }
    }

    pub fn observed_pixels(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0.0).count()
    }
}

/// Fold one percept into the recurrent features. The mask is left to [`super::update_mask`].
pub fn update_features(
    extractor: &RecurrentExtractor,
    store: &ParamStore,
    state: &ObservationState,
    percept: &GlimpsePercept,
) -> Result<ObservationState> {
    if percept.size != extractor.glimpse {
        return Err(Error::contract(format!(
            "percept size {} but extractor expects {}",
            percept.size, extractor.glimpse
        )));
    }
    let features = glimpse_features(percept.patch.data(), percept.location, extractor.height, extractor.width);
    let mut tape = Tape::new();
    let n = features.len();
    let x = tape.input(Tensor::new([1, n], features)?);
    let h = tape.input(state.h.clone().reshape([1, state.h.len()])?);
    let h = extractor.step(&mut tape, store, h, x)?;
    let mut history = state.history.clone();
    history.push(percept.clone());
    Ok(ObservationState {
        history,
        h: tape.value(h).clone().reshape([extractor.feature_dim()])?,
        mask: state.mask.clone(),
        t: state.t + 1,
    })
}
