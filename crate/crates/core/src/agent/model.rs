use crate::agent::RecurrentExtractor;
use crate::diff::ParamStore;
use crate::error::{Error, Result};
use crate::flows::BnafInit;
use crate::rng::{chacha, derive_seed};
use crate::vae::{SceneVae, VaeConfig};

/// Architecture of the whole agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub glimpse: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub flow_multiplier: usize,
    /// Block-masked affine layers per flow; `flow_layers − 1` of them are followed by tanh.
    pub flow_layers: usize,
}

impl ModelConfig {
    /// Default desk-scale architecture for an `height × width` scene.
    pub fn standard(height: usize, width: usize, glimpse: usize) -> Self {
        ModelConfig {
            height,
            width,
            glimpse,
            latent_dim: 16,
            encoder_hidden: vec![256, 128],
            decoder_hidden: vec![128, 256],
            feature_dim: 128,
            embed_dim: 128,
            flow_multiplier: 8,
            flow_layers: 3,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn glimpse_input_dim(&self) -> usize {
        self.glimpse * self.glimpse + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config("scene must be at least 2×2".into()));
        }
        if self.glimpse == 0 || self.glimpse > self.height.min(self.width) {
            return Err(Error::Config(format!(
                "glimpse {} does not fit {}×{}",
                self.glimpse, self.height, self.width
            )));
        }
        let dims = [self.latent_dim, self.feature_dim, self.embed_dim, self.flow_multiplier, self.flow_layers];
        if dims.contains(&0) || self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::Config("all model widths must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable parts of the agent sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vae: SceneVae,
    pub extractor: RecurrentExtractor,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64, flow_init: BnafInit) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = chacha(derive_seed(seed, &[0x1417]));
        let vae = SceneVae::new(
            &mut store,
            VaeConfig {
                pixels: config.pixels(),
                latent_dim: config.latent_dim,
                encoder_hidden: config.encoder_hidden.clone(),
                decoder_hidden: config.decoder_hidden.clone(),
                conditioning_dim: config.feature_dim,
                flow_multiplier: config.flow_multiplier,
                flow_layers: config.flow_layers,
            },
            flow_init,
            &mut rng,
        )?;
        let extractor = RecurrentExtractor::new(&mut store, &config, &mut rng)?;
        Ok(Model {
            config,
            store,
            vae,
            extractor,
        })
    }
}
