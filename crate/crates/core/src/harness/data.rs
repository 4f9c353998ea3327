use crate::agent::Scene;
use crate::datasets::{binarize, downsample_2x, generate_glyphs, load_idx, scenes_from_idx};
use crate::error::{Error, Result};

use super::{DatasetSpec, TrainConfig};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

fn idx_split(images: &std::path::Path, labels: &std::path::Path, count: usize, downsample: bool, cfg: &TrainConfig) -> Result<Vec<Scene>> {
    let images = load_idx(images)?;
    let labels = load_idx(labels)?;
    let mut scenes = scenes_from_idx(&images, Some(&labels))?;
    scenes.truncate(count);
    scenes
        .iter()
        .map(|s| {
            let s = if downsample { downsample_2x(s)? } else { s.clone() };
            if s.height != cfg.height || s.width != cfg.width {
                return Err(Error::Config(format!(
                    "IDX scenes are {}×{} but the config says {}×{}",
                    s.height, s.width, cfg.height, cfg.width
                )));
            }
            Ok(binarize(&s, 0.5))
        })
        .collect()
}

pub fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Glyphs => Ok(Dataset {
            train: generate_glyphs(cfg.data_seed, cfg.train_count, cfg.height, cfg.width)?,
            test: generate_glyphs(cfg.data_seed.wrapping_add(1), cfg.test_count, cfg.height, cfg.width)?,
        }),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            downsample,
        } => Ok(Dataset {
            train: idx_split(train_images, train_labels, cfg.train_count, *downsample, cfg)?,
            test: idx_split(test_images, test_labels, cfg.test_count, *downsample, cfg)?,
        }),
    }
}
