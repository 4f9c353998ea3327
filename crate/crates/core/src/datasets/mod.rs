//! Synthetic glyph scenes, IDX ingestion and simple scene transforms.

mod glyphs;
mod idx;

pub use glyphs::{generate_glyphs, render_glyph, GlyphSpec, GLYPH_BOX, MIN_CANVAS, NUM_CLASSES};
pub use idx::{load_idx, load_idx_images, load_idx_labels, read_idx, write_idx, write_idx_file, IdxHeader, IdxTensor};

use crate::agent::Scene;
use crate::error::{Error, Result};

/// Threshold pixels: `v ≥ threshold` becomes 1, everything else 0.
pub fn binarize(scene: &Scene, threshold: f64) -> Scene {
    Scene {
        height: scene.height,
        width: scene.width,
        pixels: scene.pixels.map(|v| if v >= threshold { 1.0 } else { 0.0 }),
        label: scene.label,
    }
}

/// 2×2 average pooling.
pub fn downsample_2x(scene: &Scene) -> Result<Scene> {
    let (h, w) = (scene.height, scene.width);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(format!("downsample_2x needs even extents, got {h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let s = scene.at(2 * r, 2 * c) + scene.at(2 * r, 2 * c + 1) + scene.at(2 * r + 1, 2 * c) + scene.at(2 * r + 1, 2 * c + 1);
            out.push(s / 4.0);
        }
    }
    Scene::new(oh, ow, out, scene.label)
}

/// Scenes from an IDX image tensor `[n, H, W]` and optional labels.
pub fn scenes_from_idx(images: &IdxTensor, labels: Option<&IdxTensor>) -> Result<Vec<Scene>> {
    if images.dims.len() != 3 {
        return Err(Error::Format(format!("expected 3-D images, got dims {:?}", images.dims)));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if let Some(l) = labels {
        if l.dims != [n] {
            return Err(Error::Format(format!("labels dims {:?} do not match {n} images", l.dims)));
        }
    }
    (0..n)
        .map(|i| {
            let pixels = images.data[i * h * w..(i + 1) * h * w].iter().map(|&b| b as f64 / 255.0).collect();
            Scene::new(h, w, pixels, labels.map(|l| l.data[i]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Scene {
        Scene::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect(), None).unwrap()
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let s = scene(1, 3, |_, c| [0.5, 0.49, 0.3][c]);
        assert_eq!(binarize(&s, 0.5).pixels.data(), &[1.0, 0.0, 0.0]);
        let b = binarize(&s, 0.5);
        assert_eq!(binarize(&b, 0.5), b);
    }

    #[test]
    fn downsample_checkerboard_and_odd() {
        let s = scene(4, 4, |r, c| ((r + c) % 2) as f64);
        assert!(downsample_2x(&s).unwrap().pixels.data().iter().all(|&v| v == 0.5));
        assert!(downsample_2x(&scene(3, 4, |_, _| 0.0)).is_err());
    }
}
