use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    /// `[height, width]`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub label: Option<u8>,
}

impl Scene {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, label: Option<u8>) -> Result<Self> {
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::contract("scene pixels must lie in [0, 1]"));
        }
        Ok(Scene {
            height,
            width,
            pixels: Tensor::new([height, width], pixels)?,
            label,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels.data()[row * self.width + col]
    }

    /// Pixels as a `[1, H·W]` row.
    pub fn flat(&self) -> Tensor {
        self.pixels.clone().reshape([1, self.pixel_count()]).expect("same element count")
    }
}

/// Integer pixel coordinates of a glimpse center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub row: usize,
    pub col: usize,
}

impl Location {
    pub fn new(row: usize, col: usize) -> Self {
        Location { row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlimpsePercept {
    /// `[w, w]`
    pub patch: Tensor,
    /// Center after clamping.
    pub location: Location,
    pub size: usize,
}

impl GlimpsePercept {
    pub fn origin(&self) -> (usize, usize) {
        window_origin(self.location, self.size)
    }
}

/// Top-left corner of the `w × w` window centered at `center`: rows
/// `[row − w/2, row − w/2 + w − 1]` (for even `w`: `[row − w/2, row + w/2 − 1]`).
pub fn window_origin(center: Location, w: usize) -> (usize, usize) {
    (center.row - w / 2, center.col - w / 2)
}

fn clamp_center(c: usize, w: usize, extent: usize) -> usize {
    c.clamp(w / 2, extent - w + w / 2)
}

/// Extract the `w × w` glimpse centered at `location`, clamping the center so
/// the window lies inside the scene.
pub fn sense(scene: &Scene, location: Location, w: usize) -> Result<GlimpsePercept> {
    if w == 0 || w > scene.height.min(scene.width) {
        return Err(Error::contract(format!(
            "glimpse size {w} does not fit a {}×{} scene",
            scene.height, scene.width
        )));
    }
    let location = Location::new(
        clamp_center(location.row, w, scene.height),
        clamp_center(location.col, w, scene.width),
    );
    let (r0, c0) = window_origin(location, w);
    let mut patch = Vec::with_capacity(w * w);
    for r in r0..r0 + w {
        for c in c0..c0 + w {
            patch.push(scene.at(r, c));
        }
    }
    Ok(GlimpsePercept {
        patch: Tensor::new([w, w], patch)?,
        location,
        size: w,
    })
}

/// `mask ∨ window(percept)` for a `[H, W]` binary mask.
pub fn update_mask(mask: &Tensor, percept: &GlimpsePercept) -> Result<Tensor> {
    let &[h, w] = mask.shape() else {
        return Err(Error::shape("update_mask", format!("mask {:?}", mask.shape())));
    };
    let (r0, c0) = percept.origin();
    if r0 + percept.size > h || c0 + percept.size > w {
        return Err(Error::shape("update_mask", "glimpse window exceeds the mask"));
    }
    let mut out = mask.clone();
    for r in r0..r0 + percept.size {
        out.data_mut()[r * w + c0..r * w + c0 + percept.size].fill(1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Scene {
        let n = (h * w) as f64;
        Scene::new(h, w, (0..h * w).map(|i| i as f64 / n).collect(), None).unwrap()
    }

    fn count(mask: &Tensor) -> usize {
        mask.data().iter().filter(|&&v| v > 0.0).count()
    }

    #[test]
    fn centered_window_arithmetic() {
        let s = ramp(28, 28);
        let g = sense(&s, Location::new(14, 14), 8).unwrap();
        assert_eq!(g.origin(), (10, 10));
        assert_eq!(g.patch.data()[0], s.at(10, 10));
        assert_eq!(g.patch.data()[63], s.at(17, 17));
    }

    #[test]
    fn corner_is_clamped() {
        let s = ramp(28, 28);
        let g = sense(&s, Location::new(0, 0), 8).unwrap();
        assert_eq!(g.location, Location::new(4, 4));
        assert_eq!(g.origin(), (0, 0));
        let g = sense(&s, Location::new(27, 27), 8).unwrap();
        assert_eq!(g.origin(), (20, 20));
        let g = sense(&s, Location::new(0, 27), 3).unwrap();
        assert_eq!(g.origin(), (0, 25));
    }

    #[test]
    fn constant_scene_gives_constant_patch() {
        let s = Scene::new(10, 10, vec![0.4; 100], None).unwrap();
        for loc in [Location::new(0, 9), Location::new(5, 5), Location::new(9, 0)] {
            let g = sense(&s, loc, 4).unwrap();
            assert!(g.patch.data().iter().all(|&v| v == 0.4));
        }
    }

    #[test]
    fn oversized_glimpse_is_rejected() {
        let s = ramp(6, 8);
        assert!(matches!(sense(&s, Location::new(3, 3), 7), Err(Error::Contract(_))));
    }

    #[test]
    fn mask_union_counts() {
        let s = ramp(28, 28);
        let empty = Tensor::zeros([28, 28]);
        let g1 = sense(&s, Location::new(10, 10), 8).unwrap();
        let m1 = update_mask(&empty, &g1).unwrap();
        assert_eq!(count(&m1), 64);
        assert_eq!(update_mask(&m1, &g1).unwrap(), m1);
        // Shifted down by 4 rows: overlap is a 4×8 strip.
        let g2 = sense(&s, Location::new(14, 10), 8).unwrap();
        let m2 = update_mask(&m1, &g2).unwrap();
        assert_eq!(count(&m2), 96);
    }
}
