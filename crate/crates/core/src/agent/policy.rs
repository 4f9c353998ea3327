use rand::Rng;

use super::Location;
use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Uncertainty,
    Random,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Uncertainty => "uncertainty",
            Policy::Random => "random",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(Policy::Uncertainty),
            "random" => Ok(Policy::Random),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }
}

/// Inclusive range of valid centers along one axis of length `n`.
fn center_range(n: usize, w: usize) -> (usize, usize) {
    (w / 2, n - w + w / 2)
}

/// Every center whose window lies inside an `H × W` scene, row-major.
pub fn valid_centers(w: usize, height: usize, width: usize) -> Vec<Location> {
    if w == 0 || w > height || w > width {
        return Vec::new();
    }
    let (r0, r1) = center_range(height, w);
    let (c0, c1) = center_range(width, w);
    (r0..=r1).flat_map(|r| (c0..=c1).map(move |c| Location::new(r, c))).collect()
}

fn check(w: usize, height: usize, width: usize) -> Result<()> {
    if w == 0 || w > height || w > width {
        return Err(Error::contract(format!("glimpse {w} does not fit {height}×{width}")));
    }
    Ok(())
}

/// Center maximizing the summed variance over its window; the first
/// maximum in row-major order wins.
pub fn fixation_uncertainty(variance: &Tensor, w: usize, height: usize, width: usize) -> Result<Location> {
    check(w, height, width)?;
    if variance.shape() != [height, width] {
        return Err(Error::shape(
            "fixation_uncertainty",
            format!("variance {:?} vs {height}×{width}", variance.shape()),
        ));
    }
    let v = variance.data();
    // Direct window sums, always accumulated in the same order, so equal
    // windows score bit-identically and the tie rule is exact.
    let window = |r: usize, c: usize| {
        let (a, b) = (r - w / 2, c - w / 2);
        (a..a + w).map(|y| v[y * width + b..y * width + b + w].iter().sum::<f64>()).sum::<f64>()
    };
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for l in valid_centers(w, height, width) {
        let s = window(l.row, l.col);
        if s > best_score {
            best_score = s;
            best = Some(l);
        }
    }
    best.ok_or_else(|| Error::contract("no valid center"))
}

/// Uniform draw over valid centers.
pub fn fixation_random(rng: &mut impl Rng, w: usize, height: usize, width: usize) -> Result<Location> {
    check(w, height, width)?;
    let (r0, r1) = center_range(height, w);
    let (c0, c1) = center_range(width, w);
    Ok(Location::new(rng.gen_range(r0..=r1), rng.gen_range(c0..=c1)))
}
