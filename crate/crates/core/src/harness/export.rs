use std::fmt::Write as _;
use std::path::Path;

use crate::agent::{RolloutStep, Scene};
use crate::error::{Error, Result};

use super::MetricsRow;

pub const CSV_HEADER: &str = "policy,t,bce,max_var,cat_entropy,probe_acc";

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.16e}"))
}

/// CSV text; floats carry 17 significant digits, missing probe columns are `NA`.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.policy.name(),
            r.t,
            num(Some(r.bce)),
            num(Some(r.max_var)),
            num(r.cat_entropy),
            num(r.probe_acc)
        );
    }
    s
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grid image: one band per timestep, each band the observed composite
/// (unobserved pixels at 0.5) followed by the hypotheses, separated by
/// 1-pixel white lines. Returns `(width, height, bytes)`.
pub fn pgm_grid(steps: &[RolloutStep], scene: &Scene) -> Result<(usize, usize, Vec<u8>)> {
    if steps.is_empty() {
        return Err(Error::contract("nothing to export"));
    }
    let (h, w) = (scene.height, scene.width);
    let n = steps[0].hypotheses.len();
    if steps.iter().any(|s| s.hypotheses.len() != n || s.hypotheses.mean.shape() != [h, w]) {
        return Err(Error::contract("every step needs the same number of hypotheses of the scene's size"));
    }
    let gw = (n + 1) * w + n;
    let gh = steps.len() * h + steps.len() - 1;
    let mut img = vec![255u8; gw * gh];
    for (t, step) in steps.iter().enumerate() {
        let top = t * (h + 1);
        let mask = step.state.mask.data();
        for r in 0..h {
            let row = &mut img[(top + r) * gw..(top + r + 1) * gw];
            for c in 0..w {
                let v = if mask[r * w + c] > 0.0 { scene.at(r, c) } else { 0.5 };
                row[c] = quantize(v);
            }
            for k in 0..n {
                let left = (k + 1) * (w + 1);
                let sample = step.hypotheses.sample(k);
                for c in 0..w {
                    row[left + c] = quantize(sample[r * w + c]);
                }
            }
        }
    }
    Ok((gw, gh, img))
}

/// Binary PGM: `P5\n<W> <H>\n255\n` then raw bytes.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::Length {
            expected: width * height,
            found: pixels.len(),
        });
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm_grid(path: impl AsRef<Path>, steps: &[RolloutStep], scene: &Scene) -> Result<()> {
    let (w, h, px) = pgm_grid(steps, scene)?;
    write_pgm(path, w, h, &px)
}
