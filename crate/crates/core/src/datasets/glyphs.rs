use crate::agent::Scene;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

pub const NUM_CLASSES: usize = 10;
/// Side of the square box every template is drawn in.
pub const GLYPH_BOX: usize = 10;
/// Smallest canvas that fits the box under ±1 jitter.
pub const MIN_CANVAS: usize = GLYPH_BOX + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlyphSpec {
    pub class_id: u8,
    pub height: usize,
    pub width: usize,
    /// Row and column shift, each in `-1..=1`.
    pub jitter: (i32, i32),
    /// 2 or 3.
    pub stroke: usize,
}

fn template(class_id: u8, t: usize, r: usize, c: usize) -> bool {
    let n = GLYPH_BOX;
    let band = |x: usize| {
        let lo = (n - t) / 2;
        (lo..lo + t).contains(&x)
    };
    let (ri, ci) = (r as i64, c as i64);
    let (lo, hi) = (-(t as i64 / 2), (t as i64 - 1) / 2);
    match class_id {
        0 => band(r),
        1 => band(c),
        2 => band(r) || band(c),
        3 => (lo..=hi).contains(&(ci - ri)),
        4 => (lo..=hi).contains(&(ri + ci - (n as i64 - 1))),
        5 => c < t || r >= n - t,
        6 => r < t || band(c),
        7 => r < t || c < t || r >= n - t || c >= n - t,
        8 => true,
        9 => {
            let s = t + 1;
            (r < s && c < s) || (r >= n - s && c >= n - s)
        }
        _ => false,
    }
}

/// Draw one glyph. Fails if it does not fit its canvas.
pub fn render_glyph(spec: &GlyphSpec) -> Result<Scene> {
    let (h, w) = (spec.height, spec.width);
    if h < MIN_CANVAS || w < MIN_CANVAS {
        return Err(Error::contract(format!("canvas {h}×{w} is smaller than {MIN_CANVAS}×{MIN_CANVAS}")));
    }
    if spec.class_id as usize >= NUM_CLASSES || !(2..=3).contains(&spec.stroke) {
        return Err(Error::contract(format!("bad glyph spec {spec:?}")));
    }
    if spec.jitter.0.abs() > 1 || spec.jitter.1.abs() > 1 {
        return Err(Error::contract("jitter must lie in -1..=1"));
    }
    let top = ((h - GLYPH_BOX) / 2) as i32 + spec.jitter.0;
    let left = ((w - GLYPH_BOX) / 2) as i32 + spec.jitter.1;
    let mut pixels = vec![0.0; h * w];
    for r in 0..GLYPH_BOX {
        for c in 0..GLYPH_BOX {
            if template(spec.class_id, spec.stroke, r, c) {
                let (y, x) = ((top + r as i32) as usize, (left + c as i32) as usize);
                pixels[y * w + x] = 1.0;
            }
        }
    }
    Scene::new(h, w, pixels, Some(spec.class_id))
}

/// `count` labelled glyph scenes; item `i` has class `i mod 10` and its own
/// SplitMix64 stream for stroke and jitter.
pub fn generate_glyphs(seed: u64, count: usize, height: usize, width: usize) -> Result<Vec<Scene>> {
    if count == 0 {
        return Err(Error::contract("count must be at least 1"));
    }
    (0..count)
        .map(|i| {
            let mut g = SplitMix64::new(derive_seed(seed, &[i as u64]));
            let stroke = 2 + g.below(2) as usize;
            let dr = g.below(3) as i32 - 1;
            let dc = g.below(3) as i32 - 1;
            render_glyph(&GlyphSpec {
                class_id: (i % NUM_CLASSES) as u8,
                height,
                width,
                jitter: (dr, dc),
                stroke,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filled_box_is_centered_block() {
        let s = render_glyph(&GlyphSpec {
            class_id: 8,
            height: 16,
            width: 16,
            jitter: (0, 0),
            stroke: 3,
        })
        .unwrap();
        assert_eq!(s.pixels.sum(), 100.0);
        for r in 0..16 {
            for c in 0..16 {
                let inside = (3..13).contains(&r) && (3..13).contains(&c);
                assert_eq!(s.at(r, c), inside as u8 as f64);
            }
        }
    }

    #[test]
    fn templates_are_distinct() {
        let render = |k| {
            render_glyph(&GlyphSpec {
                class_id: k,
                height: 16,
                width: 16,
                jitter: (0, 0),
                stroke: 2,
            })
            .unwrap()
            .pixels
        };
        for a in 0..10 {
            assert!(render(a).sum() > 0.0);
            for b in a + 1..10 {
                assert_ne!(render(a), render(b), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn small_canvas_rejected() {
        assert!(generate_glyphs(0, 3, 11, 16).is_err());
        assert!(generate_glyphs(0, 3, 12, 12).is_ok());
    }
}
