use imago::agent::{
    episode_rollout, fixation_random, fixation_uncertainty, imagine, sense, update_mask, valid_centers, Location, Model,
    ModelConfig, Policy, Scene,
};
use imago::diff::Tensor;
use imago::flows::BnafInit;
use imago::rng::chacha;
use proptest::prelude::*;

fn ramp(h: usize, w: usize) -> Scene {
    let n = (h * w) as f64;
    Scene::new(h, w, (0..h * w).map(|i| i as f64 / n).collect(), None).unwrap()
}

fn ones(m: &Tensor) -> usize {
    m.data().iter().filter(|&&v| v == 1.0).count()
}

fn small_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        height: 8,
        width: 8,
        glimpse: 3,
        latent_dim: 3,
        encoder_hidden: vec![12],
        decoder_hidden: vec![12],
        feature_dim: 6,
        embed_dim: 6,
        flow_multiplier: 2,
        flow_layers: 2,
    };
    Model::new(cfg, seed, BnafInit::training()).unwrap()
}

fn blob() -> Scene {
    let px = (0..64).map(|i| if (i / 8 + i % 8) % 3 == 0 { 1.0 } else { 0.0 }).collect();
    Scene::new(8, 8, px, Some(2)).unwrap()
}

#[test]
fn sense_reads_the_centered_window() {
    let scene = ramp(28, 28);
    let p = sense(&scene, Location::new(14, 14), 8).unwrap();
    assert_eq!(p.origin(), (10, 10));
    assert_eq!(p.patch.shape(), &[8, 8]);
    for r in 0..8 {
        for c in 0..8 {
            assert_eq!(p.patch.data()[r * 8 + c], scene.at(10 + r, 10 + c));
        }
    }
}

#[test]
fn sense_clamps_corners() {
    let scene = ramp(28, 28);
    let p = sense(&scene, Location::new(0, 27), 8).unwrap();
    assert_eq!(p.location, Location::new(4, 24));
    assert_eq!(p.origin(), (0, 20));
    let c = Scene::new(6, 6, vec![0.25; 36], None).unwrap();
    let p = sense(&c, Location::new(5, 0), 4).unwrap();
    assert!(p.patch.data().iter().all(|&v| v == 0.25));
}

#[test]
fn mask_union_counts() {
    let scene = ramp(28, 28);
    let mask = Tensor::zeros([28, 28]);
    let p = sense(&scene, Location::new(14, 14), 8).unwrap();
    let m1 = update_mask(&mask, &p).unwrap();
    assert_eq!(ones(&m1), 64);
    assert_eq!(ones(&update_mask(&m1, &p).unwrap()), 64);
    let q = sense(&scene, Location::new(14, 18), 8).unwrap();
    assert_eq!(ones(&update_mask(&m1, &q).unwrap()), 96);
}

fn brute_force(v: &[f64], w: usize, h: usize, wd: usize) -> Location {
    let mut best = (f64::NEG_INFINITY, Location::new(0, 0));
    for r in w / 2..=h - w + w / 2 {
        for c in w / 2..=wd - w + w / 2 {
            let mut s = 0.0;
            for y in r - w / 2..r - w / 2 + w {
                for x in c - w / 2..c - w / 2 + w {
                    s += v[y * wd + x];
                }
            }
            if s > best.0 {
                best = (s, Location::new(r, c));
            }
        }
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Dyadic values keep every window sum exact, so ties are real ties.
    #[test]
    fn uncertainty_fixation_matches_exhaustive_search(
        v in prop::collection::vec(prop::sample::select(vec![0.0, 0.0625, 0.125, 0.1875, 0.25]), 144),
    ) {
        let t = Tensor::new([12, 12], v.clone()).unwrap();
        prop_assert_eq!(fixation_uncertainty(&t, 4, 12, 12).unwrap(), brute_force(&v, 4, 12, 12));
    }

    #[test]
    fn random_fixation_is_always_valid(seed in any::<u64>(), w in 1usize..6) {
        let loc = fixation_random(&mut chacha(seed), w, 9, 7).unwrap();
        prop_assert!(valid_centers(w, 9, 7).contains(&loc));
    }
}

#[test]
fn random_fixation_is_uniform() {
    // 10×10 scene, w = 4 → 7×7 = 49 centers, χ² critical value at
    // α = 0.01 with 48 degrees of freedom is 73.68.
    let centers = valid_centers(4, 10, 10);
    assert_eq!(centers.len(), 49);
    let mut counts = std::collections::HashMap::new();
    let mut rng = chacha(99);
    let n = 100_000;
    for _ in 0..n {
        *counts.entry(fixation_random(&mut rng, 4, 10, 10).unwrap()).or_insert(0usize) += 1;
    }
    let expected = n as f64 / 49.0;
    let chi2: f64 = centers
        .iter()
        .map(|l| (counts.get(l).copied().unwrap_or(0) as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 73.68, "chi2 = {chi2}");
}

#[test]
fn hypothesis_variance_is_bounded() {
    let model = small_model(5);
    let h = Tensor::vector(vec![0.3, -0.1, 0.5, 0.0, -0.7, 0.2]);
    let set = imagine(&model, &h, 40, 11).unwrap();
    assert!(set.variance.data().iter().all(|&v| (0.0..=0.25).contains(&v)));
    assert!(set.samples.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let single = imagine(&model, &h, 1, 11).unwrap();
    assert!(single.variance.data().iter().all(|&v| v == 0.0));
    assert_eq!(imagine(&model, &h, 40, 11).unwrap(), set);
    assert_ne!(imagine(&model, &h, 40, 12).unwrap(), set);
}

#[test]
fn rollout_masks_grow_and_repeat() {
    let model = small_model(7);
    let scene = blob();
    for policy in [Policy::Uncertainty, Policy::Random] {
        let one = episode_rollout(&model, &scene, 1, policy, 5, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(ones(&one[0].state.mask), 9);

        let steps = episode_rollout(&model, &scene, 4, policy, 5, 3).unwrap();
        assert_eq!(steps.len(), 4);
        for pair in steps.windows(2) {
            let (a, b) = (&pair[0].state.mask, &pair[1].state.mask);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x <= y));
        }
        for (t, s) in steps.iter().enumerate() {
            assert_eq!(s.state.t, t + 1);
        }
        assert_eq!(steps, episode_rollout(&model, &scene, 4, policy, 5, 3).unwrap());
    }
    // Same seed, same first glimpse for both policies.
    let u = episode_rollout(&model, &scene, 1, Policy::Uncertainty, 5, 8).unwrap();
    let r = episode_rollout(&model, &scene, 1, Policy::Random, 5, 8).unwrap();
    assert_eq!(u, r);
    assert!(episode_rollout(&model, &scene, 0, Policy::Random, 5, 3).is_err());
}
