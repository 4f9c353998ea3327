use std::f64::consts::PI;

use imago::diff::{finite_difference_gradient, ParamStore, Tape, Tensor};
use imago::flows::BnafInit;
use imago::rng::{chacha, standard_normal};
use imago::vae::{bernoulli_loglik, eta, reparameterize, GaussianDiag, GradientRouting, SceneVae, VaeConfig};
use imago::Error;
use proptest::prelude::*;

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

fn log_normal(z: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - 0.5 * z * z
}

fn degenerate() -> (ParamStore, SceneVae) {
    let mut store = ParamStore::new();
    let cfg = VaeConfig {
        pixels: 4,
        latent_dim: 1,
        encoder_hidden: vec![],
        decoder_hidden: vec![],
        conditioning_dim: 1,
        flow_multiplier: 1,
        flow_layers: 1,
    };
    let vae = SceneVae::new(&mut store, cfg, BnafInit::near_identity(), &mut chacha(0)).unwrap();
    let mut set = |name: &str, shape: &[usize], v: &[f64]| {
        let id = store.id(name).unwrap_or_else(|| panic!("{name}"));
        store.set_value(id, Tensor::new(shape.to_vec(), v.to_vec()).unwrap()).unwrap();
    };
    set("encoder.0.weight", &[2, 4], &[0.0; 8]);
    set("encoder.0.bias", &[2], &[0.2, -0.5]);
    set("decoder.0.weight", &[4, 1], &[1.0, -1.0, 2.0, 0.5]);
    set("decoder.0.bias", &[4], &[0.1, 0.0, -0.2, 0.3]);
    set("warp.0.free_weights", &[1, 1], &[2f64.ln()]);
    set("warp.0.bias", &[1], &[0.1]);
    set("warp.0.conditioning_map", &[1, 1], &[0.5]);
    set("unwarp.0.free_weights", &[1, 1], &[-0.3]);
    set("unwarp.0.bias", &[1], &[-0.2]);
    set("unwarp.0.conditioning_map", &[1, 1], &[1.0]);
    (store, vae)
}

#[test]
fn degenerate_model_matches_hand_computation() {
    let (store, vae) = degenerate();
    let scene = [1.0, 0.0, 1.0, 0.0];
    let mask = [1.0, 1.0, 0.0, 0.0];
    let (h, e_post, e_prior) = (0.4, 0.7, -1.1);
    let terms = vae
        .timestep_objective(
            &store,
            &Tensor::vector(scene.to_vec()),
            &Tensor::vector(vec![h]),
            &Tensor::vector(mask.to_vec()),
            &Tensor::vector(vec![e_post]),
            &Tensor::vector(vec![e_prior]),
        )
        .unwrap();

    // Independent evaluation of every term.
    let (mu, lv): (f64, f64) = (0.2, -0.5);
    let z0 = mu + (0.5 * lv).exp() * e_post;
    let log_q = -0.5 * (2.0 * PI).ln() - 0.5 * lv - (z0 - mu).powi(2) / (2.0 * lv.exp());
    let warp = |z: f64| 2.0 * z + 0.1 + 0.5 * h;
    let unwarp = |z: f64| (-0.3f64).exp() * z - 0.2 + 1.0 * h;
    let (ld1, ld2) = (2f64.ln(), -0.3);
    let decode = |z: f64| [1.0 * z + 0.1, -z, 2.0 * z - 0.2, 0.5 * z + 0.3];
    let loglik = |logits: [f64; 4], m: [f64; 4]| -> f64 {
        (0..4)
            .map(|i| -m[i] * (scene[i] * softplus(-logits[i]) + (1.0 - scene[i]) * softplus(logits[i])))
            .sum()
    };
    let zk = warp(z0);
    let z_big = unwarp(zk);
    let t1 = loglik(decode(z_big), [1.0; 4]);
    let t2 = log_q - ld1 - ld2 - log_normal(z_big);
    let t3 = log_q - ld1 - log_normal(zk);
    let zp = unwarp(e_prior);
    let t4 = 2.0 * loglik(decode(zp), mask);
    let t5 = log_normal(e_prior) - ld2 - log_normal(zp);
    let total = t1 - t2 - t3 + t4 - t5;

    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    for (got, want) in terms.as_array().iter().zip([t1, t2, t3, t4, t5]) {
        assert!(rel(*got, want) <= 1e-10, "{got} vs {want}");
    }
    assert!(rel(terms.total, total) <= 1e-10);
}

#[test]
fn eta_examples() {
    let mut m = vec![0.0; 784];
    m[..64].iter_mut().for_each(|v| *v = 1.0);
    assert_eq!(eta(&m).unwrap(), 12.25);
    m[..96].iter_mut().for_each(|v| *v = 1.0);
    assert!((eta(&m).unwrap() - 784.0 / 96.0).abs() < 1e-12);
    assert_eq!(eta(&[1.0; 9]).unwrap(), 1.0);
    assert!(matches!(eta(&[0.0; 4]), Err(Error::Contract(_))));
}

#[test]
fn empty_mask_is_a_contract_error() {
    let (store, vae) = degenerate();
    let z = Tensor::vector(vec![0.0]);
    let r = vae.timestep_objective(&store, &Tensor::vector(vec![1.0; 4]), &z, &Tensor::zeros([4]), &z, &z);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn reparameterization_sample_mean() {
    let q = GaussianDiag {
        mean: Tensor::vector(vec![0.5, -1.0]),
        log_variance: Tensor::vector(vec![0.0, 2.0f64.ln()]),
    };
    let n = 100_000;
    let mut rng = chacha(3);
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let z = reparameterize(&q, &Tensor::vector(standard_normal(&mut rng, 2))).unwrap();
        sum[0] += z.data()[0];
        sum[1] += z.data()[1];
    }
    for (i, sd) in [1.0, 2f64.sqrt()].iter().enumerate() {
        let m = sum[i] / n as f64;
        assert!((m - q.mean.data()[i]).abs() <= 3.0 * sd / (n as f64).sqrt());
    }
}

#[test]
fn split_routing_only_changes_what_reaches_the_features() {
    // In split mode `h` is cut out of t1/t2, so d/dh of the routed loss
    // equals d/dh of −(−t3 + t4 − t5) alone, and every parameter gradient
    // matches the full objective.
    let mut store = ParamStore::new();
    let cfg = VaeConfig {
        pixels: 6,
        latent_dim: 2,
        encoder_hidden: vec![5],
        decoder_hidden: vec![5],
        conditioning_dim: 3,
        flow_multiplier: 2,
        flow_layers: 2,
    };
    let vae = SceneVae::new(&mut store, cfg, BnafInit::training(), &mut chacha(1)).unwrap();
    let scene = Tensor::new([1, 6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let mask = Tensor::new([1, 6], vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let hv = Tensor::new([1, 3], vec![0.3, -0.2, 0.8]).unwrap();
    let n1 = Tensor::new([1, 2], vec![0.4, -0.9]).unwrap();
    let n2 = Tensor::new([1, 2], vec![-0.3, 1.2]).unwrap();
    let run = |routing| {
        let mut tape = Tape::new();
        let x = tape.input(scene.clone());
        let q = vae.encode_vars(&mut tape, &store, x).unwrap();
        let h = tape.variable(hv.clone());
        let v = vae.timestep_terms(&mut tape, &store, q, &scene, h, &mask, &n1, &n2, routing).unwrap();
        let adj = tape.adjoints(v.total, &Tensor::scalar(1.0)).unwrap();
        let params: Vec<Tensor> = store.ids().map(|id| adj.wrt(tape.param(&store, id))).collect();
        (adj.wrt(h), params)
    };
    let (h_full, p_full) = run(GradientRouting::Full);
    let (h_split, p_split) = run(GradientRouting::Split);
    for (a, b) in p_full.iter().zip(&p_split) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
    // Finite differences on h of the conditional terms only.
    let conditional = |h: &[f64]| -> f64 {
        let t = vae
            .timestep_objective(
                &store,
                &scene.clone().reshape([6]).unwrap(),
                &Tensor::vector(h.to_vec()),
                &mask.clone().reshape([6]).unwrap(),
                &n1.clone().reshape([2]).unwrap(),
                &n2.clone().reshape([2]).unwrap(),
            )
            .unwrap();
        -t.t3_kl_conditional_posterior + t.t4_masked_recon - t.t5_kl_conditional_prior
    };
    for j in 0..3 {
        let mut hp = hv.data().to_vec();
        let mut hm = hp.clone();
        hp[j] += 1e-5;
        hm[j] -= 1e-5;
        let fd = (conditional(&hp) - conditional(&hm)) / 2e-5;
        let got = h_split.data()[j];
        assert!((got - fd).abs() <= 1e-4 * fd.abs().max(got.abs()).max(1e-3), "{got} vs {fd}");
    }
    assert_ne!(h_full.data(), h_split.data());
}

#[test]
fn objective_gradient_on_toy_model_matches_finite_differences() {
    let mut store = ParamStore::new();
    let cfg = VaeConfig {
        pixels: 4,
        latent_dim: 2,
        encoder_hidden: vec![3],
        decoder_hidden: vec![3],
        conditioning_dim: 2,
        flow_multiplier: 2,
        flow_layers: 3,
    };
    let vae = SceneVae::new(&mut store, cfg, BnafInit::training(), &mut chacha(4)).unwrap();
    let scene = Tensor::new([1, 4], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mask = Tensor::new([1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let h = Tensor::new([1, 2], vec![0.5, -0.5]).unwrap();
    let n1 = Tensor::new([1, 2], vec![0.1, 0.9]).unwrap();
    let n2 = Tensor::new([1, 2], vec![-1.0, 0.2]).unwrap();
    let program = |t: &mut Tape, s: &ParamStore| {
        let x = t.input(scene.clone());
        let q = vae.encode_vars(t, s, x)?;
        let hv = t.input(h.clone());
        let v = vae.timestep_terms(t, s, q, &scene, hv, &mask, &n1, &n2, GradientRouting::Full)?;
        t.sum(v.total, None)
    };
    store.zero_grads();
    let mut tape = Tape::new();
    let out = program(&mut tape, &store).unwrap();
    tape.backward(out, &Tensor::scalar(1.0), &mut store).unwrap();
    let analytic: Vec<Tensor> = store.ids().map(|id| store.grad(id).clone()).collect();
    let numeric = finite_difference_gradient(&mut store, None, 1e-5, program).unwrap();
    for (id, fd) in numeric {
        for (a, b) in analytic[id.index()].data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= (1e-4 * a.abs().max(b.abs())).max(1e-7), "{}: {a} vs {b}", store.get(id).name);
        }
    }
}

proptest! {
    #[test]
    fn bernoulli_loglik_is_nonpositive(
        x in prop::collection::vec(0.0f64..=1.0, 5),
        l in prop::collection::vec(-30.0f64..30.0, 5),
        m in prop::collection::vec(0.0f64..=1.0, 5),
    ) {
        let v = bernoulli_loglik(&Tensor::vector(x), &Tensor::vector(l), Some(&Tensor::vector(m))).unwrap();
        prop_assert!(v <= 0.0);
    }

    #[test]
    fn eta_is_at_least_one(mask in prop::collection::vec(prop::bool::ANY, 1..50)) {
        let m: Vec<f64> = mask.iter().map(|&b| b as u8 as f64).collect();
        match eta(&m) {
            Ok(e) => {
                prop_assert!(e >= 1.0);
                prop_assert_eq!(e == 1.0, mask.iter().all(|&b| b));
            }
            Err(_) => prop_assert!(mask.iter().all(|&b| !b)),
        }
    }
}
