//! Dense building blocks shared by the encoder, decoder, recurrent extractor and probe.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// `y = x · Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights and biases uniform in `±1/√in`.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        let b: Vec<f64> = (0..out_dim).map(|_| dist.sample(rng)).collect();
        let weight = store.insert(format!("{name}.weight"), Tensor::new([out_dim, in_dim], w)?)?;
        let bias = store.insert(format!("{name}.bias"), Tensor::new([out_dim], b)?)?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.affine(x, w, b)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).data_mut().fill(0.0);
        store.value_mut(self.bias).data_mut().fill(0.0);
    }
}

/// Affine layers with tanh between them; the last layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Gated recurrent cell:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// n = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_update: Linear,
    pub input_reset: Linear,
    pub input_candidate: Linear,
    pub hidden_update: Linear,
    pub hidden_reset: Linear,
    pub hidden_candidate: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut lin = |part: &str, i: usize| Linear::new(store, &format!("{name}.{part}"), i, hidden_dim, rng);
        Ok(GruCell {
            input_update: lin("wz", in_dim)?,
            input_reset: lin("wr", in_dim)?,
            input_candidate: lin("wn", in_dim)?,
            hidden_update: lin("uz", hidden_dim)?,
            hidden_reset: lin("ur", hidden_dim)?,
            hidden_candidate: lin("un", hidden_dim)?,
            hidden_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let zx = self.input_update.forward(tape, store, x)?;
        let zh = self.hidden_update.forward(tape, store, h)?;
        let z_pre = tape.add(zx, zh)?;
        let z = tape.sigmoid(z_pre)?;

        let rx = self.input_reset.forward(tape, store, x)?;
        let rh = self.hidden_reset.forward(tape, store, h)?;
        let r_pre = tape.add(rx, rh)?;
        let r = tape.sigmoid(r_pre)?;

        let rh = tape.mul(r, h)?;
        let nx = self.input_candidate.forward(tape, store, x)?;
        let nh = self.hidden_candidate.forward(tape, store, rh)?;
        let n_pre = tape.add(nx, nh)?;
        let n = tape.tanh(n_pre)?;

        let keep = tape.one_minus(z)?;
        let fresh = tape.mul(keep, n)?;
        let carried = tape.mul(z, h)?;
        tape.add(fresh, carried)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for l in [
            &self.input_update,
            &self.input_reset,
            &self.input_candidate,
            &self.hidden_update,
            &self.hidden_reset,
            &self.hidden_candidate,
        ] {
            l.zero(store);
        }
    }
}
