//! Conditional block neural autoregressive flows.
//!
//! A flow is a stack of block-masked affine layers with tanh between them.
//! With `d` latent coordinates every layer's weight is a `d × d` grid of
//! blocks: diagonal blocks are `exp(free)` (strictly positive), strictly-lower
//! blocks are free, upper blocks are zero. The end-to-end Jacobian is then
//! lower triangular with a positive diagonal, and its log-determinant is the
//! sum over coordinates of the log of the product of diagonal blocks, which we
//! chain in log space with `logsumexp`.
//!
//! A conditioning vector enters every layer additively through its own
//! `conditioning_map`, so it shifts pre-activations without touching the
//! Jacobian structure with respect to the latent input.

mod oracle;

pub use oracle::{dense_log_abs_det, invert_by_bisection, numeric_jacobian_oracle};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnafConfig {
    pub latent_dim: usize,
    /// Hidden width per block; hidden layers have `hidden_multiplier · latent_dim` units.
    pub hidden_multiplier: usize,
    /// Number of block-masked affine layers (tanh between consecutive ones).
    pub num_layers: usize,
    /// Width of the conditioning vector; 0 for an unconditional flow.
    pub conditioning_dim: usize,
}

impl BnafConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_multiplier == 0 || self.num_layers == 0 {
            return Err(Error::contract(format!("invalid flow config {self:?}")));
        }
        Ok(())
    }

    fn block_sizes(&self, layer: usize) -> (usize, usize) {
        let inb = if layer == 0 { 1 } else { self.hidden_multiplier };
        let outb = if layer + 1 == self.num_layers { 1 } else { self.hidden_multiplier };
        (inb, outb)
    }
}

/// Initialization around a near-identity map.
///
/// With `noise_std = 0` the flow computes `tanh(…tanh(ε z)…)/ε`, which is the
/// identity up to `O(ε²)`, and a single-layer flow is exactly the identity.
#[derive(Debug, Clone, Copy)]
pub struct BnafInit {
    pub epsilon: f64,
    pub noise_std: f64,
    pub conditioning_std: f64,
}

impl BnafInit {
    pub fn near_identity() -> Self {
        BnafInit {
            epsilon: 1e-3,
            noise_std: 0.0,
            conditioning_std: 0.0,
        }
    }

    pub fn training() -> Self {
        BnafInit {
            epsilon: 0.5,
            noise_std: 0.1,
            conditioning_std: 0.1,
        }
    }

    pub fn random(scale: f64) -> Self {
        BnafInit {
            epsilon: 0.5,
            noise_std: scale,
            conditioning_std: scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockMaskedAffine {
    pub latent_dim: usize,
    pub in_block: usize,
    pub out_block: usize,
    pub free_weights: ParamId,
    pub bias: ParamId,
    pub conditioning_map: Option<ParamId>,
    diag_mask: Tensor,
    lower_mask: Tensor,
    /// Flat positions of the diagonal-block entries, ordered `[block, out, in]`.
    diag_index: Vec<usize>,
}

/// Result of one block-masked affine layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `[batch, out_block · d]`
    pub pre_activation: Var,
    /// `[d, out_block, in_block]`, log of each diagonal-block entry.
    pub log_diag_blocks: Var,
}

impl BlockMaskedAffine {
    fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        (in_block, out_block): (usize, usize),
        conditioning_dim: usize,
    ) -> Result<Self> {
        let (rows, cols) = (out_block * d, in_block * d);
        let mut diag = vec![0.0; rows * cols];
        let mut lower = vec![0.0; rows * cols];
        let mut diag_index = Vec::with_capacity(d * out_block * in_block);
        for r in 0..rows {
            for c in 0..cols {
                let (bi, bj) = (r / out_block, c / in_block);
                if bi == bj {
                    diag[r * cols + c] = 1.0;
                } else if bi > bj {
                    lower[r * cols + c] = 1.0;
                }
            }
        }
        for b in 0..d {
            for p in 0..out_block {
                for q in 0..in_block {
                    diag_index.push((b * out_block + p) * cols + b * in_block + q);
                }
            }
        }
        let free_weights = store.insert(format!("{name}.free_weights"), Tensor::zeros([rows, cols]))?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros([rows]))?;
        let conditioning_map = if conditioning_dim > 0 {
            Some(store.insert(format!("{name}.conditioning_map"), Tensor::zeros([rows, conditioning_dim]))?)
        } else {
            None
        };
        Ok(BlockMaskedAffine {
            latent_dim: d,
            in_block,
            out_block,
            free_weights,
            bias,
            conditioning_map,
            diag_mask: Tensor::new([rows, cols], diag)?,
            lower_mask: Tensor::new([rows, cols], lower)?,
            diag_index,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_block * self.latent_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_block * self.latent_dim
    }

    pub fn diag_mask(&self) -> &Tensor {
        &self.diag_mask
    }

    pub fn lower_mask(&self) -> &Tensor {
        &self.lower_mask
    }

    /// `exp(free) ⊙ diag_mask + free ⊙ lower_mask`; upper blocks are exactly zero.
    pub fn effective_weight(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var> {
        let free = tape.param(store, self.free_weights);
        let pos = tape.exp(free)?;
        let diag = tape.mask_mul(pos, &self.diag_mask)?;
        let lower = tape.mask_mul(free, &self.lower_mask)?;
        tape.add(diag, lower)
    }

    /// `W_eff · x + conditioning_map · c + bias` and the log diagonal blocks.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, input: Var, conditioning: Option<Var>) -> Result<LayerOutput> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim() {
            return Err(Error::shape(
                "block_affine_apply",
                format!("input {shape:?}, layer expects [_, {}]", self.in_dim()),
            ));
        }
        let w = self.effective_weight(tape, store)?;
        let b = tape.param(store, self.bias);
        let mut pre = tape.affine(input, w, b)?;
        if let Some(cmap) = self.conditioning_map {
            let c = conditioning.ok_or_else(|| Error::contract("conditional layer called without conditioning"))?;
            let cshape = tape.shape(c).to_vec();
            let cdim = store.value(cmap).shape()[1];
            if cshape.len() != 2 || cshape[1] != cdim || (cshape[0] != shape[0] && cshape[0] != 1) {
                return Err(Error::shape(
                    "block_affine_apply",
                    format!("conditioning {cshape:?}, layer expects [{}, {cdim}]", shape[0]),
                ));
            }
            let cm = tape.param(store, cmap);
            let zero = tape.input(Tensor::zeros([self.out_dim()]));
            let shift = tape.affine(c, cm, zero)?;
            pre = tape.add(pre, shift)?;
        }
        let free = tape.param(store, self.free_weights);
        let log_diag_blocks = tape.gather(
            free,
            self.diag_index.clone(),
            [self.latent_dim, self.out_block, self.in_block],
        )?;
        Ok(LayerOutput {
            pre_activation: pre,
            log_diag_blocks,
        })
    }
}

/// Output of a flow on the tape: `output: [batch, d]`, `log_det: [batch]`.
#[derive(Debug, Clone, Copy)]
pub struct FlowVars {
    pub output: Var,
    pub log_det: Var,
}

/// A flow evaluated at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutput {
    pub output: Tensor,
    pub log_det: f64,
}

#[derive(Debug, Clone)]
pub struct ConditionalBnaf {
    pub config: BnafConfig,
    pub layers: Vec<BlockMaskedAffine>,
}

/// `log(1 − tanh²(u)) = 2·(log 2 − u − softplus(−2u))`.
fn log_tanh_derivative(tape: &mut Tape, u: Var) -> Result<Var> {
    let m2u = tape.scale(u, -2.0)?;
    let sp = tape.softplus(m2u)?;
    let s = tape.add(u, sp)?;
    let ns = tape.scale(s, -2.0)?;
    tape.add_scalar(ns, 2.0 * std::f64::consts::LN_2)
}

impl ConditionalBnaf {
    pub fn new(store: &mut ParamStore, name: &str, config: BnafConfig, init: BnafInit, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.num_layers)
            .map(|l| {
                BlockMaskedAffine::new(
                    store,
                    &format!("{name}.{l}"),
                    config.latent_dim,
                    config.block_sizes(l),
                    config.conditioning_dim,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let flow = ConditionalBnaf { config, layers };
        flow.initialize(store, init, rng)?;
        Ok(flow)
    }

    /// Overwrite all parameters following `init`.
    pub fn initialize(&self, store: &mut ParamStore, init: BnafInit, rng: &mut impl Rng) -> Result<()> {
        let noise = Normal::new(0.0, init.noise_std.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
        let cstd = if self.config.conditioning_dim > 0 {
            init.conditioning_std / (self.config.conditioning_dim as f64).sqrt()
        } else {
            0.0
        };
        let cnoise = Normal::new(0.0, cstd.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let diag_value: f64 = match l {
                _ if last == 0 => 1.0,
                0 => init.epsilon,
                l if l == last => 1.0 / (layer.in_block as f64 * init.epsilon),
                _ => 1.0 / layer.in_block as f64,
            };
            let base = diag_value.ln();
            let mut w = Tensor::zeros(store.value(layer.free_weights).shape().to_vec());
            for ((v, &dm), &lm) in w.data_mut().iter_mut().zip(layer.diag_mask.data()).zip(layer.lower_mask.data()) {
                if dm > 0.0 {
                    *v = base + noise.sample(rng);
                } else if lm > 0.0 {
                    *v = noise.sample(rng);
                }
            }
            store.set_value(layer.free_weights, w)?;
            let b: Vec<f64> = (0..layer.out_dim()).map(|_| noise.sample(rng)).collect();
            store.set_value(layer.bias, Tensor::new([layer.out_dim()], b)?)?;
            if let Some(cm) = layer.conditioning_map {
                let shape = store.value(cm).shape().to_vec();
                let data = (0..shape.iter().product::<usize>()).map(|_| cnoise.sample(rng)).collect();
                store.set_value(cm, Tensor::new(shape, data)?)?;
            }
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [Some(l.free_weights), Some(l.bias), l.conditioning_map])
            .flatten()
            .collect()
    }

    /// `z: [batch, d]`, `conditioning: [batch, c]` (or `[1, c]`, broadcast).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, conditioning: Option<Var>) -> Result<FlowVars> {
        let d = self.config.latent_dim;
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::shape("bnaf_transform", format!("input {shape:?}, flow dim {d}")));
        }
        let batch = shape[0];
        let last = self.layers.len() - 1;
        let mut x = z;
        // Log of the diagonal Jacobian blocks accumulated so far: [b, d, width].
        let mut log_jac: Option<Var> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let LayerOutput {
                pre_activation: u,
                log_diag_blocks,
            } = layer.apply(tape, store, x, conditioning)?;
            let (ob, ib) = (layer.out_block, layer.in_block);
            let chained = match log_jac {
                None => tape.reshape(log_diag_blocks, [1, d, ob])?,
                Some(prev) => {
                    let rows = tape.shape(prev)[0];
                    let lw = tape.reshape(log_diag_blocks, [1, d, ob, ib])?;
                    let lp = tape.reshape(prev, [rows, d, 1, ib])?;
                    let terms = tape.add(lw, lp)?;
                    tape.logsumexp(terms, 3)?
                }
            };
            if l < last {
                x = tape.tanh(u)?;
                let act = log_tanh_derivative(tape, u)?;
                let act = tape.reshape(act, [batch, d, ob])?;
                log_jac = Some(tape.add(chained, act)?);
            } else {
                x = u;
                log_jac = Some(chained);
            }
        }
        let lj = log_jac.expect("at least one layer");
        let rows = tape.shape(lj)[0];
        let per_dim = tape.reshape(lj, [rows, d])?;
        let mut log_det = tape.sum(per_dim, Some(1))?;
        if rows != batch {
            log_det = tape.broadcast_to(log_det, &[batch])?;
        }
        if !tape.value(log_det).is_finite() {
            return Err(Error::Domain {
                op: "bnaf_transform",
                detail: "non-finite log-determinant".into(),
            });
        }
        Ok(FlowVars { output: x, log_det })
    }

    /// Evaluate on plain tensors: `z: [batch, d]`, `conditioning: [batch, c]`.
    pub fn transform_batch(&self, store: &ParamStore, z: &Tensor, conditioning: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let cv = conditioning.map(|c| tape.input(c.clone()));
        let out = self.forward(&mut tape, store, zv, cv)?;
        Ok((tape.value(out.output).clone(), tape.value(out.log_det).data().to_vec()))
    }

    /// Evaluate at a single point.
    pub fn transform(&self, store: &ParamStore, z: &[f64], conditioning: Option<&[f64]>) -> Result<FlowOutput> {
        let zt = Tensor::new([1, z.len()], z.to_vec())?;
        let ct = conditioning.map(|c| Tensor::new([1, c.len()], c.to_vec())).transpose()?;
        let (out, ld) = self.transform_batch(store, &zt, ct.as_ref())?;
        Ok(FlowOutput {
            output: out.reshape([z.len()])?,
            log_det: ld[0],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityDirection {
    /// Density of the pushed-forward point: `log q(f(z)) = log p(z) − log|det J|`.
    ForwardDensity,
    /// Density of the input given the density at the output: `log p(z) = log q(f(z)) + log|det J|`.
    Pullback,
}

pub fn flow_log_density(base_logpdf: f64, flow_output: &FlowOutput, direction: DensityDirection) -> f64 {
    match direction {
        DensityDirection::ForwardDensity => base_logpdf - flow_output.log_det,
        DensityDirection::Pullback => base_logpdf + flow_output.log_det,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chacha;

    fn flow(d: usize, a: usize, layers: usize, c: usize, init: BnafInit, seed: u64) -> (ParamStore, ConditionalBnaf) {
        let mut store = ParamStore::new();
        let cfg = BnafConfig {
            latent_dim: d,
            hidden_multiplier: a,
            num_layers: layers,
            conditioning_dim: c,
        };
        let f = ConditionalBnaf::new(&mut store, "f", cfg, init, &mut chacha(seed)).unwrap();
        (store, f)
    }

    #[test]
    fn zero_weights_scalar_layer_is_identity() {
        let (store, f) = flow(1, 1, 1, 0, BnafInit::near_identity(), 0);
        let mut tape = Tape::new();
        let z = tape.input(Tensor::new([1, 1], vec![0.7]).unwrap());
        let out = f.layers[0].apply(&mut tape, &store, z, None).unwrap();
        assert_eq!(tape.value(out.pre_activation).item(), 0.7);
        assert_eq!(tape.value(out.log_diag_blocks).item(), 0.0);
    }

    #[test]
    fn zero_conditioning_matches_unconditional_layer() {
        let (sc, fc) = flow(3, 2, 2, 4, BnafInit::random(0.5), 1);
        let (mut su, fu) = flow(3, 2, 2, 0, BnafInit::near_identity(), 1);
        for (lc, lu) in fc.layers.iter().zip(&fu.layers) {
            su.set_value(lu.free_weights, sc.value(lc.free_weights).clone()).unwrap();
            su.set_value(lu.bias, sc.value(lc.bias).clone()).unwrap();
        }
        let z = [0.3, -1.2, 0.8];
        let a = fc.transform(&sc, &z, Some(&[0.0; 4])).unwrap();
        let b = fu.transform(&su, &z, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_single_block_closed_form() {
        let (mut store, f) = flow(1, 1, 1, 0, BnafInit::near_identity(), 0);
        let (w, b) = (0.4, -0.3);
        store.set_value(f.layers[0].free_weights, Tensor::new([1, 1], vec![w]).unwrap()).unwrap();
        store.set_value(f.layers[0].bias, Tensor::vector(vec![b])).unwrap();
        let out = f.transform(&store, &[1.5], None).unwrap();
        assert!((out.output.item() - (w.exp() * 1.5 + b)).abs() < 1e-15);
        assert!((out.log_det - w).abs() < 1e-15);
        let jac = numeric_jacobian_oracle(&f, &store, &[1.5], None, 1e-5).unwrap();
        assert!((jac.item() - w.exp()).abs() < 1e-9);
    }

    #[test]
    fn effective_weight_has_zero_upper_blocks_and_positive_diagonal() {
        let (store, f) = flow(3, 2, 3, 0, BnafInit::random(1.0), 5);
        for layer in &f.layers {
            let mut tape = Tape::new();
            let w = layer.effective_weight(&mut tape, &store).unwrap();
            let w = tape.value(w);
            let cols = layer.in_dim();
            for (k, v) in w.data().iter().enumerate() {
                let (r, c) = (k / cols, k % cols);
                let (bi, bj) = (r / layer.out_block, c / layer.in_block);
                if bj > bi {
                    assert_eq!(*v, 0.0);
                } else if bi == bj {
                    assert!(*v > 0.0);
                }
            }
        }
    }

    #[test]
    fn sequential_flows_add_log_dets() {
        let (s1, f1) = flow(2, 3, 2, 0, BnafInit::random(0.4), 11);
        let (s2, f2) = flow(2, 3, 2, 0, BnafInit::random(0.4), 12);
        let z = [0.25, -0.6];
        let a = f1.transform(&s1, &z, None).unwrap();
        let b = f2.transform(&s2, a.output.data(), None).unwrap();
        let composed = |x: &[f64]| -> Result<Vec<f64>> {
            let a = f1.transform(&s1, x, None)?;
            Ok(f2.transform(&s2, a.output.data(), None)?.output.into_data())
        };
        let jac = crate::diff::numeric_jacobian(composed, &z, 1e-5).unwrap();
        let numeric = dense_log_abs_det(&jac);
        assert!((a.log_det + b.log_det - numeric).abs() < 1e-7);
    }

    #[test]
    fn conditional_layer_rejects_missing_or_bad_conditioning() {
        let (store, f) = flow(2, 2, 2, 3, BnafInit::training(), 2);
        let mut tape = Tape::new();
        let z = tape.input(Tensor::zeros([4, 2]));
        assert!(f.forward(&mut tape, &store, z, None).is_err());
        let c = tape.input(Tensor::zeros([4, 2]));
        assert!(matches!(f.forward(&mut tape, &store, z, Some(c)), Err(Error::Shape { .. })));
        let bad = tape.input(Tensor::zeros([4, 3]));
        assert!(f.forward(&mut tape, &store, bad, None).is_err());
    }

    #[test]
    fn density_direction_closed_forms() {
        let base = -0.5 * (2.0 * std::f64::consts::PI).ln();
        let out = FlowOutput {
            output: Tensor::scalar(0.0),
            log_det: std::f64::consts::LN_2,
        };
        let q = flow_log_density(base, &out, DensityDirection::ForwardDensity);
        assert!((q - (base - std::f64::consts::LN_2)).abs() < 1e-15);
        let same = FlowOutput {
            output: Tensor::scalar(0.0),
            log_det: 0.0,
        };
        assert_eq!(flow_log_density(base, &same, DensityDirection::ForwardDensity), base);
        assert!((flow_log_density(q, &out, DensityDirection::Pullback) - base).abs() < 1e-15);
    }
}
