//! Finite-difference oracles used to certify recorded gradients.

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Run `program` against `store` on a fresh tape.
pub fn forward<F>(store: &ParamStore, program: F) -> Result<(Tensor, Tape, Var)>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = program(&mut tape, store)?;
    Ok((tape.value(out).clone(), tape, out))
}

fn scalar_output<F>(store: &ParamStore, program: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let (value, _, _) = forward(store, program)?;
    if value.len() != 1 {
        return Err(Error::contract(format!(
            "finite differences need a scalar program, output has shape {:?}",
            value.shape()
        )));
    }
    Ok(value.item())
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h` for every coordinate of the
/// listed parameters (all parameters when `ids` is `None`).
///
/// The store is perturbed in place and restored bit-exactly afterwards.
pub fn finite_difference_gradient<F>(
    store: &mut ParamStore,
    ids: Option<&[ParamId]>,
    step: f64,
    program: F,
) -> Result<Vec<(ParamId, Tensor)>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::contract(format!("finite-difference step {step} outside [1e-7, 1e-3]")));
    }
    // Fail fast on non-scalar programs.
    scalar_output(store, &program)?;
    let ids: Vec<ParamId> = match ids {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).len();
        let mut grad = Tensor::zeros(store.value(id).shape().to_vec());
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + step;
            let plus = scalar_output(store, &program);
            store.value_mut(id).data_mut()[j] = orig - step;
            let minus = scalar_output(store, &program);
            store.value_mut(id).data_mut()[j] = orig;
            grad.data_mut()[j] = (plus? - minus?) / (2.0 * step);
        }
        out.push((id, grad));
    }
    Ok(out)
}

/// Central-difference Jacobian of a vector function, `[outputs × inputs]`.
pub fn numeric_jacobian(f: impl Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64], step: f64) -> Result<Tensor> {
    let rows = f(x)?.len();
    let cols = x.len();
    let mut jac = vec![0.0; rows * cols];
    let mut probe = x.to_vec();
    for j in 0..cols {
        probe[j] = x[j] + step;
        let plus = f(&probe)?;
        probe[j] = x[j] - step;
        let minus = f(&probe)?;
        probe[j] = x[j];
        for i in 0..rows {
            jac[i * cols + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Tensor::new([rows, cols], jac)
}

/// `|a − b| ≤ max(rel · max(|a|, |b|), floor)`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(floor)
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub coordinates: usize,
    pub failures: Vec<String>,
    /// Largest `|a − b| / max(|a|, |b|, floor)` seen.
    pub worst_relative: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare tape gradients against central differences for every parameter
/// coordinate of a scalar program.
pub fn check_gradients<F>(store: &mut ParamStore, step: f64, rel: f64, floor: f64, program: F) -> Result<GradientReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let (_, tape, out) = forward(store, &program)?;
    tape.backward(out, &Tensor::scalar(1.0), store)?;
    let analytic: Vec<Tensor> = store.ids().map(|id| store.grad(id).clone()).collect();
    let numeric = finite_difference_gradient(store, None, step, &program)?;

    let mut report = GradientReport {
        coordinates: 0,
        failures: Vec::new(),
        worst_relative: 0.0,
    };
    for (id, fd) in numeric {
        let ad = &analytic[id.index()];
        for (j, (&a, &b)) in ad.data().iter().zip(fd.data()).enumerate() {
            report.coordinates += 1;
            let scale = a.abs().max(b.abs()).max(floor);
            report.worst_relative = report.worst_relative.max((a - b).abs() / scale);
            if !close(a, b, rel, floor) {
                report
                    .failures
                    .push(format!("{}[{j}]: tape {a:.12e} vs finite difference {b:.12e}", store.get(id).name));
            }
        }
    }
    Ok(report)
}
