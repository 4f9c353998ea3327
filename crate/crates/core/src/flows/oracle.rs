//! Independent numerical checks for flows: dense Jacobians, determinants and
//! coordinate-wise inversion.

use super::ConditionalBnaf;
use crate::diff::{numeric_jacobian, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Central-difference Jacobian `∂f(z)/∂z` of the flow at one point (`d ≤ 8`).
pub fn numeric_jacobian_oracle(
    flow: &ConditionalBnaf,
    store: &ParamStore,
    z: &[f64],
    conditioning: Option<&[f64]>,
    step: f64,
) -> Result<Tensor> {
    if z.len() > 8 {
        return Err(Error::contract("numeric Jacobian oracle is for d ≤ 8"));
    }
    numeric_jacobian(
        |x| Ok(flow.transform(store, x, conditioning)?.output.into_data()),
        z,
        step,
    )
}

/// `log |det M|` by LU decomposition with partial pivoting.
pub fn dense_log_abs_det(m: &Tensor) -> f64 {
    let n = m.shape()[0];
    assert_eq!(m.shape(), [n, n], "square matrix expected");
    let mut a = m.data().to_vec();
    let mut log_det = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty");
        if a[pivot * n + col] == 0.0 {
            return f64::NEG_INFINITY;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
        }
        let p = a[col * n + col];
        log_det += p.abs().ln();
        for r in col + 1..n {
            let factor = a[r * n + col] / p;
            for k in col..n {
                a[r * n + k] -= factor * a[col * n + k];
            }
        }
    }
    log_det
}

/// Invert a flow point-wise by bisection, one coordinate at a time.
///
/// Each output coordinate `i` is increasing in `z_i` once `z_<i` is fixed, so
/// solving coordinates in order recovers `z`. Rows whose target lies outside
/// `f`'s range on `[-bound, bound]` come back as `None`.
pub fn invert_by_bisection(
    flow: &ConditionalBnaf,
    store: &ParamStore,
    targets: &Tensor,
    conditioning: Option<&Tensor>,
    bound: f64,
) -> Result<Vec<Option<Vec<f64>>>> {
    let d = flow.latent_dim();
    let rows = targets.shape()[0];
    if targets.shape() != [rows, d] {
        return Err(Error::shape("invert_by_bisection", format!("{:?}", targets.shape())));
    }
    let y = targets.data();
    let mut z = vec![0.0; rows * d];
    let mut valid = vec![true; rows];
    let eval = |z: &[f64]| -> Result<Vec<f64>> {
        let (out, _) = flow.transform_batch(store, &Tensor::new([rows, d], z.to_vec())?, conditioning)?;
        Ok(out.into_data())
    };
    for i in 0..d {
        let mut lo = vec![-bound; rows];
        let mut hi = vec![bound; rows];
        let set = |z: &mut [f64], vals: &[f64]| {
            for (r, v) in vals.iter().enumerate() {
                z[r * d + i] = *v;
            }
        };
        set(&mut z, &lo);
        let f_lo = eval(&z)?;
        set(&mut z, &hi);
        let f_hi = eval(&z)?;
        for r in 0..rows {
            let t = y[r * d + i];
            if t < f_lo[r * d + i] || t > f_hi[r * d + i] {
                valid[r] = false;
            }
        }
        for _ in 0..100 {
            let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
            set(&mut z, &mid);
            let f_mid = eval(&z)?;
            for r in 0..rows {
                if f_mid[r * d + i] < y[r * d + i] {
                    lo[r] = mid[r];
                } else {
                    hi[r] = mid[r];
                }
            }
        }
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        set(&mut z, &mid);
    }
    Ok((0..rows)
        .map(|r| valid[r].then(|| z[r * d..(r + 1) * d].to_vec()))
        .collect())
}
