use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with explicit shape.
///
/// Every extent is positive and the element count always equals the product of
/// the shape. Scalars use shape `[1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        check_shape(&shape).expect("tensor extents must be positive");
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector needs at least one value");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; tensors have positive extents.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    /// Stack equally shaped rank-1 slices into a `[rows, width]` tensor.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::contract("from_rows needs at least one row"))?;
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::shape("from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::new([rows.len(), width], data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(
            "tensor",
            format!("extents must be positive and non-empty, got {shape:?}"),
        ));
    }
    Ok(())
}

/// How an operand maps onto a broadcast output.
#[derive(Debug, Clone)]
pub(crate) enum Broadcast {
    /// Same element count as the output.
    Same,
    /// One element repeated everywhere.
    Scalar,
    /// Operand equals the trailing dims of the output: `out[j] = in[j % len]`.
    Tail(usize),
    /// Arbitrary: `out[j] = in[map[j]]`.
    General(Vec<usize>),
}

impl Broadcast {
    pub(crate) fn source(&self, j: usize) -> usize {
        match self {
            Broadcast::Same => j,
            Broadcast::Scalar => 0,
            Broadcast::Tail(len) => j % len,
            Broadcast::General(map) => map[j],
        }
    }

    /// Sum an output-shaped cotangent back onto the operand's shape.
    pub(crate) fn reduce(&self, grad: &[f64], operand_len: usize) -> Vec<f64> {
        match self {
            Broadcast::Same => grad.to_vec(),
            Broadcast::Scalar => vec![grad.iter().sum()],
            Broadcast::Tail(len) => {
                let mut out = vec![0.0; *len];
                for chunk in grad.chunks_exact(*len) {
                    for (o, g) in out.iter_mut().zip(chunk) {
                        *o += g;
                    }
                }
                out
            }
            Broadcast::General(map) => {
                let mut out = vec![0.0; operand_len];
                for (g, &m) in grad.iter().zip(map) {
                    out[m] += g;
                }
                out
            }
        }
    }
}

/// Right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

pub(crate) fn broadcast_plan(out: &[usize], operand: &[usize]) -> Broadcast {
    let out_len: usize = out.iter().product();
    let in_len: usize = operand.iter().product();
    if in_len == out_len {
        return Broadcast::Same;
    }
    if in_len == 1 {
        return Broadcast::Scalar;
    }
    let stripped: Vec<usize> = operand.iter().copied().skip_while(|&d| d == 1).collect();
    if stripped.len() <= out.len() && out[out.len() - stripped.len()..] == stripped[..] {
        return Broadcast::Tail(in_len);
    }
    // General strided map.
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let from_right = rank - 1 - i;
        let d = dim_from_right(operand, from_right);
        strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    let mut map = Vec::with_capacity(out_len);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..out_len {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            src -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Broadcast::General(map)
}

/// Split a shape around `axis` into (outer, axis extent, inner) counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new([2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new([0], vec![]).is_err());
        assert!(Tensor::new(Vec::<usize>::new(), vec![1.0]).is_err());
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[1, 2, 1, 5], &[3, 2, 4, 1]), Some(vec![3, 2, 4, 5]));
        assert_eq!(broadcast_shape(&[4, 3], &[4]), None);
    }

    #[test]
    fn general_plan_matches_strided_indexing() {
        let out = [2, 3, 4];
        let plan = broadcast_plan(&out, &[2, 1, 4]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    let j = (a * 3 + b) * 4 + c;
                    assert_eq!(plan.source(j), a * 4 + c);
                }
            }
        }
        let plan = broadcast_plan(&out, &[3, 1]);
        assert_eq!(plan.source(1 * 12 + 2 * 4 + 3), 2);
    }
}
