//! From-scratch sequence-model numerics in double precision.
//!
//! Parameters live in plain `Vec<f64>` buffers so the optimizer, the gradient
//! checker and the checkpoint writer can treat every model as an ordered list
//! of slices (see [`ParamSet`]).

mod adam;
mod ddouble;
mod dense;
mod gradcheck;
mod lstm;

pub use adam::{adam_step, AdamConfig, AdamState};
pub(crate) use ddouble::Dd;
pub use dense::{cross_entropy, fc_softmax, softmax2, FcHead, PROB_FLOOR};
pub use gradcheck::{compare_gradient, grad_check, Objective};
pub use lstm::{lstm_forward, lstm_step, LstmParams, LstmState, LstmTrace};

use crate::error::{Error, Result};

/// Row-major `rows x cols` sequence of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SeqMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot form a {rows}x{cols} sequence",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|t| self.data[t * self.cols + j])
            .collect()
    }

    /// First `rows` rows.
    pub fn prefix(&self, rows: usize) -> SeqMatrix {
        let rows = rows.min(self.rows);
        SeqMatrix {
            rows,
            cols: self.cols,
            data: self.data[..rows * self.cols].to_vec(),
        }
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeqMatrix {
        SeqMatrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Column-wise concatenation of equally long sequences.
    pub fn hconcat(parts: &[&SeqMatrix]) -> Result<SeqMatrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::DimensionMismatch("row counts differ".into()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for t in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(t));
            }
        }
        Ok(SeqMatrix { rows, cols, data })
    }
}

/// An ordered collection of parameter buffers.
///
/// Gradients of a model are stored in a value of the same type, so the two
/// slice lists line up index by index.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn hconcat_orders_columns() {
        let a = SeqMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let b = SeqMatrix::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = SeqMatrix::hconcat(&[&b, &a]).unwrap();
        assert_eq!(c.as_slice(), &[3.0, 4.0, 1.0, 5.0, 6.0, 2.0]);
        assert_eq!(c.column(2), vec![1.0, 2.0]);
    }
}
