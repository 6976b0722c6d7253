use rand::Rng;

use super::{dot, ParamSet};
use crate::error::{Error, Result};

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Fully connected two-class head. `w` is `2 x in_dim` row-major; row 0 is
/// the "stable" logit, row 1 "unstable".
#[derive(Debug, Clone, PartialEq)]
pub struct FcHead {
    pub in_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl FcHead {
    pub fn zeros(in_dim: usize) -> Self {
        Self {
            in_dim,
            w: vec![0.0; 2 * in_dim],
            b: vec![0.0; 2],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut head = Self::zeros(in_dim);
        if scale > 0.0 {
            head.w
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-scale..=scale));
        }
        head
    }

    pub fn check(&self) -> Result<()> {
        if self.w.len() != 2 * self.in_dim || self.b.len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "FC head over {} inputs has {} weights and {} biases",
                self.in_dim,
                self.w.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, h: &[f64]) -> [f64; 2] {
        let (w0, w1) = self.w.split_at(self.in_dim);
        [dot(w0, h) + self.b[0], dot(w1, h) + self.b[1]]
    }
}

impl ParamSet for FcHead {
    fn slices(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Max-subtracted two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `softmax(W h + b)`.
pub fn fc_softmax(h: &[f64], head: &FcHead) -> Result<[f64; 2]> {
    head.check()?;
    if h.len() != head.in_dim {
        return Err(Error::DimensionMismatch(format!(
            "hidden vector of {} for an FC head over {}",
            h.len(),
            head.in_dim
        )));
    }
    Ok(softmax2(head.logits(h)))
}

/// `-ln max(p_y, 1e-12)`.
pub fn cross_entropy(p: [f64; 2], y: usize) -> f64 {
    -p[y].max(PROB_FLOOR).ln()
}
