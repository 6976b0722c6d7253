use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0006,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, one buffer per parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        Self::with_shapes(config, &shapes)
    }

    pub fn with_shapes(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update over parallel slice lists.
///
/// Gradients are checked for finiteness before anything is touched, so a
/// diverged step leaves both the parameters and the state unchanged.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameter slices, {} gradient slices, {} moment slices",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(Error::DimensionMismatch(format!(
                "slice {k} length differs"
            )));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient at slice {k} index {i}"
            )));
        }
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(theta: &mut f64, g: f64, state: &mut AdamState) -> Result<()> {
        let mut p = [*theta];
        adam_step(&mut [&mut p[..]], &[&[g][..]], state)?;
        *theta = p[0];
        Ok(())
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut state = AdamState::with_shapes(AdamConfig::default(), &[1]);
        let mut theta = 0.0;
        step_scalar(&mut theta, 1.0, &mut state).unwrap();
        // m_hat = 1, v_hat = 1
        assert!((theta + 0.0006 / (1.0 + 1e-8)).abs() < 1e-18);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_on_params() {
        let mut state = AdamState::with_shapes(AdamConfig::default(), &[1]);
        let mut theta = 0.37;
        step_scalar(&mut theta, 0.0, &mut state).unwrap();
        assert_eq!(theta, 0.37);
    }

    #[test]
    fn zero_lr_is_identity() {
        let config = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::with_shapes(config, &[3]);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..10 {
            adam_step(&mut [&mut p[..]], &[&[0.5, -9.0, 1e3][..]], &mut state).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert!(state.v[0].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut state = AdamState::with_shapes(AdamConfig::default(), &[1]);
        let mut theta = 1.0f64;
        let mut reached = None;
        for step in 1..=20_000 {
            let g = 2.0 * theta;
            step_scalar(&mut theta, g, &mut state).unwrap();
            if theta.abs() < 1e-3 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "theta stalled at {theta}");
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut state = AdamState::with_shapes(AdamConfig::default(), &[2]);
        let mut p = [1.0, 2.0];
        let err = adam_step(&mut [&mut p[..]], &[&[0.1, f64::NAN][..]], &mut state).unwrap_err();
        assert!(err.to_string().contains("diverged"));
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(state.t, 0);
    }
}
