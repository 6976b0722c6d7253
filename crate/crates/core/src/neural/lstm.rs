use rand::Rng;

use super::{axpy, dot, sigmoid, ParamSet, SeqMatrix};
use crate::error::{Error, Result};

/// Gate blocks are stacked in the order input, forget, output, candidate.
const GATES: usize = 4;

/// Weights of one LSTM layer.
///
/// `w` is `4*hidden x (input + hidden)` row-major: rows `0..H` are the input
/// gate, `H..2H` forget, `2H..3H` output, `3H..4H` candidate. Each row reads
/// the concatenation `[x; h_prev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w: vec![0.0; GATES * hidden_dim * (input_dim + hidden_dim)],
            b: vec![0.0; GATES * hidden_dim],
        }
    }

    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn uniform<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        if scale > 0.0 {
            p.w.iter_mut()
                .for_each(|x| *x = rng.random_range(-scale..=scale));
        }
        p
    }

    pub fn row_len(&self) -> usize {
        self.input_dim + self.hidden_dim
    }

    pub fn check(&self) -> Result<()> {
        let rows = GATES * self.hidden_dim;
        if self.w.len() != rows * self.row_len() || self.b.len() != rows {
            return Err(Error::DimensionMismatch(format!(
                "LSTM({}, {}) expects {} weights and {} biases, found {} and {}",
                self.input_dim,
                self.hidden_dim,
                rows * self.row_len(),
                rows,
                self.w.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// One cell update. `z` is scratch of length `input + hidden`, `gates` of
    /// length `4*hidden` and receives post-activation gate values.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step_into(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        z: &mut [f64],
        gates: &mut [f64],
        c_out: &mut [f64],
        h_out: &mut [f64],
    ) {
        let hd = self.hidden_dim;
        let cols = self.row_len();
        z[..self.input_dim].copy_from_slice(x);
        z[self.input_dim..].copy_from_slice(h_prev);
        for (r, (g, row)) in gates.iter_mut().zip(self.w.chunks_exact(cols)).enumerate() {
            let pre = dot(row, z) + self.b[r];
            *g = if r < 3 * hd { sigmoid(pre) } else { pre.tanh() };
        }
        let (i, rest) = gates.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (o, g) = rest.split_at(hd);
        for j in 0..hd {
            let c = f[j] * c_prev[j] + i[j] * g[j];
            c_out[j] = c;
            h_out[j] = o[j] * c.tanh();
        }
    }

    /// Accumulates gradients from a cached forward pass.
    ///
    /// `dh` holds the upstream gradient on each step's hidden output
    /// (`n x hidden`); recurrent contributions are added internally.
    pub(crate) fn backward_into(&self, trace: &LstmTrace, dh: &[f64], grads: &mut LstmParams) {
        let hd = self.hidden_dim;
        let cols = self.row_len();
        let n = trace.len();
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dpre = vec![0.0; GATES * hd];
        let mut dz = vec![0.0; cols];
        let zero = vec![0.0; hd];
        for t in (0..n).rev() {
            let gates = trace.gates(t);
            let c = trace.c(t);
            let c_prev = if t == 0 { &zero[..] } else { trace.c(t - 1) };
            let z = trace.z(t);
            for j in 0..hd {
                let (i, f, o, g) = (
                    gates[j],
                    gates[hd + j],
                    gates[2 * hd + j],
                    gates[3 * hd + j],
                );
                let dh_total = dh[t * hd + j] + dh_next[j];
                let tc = c[j].tanh();
                let d_o = dh_total * tc;
                let dc = dh_total * o * (1.0 - tc * tc) + dc_next[j];
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * c_prev[j];
                dc_next[j] = dc * f;
                dpre[j] = d_i * i * (1.0 - i);
                dpre[hd + j] = d_f * f * (1.0 - f);
                dpre[2 * hd + j] = d_o * o * (1.0 - o);
                dpre[3 * hd + j] = d_g * (1.0 - g * g);
            }
            dz.fill(0.0);
            for (r, &d) in dpre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.w[r * cols..(r + 1) * cols];
                axpy(d, row, &mut dz);
                axpy(d, z, &mut grads.w[r * cols..(r + 1) * cols]);
                grads.b[r] += d;
            }
            dh_next.copy_from_slice(&dz[self.input_dim..]);
        }
    }
}

impl ParamSet for LstmParams {
    fn slices(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Cached forward pass over a sequence, enough to run BPTT.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    input_dim: usize,
    hidden_dim: usize,
    z: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.h.len() / self.hidden_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn h(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden_dim..(t + 1) * self.hidden_dim]
    }

    pub fn c(&self, t: usize) -> &[f64] {
        &self.c[t * self.hidden_dim..(t + 1) * self.hidden_dim]
    }

    fn gates(&self, t: usize) -> &[f64] {
        let w = GATES * self.hidden_dim;
        &self.gates[t * w..(t + 1) * w]
    }

    fn z(&self, t: usize) -> &[f64] {
        let w = self.input_dim + self.hidden_dim;
        &self.z[t * w..(t + 1) * w]
    }

    pub fn state(&self, t: usize) -> LstmState {
        LstmState {
            h: self.h(t).to_vec(),
            c: self.c(t).to_vec(),
        }
    }

    pub fn states(&self) -> Vec<LstmState> {
        (0..self.len()).map(|t| self.state(t)).collect()
    }

    pub fn final_h(&self) -> &[f64] {
        self.h(self.len() - 1)
    }
}

/// `i,f,o = sigmoid(W[x;h]+b)`, `g = tanh(..)`, `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step(x: &[f64], state: &LstmState, params: &LstmParams) -> Result<LstmState> {
    params.check()?;
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, LSTM expects {}",
            x.len(),
            params.input_dim
        )));
    }
    if state.h.len() != params.hidden_dim || state.c.len() != params.hidden_dim {
        return Err(Error::DimensionMismatch(
            "state size differs from hidden size".into(),
        ));
    }
    let hd = params.hidden_dim;
    let mut z = vec![0.0; params.row_len()];
    let mut gates = vec![0.0; GATES * hd];
    let mut next = LstmState::zeros(hd);
    params.step_into(
        x,
        &state.h,
        &state.c,
        &mut z,
        &mut gates,
        &mut next.c,
        &mut next.h,
    );
    Ok(next)
}

/// Runs the cell from a zero state over every row of `seq`.
pub fn lstm_forward(seq: &SeqMatrix, params: &LstmParams) -> Result<LstmTrace> {
    params.check()?;
    if seq.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if seq.cols() != params.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "sequence has {} features, LSTM expects {}",
            seq.cols(),
            params.input_dim
        )));
    }
    let n = seq.rows();
    let hd = params.hidden_dim;
    let cols = params.row_len();
    let mut trace = LstmTrace {
        input_dim: params.input_dim,
        hidden_dim: hd,
        z: vec![0.0; n * cols],
        gates: vec![0.0; n * GATES * hd],
        c: vec![0.0; n * hd],
        h: vec![0.0; n * hd],
    };
    let zero = vec![0.0; hd];
    for t in 0..n {
        let (h_done, h_rest) = trace.h.split_at_mut(t * hd);
        let (c_done, c_rest) = trace.c.split_at_mut(t * hd);
        let (h_prev, c_prev) = if t == 0 {
            (&zero[..], &zero[..])
        } else {
            (&h_done[(t - 1) * hd..], &c_done[(t - 1) * hd..])
        };
        params.step_into(
            seq.row(t),
            h_prev,
            c_prev,
            &mut trace.z[t * cols..(t + 1) * cols],
            &mut trace.gates[t * GATES * hd..(t + 1) * GATES * hd],
            &mut c_rest[..hd],
            &mut h_rest[..hd],
        );
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_gives_half_gates_and_zero_state() {
        let p = LstmParams::zeros(3, 4);
        let s = lstm_step(&[0.0; 3], &LstmState::zeros(4), &p).unwrap();
        assert_eq!(s.h, vec![0.0; 4]);
        assert_eq!(s.c, vec![0.0; 4]);
    }

    #[test]
    fn scalar_cell_hand_evaluation() {
        // f = 0.5, i = 0.5, g = 0, o = 0.5: c' = 0.5, h' = 0.5 * tanh(0.5)
        let p = LstmParams::zeros(1, 1);
        let state = LstmState {
            h: vec![0.0],
            c: vec![1.0],
        };
        let s = lstm_step(&[7.3], &state, &p).unwrap();
        assert_eq!(s.c, vec![0.5]);
        assert!((s.h[0] - 0.231_058_578_630_005).abs() < 1e-12);
    }

    #[test]
    fn outputs_bounded_over_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let (i, h) = (rng.random_range(1..5), rng.random_range(1..6));
            let mut p = LstmParams::uniform(i, h, 3.0, &mut rng);
            p.b.iter_mut()
                .for_each(|b| *b = rng.random_range(-3.0..3.0));
            let state = LstmState {
                h: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
                c: (0..h).map(|_| rng.random_range(-10.0..10.0)).collect(),
            };
            let x: Vec<f64> = (0..i).map(|_| rng.random_range(-100.0..100.0)).collect();
            let s = lstm_step(&x, &state, &p).unwrap();
            assert!(s.h.iter().all(|v| v.abs() < 1.0));
            assert!(s.c.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_step(&[0.0], &LstmState::zeros(3), &p).is_err());
        assert!(lstm_step(&[0.0, 0.0], &LstmState::zeros(2), &p).is_err());
        let seq = SeqMatrix::zeros(4, 1);
        assert!(lstm_forward(&seq, &p).is_err());
        assert!(matches!(
            lstm_forward(&SeqMatrix::zeros(0, 2), &p),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn forward_of_one_row_is_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmParams::uniform(2, 3, 0.5, &mut rng);
        let seq = SeqMatrix::new(1, 2, vec![0.3, -0.8]).unwrap();
        let trace = lstm_forward(&seq, &p).unwrap();
        let s = lstm_step(&[0.3, -0.8], &LstmState::zeros(3), &p).unwrap();
        assert_eq!(trace.state(0), s);
        assert_eq!(trace.final_h(), s.h.as_slice());
    }

    #[test]
    fn zero_params_give_zero_final_hidden() {
        let p = LstmParams::zeros(2, 5);
        let seq = SeqMatrix::new(3, 2, vec![1.0, 2.0, -3.0, 4.0, 9.0, 0.1]).unwrap();
        assert_eq!(lstm_forward(&seq, &p).unwrap().final_h(), &[0.0; 5]);
    }

    #[test]
    fn prefix_states_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = LstmParams::uniform(3, 4, 0.4, &mut rng);
        let data: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = SeqMatrix::new(10, 3, data).unwrap();
        let full = lstm_forward(&seq, &p).unwrap().states();
        for k in 1..=10 {
            let part = lstm_forward(&seq.prefix(k), &p).unwrap().states();
            assert_eq!(part[..], full[..k]);
        }
    }

    #[test]
    fn forward_matches_repeated_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LstmParams::uniform(2, 3, 0.6, &mut rng);
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = SeqMatrix::new(6, 2, data).unwrap();
        let trace = lstm_forward(&seq, &p).unwrap();
        let mut s = LstmState::zeros(3);
        for t in 0..6 {
            s = lstm_step(seq.row(t), &s, &p).unwrap();
            assert_eq!(trace.state(t), s);
        }
    }
}
