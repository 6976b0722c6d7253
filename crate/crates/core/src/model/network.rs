use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{ModelInput, Variant};
use crate::error::{Error, Result};
use crate::neural::{
    cross_entropy, dot, lstm_forward, softmax2, Dd, FcHead, LstmParams, LstmTrace, Objective,
    ParamSet, PROB_FLOOR,
};

/// Class index of the "unstable" output.
pub const UNSTABLE: usize = 1;
/// Class index of the "stable" output.
pub const STABLE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Weights uniform in `[-scale, scale]` from the seed, biases zero.
    SeededUniform,
    /// Every parameter exactly zero.
    LiteralZeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Mean cross-entropy over every labeled step.
    PerStep,
    /// Cross-entropy of the last step only.
    LastStep,
}

impl LossMode {
    fn supervised(self, n: usize) -> std::ops::Range<usize> {
        match self {
            LossMode::PerStep => 0..n,
            LossMode::LastStep => n - 1..n,
        }
    }
}

/// One LSTM per feature stream, hidden states concatenated per step into a
/// shared two-class head.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork {
    pub variant: Variant,
    pub lstms: Vec<LstmParams>,
    pub head: FcHead,
}

/// Cached forward pass.
#[derive(Debug, Clone)]
pub struct NetworkPass {
    pub traces: Vec<LstmTrace>,
    /// `[p_stable, p_unstable]` per step.
    pub probs: Vec<[f64; 2]>,
}

/// Logits from the per-stream hidden vectors of one step.
#[inline]
pub(crate) fn head_logits(head: &FcHead, hs: &[&[f64]]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (c, slot) in out.iter_mut().enumerate() {
        let row = &head.w[c * head.in_dim..(c + 1) * head.in_dim];
        let mut off = 0;
        let mut z = 0.0;
        for h in hs {
            z += dot(&row[off..off + h.len()], h);
            off += h.len();
        }
        *slot = z + head.b[c];
    }
    out
}

impl LstmNetwork {
    pub fn build(
        variant: Variant,
        hidden_dim: usize,
        init: InitMode,
        init_scale: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = match init {
            InitMode::SeededUniform => init_scale,
            InitMode::LiteralZeros => 0.0,
        };
        let lstms: Vec<LstmParams> = variant
            .stream_dims()
            .into_iter()
            .map(|d| LstmParams::uniform(d, hidden_dim, scale, &mut rng))
            .collect();
        let head = FcHead::uniform(hidden_dim * lstms.len(), scale, &mut rng);
        Self {
            variant,
            lstms,
            head,
        }
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.lstms.iter().map(|l| l.hidden_dim).collect()
    }

    pub fn check(&self) -> Result<()> {
        let dims = self.variant.stream_dims();
        if dims.len() != self.lstms.len() {
            return Err(Error::DimensionMismatch(format!(
                "variant {} needs {} LSTMs, found {}",
                self.variant,
                dims.len(),
                self.lstms.len()
            )));
        }
        for (l, d) in self.lstms.iter().zip(&dims) {
            l.check()?;
            if l.input_dim != *d {
                return Err(Error::DimensionMismatch(format!(
                    "variant {} stream expects {d} inputs, LSTM has {}",
                    self.variant, l.input_dim
                )));
            }
        }
        self.head.check()?;
        let total: usize = self.hidden_dims().iter().sum();
        if self.head.in_dim != total {
            return Err(Error::DimensionMismatch(format!(
                "head reads {} values, LSTMs emit {total}",
                self.head.in_dim
            )));
        }
        Ok(())
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.streams.len() != self.lstms.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature streams for {} LSTMs",
                input.streams.len(),
                self.lstms.len()
            )));
        }
        let n = input.steps();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        for (s, l) in input.streams.iter().zip(&self.lstms) {
            if s.rows() != n {
                return Err(Error::DimensionMismatch("streams differ in length".into()));
            }
            if s.cols() != l.input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "stream has {} features, LSTM expects {}",
                    s.cols(),
                    l.input_dim
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &ModelInput) -> Result<NetworkPass> {
        self.check_input(input)?;
        let traces = input
            .streams
            .iter()
            .zip(&self.lstms)
            .map(|(s, l)| lstm_forward(s, l))
            .collect::<Result<Vec<_>>>()?;
        let probs = (0..input.steps())
            .map(|t| {
                let hs: Vec<&[f64]> = traces.iter().map(|tr| tr.h(t)).collect();
                softmax2(head_logits(&self.head, &hs))
            })
            .collect();
        Ok(NetworkPass { traces, probs })
    }

    /// Per-step probability of "unstable".
    pub fn predict_proba(&self, input: &ModelInput) -> Result<Vec<f64>> {
        Ok(self
            .forward(input)?
            .probs
            .into_iter()
            .map(|p| p[UNSTABLE])
            .collect())
    }

    fn check_labels(input: &ModelInput, labels: &[usize]) -> Result<()> {
        if labels.len() != input.steps() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} steps",
                labels.len(),
                input.steps()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("class labels must be 0 or 1".into()));
        }
        Ok(())
    }

    fn loss_of(probs: &[[f64; 2]], labels: &[usize], mode: LossMode) -> f64 {
        let range = mode.supervised(probs.len());
        let count = range.len() as f64;
        range
            .map(|t| cross_entropy(probs[t], labels[t]))
            .sum::<f64>()
            / count
    }

    pub fn loss(&self, input: &ModelInput, labels: &[usize], mode: LossMode) -> Result<f64> {
        Self::check_labels(input, labels)?;
        let pass = self.forward(input)?;
        Ok(Self::loss_of(&pass.probs, labels, mode))
    }

    /// Exact gradient of the supervised mean cross-entropy by BPTT.
    ///
    /// The gradient treats the probability floor inside the loss as inactive.
    /// Returns `(loss, gradients, forward pass)`; gradients share this
    /// network's layout.
    pub fn backward(
        &self,
        input: &ModelInput,
        labels: &[usize],
        mode: LossMode,
    ) -> Result<(f64, LstmNetwork, NetworkPass)> {
        Self::check_labels(input, labels)?;
        let pass = self.forward(input)?;
        let n = input.steps();
        let loss = Self::loss_of(&pass.probs, labels, mode);
        let mut grads = self.zeroed();
        let range = mode.supervised(n);
        let scale = 1.0 / range.len() as f64;
        let mut dh: Vec<Vec<f64>> = self
            .lstms
            .iter()
            .map(|l| vec![0.0; n * l.hidden_dim])
            .collect();
        let in_dim = self.head.in_dim;
        for t in range {
            let p = pass.probs[t];
            let dlogit = [
                (p[0] - f64::from(u8::from(labels[t] == 0))) * scale,
                (p[1] - f64::from(u8::from(labels[t] == 1))) * scale,
            ];
            grads.head.b[0] += dlogit[0];
            grads.head.b[1] += dlogit[1];
            let mut off = 0;
            for (s, trace) in pass.traces.iter().enumerate() {
                let h = trace.h(t);
                let hd = h.len();
                for (c, &d) in dlogit.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = c * in_dim + off;
                    for j in 0..hd {
                        grads.head.w[row + j] += d * h[j];
                        dh[s][t * hd + j] += d * self.head.w[row + j];
                    }
                }
                off += hd;
            }
        }
        for ((l, trace), (g, d)) in self
            .lstms
            .iter()
            .zip(&pass.traces)
            .zip(grads.lstms.iter_mut().zip(&dh))
        {
            l.backward_into(trace, d, g);
        }
        Ok((loss, grads, pass))
    }
}

/// Supervised loss evaluated in double-double arithmetic, with parameter
/// buffers given in [`ParamSet`] slice order. Mirrors `forward` and `loss_of`
/// step by step; inputs are assumed validated.
fn extended_loss(
    lstms: &[LstmParams],
    params: &[Vec<Dd>],
    input: &ModelInput,
    labels: &[usize],
    mode: LossMode,
) -> Dd {
    let n = input.steps();
    let mut hidden: Vec<Vec<Vec<Dd>>> = Vec::with_capacity(lstms.len());
    for (s, l) in lstms.iter().enumerate() {
        let (w, b) = (&params[2 * s], &params[2 * s + 1]);
        let hd = l.hidden_dim;
        let cols = l.row_len();
        let mut h = vec![Dd::ZERO; hd];
        let mut c = vec![Dd::ZERO; hd];
        let mut hs = Vec::with_capacity(n);
        let mut gates = vec![Dd::ZERO; 4 * hd];
        for t in 0..n {
            let x = input.streams[s].row(t);
            for (r, g) in gates.iter_mut().enumerate() {
                let row = &w[r * cols..(r + 1) * cols];
                let mut pre = b[r];
                for (k, &xk) in x.iter().enumerate() {
                    pre = pre + row[k] * Dd::from_f64(xk);
                }
                for (k, &hk) in h.iter().enumerate() {
                    pre = pre + row[l.input_dim + k] * hk;
                }
                *g = if r < 3 * hd {
                    pre.sigmoid()
                } else {
                    pre.tanh()
                };
            }
            for j in 0..hd {
                c[j] = gates[hd + j] * c[j] + gates[j] * gates[3 * hd + j];
                h[j] = gates[2 * hd + j] * c[j].tanh();
            }
            hs.push(h.clone());
        }
        hidden.push(hs);
    }
    let (hw, hb) = (&params[2 * lstms.len()], &params[2 * lstms.len() + 1]);
    let in_dim = hw.len() / 2;
    let range = mode.supervised(n);
    let count = Dd::from_f64(range.len() as f64);
    let mut total = Dd::ZERO;
    for t in range {
        let mut logits = [Dd::ZERO; 2];
        for (cls, z) in logits.iter_mut().enumerate() {
            let row = &hw[cls * in_dim..(cls + 1) * in_dim];
            let mut acc = hb[cls];
            for (k, v) in hidden.iter().flat_map(|hs| hs[t].iter()).enumerate() {
                acc = acc + row[k] * *v;
            }
            *z = acc;
        }
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let p = e[labels[t]] / (e[0] + e[1]);
        total = total - p.max(Dd::from_f64(PROB_FLOOR)).ln();
    }
    total / count
}

impl ParamSet for LstmNetwork {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.lstms.iter().flat_map(|l| l.slices()).collect();
        out.extend(self.head.slices());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.lstms.iter_mut().flat_map(|l| l.slices_mut()).collect();
        out.extend(self.head.slices_mut());
        out
    }
}

/// A network bound to one labeled sequence, for gradient checking.
pub struct SequenceObjective<'a> {
    pub network: LstmNetwork,
    pub input: &'a ModelInput,
    pub labels: &'a [usize],
    pub mode: LossMode,
}

impl Objective for SequenceObjective<'_> {
    fn param_shapes(&self) -> Vec<usize> {
        self.network.slices().iter().map(|s| s.len()).collect()
    }

    fn param_mut(&mut self, slice: usize, index: usize) -> &mut f64 {
        &mut self
            .network
            .slices_mut()
            .into_iter()
            .nth(slice)
            .expect("slice index")[index]
    }

    fn loss(&self) -> f64 {
        self.network
            .loss(self.input, self.labels, self.mode)
            .expect("objective input validated at construction")
    }

    fn gradient(&self) -> Vec<Vec<f64>> {
        let (_, grads, _) = self
            .network
            .backward(self.input, self.labels, self.mode)
            .expect("objective input validated at construction");
        grads.slices().iter().map(|s| s.to_vec()).collect()
    }

    /// Evaluated in double-double so the difference of the two losses keeps
    /// its significant digits even when the gradient component is tiny.
    fn central_difference(&mut self, slice: usize, index: usize, eps: f64) -> f64 {
        let mut params: Vec<Vec<Dd>> = self
            .network
            .slices()
            .iter()
            .map(|s| s.iter().map(|&v| Dd::from_f64(v)).collect())
            .collect();
        let orig = params[slice][index].hi;
        let mut side = |delta: f64| {
            params[slice][index] = Dd::sum(orig, delta);
            extended_loss(
                &self.network.lstms,
                &params,
                self.input,
                self.labels,
                self.mode,
            )
        };
        let up = side(eps);
        let down = side(-eps);
        ((up - down) / Dd::from_f64(2.0 * eps)).to_f64()
    }
}
