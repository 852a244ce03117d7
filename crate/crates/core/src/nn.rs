//! Two-layer scalar critic `T(a, b)` with hand-written backpropagation and a
//! bias-corrected Adam optimizer.
//!
//! The network is `score = w2 . act(W1^T x + b1) + b2` with one hidden layer.
//! Parameters live in one flat buffer laid out as `[W1 | b1 | w2 | b2]`, where
//! `W1` is `(d_in x hidden)` row-major, so the optimizer can treat every
//! parameter uniformly.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::SampleMatrix;
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `ln(1 + e^x)`.
    #[default]
    Softplus,
    Relu,
}

impl Activation {
    /// Value and derivative together; softplus shares one exponential.
    #[inline]
    fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Softplus => {
                let e = (-x.abs()).exp();
                let sig = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                // 1 + e lies in (1, 2], where ln is accurate and cheaper than ln_1p.
                (x.max(0.0) + (1.0 + e).ln(), sig)
            }
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLPCritic {
    d_in: usize,
    hidden: usize,
    activation: Activation,
    params: Vec<f64>,
}

/// Gradients with the same flat layout as [`MLPCritic`] parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticGrads(pub Vec<f64>);

impl CriticGrads {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|g| *g *= c);
    }

    pub fn add_assign(&mut self, other: &CriticGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// Hidden-layer values from a forward pass, kept for the backward pass.
pub struct Tape {
    post: Vec<f64>,
    /// Activation derivative at each hidden pre-activation.
    slope: Vec<f64>,
}

impl MLPCritic {
    /// He-normal weights (`variance = 2 / fan_in`) and zero biases.
    pub fn new(d_in: usize, hidden: usize, seed: u64) -> Result<Self> {
        Self::with_activation(d_in, hidden, seed, Activation::default())
    }

    pub fn with_activation(
        d_in: usize,
        hidden: usize,
        seed: u64,
        activation: Activation,
    ) -> Result<Self> {
        if d_in == 0 || hidden == 0 {
            return Err(Error::InvalidInput(format!(
                "critic needs d_in >= 1 and hidden >= 1, got {d_in} and {hidden}"
            )));
        }
        let mut rng = rng::stream(seed, rng::TAG_CRITIC_INIT);
        let mut params = vec![0.0; d_in * hidden + 2 * hidden + 1];
        let w1 = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("valid std");
        for p in &mut params[..d_in * hidden] {
            *p = w1.sample(&mut rng);
        }
        let w2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).expect("valid std");
        let off = d_in * hidden + hidden;
        for p in &mut params[off..off + hidden] {
            *p = w2.sample(&mut rng);
        }
        Ok(MLPCritic {
            d_in,
            hidden,
            activation,
            params,
        })
    }

    /// Builds a critic from explicit parameters; shapes must agree.
    pub fn from_parts(
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
        activation: Activation,
    ) -> Result<Self> {
        let hidden = b1.len();
        if hidden == 0 || w2.len() != hidden || w1.is_empty() || w1.len() % hidden != 0 {
            return Err(Error::InvalidInput("inconsistent critic parameter shapes".into()));
        }
        let d_in = w1.len() / hidden;
        let mut params = w1;
        params.extend(b1);
        params.extend(w2);
        params.push(b2);
        Ok(MLPCritic {
            d_in,
            hidden,
            activation,
            params,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.d_in * self.hidden]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.d_in * self.hidden;
        &self.params[o..o + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.d_in * self.hidden + self.hidden;
        &self.params[o..o + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    fn check_input(&self, pairs: &SampleMatrix) -> Result<()> {
        if pairs.n_cols() != self.d_in {
            return Err(Error::DimensionMismatch {
                what: "critic input width",
                expected: self.d_in,
                got: pairs.n_cols(),
            });
        }
        Ok(())
    }

    /// One score per row.
    pub fn forward(&self, pairs: &SampleMatrix) -> Result<Vec<f64>> {
        Ok(self.forward_tape(pairs)?.0)
    }

    /// Forward pass that also returns the hidden activations.
    pub fn forward_tape(&self, pairs: &SampleMatrix) -> Result<(Vec<f64>, Tape)> {
        self.check_input(pairs)?;
        let h = self.hidden;
        let n = pairs.n_rows();
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let mut pre_r = vec![0.0; h];
        let mut post = vec![0.0; n * h];
        let mut slope = vec![0.0; n * h];
        let mut scores = Vec::with_capacity(n);
        for ((row, post_r), slope_r) in pairs
            .rows()
            .zip(post.chunks_exact_mut(h))
            .zip(slope.chunks_exact_mut(h))
        {
            pre_r.copy_from_slice(b1);
            for (i, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (p, &w) in pre_r.iter_mut().zip(&w1[i * h..(i + 1) * h]) {
                    *p += x * w;
                }
            }
            let mut s = b2;
            for (((q, sl), &p), &w) in post_r.iter_mut().zip(slope_r.iter_mut()).zip(&pre_r).zip(w2) {
                (*q, *sl) = self.activation.apply_with_derivative(p);
                s += w * *q;
            }
            scores.push(s);
        }
        Ok((scores, Tape { post, slope }))
    }

    /// Gradients of `sum_i upstream_i * score_i` with respect to all
    /// parameters.
    pub fn backward(&self, pairs: &SampleMatrix, upstream: &[f64]) -> Result<CriticGrads> {
        let (_, tape) = self.forward_tape(pairs)?;
        Ok(self.backward_tape(pairs, &tape, upstream, false)?.0)
    }

    /// Backward pass reusing a tape. With `input_grads`, also returns
    /// `d/d pairs` as an `(n x d_in)` row-major buffer.
    pub fn backward_tape(
        &self,
        pairs: &SampleMatrix,
        tape: &Tape,
        upstream: &[f64],
        input_grads: bool,
    ) -> Result<(CriticGrads, Option<Vec<f64>>)> {
        self.check_input(pairs)?;
        if upstream.len() != pairs.n_rows() {
            return Err(Error::DimensionMismatch {
                what: "upstream gradient length",
                expected: pairs.n_rows(),
                got: upstream.len(),
            });
        }
        let (d, h) = (self.d_in, self.hidden);
        let w1 = self.w1();
        let w2 = self.w2();
        let mut g = vec![0.0; self.params.len()];
        let mut gx = input_grads.then(|| vec![0.0; pairs.n_rows() * d]);
        let mut g_pre = vec![0.0; h];
        {
            let (gw1, rest) = g.split_at_mut(d * h);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(h);
            for (r, (row, &u)) in pairs.rows().zip(upstream).enumerate() {
                if u == 0.0 {
                    continue;
                }
                gb2[0] += u;
                let post_r = &tape.post[r * h..(r + 1) * h];
                let slope_r = &tape.slope[r * h..(r + 1) * h];
                for j in 0..h {
                    gw2[j] += u * post_r[j];
                    let gp = u * w2[j] * slope_r[j];
                    g_pre[j] = gp;
                    gb1[j] += gp;
                }
                for (i, &x) in row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (gw, &gp) in gw1[i * h..(i + 1) * h].iter_mut().zip(&g_pre) {
                        *gw += x * gp;
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[r * d..(r + 1) * d];
                    for (i, gxi) in dst.iter_mut().enumerate() {
                        *gxi = w1[i * h..(i + 1) * h]
                            .iter()
                            .zip(&g_pre)
                            .map(|(w, gp)| w * gp)
                            .sum();
                    }
                }
            }
        }
        Ok((CriticGrads(g), gx))
    }

    /// One Adam step on the critic's parameters.
    pub fn adam_step(&mut self, grads: &CriticGrads, state: &mut AdamState) -> Result<()> {
        state.step(&mut self.params, grads.as_slice())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments for bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grads`. Fails without touching anything if a gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                what: "adam parameter count",
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged("non-finite parameter after update".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn uniform_matrix(n: usize, d: usize, seed: u64) -> SampleMatrix {
    use rand::Rng;
    let mut r = rng::stream(seed, rng::TAG_DATA);
    let data = (0..n * d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
    SampleMatrix::from_parts(n, d, data)
}
