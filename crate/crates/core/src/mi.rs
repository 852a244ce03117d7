//! Mutual-information estimation with the Donsker–Varadhan bound.
//!
//! ```text
//! I(A;B) >= E_{p(a,b)}[T] - ln E_{p(a)p(b)}[e^T]
//! ```
//!
//! A critic `T` is trained by gradient ascent on the right-hand side (MINE).
//! Product-of-marginals samples come from permuting the `b` rows within a
//! batch. The gradient of the log-partition term uses an exponential moving
//! average of `E[e^T]` in its denominator; reported estimates always use the
//! plug-in value.
//!
//! The discrete oracles ([`exact_mi_discrete`], [`dv_with_optimal_critic`])
//! enumerate a joint table exactly and are the reference for the sampled
//! estimators.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::linalg::SampleMatrix;
use crate::nn::{Activation, AdamConfig, AdamState, CriticGrads, MLPCritic, DEFAULT_HIDDEN};
use crate::rng;
use crate::{Error, Result};

/// Critic outputs are clamped to `[-SCORE_CLIP, SCORE_CLIP]` before any
/// exponentiation.
pub const SCORE_CLIP: f64 = 50.0;

/// Row-aligned joint samples `(a_i, b_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MIPairBatch {
    a: SampleMatrix,
    b: SampleMatrix,
}

impl MIPairBatch {
    pub fn new(a: SampleMatrix, b: SampleMatrix) -> Result<Self> {
        if a.n_rows() != b.n_rows() {
            return Err(Error::DimensionMismatch {
                what: "pair batch row count",
                expected: a.n_rows(),
                got: b.n_rows(),
            });
        }
        if a.n_rows() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: a.n_rows(),
            });
        }
        Ok(MIPairBatch { a, b })
    }

    pub fn a(&self) -> &SampleMatrix {
        &self.a
    }

    pub fn b(&self) -> &SampleMatrix {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.a.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_parts(self) -> (SampleMatrix, SampleMatrix) {
        (self.a, self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DVEstimate {
    pub value_nats: f64,
    pub n_joint: usize,
    pub n_marginal: usize,
}

/// `ln(mean(exp(xs)))`, shifted by the max for stability.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

pub fn dv_lower_bound(scores_joint: &[f64], scores_marginal: &[f64]) -> Result<f64> {
    if scores_joint.is_empty() || scores_marginal.is_empty() {
        return Err(Error::InvalidInput("DV bound needs non-empty score lists".into()));
    }
    if scores_joint
        .iter()
        .chain(scores_marginal)
        .any(|s| !s.is_finite())
    {
        return Err(Error::InvalidInput("DV bound needs finite scores".into()));
    }
    let mean = scores_joint.iter().sum::<f64>() / scores_joint.len() as f64;
    Ok(mean - log_mean_exp(scores_marginal))
}

/// Permutes the rows of `b`, leaving `a` in place.
pub fn shuffle_marginals(batch: &MIPairBatch, seed: u64) -> MIPairBatch {
    let mut r = rng::stream(seed, rng::TAG_FINAL_SHUFFLE);
    let perm = rng::permutation(batch.len(), &mut r);
    MIPairBatch {
        a: batch.a.clone(),
        b: batch.b.select_rows(&perm),
    }
}

fn clip(scores: &mut [f64]) -> Vec<bool> {
    scores
        .iter_mut()
        .map(|s| {
            let c = s.clamp(-SCORE_CLIP, SCORE_CLIP);
            let clipped = c != *s;
            *s = c;
            clipped
        })
        .collect()
}

/// Which side's input gradient a [`DvCritic::step`] should return.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputGrad {
    None,
    A,
    B,
}

pub struct StepOutput {
    /// Plug-in DV value on this batch, before the update.
    pub estimate: f64,
    /// `d(weight * DV)/d(side)`, `(n x side_cols)` row-major.
    pub input_grad: Option<Vec<f64>>,
}

/// A critic, its optimizer, and the moving average of the partition term.
#[derive(Clone, Debug)]
pub struct DvCritic {
    critic: MLPCritic,
    adam: AdamState,
    ema_rate: f64,
    ema: Option<f64>,
}

impl DvCritic {
    pub fn new(
        d_in: usize,
        hidden: usize,
        adam: AdamConfig,
        ema_rate: f64,
        seed: u64,
        activation: Activation,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_rate) {
            return Err(Error::InvalidInput(format!(
                "ema rate must be in [0, 1), got {ema_rate}"
            )));
        }
        let critic = MLPCritic::with_activation(d_in, hidden, seed, activation)?;
        let adam = AdamState::new(critic.num_params(), adam);
        Ok(DvCritic {
            critic,
            adam,
            ema_rate,
            ema: None,
        })
    }

    pub fn critic(&self) -> &MLPCritic {
        &self.critic
    }

    fn pairs(a: &SampleMatrix, b: &SampleMatrix, perm: Option<&[usize]>) -> Result<SampleMatrix> {
        match perm {
            None => a.hstack(b),
            Some(p) => a.hstack(&b.select_rows(p)),
        }
    }

    /// Plug-in DV value with joint rows `(a_i, b_i)` and marginal rows
    /// `(a_i, b_perm[i])`.
    pub fn estimate(&self, a: &SampleMatrix, b: &SampleMatrix, perm: &[usize]) -> Result<f64> {
        let mut sj = self.critic.forward(&Self::pairs(a, b, None)?)?;
        let mut sm = self.critic.forward(&Self::pairs(a, b, Some(perm))?)?;
        clip(&mut sj);
        clip(&mut sm);
        dv_lower_bound(&sj, &sm)
    }

    /// One Adam ascent step on `weight * DV`.
    ///
    /// A zero weight contributes no gradient; the optimizer still ticks, so
    /// its momentum keeps acting as it would under a combined loss.
    pub fn step(
        &mut self,
        a: &SampleMatrix,
        b: &SampleMatrix,
        perm: &[usize],
        weight: f64,
        input_grad: InputGrad,
    ) -> Result<StepOutput> {
        if weight == 0.0 && input_grad == InputGrad::None {
            let zeros = CriticGrads(vec![0.0; self.critic.num_params()]);
            self.critic.adam_step(&zeros, &mut self.adam)?;
            return Ok(StepOutput {
                estimate: f64::NAN,
                input_grad: None,
            });
        }
        let n = a.n_rows();
        let joint = Self::pairs(a, b, None)?;
        let marg = Self::pairs(a, b, Some(perm))?;
        let (mut sj, tape_j) = self.critic.forward_tape(&joint)?;
        let (mut sm, tape_m) = self.critic.forward_tape(&marg)?;
        let clipped_j = clip(&mut sj);
        let clipped_m = clip(&mut sm);
        let estimate = dv_lower_bound(&sj, &sm)
            .map_err(|_| Error::Diverged("non-finite critic scores".into()))?;

        let exps: Vec<f64> = sm.iter().map(|s| s.exp()).collect();
        let batch_mean = exps.iter().sum::<f64>() / n as f64;
        let ema = match self.ema {
            None => batch_mean,
            Some(prev) => self.ema_rate * prev + (1.0 - self.ema_rate) * batch_mean,
        };
        self.ema = Some(ema);

        // d DV / d score
        let inv_n = 1.0 / n as f64;
        let up_j: Vec<f64> = clipped_j
            .iter()
            .map(|&c| if c { 0.0 } else { weight * inv_n })
            .collect();
        let up_m: Vec<f64> = exps
            .iter()
            .zip(&clipped_m)
            .map(|(&e, &c)| if c { 0.0 } else { -weight * e * inv_n / ema })
            .collect();

        let want = input_grad != InputGrad::None;
        let (mut g, gx_j) = self.critic.backward_tape(&joint, &tape_j, &up_j, want)?;
        let (g_m, gx_m) = self.critic.backward_tape(&marg, &tape_m, &up_m, want)?;
        g.add_assign(&g_m);
        // Adam descends; we ascend.
        g.scale(-1.0);
        self.critic.adam_step(&g, &mut self.adam)?;

        let input_grad = match (input_grad, gx_j, gx_m) {
            (InputGrad::None, ..) => None,
            (side, Some(gj), Some(gm)) => {
                let da = a.n_cols();
                let d = da + b.n_cols();
                Some(match side {
                    InputGrad::A => {
                        let mut out = vec![0.0; n * da];
                        for i in 0..n {
                            for k in 0..da {
                                out[i * da + k] = gj[i * d + k] + gm[i * d + k];
                            }
                        }
                        out
                    }
                    _ => {
                        let db = b.n_cols();
                        let mut out = vec![0.0; n * db];
                        for i in 0..n {
                            for k in 0..db {
                                out[i * db + k] += gj[i * d + da + k];
                                out[perm[i] * db + k] += gm[i * d + da + k];
                            }
                        }
                        out
                    }
                })
            }
            _ => None,
        };
        Ok(StepOutput {
            estimate,
            input_grad,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub hidden: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub ema_rate: f64,
    pub seed: u64,
    pub activation: Activation,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            hidden: DEFAULT_HIDDEN,
            lr: DEFAULT_MINE_LR,
            steps: 2000,
            batch_size: 512,
            ema_rate: 0.99,
            seed: 0,
            activation: Activation::Softplus,
        }
    }
}

/// Learning rate for standalone MI estimation.
pub const DEFAULT_MINE_LR: f64 = 1e-3;

/// Trains a fresh critic on `batch` and reports the DV bound over the whole
/// dataset, along with the per-step mini-batch estimates.
pub fn train_mi_critic(batch: &MIPairBatch, cfg: &MineConfig) -> Result<(DVEstimate, Vec<f64>)> {
    if cfg.steps == 0 {
        return Err(Error::InvalidInput("steps must be >= 1".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidInput("batch size must be >= 2".into()));
    }
    let n = batch.len();
    let bs = cfg.batch_size.min(n);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let d_in = batch.a.n_cols() + batch.b.n_cols();
    let mut dv = DvCritic::new(d_in, cfg.hidden, adam, cfg.ema_rate, cfg.seed, cfg.activation)?;
    let mut r = rng::stream(cfg.seed, rng::TAG_BATCHES);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = rand::seq::index::sample(&mut r, n, bs).into_vec();
        let a = batch.a.select_rows(&idx);
        let b = batch.b.select_rows(&idx);
        let perm = rng::permutation(bs, &mut r);
        let out = dv
            .step(&a, &b, &perm, 1.0, InputGrad::None)
            .map_err(|e| match e {
                Error::Diverged(m) => Error::Diverged(format!("step {step}: {m}")),
                other => other,
            })?;
        if !out.estimate.is_finite() {
            return Err(Error::Diverged(format!("step {step}: non-finite estimate")));
        }
        trace.push(out.estimate);
    }
    let mut fr = rng::stream(cfg.seed, rng::TAG_FINAL_SHUFFLE);
    let perm = rng::permutation(n, &mut fr);
    let value = dv.estimate(&batch.a, &batch.b, &perm)?;
    Ok((
        DVEstimate {
            value_nats: value,
            n_joint: n,
            n_marginal: n,
        },
        trace,
    ))
}

/// A joint probability table over `rows x cols` outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    table: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl DiscreteJoint {
    pub fn new(rows: usize, cols: usize, table: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || table.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "joint table",
                expected: rows * cols,
                got: table.len(),
            });
        }
        if table.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput("joint entries must be finite and >= 0".into()));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("joint sums to {total}, not 1")));
        }
        Ok(DiscreteJoint { table, rows, cols })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let table: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, table)
    }

    /// Normalizes non-negative weights into a joint.
    pub fn from_weights(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("weights must have positive sum".into()));
        }
        Self::new(rows, cols, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.table[i * self.cols + j]
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        self.table.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.table.chunks_exact(self.cols) {
            for (mj, p) in m.iter_mut().zip(r) {
                *mj += p;
            }
        }
        m
    }

    /// `n` i.i.d. outcome pairs `(i, j)`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(usize, usize)> {
        let dist = WeightedIndex::new(&self.table).expect("validated table");
        let mut r = rng::stream(seed, rng::TAG_DATA);
        (0..n)
            .map(|_| {
                let k = dist.sample(&mut r);
                (k / self.cols, k % self.cols)
            })
            .collect()
    }

    /// Samples and one-hot encodes both sides.
    pub fn sample_one_hot(&self, n: usize, seed: u64) -> Result<MIPairBatch> {
        let s = self.sample(n, seed);
        let a = one_hot(s.iter().map(|p| p.0), self.rows)?;
        let b = one_hot(s.iter().map(|p| p.1), self.cols)?;
        MIPairBatch::new(a, b)
    }
}

pub fn one_hot(labels: impl IntoIterator<Item = usize>, classes: usize) -> Result<SampleMatrix> {
    let mut data = Vec::new();
    let mut n = 0;
    for l in labels {
        if l >= classes {
            return Err(Error::InvalidInput(format!("label {l} out of range 0..{classes}")));
        }
        let start = data.len();
        data.resize(start + classes, 0.0);
        data[start + l] = 1.0;
        n += 1;
    }
    SampleMatrix::new(n, classes, data)
}

/// Exact mutual information by enumeration; zero cells contribute nothing.
pub fn exact_mi_discrete(j: &DiscreteJoint) -> f64 {
    let pa = j.marginal_a();
    let pb = j.marginal_b();
    let mut mi = 0.0;
    for (r, &par) in pa.iter().enumerate() {
        for (c, &pbc) in pb.iter().enumerate() {
            let p = j.p(r, c);
            if p > 0.0 {
                mi += p * (p / (par * pbc)).ln();
            }
        }
    }
    mi
}

/// Both DV expectations evaluated exactly over the table with
/// `T*(a, b) = ln p(a,b) / (p(a) p(b))`.
pub fn dv_with_optimal_critic(j: &DiscreteJoint) -> Result<f64> {
    let pa = j.marginal_a();
    let pb = j.marginal_b();
    if pa.iter().chain(&pb).any(|&m| m <= 0.0) {
        return Err(Error::InvalidInput("joint has a zero marginal".into()));
    }
    let mut e_joint = 0.0;
    let mut e_marg = 0.0;
    for (r, &par) in pa.iter().enumerate() {
        for (c, &pbc) in pb.iter().enumerate() {
            let p = j.p(r, c);
            if p > 0.0 {
                let t = (p / (par * pbc)).ln();
                e_joint += p * t;
                e_marg += par * pbc * t.exp();
            }
        }
    }
    Ok(e_joint - e_marg.ln())
}

/// `dv / d_eff^2`.
pub fn normalized_mi(dv: f64, d_eff_value: f64) -> Result<f64> {
    if !(d_eff_value >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "effective dimension must be >= 1, got {d_eff_value}"
        )));
    }
    Ok(dv / (d_eff_value * d_eff_value))
}

/// Nats to bits.
pub fn to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}
