//! Dynamic information-bottleneck training over per-layer representations.
//!
//! For every layer `Z_l` two critics are trained: `T_xz` over `(X, Z_l)` and
//! `T_zy` over `(Z_l, Y)`. Each step minimizes
//!
//! ```text
//! L(t) = -( alpha(t) * I_xz / d_eff(Z)^2 + (1 - alpha(t)) * I_zy / d_eff(Y)^2 )
//! ```
//!
//! where the `I` terms are Donsker–Varadhan bounds on the current mini-batch
//! and `alpha` follows an [`AlphaSchedule`]. At the end of every epoch both
//! bounds are re-evaluated on the full set and recorded in a [`LayerTrace`].
//!
//! By default the representations are frozen and only the critics learn. In
//! [`EncoderMode::Linear`] each layer passes through a trainable noisy channel
//! `Z = Z_l W + s * eps`, with `W` initialized to the identity and rescaled
//! after every update so the output variance `tr Cov(Z_l W)` stays equal to
//! `tr Cov(Z_l)`. The noise scale `s` is `encoder_noise * sqrt(tr Cov(Z_l) / d)`.
//! Under the fixed power budget the encoder can only lower `I(X; Z)` by
//! moving power between directions, so the schedule has something to trade.
//!
//! Layers are independent units of work and run in parallel on the current
//! rayon pool; results are ordered by layer index and do not depend on the
//! pool size.

use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effdim::{d_eff_of_data, SpectralMeasure};
use crate::linalg::{covariance, SampleMatrix};
use crate::mi::{DvCritic, InputGrad};
use crate::nn::{Activation, AdamConfig, AdamState, DEFAULT_HIDDEN};
use crate::reps::RegressionTask;
use crate::rng;
use crate::scheduler::{AlphaSchedule, DecrementMode};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YKind {
    #[default]
    Regression,
    Classification,
}

/// `X`, the layer representations `Z_1..Z_L`, and `Y`, all row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSet {
    pub x: SampleMatrix,
    pub layers: Vec<SampleMatrix>,
    pub y: SampleMatrix,
    pub y_kind: YKind,
}

impl RepresentationSet {
    pub fn new(
        x: SampleMatrix,
        layers: Vec<SampleMatrix>,
        y: SampleMatrix,
        y_kind: YKind,
    ) -> Result<Self> {
        let s = RepresentationSet {
            x,
            layers,
            y,
            y_kind,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("representation set has no layers".into()));
        }
        let n = self.x.n_rows();
        for (what, m) in std::iter::once(("y", &self.y)).chain(self.layers.iter().map(|l| ("layer", l))) {
            if m.n_rows() != n {
                return Err(Error::DimensionMismatch {
                    what: if what == "y" { "y row count" } else { "layer row count" },
                    expected: n,
                    got: m.n_rows(),
                });
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Representations are frozen; only critics train.
    #[default]
    Fixed,
    /// A trainable `d x d` map on top of each layer.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowNibConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr: f64,
    pub ema_rate: f64,
    pub activation: Activation,
    pub schedule: AlphaSchedule,
    pub decrement: DecrementMode,
    pub measure: SpectralMeasure,
    pub seed: u64,
    pub encoder: EncoderMode,
    pub encoder_lr: f64,
    /// Critic-only steps before the first epoch, with the encoder frozen and
    /// the schedule not yet started. Each critic trains on its own bound.
    pub critic_warmup: usize,
    /// Channel noise relative to the per-dimension signal scale.
    pub encoder_noise: f64,
    /// Train each critic on its own unweighted bound instead of the combined
    /// loss. The encoder (if any) still follows the combined loss.
    pub decoupled: bool,
}

impl Default for FlowNibConfig {
    fn default() -> Self {
        FlowNibConfig {
            epochs: 30,
            steps_per_epoch: 100,
            batch_size: 256,
            hidden: DEFAULT_HIDDEN,
            lr: crate::mi::DEFAULT_MINE_LR,
            ema_rate: 0.99,
            activation: Activation::Softplus,
            schedule: AlphaSchedule::default(),
            decrement: DecrementMode::PerStep,
            measure: SpectralMeasure::L2Participation,
            seed: 0,
            encoder: EncoderMode::Fixed,
            encoder_lr: 1e-3,
            encoder_noise: 1.0,
            critic_warmup: 0,
            decoupled: false,
        }
    }
}

impl FlowNibConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::InvalidInput("steps_per_epoch must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidInput("batch_size must be >= 2".into()));
        }
        if !(self.lr > 0.0) || !(self.encoder_lr > 0.0) {
            return Err(Error::InvalidInput("learning rates must be > 0".into()));
        }
        if !(self.encoder_noise >= 0.0) || !self.encoder_noise.is_finite() {
            return Err(Error::InvalidInput("encoder_noise must be finite and >= 0".into()));
        }
        self.schedule.validate()
    }

    /// The schedule tick at step `step` of epoch `epoch`.
    pub fn tick(&self, epoch: usize, step: usize) -> u64 {
        match self.decrement {
            DecrementMode::PerStep => (epoch * self.steps_per_epoch + step) as u64,
            DecrementMode::PerEpoch => epoch as u64,
        }
    }

    /// The alpha recorded for `epoch`: the value in force when it starts.
    pub fn epoch_alpha(&self, epoch: usize) -> f64 {
        self.schedule.alpha_at(self.tick(epoch, 0))
    }
}

/// One end-of-epoch measurement for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub i_xz_raw: f64,
    pub i_zy_raw: f64,
    pub i_xz_norm: f64,
    pub i_zy_norm: f64,
    pub d_eff_z: f64,
    pub d_eff_y: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub records: Vec<EpochRecord>,
}

/// A JSONL line: one (layer, epoch) record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub layer: usize,
    #[serde(flatten)]
    pub record: EpochRecord,
}

pub fn traces_to_jsonl(traces: &[LayerTrace]) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        for r in &t.records {
            out.push_str(&serde_json::to_string(&TraceLine {
                layer: t.layer,
                record: *r,
            })?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Groups JSONL records back into per-layer traces, ordered by layer then
/// epoch.
pub fn traces_from_jsonl(text: &str) -> Result<Vec<LayerTrace>> {
    let mut traces: Vec<LayerTrace> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let tl: TraceLine = serde_json::from_str(line)?;
        match traces.iter_mut().find(|t| t.layer == tl.layer) {
            Some(t) => t.records.push(tl.record),
            None => traces.push(LayerTrace {
                layer: tl.layer,
                records: vec![tl.record],
            }),
        }
    }
    traces.sort_by_key(|t| t.layer);
    for t in &mut traces {
        t.records.sort_by_key(|r| r.epoch);
    }
    Ok(traces)
}

/// `-(alpha * i_xz_norm + (1 - alpha) * i_zy_norm)`.
pub fn flownib_loss(i_xz_norm: f64, i_zy_norm: f64, alpha: f64) -> f64 {
    -(alpha * i_xz_norm + (1.0 - alpha) * i_zy_norm)
}

/// Normalization divisor; `d_eff >= 1` holds in exact arithmetic.
fn divisor(d: f64) -> f64 {
    let d = d.max(1.0);
    d * d
}

/// Slack of the compression bound
/// `I(X;Z) <= d_eff(Z)^2 / alpha * (-L + (1 - alpha) * I_zy_norm)`,
/// i.e. right-hand side minus `i_xz_raw`. Non-negative whenever
/// `i_zy_norm >= 0` and the record is internally consistent.
pub fn check_compression_bound(rec: &EpochRecord) -> Result<f64> {
    if rec.alpha == 0.0 {
        return Err(Error::BoundUndefined);
    }
    let rhs = divisor(rec.d_eff_z) / rec.alpha * (-rec.loss + (1.0 - rec.alpha) * rec.i_zy_norm);
    Ok(rhs - rec.i_xz_raw)
}

/// d_eff of the target: 1 for a single column, otherwise from its PCA
/// spectrum (one-hot labels included).
pub fn target_d_eff(y: &SampleMatrix, m: SpectralMeasure) -> Result<f64> {
    if y.n_cols() == 1 {
        return Ok(1.0);
    }
    d_eff_of_data(y, m)
}

pub fn run_flownib(reps: &RepresentationSet, cfg: &FlowNibConfig) -> Result<Vec<LayerTrace>> {
    reps.validate()?;
    cfg.validate()?;
    let d_eff_y = target_d_eff(&reps.y, cfg.measure)
        .map_err(|e| Error::InvalidInput(format!("target y: {e}")))?;
    (0..reps.layers.len())
        .into_par_iter()
        .map(|l| run_layer(reps, l, cfg, d_eff_y))
        .collect()
}

struct LinearEncoder {
    dim: usize,
    w: Vec<f64>,
    adam: AdamState,
    /// Covariance of the layer the channel reads from.
    cov: Vec<f64>,
    power: f64,
    noise_std: f64,
}

impl LinearEncoder {
    fn new(base: &SampleMatrix, lr: f64, noise: f64) -> Result<Self> {
        let dim = base.n_cols();
        let cov = covariance(base)?;
        let power = cov.trace();
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Ok(LinearEncoder {
            dim,
            w,
            adam: AdamState::new(dim * dim, AdamConfig { lr, ..AdamConfig::default() }),
            cov: cov.as_slice().to_vec(),
            power,
            noise_std: noise * (power / dim as f64).sqrt(),
        })
    }

    /// `base * W + noise_std * eps`, with `eps` drawn from `rng`.
    fn apply<R: rand::Rng>(&self, base: &SampleMatrix, rng: &mut R) -> Result<SampleMatrix> {
        let clean = base.matmul(&self.w, self.dim)?;
        if self.noise_std == 0.0 {
            return Ok(clean);
        }
        let (n, d) = (clean.n_rows(), clean.n_cols());
        let mut data = clean.into_vec();
        for v in &mut data {
            let e: f64 = rng.sample(StandardNormal);
            *v += self.noise_std * e;
        }
        SampleMatrix::new(n, d, data)
    }

    /// Descends on the loss given `dL/dZ` for the rows of `base`, then
    /// restores the power budget.
    fn step(&mut self, base: &SampleMatrix, grad_z: &[f64]) -> Result<()> {
        let d = self.dim;
        let mut gw = vec![0.0; d * d];
        for (row, gz) in base.rows().zip(grad_z.chunks_exact(d)) {
            for (i, &b) in row.iter().enumerate() {
                for (g, &gzj) in gw[i * d..(i + 1) * d].iter_mut().zip(gz) {
                    *g += b * gzj;
                }
            }
        }
        self.adam.step(&mut self.w, &gw)?;
        self.renormalize();
        Ok(())
    }

    /// tr(W^T C W)
    fn output_power(&self) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for j in 0..d {
            for a in 0..d {
                let wa = self.w[a * d + j];
                if wa == 0.0 {
                    continue;
                }
                let cw: f64 = (0..d).map(|b| self.cov[a * d + b] * self.w[b * d + j]).sum();
                total += wa * cw;
            }
        }
        total
    }

    fn renormalize(&mut self) {
        let p = self.output_power();
        if p > 0.0 && self.power > 0.0 {
            let k = (self.power / p).sqrt();
            self.w.iter_mut().for_each(|v| *v *= k);
        }
    }
}

fn run_layer(
    reps: &RepresentationSet,
    layer: usize,
    cfg: &FlowNibConfig,
    d_eff_y: f64,
) -> Result<LayerTrace> {
    let ctx = |epoch: Option<usize>| move |e: Error| e.in_layer(layer, epoch);
    let seed = rng::derive_seed(cfg.seed, rng::TAG_LAYER + layer as u64);
    let base = &reps.layers[layer];
    let (x, y) = (&reps.x, &reps.y);
    let n = reps.n_rows();
    let bs = cfg.batch_size.min(n);
    let dz = base.n_cols();

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut t_xz = DvCritic::new(
        x.n_cols() + dz,
        cfg.hidden,
        adam,
        cfg.ema_rate,
        rng::derive_seed(seed, 1),
        cfg.activation,
    )?;
    let mut t_zy = DvCritic::new(
        dz + y.n_cols(),
        cfg.hidden,
        adam,
        cfg.ema_rate,
        rng::derive_seed(seed, 2),
        cfg.activation,
    )?;
    let mut encoder = match cfg.encoder {
        EncoderMode::Fixed => None,
        EncoderMode::Linear => Some(
            LinearEncoder::new(base, cfg.encoder_lr, cfg.encoder_noise).map_err(ctx(Some(0)))?,
        ),
    };
    let mut batch_rng = rng::stream(seed, rng::TAG_BATCHES);
    let mut eval_rng = rng::stream(seed, rng::TAG_FINAL_SHUFFLE);

    // One fixed noise draw for the full-set evaluations keeps epochs comparable.
    let full_z = |enc: &LinearEncoder| enc.apply(base, &mut rng::stream(seed, rng::TAG_ENCODER));
    let mut z_full = match &encoder {
        Some(enc) => full_z(enc).map_err(ctx(Some(0)))?,
        None => base.clone(),
    };
    let mut d_eff_z = d_eff_of_data(&z_full, cfg.measure).map_err(ctx(Some(0)))?;
    let (grad_xz, grad_zy) = if encoder.is_some() {
        (InputGrad::B, InputGrad::A)
    } else {
        (InputGrad::None, InputGrad::None)
    };

    for _ in 0..cfg.critic_warmup {
        let idx = rand::seq::index::sample(&mut batch_rng, n, bs).into_vec();
        let xb = x.select_rows(&idx);
        let yb = y.select_rows(&idx);
        let base_b = base.select_rows(&idx);
        let zb = match &encoder {
            Some(enc) => enc.apply(&base_b, &mut batch_rng)?,
            None => base_b,
        };
        let perm = rng::permutation(bs, &mut batch_rng);
        t_xz.step(&xb, &zb, &perm, 1.0, InputGrad::None).map_err(ctx(None))?;
        t_zy.step(&zb, &yb, &perm, 1.0, InputGrad::None).map_err(ctx(None))?;
    }

    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let div_z = divisor(d_eff_z);
        let div_y = divisor(d_eff_y);
        for step in 0..cfg.steps_per_epoch {
            let alpha = cfg.schedule.alpha_at(cfg.tick(epoch, step));
            let loss_w = (alpha / div_z, (1.0 - alpha) / div_y);
            let critic_w = if cfg.decoupled { (1.0, 1.0) } else { loss_w };

            let idx = rand::seq::index::sample(&mut batch_rng, n, bs).into_vec();
            let xb = x.select_rows(&idx);
            let yb = y.select_rows(&idx);
            let base_b = base.select_rows(&idx);
            let zb = match &encoder {
                Some(enc) => enc.apply(&base_b, &mut batch_rng)?,
                None => base_b.clone(),
            };
            let perm = rng::permutation(bs, &mut batch_rng);

            let out_xz = t_xz
                .step(&xb, &zb, &perm, critic_w.0, grad_xz)
                .map_err(ctx(Some(epoch)))?;
            let out_zy = t_zy
                .step(&zb, &yb, &perm, critic_w.1, grad_zy)
                .map_err(ctx(Some(epoch)))?;

            if let Some(enc) = encoder.as_mut() {
                let factor = |lw: f64, cw: f64| if cw == 0.0 { 0.0 } else { lw / cw };
                let (f_xz, f_zy) = (factor(loss_w.0, critic_w.0), factor(loss_w.1, critic_w.1));
                let g_xz = out_xz.input_grad.expect("requested");
                let g_zy = out_zy.input_grad.expect("requested");
                // loss = -objective
                let grad_z: Vec<f64> = g_xz
                    .iter()
                    .zip(&g_zy)
                    .map(|(a, b)| -(f_xz * a + f_zy * b))
                    .collect();
                enc.step(&base_b, &grad_z).map_err(ctx(Some(epoch)))?;
            }
        }

        if let Some(enc) = &encoder {
            z_full = full_z(enc)?;
            d_eff_z = d_eff_of_data(&z_full, cfg.measure).map_err(ctx(Some(epoch)))?;
        }
        let perm = rng::permutation(n, &mut eval_rng);
        let i_xz_raw = t_xz.estimate(x, &z_full, &perm).map_err(ctx(Some(epoch)))?;
        let i_zy_raw = t_zy.estimate(&z_full, y, &perm).map_err(ctx(Some(epoch)))?;
        if !i_xz_raw.is_finite() || !i_zy_raw.is_finite() {
            return Err(ctx(Some(epoch))(Error::Diverged("non-finite estimate".into())));
        }
        let alpha = cfg.epoch_alpha(epoch);
        let i_xz_norm = i_xz_raw / divisor(d_eff_z);
        let i_zy_norm = i_zy_raw / divisor(d_eff_y);
        records.push(EpochRecord {
            epoch,
            alpha,
            i_xz_raw,
            i_zy_raw,
            i_xz_norm,
            i_zy_norm,
            d_eff_z,
            d_eff_y,
            loss: flownib_loss(i_xz_norm, i_zy_norm, alpha),
        });
    }
    Ok(LayerTrace { layer, records })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRun {
    pub delta: f64,
    pub traces: Vec<LayerTrace>,
}

/// Runs the same configuration once per `delta`, sharing the seed.
pub fn delta_ablation(
    reps: &RepresentationSet,
    cfg: &FlowNibConfig,
    deltas: &[f64],
) -> Result<Vec<DeltaRun>> {
    if deltas.len() < 2 {
        return Err(Error::InvalidInput("delta ablation needs at least 2 deltas".into()));
    }
    deltas
        .iter()
        .map(|&delta| {
            let mut c = *cfg;
            c.schedule.delta = delta;
            Ok(DeltaRun {
                delta,
                traces: run_flownib(reps, &c)?,
            })
        })
        .collect()
}

/// Final-epoch values of one layer in an output-dimension ablation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub i_xz_raw: f64,
    pub i_zy_raw: f64,
    pub i_xz_norm: f64,
    pub i_zy_norm: f64,
    pub d_eff_z: f64,
    pub d_eff_y: f64,
}

impl LayerSummary {
    pub fn from_trace(t: &LayerTrace) -> Option<Self> {
        t.records.last().map(|r| LayerSummary {
            layer: t.layer,
            i_xz_raw: r.i_xz_raw,
            i_zy_raw: r.i_zy_raw,
            i_xz_norm: r.i_xz_norm,
            i_zy_norm: r.i_zy_norm,
            d_eff_z: r.d_eff_z,
            d_eff_y: r.d_eff_y,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YDimSummary {
    pub d_y: usize,
    pub layers: Vec<LayerSummary>,
    pub mean_d_eff_z: f64,
    pub traces: Vec<LayerTrace>,
}

/// Synthetic regression tasks with fixed `d_x` and varying output dimension,
/// each run through [`run_flownib`].
pub fn ydim_ablation(
    task: &RegressionTask,
    y_dims: &[usize],
    cfg: &FlowNibConfig,
) -> Result<Vec<YDimSummary>> {
    let dx = task.d_x;
    if y_dims.len() < 3
        || !y_dims.iter().any(|&d| d < dx)
        || !y_dims.contains(&dx)
        || !y_dims.iter().any(|&d| d > dx)
    {
        return Err(Error::InvalidInput(format!(
            "output dimensions must number at least 3 and include values below, at and above d_x = {dx}"
        )));
    }
    y_dims
        .iter()
        .map(|&d_y| {
            let t = RegressionTask { d_y, ..task.clone() };
            let reps = t.generate()?;
            let traces = run_flownib(&reps, cfg)?;
            let layers: Vec<LayerSummary> = traces.iter().filter_map(LayerSummary::from_trace).collect();
            let mean_d_eff_z = layers.iter().map(|l| l.d_eff_z).sum::<f64>() / layers.len() as f64;
            Ok(YDimSummary {
                d_y,
                layers,
                mean_d_eff_z,
                traces,
            })
        })
        .collect()
}
