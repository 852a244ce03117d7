//! Data sources: synthetic generators with known mutual information, frozen
//! toy sequence encoders (forward, backward, bidirectional), representation
//! difference statistics, and CSV dump ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::effdim::{d_eff_of_data, SpectralMeasure};
use crate::flownib::{RepresentationSet, YKind};
use crate::linalg::{center, cross_covariance, sym_eigvals, CovMatrix, SampleMatrix};
use crate::mi::{one_hot, train_mi_critic, MIPairBatch, MineConfig};
use crate::rng;
use crate::{Error, Result};

fn normal_matrix(r: &mut rng::Rng, n: usize, d: usize, scale: f64) -> Vec<f64> {
    (0..n * d).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

/// `-(d/2) ln(1 - rho^2)`: MI between `d` independent bivariate-normal pairs
/// with correlation `rho`.
pub fn gaussian_mi(rho: f64, d: usize) -> f64 {
    -0.5 * d as f64 * (1.0 - rho * rho).ln()
}

#[derive(Clone, Debug)]
pub struct GaussianPair {
    pub batch: MIPairBatch,
    pub true_mi_nats: f64,
}

pub fn gen_gaussian_pair(n: usize, d: usize, rho: f64, seed: u64) -> Result<GaussianPair> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("|rho| must be < 1, got {rho}")));
    }
    if d == 0 {
        return Err(Error::InvalidInput("d must be >= 1".into()));
    }
    let mut r = rng::stream(seed, rng::TAG_DATA);
    let a = normal_matrix(&mut r, n, d, 1.0);
    let s = (1.0 - rho * rho).sqrt();
    let b = a
        .iter()
        .map(|&x| rho * x + s * r.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(GaussianPair {
        batch: MIPairBatch::new(SampleMatrix::new(n, d, a)?, SampleMatrix::new(n, d, b)?)?,
        true_mi_nats: gaussian_mi(rho, d),
    })
}

/// Token sequences with a binary label that depends on both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    tokens: Vec<usize>,
    n: usize,
    len: usize,
    vocab: usize,
    labels: SampleMatrix,
}

impl SequenceDataset {
    /// Builds a dataset from explicit token rows, labelled by
    /// [`sequence_label`].
    pub fn from_tokens(rows: &[Vec<usize>], vocab: usize) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || len < 2 || vocab < 2 {
            return Err(Error::InvalidInput(
                "need at least one row, len >= 2 and vocab >= 2".into(),
            ));
        }
        let mut tokens = Vec::with_capacity(rows.len() * len);
        for row in rows {
            if row.len() != len {
                return Err(Error::DimensionMismatch {
                    what: "sequence length",
                    expected: len,
                    got: row.len(),
                });
            }
            if let Some(&t) = row.iter().find(|&&t| t >= vocab) {
                return Err(Error::InvalidInput(format!("token {t} out of range 0..{vocab}")));
            }
            tokens.extend_from_slice(row);
        }
        let labels = rows.iter().map(|r| sequence_label(r, vocab)).collect();
        Ok(SequenceDataset {
            tokens,
            n: rows.len(),
            len,
            vocab,
            labels: SampleMatrix::column(labels)?,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.len..(i + 1) * self.len]
    }

    pub fn labels(&self) -> &SampleMatrix {
        &self.labels
    }

    /// One-hot tokens, concatenated over positions: `n x (len * vocab)`.
    pub fn one_hot_inputs(&self) -> SampleMatrix {
        let w = self.len * self.vocab;
        let mut data = vec![0.0; self.n * w];
        for (k, &t) in self.tokens.iter().enumerate() {
            let (i, pos) = (k / self.len, k % self.len);
            data[i * w + pos * self.vocab + t] = 1.0;
        }
        SampleMatrix::from_parts(self.n, w, data)
    }
}

/// 1 when the first and last tokens fall in the same half of the vocabulary.
pub fn sequence_label(row: &[usize], vocab: usize) -> f64 {
    let half = |t: usize| 2 * t >= vocab;
    let same = half(row[0]) == half(row[row.len() - 1]);
    if same {
        1.0
    } else {
        0.0
    }
}

pub fn gen_sequence_task(n: usize, len: usize, vocab: usize, seed: u64) -> Result<SequenceDataset> {
    if n == 0 || len < 2 || vocab < 2 {
        return Err(Error::InvalidInput(format!(
            "sequence task needs n >= 1, len >= 2, vocab >= 2 (got {n}, {len}, {vocab})"
        )));
    }
    let mut r = rng::stream(seed, rng::TAG_DATA);
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..len).map(|_| r.random_range(0..vocab)).collect())
        .collect();
    SequenceDataset::from_tokens(&rows, vocab)
}

/// A frozen mean-pooling encoder pair.
///
/// The forward encoder reads `x_1..x_q` and the backward encoder reads
/// `x_len` down to `x_q`, where `q` is the shared query position (1-based; the
/// middle token by default). Each computes `tanh(A * mean_s E[s][x])`, where
/// the embedding `E[s][x]` depends on the token and on how many steps into
/// the read it occurs, so the pooled vector still identifies the tokens it
/// saw. Directions have their own `E` and `A` unless `tied` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub embed_dim: usize,
    pub rep_dim: usize,
    pub seed: u64,
    pub tied: bool,
    pub query: Option<usize>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            embed_dim: 16,
            rep_dim: 8,
            seed: 0,
            tied: false,
            query: None,
        }
    }
}

struct EncoderWeights {
    embed: Vec<f64>,
    proj: Vec<f64>,
}

impl EncoderSpec {
    fn query_for(&self, len: usize) -> Result<usize> {
        let q = self.query.unwrap_or(len.div_ceil(2));
        if q == 0 || q > len {
            return Err(Error::DimensionMismatch {
                what: "query position",
                expected: len,
                got: q,
            });
        }
        Ok(q)
    }

    /// Embedding tables are indexed by (steps from the read start, token).
    fn weights(&self, vocab: usize, span: usize) -> Result<(EncoderWeights, EncoderWeights)> {
        if self.embed_dim == 0 || self.rep_dim == 0 {
            return Err(Error::InvalidInput("embed_dim and rep_dim must be >= 1".into()));
        }
        let (e, d) = (self.embed_dim, self.rep_dim);
        let mut r = rng::stream(self.seed, rng::TAG_ENCODER);
        let mut draw = || EncoderWeights {
            embed: normal_matrix(&mut r, span * vocab, e, 1.0),
            proj: normal_matrix(&mut r, e, d, 1.0 / (e as f64).sqrt()),
        };
        let fwd = draw();
        let bwd = if self.tied {
            EncoderWeights {
                embed: fwd.embed.clone(),
                proj: fwd.proj.clone(),
            }
        } else {
            draw()
        };
        Ok((fwd, bwd))
    }
}

/// Mean over `positions` (in read order) of `embed[step][token]`, projected
/// and squashed.
fn pool(
    ds: &SequenceDataset,
    w: &EncoderWeights,
    e: usize,
    d: usize,
    positions: &[usize],
) -> SampleMatrix {
    let k = positions.len() as f64;
    let v = ds.vocab;
    let mut out = Vec::with_capacity(ds.n * d);
    let mut mean = vec![0.0; e];
    for i in 0..ds.n {
        let row = ds.row(i);
        mean.iter_mut().for_each(|m| *m = 0.0);
        for (step, &pos) in positions.iter().enumerate() {
            let at = (step * v + row[pos]) * e;
            for (m, &x) in mean.iter_mut().zip(&w.embed[at..at + e]) {
                *m += x;
            }
        }
        for j in 0..d {
            let s: f64 = mean.iter().enumerate().map(|(a, &m)| m * w.proj[a * d + j]).sum();
            out.push((s / k).tanh());
        }
    }
    SampleMatrix::from_parts(ds.n, d, out)
}

fn read_span(len: usize, q: usize) -> usize {
    q.max(len - q + 1)
}

pub fn encode_unidir(ds: &SequenceDataset, spec: &EncoderSpec) -> Result<SampleMatrix> {
    let q = spec.query_for(ds.len)?;
    let (fwd, _) = spec.weights(ds.vocab, read_span(ds.len, q))?;
    let positions: Vec<usize> = (0..q).collect();
    Ok(pool(ds, &fwd, spec.embed_dim, spec.rep_dim, &positions))
}

/// Reads `x_len` down to `x_q`.
pub fn encode_backward(ds: &SequenceDataset, spec: &EncoderSpec) -> Result<SampleMatrix> {
    let q = spec.query_for(ds.len)?;
    let (_, bwd) = spec.weights(ds.vocab, read_span(ds.len, q))?;
    let positions: Vec<usize> = (q - 1..ds.len).rev().collect();
    Ok(pool(ds, &bwd, spec.embed_dim, spec.rep_dim, &positions))
}

/// `[forward | backward]`, `2 * rep_dim` columns.
pub fn encode_bidir(ds: &SequenceDataset, spec: &EncoderSpec) -> Result<SampleMatrix> {
    encode_unidir(ds, spec)?.hstack(&encode_backward(ds, spec)?)
}

/// Singular values of `Cov(a, b)`, descending.
pub fn cross_cov_singular_values(a: &SampleMatrix, b: &SampleMatrix) -> Result<Vec<f64>> {
    let c = cross_covariance(a, b)?;
    let (da, db) = (a.n_cols(), b.n_cols());
    let mut ctc = vec![0.0; db * db];
    for i in 0..db {
        for j in i..db {
            let v: f64 = (0..da).map(|k| c[k * db + i] * c[k * db + j]).sum();
            ctc[i * db + j] = v;
            ctc[j * db + i] = v;
        }
    }
    let s = sym_eigvals(&CovMatrix::new(db, ctc)?)?;
    Ok(s.eigenvalues().iter().map(|&l| l.max(0.0).sqrt()).collect())
}

/// Smallest singular value of the backward/forward cross-covariance must
/// exceed this for the spectral comparison to count.
pub const NONSINGULAR_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralCheck {
    pub d_eff_uni: f64,
    pub d_eff_bi: f64,
    pub max_cross_sv: f64,
    pub min_cross_sv: f64,
    pub nonsingular: bool,
}

impl SpectralCheck {
    pub fn holds(&self) -> bool {
        self.d_eff_bi >= self.d_eff_uni
    }
}

pub fn spectral_check(
    ds: &SequenceDataset,
    spec: &EncoderSpec,
    measure: SpectralMeasure,
) -> Result<SpectralCheck> {
    let fwd = encode_unidir(ds, spec)?;
    let bwd = encode_backward(ds, spec)?;
    let sv = cross_cov_singular_values(&bwd, &fwd)?;
    let bi = fwd.hstack(&bwd)?;
    let max_cross_sv = sv.first().copied().unwrap_or(0.0);
    let min_cross_sv = sv.last().copied().unwrap_or(0.0);
    Ok(SpectralCheck {
        d_eff_uni: d_eff_of_data(&fwd, measure)?,
        d_eff_bi: d_eff_of_data(&bi, measure)?,
        max_cross_sv,
        min_cross_sv,
        nonsingular: min_cross_sv > NONSINGULAR_TOL,
    })
}

/// One randomized spectral comparison: dataset shape, encoder widths and
/// weights are all drawn from `seed`.
pub fn random_spectral_check(seed: u64, measure: SpectralMeasure) -> Result<SpectralCheck> {
    let mut r = rng::stream(seed, rng::TAG_ENCODER + 1);
    let len = r.random_range(3..=8);
    let vocab = r.random_range(2..=8);
    let n = r.random_range(500..=2000);
    let spec = EncoderSpec {
        embed_dim: r.random_range(4..=24),
        rep_dim: r.random_range(2..=12),
        seed,
        tied: false,
        query: None,
    };
    let ds = gen_sequence_task(n, len, vocab, seed)?;
    spectral_check(&ds, &spec, measure)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSuite {
    /// Draws whose cross-covariance passed the non-singularity check.
    pub checks: Vec<(u64, SpectralCheck)>,
    /// Seeds skipped because the check failed.
    pub skipped: Vec<u64>,
}

impl SpectralSuite {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|(_, c)| c.holds()).count()
    }
}

/// Collects `draws` non-singular randomized comparisons starting at
/// `seed_start`, trying at most `10 * draws` seeds.
pub fn spectral_suite(draws: usize, seed_start: u64, measure: SpectralMeasure) -> Result<SpectralSuite> {
    let mut suite = SpectralSuite {
        checks: Vec::with_capacity(draws),
        skipped: Vec::new(),
    };
    let mut seed = seed_start;
    while suite.checks.len() < draws && (seed - seed_start) < 10 * draws as u64 {
        let c = random_spectral_check(seed, measure)?;
        if c.nonsingular {
            suite.checks.push((seed, c));
        } else {
            suite.skipped.push(seed);
        }
        seed += 1;
    }
    Ok(suite)
}

/// Settings for comparing forward-only and bidirectional encoders on the
/// sequence task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BidirConfig {
    pub n: usize,
    pub len: usize,
    pub vocab: usize,
    pub encoder: EncoderSpec,
    /// Critic settings for `I(X; Z)`.
    pub mine_x: MineConfig,
    /// Critic settings for `I(Z; Y)`; the label depends on both sequence
    /// ends, which takes a critic longer to pick up.
    pub mine_y: MineConfig,
    pub measure: SpectralMeasure,
    pub tolerance: f64,
}

impl Default for BidirConfig {
    fn default() -> Self {
        BidirConfig {
            n: 4000,
            len: 5,
            vocab: 4,
            encoder: EncoderSpec::default(),
            mine_x: MineConfig {
                steps: 600,
                batch_size: 256,
                ..MineConfig::default()
            },
            mine_y: MineConfig {
                steps: 2000,
                batch_size: 256,
                ..MineConfig::default()
            },
            measure: SpectralMeasure::L2Participation,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidirSeedResult {
    pub seed: u64,
    pub mi_x_uni: f64,
    pub mi_x_bi: f64,
    pub mi_y_uni: f64,
    pub mi_y_bi: f64,
    pub d_eff_uni: f64,
    pub d_eff_bi: f64,
    pub x_ordered: bool,
    pub y_ordered: bool,
}

impl BidirSeedResult {
    pub fn passed(&self) -> bool {
        self.x_ordered && self.y_ordered
    }
}

/// Draws a dataset and encoder from `seed`, then trains critics for
/// `I(X; Z)` and `I(Z; Y)` under both encoders.
pub fn compare_bidir_seed(cfg: &BidirConfig, seed: u64) -> Result<BidirSeedResult> {
    let ds = gen_sequence_task(cfg.n, cfg.len, cfg.vocab, seed)?;
    let spec = EncoderSpec { seed, ..cfg.encoder };
    let uni = encode_unidir(&ds, &spec)?;
    let bi = encode_bidir(&ds, &spec)?;
    let x = ds.one_hot_inputs();
    let y = ds.labels().clone();
    let est = |a: &SampleMatrix, b: &SampleMatrix, mine: &MineConfig| -> Result<f64> {
        let batch = MIPairBatch::new(a.clone(), b.clone())?;
        Ok(train_mi_critic(&batch, &MineConfig { seed, ..*mine })?.0.value_nats)
    };
    let mi_x_uni = est(&x, &uni, &cfg.mine_x)?;
    let mi_x_bi = est(&x, &bi, &cfg.mine_x)?;
    let mi_y_uni = est(&uni, &y, &cfg.mine_y)?;
    let mi_y_bi = est(&bi, &y, &cfg.mine_y)?;
    Ok(BidirSeedResult {
        seed,
        mi_x_uni,
        mi_x_bi,
        mi_y_uni,
        mi_y_bi,
        d_eff_uni: d_eff_of_data(&uni, cfg.measure)?,
        d_eff_bi: d_eff_of_data(&bi, cfg.measure)?,
        x_ordered: mi_x_bi >= mi_x_uni - cfg.tolerance,
        y_ordered: mi_y_bi >= mi_y_uni - cfg.tolerance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidirSummary {
    pub seeds: usize,
    pub pass_rate: f64,
    pub x_pass_rate: f64,
    pub y_pass_rate: f64,
    pub spectral_pass_rate: f64,
}

pub fn summarize_bidir(results: &[BidirSeedResult]) -> BidirSummary {
    let n = results.len().max(1) as f64;
    let rate = |f: &dyn Fn(&BidirSeedResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / n;
    BidirSummary {
        seeds: results.len(),
        pass_rate: rate(&|r| r.passed()),
        x_pass_rate: rate(&|r| r.x_ordered),
        y_pass_rate: rate(&|r| r.y_ordered),
        spectral_pass_rate: rate(&|r| r.d_eff_bi >= r.d_eff_uni),
    }
}

/// Empirical terms of `E|z1 - z2|^2 = tr Cov(z1) + tr Cov(z2)
/// - 2 tr Cov(z1, z2) + |E[z1 - z2]|^2`, all with population normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprDiffStats {
    pub mean_sq_diff: f64,
    pub tr_cov1: f64,
    pub tr_cov2: f64,
    pub tr_crosscov: f64,
    pub mean_diff_norm_sq: f64,
    /// `|mean_sq_diff - (tr_cov1 + tr_cov2 - 2 tr_crosscov + mean_diff_norm_sq)|`.
    pub residual: f64,
}

impl ReprDiffStats {
    /// Residual relative to the largest term (1 if every term is zero).
    pub fn relative_residual(&self) -> f64 {
        let scale = [
            self.mean_sq_diff,
            self.tr_cov1,
            self.tr_cov2,
            2.0 * self.tr_crosscov.abs(),
            self.mean_diff_norm_sq,
        ]
        .into_iter()
        .fold(0.0f64, f64::max);
        if scale == 0.0 {
            self.residual
        } else {
            self.residual / scale
        }
    }
}

pub fn repr_diff_stats(z1: &SampleMatrix, z2: &SampleMatrix) -> Result<ReprDiffStats> {
    if z1.n_rows() != z2.n_rows() || z1.n_cols() != z2.n_cols() {
        return Err(Error::DimensionMismatch {
            what: "representation shape",
            expected: z1.n_rows() * z1.n_cols(),
            got: z2.n_rows() * z2.n_cols(),
        });
    }
    let n = z1.n_rows() as f64;
    let mean_sq_diff = z1
        .as_slice()
        .iter()
        .zip(z2.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let (c1, c2) = (center(z1), center(z2));
    let tr_cov1 = c1.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    let tr_cov2 = c2.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    let tr_crosscov = c1
        .as_slice()
        .iter()
        .zip(c2.as_slice())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n;
    let mean_diff_norm_sq = z1
        .column_means()
        .iter()
        .zip(z2.column_means())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    let residual =
        (mean_sq_diff - (tr_cov1 + tr_cov2 - 2.0 * tr_crosscov + mean_diff_norm_sq)).abs();
    Ok(ReprDiffStats {
        mean_sq_diff,
        tr_cov1,
        tr_cov2,
        tr_crosscov,
        mean_diff_norm_sq,
        residual,
    })
}

/// Regression targets `Y = X B + noise` with layers produced by a random
/// `tanh` network on `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionTask {
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub n_layers: usize,
    pub width: usize,
    pub noise: f64,
    /// `Y = X` exactly; requires `d_y == d_x`.
    pub identity_target: bool,
    pub seed: u64,
}

impl Default for RegressionTask {
    fn default() -> Self {
        RegressionTask {
            n: 2000,
            d_x: 8,
            d_y: 8,
            n_layers: 3,
            width: 8,
            noise: 0.1,
            identity_target: false,
            seed: 0,
        }
    }
}

impl RegressionTask {
    pub fn generate(&self) -> Result<RepresentationSet> {
        if self.n < 2 || self.d_x == 0 || self.d_y == 0 || self.n_layers == 0 || self.width == 0 {
            return Err(Error::InvalidInput(
                "regression task needs n >= 2 and non-zero dimensions and layer count".into(),
            ));
        }
        if self.identity_target && self.d_y != self.d_x {
            return Err(Error::InvalidInput("identity target requires d_y == d_x".into()));
        }
        let mut r = rng::stream(self.seed, rng::TAG_DATA);
        let x = SampleMatrix::new(self.n, self.d_x, normal_matrix(&mut r, self.n, self.d_x, 1.0))?;
        let mut layers = Vec::with_capacity(self.n_layers);
        let mut h = x.clone();
        for _ in 0..self.n_layers {
            let fan_in = h.n_cols();
            let w = normal_matrix(&mut r, fan_in, self.width, 1.0 / (fan_in as f64).sqrt());
            let z = h.matmul(&w, self.width)?;
            let data = z.into_vec().into_iter().map(f64::tanh).collect();
            h = SampleMatrix::new(self.n, self.width, data)?;
            layers.push(h.clone());
        }
        let y = if self.identity_target {
            x.clone()
        } else {
            let b = normal_matrix(&mut r, self.d_x, self.d_y, 1.0 / (self.d_x as f64).sqrt());
            let clean = x.matmul(&b, self.d_y)?;
            let data = clean
                .into_vec()
                .into_iter()
                .map(|v| v + self.noise * r.sample::<f64, _>(StandardNormal))
                .collect();
            SampleMatrix::new(self.n, self.d_y, data)?
        };
        RepresentationSet::new(x, layers, y, YKind::Regression)
    }
}

/// Built-in representation sets for `flownib run` and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticTask {
    /// `X`, one layer `Z` and `Y`, all mutually independent standard normals.
    Independent { n: usize, d: usize },
    /// `Z = X`; `Y` is the sign of the first coordinate of `X` as a two-class
    /// label.
    SignBit { n: usize, d: usize },
    /// `X -> Z_1 -> ... -> Z_L -> Y`, each link `rho * prev + sqrt(1 - rho^2) * noise`.
    GaussianChain {
        n: usize,
        d: usize,
        layers: usize,
        rho: f64,
    },
    Regression(RegressionTask),
}

impl SyntheticTask {
    pub fn generate(&self, seed: u64) -> Result<RepresentationSet> {
        let mut r = rng::stream(seed, rng::TAG_DATA);
        match *self {
            SyntheticTask::Independent { n, d } => {
                let mut m = || SampleMatrix::new(n, d, normal_matrix(&mut r, n, d, 1.0));
                let (x, z, y) = (m()?, m()?, m()?);
                RepresentationSet::new(x, vec![z], y, YKind::Regression)
            }
            SyntheticTask::SignBit { n, d } => {
                let x = SampleMatrix::new(n, d, normal_matrix(&mut r, n, d, 1.0))?;
                let y = one_hot(x.rows().map(|row| usize::from(row[0] > 0.0)), 2)?;
                RepresentationSet::new(x.clone(), vec![x], y, YKind::Classification)
            }
            SyntheticTask::GaussianChain { n, d, layers, rho } => {
                if !(rho.abs() < 1.0) || layers == 0 {
                    return Err(Error::InvalidInput(
                        "gaussian chain needs |rho| < 1 and at least one layer".into(),
                    ));
                }
                let s = (1.0 - rho * rho).sqrt();
                let x = SampleMatrix::new(n, d, normal_matrix(&mut r, n, d, 1.0))?;
                let mut prev = x.clone();
                let mut zs = Vec::with_capacity(layers);
                for _ in 0..=layers {
                    let data = prev
                        .as_slice()
                        .iter()
                        .map(|&v| rho * v + s * r.sample::<f64, _>(StandardNormal))
                        .collect();
                    prev = SampleMatrix::new(n, d, data)?;
                    zs.push(prev.clone());
                }
                let y = zs.pop().expect("layers + 1 links");
                RepresentationSet::new(x, zs, y, YKind::Regression)
            }
            SyntheticTask::Regression(ref t) => RegressionTask { seed, ..t.clone() }.generate(),
        }
    }

    /// Exact `I(X; Z_k)` (1-based `k`) where known.
    pub fn true_mi_xz(&self, k: usize) -> Option<f64> {
        match *self {
            SyntheticTask::Independent { .. } => Some(0.0),
            SyntheticTask::GaussianChain { d, rho, layers, .. } if k >= 1 && k <= layers => {
                Some(gaussian_mi(rho.powi(k as i32), d))
            }
            _ => None,
        }
    }
}

/// On-disk description of a representation dump. Paths are relative to the
/// manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub x: PathBuf,
    pub y: PathBuf,
    pub layers: Vec<PathBuf>,
    #[serde(default)]
    pub y_kind: YKind,
}

/// Reads a header-plus-rows CSV of floats.
pub fn read_csv_matrix(path: &Path) -> Result<SampleMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let n_cols = match lines.next() {
        Some((_, h)) if !h.trim().is_empty() => h.split(',').count(),
        _ => return Err(parse_err(1, "missing header line".into())),
    };
    let mut data = Vec::new();
    let mut n_rows = 0;
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(parse_err(
                i + 1,
                format!("expected {n_cols} cells, found {}", cells.len()),
            ));
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(i + 1, format!("non-numeric cell {cell:?} in column {}", c + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(i + 1, format!("non-finite cell {cell:?}")));
            }
            data.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    SampleMatrix::new(n_rows, n_cols, data)
}

pub fn write_csv_matrix(path: &Path, m: &SampleMatrix, prefix: &str) -> Result<()> {
    let mut out = (0..m.n_cols())
        .map(|j| format!("{prefix}{j}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_representation_dump(manifest: &Path) -> Result<RepresentationSet> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: DumpManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if m.layers.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: manifest lists no layers",
            manifest.display()
        )));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let x = read_csv_matrix(&resolve(&m.x))?;
    let n = x.n_rows();
    let check = |path: PathBuf, mat: SampleMatrix| -> Result<SampleMatrix> {
        if mat.n_rows() != n {
            return Err(Error::InvalidInput(format!(
                "{}: {} rows, expected {n} to match {}",
                path.display(),
                mat.n_rows(),
                m.x.display()
            )));
        }
        Ok(mat)
    };
    let layers = m
        .layers
        .iter()
        .map(|p| {
            let path = resolve(p);
            check(path.clone(), read_csv_matrix(&path)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let y_path = resolve(&m.y);
    let y_raw = check(y_path.clone(), read_csv_matrix(&y_path)?)?;
    let y = match m.y_kind {
        YKind::Regression => y_raw,
        YKind::Classification => {
            if y_raw.n_cols() != 1 {
                return Err(Error::InvalidInput(format!(
                    "{}: classification labels must be a single column",
                    y_path.display()
                )));
            }
            let mut labels = Vec::with_capacity(n);
            for (i, &v) in y_raw.as_slice().iter().enumerate() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        path: y_path.clone(),
                        line: i + 2,
                        message: format!("label {v} is not a non-negative integer"),
                    });
                }
                labels.push(v as usize);
            }
            let classes = labels.iter().copied().max().unwrap_or(0) + 1;
            one_hot(labels, classes)?
        }
    };
    RepresentationSet::new(x, layers, y, m.y_kind)
}

/// Writes `x.csv`, `layer_<k>.csv`, `y.csv` and `manifest.json` into `dir`
/// and returns the manifest path. Classification targets are stored as
/// integer labels.
pub fn write_representation_dump(set: &RepresentationSet, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv_matrix(&dir.join("x.csv"), &set.x, "x")?;
    let mut layers = Vec::with_capacity(set.layers.len());
    for (k, l) in set.layers.iter().enumerate() {
        let name = PathBuf::from(format!("layer_{k}.csv"));
        write_csv_matrix(&dir.join(&name), l, "z")?;
        layers.push(name);
    }
    match set.y_kind {
        YKind::Regression => write_csv_matrix(&dir.join("y.csv"), &set.y, "y")?,
        YKind::Classification => {
            let labels = set
                .y
                .rows()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0 as f64
                })
                .collect();
            write_csv_matrix(&dir.join("y.csv"), &SampleMatrix::column(labels)?, "label")?
        }
    }
    let manifest = DumpManifest {
        x: "x.csv".into(),
        y: "y.csv".into(),
        layers,
        y_kind: set.y_kind,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_mi_examples() {
        assert_eq!(gaussian_mi(0.0, 3), 0.0);
        assert!((gaussian_mi(0.5, 1) - 0.1438).abs() < 5e-5);
        // 2 x 0.830366
        assert!((gaussian_mi(0.9, 2) - 1.660731).abs() < 1e-6);
        assert!(gen_gaussian_pair(10, 1, 1.0, 0).is_err());
        assert!(gen_gaussian_pair(10, 1, -1.2, 0).is_err());
    }

    #[test]
    fn gaussian_pair_correlation() {
        let g = gen_gaussian_pair(20_000, 2, 0.6, 3).unwrap();
        let c = cross_covariance(g.batch.a(), g.batch.b()).unwrap();
        assert!((c[0] - 0.6).abs() < 0.03 && (c[3] - 0.6).abs() < 0.03);
        assert!(c[1].abs() < 0.03 && c[2].abs() < 0.03);
    }

    #[test]
    fn minimal_sequence_task_is_xnor() {
        let ds = gen_sequence_task(200, 2, 2, 1).unwrap();
        for i in 0..ds.n() {
            let r = ds.row(i);
            let xnor = if r[0] == r[1] { 1.0 } else { 0.0 };
            assert_eq!(ds.labels().get(i, 0), xnor);
        }
    }

    #[test]
    fn sequence_labels_balanced_and_deterministic() {
        let ds = gen_sequence_task(20_000, 5, 4, 9).unwrap();
        let mean = ds.labels().column_means()[0];
        assert!((mean - 0.5).abs() <= 0.02, "balance {mean}");
        assert_eq!(ds, gen_sequence_task(20_000, 5, 4, 9).unwrap());
        assert!(gen_sequence_task(10, 1, 4, 0).is_err());
    }

    #[test]
    fn bidir_doubles_width() {
        let ds = gen_sequence_task(50, 5, 4, 0).unwrap();
        let spec = EncoderSpec::default();
        let u = encode_unidir(&ds, &spec).unwrap();
        let b = encode_bidir(&ds, &spec).unwrap();
        assert_eq!(b.n_cols(), 2 * u.n_cols());
        assert_eq!(u, encode_unidir(&ds, &spec).unwrap());
    }

    #[test]
    fn palindromes_with_tied_weights_agree() {
        let rows = vec![vec![0, 1, 2, 1, 0], vec![3, 3, 1, 3, 3], vec![2, 0, 0, 0, 2]];
        let ds = SequenceDataset::from_tokens(&rows, 4).unwrap();
        let spec = EncoderSpec {
            tied: true,
            ..EncoderSpec::default()
        };
        assert_eq!(encode_unidir(&ds, &spec).unwrap(), encode_backward(&ds, &spec).unwrap());
    }

    #[test]
    fn bad_query_rejected() {
        let ds = gen_sequence_task(5, 3, 4, 0).unwrap();
        for q in [0, 4] {
            let spec = EncoderSpec {
                query: Some(q),
                ..EncoderSpec::default()
            };
            assert!(matches!(encode_bidir(&ds, &spec), Err(Error::DimensionMismatch { .. })));
        }
    }

    #[test]
    fn cross_covariance_nonsingular_on_random_data() {
        let ds = gen_sequence_task(2000, 5, 4, 4).unwrap();
        let c = spectral_check(&ds, &EncoderSpec::default(), SpectralMeasure::L2Participation).unwrap();
        assert!(c.max_cross_sv > 1e-6);
    }

    #[test]
    fn singular_values_of_known_cross_covariance() {
        // b = 2a exactly: Cov(a, b) = 2 Var(a) = 2 * 1.25
        let a = SampleMatrix::column(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = SampleMatrix::column(vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let sv = cross_cov_singular_values(&a, &b).unwrap();
        assert!((sv[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn repr_diff_examples() {
        let z1 = SampleMatrix::column(vec![0.0, 2.0]).unwrap();
        let z2 = SampleMatrix::column(vec![1.0, 1.0]).unwrap();
        let s = repr_diff_stats(&z1, &z2).unwrap();
        assert_eq!(s.mean_sq_diff, 1.0);
        assert_eq!(s.tr_cov1, 1.0);
        assert_eq!(s.tr_cov2, 0.0);
        assert_eq!(s.tr_crosscov, 0.0);
        assert_eq!(s.mean_diff_norm_sq, 0.0);
        assert_eq!(s.residual, 0.0);

        let same = repr_diff_stats(&z1, &z1).unwrap();
        assert_eq!(same.mean_sq_diff, 0.0);
        assert!(same.residual < 1e-15);

        let wide = SampleMatrix::zeros(2, 2).unwrap();
        assert!(repr_diff_stats(&z1, &wide).is_err());
    }

    #[test]
    fn independent_cross_trace_near_zero() {
        let g = gen_gaussian_pair(50_000, 3, 0.0, 11).unwrap();
        let s = repr_diff_stats(g.batch.a(), g.batch.b()).unwrap();
        assert!(s.tr_crosscov.abs() <= 0.03, "{}", s.tr_crosscov);
        assert!(s.relative_residual() < 1e-9);
    }

    #[test]
    fn synthetic_shapes() {
        let s = SyntheticTask::SignBit { n: 100, d: 3 }.generate(0).unwrap();
        assert_eq!((s.y.n_cols(), s.y_kind), (2, YKind::Classification));
        let c = SyntheticTask::GaussianChain {
            n: 50,
            d: 2,
            layers: 3,
            rho: 0.8,
        };
        assert_eq!(c.generate(0).unwrap().layers.len(), 3);
        assert!((c.true_mi_xz(2).unwrap() - gaussian_mi(0.64, 2)).abs() < 1e-15);
        let r = RegressionTask::default().generate().unwrap();
        assert_eq!(r.layers.len(), 3);
        assert!(RegressionTask {
            identity_target: true,
            d_y: 3,
            ..RegressionTask::default()
        }
        .generate()
        .is_err());
    }
}
