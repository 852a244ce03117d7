//! Generalized effective dimensionality.
//!
//! For eigenvalues `lambda_i` of a representation's covariance, the normalized
//! spectrum is `p_i = lambda_i / sum_j lambda_j` and
//! `d_eff = exp(M(p))` for a spectral measure `M`. Two measures ship:
//!
//! * [`SpectralMeasure::ShannonEntropy`]: `M(p) = -sum p_i ln p_i`, the classic
//!   effective rank.
//! * [`SpectralMeasure::L2Participation`] (default): `M(p) = ln(1 / sum p_i^2)`,
//!   which gives the participation ratio `(sum lambda)^2 / sum lambda^2`.
//!
//! Both satisfy `0 <= M(p) <= ln n`, so `1 <= d_eff <= n` where `n` counts the
//! retained (non-zero) eigenvalues.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::{pca_spectrum, SampleMatrix, Spectrum};
use crate::{Error, Result};

/// Eigenvalues at or below this fraction of the largest one count as zero.
pub const DEFAULT_REL_FLOOR: f64 = 1e-10;

/// A spectrum whose largest eigenvalue is at or below this is all round-off.
pub const ABS_FLOOR: f64 = 1e-20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMeasure {
    #[serde(alias = "shannon")]
    ShannonEntropy,
    #[default]
    #[serde(alias = "l2")]
    L2Participation,
}

impl SpectralMeasure {
    pub const ALL: [SpectralMeasure; 2] = [
        SpectralMeasure::ShannonEntropy,
        SpectralMeasure::L2Participation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpectralMeasure::ShannonEntropy => "shannon",
            SpectralMeasure::L2Participation => "l2",
        }
    }
}

impl fmt::Display for SpectralMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpectralMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shannon" | "shannon_entropy" => Ok(SpectralMeasure::ShannonEntropy),
            "l2" | "l2_participation" => Ok(SpectralMeasure::L2Participation),
            other => Err(Error::InvalidInput(format!(
                "unknown spectral measure {other:?} (expected \"l2\" or \"shannon\")"
            ))),
        }
    }
}

/// Strictly positive, descending, sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSpectrum {
    p: Vec<f64>,
}

impl NormalizedSpectrum {
    /// Accepts an already-normalized probability vector (used by property
    /// tests and by callers holding spectra from elsewhere).
    pub fn from_probabilities(mut p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "normalized spectrum entries must be finite and > 0".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "normalized spectrum sums to {total}, not 1"
            )));
        }
        p.sort_by(|a, b| b.total_cmp(a));
        Ok(NormalizedSpectrum { p })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

pub fn normalize_spectrum(s: &Spectrum, rel_floor: f64) -> Result<NormalizedSpectrum> {
    let max = s.eigenvalues().iter().copied().fold(0.0f64, f64::max);
    if !(max > ABS_FLOOR) {
        return Err(Error::DegenerateSpectrum);
    }
    let cutoff = rel_floor * max;
    let kept: Vec<f64> = s
        .eigenvalues()
        .iter()
        .copied()
        .filter(|&v| v > cutoff)
        .collect();
    let total: f64 = kept.iter().sum();
    let p = kept.into_iter().map(|v| v / total).collect();
    Ok(NormalizedSpectrum { p })
}

pub fn measure(p: &NormalizedSpectrum, m: SpectralMeasure) -> f64 {
    // every measure is ln n on a flat spectrum
    if p.p.iter().all(|&q| q == p.p[0]) {
        return (p.len() as f64).ln();
    }
    let value = match m {
        SpectralMeasure::ShannonEntropy => -p.p.iter().map(|&q| q * q.ln()).sum::<f64>(),
        SpectralMeasure::L2Participation => -p.p.iter().map(|&q| q * q).sum::<f64>().ln(),
    };
    // Round-off can push a single-mass or uniform spectrum a hair outside
    // [0, ln n].
    value.clamp(0.0, (p.len() as f64).ln())
}

pub fn d_eff(s: &Spectrum, m: SpectralMeasure) -> Result<f64> {
    let p = normalize_spectrum(s, DEFAULT_REL_FLOOR)?;
    let v = measure(&p, m);
    // exp(ln n) is not always n in floating point
    if v >= (p.len() as f64).ln() {
        return Ok(p.len() as f64);
    }
    Ok(v.exp())
}

pub fn d_eff_of_data(x: &SampleMatrix, m: SpectralMeasure) -> Result<f64> {
    d_eff(&pca_spectrum(x)?, m)
}
