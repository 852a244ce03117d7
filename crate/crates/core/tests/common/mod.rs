//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ibflow::linalg::CovMatrix;
use ibflow::mi::DiscreteJoint;
use ibflow::SampleMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> SampleMatrix {
    let data = (0..rows * cols).map(|_| r.sample(StandardNormal)).collect();
    SampleMatrix::new(rows, cols, data).unwrap()
}

/// `(A + A^T) / 2` for a Gaussian `A`.
pub fn random_symmetric(r: &mut ChaCha8Rng, d: usize) -> CovMatrix {
    let a: Vec<f64> = (0..d * d).map(|_| r.sample(StandardNormal)).collect();
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            s[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
        }
    }
    CovMatrix::new(d, s).unwrap()
}

/// Orthogonal matrix from Gram-Schmidt on a Gaussian matrix, row-major.
pub fn random_orthogonal(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q.concat()
}

/// `Q^T S Q`.
pub fn conjugate(s: &CovMatrix, q: &[f64]) -> CovMatrix {
    let d = s.dim();
    let mut sq = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sq[i * d + j] = (0..d).map(|k| s.get(i, k) * q[k * d + j]).sum();
        }
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| q[k * d + i] * sq[k * d + j]).sum();
        }
    }
    // symmetrize round-off
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (out[i * d + j] + out[j * d + i]);
            out[i * d + j] = m;
            out[j * d + i] = m;
        }
    }
    CovMatrix::new(d, out).unwrap()
}

/// Full-support joint with `exp(scale * N(0,1))` weights.
pub fn random_joint(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DiscreteJoint {
    let w = (0..rows * cols)
        .map(|_| (scale * r.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    DiscreteJoint::from_weights(rows, cols, w).unwrap()
}

/// Central-difference step used by gradient checks.
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL: f64 = 1e-4;

/// First entry where analytic and numeric gradients disagree beyond
/// `FD_REL` relative (floored at `1e-3` of the largest entry), or a
/// whole-vector mismatch reported at index `usize::MAX`.
pub fn grad_mismatch(analytic: &[f64], numeric: &[f64]) -> Option<(usize, f64, f64)> {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut diff2, mut norm2) = (0.0, 0.0);
    for (k, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1e-3 * scale);
        if (a - n).abs() > FD_REL * denom {
            return Some((k, a, n));
        }
        diff2 += (a - n).powi(2);
        norm2 += a * a;
    }
    (diff2.sqrt() > FD_REL * norm2.sqrt().max(1e-12)).then_some((usize::MAX, diff2.sqrt(), norm2.sqrt()))
}

pub fn with_entry(x: &SampleMatrix, k: usize, v: f64) -> SampleMatrix {
    let mut d = x.as_slice().to_vec();
    d[k] = v;
    SampleMatrix::new(x.n_rows(), x.n_cols(), d).unwrap()
}
