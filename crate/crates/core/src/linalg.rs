//! Dense real-matrix primitives: sample matrices, centering, population
//! covariance, and a cyclic Jacobi eigensolver for symmetric matrices.
//!
//! Everything here is sized for desk-scale data: tens of thousands of rows and
//! at most a few hundred feature columns.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major `(samples x features)` matrix with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl SampleMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidInput(format!(
                "sample matrix must be at least 1x1, got {n_rows}x{n_cols}"
            )));
        }
        if data.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                what: "sample matrix buffer",
                expected: n_rows * n_cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {}, column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        Ok(SampleMatrix {
            data,
            n_rows,
            n_cols,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), n_cols, data)
    }

    /// A single-feature matrix.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(n, 1, values)
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::new(n_rows, n_cols, vec![0.0; n_rows * n_cols])
    }

    // Callers guarantee shape and finiteness.
    pub(crate) fn from_parts(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n_rows * n_cols);
        SampleMatrix {
            data,
            n_rows,
            n_cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_cols];
        for row in self.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n_rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Rows picked (with repetition allowed) by index.
    pub fn select_rows(&self, indices: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        SampleMatrix::from_parts(indices.len(), self.n_cols, data)
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &SampleMatrix) -> Result<SampleMatrix> {
        if self.n_rows != other.n_rows {
            return Err(Error::DimensionMismatch {
                what: "hstack row count",
                expected: self.n_rows,
                got: other.n_rows,
            });
        }
        let n_cols = self.n_cols + other.n_cols;
        let mut data = Vec::with_capacity(self.n_rows * n_cols);
        for (a, b) in self.rows().zip(other.rows()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(SampleMatrix::from_parts(self.n_rows, n_cols, data))
    }

    /// `self * w` where `w` is `(n_cols x out)` row-major.
    pub fn matmul(&self, w: &[f64], out: usize) -> Result<SampleMatrix> {
        if w.len() != self.n_cols * out {
            return Err(Error::DimensionMismatch {
                what: "matmul weight buffer",
                expected: self.n_cols * out,
                got: w.len(),
            });
        }
        let mut data = vec![0.0; self.n_rows * out];
        for (row, dst) in self.rows().zip(data.chunks_exact_mut(out)) {
            for (k, &x) in row.iter().enumerate() {
                let wk = &w[k * out..(k + 1) * out];
                for (d, &wv) in dst.iter_mut().zip(wk) {
                    *d += x * wv;
                }
            }
        }
        Ok(SampleMatrix::from_parts(self.n_rows, out, data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Symmetric positive semidefinite matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    data: Vec<f64>,
    dim: usize,
}

impl CovMatrix {
    /// Wraps a square buffer after checking symmetry to `1e-10` relative.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                what: "square matrix buffer",
                expected: dim * dim,
                got: data.len(),
            });
        }
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                if (a - b).abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(CovMatrix { data, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }
}

/// Eigenvalues in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    /// Sorts the given values descending.
    pub fn new(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Spectrum { eigenvalues }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

pub fn center(x: &SampleMatrix) -> SampleMatrix {
    let means = x.column_means();
    let mut data = x.data.clone();
    for row in data.chunks_exact_mut(x.n_cols) {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    SampleMatrix::from_parts(x.n_rows, x.n_cols, data)
}

/// Population covariance (divides by `N`).
pub fn covariance(x: &SampleMatrix) -> Result<CovMatrix> {
    if x.n_rows < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.n_rows,
        });
    }
    let xc = center(x);
    let d = x.n_cols;
    let mut s = vec![0.0; d * d];
    for row in xc.rows() {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            let dst = &mut s[i * d..(i + 1) * d];
            for (sij, &rj) in dst[i..].iter_mut().zip(&row[i..]) {
                *sij += ri * rj;
            }
        }
    }
    let n = x.n_rows as f64;
    for i in 0..d {
        for j in i..d {
            let v = s[i * d + j] / n;
            s[i * d + j] = v;
            s[j * d + i] = v;
        }
    }
    Ok(CovMatrix { data: s, dim: d })
}

/// Cross-covariance `Cov(a, b)`, an `(a.n_cols x b.n_cols)` row-major buffer.
pub fn cross_covariance(a: &SampleMatrix, b: &SampleMatrix) -> Result<Vec<f64>> {
    if a.n_rows != b.n_rows {
        return Err(Error::DimensionMismatch {
            what: "cross-covariance row count",
            expected: a.n_rows,
            got: b.n_rows,
        });
    }
    if a.n_rows < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: a.n_rows,
        });
    }
    let (ac, bc) = (center(a), center(b));
    let (da, db) = (a.n_cols, b.n_cols);
    let mut c = vec![0.0; da * db];
    for (ra, rb) in ac.rows().zip(bc.rows()) {
        for (i, &x) in ra.iter().enumerate() {
            for (cij, &y) in c[i * db..(i + 1) * db].iter_mut().zip(rb) {
                *cij += x * y;
            }
        }
    }
    let n = a.n_rows as f64;
    c.iter_mut().for_each(|v| *v /= n);
    Ok(c)
}

const MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Stops once the largest off-diagonal magnitude falls below `1e-12` times the
/// Frobenius norm, which for a PSD matrix is no larger than its trace.
pub fn sym_eigvals(s: &CovMatrix) -> Result<Spectrum> {
    let n = s.dim;
    let mut a = s.data.clone();
    let frob = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-12 * frob;

    let max_off = |a: &[f64]| {
        let mut m = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.max(a[i * n + j].abs());
            }
        }
        m
    };

    let mut converged = max_off(&a) <= tol;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = arp - sn * (arq + tau * arp);
                    let new_rq = arq + sn * (arp - tau * arq);
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
            }
        }
        converged = max_off(&a) <= tol;
    }
    Ok(Spectrum::new((0..n).map(|i| a[i * n + i]).collect()))
}

/// Eigenvalues of the population covariance of `x`.
pub fn pca_spectrum(x: &SampleMatrix) -> Result<Spectrum> {
    sym_eigvals(&covariance(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(SampleMatrix::new(0, 1, vec![]).is_err());
        assert!(SampleMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(SampleMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(SampleMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn center_examples() {
        let x = SampleMatrix::from_rows(&[[4.0, -1.0], [4.0, -1.0], [4.0, -1.0]]).unwrap();
        assert!(center(&x).as_slice().iter().all(|&v| v == 0.0));

        let x = SampleMatrix::column(vec![1.0, 3.0]).unwrap();
        assert_eq!(center(&x).as_slice(), &[-1.0, 1.0]);

        let x = SampleMatrix::from_rows(&[[1.0, -2.0], [-1.0, 2.0]]).unwrap();
        let c = center(&x);
        for (a, b) in c.as_slice().iter().zip(x.as_slice()) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn centered_columns_have_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..500 * 4).map(|_| 1e3 + rng.random::<f64>() * 10.0).collect();
        let x = SampleMatrix::new(500, 4, data).unwrap();
        for m in center(&x).column_means() {
            assert!(m.abs() <= 1e-12 * 1e3);
        }
    }

    #[test]
    fn covariance_examples() {
        let x = SampleMatrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        let s = covariance(&x).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 1.0, 1.0, 1.0]);

        let x = SampleMatrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]]).unwrap();
        let s = covariance(&x).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 0), 0.0);
        assert_eq!(s.get(1, 1), 0.0);

        let one = SampleMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(
            covariance(&one),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn covariance_of_independent_normals_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50_000;
        let d = 3;
        let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let s = covariance(&SampleMatrix::new(n, d, data).unwrap()).unwrap();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    assert!(s.get(i, j).abs() < 0.03, "off-diagonal {}", s.get(i, j));
                }
            }
        }
    }

    #[test]
    fn eigen_examples() {
        let id = CovMatrix::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(sym_eigvals(&id).unwrap().eigenvalues(), &[1.0, 1.0, 1.0]);

        let d = CovMatrix::new(2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(sym_eigvals(&d).unwrap().eigenvalues(), &[3.0, 2.0]);

        // lambda^2 - 2 lambda = 0
        let ones = CovMatrix::new(2, vec![1.0; 4]).unwrap();
        let e = sym_eigvals(&ones).unwrap();
        assert!(close(e.eigenvalues()[0], 2.0, 1e-14));
        assert!(close(e.eigenvalues()[1], 0.0, 1e-14));
    }

    #[test]
    fn pca_examples() {
        let x = SampleMatrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(pca_spectrum(&x)
            .unwrap()
            .eigenvalues()
            .iter()
            .all(|&v| v == 0.0));

        let x = SampleMatrix::column(vec![0.0, 2.0]).unwrap();
        assert_eq!(pca_spectrum(&x).unwrap().eigenvalues(), &[1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<[f64; 2]> = (0..200)
            .map(|_| {
                let t: f64 = rng.sample(StandardNormal);
                [t, -0.7 * t]
            })
            .collect();
        let s = pca_spectrum(&SampleMatrix::from_rows(&rows).unwrap()).unwrap();
        let e = s.eigenvalues();
        assert!(e[1].abs() < 1e-8 * e[0]);
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        assert!(CovMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
    }

    #[test]
    fn cross_covariance_of_copy_is_covariance() {
        let x = SampleMatrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [1.0, -1.0]]).unwrap();
        let c = cross_covariance(&x, &x).unwrap();
        let s = covariance(&x).unwrap();
        for (a, b) in c.iter().zip(s.as_slice()) {
            assert!(close(*a, *b, 1e-14));
        }
    }

    #[test]
    fn matmul_and_hstack() {
        let x = SampleMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let y = x.matmul(&[1.0, 0.0, 1.0, 0.0, 1.0, 1.0], 3).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
        let h = x.hstack(&SampleMatrix::column(vec![9.0, 8.0]).unwrap()).unwrap();
        assert_eq!(h.row(1), &[3.0, 4.0, 8.0]);
    }
}
