//! Covariance of the mean EC profile across levels.
//!
//! The generalized least-squares fit needs the U x U error covariance of the
//! averaged Euler characteristics. Five estimation schemes are provided,
//! from the identity (plain least squares) through smoothed and
//! dimension-reduced versions of the sample covariance to its raw
//! Moore-Penrose pseudoinverse. All schemes except the pseudoinverse
//! guarantee a strictly positive-definite matrix; the pseudoinverse records
//! its null space instead. Levels at which every field has the same EC
//! (sample variance zero) carry no information and are dropped; their
//! indices are reported so the regression can drop them too.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursion::EcProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CovMethod {
    Identity,
    #[default]
    SmoothedDiagonal,
    SmoothedCorrelogram,
    SampsonGuttorp {
        k: usize,
    },
    PseudoInverse,
}

impl CovMethod {
    pub fn parse(s: &str) -> Result<CovMethod> {
        match s {
            "identity" | "i" => Ok(CovMethod::Identity),
            "sd" => Ok(CovMethod::SmoothedDiagonal),
            "sc" => Ok(CovMethod::SmoothedCorrelogram),
            "sgw" => Ok(CovMethod::SampsonGuttorp { k: 10 }),
            "pi" => Ok(CovMethod::PseudoInverse),
            other => Err(Error::InvalidInput(format!(
                "unknown covariance method '{other}' (expected identity|sd|sc|sgw|pi)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CovMethod::Identity => "identity",
            CovMethod::SmoothedDiagonal => "sd",
            CovMethod::SmoothedCorrelogram => "sc",
            CovMethod::SampsonGuttorp { .. } => "sgw",
            CovMethod::PseudoInverse => "pi",
        }
    }
}

/// Sample moments of the mean EC across fields, per level.
pub struct Moments {
    /// Variance of the mean EC (unbiased sample variance divided by F).
    pub var: Vec<f64>,
    /// Covariance of the mean EC.
    pub cov: DMatrix<f64>,
    /// Sample correlation; rows/columns of zero-variance levels are zero.
    pub corr: DMatrix<f64>,
}

/// Unbiased sample moments across the `F` fields of a profile, scaled by
/// `1/F` so they describe the averaged profile.
pub fn sample_moments(profile: &EcProfile) -> Result<Moments> {
    let f = profile.field_count();
    if f < 2 {
        return Err(Error::InsufficientFields { needed: 2, got: f });
    }
    let u = profile.level_count();
    let mut mean = vec![0.0; u];
    for row in &profile.ec {
        for (j, &e) in row.iter().enumerate() {
            mean[j] += e as f64;
        }
    }
    for m in &mut mean {
        *m /= f as f64;
    }
    let scale = 1.0 / ((f - 1) as f64 * f as f64); // unbiased, then /F
    let mut cov = DMatrix::zeros(u, u);
    for row in &profile.ec {
        for j in 0..u {
            let dj = row[j] as f64 - mean[j];
            for i in j..u {
                let di = row[i] as f64 - mean[i];
                cov[(j, i)] += dj * di * scale;
            }
        }
    }
    for j in 0..u {
        for i in 0..j {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let var: Vec<f64> = (0..u).map(|j| cov[(j, j)]).collect();
    let mut corr = DMatrix::zeros(u, u);
    for j in 0..u {
        for i in 0..u {
            let d = (var[i] * var[j]).sqrt();
            if d > 0.0 {
                corr[(j, i)] = cov[(j, i)] / d;
            }
        }
    }
    Ok(Moments { var, cov, corr })
}

enum InverseKind {
    /// Strictly PD: whitening through the Cholesky factor.
    Chol(Cholesky<f64, Dyn>),
    /// Strictly positive diagonal: whitening by reciprocal square roots.
    Diag(Vec<f64>),
    /// Pseudoinverse: retained eigenpairs of the (possibly singular) matrix.
    Eigen { vecs: DMatrix<f64>, vals: Vec<f64> },
}

/// Estimated covariance over the retained levels plus the operator needed to
/// whiten a GLS system with it.
pub struct CovarianceEstimate {
    pub method: CovMethod,
    /// Covariance over the retained levels, symmetric.
    pub matrix: DMatrix<f64>,
    /// Indices (into the profile's levels) kept for the regression.
    pub retained: Vec<usize>,
    /// Zero-variance level indices removed before estimation.
    pub dropped_levels: Vec<usize>,
    kind: InverseKind,
}

impl CovarianceEstimate {
    /// Applies a matrix `W` with `W' W = inverse (or pseudoinverse) of the
    /// covariance` to the columns of `m`. GLS reduces to ordinary least
    /// squares on whitened inputs.
    pub fn whiten(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            InverseKind::Chol(ch) => ch.l().solve_lower_triangular(m).expect(
                "Cholesky factor is nonsingular by construction",
            ),
            InverseKind::Diag(vars) => {
                let mut w = m.clone();
                for (r, &v) in vars.iter().enumerate() {
                    let s = 1.0 / v.sqrt();
                    for c in 0..w.ncols() {
                        w[(r, c)] *= s;
                    }
                }
                w
            }
            InverseKind::Eigen { vecs, vals } => {
                let mut w = vecs.transpose() * m;
                for (r, &lam) in vals.iter().enumerate() {
                    let s = 1.0 / lam.sqrt();
                    for c in 0..w.ncols() {
                        w[(r, c)] *= s;
                    }
                }
                w
            }
        }
    }

    pub fn whiten_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        DVector::from_column_slice(self.whiten(&m).as_slice())
    }

    /// Inverse (pseudoinverse for the PI method) as an explicit matrix.
    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        let n = self.matrix.nrows();
        let w = self.whiten(&DMatrix::identity(n, n));
        w.transpose() * w
    }

    /// Wraps an externally supplied positive-definite matrix (eigenvalue
    /// flooring is applied if it fails Cholesky).
    pub fn from_matrix(matrix: DMatrix<f64>, method: CovMethod) -> Result<CovarianceEstimate> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch("covariance must be square".into()));
        }
        let n = matrix.nrows();
        let (matrix, chol) = ensure_pd(matrix);
        Ok(CovarianceEstimate {
            method,
            matrix,
            retained: (0..n).collect(),
            dropped_levels: Vec::new(),
            kind: InverseKind::Chol(chol),
        })
    }

    /// CSV export of the retained-level covariance for diagnostics.
    pub fn to_csv(&self, levels: &[f64]) -> String {
        let mut out = String::from("u");
        for &i in &self.retained {
            out.push_str(&format!(",{}", levels[i]));
        }
        out.push('\n');
        for (r, &i) in self.retained.iter().enumerate() {
            out.push_str(&format!("{}", levels[i]));
            for c in 0..self.retained.len() {
                out.push_str(&format!(",{}", self.matrix[(r, c)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Estimate the covariance of the mean EC profile. `Identity` needs no
/// moments and works for a single field; every other method needs `F >= 2`.
pub fn estimate(profile: &EcProfile, method: CovMethod) -> Result<CovarianceEstimate> {
    if method == CovMethod::Identity {
        return identity_estimate(profile.level_count());
    }
    let moments = sample_moments(profile)?;
    if method == CovMethod::PseudoInverse && profile.field_count() < profile.level_count() {
        // The sample covariance has rank < F; its eigenpairs come cheaper
        // from the F x F Gram matrix of the centered data.
        return pseudo_inverse_from_data(profile, &moments);
    }
    estimate_from_moments(&profile.levels, &moments, method)
}

/// Pseudoinverse eigenpairs through the Gram matrix: with centered, scaled
/// data `A` (retained levels x fields) the covariance is `A A'`, whose
/// nonzero spectrum equals that of `A' A`.
fn pseudo_inverse_from_data(
    profile: &EcProfile,
    moments: &Moments,
) -> Result<CovarianceEstimate> {
    let u = profile.level_count();
    let f = profile.field_count();
    let retained: Vec<usize> = (0..u).filter(|&j| moments.var[j] > 0.0).collect();
    let dropped: Vec<usize> = (0..u).filter(|&j| moments.var[j] <= 0.0).collect();
    let n = retained.len();
    if n < 3 {
        return Err(Error::InsufficientLevels { needed: 3, got: n });
    }
    let scale = (1.0 / ((f - 1) as f64 * f as f64)).sqrt();
    let mut a = DMatrix::zeros(n, f);
    for (r, &j) in retained.iter().enumerate() {
        let mean = profile.mean_ec[j];
        for (c, row) in profile.ec.iter().enumerate() {
            a[(r, c)] = (row[j] as f64 - mean) * scale;
        }
    }
    let gram = a.transpose() * &a;
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = 1e-10 * lam_max;
    let keep: Vec<usize> = (0..f).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    let mut vecs = DMatrix::zeros(n, keep.len());
    let mut vals = Vec::with_capacity(keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let lam = eig.eigenvalues[i];
        let col = &a * eig.eigenvectors.column(i) / lam.sqrt();
        vecs.set_column(c, &col);
        vals.push(lam);
    }
    let mut matrix = DMatrix::zeros(n, n);
    for (r, &jr) in retained.iter().enumerate() {
        for (c, &jc) in retained.iter().enumerate() {
            matrix[(r, c)] = moments.cov[(jr, jc)];
        }
    }
    Ok(CovarianceEstimate {
        method: CovMethod::PseudoInverse,
        matrix,
        retained,
        dropped_levels: dropped,
        kind: InverseKind::Eigen { vecs, vals },
    })
}

fn identity_estimate(u: usize) -> Result<CovarianceEstimate> {
    let matrix = DMatrix::identity(u, u);
    let kind = InverseKind::Chol(Cholesky::new(matrix.clone()).unwrap());
    Ok(CovarianceEstimate {
        method: CovMethod::Identity,
        matrix,
        retained: (0..u).collect(),
        dropped_levels: Vec::new(),
        kind,
    })
}

/// Core estimator, usable with externally supplied moments (tests, synthetic
/// truth). Levels with zero variance are dropped for every method except
/// `Identity`, which keeps all levels.
pub fn estimate_from_moments(
    levels: &[f64],
    moments: &Moments,
    method: CovMethod,
) -> Result<CovarianceEstimate> {
    let u = levels.len();
    if method == CovMethod::Identity {
        return identity_estimate(u);
    }
    let retained: Vec<usize> = (0..u).filter(|&j| moments.var[j] > 0.0).collect();
    let dropped: Vec<usize> = (0..u).filter(|&j| moments.var[j] <= 0.0).collect();
    let n = retained.len();
    if n < 3 {
        return Err(Error::InsufficientLevels { needed: 3, got: n });
    }
    let x: Vec<f64> = retained.iter().map(|&j| levels[j]).collect();
    let v: Vec<f64> = retained.iter().map(|&j| moments.var[j]).collect();

    if method == CovMethod::SmoothedDiagonal {
        // Smoothed variances are strictly positive by construction; diagonal
        // whitening needs no factorization.
        let sv = smoothed_variances(&x, &v);
        return Ok(CovarianceEstimate {
            method,
            matrix: DMatrix::from_diagonal(&DVector::from_vec(sv.clone())),
            retained,
            dropped_levels: dropped,
            kind: InverseKind::Diag(sv),
        });
    }

    let matrix = match method {
        CovMethod::Identity | CovMethod::SmoothedDiagonal => unreachable!(),
        CovMethod::SmoothedCorrelogram => {
            let sv = smoothed_variances(&x, &v);
            let corr = smoothed_correlogram(&x, &moments.corr, &retained);
            let mut m = DMatrix::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    m[(r, c)] = corr[(r, c)] * (sv[r] * sv[c]).sqrt();
                }
            }
            m
        }
        CovMethod::SampsonGuttorp { k } => {
            if n < k + 2 {
                return Err(Error::InsufficientLevels { needed: k + 2, got: n });
            }
            sampson_guttorp(&x, &v, &moments.cov, &retained, k)
        }
        CovMethod::PseudoInverse => {
            let mut m = DMatrix::zeros(n, n);
            for (r, &jr) in retained.iter().enumerate() {
                for (c, &jc) in retained.iter().enumerate() {
                    m[(r, c)] = moments.cov[(jr, jc)];
                }
            }
            m
        }
    };

    let kind = match method {
        CovMethod::PseudoInverse => {
            let eig = matrix.clone().symmetric_eigen();
            let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
            let cutoff = 1e-10 * lam_max;
            let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
            let mut vecs = DMatrix::zeros(n, keep.len());
            let mut vals = Vec::with_capacity(keep.len());
            for (c, &i) in keep.iter().enumerate() {
                vecs.set_column(c, &eig.eigenvectors.column(i));
                vals.push(eig.eigenvalues[i]);
            }
            InverseKind::Eigen { vecs, vals }
        }
        _ => {
            let (matrix, chol) = ensure_pd(matrix);
            return Ok(CovarianceEstimate {
                method,
                matrix,
                retained,
                dropped_levels: dropped,
                kind: InverseKind::Chol(chol),
            });
        }
    };
    Ok(CovarianceEstimate {
        method,
        matrix,
        retained,
        dropped_levels: dropped,
        kind,
    })
}

/// Floors eigenvalues if the matrix fails Cholesky; returns the possibly
/// adjusted matrix and its factorization.
fn ensure_pd(matrix: DMatrix<f64>) -> (DMatrix<f64>, Cholesky<f64, Dyn>) {
    if let Some(ch) = Cholesky::new(matrix.clone()) {
        return (matrix, ch);
    }
    let n = matrix.nrows();
    let floor = 1e-8 * matrix.trace() / n as f64;
    let mut eig = matrix.symmetric_eigen();
    for v in eig.eigenvalues.iter_mut() {
        *v = v.max(floor);
    }
    let rebuilt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues)
        * eig.eigenvectors.transpose();
    // symmetrize against round-off
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    let ch = Cholesky::new(rebuilt.clone())
        .expect("eigenvalue-floored matrix must be positive definite");
    (rebuilt, ch)
}

/// Smooth log variances with the local quadratic smoother, return variances
/// (exponentiation keeps them strictly positive).
fn smoothed_variances(x: &[f64], v: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = v.iter().map(|&a| a.ln()).collect();
    local_quadratic_smooth(x, &logs, 0.10)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Stationary correlation model: bin sample correlations by level lag,
/// smooth over lag, force the symmetric lag sequence positive semidefinite
/// by clipping negative circulant spectral coefficients, renormalize.
fn smoothed_correlogram(x: &[f64], corr: &DMatrix<f64>, retained: &[usize]) -> DMatrix<f64> {
    let n = x.len();
    // bin width: median spacing of the retained levels
    let mut diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let w = diffs[diffs.len() / 2].max(f64::MIN_POSITIVE);
    let bin = |d: f64| -> usize { (d / w).round() as usize };
    let b_max = bin(x[n - 1] - x[0]);
    let mut sums = vec![0.0; b_max + 1];
    let mut counts = vec![0usize; b_max + 1];
    for r in 0..n {
        for c in 0..n {
            let b = bin((x[r] - x[c]).abs());
            sums[b] += corr[(retained[r], retained[c])];
            counts[b] += 1;
        }
    }
    // lag-0 is 1 by definition; smooth the positive lags that have data
    let mut lag_x = Vec::new();
    let mut lag_y = Vec::new();
    for b in 1..=b_max {
        if counts[b] > 0 {
            lag_x.push(b as f64 * w);
            lag_y.push(sums[b] / counts[b] as f64);
        }
    }
    let smoothed = if lag_x.len() >= 3 {
        local_quadratic_smooth(&lag_x, &lag_y, 0.10)
    } else {
        lag_y.clone()
    };
    // sequence r[0..=b_max], nearest fill for empty bins
    let mut r_seq = vec![0.0; b_max + 1];
    r_seq[0] = 1.0;
    for b in 1..=b_max {
        let target = b as f64 * w;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &lx) in lag_x.iter().enumerate() {
            let d = (lx - target).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        r_seq[b] = if lag_x.is_empty() { 0.0 } else { smoothed[best] };
    }
    // symmetric circulant embedding of length 2*b_max (or 2 if b_max==0)
    let len = (2 * b_max).max(2);
    let mut c_seq = vec![0.0; len];
    for b in 0..=b_max.min(len - 1) {
        c_seq[b] = r_seq[b];
        if b > 0 {
            c_seq[len - b] = r_seq[b];
        }
    }
    // real circulant spectrum via direct cosine sums, clip negatives
    let mut spec = vec![0.0; len];
    for m in 0..len {
        let mut s = 0.0;
        for (b, &cb) in c_seq.iter().enumerate() {
            s += cb * (2.0 * std::f64::consts::PI * (m * b) as f64 / len as f64).cos();
        }
        spec[m] = s.max(0.0);
    }
    let mut r_fixed = vec![0.0; b_max + 1];
    for (b, rf) in r_fixed.iter_mut().enumerate() {
        let mut s = 0.0;
        for (m, &sm) in spec.iter().enumerate() {
            s += sm * (2.0 * std::f64::consts::PI * (m * b) as f64 / len as f64).cos();
        }
        *rf = s / len as f64;
    }
    let r0 = r_fixed[0];
    let mut out = DMatrix::identity(n, n);
    if r0 > 0.0 {
        for r in 0..n {
            for c in 0..n {
                let b = bin((x[r] - x[c]).abs());
                out[(r, c)] = (r_fixed[b] / r0).clamp(-1.0, 1.0);
            }
        }
        for i in 0..n {
            out[(i, i)] = 1.0;
        }
    }
    out
}

/// Sampson-Guttorp-style smoothing: classical metric MDS on the sample
/// semivariogram distances, keep the top-`k` coordinates, translate the
/// reduced distances back to a covariance with smoothed variances.
fn sampson_guttorp(
    x: &[f64],
    v: &[f64],
    cov: &DMatrix<f64>,
    retained: &[usize],
    k: usize,
) -> DMatrix<f64> {
    let n = x.len();
    let mut d2 = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let s = v[r] + v[c] - 2.0 * cov[(retained[r], retained[c])];
            d2[(r, c)] = s.max(0.0);
        }
    }
    // double-centered Gram matrix
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let j = DMatrix::identity(n, n) - ones;
    let b = -0.5 * (&j * &d2 * &j);
    let b = (&b + b.transpose()) * 0.5;
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b2| {
        eig.eigenvalues[b2]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
    });
    let kept: Vec<usize> = order
        .into_iter()
        .take(k)
        .filter(|&i| eig.eigenvalues[i] > 0.0)
        .collect();
    // coordinates in the top-k MDS space
    let mut coords = DMatrix::zeros(n, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..n {
            coords[(r, c)] = eig.eigenvectors[(r, i)] * s;
        }
    }
    let sv = smoothed_variances(x, v);
    let mut out = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if r == c {
                out[(r, c)] = sv[r];
                continue;
            }
            let mut dist2 = 0.0;
            for t in 0..coords.ncols() {
                let d = coords[(r, t)] - coords[(c, t)];
                dist2 += d * d;
            }
            out[(r, c)] = 0.5 * (sv[r] + sv[c] - dist2);
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Local quadratic regression with tricube weights and a nearest-neighbor
/// bandwidth covering `max(5, ceil(frac * n))` points.
pub fn local_quadratic_smooth(x: &[f64], y: &[f64], frac: f64) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        return y.to_vec();
    }
    let k = ((frac * n as f64).ceil() as usize).max(5).min(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // distances to all points; take the k nearest
        let mut d: Vec<(f64, usize)> = (0..n).map(|j| ((x[j] - x[i]).abs(), j)).collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let h = d[k - 1].0;
        if h <= 0.0 {
            out.push(y[i]);
            continue;
        }
        // weighted quadratic fit centered at x[i]
        let mut a = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for &(dist, j) in d.iter().take(k) {
            let t = (dist / h).min(1.0);
            let wgt = {
                let c = 1.0 - t * t * t;
                c * c * c
            };
            let dx = x[j] - x[i];
            let basis = [1.0, dx, dx * dx];
            for r in 0..3 {
                for c in 0..3 {
                    a[r][c] += wgt * basis[r] * basis[c];
                }
                rhs[r] += wgt * basis[r] * y[j];
            }
        }
        let am = nalgebra::Matrix3::from_fn(|r, c| a[r][c]);
        let bv = nalgebra::Vector3::new(rhs[0], rhs[1], rhs[2]);
        match am.lu().solve(&bv) {
            Some(sol) if sol[0].is_finite() => out.push(sol[0]),
            _ => {
                // degenerate window: fall back to the weighted mean
                let (mut sw, mut sy) = (0.0, 0.0);
                for &(dist, j) in d.iter().take(k) {
                    let t = (dist / h).min(1.0);
                    let c = 1.0 - t * t * t;
                    let wgt = c * c * c;
                    sw += wgt;
                    sy += wgt * y[j];
                }
                out.push(sy / sw);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excursion::EcProfile;

    fn profile(levels: Vec<f64>, ec: Vec<Vec<i64>>) -> EcProfile {
        let f = ec.len() as f64;
        let u = levels.len();
        let mean_ec = (0..u)
            .map(|j| ec.iter().map(|r| r[j] as f64).sum::<f64>() / f)
            .collect();
        EcProfile { levels, ec, mean_ec }
    }

    #[test]
    fn identical_rows_have_zero_variance() {
        let p = profile(vec![0.0, 1.0, 2.0], vec![vec![3, 2, 1]; 4]);
        let m = sample_moments(&p).unwrap();
        assert!(m.var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_field_variance_by_hand() {
        // EC values {0, 2}: unbiased sample var 2, var of the mean 1
        let p = profile(vec![0.0], vec![vec![0], vec![2]]);
        let m = sample_moments(&p).unwrap();
        assert_eq!(m.var[0], 1.0);
    }

    #[test]
    fn single_field_rejected() {
        let p = profile(vec![0.0, 1.0], vec![vec![1, 0]]);
        assert!(matches!(
            sample_moments(&p),
            Err(Error::InsufficientFields { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn identity_estimate_is_identity() {
        let p = profile(
            vec![0.0, 1.0, 2.0],
            vec![vec![1, 2, 0], vec![2, 1, 1], vec![0, 3, 2]],
        );
        let e = estimate(&p, CovMethod::Identity).unwrap();
        assert_eq!(e.matrix, DMatrix::identity(3, 3));
        assert!(e.dropped_levels.is_empty());
    }

    #[test]
    fn smoother_reproduces_quadratics_exactly() {
        let x: Vec<f64> = (0..40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&u| -u * u).collect();
        let s = local_quadratic_smooth(&x, &y, 0.10);
        for (a, b) in s.iter().zip(&y) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn sd_recovers_known_variance_function() {
        // noiseless moments with var(u) = exp(-u^2): SD must sit within 5%
        let levels: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let var: Vec<f64> = levels.iter().map(|&u| (-u * u).exp()).collect();
        let n = levels.len();
        let cov = DMatrix::from_diagonal(&DVector::from_vec(var.clone()));
        let corr = DMatrix::identity(n, n);
        let m = Moments { var: var.clone(), cov, corr };
        let e = estimate_from_moments(&levels, &m, CovMethod::SmoothedDiagonal).unwrap();
        for (i, &truth) in var.iter().enumerate() {
            let got = e.matrix[(i, i)];
            assert!(
                (got - truth).abs() < 0.05 * truth,
                "level {}: {got} vs {truth}",
                levels[i]
            );
        }
    }

    fn random_profile(f: usize, u: usize, seed: u64) -> EcProfile {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let levels: Vec<f64> = (0..u).map(|j| j as f64 * 0.2).collect();
        let ec: Vec<Vec<i64>> = (0..f)
            .map(|_| (0..u).map(|_| rng.gen_range(-5i64..30)).collect())
            .collect();
        profile(levels, ec)
    }

    #[test]
    fn all_pd_methods_pass_cholesky() {
        let p = random_profile(15, 30, 3);
        for method in [
            CovMethod::Identity,
            CovMethod::SmoothedDiagonal,
            CovMethod::SmoothedCorrelogram,
            CovMethod::SampsonGuttorp { k: 10 },
        ] {
            let e = estimate(&p, method).unwrap();
            assert!(
                Cholesky::new(e.matrix.clone()).is_some(),
                "{} not PD",
                method.as_str()
            );
            // symmetry
            let asym = (&e.matrix - e.matrix.transpose()).norm();
            assert!(asym < 1e-10, "{} asymmetric", method.as_str());
        }
    }

    #[test]
    fn sd_variances_finite_and_positive() {
        // extreme variance scales must survive the log-space smoothing
        let p = random_profile(8, 25, 11);
        let e = estimate(&p, CovMethod::SmoothedDiagonal).unwrap();
        for i in 0..e.matrix.nrows() {
            let v = e.matrix[(i, i)];
            assert!(v.is_finite() && v > 0.0);
        }
    }

    #[test]
    fn pseudo_inverse_satisfies_moore_penrose() {
        // rank-deficient 50x50 from 15 fields
        let p = random_profile(15, 50, 7);
        let e = estimate(&p, CovMethod::PseudoInverse).unwrap();
        let pinv = e.inverse_matrix();
        let lhs = &e.matrix * &pinv * &e.matrix;
        let err = (&lhs - &e.matrix).norm();
        assert!(err < 1e-8 * e.matrix.norm().max(1.0), "frobenius err {err}");
        // and the reverse identity
        let rhs = &pinv * &e.matrix * &pinv;
        assert!((&rhs - &pinv).norm() < 1e-8 * pinv.norm().max(1.0));
    }

    #[test]
    fn sc_has_unit_diagonal_correlation() {
        let p = random_profile(15, 30, 5);
        let e = estimate(&p, CovMethod::SmoothedCorrelogram).unwrap();
        let sd_e = estimate(&p, CovMethod::SmoothedDiagonal).unwrap();
        // implied correlation entries bounded by 1 (up to flooring slack)
        for r in 0..e.matrix.nrows() {
            for c in 0..e.matrix.ncols() {
                let d = (e.matrix[(r, r)] * e.matrix[(c, c)]).sqrt();
                assert!(e.matrix[(r, c)].abs() <= d * (1.0 + 1e-6));
            }
        }
        // diagonal agrees with the SD variances it was built from
        for i in 0..e.matrix.nrows() {
            let a = e.matrix[(i, i)];
            let b = sd_e.matrix[(i, i)];
            assert!((a - b).abs() < 1e-6 * b.abs().max(1e-12) + 1e-9);
        }
    }

    #[test]
    fn zero_variance_levels_dropped() {
        // first level identical across fields
        let ec = vec![vec![5, 1, 2, 3, 1], vec![5, 0, 3, 1, 2], vec![5, 2, 1, 2, 4]];
        let p = profile(vec![0.0, 0.5, 1.0, 1.5, 2.0], ec);
        let e = estimate(&p, CovMethod::SmoothedDiagonal).unwrap();
        assert_eq!(e.dropped_levels, vec![0]);
        assert_eq!(e.retained, vec![1, 2, 3, 4]);
        assert_eq!(e.matrix.nrows(), 4);
    }

    #[test]
    fn sgw_needs_enough_levels() {
        let p = random_profile(6, 8, 2);
        assert!(matches!(
            estimate(&p, CovMethod::SampsonGuttorp { k: 10 }),
            Err(Error::InsufficientLevels { .. })
        ));
        assert!(estimate(&p, CovMethod::SampsonGuttorp { k: 4 }).is_ok());
    }

    #[test]
    fn sd_monte_carlo_converges_to_diagonal_truth() {
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let f = 500;
        let levels: Vec<f64> = (0..21).map(|j| -2.0 + 0.2 * j as f64).collect();
        // smooth truth for the per-field sd; integers via rounding of a
        // wide normal so discretization is negligible
        let sd_true: Vec<f64> = levels.iter().map(|&u| 40.0 * (-u * u / 8.0).exp()).collect();
        let ec: Vec<Vec<i64>> = (0..f)
            .map(|_| {
                levels
                    .iter()
                    .enumerate()
                    .map(|(j, _)| {
                        let n = Normal::new(0.0, sd_true[j]).unwrap();
                        n.sample(&mut rng).round() as i64
                    })
                    .collect()
            })
            .collect();
        let _ = rng.gen::<u64>();
        let p = profile(levels.clone(), ec);
        let e = estimate(&p, CovMethod::SmoothedDiagonal).unwrap();
        // sample variances at F=500 carry ~6% noise per level and the
        // boundary fits amplify it, so convergence is asserted in RMS
        let mut sq = 0.0;
        for (r, &j) in e.retained.iter().enumerate() {
            let truth = sd_true[j] * sd_true[j] / f as f64; // var of the mean
            let got = e.matrix[(r, r)];
            let rel = (got - truth) / truth;
            sq += rel * rel;
        }
        let rms = (sq / e.retained.len() as f64).sqrt();
        assert!(rms < 0.10, "rms relative error {rms}");
    }

    #[test]
    fn whiten_inverts_covariance() {
        let p = random_profile(20, 12, 9);
        for method in [
            CovMethod::SmoothedDiagonal,
            CovMethod::SmoothedCorrelogram,
            CovMethod::SampsonGuttorp { k: 6 },
        ] {
            let e = estimate(&p, method).unwrap();
            let w = e.whiten(&DMatrix::identity(e.matrix.nrows(), e.matrix.nrows()));
            let should_be_inv = w.transpose() * w;
            let prod = &should_be_inv * &e.matrix;
            let err = (&prod - DMatrix::identity(prod.nrows(), prod.ncols())).norm();
            assert!(err < 1e-6, "{}: {err}", method.as_str());
        }
    }
}
