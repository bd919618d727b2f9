//! Generalized least-squares estimation of Lipschitz-Killing curvatures.
//!
//! The mean EC profile over levels `u_1 < ... < u_U` follows the linear
//! model `y(u_j) = sum_i L_i rho_i(u_j) + eps(u_j)` with heteroscedastic,
//! correlated errors. `L_0` equals the Euler characteristic of the domain
//! and is fixed by default, entering as a known offset; on the sphere `L_1`
//! vanishes for topological reasons and is likewise pinned at zero. The GLS
//! system is solved by whitening with the covariance estimate and an SVD on
//! the whitened design, which also supplies the condition-number guard.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{estimate as estimate_covariance, CovMethod, CovarianceEstimate};
use crate::domain::{DomainKind, FieldBundle, GridDomain, NormalizeMode};
use crate::error::{Error, Result};
use crate::excursion::{ec_profile, Connectivity, EcProfile};
use crate::gkf::{rho, tail_probability, threshold, LkcVector, RhoFamily, TailProbability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LevelSpacing {
    #[default]
    Equal,
    Quantile,
    Variance,
}

impl LevelSpacing {
    pub fn parse(s: &str) -> Result<LevelSpacing> {
        match s {
            "equal" => Ok(LevelSpacing::Equal),
            "quantile" => Ok(LevelSpacing::Quantile),
            "variance" => Ok(LevelSpacing::Variance),
            other => Err(Error::InvalidInput(format!(
                "unknown spacing '{other}' (expected equal|quantile|variance)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LevelSpacing::Equal => "equal",
            LevelSpacing::Quantile => "quantile",
            LevelSpacing::Variance => "variance",
        }
    }
}

/// Default number of levels; past roughly this count the fit no longer
/// improves.
pub const DEFAULT_LEVEL_COUNT: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelDesign {
    pub levels: Vec<f64>,
    pub spacing: LevelSpacing,
    /// Number of duplicate levels removed (quantile spacing on discrete data
    /// can collide).
    pub deduplicated: usize,
}

/// Choose regression levels from the observed value range.
pub fn design_levels(
    bundle: &FieldBundle,
    spacing: LevelSpacing,
    count: usize,
) -> Result<LevelDesign> {
    let needed = bundle.domain.manifold_dim() + 2;
    if count < needed {
        return Err(Error::TooFewLevels { needed, got: count });
    }
    let raw = match spacing {
        LevelSpacing::Equal => {
            let (lo, hi) = bundle.value_range();
            equal_spaced(lo, hi, count)
        }
        LevelSpacing::Quantile => {
            let mut vals: Vec<f64> = bundle.active_values().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (0..count)
                .map(|t| {
                    let p = (2 * t + 1) as f64 / (2 * count) as f64;
                    sample_quantile(&vals, p)
                })
                .collect()
        }
        LevelSpacing::Variance => {
            // EC sample variance over a fine pre-grid as placement density
            let (lo, hi) = bundle.value_range();
            let grid = equal_spaced(lo, hi, 201);
            let conn = Connectivity::default_for(bundle.domain.kind);
            let profile = ec_profile(bundle, &grid, conn)?;
            let moments = crate::covariance::sample_moments(&profile)?;
            variance_spacing(&grid, &moments.var, count)
        }
    };
    let mut levels = raw;
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let before = levels.len();
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let deduplicated = before - levels.len();
    if levels.len() < needed {
        return Err(Error::TooFewLevels {
            needed,
            got: levels.len(),
        });
    }
    Ok(LevelDesign {
        levels,
        spacing,
        deduplicated,
    })
}

fn equal_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(|i| lo + step * i as f64).collect()
}

/// Linear-interpolation sample quantile at probability `p`.
fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Inverse-CDF placement: level density proportional to `density` on `grid`.
/// Exposed for testing; constant density reproduces equal spacing.
pub fn variance_spacing(grid: &[f64], density: &[f64], count: usize) -> Vec<f64> {
    // trapezoid cumulative mass of the (floored) density
    let floor = density
        .iter()
        .cloned()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor * 1e-6 } else { 1.0 };
    let d: Vec<f64> = density.iter().map(|&v| v.max(floor)).collect();
    let mut cdf = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (d[i] + d[i - 1]) * (grid[i] - grid[i - 1]);
    }
    let total = *cdf.last().unwrap();
    (0..count)
        .map(|t| {
            let target = total * (2 * t + 1) as f64 / (2 * count) as f64;
            // invert by linear interpolation
            let j = cdf.partition_point(|&c| c < target).min(grid.len() - 1);
            if j == 0 {
                return grid[0];
            }
            let span = cdf[j] - cdf[j - 1];
            let frac = if span > 0.0 { (target - cdf[j - 1]) / span } else { 0.0 };
            grid[j - 1] + frac * (grid[j] - grid[j - 1])
        })
        .collect()
}

/// Regressor matrix `X[j][i] = rho_i(u_j)` over the free curvature orders,
/// plus the `rho_0` column separately when `L_0` is fixed (the caller scales
/// it by the domain's Euler characteristic to form the offset).
pub fn regressor_matrix(
    levels: &[f64],
    family: RhoFamily,
    dim: usize,
    fix_l0: bool,
) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
    let u = levels.len();
    let first = if fix_l0 { 1 } else { 0 };
    let mut x = DMatrix::zeros(u, dim + 1 - first);
    for (j, &lvl) in levels.iter().enumerate() {
        for i in first..=dim {
            x[(j, i - first)] = rho(family, i, lvl)?;
        }
    }
    let offset = if fix_l0 {
        let mut o = DVector::zeros(u);
        for (j, &lvl) in levels.iter().enumerate() {
            o[j] = rho(family, 0, lvl)?;
        }
        Some(o)
    } else {
        None
    };
    Ok((x, offset))
}

/// Result of a GLS fit. `estimate` always holds the full vector
/// `L_0 ... L_dim`, including any pinned entries; `free_indices` lists the
/// orders that were actually estimated and indexes `gls_covariance`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LkcFit {
    pub estimate: LkcVector,
    pub fixed_l0: bool,
    pub free_indices: Vec<usize>,
    /// Covariance of the estimated components, `free x free`.
    pub gls_covariance: Vec<Vec<f64>>,
    /// `y - offset - X beta` over the retained levels.
    pub residuals: Vec<f64>,
    pub sigma_method: CovMethod,
    pub design: LevelDesign,
}

impl LkcFit {
    pub fn residual_norm(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

const MAX_CONDITION: f64 = 1e12;

/// Fit the free LKCs by GLS of the mean EC profile on the regressors.
///
/// The profile must be computed at exactly the design's levels; `sigma`
/// decides which of them are retained. On spheres the `rho_1` column is
/// dropped and `L_1` pinned at zero.
pub fn fit(
    profile: &EcProfile,
    design: &LevelDesign,
    sigma: &CovarianceEstimate,
    family: RhoFamily,
    domain: GridDomain,
    fix_l0: bool,
) -> Result<LkcFit> {
    let pinned = fix_l0.then(|| domain.euler_characteristic() as f64);
    fit_with_pinned_l0(profile, design, sigma, family, domain, pinned)
}

/// As [`fit`], but with an explicit pinned `L_0` value — for masked bundles
/// whose region has a different Euler characteristic than the raw domain.
pub fn fit_with_pinned_l0(
    profile: &EcProfile,
    design: &LevelDesign,
    sigma: &CovarianceEstimate,
    family: RhoFamily,
    domain: GridDomain,
    pinned_l0: Option<f64>,
) -> Result<LkcFit> {
    let fix_l0 = pinned_l0.is_some();
    if profile.levels.len() != design.levels.len()
        || profile
            .levels
            .iter()
            .zip(&design.levels)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::DimensionMismatch(
            "profile levels do not match the design".into(),
        ));
    }
    let dim = domain.manifold_dim();
    let retained = &sigma.retained;
    if sigma.matrix.nrows() != retained.len() {
        return Err(Error::DimensionMismatch(
            "covariance does not match its retained levels".into(),
        ));
    }
    let levels: Vec<f64> = retained.iter().map(|&j| design.levels[j]).collect();
    let needed = dim + 2;
    if levels.len() < needed {
        return Err(Error::InsufficientLevels {
            needed,
            got: levels.len(),
        });
    }
    let (x_full, offset_rho0) = regressor_matrix(&levels, family, dim, fix_l0)?;
    // map columns of x_full to curvature orders, dropping rho_1 on spheres
    let first = if fix_l0 { 1 } else { 0 };
    let free_indices: Vec<usize> = (first..=dim)
        .filter(|&i| !(domain.kind == DomainKind::SphereLatLon && i == 1))
        .collect();
    let mut x = DMatrix::zeros(levels.len(), free_indices.len());
    for (c, &i) in free_indices.iter().enumerate() {
        x.set_column(c, &x_full.column(i - first));
    }
    let phi_s = pinned_l0.unwrap_or(0.0);
    let mut y = DVector::from_iterator(
        retained.len(),
        retained.iter().map(|&j| profile.mean_ec[j]),
    );
    if let Some(o) = &offset_rho0 {
        y -= o * phi_s;
    }
    let xw = sigma.whiten(&x);
    let yw = sigma.whiten_vector(&y);
    let svd = xw.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    // condition of X' inv(Sigma) X is the squared condition of the whitened X
    if !(smin > 0.0) || (smax / smin).powi(2) > MAX_CONDITION {
        return Err(Error::SingularDesign(format!(
            "condition number {:.3e} of the GLS normal matrix exceeds {MAX_CONDITION:.0e}",
            (smax / smin).powi(2)
        )));
    }
    let beta = svd
        .solve(&yw, 0.0)
        .map_err(|e| Error::SingularDesign(e.to_string()))?;
    // (X' inv(Sigma) X)^{-1} = V diag(1/s^2) V'
    let v_t = svd.v_t.as_ref().unwrap();
    let p = free_indices.len();
    let mut gls_cov = DMatrix::zeros(p, p);
    for r in 0..p {
        for c in 0..p {
            let mut s = 0.0;
            for t in 0..svd.singular_values.len() {
                s += v_t[(t, r)] * v_t[(t, c)] / (svd.singular_values[t] * svd.singular_values[t]);
            }
            gls_cov[(r, c)] = s;
        }
    }
    let resid = &y - &x * &beta;
    // assemble the full LKC vector
    let mut values = vec![0.0; dim + 1];
    if fix_l0 {
        values[0] = phi_s;
    }
    for (c, &i) in free_indices.iter().enumerate() {
        values[i] = beta[c];
    }
    Ok(LkcFit {
        estimate: LkcVector::new(values)?,
        fixed_l0: fix_l0,
        free_indices,
        gls_covariance: (0..p)
            .map(|r| (0..p).map(|c| gls_cov[(r, c)]).collect())
            .collect(),
        residuals: resid.iter().cloned().collect(),
        sigma_method: sigma.method,
        design: design.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignCriterion {
    /// Trace of the GLS estimator covariance.
    A,
    /// Determinant of the GLS estimator covariance.
    D,
}

/// Evaluate a design by the size of the resulting estimator covariance
/// `(X' inv(Sigma) X)^{-1}`; smaller is better for both criteria.
pub fn design_criterion(
    design: &LevelDesign,
    sigma: &CovarianceEstimate,
    family: RhoFamily,
    dim: usize,
    criterion: DesignCriterion,
) -> Result<f64> {
    let levels: Vec<f64> = sigma.retained.iter().map(|&j| design.levels[j]).collect();
    let (x, _) = regressor_matrix(&levels, family, dim, true)?;
    let xw = sigma.whiten(&x);
    let m = xw.transpose() * &xw;
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign("information matrix not invertible".into()))?;
    Ok(match criterion {
        DesignCriterion::A => inv.trace(),
        DesignCriterion::D => inv.determinant(),
    })
}

/// Options for the end-to-end fit.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub spacing: LevelSpacing,
    pub level_count: usize,
    pub cov_method: CovMethod,
    pub family: RhoFamily,
    pub fix_l0: bool,
    /// Default connectivity of the domain when `None`.
    pub connectivity: Option<Connectivity>,
    pub alpha: f64,
    /// Normalize the bundle (pooled) before fitting unless it already is.
    pub normalize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            spacing: LevelSpacing::Equal,
            level_count: DEFAULT_LEVEL_COUNT,
            cov_method: CovMethod::SmoothedDiagonal,
            family: RhoFamily::Gaussian,
            fix_l0: true,
            connectivity: None,
            alpha: 0.05,
            normalize: true,
        }
    }
}

/// Everything the end-to-end fit produces.
pub struct PipelineResult {
    pub fit: LkcFit,
    pub threshold: f64,
    pub alpha: f64,
    pub profile: EcProfile,
    pub family: RhoFamily,
}

impl PipelineResult {
    /// Approximate p-value for an observed maximum, from the fitted LKCs.
    pub fn pvalue(&self, u: f64) -> Result<TailProbability> {
        tail_probability(&self.fit.estimate, self.family, u)
    }

    /// JSON report of the fit.
    pub fn report(&self) -> FitReport {
        FitReport {
            lkcs: self.fit.estimate.values.clone(),
            lkc_cov: self.fit.gls_covariance.clone(),
            threshold_95: self.threshold,
            alpha: self.alpha,
            design: self.fit.design.clone(),
            cov_method: self.fit.sigma_method.as_str().to_string(),
            residual_norm: self.fit.residual_norm(),
            dropped_levels: self.fit.design.levels.len() - self.fit.residuals.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub lkcs: Vec<f64>,
    pub lkc_cov: Vec<Vec<f64>>,
    pub threshold_95: f64,
    pub alpha: f64,
    pub design: LevelDesign,
    pub cov_method: String,
    pub residual_norm: f64,
    pub dropped_levels: usize,
}

/// Normalize, design levels, compute the EC profile, estimate the error
/// covariance, fit the LKCs, and invert for the threshold.
pub fn fit_pipeline(bundle: &FieldBundle, options: &FitOptions) -> Result<PipelineResult> {
    let normalized;
    let bundle = if options.normalize && !bundle.normalized {
        normalized = bundle.normalize(NormalizeMode::Pooled)?;
        &normalized
    } else {
        bundle
    };
    let design = design_levels(bundle, options.spacing, options.level_count)?;
    let conn = options
        .connectivity
        .unwrap_or_else(|| Connectivity::default_for(bundle.domain.kind));
    let profile = ec_profile(bundle, &design.levels, conn)?;
    let sigma = estimate_covariance(&profile, options.cov_method)?;
    // Pin L_0 at the EC of the actual region: the mask's when present,
    // otherwise the domain's.
    let pinned = if options.fix_l0 {
        let phi = match &bundle.mask {
            Some(_) => {
                let (lo, _) = bundle.value_range();
                let region = crate::excursion::excursion_mask(bundle, 0, lo - 1.0);
                crate::excursion::euler_characteristic(&region, conn)? as f64
            }
            None => bundle.domain.euler_characteristic() as f64,
        };
        Some(phi)
    } else {
        None
    };
    let fit = fit_with_pinned_l0(
        &profile,
        &design,
        &sigma,
        options.family,
        bundle.domain,
        pinned,
    )?;
    let thr = threshold(&fit.estimate, options.family, options.alpha)?;
    Ok(PipelineResult {
        fit,
        threshold: thr,
        alpha: options.alpha,
        profile,
        family: options.family,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{estimate_from_moments, Moments};
    use crate::gkf::expected_ec;

    fn synthetic_profile(levels: &[f64], mean: Vec<f64>, f: usize) -> EcProfile {
        // integer rows are placeholders; fits read mean_ec only
        EcProfile {
            levels: levels.to_vec(),
            ec: vec![vec![0; levels.len()]; f],
            mean_ec: mean,
        }
    }

    fn identity_sigma(u: usize) -> CovarianceEstimate {
        CovarianceEstimate::from_matrix(DMatrix::identity(u, u), CovMethod::Identity).unwrap()
    }

    #[test]
    fn equal_spacing_endpoints() {
        let d = GridDomain::square(2).unwrap();
        let b = FieldBundle::new(d, 1, vec![-2.0, 0.5, 2.0, 0.0], None).unwrap();
        let design = design_levels(&b, LevelSpacing::Equal, 5).unwrap();
        let expect = [-2.0, -1.0, 0.0, 1.0, 2.0];
        for (a, b) in design.levels.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_spacing_hits_percentiles() {
        let d = GridDomain::square(10).unwrap();
        let vals: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b = FieldBundle::new(d, 1, vals.clone(), None).unwrap();
        let design = design_levels(&b, LevelSpacing::Quantile, 50).unwrap();
        // probabilities 1%, 3%, ..., 99%
        for (t, &lvl) in design.levels.iter().enumerate() {
            let p = (2 * t + 1) as f64 / 100.0;
            let expect = p * 99.0;
            assert!((lvl - expect).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn variance_spacing_constant_density_is_equal() {
        let grid: Vec<f64> = (0..201).map(|i| -2.0 + 0.02 * i as f64).collect();
        let density = vec![1.0; 201];
        let levels = variance_spacing(&grid, &density, 10);
        let step = levels[1] - levels[0];
        for w in levels.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-6);
        }
        // centered placement spans the grid symmetrically
        assert!((levels[0] + 2.0 - 0.2).abs() < 0.02);
    }

    #[test]
    fn too_few_levels_rejected() {
        let d = GridDomain::cube(3).unwrap();
        let vals: Vec<f64> = (0..27).map(|i| i as f64).collect();
        let b = FieldBundle::new(d, 1, vals, None).unwrap();
        assert!(matches!(
            design_levels(&b, LevelSpacing::Equal, 4),
            Err(Error::TooFewLevels { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn regressor_row_at_zero() {
        let (x, offset) = regressor_matrix(&[0.0], RhoFamily::Gaussian, 2, true).unwrap();
        assert!((x[(0, 0)] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert_eq!(x[(0, 1)], 0.0);
        assert!((offset.unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn regressor_full_rank_on_wide_design() {
        let levels: Vec<f64> = (0..50).map(|i| -4.0 + 8.0 * i as f64 / 49.0).collect();
        for dim in [2usize, 3] {
            let (x, _) = regressor_matrix(&levels, RhoFamily::Gaussian, dim, true).unwrap();
            let svd = x.svd(false, false);
            let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > 1e-12 * smax)
                .count();
            assert_eq!(rank, dim);
        }
    }

    #[test]
    fn noiseless_fit_recovers_truth() {
        let domain = GridDomain::square(2).unwrap();
        let truth = LkcVector::new(vec![1.0, 28.284, 200.0]).unwrap();
        let levels: Vec<f64> = (0..50).map(|i| -3.0 + 8.0 * i as f64 / 49.0).collect();
        let mean: Vec<f64> = levels
            .iter()
            .map(|&u| expected_ec(&truth, RhoFamily::Gaussian, u).unwrap())
            .collect();
        let profile = synthetic_profile(&levels, mean, 4);
        let design = LevelDesign {
            levels: levels.clone(),
            spacing: LevelSpacing::Equal,
            deduplicated: 0,
        };
        let sigma = identity_sigma(levels.len());
        let f = fit(&profile, &design, &sigma, RhoFamily::Gaussian, domain, true).unwrap();
        assert_eq!(f.estimate.values[0], 1.0);
        assert!((f.estimate.values[1] - 28.284).abs() < 1e-8 * 28.284);
        assert!((f.estimate.values[2] - 200.0).abs() < 1e-8 * 200.0);
        assert!(f.residual_norm() < 1e-8);
    }

    #[test]
    fn gls_matches_ols_on_noiseless_data() {
        // residuals are exactly zero, so the estimate cannot depend on Sigma
        let domain = GridDomain::square(2).unwrap();
        let truth = LkcVector::new(vec![1.0, 10.0, 55.0]).unwrap();
        let levels: Vec<f64> = (0..40).map(|i| -2.0 + 6.0 * i as f64 / 39.0).collect();
        let mean: Vec<f64> = levels
            .iter()
            .map(|&u| expected_ec(&truth, RhoFamily::Gaussian, u).unwrap())
            .collect();
        let profile = synthetic_profile(&levels, mean, 4);
        let design = LevelDesign {
            levels: levels.clone(),
            spacing: LevelSpacing::Equal,
            deduplicated: 0,
        };
        let n = levels.len();
        // an arbitrary smooth PD covariance
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = 2.0 * (-((r as f64 - c as f64) / 3.0).powi(2)).exp();
            }
            m[(r, r)] += 0.5;
        }
        let sig =
            CovarianceEstimate::from_matrix(m, CovMethod::SmoothedCorrelogram).unwrap();
        let f1 = fit(&profile, &design, &sig, RhoFamily::Gaussian, domain, true).unwrap();
        let f2 = fit(
            &profile,
            &design,
            &identity_sigma(n),
            RhoFamily::Gaussian,
            domain,
            true,
        )
        .unwrap();
        for (a, b) in f1.estimate.values.iter().zip(&f2.estimate.values) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn sphere_pins_l1_at_zero() {
        let domain = GridDomain::sphere(8).unwrap();
        let truth = LkcVector::new(vec![2.0, 0.0, 502.65]).unwrap();
        let levels: Vec<f64> = (0..30).map(|i| -2.0 + 6.0 * i as f64 / 29.0).collect();
        let mean: Vec<f64> = levels
            .iter()
            .map(|&u| expected_ec(&truth, RhoFamily::Gaussian, u).unwrap())
            .collect();
        let profile = synthetic_profile(&levels, mean, 4);
        let design = LevelDesign {
            levels: levels.clone(),
            spacing: LevelSpacing::Equal,
            deduplicated: 0,
        };
        let f = fit(
            &profile,
            &design,
            &identity_sigma(levels.len()),
            RhoFamily::Gaussian,
            domain,
            true,
        )
        .unwrap();
        assert_eq!(f.estimate.values[1], 0.0);
        assert_eq!(f.free_indices, vec![2]);
        assert!((f.estimate.values[2] - 502.65).abs() < 1e-6 * 502.65);
    }

    #[test]
    fn singular_design_detected() {
        // one repeated level cannot identify two curvatures
        let domain = GridDomain::square(2).unwrap();
        let levels = vec![1.0, 1.0 + 1e-15, 2.0, 2.0 + 1e-15];
        let mean = vec![0.3; 4];
        let profile = synthetic_profile(&levels, mean, 4);
        let design = LevelDesign {
            levels: levels.clone(),
            spacing: LevelSpacing::Equal,
            deduplicated: 0,
        };
        // nearly collinear rows produce an extreme condition number
        let r = fit(
            &profile,
            &design,
            &identity_sigma(4),
            RhoFamily::Gaussian,
            domain,
            true,
        );
        // depending on rounding this is either singular or terribly
        // conditioned; both must be reported as SingularDesign
        if let Err(e) = r {
            assert!(matches!(e, Error::SingularDesign(_)));
        } else {
            // if it solved, the condition bound must have held: verify the
            // guard by tightening with an exactly repeated design
            let levels = vec![1.0, 1.0, 1.0, 1.0];
            let profile = synthetic_profile(&levels, vec![0.3; 4], 4);
            let design = LevelDesign {
                levels,
                spacing: LevelSpacing::Equal,
                deduplicated: 0,
            };
            assert!(fit(
                &profile,
                &design,
                &identity_sigma(4),
                RhoFamily::Gaussian,
                domain,
                true
            )
            .is_err());
        }
    }

    #[test]
    fn criterion_scales_with_sigma() {
        let levels: Vec<f64> = (0..20).map(|i| -2.0 + 6.0 * i as f64 / 19.0).collect();
        let design = LevelDesign {
            levels: levels.clone(),
            spacing: LevelSpacing::Equal,
            deduplicated: 0,
        };
        let n = levels.len();
        let base = DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                1.5
            } else {
                0.3 * (-((r as f64 - c as f64) as f64).abs()).exp()
            }
        });
        let s1 = CovarianceEstimate::from_matrix(base.clone(), CovMethod::Identity).unwrap();
        let s2 = CovarianceEstimate::from_matrix(2.0 * base, CovMethod::Identity).unwrap();
        let dim = 2;
        let a1 = design_criterion(&design, &s1, RhoFamily::Gaussian, dim, DesignCriterion::A)
            .unwrap();
        let a2 = design_criterion(&design, &s2, RhoFamily::Gaussian, dim, DesignCriterion::A)
            .unwrap();
        assert!((a2 / a1 - 2.0).abs() < 1e-9);
        let d1 = design_criterion(&design, &s1, RhoFamily::Gaussian, dim, DesignCriterion::D)
            .unwrap();
        let d2 = design_criterion(&design, &s2, RhoFamily::Gaussian, dim, DesignCriterion::D)
            .unwrap();
        assert!((d2 / d1 - 4.0).abs() < 1e-8); // 2^dim
    }

    #[test]
    fn adding_a_level_never_hurts_with_diagonal_sigma() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = 15;
            let levels: Vec<f64> = (0..n).map(|i| -2.0 + 5.0 * i as f64 / (n - 1) as f64).collect();
            let extra = rng.gen_range(-2.0..3.0);
            let mut bigger = levels.clone();
            bigger.push(extra);
            bigger.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let diag = |m: usize| {
                DMatrix::from_diagonal(&DVector::from_iterator(
                    m,
                    (0..m).map(|_| 1.0),
                ))
            };
            let d_small = LevelDesign {
                levels: levels.clone(),
                spacing: LevelSpacing::Equal,
                deduplicated: 0,
            };
            let d_big = LevelDesign {
                levels: bigger.clone(),
                spacing: LevelSpacing::Equal,
                deduplicated: 0,
            };
            let s_small =
                CovarianceEstimate::from_matrix(diag(n), CovMethod::Identity).unwrap();
            let s_big =
                CovarianceEstimate::from_matrix(diag(n + 1), CovMethod::Identity).unwrap();
            for crit in [DesignCriterion::A, DesignCriterion::D] {
                let small =
                    design_criterion(&d_small, &s_small, RhoFamily::Gaussian, 2, crit).unwrap();
                let big =
                    design_criterion(&d_big, &s_big, RhoFamily::Gaussian, 2, crit).unwrap();
                assert!(big <= small * (1.0 + 1e-9), "{crit:?}: {big} > {small}");
            }
        }
    }

    #[test]
    fn gauss_markov_gls_beats_ols() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let n = 12;
            let levels: Vec<f64> = (0..n).map(|i| -2.0 + 5.0 * i as f64 / (n - 1) as f64).collect();
            let (x, _) = regressor_matrix(&levels, RhoFamily::Gaussian, 2, true).unwrap();
            // random PD Sigma: A A' + small ridge
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let sig_inv = sigma.clone().try_inverse().unwrap();
            let gls_cov = (x.transpose() * &sig_inv * &x).try_inverse().unwrap();
            let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
            let ols_cov = &xtx_inv * x.transpose() * &sigma * &x * &xtx_inv;
            assert!(gls_cov.trace() <= ols_cov.trace() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn scaling_responses_scales_estimates() {
        let domain = GridDomain::square(2).unwrap();
        let levels: Vec<f64> = (0..25).map(|i| -2.0 + 5.0 * i as f64 / 24.0).collect();
        let truth = LkcVector::new(vec![1.0, 7.0, 30.0]).unwrap();
        let mean: Vec<f64> = levels
            .iter()
            .map(|&u| expected_ec(&truth, RhoFamily::Gaussian, u).unwrap())
            .collect();
        let design = LevelDesign {
            levels: levels.clone(),
            spacing: LevelSpacing::Equal,
            deduplicated: 0,
        };
        let sigma = identity_sigma(levels.len());
        // free L_0 so the whole response scales linearly into the estimate
        let p1 = synthetic_profile(&levels, mean.clone(), 2);
        let f1 = fit(&p1, &design, &sigma, RhoFamily::Gaussian, domain, false).unwrap();
        let scaled: Vec<f64> = mean.iter().map(|&m| 3.0 * m).collect();
        let p2 = synthetic_profile(&levels, scaled, 2);
        let f2 = fit(&p2, &design, &sigma, RhoFamily::Gaussian, domain, false).unwrap();
        for (a, b) in f1.estimate.values.iter().zip(&f2.estimate.values) {
            assert!((3.0 * a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn fit_uses_only_retained_levels() {
        // a zero-variance level must not influence the estimate
        let domain = GridDomain::square(2).unwrap();
        let truth = LkcVector::new(vec![1.0, 5.0, 12.0]).unwrap();
        let levels: Vec<f64> = (0..20).map(|i| -2.0 + 5.0 * i as f64 / 19.0).collect();
        let mut mean: Vec<f64> = levels
            .iter()
            .map(|&u| expected_ec(&truth, RhoFamily::Gaussian, u).unwrap())
            .collect();
        mean[0] = 1_000.0; // corrupt a level...
        let profile = synthetic_profile(&levels, mean, 3);
        let design = LevelDesign {
            levels: levels.clone(),
            spacing: LevelSpacing::Equal,
            deduplicated: 0,
        };
        // ...then retain everything except it
        let n = levels.len();
        let var = vec![1.0; n];
        let mut cov = DMatrix::identity(n, n);
        cov[(0, 0)] = 0.0; // simulate zero variance at the corrupted level
        let moments = Moments {
            var: {
                let mut v = var;
                v[0] = 0.0;
                v
            },
            corr: DMatrix::identity(n, n),
            cov,
        };
        let sigma =
            estimate_from_moments(&levels, &moments, CovMethod::SmoothedDiagonal).unwrap();
        assert_eq!(sigma.dropped_levels, vec![0]);
        let f = fit(&profile, &design, &sigma, RhoFamily::Gaussian, domain, true).unwrap();
        assert!((f.estimate.values[1] - 5.0).abs() < 1e-6 * 5.0);
        assert!((f.estimate.values[2] - 12.0).abs() < 1e-6 * 12.0);
    }
}
