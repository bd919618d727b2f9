//! Kinematic-formula regressors, expected Euler characteristics, tail
//! probabilities and threshold inversion.
//!
//! The expected EC of an excursion set at level `u` is a linear combination
//! `sum_j L_j rho_j(u)` of known functions `rho_j` with the
//! Lipschitz-Killing curvatures `L_j` as coefficients. For Gaussian fields
//! `rho_j(u) = (2 pi)^{-(j+1)/2} H_{j-1}(u) exp(-u^2/2)` with probabilists'
//! Hermite polynomials and `H_{-1}(u) = sqrt(2 pi) exp(u^2/2) Phi-bar(u)`,
//! so `rho_0` is the upper normal tail. For chi-squared fields with `k`
//! degrees of freedom the densities are a signed double sum evaluated in
//! log space so large `k` does not overflow the Gamma/binomial prefactor.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::domain::DomainKind;
use crate::error::{Error, Result};

/// Highest supported regressor order; covers domains up to dimension 8.
pub const MAX_RHO_ORDER: usize = 8;

/// Marginal family of the (Gaussian-related) field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RhoFamily {
    Gaussian,
    /// Chi-squared with `k` degrees of freedom.
    ChiSquared(usize),
}

/// Upper tail of the standard normal.
pub fn normal_upper_tail(u: f64) -> f64 {
    0.5 * erfc(u / std::f64::consts::SQRT_2)
}

/// EC density `rho_j(u)` for the given family.
///
/// For the chi-squared family the densities with `j >= 1` are only defined
/// for `u > 0`; at `u <= 0` the excursion set is the whole domain and this
/// function returns 0, matching the limit of the kinematic formula there.
pub fn rho(family: RhoFamily, j: usize, u: f64) -> Result<f64> {
    if j > MAX_RHO_ORDER {
        return Err(Error::UnsupportedFamilyOrder {
            order: j,
            max: MAX_RHO_ORDER,
        });
    }
    match family {
        RhoFamily::Gaussian => Ok(rho_gaussian(j, u)),
        RhoFamily::ChiSquared(k) => {
            if k == 0 {
                return Err(Error::InvalidInput(
                    "chi-squared degrees of freedom must be positive".into(),
                ));
            }
            Ok(rho_chi_squared(k, j, u))
        }
    }
}

fn rho_gaussian(j: usize, u: f64) -> f64 {
    if j == 0 {
        return normal_upper_tail(u);
    }
    // probabilists' Hermite H_{j-1}
    let mut h_prev = 1.0; // H_0
    let mut h = u; // H_1
    let hval = match j - 1 {
        0 => h_prev,
        1 => h,
        n => {
            for m in 1..n {
                let next = u * h - m as f64 * h_prev;
                h_prev = h;
                h = next;
            }
            h
        }
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    two_pi.powf(-((j as f64 + 1.0) / 2.0)) * hval * (-0.5 * u * u).exp()
}

fn rho_chi_squared(k: usize, j: usize, u: f64) -> f64 {
    if j == 0 {
        if u <= 0.0 {
            return 1.0;
        }
        return gamma_ur(k as f64 / 2.0, u / 2.0);
    }
    if u <= 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let ln_u = u.ln();
    let ln2 = std::f64::consts::LN_2;
    let ln_prefactor = 0.5 * (kf - j as f64) * ln_u - 0.5 * u
        - 0.5 * j as f64 * two_pi.ln()
        - ln_gamma(kf / 2.0)
        - 0.5 * (kf - 2.0) * ln2;
    // signed double sum, accumulated relative to the largest log magnitude
    let mut terms: Vec<(f64, f64)> = Vec::new(); // (sign, ln magnitude)
    let mut max_ln = f64::NEG_INFINITY;
    for l in 0..=(j - 1) / 2 {
        for m in 0..=(j - 1 - 2 * l) {
            let r = j - 1 - m - 2 * l; // binomial lower index
            if k < r + 1 {
                continue; // indicator 1{k >= j-m-2l}
            }
            let ln_binom =
                ln_gamma(kf) - ln_gamma(r as f64 + 1.0) - ln_gamma((k - 1 - r) as f64 + 1.0);
            let ln_mag = ln_binom + ln_gamma(j as f64) // (j-1)!
                - ln_gamma(m as f64 + 1.0)
                - ln_gamma(l as f64 + 1.0)
                - l as f64 * ln2
                + (m + l) as f64 * ln_u;
            let sign = if (j - 1 + m + l) % 2 == 0 { 1.0 } else { -1.0 };
            max_ln = max_ln.max(ln_mag);
            terms.push((sign, ln_mag));
        }
    }
    if terms.is_empty() {
        return 0.0;
    }
    let sum: f64 = terms
        .iter()
        .map(|&(sign, ln_mag)| sign * (ln_mag - max_ln).exp())
        .sum();
    sum * (max_ln + ln_prefactor).exp()
}

/// Lipschitz-Killing curvatures `L_0 ... L_dim` of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LkcVector {
    pub values: Vec<f64>,
}

impl LkcVector {
    pub fn new(values: Vec<f64>) -> Result<LkcVector> {
        if values.is_empty() || values.len() > MAX_RHO_ORDER + 1 {
            return Err(Error::InvalidInput(format!(
                "LKC vector must have 1..={} entries",
                MAX_RHO_ORDER + 1
            )));
        }
        Ok(LkcVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len() - 1
    }
}

/// Expected EC of the excursion set at level `u`: `sum_j L_j rho_j(u)`.
pub fn expected_ec(lkcs: &LkcVector, family: RhoFamily, u: f64) -> Result<f64> {
    let mut total = 0.0;
    for (j, &l) in lkcs.values.iter().enumerate() {
        total += l * rho(family, j, u)?;
    }
    Ok(total)
}

/// The expected-EC approximation is only trustworthy for small tail
/// probabilities; values clamped at 0 or larger than this bound carry an
/// advisory flag.
pub const TAIL_VALIDITY_BOUND: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    pub value: f64,
    /// True when the raw expected EC fell outside `[0, TAIL_VALIDITY_BOUND]`,
    /// i.e. the approximation is being used outside its validity range.
    pub advisory: bool,
}

/// Approximate `P(max T >= u)` by the expected EC, clamped to `[0, 1]`.
pub fn tail_probability(lkcs: &LkcVector, family: RhoFamily, u: f64) -> Result<TailProbability> {
    let raw = expected_ec(lkcs, family, u)?;
    Ok(TailProbability {
        value: raw.clamp(0.0, 1.0),
        advisory: !(0.0..=TAIL_VALIDITY_BOUND).contains(&raw),
    })
}

/// Largest `u` with expected EC at least `alpha`: the rightmost crossing of
/// the `alpha` line. The expected EC is not monotone in `u` (it can dip
/// negative at moderate levels), so the search anchors on the right — at a
/// high level where the expected EC has decayed below `alpha` — and walks
/// down to the first crossing, then bisects to 1e-6.
pub fn threshold(lkcs: &LkcVector, family: RhoFamily, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 0.2) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 0.2], got {alpha}"
        )));
    }
    let floor = match family {
        RhoFamily::Gaussian => -10.0,
        RhoFamily::ChiSquared(_) => 0.0,
    };
    let mut hi = 50.0;
    while expected_ec(lkcs, family, hi)? >= alpha {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NoCrossing);
        }
    }
    // walk left until the expected EC first reaches alpha
    let step = 0.25;
    let mut lo;
    let mut cur = hi;
    loop {
        lo = (cur - step).max(floor);
        if expected_ec(lkcs, family, lo)? >= alpha {
            break;
        }
        if lo <= floor {
            return Err(Error::NoCrossing);
        }
        cur = lo;
    }
    let mut hi = cur;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if expected_ec(lkcs, family, mid)? >= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact continuous LKCs of the unit square, unit cube, and unit sphere for
/// an isotropic Gaussian field with covariance `C(x, y) = exp(-a |x-y|^2)`,
/// whose second spectral moment is `2a`. `L_1` of the sphere vanishes for
/// topological reasons.
pub fn truth_lkcs(kind: DomainKind, alpha_cov: f64) -> Result<LkcVector> {
    if alpha_cov <= 0.0 {
        return Err(Error::InvalidInput("alpha_cov must be positive".into()));
    }
    let lam2 = 2.0 * alpha_cov; // second spectral moment
    let values = match kind {
        DomainKind::Square2D => vec![1.0, 2.0 * lam2.sqrt(), lam2],
        DomainKind::Cube3D => vec![1.0, 3.0 * lam2.sqrt(), 3.0 * lam2, lam2.powf(1.5)],
        DomainKind::SphereLatLon => vec![2.0, 0.0, 4.0 * std::f64::consts::PI * lam2],
    };
    LkcVector::new(values)
}
