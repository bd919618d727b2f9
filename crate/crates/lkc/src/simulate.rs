//! Gaussian random-field simulation and the validation experiment.
//!
//! Fields have the isotropic covariance `C(x, y) = exp(-a |x - y|^2)` with
//! distance measured in the ambient space (chordal on the sphere). Square
//! and cube lattices are sampled exactly by circulant embedding: the
//! covariance is wrapped onto a padded torus whose spectrum factorizes per
//! axis, one FFT of spectrally scaled white noise yields two independent
//! fields. The sphere (and any lattice whose embedding fails even after
//! padding) falls back to a dense Cholesky factor of the site covariance.
//! Every replicate draws from its own counter-derived RNG stream, so runs
//! are reproducible bit-for-bit regardless of thread scheduling.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::covariance::{estimate as estimate_covariance, CovMethod};
use crate::domain::{DomainKind, FieldBundle, GridDomain, NormalizeMode};
use crate::error::{Error, Result};
use crate::excursion::{ec_profile, Connectivity};
use crate::gkf::{threshold, truth_lkcs, RhoFamily};
use crate::regression::{design_levels, fit, LevelSpacing};

/// Largest site count the dense Cholesky backend accepts.
pub const CHOLESKY_SITE_CAP: usize = 20_000;

/// Specification of a Gaussian random field ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub domain: GridDomain,
    /// Covariance decay `a` in `C(x, y) = exp(-a |x - y|^2)`.
    pub alpha_cov: f64,
    pub field_count: usize,
    pub seed: u64,
}

impl GrfSpec {
    pub fn new(domain: GridDomain, field_count: usize, seed: u64) -> GrfSpec {
        GrfSpec {
            domain,
            alpha_cov: default_alpha_cov(domain.kind),
            field_count,
            seed,
        }
    }
}

/// Default covariance decay per domain.
pub fn default_alpha_cov(kind: DomainKind) -> f64 {
    match kind {
        DomainKind::Square2D => 100.0,
        DomainKind::Cube3D | DomainKind::SphereLatLon => 20.0,
    }
}

/// Counter-based seed split: replicate `r` of cell `c` under a master seed
/// gets its own independent value.
pub fn derive_seed(master: u64, cell: u64, replicate: u64) -> u64 {
    let mut z = master
        .wrapping_add(cell.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(replicate.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Backend {
    Circulant {
        m: usize,
        dim: usize,
        /// per-axis spectrum of the wrapped 1D covariance (clipped at 0)
        lambda1: Vec<f64>,
    },
    Cholesky {
        l: DMatrix<f64>,
    },
}

fn plan_backend(spec: &GrfSpec) -> Result<Backend> {
    match spec.domain.kind {
        DomainKind::Square2D | DomainKind::Cube3D => {
            let dim = spec.domain.manifold_dim();
            let g = spec.domain.grid_size;
            let mut m = (2 * g).next_power_of_two();
            for _ in 0..3 {
                match circulant_spectrum(g, m, spec.alpha_cov) {
                    Ok(lambda1) => return Ok(Backend::Circulant { m, dim, lambda1 }),
                    Err(Error::EmbeddingFailure) => m *= 2,
                    Err(e) => return Err(e),
                }
            }
            // padded retries exhausted; dense fallback
            cholesky_backend(spec)
        }
        DomainKind::SphereLatLon => cholesky_backend(spec),
    }
}

/// Spectrum of the 1D covariance `exp(-a (i/g)^2)` wrapped on a torus of
/// size `m`. All axes share it; the d-dimensional spectrum is the product.
fn circulant_spectrum(g: usize, m: usize, alpha: f64) -> Result<Vec<f64>> {
    let h = 1.0 / g as f64;
    let base: Vec<Complex<f64>> = (0..m)
        .map(|i| {
            let d = i.min(m - i) as f64 * h;
            Complex::new((-alpha * d * d).exp(), 0.0)
        })
        .collect();
    let mut buf = base;
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let lam_max = buf.iter().map(|c| c.re).fold(0.0f64, f64::max);
    let mut lambda = Vec::with_capacity(m);
    for c in &buf {
        if c.re < -1e-9 * lam_max {
            return Err(Error::EmbeddingFailure);
        }
        lambda.push(c.re.max(0.0));
    }
    Ok(lambda)
}

fn cholesky_backend(spec: &GrfSpec) -> Result<Backend> {
    let k = spec.domain.site_count();
    if k > CHOLESKY_SITE_CAP {
        return Err(Error::TooLarge(k, CHOLESKY_SITE_CAP));
    }
    let pos: Vec<[f64; 3]> = (0..k).map(|i| spec.domain.site_position(i)).collect();
    let mut cov = DMatrix::zeros(k, k);
    for r in 0..k {
        for c in r..k {
            let dx = pos[r][0] - pos[c][0];
            let dy = pos[r][1] - pos[c][1];
            let dz = pos[r][2] - pos[c][2];
            let v = (-spec.alpha_cov * (dx * dx + dy * dy + dz * dz)).exp();
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    // escalate a diagonal jitter until the factorization succeeds
    let mut jitter = 0.0;
    loop {
        let mut m = cov.clone();
        for i in 0..k {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok(Backend::Cholesky { l: ch.l() });
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
        if jitter > 1e-4 {
            return Err(Error::EmbeddingFailure);
        }
    }
}

/// In-place forward FFT along every axis of a `dim`-dimensional cube of
/// side `m` stored in row-major order (axis 0 fastest).
fn fft_nd(data: &mut [Complex<f64>], m: usize, dim: usize) {
    let fft = FftPlanner::new().plan_fft_forward(m);
    let n = data.len();
    let mut line = vec![Complex::new(0.0, 0.0); m];
    let mut stride = 1usize;
    for _ in 0..dim {
        let block = stride * m;
        for chunk in (0..n).step_by(block) {
            for off in 0..stride {
                let base = chunk + off;
                if stride == 1 {
                    fft.process(&mut data[base..base + m]);
                } else {
                    for (t, l) in line.iter_mut().enumerate() {
                        *l = data[base + t * stride];
                    }
                    fft.process(&mut line);
                    for (t, &l) in line.iter().enumerate() {
                        data[base + t * stride] = l;
                    }
                }
            }
        }
        stride *= m;
    }
}

/// Two independent fields (the real and imaginary parts of one spectral
/// draw) restricted to the `g^dim` corner of the embedding torus.
fn circulant_pair(
    g: usize,
    m: usize,
    dim: usize,
    lambda1: &[f64],
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let n = m.pow(dim as u32);
    let norm = 1.0 / (n as f64);
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(n);
    for idx in 0..n {
        // product of per-axis eigenvalues
        let mut rem = idx;
        let mut lam = 1.0;
        for _ in 0..dim {
            lam *= lambda1[rem % m];
            rem /= m;
        }
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let s = (lam * norm).sqrt();
        buf.push(Complex::new(a * s, b * s));
    }
    fft_nd(&mut buf, m, dim);
    let k = g.pow(dim as u32);
    let mut re = Vec::with_capacity(k);
    let mut im = Vec::with_capacity(k);
    for site in 0..k {
        let mut rem = site;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for _ in 0..dim {
            idx += (rem % g) * stride;
            rem /= g;
            stride *= m;
        }
        re.push(buf[idx].re);
        im.push(buf[idx].im);
    }
    (re, im)
}

/// Sample `count` fields (field-major values) starting at RNG stream
/// `stream0` of the spec's seed. Circulant draws consume one stream per
/// pair of fields, the Cholesky path one stream per field.
fn sample_fields(
    spec: &GrfSpec,
    backend: &Backend,
    count: usize,
    stream0: u64,
) -> (Vec<f64>, u64) {
    let k = spec.domain.site_count();
    match backend {
        Backend::Circulant { m, dim, lambda1 } => {
            let g = spec.domain.grid_size;
            let pairs = count.div_ceil(2);
            let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
                .into_par_iter()
                .map(|p| {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(stream0 + p as u64);
                    circulant_pair(g, *m, *dim, lambda1, &mut rng)
                })
                .collect();
            let mut values = Vec::with_capacity(count * k);
            for (i, (re, im)) in chunks.into_iter().enumerate() {
                values.extend_from_slice(&re);
                if 2 * i + 1 < count {
                    values.extend_from_slice(&im);
                }
            }
            (values, stream0 + pairs as u64)
        }
        Backend::Cholesky { l } => {
            let fields: Vec<Vec<f64>> = (0..count)
                .into_par_iter()
                .map(|f| {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(stream0 + f as u64);
                    let eps: Vec<f64> =
                        (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let mut out = vec![0.0; k];
                    // lower-triangular multiply
                    for r in 0..k {
                        let mut s = 0.0;
                        for c in 0..=r {
                            s += l[(r, c)] * eps[c];
                        }
                        out[r] = s;
                    }
                    out
                })
                .collect();
            let mut values = Vec::with_capacity(count * k);
            for f in fields {
                values.extend_from_slice(&f);
            }
            (values, stream0 + count as u64)
        }
    }
}

/// Simulate `spec.field_count` independent zero-mean unit-variance Gaussian
/// fields with covariance `exp(-a d^2)` between sites. Deterministic in the
/// seed.
pub fn simulate(spec: &GrfSpec) -> Result<FieldBundle> {
    if spec.alpha_cov <= 0.0 {
        return Err(Error::InvalidInput("alpha_cov must be positive".into()));
    }
    if spec.field_count == 0 {
        return Err(Error::InvalidInput("field_count must be positive".into()));
    }
    let backend = plan_backend(spec)?;
    let (values, _) = sample_fields(spec, &backend, spec.field_count, 0);
    FieldBundle::new(spec.domain, spec.field_count, values, None)
}

/// `(1 - alpha)` empirical quantile of the max over sites of `b` simulated
/// fields. `alpha = 1` degenerates to the minimum of the maxima.
pub fn empirical_threshold(spec: &GrfSpec, alpha: f64, b: usize) -> Result<f64> {
    if b < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 replicates, got {b}"
        )));
    }
    if !(0.0 < alpha && alpha <= 1.0) {
        return Err(Error::InvalidInput("alpha must lie in (0, 1]".into()));
    }
    let backend = plan_backend(spec)?;
    let k = spec.domain.site_count();
    let batch = (4_000_000 / k).clamp(2, 512);
    let mut maxima = Vec::with_capacity(b);
    let mut stream = 0u64;
    let mut remaining = b;
    while remaining > 0 {
        let take = remaining.min(batch);
        let (values, next) = sample_fields(spec, &backend, take, stream);
        stream = next;
        for f in 0..take {
            let mx = values[f * k..(f + 1) * k]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            maxima.push(mx);
        }
        remaining -= take;
    }
    maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (1.0 - alpha) * (b - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    Ok(if i + 1 < b {
        maxima[i] * (1.0 - frac) + maxima[i + 1] * frac
    } else {
        maxima[b - 1]
    })
}

/// Fit the grid-size extrapolation `u(g) = u_star + beta * g^varsigma` to
/// observed `(g, u)` pairs by damped Gauss-Newton (Levenberg-Marquardt).
pub fn fit_convergence(pairs: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let mut gs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    gs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    gs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if gs.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "convergence fit needs at least 4 distinct grid sizes, got {}",
            gs.len()
        )));
    }
    let u_max = pairs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut p = [u_max, -7.0, -1.5]; // (u_star, beta, varsigma)
    let mut mu = 1e-3;
    let n = pairs.len();
    let residuals = |p: &[f64; 3]| -> Vec<f64> {
        pairs
            .iter()
            .map(|&(g, u)| u - (p[0] + p[1] * g.powf(p[2])))
            .collect()
    };
    let sq = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut r = residuals(&p);
    for _ in 0..500 {
        // Jacobian of the residuals
        let mut jt_j = [[0.0f64; 3]; 3];
        let mut jt_r = [0.0f64; 3];
        for (i, &(g, _)) in pairs.iter().enumerate() {
            let gp = g.powf(p[2]);
            let row = [-1.0, -gp, -p[1] * gp * g.ln()];
            for a in 0..3 {
                for b in 0..3 {
                    jt_j[a][b] += row[a] * row[b];
                }
                jt_r[a] += row[a] * r[i];
            }
        }
        // solve (J'J + mu diag(J'J)) step = -J'r
        let mut step = [0.0f64; 3];
        let solved = {
            let mut a = nalgebra::Matrix3::from_fn(|x, y| jt_j[x][y]);
            for d in 0..3 {
                a[(d, d)] += mu * jt_j[d][d].max(1e-12);
            }
            let bvec = nalgebra::Vector3::new(-jt_r[0], -jt_r[1], -jt_r[2]);
            match a.lu().solve(&bvec) {
                Some(s) => {
                    step = [s[0], s[1], s[2]];
                    true
                }
                None => false,
            }
        };
        if !solved {
            mu *= 10.0;
            continue;
        }
        let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
        let tr = residuals(&trial);
        if sq(&tr) < sq(&r) {
            p = trial;
            r = tr;
            mu = (mu * 0.3).max(1e-12);
            let norm = (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt();
            if norm < 1e-8 {
                return Ok((p[0], p[1], p[2]));
            }
        } else {
            mu *= 10.0;
            if mu > 1e12 {
                // flat region: accept if the residual is already tiny
                if sq(&r) < 1e-20 * n as f64 {
                    return Ok((p[0], p[1], p[2]));
                }
                return Err(Error::NoConvergence(500));
            }
        }
    }
    Err(Error::NoConvergence(500))
}

// --- experiment harness -----------------------------------------------------

/// Full factorial experiment description; deserializable from JSON or TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Domain kinds: "square", "cube", "sphere".
    pub domains: Vec<String>,
    pub grid_sizes: Vec<usize>,
    /// Covariance methods: "identity", "sd", "sc", "sgw", "pi".
    pub cov_methods: Vec<String>,
    #[serde(default = "default_field_count")]
    pub field_count: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Overrides the per-domain default covariance decay when set.
    #[serde(default)]
    pub alpha_cov: Option<f64>,
    #[serde(default = "default_spacing")]
    pub spacing: String,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_field_count() -> usize {
    15
}
fn default_replicates() -> usize {
    200
}
fn default_alpha() -> f64 {
    0.05
}
fn default_spacing() -> String {
    "equal".into()
}
fn default_levels() -> usize {
    50
}

impl ExperimentConfig {
    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_toml = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("toml"))
            .unwrap_or(false);
        if is_toml {
            toml::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("config parse: {e}")))
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("config parse: {e}")))
        }
    }
}

/// One fitted replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub domain: String,
    pub grid_size: usize,
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    pub threshold: f64,
    pub lkcs: Vec<f64>,
    /// Covariance estimation + GLS fit + threshold inversion only; the
    /// shared simulation and EC-profile stages are fixed costs.
    pub fit_runtime_ms: f64,
}

/// Aggregates per (domain, grid size, method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub domain: String,
    pub grid_size: usize,
    pub method: String,
    pub replicates: usize,
    pub failures: usize,
    pub median_threshold: f64,
    pub sd_threshold: f64,
    pub median_fit_runtime_ms: f64,
}

/// Grid-size extrapolation of the median thresholds for one (domain,
/// method), next to the continuous truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub domain: String,
    pub method: String,
    pub u_star: f64,
    pub beta: f64,
    pub varsigma: f64,
    pub truth_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ExperimentResult {
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<CellSummary>,
    pub convergence: Vec<ConvergenceFit>,
    pub failures: Vec<String>,
}

impl ExperimentResult {
    /// Long CSV: one row per replicate.
    pub fn to_long_csv(&self) -> String {
        let mut out =
            String::from("domain,G,method,replicate,seed,threshold,fit_runtime_ms\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.domain, r.grid_size, r.method, r.replicate, r.seed, r.threshold,
                r.fit_runtime_ms
            ));
        }
        out
    }

    /// Summary CSV: one row per factorial cell.
    pub fn to_summary_csv(&self) -> String {
        let mut out = String::from(
            "domain,G,method,replicates,failures,median_threshold,sd_threshold,median_fit_runtime_ms\n",
        );
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.domain,
                s.grid_size,
                s.method,
                s.replicates,
                s.failures,
                s.median_threshold,
                s.sd_threshold,
                s.median_fit_runtime_ms
            ));
        }
        out
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Run the full factorial experiment: per (domain, G) the replicate fields
/// and their EC profiles are shared across covariance methods; only the
/// method stage (covariance estimate, GLS fit, threshold inversion) is timed
/// per method. Per-replicate failures are logged, not fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let spacing = LevelSpacing::parse(&config.spacing)?;
    let methods: Vec<CovMethod> = config
        .cov_methods
        .iter()
        .map(|s| CovMethod::parse(s))
        .collect::<Result<_>>()?;
    let mut result = ExperimentResult::default();
    let mut cell_id = 0u64;
    for dk in &config.domains {
        let kind = DomainKind::parse(dk)?;
        for &g in &config.grid_sizes {
            let domain = GridDomain::new(kind, g)?;
            let alpha_cov = config.alpha_cov.unwrap_or_else(|| default_alpha_cov(kind));
            cell_id += 1;
            let cell = cell_id;
            // replicate-level work, parallel and order-stable
            let rep_out: Vec<std::result::Result<Vec<ReplicateRecord>, String>> = (0
                ..config.replicates)
                .into_par_iter()
                .map(|rep| {
                    run_replicate(
                        config, &methods, spacing, domain, alpha_cov, cell, rep,
                    )
                    .map_err(|e| format!("{dk} G={g} replicate {rep}: {e}"))
                })
                .collect();
            for r in rep_out {
                match r {
                    Ok(records) => result.records.extend(records),
                    Err(msg) => result.failures.push(msg),
                }
            }
        }
    }
    // summaries
    for dk in &config.domains {
        for &g in &config.grid_sizes {
            for m in &methods {
                let cell: Vec<&ReplicateRecord> = result
                    .records
                    .iter()
                    .filter(|r| {
                        r.domain == *dk && r.grid_size == g && r.method == m.as_str()
                    })
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let mut thr: Vec<f64> = cell.iter().map(|r| r.threshold).collect();
                thr.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut rt: Vec<f64> = cell.iter().map(|r| r.fit_runtime_ms).collect();
                rt.sort_by(|a, b| a.partial_cmp(b).unwrap());
                result.summaries.push(CellSummary {
                    domain: dk.clone(),
                    grid_size: g,
                    method: m.as_str().into(),
                    replicates: cell.len(),
                    failures: config.replicates - cell.len(),
                    median_threshold: median(&thr),
                    sd_threshold: sample_sd(&thr),
                    median_fit_runtime_ms: median(&rt),
                });
            }
        }
    }
    // grid-size extrapolation per (domain, method) when enough sizes ran
    for dk in &config.domains {
        let kind = DomainKind::parse(dk)?;
        let alpha_cov = config.alpha_cov.unwrap_or_else(|| default_alpha_cov(kind));
        let truth =
            threshold(&truth_lkcs(kind, alpha_cov)?, RhoFamily::Gaussian, config.alpha)?;
        for m in &methods {
            let pairs: Vec<(f64, f64)> = result
                .summaries
                .iter()
                .filter(|s| s.domain == *dk && s.method == m.as_str())
                .map(|s| (s.grid_size as f64, s.median_threshold))
                .collect();
            if pairs.len() >= 4 {
                if let Ok((u_star, beta, varsigma)) = fit_convergence(&pairs) {
                    result.convergence.push(ConvergenceFit {
                        domain: dk.clone(),
                        method: m.as_str().into(),
                        u_star,
                        beta,
                        varsigma,
                        truth_threshold: truth,
                    });
                }
            }
        }
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn run_replicate(
    config: &ExperimentConfig,
    methods: &[CovMethod],
    spacing: LevelSpacing,
    domain: GridDomain,
    alpha_cov: f64,
    cell: u64,
    rep: usize,
) -> Result<Vec<ReplicateRecord>> {
    let seed = derive_seed(config.seed, cell, rep as u64);
    let spec = GrfSpec {
        domain,
        alpha_cov,
        field_count: config.field_count,
        seed,
    };
    // shared fixed costs: simulation, normalization, levels, EC profile
    let bundle = simulate(&spec)?.normalize(NormalizeMode::Pooled)?;
    let design = design_levels(&bundle, spacing, config.levels)?;
    let conn = Connectivity::default_for(domain.kind);
    let profile = ec_profile(&bundle, &design.levels, conn)?;
    let mut records = Vec::with_capacity(methods.len());
    for &method in methods {
        let t0 = Instant::now();
        let sigma = estimate_covariance(&profile, method)?;
        let lkc_fit = fit(&profile, &design, &sigma, RhoFamily::Gaussian, domain, true)?;
        let thr = threshold(&lkc_fit.estimate, RhoFamily::Gaussian, config.alpha)?;
        let elapsed = t0.elapsed().as_secs_f64() * 1e3;
        records.push(ReplicateRecord {
            domain: domain.kind.as_str().into(),
            grid_size: domain.grid_size,
            method: method.as_str().into(),
            replicate: rep,
            seed,
            threshold: thr,
            lkcs: lkc_fit.estimate.values.clone(),
            fit_runtime_ms: elapsed,
        });
    }
    Ok(records)
}
