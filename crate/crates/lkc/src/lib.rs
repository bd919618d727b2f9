//! Lipschitz-Killing curvature regression for excursion sets of random
//! fields: Euler-characteristic profiles of sampled fields, generalized
//! least-squares estimation of the curvatures against the kinematic-formula
//! regressors, tail probabilities and thresholds, and a Gaussian random-field
//! simulator for validation experiments.

pub mod covariance;
pub mod domain;
pub mod error;
pub mod excursion;
pub mod gkf;
pub mod regression;
pub mod simulate;

pub use covariance::{estimate as estimate_covariance, sample_moments, CovMethod, CovarianceEstimate, Moments};
pub use domain::{DomainKind, FieldBundle, GridDomain, NormalizeMode};
pub use error::{Error, Result};
pub use excursion::{
    count_features, ec_profile, euler_characteristic, excursion_mask, Connectivity, EcProfile,
    ExcursionMask, Features, Topology,
};
pub use gkf::{
    expected_ec, rho, tail_probability, threshold, truth_lkcs, LkcVector, RhoFamily,
    TailProbability,
};
pub use regression::{
    design_criterion, design_levels, fit, fit_pipeline, fit_with_pinned_l0, regressor_matrix, DesignCriterion,
    FitOptions, FitReport, LevelDesign, LevelSpacing, LkcFit, PipelineResult,
};
pub use simulate::{
    default_alpha_cov, derive_seed, empirical_threshold, fit_convergence, run_experiment,
    simulate, ExperimentConfig, ExperimentResult, GrfSpec,
};
