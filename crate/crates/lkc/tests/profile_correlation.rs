//! Qualitative structure of the EC-profile error correlation on smooth
//! simulated fields, and an end-to-end run over the committed masked-3D
//! fixture.

use std::path::PathBuf;

use lkc::{
    ec_profile, fit_pipeline, sample_moments, simulate, Connectivity, FieldBundle, FitOptions,
    GridDomain, GrfSpec,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

/// EC counts at nearby levels are strongly positively correlated while
/// counts about one standard deviation apart are distinctly negatively
/// correlated: components at one level become the gaps of the other.
#[test]
fn ec_correlation_dips_negative_at_unit_separation() {
    let domain = GridDomain::square(20).unwrap();
    let bundle = simulate(&GrfSpec::new(domain, 300, 11)).unwrap();
    let levels: Vec<f64> = (0..31).map(|j| -3.0 + 0.2 * j as f64).collect();
    let profile = ec_profile(&bundle, &levels, Connectivity::Conn8).unwrap();
    let m = sample_moments(&profile).unwrap();
    let anchor = 15; // u = 0
    assert!(
        m.corr[(anchor, anchor + 1)] > 0.3,
        "short-lag correlation {} not positive",
        m.corr[(anchor, anchor + 1)]
    );
    let mut min_corr = f64::INFINITY;
    for d in 4..=10usize {
        min_corr = min_corr.min(m.corr[(anchor, anchor + d)]);
    }
    assert!(
        min_corr < -0.2,
        "no pronounced negative correlation near unit separation: min {min_corr}"
    );
}

/// The masked-3D fixture (16 fields on an ellipsoidal region of a 12^3
/// cube) runs through the whole pipeline: curvatures have the right signs
/// and the threshold lands in a sane range for a smooth 3D field.
#[test]
fn masked_3d_fixture_fits_end_to_end() {
    let bundle = FieldBundle::load(fixture("fiac_like_g12.lkcb")).unwrap();
    assert_eq!(bundle.field_count, 16);
    assert!(bundle.mask.is_some(), "fixture must carry a mask");
    let result = fit_pipeline(&bundle, &FitOptions::default()).unwrap();
    let l = &result.fit.estimate.values;
    assert_eq!(l[0], 1.0, "L_0 pinned to the mask's EC");
    assert!(l[1] > 0.0 && l[2] > 0.0, "L_1, L_2 positive: {l:?}");
    assert!(
        result.threshold > 2.5 && result.threshold < 5.0,
        "threshold {} out of range",
        result.threshold
    );
}
