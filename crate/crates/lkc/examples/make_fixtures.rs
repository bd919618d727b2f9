//! Regenerates the committed fixtures deterministically.
//!
//! `fixtures/square_g20.lkcb`: 15 unit-variance Gaussian fields on the
//! 20x20 square, seed 42 — the small bundle the CLI examples and the
//! acceptance fit use.
//!
//! `fixtures/fiac_like_g12.lkcb`: 16 fields on a 12^3 cube restricted to an
//! ellipsoidal mask — the shape of a small fMRI group study (one contrast
//! map per subject on a brain mask), with synthetic data.

use lkc::{simulate, FieldBundle, GridDomain, GrfSpec};

fn main() {
    std::fs::create_dir_all("fixtures").expect("create fixtures dir");

    let square = simulate(&GrfSpec::new(GridDomain::square(20).unwrap(), 15, 42)).unwrap();
    square.save("fixtures/square_g20.lkcb").unwrap();
    println!("square_g20.lkcb: F={} K={}", square.field_count, square.site_count());

    let domain = GridDomain::cube(12).unwrap();
    let full = simulate(&GrfSpec::new(domain, 16, 7)).unwrap();
    // Ellipsoid about the cube center; semi-axes chosen so the mask keeps a
    // nontrivial interior but excludes all faces.
    let mask: Vec<bool> = (0..domain.site_count())
        .map(|k| {
            let [x, y, z] = domain.site_position(k);
            let dx = (x - 0.5) / 0.45;
            let dy = (y - 0.5) / 0.38;
            let dz = (z - 0.5) / 0.32;
            dx * dx + dy * dy + dz * dz <= 1.0
        })
        .collect();
    let kept = mask.iter().filter(|&&m| m).count();
    let masked = FieldBundle::new(domain, full.field_count, full.values, Some(mask)).unwrap();
    masked.save("fixtures/fiac_like_g12.lkcb").unwrap();
    println!("fiac_like_g12.lkcb: F={} K={} masked-in={}", masked.field_count, masked.site_count(), kept);
}
