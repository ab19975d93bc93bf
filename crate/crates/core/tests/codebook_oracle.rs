mod common;

use common::{random_codebook, scan_index, scan_values};
use macam_core::device::{build_codebook, characterize_variation, MtjLevelTable};
use macam_core::rng;
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn encode_and_project_match_linear_scan() {
    let mut r = rng::seeded(30);
    let mut mismatches = 0;
    for _ in 0..50 {
        let (levels, cb) = random_codebook(&mut r);
        let bounds: Vec<f32> = levels.iter().map(|&v| v as f32).collect();
        let values = scan_values(&levels);
        assert_eq!(cb.representative_values(), &values[..]);
        let c = cb.search_range();
        for i in 0..100_000 {
            // every 10th input sits exactly on a boundary
            let x = if i % 10 == 0 {
                bounds[r.random_range(0..bounds.len())]
            } else {
                r.random_range(0.0..1.25 * c)
            };
            let j = scan_index(&bounds, x);
            if cb.encode(x).unwrap() != j || cb.project(x).unwrap().to_bits() != values[j].to_bits() {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn uniform_staircase_passes_through_midpoints() {
    let cb = build_codebook(&MtjLevelTable::uniform("u", 5)).unwrap();
    for j in 0..4 {
        let mid = j as f32 + 0.5;
        assert_eq!(cb.project(mid).unwrap(), mid);
        for t in [0.0f32, 0.1, 0.25, 0.49, 0.75, 0.999] {
            assert_eq!(cb.project(j as f32 + t).unwrap(), mid);
        }
    }
    for x in [4.0f32, 4.5, 100.0] {
        assert_eq!(cb.project(x).unwrap(), 4.0);
    }
}

#[test]
fn negative_and_nan_inputs_are_rejected() {
    let cb = build_codebook(&MtjLevelTable::macam1()).unwrap();
    assert!(cb.encode(-0.1).is_err());
    assert!(cb.project(f32::NAN).is_err());
}

#[test]
fn variation_profile_pools_adjacent_boundaries() {
    let cb = build_codebook(&MtjLevelTable::macam1()).unwrap();
    let p = characterize_variation(&cb, 0.128, 10_000, 9).unwrap();
    assert_eq!(p.boundary_sigma.len(), 5);
    assert_eq!(p.per_interval_input_sigma.len(), 5);
    assert_eq!(p.boundary_sigma[0], 0.0);
    for (j, s) in p.boundary_sigma.iter().enumerate().skip(1) {
        let expected = 0.128 * j as f64;
        assert!((s - expected).abs() < 0.03 * expected, "boundary {j}: {s}");
    }
    for j in 0..4 {
        let (a, b) = (p.boundary_sigma[j], p.boundary_sigma[j + 1]);
        assert_eq!(p.per_interval_input_sigma[j], ((a * a + b * b) / 2.0).sqrt());
    }
    assert_eq!(p.per_interval_input_sigma[4], p.boundary_sigma[4]);
}

#[test]
fn variation_is_seeded() {
    let cb = build_codebook(&MtjLevelTable::macam2()).unwrap();
    let a = characterize_variation(&cb, 0.1, 500, 4).unwrap();
    let b = characterize_variation(&cb, 0.1, 500, 4).unwrap();
    let c = characterize_variation(&cb, 0.1, 500, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.boundary_sigma, c.boundary_sigma);
    let zero = characterize_variation(&cb, 0.0, 100, 4).unwrap();
    assert!(zero.is_noiseless());
    assert!(characterize_variation(&cb, -0.1, 100, 4).is_err());
    assert!(characterize_variation(&cb, 0.1, 0, 4).is_err());
}

proptest! {
    #[test]
    fn projection_is_monotone_and_in_range(
        gaps in prop::collection::vec(0.01f64..3.0, 1..8),
        x0 in 0.0f32..30.0,
        dx in 0.0f32..5.0,
    ) {
        let mut levels = vec![0.0];
        for g in gaps {
            levels.push(levels[levels.len() - 1] + g);
        }
        let cb = build_codebook(&MtjLevelTable::new("p", levels).unwrap()).unwrap();
        let (y0, y1) = (cb.project(x0).unwrap(), cb.project(x0 + dx).unwrap());
        prop_assert!(y1 >= y0);
        prop_assert!(y0 > 0.0 && y0 <= cb.search_range());
        let j = cb.encode(x0).unwrap();
        prop_assert!(j < cb.len());
        prop_assert!(cb.boundaries()[j] <= x0);
    }
}
