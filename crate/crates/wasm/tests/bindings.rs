use zubov::nets::LevelFunction;
use zubov::tensor::Tensor;
use zubov_wasm::{potential_grid, random_head, sample_boundary, separability, vdp_region};

#[test]
fn sampler_points_sit_on_the_level_set() {
    let flat = sample_boundary(3, 0.9, 16).unwrap();
    let head = random_head(3).unwrap();
    assert_eq!(flat.len(), 4 * 16);
    for chunk in flat.chunks(4) {
        assert_eq!(chunk[3], 1.0);
        let w = head.level_values(&Tensor::row(&chunk[..2]).unwrap(), 0).unwrap()[0];
        assert!((w - 0.9).abs() <= 1e-4, "W = {w}");
    }
}

#[test]
fn potential_vanishes_at_the_anchor() {
    let w = potential_grid(2, 1.0, 3).unwrap();
    assert_eq!(w.len(), 9);
    assert!(w[4].abs() < 1e-12);
    assert!(w.iter().all(|&v| (0.0..1.0).contains(&v)));
}

#[test]
fn vdp_origin_is_inside_and_corners_outside() {
    let labels = vdp_region(1.0, 3.0, 5, 100.0).unwrap();
    assert_eq!(labels[12], 1);
    assert_eq!(labels[0], 0);
    assert_eq!(labels[24], 0);
}

#[test]
fn separability_in_high_dimension_is_certain() {
    let r = separability(3, 4, 4, 100, 1).unwrap();
    assert_eq!(r[0], 1.0);
    assert_eq!(r[1], 1.0);
}
