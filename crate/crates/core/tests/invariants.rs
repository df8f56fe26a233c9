use proptest::prelude::*;
use zubov::checkpoint::Checkpoint;
use zubov::config::RunConfig;
use zubov::losses::{output_probs_values, LossConfig};
use zubov::nets::{AnchorSet, Iacnn, IacnnShape, LevelFunction, LyapunovHead, QuadraticPotential};
use zubov::rng::seeded;
use zubov::sampler::{boundary_sample_class, project_class, update_step, DirectionSet, SamplerConfig, ScalingRule};
use zubov::tensor::Tensor;
use zubov::train::ModelBundle;
use zubov::verify::{hull_membership, iacnn_direct, HULL_TOL};

fn projected_iacnn(d: usize, seed: u64, weights: &[f64]) -> Iacnn {
    let shape = IacnnShape {
        input_dim: d,
        z_widths: vec![6, 6, 1],
        u_widths: vec![4, 4, 0],
    };
    let mut net = Iacnn::new(shape, &mut seeded(seed)).unwrap();
    let mut k = 0;
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = weights[k % weights.len()];
            k += 1;
        }
    }
    net.project_nonneg();
    net
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain, counter-clockwise, collinear points dropped.
fn hull_2d(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Signed margin of `y` inside the hull polygon: positive inside.
fn polygon_margin(hull: &[[f64; 2]], y: [f64; 2]) -> f64 {
    let n = hull.len();
    (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, y) / len
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn output_probs_form_a_simplex(w in prop::collection::vec(1e-4f64..0.9999, 2..6)) {
        let p = output_probs_values(&w, &LossConfig::default());
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_level_means_higher_probability(w in prop::collection::vec(1e-4f64..0.9999, 2..6)) {
        let p = output_probs_values(&w, &LossConfig::default());
        for i in 0..w.len() {
            for j in 0..w.len() {
                if w[i] < w[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn head_is_zero_at_anchor_and_bounded(seed in 0u64..1000, x in prop::collection::vec(-4.0f64..4.0, 2)) {
        let anchors = AnchorSet::build(2, 2, seed).unwrap();
        let iacnn = Iacnn::new(IacnnShape { input_dim: 2, z_widths: vec![8, 8, 1], u_widths: vec![4, 4, 0] }, &mut seeded(seed)).unwrap();
        let head = LyapunovHead::new(iacnn, anchors, 0.5, 0.1, 0.85, 0.9).unwrap();
        for i in 0..2 {
            let c = head.anchor_point(i);
            let at_c = head.potential_values(&Tensor::row(&c).unwrap(), i).unwrap()[0];
            prop_assert!(at_c.abs() < 1e-12);
            let w = head.level_values(&Tensor::row(&x).unwrap(), i).unwrap()[0];
            prop_assert!((0.0..1.0).contains(&w));
        }
    }

    #[test]
    fn step_update_never_grows_without_expansion(a in -5.0f64..5.0, mask in -1i8..=1) {
        for rule in [ScalingRule::SignOfStep, ScalingRule::Literal] {
            let next = update_step(a, mask, rule, false);
            if rule == ScalingRule::SignOfStep {
                prop_assert!(next.abs() <= a.abs() + 1e-15);
            }
            prop_assert!(next == 0.0 || next.signum() == f64::from(mask));
        }
    }

    #[test]
    fn sampler_lands_on_the_level_set(
        cx in -2.0f64..2.0,
        cy in -2.0f64..2.0,
        scale in 0.2f64..3.0,
        rho in 0.5f64..0.99,
    ) {
        let anchors = AnchorSet::custom(Tensor::row(&[cx, cy]).unwrap()).unwrap();
        let head = QuadraticPotential::new(anchors, scale);
        let cfg = SamplerConfig { rho, ..SamplerConfig::default() };
        let out = boundary_sample_class(&head, 0, &DirectionSet::circle(16).unwrap(), &cfg).unwrap();
        let w = head.level_values(&out.points, 0).unwrap();
        for (k, ok) in out.converged.iter().enumerate() {
            if *ok {
                prop_assert!((w[k] - rho).abs() <= cfg.eps);
            }
        }
        prop_assert_eq!(out.converged_count(), 16);
    }

    #[test]
    fn projection_ends_inside_the_sublevel_set(
        pts in prop::collection::vec(-5.0f64..5.0, 2..20),
        rho in 0.5f64..0.99,
    ) {
        let n = pts.len() / 2;
        let points = Tensor::matrix(n, 2, pts[..2 * n].to_vec()).unwrap();
        let head = QuadraticPotential::new(AnchorSet::custom(Tensor::zeros(1, 2)).unwrap(), 1.0);
        let out = project_class(&head, 0, &points, rho).unwrap();
        let w = head.level_values(&out, 0).unwrap();
        prop_assert!(w.iter().all(|v| *v <= rho));
    }

    #[test]
    fn projected_iacnn_is_convex_in_x(
        seed in 0u64..1000,
        weights in prop::collection::vec(-2.0f64..2.0, 16),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        x2 in prop::collection::vec(-3.0f64..3.0, 2),
        c in prop::collection::vec(-1.0f64..1.0, 2),
        t in 0.0f64..1.0,
    ) {
        let net = projected_iacnn(2, seed, &weights);
        let mid: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = iacnn_direct(&net, &mid, &c);
        let rhs = t * iacnn_direct(&net, &x, &c) + (1.0 - t) * iacnn_direct(&net, &x2, &c);
        prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn direct_and_batched_iacnn_agree(
        seed in 0u64..1000,
        weights in prop::collection::vec(-2.0f64..2.0, 16),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        c in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let net = projected_iacnn(2, seed, &weights);
        let batched = net.eval(&Tensor::row(&x).unwrap(), &c).unwrap()[0];
        prop_assert!((batched - iacnn_direct(&net, &x, &c)).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hull_membership_matches_polygon(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..9),
        y in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let rows: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
        let hull = hull_2d(pts.iter().map(|&(a, b)| [a, b]).collect());
        prop_assume!(hull.len() >= 3);
        let margin = polygon_margin(&hull, [y.0, y.1]);
        // Points within round-off of an edge are ambiguous for both methods.
        prop_assume!(margin.abs() > 1e-7);
        let q = hull_membership(&Tensor::from_rows(&rows).unwrap(), &[y.0, y.1], HULL_TOL).unwrap();
        prop_assert_eq!(q.inside, margin > 0.0, "margin {} distance {}", margin, q.distance);
        if margin < 0.0 {
            prop_assert!(q.distance >= -margin - 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_round_trips_for_any_seed(seed in any::<u64>()) {
        let mut cfg = RunConfig::default();
        cfg.set_seed(seed);
        let bundle = ModelBundle::new(&cfg.model, seed).unwrap();
        let bytes = Checkpoint::capture(&cfg, &bundle, 3).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        let restored = back.restore().unwrap();
        let a: Vec<Tensor> = restored.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let b: Vec<Tensor> = bundle.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        prop_assert_eq!(a, b);
    }
}
