use std::f64::consts::PI;

use proptest::prelude::*;
use topodeg::bmo::{lemma_ab, mean_oscillation};
use topodeg::degree::{degree_by_counting, winding_number, winding_number_crossing, DegreeOptions};
use topodeg::quadrature::Quadrature;
use topodeg::regularity::essential_oscillation;
use topodeg::{Domain, MapField};

fn circle(center: [f64; 2], radius: f64, turns: i32, n: usize) -> Vec<[f64; 2]> {
    (0..n * turns.unsigned_abs() as usize)
        .map(|i| {
            let t = turns.signum() as f64 * 2.0 * PI * i as f64 / n as f64;
            [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
        })
        .collect()
}

fn linear(a: [f64; 4], b: [f64; 2]) -> MapField {
    MapField::analytic("affine", 2, 2, move |x, o| {
        o[0] = a[0] * x[0] + a[1] * x[1] + b[0];
        o[1] = a[2] * x[0] + a[3] * x[1] + b[1];
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn winding_counts_turns(turns in -3i32..=3, cx in -0.3..0.3f64, cy in -0.3..0.3f64, r in 0.5..2.0f64) {
        prop_assume!(turns != 0);
        let trace = circle([cx, cy], r, turns, 64);
        prop_assert_eq!(winding_number(&trace, [0.0, 0.0]).unwrap(), turns as i64);
        prop_assert_eq!(winding_number_crossing(&trace, [0.0, 0.0]), turns as i64);
    }

    #[test]
    fn reversal_negates_winding(turns in 1i32..=3, px in -2.0..2.0f64, py in -2.0..2.0f64) {
        let trace = circle([0.0, 0.0], 1.0, turns, 48);
        prop_assume!((px.hypot(py) - 1.0).abs() > 0.05);
        let mut reversed = trace.clone();
        reversed.reverse();
        let w = winding_number(&trace, [px, py]).unwrap();
        prop_assert_eq!(winding_number(&reversed, [px, py]).unwrap(), -w);
        prop_assert_eq!(winding_number_crossing(&trace, [px, py]), w);
    }

    #[test]
    fn lemma_ab_holds(values in prop::collection::vec(-5.0..5.0f64, 8..64), mask in any::<u64>()) {
        let weights: Vec<f64> = (0..values.len()).map(|i| 1.0 + (i % 3) as f64).collect();
        let in_a: Vec<bool> = (0..values.len()).map(|i| (mask >> (i % 64)) & 1 == 1).collect();
        prop_assume!(in_a.iter().any(|b| *b));
        let (lhs, rhs) = lemma_ab(&values, &weights, &in_a);
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn mean_oscillation_is_affine_equivariant(
        a in prop::array::uniform4(-2.0..2.0f64),
        s in -3.0..3.0f64,
        b in prop::array::uniform2(-5.0..5.0f64),
        eps in 0.05..0.4f64,
    ) {
        let d = Domain::unit_disk(32).unwrap();
        let x = [0.1, -0.2];
        let base = mean_oscillation(&linear(a, [0.0, 0.0]), &d, &x, eps).unwrap();
        let scaled = linear(a.map(|v| s * v), b);
        let m = mean_oscillation(&scaled, &d, &x, eps).unwrap();
        prop_assert!((m - s.abs() * base).abs() <= 1e-9 * (1.0 + m));
    }

    #[test]
    fn trimming_never_grows_oscillation(a in prop::array::uniform4(-2.0..2.0f64), r in 0.05..0.5f64) {
        let d = Domain::unit_disk(64).unwrap();
        let f = linear(a, [0.0, 0.0]);
        let full = essential_oscillation(&f, &d, &[0.0, 0.0], r, 0.0).unwrap();
        let trimmed = essential_oscillation(&f, &d, &[0.0, 0.0], r, 0.05).unwrap();
        prop_assert!(trimmed <= full + 1e-12);
    }

    #[test]
    fn linear_degree_is_sign_of_det(a in prop::array::uniform4(-2.0..2.0f64)) {
        let det = a[0] * a[3] - a[1] * a[2];
        let frob2: f64 = a.iter().map(|v| v * v).sum();
        let sigma_min = (0.5 * (frob2 - (frob2 * frob2 - 4.0 * det * det).max(0.0).sqrt())).sqrt();
        prop_assume!(sigma_min > 0.5);
        let d = Domain::unit_disk(32).unwrap();
        let r = degree_by_counting(&linear(a, [0.0, 0.0]), &d, &[0.0, 0.0], &DegreeOptions::default()).unwrap();
        prop_assert_eq!(r.value, det.signum() as i64);
    }

    #[test]
    fn ball_weights_sum_to_area(r in 0.1..3.0f64, cells in 16usize..48) {
        let q = Quadrature::ball(&[0.3, -0.1], r, cells, None);
        let area: f64 = q.weights().iter().sum();
        prop_assert!((area - PI * r * r).abs() < 0.05 * PI * r * r);
    }
}
