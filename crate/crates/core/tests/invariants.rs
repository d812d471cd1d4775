//! Randomised invariants of the group, the dilations, the norms and the iteration schedule.

use nalgebra::DMatrix;
use proptest::prelude::*;

use kolmo::estimates::moser::MoserSchedule;
use kolmo::estimates::norms::lp_norm_masked;
use kolmo::operator::{detect_block_structure, exponents};
use kolmo::{GridFunction, GridSpec, GroupPoint, KolmogorovGroup, OperatorSpec};

fn close(a: &GroupPoint, b: &GroupPoint, tol: f64) -> bool {
    let scale = 1.0 + a.x.amax().max(a.t.abs());
    (&a.x - &b.x).amax() <= tol * scale && (a.t - b.t).abs() <= tol * scale
}

/// Three-variable drift with unit sub-diagonal and arbitrary lower-triangular perturbation.
fn drift(p: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[p[0], 0.0, 0.0, 1.0 + p[1], p[2], 0.0, p[3], 1.0 + p[4], p[5]])
}

fn point(v: &[f64]) -> GroupPoint {
    GroupPoint::from_slice(&v[..3], v[3]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn group_law_is_associative_with_inverses(
        b in prop::collection::vec(-0.4f64..0.4, 6),
        u in prop::collection::vec(-1.0f64..1.0, 4),
        v in prop::collection::vec(-1.0f64..1.0, 4),
        w in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let b = drift(&b);
        let g = KolmogorovGroup::new(b.clone(), detect_block_structure(&b, 1).unwrap()).unwrap();
        let (u, v, w) = (point(&u), point(&v), point(&w));
        let left = g.compose(&g.compose(&u, &v).unwrap(), &w).unwrap();
        let right = g.compose(&u, &g.compose(&v, &w).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
        prop_assert!(close(&g.compose(&u, &g.inverse(&u)).unwrap(), &GroupPoint::origin(3), 1e-12));
        prop_assert!(close(&g.reduce(&u, &u), &GroupPoint::origin(3), 1e-12));
    }

    #[test]
    fn dilations_scale_the_norm_and_compose(
        v in prop::collection::vec(-1.0f64..1.0, 4),
        r in 0.05f64..8.0,
        s in 0.05f64..8.0,
    ) {
        let g = KolmogorovGroup::from_spec(&OperatorSpec::kinetic(1).unwrap()).unwrap();
        let z = GroupPoint::from_slice(&v[..2], v[2]).unwrap();
        let dz = g.dilate(r, &z).unwrap();
        prop_assert!((g.hom_norm(&dz) - r * g.hom_norm(&z)).abs() <= 1e-10 * r * (1.0 + g.hom_norm(&z)));
        let twice = g.dilate(s, &dz).unwrap();
        prop_assert!(close(&twice, &g.dilate(r * s, &z).unwrap(), 1e-12));
    }

    #[test]
    fn schedule_radii_shrink_and_exponents_grow_geometrically(
        q in 3.1f64..40.0,
        p in prop_oneof![0.2f64..4.0, -4.0f64..-0.2],
        rho in 0.1f64..0.8,
    ) {
        let ex = exponents(q, 4).unwrap();
        let s = MoserSchedule::new(p, rho, 1.0, &ex, None).unwrap();
        prop_assert_eq!(s.radii[0], 1.0);
        // (r − ρ)/2ⁿ drops below one ulp of ρ after ~52 halvings; from there ρ_n rounds to ρ.
        for (n, w) in s.radii.windows(2).enumerate() {
            let shrinks = if n < 40 { w[1] < w[0] } else { w[1] <= w[0] };
            prop_assert!(w[1] >= rho && shrinks);
        }
        prop_assert!((s.exponents[0] - p / (2.0 * ex.beta)).abs() < 1e-15);
        for w in s.exponents.windows(2) {
            prop_assert!((w[1] / w[0] - ex.alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn normalised_power_means_increase_with_the_exponent(
        vals in prop::collection::vec(0.01f64..10.0, 64),
        lambda in 0.01f64..100.0,
    ) {
        let spec = GridSpec::uniform(vec![0.0, 0.0], vec![1.0, 1.0], 8).unwrap();
        let u = GridFunction::new(spec, vals).unwrap();
        let mask: Vec<usize> = (0..u.spec.len()).collect();
        let volume = mask.len() as f64 * u.spec.cell_volume();
        let mut last = 0.0;
        for p in [-3.0, -1.0, -0.5, 0.5, 1.0, 2.0, 5.0] {
            let n = lp_norm_masked(&u, p, &mask).unwrap();
            let mean = n.norm / volume.powf(1.0 / p);
            prop_assert!(mean >= last * (1.0 - 1e-12));
            last = mean;
            let scaled = lp_norm_masked(&u.scale(lambda).unwrap(), p, &mask).unwrap();
            prop_assert!((scaled.norm / (lambda * n.norm) - 1.0).abs() < 1e-12);
        }
    }
}
