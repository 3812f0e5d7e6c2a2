use std::f64::consts::{PI, TAU};

use num_bigint::BigUint;
use num_rational::BigRational;
use proptest::prelude::*;
use sdiff_lab::blocks::{balls_disjoint, ceil_sqrt, pack_balls, verify_packing};
use sdiff_lab::energy::{scaled_energy, surface_energy, ScalingMode};
use sdiff_lab::fields::{
    cutoff, euclidean_divergence, extend_field, stirring_field, AmbientField, Band, CutoffProfile, ExtensionMode,
    TangentField,
};
use sdiff_lab::flow::{integrate_isotopy, low_discrepancy, volume_defect, Integration};
use sdiff_lab::geometry::{build_quadrature, tubular_chart, EmbeddedSurface, QuadratureMesh};
use sdiff_lab::massflow::{flux_pairing, lift, wrap_angle, CircleMap};

fn torus_field(amplitude: f64, turns: u64) -> TangentField {
    let t = EmbeddedSurface::torus(2.0, 1.0).unwrap();
    stirring_field(&t, Band::plateau(1, 0.0, 0.6, 0.6), amplitude, turns).unwrap()
}

fn torus_tube(delta: f64) -> AmbientField {
    let f = torus_field(1.0, 1);
    let chart = tubular_chart(f.surface(), delta).unwrap();
    extend_field(&f, &chart, &CutoffProfile::new(delta).unwrap(), ExtensionMode::Corrected).unwrap()
}

fn coarse_mesh() -> QuadratureMesh {
    build_quadrature(&EmbeddedSurface::torus(2.0, 1.0).unwrap(), [16, 32]).unwrap()
}

fn ratio(p: u32, q: u32) -> BigRational {
    BigRational::new(p.into(), q.into())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_is_homogeneous_of_degree_two(amp in 0.1f64..5.0, n in 1u64..50) {
        let mesh = coarse_mesh();
        let base = surface_energy(&torus_field(1.0, 1), &mesh).unwrap();
        let j = surface_energy(&torus_field(amp, n), &mesh).unwrap();
        let expected = base * (amp * n as f64).powi(2);
        prop_assert!((j - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn flux_is_linear_in_amplitude(amp in 0.1f64..5.0, n in 1u64..20) {
        let mesh = coarse_mesh();
        let s = EmbeddedSurface::torus(2.0, 1.0).unwrap();
        let f = CircleMap::basis(&s, 0).unwrap();
        let base = flux_pairing(&torus_field(1.0, 1), &f, &mesh).unwrap();
        let got = flux_pairing(&torus_field(amp, n), &f, &mesh).unwrap();
        prop_assert!((got - amp * n as f64 * base).abs() <= 1e-12 * got.abs());
    }

    #[test]
    fn lift_recovers_small_step_paths(start in -10.0f64..10.0, steps in prop::collection::vec(-1.5f64..1.5, 1..64)) {
        let mut path = vec![start];
        for d in &steps {
            path.push(path.last().unwrap() + d);
        }
        let wrapped: Vec<f64> = path.iter().map(|&a| wrap_angle(a)).collect();
        let lifted = lift(&wrapped).unwrap();
        for (l, p) in lifted.iter().zip(&path) {
            prop_assert!((l - (p - start)).abs() < 1e-9);
        }
    }

    #[test]
    fn wrap_angle_lands_in_half_open_circle(a in -1e4f64..1e4) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let k = ((a - w) / TAU).round();
        prop_assert!((a - w - k * TAU).abs() < 1e-9);
    }

    #[test]
    fn packed_balls_are_disjoint_and_contained(p in 1u32..=4, q in 4u32..=32, dq in 2u32..=8, count in 1usize..24) {
        // ρ₀ = p/(8q) ≤ 1/8, d = 1/dq ∈ [1/8, 1/2]
        let rho0 = ratio(p, 8 * q);
        let decay = ratio(1, dq);
        let packing = pack_balls(count, &rho0, &decay).unwrap();
        prop_assert_eq!(packing.balls.len(), count);
        prop_assert!(verify_packing(&packing.balls).is_ok());
        for (i, a) in packing.balls.iter().enumerate() {
            prop_assert!(a.inside_unit_cube());
            for b in &packing.balls[i + 1..] {
                prop_assert!(balls_disjoint(a, b));
            }
        }
    }

    #[test]
    fn ceil_sqrt_is_least(n in 1u64..u64::MAX) {
        let n = BigUint::from(n);
        let r = ceil_sqrt(&n);
        prop_assert!(&r * &r >= n);
        let below = &r - 1u32;
        prop_assert!(&below * &below < n);
    }

    #[test]
    fn cutoff_is_a_monotone_unit_profile(delta in 0.01f64..1.0, x in 0.0f64..1.5, y in 0.0f64..1.5) {
        let (a, b) = (x.min(y) * delta, x.max(y) * delta);
        let (ea, eb) = (cutoff(a, delta), cutoff(b, delta));
        prop_assert!((0.0..=1.0).contains(&ea) && (0.0..=1.0).contains(&eb));
        prop_assert!(eb <= ea);
        if b <= 0.5 * delta { prop_assert_eq!(eb, 1.0); }
        if a >= 0.75 * delta { prop_assert_eq!(ea, 0.0); }
    }

    #[test]
    fn homothety_exponents(lambda in 0.01f64..1.0, j in 0.1f64..100.0) {
        let d = scaled_energy(j, lambda, ScalingMode::Derived, 3).unwrap();
        let p = scaled_energy(j, lambda, ScalingMode::Doubled, 3).unwrap();
        prop_assert!((d - j * lambda.powi(5)).abs() <= 1e-12 * d);
        prop_assert!((p / d - lambda).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn corrected_extension_is_divergence_free(u in 0.0f64..TAU, v in 0.0f64..TAU, s in -0.999f64..0.999) {
        let field = torus_tube(0.05);
        let x = field.chart().map(u, v, s * 0.05).unwrap();
        let d = euclidean_divergence(|y| field.velocity(y), &x, 1e-6).unwrap();
        prop_assert!(d.abs() <= 1e-5 * 2.0, "div {d}");
    }

    #[test]
    fn block_flow_preserves_volume(seed in 0u64..1000) {
        let field = torus_tube(0.05);
        let chart = *field.chart();
        let pts: Vec<[f64; 3]> = low_discrepancy::<3>(2, seed)
            .iter()
            .map(|p| {
                let x = chart.map(TAU * p[0], TAU * p[1], (p[2] - 0.5) * 0.06).unwrap();
                [x.x, x.y, x.z]
            })
            .collect();
        let iso = integrate_isotopy(&field, &pts, &Integration::unit_time(256).with_jacobian(1e-5)).unwrap();
        prop_assert!(volume_defect(&iso).unwrap() <= 1e-6);
    }
}
