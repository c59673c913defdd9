use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use proptest::prelude::*;

use decoherence::coherence::{evolve, CoherenceGrid};
use decoherence::levy::{characteristic_exponent, characteristic_function, JumpMeasure, LevyTriplet, PointMass};
use decoherence::posdec::{phi_s, RecoillessModel};
use decoherence::qlbe::{energy_transfer, log_structure_factor, total_rate, CrossSection, GasModel};
use decoherence::specfun::{erf, hyp1f1_dec};
use decoherence::unravel::{Branch, MomentumSuperposition};
use decoherence::Vec3;

fn vec3(scale: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-scale..scale).prop_map(Vec3::from)
}

fn gas(ratio: f64, beta: f64) -> GasModel {
    GasModel::new(0.7, 1.0, 1.0 / ratio, beta, CrossSection::Constant { value: 0.2 }).unwrap()
}

fn triplet() -> impl Strategy<Value = LevyTriplet> {
    (
        vec3(2.0),
        prop::array::uniform9(-1.0..1.0f64),
        prop::collection::vec((0.0..2.0f64, vec3(3.0)), 0..4),
        0.5..20.0f64,
    )
        .prop_map(|(drift, a, masses, q0)| {
            let a = Matrix3::from_row_slice(&a);
            let masses = masses.into_iter().map(|(weight, q)| PointMass { weight, q }).collect();
            LevyTriplet::new(drift, a * a.transpose(), JumpMeasure::point_masses(masses).with_truncation(q0), 1.0).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exponent_is_hermitian_with_nonnegative_real_part(t in triplet(), x in vec3(5.0)) {
        let psi = characteristic_exponent(&t, &x).unwrap();
        let neg = characteristic_exponent(&t, &(-x)).unwrap();
        prop_assert!((neg - psi.conj()).norm() <= 1e-12 * psi.norm().max(1.0));
        prop_assert!(psi.re >= -1e-12 * psi.norm().max(1.0));
    }

    #[test]
    fn characteristic_function_is_a_contraction_semigroup(
        t in triplet(), x in vec3(5.0), t1 in 0.0..2.0f64, t2 in 0.0..2.0f64,
    ) {
        let a = characteristic_function(&t, t1, &x).unwrap();
        let b = characteristic_function(&t, t2, &x).unwrap();
        let ab = characteristic_function(&t, t1 + t2, &x).unwrap();
        prop_assert!(a.norm() <= 1.0 + 1e-12);
        prop_assert!((ab - a * b).norm() <= 1e-12);
    }

    #[test]
    fn evolve_keeps_trace_and_hermiticity(t in triplet(), time in 0.0..3.0f64, n in 2usize..8) {
        let axis: Vec<f64> = (0..n).map(|i| i as f64 * 0.4).collect();
        let psi: Vec<Complex64> = axis.iter().map(|x| Complex64::from_polar((-x * x).exp(), 1.3 * x)).collect();
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let psi: Vec<Complex64> = psi.iter().map(|z| z / norm).collect();
        let rho = CoherenceGrid::from_wavefunction(axis, &psi).unwrap();
        let out = evolve(&rho, &t, time, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let m: &DMatrix<Complex64> = out.matrix();
        prop_assert!((out.trace() - rho.trace()).abs() < 1e-12);
        prop_assert!((m - m.adjoint()).norm() < 1e-12);
        for j in 0..n {
            for k in 0..n {
                prop_assert!(m[(j, k)].norm() <= rho.matrix()[(j, k)].norm() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn detailed_balance(ratio in 1e-3..10.0f64, beta in 0.2..5.0f64, q in vec3(3.0), p in vec3(20.0)) {
        let g = gas(ratio, beta);
        let lhs = log_structure_factor(&g, &q, &p).unwrap();
        let rhs = -g.beta * energy_transfer(&g, &q, &p) + log_structure_factor(&g, &(-q), &(p + q)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn rate_is_isotropic_and_above_rest_value(ratio in 1e-3..10.0f64, p in vec3(30.0), axis in 0usize..3) {
        let g = gas(ratio, 1.0);
        let rate = total_rate(&g, &p).unwrap();
        let mut rotated = Vec3::zeros();
        rotated[axis] = p.norm();
        let rest = total_rate(&g, &Vec3::zeros()).unwrap();
        prop_assert!((rate - total_rate(&g, &rotated).unwrap()).abs() <= 1e-10 * rate);
        prop_assert!(rate >= rest * (1.0 - 1e-12));
    }

    #[test]
    fn phi_s_is_bounded(ratio in 1e-3..5.0f64, p0 in vec3(2.0), x in vec3(4.0)) {
        let m = RecoillessModel::new(gas(ratio, 1.0), p0).unwrap();
        prop_assert!(phi_s(&m, &x).unwrap().norm() <= 1.0 + 1e-10);
    }

    #[test]
    fn hyp1f1_dec_decreases_within_unit_interval(u in 0.0..1e4f64, du in 1e-6..10.0f64) {
        let a = hyp1f1_dec(u).unwrap();
        let b = hyp1f1_dec(u + du).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b <= a);
    }

    #[test]
    fn erf_is_odd_and_bounded(x in -30.0..30.0f64) {
        let v = erf(x).unwrap();
        prop_assert_eq!(v, -erf(-x).unwrap());
        prop_assert!(v.abs() <= 1.0);
    }

    #[test]
    fn superposition_json_round_trip(
        branches in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, vec3(10.0)), 1..4),
    ) {
        let norm = branches.iter().map(|(re, im, _)| (re + 1.5).hypot(*im).powi(2)).sum::<f64>().sqrt();
        let branches: Vec<Branch> = branches
            .into_iter()
            .map(|(re, im, momentum)| Branch { amplitude: Complex64::new(re + 1.5, im) / norm, momentum })
            .collect();
        let psi = MomentumSuperposition::new(branches).unwrap();
        let back: MomentumSuperposition = serde_json::from_str(&serde_json::to_string(&psi).unwrap()).unwrap();
        prop_assert_eq!(back.branches(), psi.branches());
    }
}
