use std::f64::consts::PI;

use mra_core::signal::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn line(max_d: usize) -> impl Strategy<Value = Signal> {
    (1..=max_d).prop_flat_map(|d| prop::collection::vec(-3.0..3.0f64, d).prop_map(|v| Signal::line(v).unwrap()))
}

fn grid(max_side: usize) -> impl Strategy<Value = Signal> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(-3.0..3.0f64, h * w).prop_map(move |v| Signal::grid(h, w, v).unwrap())
    })
}

fn any_signal() -> impl Strategy<Value = Signal> {
    prop_oneof![line(64), grid(8)]
}

/// Two signals sharing a random geometry.
fn pair() -> impl Strategy<Value = (Signal, Signal)> {
    any_signal().prop_flat_map(|u| {
        let g = u.geometry();
        (Just(u), prop::collection::vec(-3.0..3.0f64, g.len()).prop_map(move |v| Signal::new(g, v).unwrap()))
    })
}

/// Textbook `O(d^2)` unitary DFT written independently of the library.
fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let d = x.len();
    (0..d)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| Complex64::from_polar(v, -2.0 * PI * (k * j) as f64 / d as f64))
                .sum::<Complex64>()
                / (d as f64).sqrt()
        })
        .collect()
}

proptest! {
    #[test]
    fn shift_is_a_norm_preserving_permutation(x in any_signal(), g in 0usize..64) {
        let y = x.shifted(g % x.len());
        let (mut a, mut b) = (x.values().to_vec(), y.values().to_vec());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert!((y.norm_sq() - x.norm_sq()).abs() <= 1e-12 * x.norm_sq());
    }

    #[test]
    fn shift_composition_and_identity(x in any_signal(), a in 0usize..64, b in 0usize..64) {
        let geo = x.geometry();
        let (a, b) = (a % x.len(), b % x.len());
        prop_assert_eq!(x.shifted(0), x.clone());
        prop_assert_eq!(x.shifted(a).shifted(b), x.shifted(geo.compose(a, b)));
        prop_assert_eq!(x.shifted(a).unshifted(a), x.clone());
    }

    #[test]
    fn parseval_and_roundtrip(x in any_signal()) {
        let spec = dft(&x);
        let energy: f64 = spec.coeffs().iter().map(|c| c.norm_sqr()).sum();
        prop_assert!((energy - x.norm_sq()).abs() <= 1e-10 * x.norm_sq().max(1e-300));
        let back = idft(&spec);
        prop_assert!(back.sub(&x).unwrap().norm() <= 1e-12 * (1.0 + x.norm()));
    }

    #[test]
    fn conjugate_symmetry(x in any_signal()) {
        let spec = dft(&x);
        for k in 0..x.len() {
            let c = spec.coeffs()[k] - spec.coeffs()[spec.conjugate_index(k)].conj();
            prop_assert!(c.norm() <= 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn fft_matches_naive_dft(x in line(64)) {
        let spec = dft(&x);
        for (a, b) in spec.coeffs().iter().zip(naive_dft(x.values())) {
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn orbit_fast_path_matches_enumeration((u, v) in pair()) {
        let fast = orbit_distance(&u, &v).unwrap();
        let brute = (0..u.len()).map(|g| u.sub(&v.shifted(g)).unwrap().norm()).fold(f64::INFINITY, f64::min);
        prop_assert!((fast - brute).abs() <= 1e-10 * (1.0 + u.norm() + v.norm()));
        prop_assert!((orbit_distance_brute(&u, &v).unwrap() - brute).abs() <= 1e-12 * (1.0 + brute));
        prop_assert!((fast - orbit_distance(&v, &u).unwrap()).abs() <= 1e-10 * (1.0 + fast));
    }

    #[test]
    fn orbit_members_are_at_distance_zero(x in any_signal(), g in 0usize..64) {
        let y = x.shifted(g % x.len());
        let d = orbit_distance(&x, &y).unwrap();
        prop_assert!(d <= 1e-6 * (1.0 + x.norm()), "distance {}", d);
        prop_assert_eq!(orbit_distance_brute(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn mean_projection_properties(x in any_signal()) {
        let p = mean_project(&x);
        prop_assert!(mean_project(&p).sub(&p).unwrap().norm() <= 1e-12 * (1.0 + x.norm()));
        let resid: f64 = x.sub(&p).unwrap().values().iter().sum();
        prop_assert!(resid.abs() <= 1e-12 * (1.0 + x.norm()) * x.len() as f64);
    }

    #[test]
    fn phase_difference_matches_quotient_argument((u, v) in pair(), k in 0usize..64) {
        let (a, b) = (dft(&u), dft(&v));
        let k = k % u.len();
        if a.magnitude(k) > 1e-9 && b.magnitude(k) > 1e-9 {
            let got = phase_difference_sq(&a, &b, k).unwrap();
            let oracle = (a.coeffs()[k] / b.coeffs()[k]).arg().powi(2);
            prop_assert!((got - oracle).abs() <= 1e-10, "{} vs {}", got, oracle);
        }
    }

    #[test]
    fn pearson_affine_invariance(x in line(32), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        prop_assume!(x.sub(&mean_project(&x)).unwrap().norm() > 1e-6);
        let y = Signal::line(x.values().iter().map(|v| a * v + b).collect()).unwrap();
        prop_assert!((pearson_cc(&y, &x).unwrap() - 1.0).abs() <= 1e-9);
        prop_assert!((pearson_cc(&x.scaled(-1.0), &x).unwrap() + 1.0).abs() <= 1e-9);
    }
}

#[test]
fn shift_theorem_against_direct_dft() {
    let x = Signal::line(vec![0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0, -0.9]).unwrap();
    let base = dft_direct(&x);
    for l in 0..8 {
        let shifted = dft_direct(&cyclic_shift(&x, ShiftIndex::Line(l)).unwrap());
        for k in 0..8 {
            let phase = Complex64::from_polar(1.0, -2.0 * PI * (k * l) as f64 / 8.0);
            assert!((shifted.coeffs()[k] - phase * base.coeffs()[k]).norm() < 1e-12);
        }
    }
}

#[test]
fn grid_shift_by_hand() {
    let x = Signal::grid(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(cyclic_shift(&x, ShiftIndex::Grid(1, 0)).unwrap().values(), &[3.0, 4.0, 1.0, 2.0]);
    assert_eq!(cyclic_shift(&x, ShiftIndex::Grid(0, 1)).unwrap().values(), &[2.0, 1.0, 4.0, 3.0]);
    assert!(cyclic_shift(&x, ShiftIndex::Line(1)).is_err());
    assert!(cyclic_shift(&x, ShiftIndex::Grid(2, 0)).is_err());
}

#[test]
fn group_element_counts() {
    assert_eq!(Geometry::Line { d: 7 }.group_order(), 7);
    assert_eq!(Geometry::Grid { h: 3, w: 5 }.group_order(), 15);
}
