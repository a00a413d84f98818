use std::sync::Arc;

use mra_core::estimators::*;
use mra_core::model::{sample, ObservationSet};
use mra_core::signal::{mean_project, orbit_distance, Geometry, Signal};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn random_signal(rng: &mut ChaCha20Rng, geometry: Geometry) -> Signal {
    Signal::new(geometry, (0..geometry.len()).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn random_geometry(rng: &mut ChaCha20Rng) -> Geometry {
    if rng.random_bool(0.5) {
        Geometry::Line { d: rng.random_range(1..=40) }
    } else {
        Geometry::Grid { h: rng.random_range(1..=6), w: rng.random_range(1..=6) }
    }
}

/// Value of `T_g x` at flat position `j`, from the index formula `[T_g z]_j = z_{j-g}`.
fn shifted_at(x: &[f64], geo: Geometry, j: usize, g: usize) -> f64 {
    let (h, w) = geo.dims();
    let (r, c) = (j / w, j % w);
    let (gr, gc) = (g / w, g % w);
    x[((r + h - gr) % h) * w + (c + w - gc) % w]
}

/// Value of `T_g^{-1} y` at flat position `j`.
fn unshifted_at(y: &[f64], geo: Geometry, j: usize, g: usize) -> f64 {
    let (h, w) = geo.dims();
    let (r, c) = (j / w, j % w);
    let (gr, gc) = (g / w, g % w);
    y[((r + gr) % h) * w + (c + gc) % w]
}

/// EM update written directly from its definition with plain loops.
fn brute_em(x: &Signal, data: &ObservationSet, sigma: f64) -> Vec<f64> {
    let geo = x.geometry();
    let d = geo.len();
    let mut out = vec![0.0; d];
    for i in 0..data.n() {
        let y = data.observation(i);
        let logits: Vec<f64> = (0..d)
            .map(|g| (0..d).map(|j| y[j] * shifted_at(x.values(), geo, j, g)).sum::<f64>() / (sigma * sigma))
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        for g in 0..d {
            for (j, o) in out.iter_mut().enumerate() {
                *o += e[g] / z * unshifted_at(y, geo, j, g);
            }
        }
    }
    out.iter().map(|v| v / data.n() as f64).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn shifted_data(data: &ObservationSet, s: usize) -> ObservationSet {
    let mut obs = Vec::new();
    for i in 0..data.n() {
        obs.extend(data.observation_signal(i).shifted(s).into_values());
    }
    ObservationSet::from_observations(data.geometry(), obs, data.sigma()).unwrap()
}

#[test]
fn em_step_matches_brute_force_on_both_paths() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    for case in 0..40 {
        let geo = random_geometry(&mut rng);
        let truth = random_signal(&mut rng, geo);
        let sigma = rng.random_range(0.3..2.0);
        let data = sample(&truth, rng.random_range(1..12), sigma, case).unwrap();
        let x = random_signal(&mut rng, geo);
        let oracle = brute_em(&x, &data, sigma);
        for path in [CorrelationPath::Fft, CorrelationPath::Direct] {
            let got = EmEngine::new(&data, path).soft_average(&x, sigma, None).unwrap();
            assert!(max_abs_diff(got.values(), &oracle) <= 1e-12 * (1.0 + truth.norm()), "{geo:?} {path:?}");
        }
    }
    // The small instance called out for the step: n = 3, d = 4.
    let truth = Signal::line(vec![1.0, -0.5, 0.25, 2.0]).unwrap();
    let data = sample(&truth, 3, 0.7, 5).unwrap();
    let x = Signal::line(vec![0.3, 0.1, -0.2, 0.9]).unwrap();
    assert!(max_abs_diff(em_step(&x, &data).unwrap().values(), &brute_em(&x, &data, 0.7)) <= 1e-12);
}

#[test]
fn fft_correlations_match_direct() {
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    for _ in 0..60 {
        let geo = if rng.random_bool(0.5) {
            Geometry::Line { d: rng.random_range(1..=64) }
        } else {
            Geometry::Grid { h: rng.random_range(1..=8), w: rng.random_range(1..=8) }
        };
        let (x, y) = (random_signal(&mut rng, geo), random_signal(&mut rng, geo));
        let a = correlations_fft(&x, &y).unwrap();
        let b = correlations_direct(&x, &y).unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-12 * (1.0 + x.norm() * y.norm()));
        for (g, c) in b.iter().enumerate() {
            let oracle: f64 = (0..geo.len()).map(|j| y.values()[j] * shifted_at(x.values(), geo, j, g)).sum();
            assert!((c - oracle).abs() <= 1e-12 * (1.0 + x.norm() * y.norm()));
        }
    }
}

#[test]
fn sharp_responsibilities_pick_the_best_shift() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    for _ in 0..20 {
        let geo = Geometry::Line { d: 9 };
        let (x, y) = (random_signal(&mut rng, geo), random_signal(&mut rng, geo));
        let c = correlations_direct(&x, &y).unwrap();
        let best = (0..9).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        let mut sorted = c.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[0] - sorted[1] < 1e-4 {
            continue;
        }
        let r = responsibilities(&x, &y, 1e-3).unwrap();
        assert!(r.weights()[best] >= 1.0 - 1e-9);
    }
}

#[test]
fn single_observation_aligned_by_hard_step() {
    // Peaked template: the autocorrelation has a unique maximum at zero lag.
    let x_star = Signal::line(vec![3.0, 1.0, 0.0, -0.5, 0.2, 0.0, 0.4]).unwrap();
    let y = x_star.shifted(2);
    let data = ObservationSet::from_parts(x_star.clone(), y.into_values(), 0.0, vec![2], 0).unwrap();
    assert_eq!(hard_step(&x_star, &data).unwrap(), x_star);
}

#[test]
fn noiseless_hard_step_recovers_the_orbit() {
    let truth = Signal::line(vec![0.5, 2.0, -1.0, 0.3, 0.0, 1.2, -0.7, 0.9]).unwrap();
    let data = sample(&truth, 40, 0.0, 3).unwrap();
    let mut seen = [false; 8];
    data.true_shifts().iter().for_each(|&g| seen[g] = true);
    assert!(seen.iter().all(|&s| s), "all shifts present");
    let out = hard_step(&truth.shifted(5), &data).unwrap();
    assert!(orbit_distance(&out, &truth).unwrap() <= 1e-12);
}

#[test]
fn low_noise_em_tracks_hard_assignment() {
    let truth = Signal::line(vec![0.5, 2.0, -1.0, 0.3, 0.0, 1.2, -0.7, 0.9]).unwrap();
    let data = sample(&truth, 30, 0.0, 4).unwrap();
    let init = Signal::line(vec![0.4, 1.8, -0.8, 0.5, 0.1, 1.0, -0.6, 0.8]).unwrap();
    let cfg = RunConfig { sigma: Some(1e-6), ..RunConfig::default() };
    let em = run(EstimatorKind::Em, &init, &data, 10, &cfg).unwrap();
    let hard = run(EstimatorKind::Hard, &init, &data, 10, &cfg).unwrap();
    for (a, b) in em.iterates.unwrap().iter().zip(hard.iterates.unwrap().iter()) {
        assert!(a.sub(b).unwrap().norm() <= 1e-6);
    }
}

#[test]
fn likelihood_never_decreases_along_em() {
    let mut rng = ChaCha20Rng::seed_from_u64(24);
    for case in 0..10 {
        let geo = Geometry::Line { d: 7 };
        let truth = random_signal(&mut rng, geo);
        let data = sample(&truth, 50, 1.5, 100 + case).unwrap();
        let init = random_signal(&mut rng, geo);
        let traj = run(EstimatorKind::Em, &init, &data, 30, &RunConfig::default()).unwrap();
        let ll = traj.loglik_curve();
        assert_eq!(ll.len(), 31);
        assert!(ll.windows(2).all(|w| w[1] - w[0] >= -1e-9));
    }
}

#[test]
fn likelihood_includes_the_gaussian_constant() {
    let data = ObservationSet::from_observations(Geometry::Line { d: 1 }, vec![1.3], 0.8).unwrap();
    let x = Signal::line(vec![0.4]).unwrap();
    let expect = -(0.9f64 * 0.9) / (2.0 * 0.64) - 0.5 * (2.0 * std::f64::consts::PI * 0.64).ln();
    assert!((log_likelihood(&x, &data).unwrap() - expect).abs() < 1e-14);
}

#[test]
fn sgd_first_step_without_momentum_is_a_sign_step() {
    let truth = Signal::line(vec![1.0, -0.5, 0.3, 0.8, -1.1]).unwrap();
    let data = sample(&truth, 40, 0.5, 7).unwrap();
    let engine = EmEngine::new(&data, CorrelationPath::Direct);
    let x = Signal::line(vec![0.2, 0.1, -0.3, 0.0, 0.5]).unwrap();
    let cfg = SgdConfig {
        beta1: 0.0,
        beta2: 0.0,
        schedule: StepSchedule::Constant(0.3),
        rule: Arc::new(AdaptiveMoments),
        ..SgdConfig::default()
    };
    let batch: Vec<usize> = (0..40).collect();
    let g = sgd_gradient(&x, &engine, &batch, 0.5).unwrap();
    let next = sgd_step(&SgdState::new(x.clone(), cfg), &engine, &batch, 0.5).unwrap();
    for j in 0..5 {
        let expect = x.values()[j] - 0.3 * g[j] / (g[j].abs() + 1e-8);
        assert!((next.estimate.values()[j] - expect).abs() <= 1e-12);
    }
    assert_eq!(next.t, 1);
}

#[test]
fn sgd_at_the_batch_average_stays_put() {
    let truth = Signal::line(vec![1.0, -0.5, 0.3]).unwrap();
    let data = sample(&truth, 1, 0.0, 1).unwrap();
    let engine = EmEngine::new(&data, CorrelationPath::Direct);
    // At this noise level every misaligned shift underflows to weight zero,
    // so the observation is its own soft average and the gradient is exactly 0.
    let y = data.observation_signal(0);
    assert_eq!(sgd_gradient(&y, &engine, &[0], 1e-3).unwrap(), vec![0.0; 3]);
    let next = sgd_step(&SgdState::new(y.clone(), SgdConfig::default()), &engine, &[0], 1e-3).unwrap();
    assert_eq!(next.estimate, y);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn responsibilities_sum_to_one_and_relabel_under_shifts(
        seed in any::<u64>(), d in 1usize..24, s in 0usize..24, sigma in 0.5..3.0f64,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let geo = Geometry::Line { d };
        let (x, y) = (random_signal(&mut rng, geo), random_signal(&mut rng, geo));
        let s = s % d;
        let r = responsibilities(&x, &y, sigma).unwrap();
        prop_assert!((r.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(r.weights().iter().all(|&w| w > 0.0));
        let moved = responsibilities(&x.shifted(s), &y, sigma).unwrap();
        let back = responsibilities(&x, &y.unshifted(s), sigma).unwrap();
        for l in 0..d {
            prop_assert!((moved.weights()[l] - back.weights()[l]).abs() <= 1e-12);
            prop_assert!((moved.weights()[l] - r.weights()[geo.compose(l, s)]).abs() <= 1e-12);
        }
    }

    #[test]
    fn em_step_is_equivariant_and_fixes_the_mean(
        seed in any::<u64>(), d in 2usize..20, n in 1usize..30, s in 0usize..20, sigma in 0.3..2.0f64,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let geo = Geometry::Line { d };
        let truth = random_signal(&mut rng, geo);
        let data = sample(&truth, n, sigma, seed).unwrap();
        let x = random_signal(&mut rng, geo);
        let s = s % d;
        let out = em_step(&x, &data).unwrap();
        let moved = em_step(&x.shifted(s), &shifted_data(&data, s)).unwrap();
        prop_assert!(moved.sub(&out.shifted(s)).unwrap().norm() <= 1e-10 * (1.0 + out.norm()));
        let mean_gap = mean_project(&out).sub(&mean_project(&data.sample_mean())).unwrap().norm();
        prop_assert!(mean_gap <= 1e-12 * (1.0 + truth.norm()));
    }

    #[test]
    fn likelihood_is_shift_invariant(seed in any::<u64>(), d in 1usize..16, s in 0usize..16) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let geo = Geometry::Line { d };
        let truth = random_signal(&mut rng, geo);
        let data = sample(&truth, 20, 0.9, seed).unwrap();
        let x = random_signal(&mut rng, geo);
        let a = log_likelihood(&x, &data).unwrap();
        let b = log_likelihood(&x.shifted(s % d), &data).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn full_batch_gradient_is_the_em_residual(seed in any::<u64>(), d in 2usize..16, n in 1usize..40) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let geo = Geometry::Line { d };
        let truth = random_signal(&mut rng, geo);
        let data = sample(&truth, n, 0.8, seed).unwrap();
        let x = random_signal(&mut rng, geo);
        let engine = EmEngine::new(&data, CorrelationPath::Auto);
        let all: Vec<usize> = (0..n).collect();
        let g = sgd_gradient(&x, &engine, &all, 0.8).unwrap();
        let resid = x.sub(&em_step(&x, &data).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&g, resid.values()) <= 1e-12 * (1.0 + x.norm() + truth.norm()));
    }
}
