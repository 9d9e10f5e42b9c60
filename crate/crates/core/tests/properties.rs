use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use pulsesep::beamforming::{mvdr_weight, CorrelationMatrix, ModeVector};
use pulsesep::estimate::{estimate_ptt, extract_displacement, rms_error, DisplacementMethod};
use pulsesep::ga::{self, mutate, GaConfig};
use pulsesep::jade::joint_diagonalize_matrices;
use pulsesep::linalg::unitarity_defect;
use pulsesep::modelsep::{
    causality, concentration, f4, flatness_lambda2, impulse_response, Objective, ObjectiveConfig, ImpulseResponse,
    UnmixingMatrix,
};
use pulsesep::scenario::{phase_modulate, simulate, ArrayScenario};
use pulsesep::ingest::remove_dc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cnormal(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn reals(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| Complex64::new(a, b)), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mvdr_is_distortionless(seed in any::<u64>(), m in 2usize..10, loading in 0.0f64..1e-2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snapshots = m + rng.random_range(0..3 * m);
        let b = DMatrix::from_fn(m, snapshots, |_, _| cnormal(&mut rng));
        let r = CorrelationMatrix { r: &b * b.adjoint(), sample_count: snapshots };
        let mode = ModeVector::new(DVector::from_fn(m, |_, _| cnormal(&mut rng))).unwrap();
        let w = mvdr_weight(&r, &mode, loading).unwrap();
        prop_assert!((w.dotc(&mode.a) - 1.0).norm() < 1e-10);
    }

    #[test]
    fn angle_round_trip(d in prop::collection::vec(-1.0f64..1.0, 2..200), frac in 0.0f64..=1.0) {
        let s = ArrayScenario::default();
        let amp = frac * s.wavelength() / 8.0;
        let d: Vec<f64> = d.iter().map(|v| v * amp).collect();
        let est = extract_displacement(&phase_modulate(&d, s.wavenumber()).unwrap(), s.wavenumber(), DisplacementMethod::Angle);
        // an all-zero phase still has unit power
        let est = est.unwrap().series;
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        for (a, b) in est.iter().zip(&d) {
            prop_assert!((a - (b - mean)).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_diagonalization_is_unitary_and_monotone(seed in any::<u64>(), n in 2usize..6, count in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats: Vec<DMatrix<Complex64>> = (0..count)
            .map(|_| {
                let b = DMatrix::from_fn(n, n, |_, _| cnormal(&mut rng));
                &b + b.adjoint()
            })
            .collect();
        let r = joint_diagonalize_matrices(&mats).unwrap();
        prop_assert!(unitarity_defect(&r.u) < 1e-10);
        for p in r.objective_trace.windows(2) {
            prop_assert!(p[1] >= p[0] * (1.0 - 1e-12));
        }
    }

    #[test]
    fn shifted_copies_deconvolve_to_a_delta(seed in any::<u64>(), shift in 1usize..90, len in 200usize..600, gain in 0.1f64..10.0) {
        let di = reals(len, seed);
        let dj: Vec<f64> = (0..len).map(|t| gain * di[(t + len - shift) % len]).collect();
        let g = impulse_response(&di, &dj, 200.0, &ObjectiveConfig::default()).unwrap();
        let p = g.power();
        let peak = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        prop_assert!((g.lags[peak] - shift as f64 / 200.0).abs() <= g.lag_step() + 1e-12);
        let side = p.iter().enumerate().filter(|(i, _)| i.abs_diff(peak) >= 8).map(|(_, v)| *v).fold(0.0, f64::max);
        prop_assert!(side < 0.1 * p[peak]);
    }

    #[test]
    fn swapped_pair_inverts_causality(seed in any::<u64>(), shift in 1usize..90) {
        let di = reals(400, seed);
        let dj: Vec<f64> = (0..400).map(|t| di[(t + 400 - shift) % 400]).collect();
        let config = ObjectiveConfig { causal_guard: 0.0, ..ObjectiveConfig::default() };
        let a = causality(&impulse_response(&di, &dj, 200.0, &config).unwrap(), 0.0);
        let b = causality(&impulse_response(&dj, &di, 200.0, &config).unwrap(), 0.0);
        prop_assert!((a * b - 1.0).abs() < 1e-6);
    }

    #[test]
    fn concentration_law(k in 1usize..=10, v in 0.01f64..100.0, offset in 0usize..10) {
        let mut values = vec![Complex64::default(); 41];
        for i in 0..k {
            values[offset + 2 * i] = Complex64::from_polar(v, i as f64);
        }
        let g = ImpulseResponse::on_grid(1.0, values).unwrap();
        let c = concentration(&g).unwrap();
        prop_assert!((c - 1.0 / k as f64).abs() < 1e-12);
        prop_assert!(c <= 1.0 + 1e-15);
    }

    #[test]
    fn orthogonal_patterns_hit_the_cap(f1 in 0usize..12, df in 1usize..12, gamma in 1.0f64..50.0, p1 in 0.0f64..6.3, p2 in 0.0f64..6.3) {
        let m = 12;
        let f2 = (f1 + df) % m;
        let row = |f: usize, p: f64| (0..m).map(move |i| Complex64::from_polar(1.0, std::f64::consts::TAU * (f * i) as f64 / m as f64 + p));
        let w = DMatrix::from_fn(2, m, |r, c| if r == 0 { row(f1, p1).nth(c).unwrap() } else { row(f2, p2).nth(c).unwrap() });
        prop_assert_eq!(f4(&UnmixingMatrix::new(w).unwrap(), gamma, 1).unwrap(), gamma);
    }

    #[test]
    fn flatness_ordering(s in complex_vec(32), dt in 0.001f64..1.0) {
        let (l1, l2) = flatness_lambda2(&s, dt).unwrap();
        prop_assert!(l1 >= l2 && l2 >= 0.0);
    }

    #[test]
    fn closed_form_scale_is_optimal(seed in any::<u64>(), len in 10usize..100) {
        let d = reals(len, seed);
        let e = reals(len, seed.wrapping_add(1));
        let (eps, eta) = rms_error(&d, &e).unwrap();
        let n = len as f64;
        let cost = |h: f64| (d.iter().zip(&e).map(|(a, b)| (a - h * b).powi(2)).sum::<f64>() / n).sqrt();
        let grid = (0..=200_000).map(|i| cost(-10.0 + i as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
        prop_assert!(eps <= grid + 1e-12);
        prop_assert!(grid - eps < 1e-6);
        prop_assert!((cost(eta) - eps).abs() < 1e-12);
    }

    #[test]
    fn rms_error_ignores_estimate_scale(seed in any::<u64>(), c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
        let d = reals(50, seed);
        let e = reals(50, seed.wrapping_add(7));
        let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
        let (a, _) = rms_error(&d, &e).unwrap();
        let (b, _) = rms_error(&d, &scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.max(1e-300));
    }

    #[test]
    fn ptt_ignores_response_scale(center in 0.05f64..0.45, re in -5.0f64..5.0, im in -5.0f64..5.0) {
        prop_assume!(re.hypot(im) > 1e-3);
        let values = (0..=1000)
            .map(|i| {
                let t = (i as f64 - 500.0) * 0.001;
                Complex64::new((-(t - center).powi(2) / 1e-4).exp() + 0.5 * (-(t + 0.1).powi(2) / 1e-4).exp(), 0.0)
            })
            .collect::<Vec<_>>();
        let g = ImpulseResponse::on_grid(0.001, values.clone()).unwrap();
        let scaled = ImpulseResponse::on_grid(0.001, values.iter().map(|z| z * Complex64::new(re, im)).collect()).unwrap();
        let a = estimate_ptt(&g, 0.5).unwrap();
        let b = estimate_ptt(&scaled, 0.5).unwrap();
        prop_assert_eq!(a.peak_lag_bin, b.peak_lag_bin);
        prop_assert!((a.ptt - b.ptt).abs() < 1e-9);
        prop_assert!((a.ptt - center).abs() < 1e-6);
    }

    #[test]
    fn mutation_keeps_rows_unit(seed in any::<u64>(), rate in 0.0f64..=1.0, scale in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = UnmixingMatrix::new(DMatrix::from_fn(3, 6, |_, _| cnormal(&mut rng))).unwrap();
        let config = GaConfig { mutation_rate: rate, mutation_scale: scale, ..GaConfig::default() };
        let m = mutate(&w, &config, &mut rng);
        for r in m.matrix().row_iter() {
            prop_assert!((r.norm() - 1.0).abs() < 1e-10);
        }
    }
}

fn short_objective() -> Objective {
    let mut s = ArrayScenario::default();
    s.duration = 3.0;
    let sim = simulate(&s, 11).unwrap();
    Objective::new(remove_dc(&sim.received).unwrap(), sim.wavenumber, ObjectiveConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn objective_ignores_row_phases(seed in any::<u64>(), p0 in 0.0f64..6.3, p1 in 0.0f64..6.3) {
        let obj = short_objective();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = UnmixingMatrix::new(DMatrix::from_fn(2, 12, |_, _| cnormal(&mut rng))).unwrap();
        let phases = [Complex64::from_polar(1.0, p0), Complex64::from_polar(1.0, p1)];
        let rotated = UnmixingMatrix::new(DMatrix::from_fn(2, 12, |r, c| w.matrix()[(r, c)] * phases[r])).unwrap();
        let (a, b) = (obj.fitness(&w), obj.fitness(&rotated));
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300));
    }

    #[test]
    fn search_is_deterministic_and_elitist(seed in any::<u64>()) {
        let obj = short_objective();
        let config = GaConfig { population: 8, generations: 4, seed, ..GaConfig::default() };
        let a = ga::run(&obj, 2, &config).unwrap();
        let b = ga::run(&obj, 2, &config).unwrap();
        prop_assert_eq!(&a.best.w, &b.best.w);
        prop_assert_eq!(a.fitness_trace(), b.fitness_trace());
        for p in a.fitness_trace().windows(2) {
            prop_assert!(p[1] >= p[0]);
        }
    }
}
