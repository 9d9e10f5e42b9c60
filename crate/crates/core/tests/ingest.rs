use nalgebra::DMatrix;
use num_complex::Complex64;
use pulsesep::ingest::{
    range_gate, read_series_csv, remove_dc, whiten, write_series_csv, GateSpec, RangeProfileSeries, TENSOR_MAGIC,
};
use pulsesep::{Error, SlowTimeSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cnormal(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) / 2f64.sqrt()
}

fn random_series(channels: usize, len: usize, seed: u64) -> SlowTimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SlowTimeSeries::new(DMatrix::from_fn(channels, len, |_, _| cnormal(&mut rng)), 200.0).unwrap()
}

fn random_tensor(seed: u64) -> RangeProfileSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, b, t) = (3, 5, 40);
    let samples = (0..c * b * t).map(|_| cnormal(&mut rng)).collect();
    RangeProfileSeries::new(c, b, t, samples, 1.0, 0.05, 100.0).unwrap()
}

fn covariance(x: &SlowTimeSeries) -> DMatrix<Complex64> {
    (&x.samples * x.samples.adjoint()) / Complex64::new(x.len() as f64, 0.0)
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn single_bin_gate_scales_by_bin_width() {
    let data = random_tensor(1);
    // bin 2 sits at 1.10 m
    let x = range_gate(&data, &GateSpec::new(1.09, 1.11).unwrap()).unwrap();
    for c in 0..3 {
        for t in 0..40 {
            assert!((x.samples[(c, t)] - data.get(c, 2, t) * 0.05).norm() < 1e-15);
        }
    }
    assert_eq!(x.rate, 100.0);
}

#[test]
fn full_gate_is_the_discrete_integral() {
    let data = random_tensor(2);
    let x = range_gate(&data, &GateSpec::new(0.0, 10.0).unwrap()).unwrap();
    for c in 0..3 {
        for t in 0..40 {
            let sum: Complex64 = (0..5).map(|b| data.get(c, b, t)).sum();
            assert!((x.samples[(c, t)] - sum * 0.05).norm() < 1e-13);
        }
    }
}

#[test]
fn gate_excludes_clutter() {
    let t = 2000;
    let tone = |f: f64, a: f64| (0..t).map(|i| Complex64::from_polar(a, 2.0 * std::f64::consts::PI * f * i as f64 / t as f64)).collect::<Vec<_>>();
    let target = tone(7.0, 1.0);
    let clutter = tone(31.0, 10.0);
    let mut data = RangeProfileSeries::zeros(1, 4, t, 1.0, 0.1, 200.0).unwrap();
    for i in 0..t {
        data.set(0, 1, i, target[i]);
        data.set(0, 3, i, clutter[i]);
    }
    let x = remove_dc(&range_gate(&data, &GateSpec::parse("1.05:1.15").unwrap()).unwrap()).unwrap();
    let out = x.channel(0);
    let dot: Complex64 = out.iter().zip(&clutter).map(|(a, b)| a * b.conj()).sum();
    let na = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nb = clutter.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    assert!(dot.norm() / (na * nb) < 0.01);
}

#[test]
fn gate_errors() {
    let data = random_tensor(4);
    assert!(matches!(range_gate(&data, &GateSpec::new(5.0, 6.0).unwrap()), Err(Error::Gate(_))));
    assert!(GateSpec::new(2.0, 1.0).is_err());
    assert!(GateSpec::parse("1.2").is_err());
    assert!(GateSpec::parse("a:b").is_err());
    assert_eq!(GateSpec::parse(" 1.2 : 1.3 ").unwrap(), GateSpec { r1: 1.2, r2: 1.3 });
}

#[test]
fn binary_round_trip_and_format_errors() {
    let data = random_tensor(5);
    let mut bytes = Vec::new();
    data.write_binary(&mut bytes).unwrap();
    assert_eq!(&bytes[..8], &TENSOR_MAGIC);
    assert_eq!(RangeProfileSeries::read_binary(bytes.as_slice()).unwrap(), data);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(RangeProfileSeries::read_binary(bad.as_slice()), Err(Error::Format { offset: 0, .. })));

    let cut = &bytes[..bytes.len() - 5];
    match RangeProfileSeries::read_binary(cut) {
        Err(Error::Format { offset, .. }) => assert!(offset > 56),
        other => panic!("expected a format error, got {other:?}"),
    }

    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(RangeProfileSeries::read_binary(long.as_slice()), Err(Error::Format { .. })));
}

#[test]
fn csv_round_trip() {
    let data = random_tensor(6);
    let mut text = Vec::new();
    data.write_csv(&mut text).unwrap();
    let back = RangeProfileSeries::read_csv(text.as_slice()).unwrap();
    assert_eq!(back.channels, 3);
    assert_eq!(back.range_bins, 5);
    assert_eq!(back.time_samples, 40);
    assert!((back.rate - 100.0).abs() < 1e-9);
    for (a, b) in back.samples.iter().zip(&data.samples) {
        assert_eq!(a, b);
    }
    assert!(matches!(RangeProfileSeries::read_csv("time,range,a\n".as_bytes()), Err(Error::Format { .. })));
}

#[test]
fn series_csv_round_trip() {
    let x = random_series(2, 30, 7);
    let mut text = Vec::new();
    write_series_csv(&x, &mut text).unwrap();
    let back = read_series_csv(text.as_slice()).unwrap();
    assert_eq!(back.samples, x.samples);
    assert!((back.rate - x.rate).abs() < 1e-9);
}

#[test]
fn constant_series_has_no_ac_part() {
    let x = SlowTimeSeries::new(DMatrix::from_element(2, 10, Complex64::new(3.0, -1.0)), 1.0).unwrap();
    assert!(max_abs(&remove_dc(&x).unwrap().samples) < 1e-15);
}

#[test]
fn dc_removal_is_idempotent() {
    let once = remove_dc(&random_series(3, 100, 8)).unwrap();
    let twice = remove_dc(&once).unwrap();
    assert!(max_abs(&(&twice.samples - &once.samples)) < 1e-15);
}

#[test]
fn dc_removal_small_angle() {
    let phi: Vec<f64> = (0..500).map(|i| 1e-3 * (i as f64 * 0.05).sin() + 2e-4).collect();
    let s: Vec<Complex64> = phi.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    let out = remove_dc(&SlowTimeSeries::from_channel(&s, 200.0).unwrap()).unwrap().channel(0);
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    for (z, p) in out.iter().zip(&phi) {
        // first-order term is exact up to O(phi^2)
        assert!((z - Complex64::new(0.0, p - mean)).norm() < 2e-6);
    }
}

#[test]
fn white_input_stays_white() {
    let x = random_series(3, 20000, 9);
    let w = whiten(&x, None).unwrap();
    assert_eq!(w.dimension(), 3);
    let id = DMatrix::<Complex64>::identity(3, 3);
    assert!(max_abs(&(covariance(&w.z) - &id)) < 1e-8);
    // V is close to unitary for unit-variance input
    assert!(max_abs(&(&w.transform * w.transform.adjoint() - &id)) < 0.05);
}

#[test]
fn mixture_is_whitened() {
    let s = random_series(3, 500, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = DMatrix::from_fn(5, 3, |_, _| cnormal(&mut rng));
    let x = s.transform(&a).unwrap();
    let w = whiten(&x, None).unwrap();
    assert_eq!(w.dimension(), 3);
    assert!(max_abs(&(covariance(&w.z) - DMatrix::identity(3, 3))) < 1e-8);
    assert!(w.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
}

#[test]
fn rank_deficient_input() {
    let base = random_series(1, 200, 12).channel(0);
    let samples = DMatrix::from_fn(2, 200, |c, t| base[t] * (c as f64 + 1.0));
    let x = SlowTimeSeries::new(samples, 1.0).unwrap();
    assert_eq!(whiten(&x, None).unwrap().dimension(), 1);
    assert!(matches!(whiten(&x, Some(2)), Err(Error::Numerical(_))));
}
