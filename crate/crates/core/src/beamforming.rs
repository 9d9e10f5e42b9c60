//! Conventional adaptive-array baseline: sample correlation, Capon spatial
//! spectrum and MVDR weights.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, loaded_inverse};
use crate::series::SlowTimeSeries;

/// Default diagonal loading, relative to trace(R)/M.
pub const DEFAULT_LOADING: f64 = 1e-6;

/// Time-averaged x x^H.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub r: DMatrix<Complex64>,
    pub sample_count: usize,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.r.nrows()
    }
}

/// Array response toward one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector {
    pub a: DVector<Complex64>,
    pub angle: Option<f64>,
}

impl ModeVector {
    pub fn new(a: DVector<Complex64>) -> Result<Self> {
        if !(a.norm() > 0.0) {
            return Err(Error::Parameter("mode vector has zero norm".into()));
        }
        Ok(Self { a, angle: None })
    }

    /// Unit-modulus steering vector of an M-element ULA centered at the
    /// origin, spacing in wavelengths, angle in radians from broadside.
    pub fn steering(elements: usize, spacing: f64, angle: f64) -> Self {
        let center = (elements as f64 - 1.0) / 2.0;
        let a = DVector::from_fn(elements, |i, _| {
            Complex64::from_polar(1.0, 2.0 * PI * spacing * (i as f64 - center) * angle.sin())
        });
        Self { a, angle: Some(angle) }
    }
}

pub fn sample_correlation(x: &SlowTimeSeries) -> CorrelationMatrix {
    if x.len() < x.channels() {
        warn!("correlation from {} samples for {} channels is rank deficient", x.len(), x.channels());
    }
    let r = hermitian_part(&crate::ingest::covariance(x));
    CorrelationMatrix { r, sample_count: x.len() }
}

/// Capon power over an angle grid plus its local maxima.
#[derive(Debug, Clone, Serialize)]
pub struct CaponSpectrum {
    pub angles: Vec<f64>,
    pub power: Vec<f64>,
    /// (angle, power) of local maxima, strongest first.
    pub peaks: Vec<(f64, f64)>,
}

/// Default search grid: 0.1 degree steps over [-60, 60] degrees.
pub fn default_angle_grid() -> Vec<f64> {
    (0..=1200).map(|i| (-60.0 + 0.1 * i as f64).to_radians()).collect()
}

/// P(theta) = 1 / (a^H R^-1 a) for unit-modulus ULA steering vectors.
pub fn capon_spectrum(r: &CorrelationMatrix, spacing: f64, angles: &[f64], loading: f64) -> Result<CaponSpectrum> {
    let inv = loaded_inverse(&r.r, loading)?;
    let m = r.dim();
    let power: Vec<f64> = angles
        .iter()
        .map(|&theta| {
            let a = ModeVector::steering(m, spacing, theta).a;
            1.0 / a.dotc(&(&inv * &a)).re
        })
        .collect();
    if power.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::Numerical("Capon denominator is not positive".into()));
    }
    let mut peaks: Vec<(f64, f64)> = (0..power.len())
        .filter(|&i| {
            let left = i == 0 || power[i] > power[i - 1];
            let right = i + 1 == power.len() || power[i] >= power[i + 1];
            left && right
        })
        .map(|i| (angles[i], power[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(CaponSpectrum { angles: angles.to_vec(), power, peaks })
}

/// w = R^-1 a / (a^H R^-1 a)
pub fn mvdr_weight(r: &CorrelationMatrix, mode: &ModeVector, loading: f64) -> Result<DVector<Complex64>> {
    if !(mode.a.norm() > 0.0) {
        return Err(Error::Parameter("mode vector has zero norm".into()));
    }
    if mode.a.len() != r.dim() {
        return Err(Error::Parameter(format!("mode vector length {} != array size {}", mode.a.len(), r.dim())));
    }
    let inv = loaded_inverse(&r.r, loading)?;
    mvdr_from_inverse(&inv, &mode.a)
}

fn mvdr_from_inverse(inv: &DMatrix<Complex64>, a: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let ria = inv * a;
    let denom = a.dotc(&ria);
    if !(denom.norm() > 0.0) || !denom.re.is_finite() {
        return Err(Error::Numerical("a^H R^-1 a vanished".into()));
    }
    Ok(ria / denom)
}

/// Separation produced by a baseline method: `sources = unmixing * x`.
#[derive(Debug, Clone)]
pub struct Separation {
    pub unmixing: DMatrix<Complex64>,
    pub sources: SlowTimeSeries,
}

/// Stacks per-target MVDR weights as W = [w_1 ... w_N]^H and applies them.
pub fn mvdr_separate(x: &SlowTimeSeries, modes: &[ModeVector], loading: f64) -> Result<Separation> {
    if modes.is_empty() || modes.len() > x.channels() {
        return Err(Error::Parameter(format!("need 1..={} mode vectors, got {}", x.channels(), modes.len())));
    }
    let r = sample_correlation(x);
    let inv = loaded_inverse(&r.r, loading)?;
    let mut w = DMatrix::zeros(modes.len(), x.channels());
    for (j, mode) in modes.iter().enumerate() {
        if mode.a.len() != x.channels() || !(mode.a.norm() > 0.0) {
            return Err(Error::Parameter(format!("mode vector {j} is empty or has the wrong length")));
        }
        let wj = mvdr_from_inverse(&inv, &mode.a)?;
        w.set_row(j, &wj.adjoint());
    }
    let sources = x.transform(&w)?;
    Ok(Separation { unmixing: w, sources })
}
