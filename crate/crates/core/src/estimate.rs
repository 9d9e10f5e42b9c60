//! Displacement recovery, pulse transit time / pulse wave velocity
//! extraction and scale-, sign- and permutation-aware error metrics.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelsep::ImpulseResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementMethod {
    /// Unwrapped phase divided by 2k.
    Angle,
    /// Projection on the principal axis of the I-Q trajectory.
    #[default]
    PrincipalAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementEstimate {
    /// Meters, zero mean.
    pub series: Vec<f64>,
    pub method: DisplacementMethod,
}

fn subtract_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Angle of the principal axis of the I-Q trajectory around its mean.
pub fn principal_axis_angle(s: &[Complex64]) -> f64 {
    let mean = s.iter().sum::<Complex64>() / s.len().max(1) as f64;
    let second: Complex64 = s.iter().map(|&z| (z - mean) * (z - mean)).sum();
    0.5 * second.arg()
}

pub fn extract_displacement(s: &[Complex64], wavenumber: f64, method: DisplacementMethod) -> Result<DisplacementEstimate> {
    if s.is_empty() || s.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Parameter("cannot extract a displacement from a zero-power series".into()));
    }
    if !(wavenumber > 0.0) {
        return Err(Error::Parameter(format!("wavenumber must be positive, got {wavenumber}")));
    }
    let scale = 1.0 / (2.0 * wavenumber);
    let mut series: Vec<f64> = match method {
        DisplacementMethod::Angle => {
            let mut out = Vec::with_capacity(s.len());
            let mut prev = s[0].arg();
            out.push(prev);
            for z in &s[1..] {
                let raw = z.arg();
                // nearest branch to the previous sample
                let next = raw + 2.0 * PI * ((prev - raw) / (2.0 * PI)).round();
                out.push(next);
                prev = next;
            }
            out.into_iter().map(|p| p * scale).collect()
        }
        DisplacementMethod::PrincipalAxis => {
            let rot = Complex64::from_polar(1.0, -principal_axis_angle(s));
            s.iter().map(|&z| (z * rot).re * scale).collect()
        }
    };
    subtract_mean(&mut series);
    Ok(DisplacementEstimate { series, method })
}

/// Scale-optimal RMS error: sqrt(min_eta mean |d - eta d_hat|^2).
/// Returns (epsilon, eta).
pub fn rms_error(truth: &[f64], estimate: &[f64]) -> Result<(f64, f64)> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::Parameter(format!(
            "series lengths differ or are empty: {} vs {}",
            truth.len(),
            estimate.len()
        )));
    }
    let n = truth.len() as f64;
    let dd: f64 = estimate.iter().map(|v| v * v).sum();
    let eta = if dd > 0.0 { truth.iter().zip(estimate).map(|(a, b)| a * b).sum::<f64>() / dd } else { 0.0 };
    let mse = truth.iter().zip(estimate).map(|(a, b)| (a - eta * b).powi(2)).sum::<f64>() / n;
    Ok((mse.sqrt(), eta))
}

/// Assignment `a` minimizing sum_i rms_error(truth[i], estimates[a[i]]),
/// searched exhaustively.
pub fn match_permutation(truth: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = truth.len();
    if n != estimates.len() {
        return Err(Error::Parameter(format!("{n} references but {} estimates", estimates.len())));
    }
    if n > 8 {
        return Err(Error::Parameter("exhaustive matching supports at most 8 signals".into()));
    }
    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            cost[i][j] = rms_error(&truth[i], &estimates[j])?.0;
        }
    }
    let mut best = (f64::INFINITY, (0..n).collect::<Vec<_>>());
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &cost, &mut best);
    Ok(best.1)
}

fn permute(perm: &mut Vec<usize>, at: usize, cost: &[Vec<f64>], best: &mut (f64, Vec<usize>)) {
    if at == perm.len() {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if total < best.0 {
            *best = (total, perm.clone());
        }
        return;
    }
    for i in at..perm.len() {
        perm.swap(at, i);
        permute(perm, at + 1, cost, best);
        perm.swap(at, i);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PttResult {
    /// Pulse transit time, seconds.
    pub ptt: f64,
    pub peak_lag_bin: usize,
    /// |g| at the peak bin.
    pub peak_magnitude: f64,
    /// (lag, |g|) of other positive-lag local maxima above 25% of the main peak.
    pub secondary_peaks: Vec<(f64, f64)>,
    /// m/s, when a distance was supplied.
    pub pwv: Option<f64>,
}

/// Relative height above which other local maxima are reported.
pub const SECONDARY_PEAK_RATIO: f64 = 0.25;

/// Strongest local maximum of |g|^2 within `(0, window]`, refined by a
/// parabola through log|g|^2.
pub fn estimate_ptt(g: &ImpulseResponse, window: f64) -> Result<PttResult> {
    let n = g.values.len();
    if n == 0 {
        return Err(Error::Parameter("empty impulse response".into()));
    }
    let power: Vec<f64> = g.values.iter().map(|z| z.norm_sqr()).collect();
    let is_peak = |i: usize| {
        let left = i == 0 || power[i] >= power[i - 1];
        let right = i + 1 == n || power[i] > power[i + 1];
        left && right && power[i] > 0.0
    };
    let in_window: Vec<usize> = (0..n).filter(|&i| g.lags[i] > 0.0 && g.lags[i] <= window).collect();
    let candidates: Vec<usize> = in_window.iter().copied().filter(|&i| is_peak(i)).collect();
    if candidates.is_empty() {
        return Err(Error::Estimation("impulse response has no positive-lag local maximum".into()));
    }
    let main = candidates.iter().copied().fold(candidates[0], |best, i| if power[i] > power[best] { i } else { best });
    let mut ptt = g.lags[main];
    if main > 0 && main + 1 < n && power[main - 1] > 0.0 && power[main + 1] > 0.0 {
        let (l, c, r) = (power[main - 1].ln(), power[main].ln(), power[main + 1].ln());
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            let shift = 0.5 * (l - r) / denom;
            if shift.abs() <= 0.5 {
                ptt += shift * g.lag_step();
            }
        }
    }
    let secondary_peaks = candidates
        .iter()
        .filter(|&&i| i != main && power[i] > SECONDARY_PEAK_RATIO * power[main])
        .map(|&i| (g.lags[i], power[i].sqrt()))
        .collect();
    Ok(PttResult { ptt, peak_lag_bin: main, peak_magnitude: power[main].sqrt(), secondary_peaks, pwv: None })
}

/// distance / ptt
pub fn pwv(ptt: f64, distance: f64) -> Result<f64> {
    if !(ptt > 0.0) || !(distance > 0.0) {
        return Err(Error::Parameter(format!("PTT ({ptt}) and distance ({distance}) must be positive")));
    }
    Ok(distance / ptt)
}
