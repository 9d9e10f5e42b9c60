//! Simulated array-radar measurement of pulse-wave skin displacements.
//!
//! Each body part ("target") moves by a scaled, delayed copy of a common
//! template waveform. Its echo is phase modulated by the displacement and
//! reaches the uniform linear array through a far-field channel:
//!
//! ```text
//! x(t) = A s(t) + n(t),    s_j(t) = exp(j 2k d_j(t))
//! a_ij = sqrt(P_j) exp(j 2k l_j) exp(j k u_i sin(theta_j))
//! ```

use std::f64::consts::PI;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::SlowTimeSeries;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Where target angles and element coordinates are measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngleReference {
    /// Origin at the array center.
    #[default]
    ArrayCenter,
    /// Origin at the first element (end of the array baseline).
    FirstElement,
}

/// Template displacement waveform d0(t), spanning [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// Periodic triangle: rises from -1 to +1 over `rise_fraction` of each
    /// beat, then falls back. `interval_jitter` is the relative standard
    /// deviation of the beat-to-beat interval (0 gives an exactly periodic
    /// wave); the beat sequence is drawn from `beat_seed` so every target
    /// shares the same template.
    Triangular {
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default = "default_rise_fraction")]
        rise_fraction: f64,
        #[serde(default)]
        interval_jitter: f64,
        #[serde(default)]
        beat_seed: u64,
    },
    /// Arbitrary template sampled at `rate`, linearly interpolated and
    /// repeated periodically.
    Custom { samples: Vec<f64>, rate: f64 },
}

fn default_period() -> f64 {
    1.0
}

fn default_rise_fraction() -> f64 {
    0.3
}

impl Default for Waveform {
    fn default() -> Self {
        Waveform::Triangular {
            period: default_period(),
            rise_fraction: default_rise_fraction(),
            interval_jitter: 0.0,
            beat_seed: 0,
        }
    }
}

impl Waveform {
    fn validate(&self) -> Result<()> {
        match self {
            Waveform::Triangular { period, rise_fraction, interval_jitter, .. } => {
                if !(*period > 0.0) {
                    return Err(Error::Parameter(format!("template period must be positive, got {period}")));
                }
                if !(*rise_fraction > 0.0 && *rise_fraction < 1.0) {
                    return Err(Error::Parameter(format!("rise fraction must lie in (0, 1), got {rise_fraction}")));
                }
                if !(*interval_jitter >= 0.0 && *interval_jitter < 0.5) {
                    return Err(Error::Parameter(format!("interval jitter must lie in [0, 0.5), got {interval_jitter}")));
                }
            }
            Waveform::Custom { samples, rate } => {
                if samples.len() < 2 || !(*rate > 0.0) {
                    return Err(Error::Parameter("custom waveform needs >= 2 samples and a positive rate".into()));
                }
                if samples.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parameter("custom waveform contains non-finite samples".into()));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the template at the given times.
    fn evaluate(&self, times: &[f64]) -> Vec<f64> {
        match self {
            Waveform::Triangular { period, rise_fraction, interval_jitter, beat_seed } => {
                if *interval_jitter == 0.0 {
                    times
                        .iter()
                        .map(|&t| triangle_phase((t / period).rem_euclid(1.0), *rise_fraction))
                        .collect()
                } else {
                    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let beats = beat_onsets(lo, hi, *period, *interval_jitter, *beat_seed);
                    times
                        .iter()
                        .map(|&t| {
                            let idx = beats.partition_point(|&b| b <= t).saturating_sub(1);
                            let (b0, b1) = (beats[idx], beats[idx + 1]);
                            triangle_phase((t - b0) / (b1 - b0), *rise_fraction)
                        })
                        .collect()
                }
            }
            Waveform::Custom { samples, rate } => {
                let n = samples.len();
                let span = n as f64 / rate;
                times
                    .iter()
                    .map(|&t| {
                        let pos = t.rem_euclid(span) * rate;
                        let i0 = (pos.floor() as usize) % n;
                        let i1 = (i0 + 1) % n;
                        let frac = pos - pos.floor();
                        samples[i0] * (1.0 - frac) + samples[i1] * frac
                    })
                    .collect()
            }
        }
    }
}

fn triangle_phase(phase: f64, rise: f64) -> f64 {
    if phase < rise {
        -1.0 + 2.0 * phase / rise
    } else {
        1.0 - 2.0 * (phase - rise) / (1.0 - rise)
    }
}

/// Beat onset times covering `[lo, hi]`, anchored so that a beat starts at t = 0.
fn beat_onsets(lo: f64, hi: f64, period: f64, jitter: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interval = |rng: &mut ChaCha8Rng| {
        let z: f64 = StandardNormal.sample(rng);
        period * (1.0 + jitter * z).max(0.5)
    };
    let mut forward = vec![0.0];
    while *forward.last().unwrap() <= hi + period {
        let next = forward.last().unwrap() + interval(&mut rng);
        forward.push(next);
    }
    let mut backward = Vec::new();
    let mut t = 0.0;
    while t > lo - period {
        t -= interval(&mut rng);
        backward.push(t);
    }
    backward.reverse();
    backward.extend(forward);
    backward
}

/// One reflecting body part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    /// Along-track position relative to the angle reference, meters.
    pub position: f64,
    /// Echo power, dB relative to a unit-power echo.
    #[serde(default)]
    pub power_db: f64,
    /// Peak displacement, meters.
    #[serde(default = "default_amplitude")]
    pub displacement_amplitude: f64,
    /// Pulse arrival delay, seconds.
    #[serde(default)]
    pub delay: f64,
    #[serde(default)]
    pub waveform: Waveform,
}

fn default_amplitude() -> f64 {
    50e-6
}

impl TargetSpec {
    pub fn new(position: f64, power_db: f64, delay: f64) -> Self {
        Self {
            position,
            power_db,
            displacement_amplitude: default_amplitude(),
            delay,
            waveform: Waveform::default(),
        }
    }

    pub fn power_linear(&self) -> f64 {
        10f64.powf(self.power_db / 10.0)
    }
}

/// Geometry, carrier and signal parameters of a simulated measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayScenario {
    #[serde(default = "defaults::carrier")]
    pub carrier_frequency: f64,
    #[serde(default = "defaults::elements")]
    pub element_count: usize,
    /// Element spacing in wavelengths.
    #[serde(default = "defaults::spacing")]
    pub element_spacing: f64,
    /// Array-to-body distance, meters.
    #[serde(default = "defaults::standoff")]
    pub standoff: f64,
    pub targets: Vec<TargetSpec>,
    /// Per-element noise power in dB; `-inf` disables noise.
    #[serde(default = "defaults::noise")]
    pub noise_power_db: f64,
    /// Record length, seconds.
    #[serde(default = "defaults::duration")]
    pub duration: f64,
    #[serde(default = "defaults::rate")]
    pub slow_time_rate: f64,
    #[serde(default)]
    pub angle_reference: AngleReference,
}

mod defaults {
    pub fn carrier() -> f64 {
        79e9
    }
    pub fn elements() -> usize {
        12
    }
    pub fn spacing() -> f64 {
        0.5
    }
    pub fn standoff() -> f64 {
        1.25
    }
    pub fn noise() -> f64 {
        -45.0
    }
    pub fn duration() -> f64 {
        20.0
    }
    pub fn rate() -> f64 {
        200.0
    }
}

impl Default for ArrayScenario {
    /// Two body parts at -0.5 m (0 dB) and 0.3 m (-3 dB), 300 ms apart.
    fn default() -> Self {
        Self::with_targets(vec![TargetSpec::new(-0.5, 0.0, 0.0), TargetSpec::new(0.3, -3.0, 0.3)])
    }
}

impl ArrayScenario {
    pub fn with_targets(targets: Vec<TargetSpec>) -> Self {
        Self {
            carrier_frequency: defaults::carrier(),
            element_count: defaults::elements(),
            element_spacing: defaults::spacing(),
            standoff: defaults::standoff(),
            targets,
            noise_power_db: defaults::noise(),
            duration: defaults::duration(),
            slow_time_rate: defaults::rate(),
            angle_reference: AngleReference::ArrayCenter,
        }
    }

    /// Second benchmark geometry: parts at -0.1 m and 0.3 m with equal power.
    pub fn close_targets() -> Self {
        Self::with_targets(vec![TargetSpec::new(-0.1, 0.0, 0.0), TargetSpec::new(0.3, 0.0, 0.3)])
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: ArrayScenario =
            toml::from_str(text).map_err(|e| Error::Configuration(format!("scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.slow_time_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count == 0 {
            return Err(Error::Configuration("array needs at least one element".into()));
        }
        if self.targets.len() > self.element_count {
            return Err(Error::Configuration(format!(
                "{} targets exceed {} array elements",
                self.targets.len(),
                self.element_count
            )));
        }
        if !(self.duration > 0.0) || !(self.slow_time_rate > 0.0) {
            return Err(Error::Parameter("duration and slow-time rate must be positive".into()));
        }
        if !(self.element_spacing > 0.0) || !(self.carrier_frequency > 0.0) || !(self.standoff > 0.0) {
            return Err(Error::Parameter("spacing, carrier and standoff must be positive".into()));
        }
        if self.noise_power_db.is_nan() {
            return Err(Error::Parameter("noise power is NaN".into()));
        }
        let lambda = self.wavelength();
        for (j, t) in self.targets.iter().enumerate() {
            if !t.power_db.is_finite() || !t.position.is_finite() || !t.delay.is_finite() {
                return Err(Error::Parameter(format!("target {j} has non-finite parameters")));
            }
            if !(t.displacement_amplitude >= 0.0) {
                return Err(Error::Parameter(format!("target {j} amplitude must be non-negative")));
            }
            t.waveform.validate()?;
            if 4.0 * PI * t.displacement_amplitude / lambda > PI / 4.0 {
                warn!("target {j}: displacement amplitude is not small against the wavelength");
            }
        }
        Ok(())
    }

    /// Element coordinates along the baseline, meters.
    pub fn element_positions(&self) -> Vec<f64> {
        let pitch = self.element_spacing * self.wavelength();
        let m = self.element_count as f64;
        (0..self.element_count)
            .map(|i| match self.angle_reference {
                AngleReference::ArrayCenter => (i as f64 - (m - 1.0) / 2.0) * pitch,
                AngleReference::FirstElement => i as f64 * pitch,
            })
            .collect()
    }

    /// Nadir angle of target `j` in radians.
    pub fn target_angle(&self, j: usize) -> f64 {
        self.targets[j].position.atan2(self.standoff)
    }

    /// Distance from the reference point to target `j`.
    pub fn target_range(&self, j: usize) -> f64 {
        self.standoff.hypot(self.targets[j].position)
    }
}

/// M x N channel matrix between array elements and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix(pub DMatrix<Complex64>);

impl MixingMatrix {
    pub fn elements(&self) -> usize {
        self.0.nrows()
    }

    pub fn targets(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        self.0.column(j).iter().copied().collect()
    }
}

/// Template waveform d_i(t) = amplitude * d0(t - delay) sampled on the slow-time grid.
pub fn synth_displacement(spec: &TargetSpec, rate: f64, duration: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0) || !(duration > 0.0) {
        return Err(Error::Parameter(format!("rate {rate} and duration {duration} must be positive")));
    }
    let n = (duration * rate).round() as usize;
    if n < 2 {
        return Err(Error::Parameter(format!("duration x rate gives {n} samples, need at least 2")));
    }
    spec.waveform.validate()?;
    let times: Vec<f64> = (0..n).map(|i| i as f64 / rate - spec.delay).collect();
    Ok(spec
        .waveform
        .evaluate(&times)
        .into_iter()
        .map(|v| v * spec.displacement_amplitude)
        .collect())
}

/// Unit-modulus echo exp(j 2k d(t)).
pub fn phase_modulate(displacement: &[f64], wavenumber: f64) -> Result<Vec<Complex64>> {
    if displacement.iter().any(|d| !d.is_finite()) {
        return Err(Error::Parameter("displacement contains non-finite values".into()));
    }
    Ok(displacement.iter().map(|&d| Complex64::from_polar(1.0, 2.0 * wavenumber * d)).collect())
}

/// Far-field channel matrix with the per-column constant set to one and the
/// column magnitude set by the target power.
pub fn channel_matrix(scenario: &ArrayScenario) -> Result<MixingMatrix> {
    scenario.validate()?;
    let k = scenario.wavenumber();
    let u = scenario.element_positions();
    let reference = match scenario.angle_reference {
        AngleReference::ArrayCenter => 0.0,
        AngleReference::FirstElement => u[0],
    };
    let m = scenario.element_count;
    let n = scenario.targets.len();
    let mut a = DMatrix::zeros(m, n);
    for (j, target) in scenario.targets.iter().enumerate() {
        let x = target.position - reference;
        let theta = x.atan2(scenario.standoff);
        let range = scenario.standoff.hypot(x);
        let gain = target.power_linear().sqrt();
        for (i, &ui) in u.iter().enumerate() {
            let phase = 2.0 * k * range + k * (ui - reference) * theta.sin();
            a[(i, j)] = Complex64::from_polar(gain, phase);
        }
    }
    Ok(MixingMatrix(a))
}

/// Everything produced by one simulated measurement.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Received array signal x(t).
    pub received: SlowTimeSeries,
    /// Unit-modulus echoes s(t), one row per target.
    pub echoes: SlowTimeSeries,
    pub mixing: MixingMatrix,
    /// Ground-truth displacements, meters, one vector per target.
    pub displacements: Vec<Vec<f64>>,
    pub wavenumber: f64,
}

/// Draws x(t) = A s(t) + n(t); deterministic for a given seed.
pub fn simulate(scenario: &ArrayScenario, seed: u64) -> Result<Simulation> {
    let mixing = channel_matrix(scenario)?;
    let k = scenario.wavenumber();
    let rate = scenario.slow_time_rate;
    let len = scenario.sample_count();
    let n = scenario.targets.len();

    let displacements = scenario
        .targets
        .iter()
        .map(|t| synth_displacement(t, rate, scenario.duration))
        .collect::<Result<Vec<_>>>()?;
    let mut echoes = DMatrix::zeros(n, len);
    for (j, d) in displacements.iter().enumerate() {
        for (t, s) in phase_modulate(d, k)?.into_iter().enumerate() {
            echoes[(j, t)] = s;
        }
    }

    let mut x = &mixing.0 * &echoes;
    if scenario.noise_power_db.is_finite() {
        let sigma = (10f64.powf(scenario.noise_power_db / 10.0) / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // column-major fill keeps the draw order independent of M
        for t in 0..len {
            for i in 0..scenario.element_count {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                x[(i, t)] += Complex64::new(sigma * re, sigma * im);
            }
        }
    }

    Ok(Simulation {
        received: SlowTimeSeries::new(x, rate)?,
        echoes: SlowTimeSeries::new(echoes, rate)?,
        mixing,
        displacements,
        wavenumber: k,
    })
}
