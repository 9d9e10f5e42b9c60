//! Model-based separation objective.
//!
//! A candidate unmixing matrix W is scored by the product of four terms:
//!
//! * `F1`: flatness of every separated I-Q trajectory (small-displacement
//!   echoes trace a line segment), `min_i lambda2(i)^2`;
//! * `F2`: concentration (fourth moment) of every pairwise deconvolution
//!   impulse response `g_ij`;
//! * `F3`: causality of `g_ij`, the ratio of its strongest positive-lag
//!   power to its strongest negative-lag power;
//! * `F4`: orthogonality of the beam patterns of the weight rows, capped at
//!   `gamma` per pair.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{extract_displacement, DisplacementMethod};
use crate::linalg::normalize_rows;
use crate::series::SlowTimeSeries;

/// N x M complex unmixing matrix with unit-norm rows; `s_hat = W x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixingMatrix(DMatrix<Complex64>);

impl UnmixingMatrix {
    /// Normalizes every row; rejects zero rows.
    pub fn new(mut w: DMatrix<Complex64>) -> Result<Self> {
        if w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Parameter("unmixing matrix has non-finite entries".into()));
        }
        if !normalize_rows(&mut w) {
            return Err(Error::Parameter("unmixing matrix has a zero row".into()));
        }
        Ok(Self(w))
    }

    /// Wraps rows taken verbatim from other unmixing matrices.
    pub(crate) fn from_unit_rows(w: DMatrix<Complex64>) -> Self {
        Self(w)
    }

    /// All-ones matrix with normalized rows.
    pub fn ones(rows: usize, cols: usize) -> Self {
        let v = Complex64::new(1.0 / (cols as f64).sqrt(), 0.0);
        Self(DMatrix::from_element(rows, cols, v))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<Complex64> {
        self.0.row(i).iter().copied().collect()
    }
}

/// Complex amplitude against signed lag on a zero-centered uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub lags: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl ImpulseResponse {
    /// Builds a response on the grid `(i - half) * step`, `i = 0..values.len()`.
    pub fn on_grid(step: f64, values: Vec<Complex64>) -> Result<Self> {
        if values.len().is_multiple_of(2) || !(step > 0.0) {
            return Err(Error::Parameter("response grid needs an odd length and a positive step".into()));
        }
        let half = (values.len() / 2) as f64;
        let lags = (0..values.len()).map(|i| (i as f64 - half) * step).collect();
        Ok(Self { lags, values })
    }

    pub fn lag_step(&self) -> f64 {
        if self.lags.len() > 1 {
            self.lags[1] - self.lags[0]
        } else {
            1.0
        }
    }

    pub fn zero_index(&self) -> usize {
        self.lags.len() / 2
    }

    pub fn power(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Tunables of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// Cap on each beam-pattern orthogonality factor.
    pub gamma: f64,
    /// Tikhonov floor of the deconvolution, relative to max |D_i|^2.
    pub tikhonov: f64,
    /// Spectral zero-padding factor of the impulse response.
    pub oversampling: usize,
    /// Largest |lag| considered, seconds.
    pub lag_window: f64,
    /// Positive lags up to this value are left out of the causality
    /// numerator; the tau = 0 sample is always excluded.
    pub causal_guard: f64,
    /// DFT length of the beam pattern as a multiple of the element count.
    pub pattern_oversampling: usize,
    /// Deconvolve with a DFT over the record length; `false` zero-pads to
    /// twice the length for a linear deconvolution.
    pub circular: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            tikhonov: 1e-3,
            oversampling: 8,
            lag_window: 0.5,
            causal_guard: 0.02,
            pattern_oversampling: 4,
            circular: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.tikhonov > 0.0) || self.oversampling == 0 {
            return Err(Error::Parameter("gamma, tikhonov and oversampling must be positive".into()));
        }
        if !(self.lag_window > 0.0) || !(self.causal_guard >= 0.0) || self.causal_guard >= self.lag_window {
            return Err(Error::Parameter("need 0 <= causal_guard < lag_window".into()));
        }
        if self.pattern_oversampling == 0 {
            return Err(Error::Parameter("pattern oversampling must be positive".into()));
        }
        Ok(())
    }
}

/// Eigenvalue terms of the I-Q covariance: `lambda1` (total power integral)
/// and `lambda2 = |integral s^2 dt|`.
pub fn flatness_lambda2(s: &[Complex64], dt: f64) -> Result<(f64, f64)> {
    if s.len() < 2 {
        return Err(Error::Parameter("flatness needs at least two samples".into()));
    }
    let l1: f64 = s.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt;
    let l2 = (s.iter().map(|z| z * z).sum::<Complex64>() * dt).norm();
    Ok((l1, l2.min(l1)))
}

/// `min_i lambda2(i)^2` over the separated channels.
pub fn f1(separated: &SlowTimeSeries) -> Result<f64> {
    if separated.channels() == 0 {
        return Err(Error::Parameter("no separated channels".into()));
    }
    let dt = separated.dt();
    let mut best = f64::INFINITY;
    for i in 0..separated.channels() {
        let (_, l2) = flatness_lambda2(&separated.channel(i), dt)?;
        best = best.min(l2 * l2);
    }
    Ok(best)
}

/// Cached FFT plans for deconvolving records of one length.
#[derive(Clone)]
pub struct Deconvolver {
    len: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    rate: f64,
    tikhonov: f64,
    oversampling: usize,
    half_window: usize,
}

impl std::fmt::Debug for Deconvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Deconvolver")
            .field("len", &self.len)
            .field("fft_len", &self.fft_len)
            .field("oversampling", &self.oversampling)
            .finish()
    }
}

impl Deconvolver {
    pub fn new(len: usize, rate: f64, config: &ObjectiveConfig) -> Result<Self> {
        config.validate()?;
        if len < 2 || !(rate > 0.0) {
            return Err(Error::Parameter("deconvolution needs >= 2 samples and a positive rate".into()));
        }
        let fft_len = if config.circular { len } else { 2 * len };
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len * config.oversampling);
        let step = 1.0 / (rate * config.oversampling as f64);
        let max_half = (fft_len * config.oversampling - 1) / 2;
        let half_window = ((config.lag_window / step).round() as usize).min(max_half);
        Ok(Self {
            len,
            fft_len,
            forward,
            inverse,
            rate,
            tikhonov: config.tikhonov,
            oversampling: config.oversampling,
            half_window,
        })
    }

    pub fn lag_step(&self) -> f64 {
        1.0 / (self.rate * self.oversampling as f64)
    }

    /// g_ij: deconvolution of `dj` by `di`, normalized so that `dj = c di`
    /// yields exactly `c` at zero lag.
    pub fn impulse_response(&self, di: &[f64], dj: &[f64]) -> Result<ImpulseResponse> {
        if di.len() != self.len || dj.len() != self.len {
            return Err(Error::Parameter(format!(
                "deconvolver built for {} samples, got {} and {}",
                self.len,
                di.len(),
                dj.len()
            )));
        }
        if di.iter().all(|&v| v == 0.0) {
            return Err(Error::Parameter("reference displacement is identically zero".into()));
        }
        let l = self.fft_len;
        // both real inputs through one complex transform
        let mut packed = vec![Complex64::default(); l];
        for (t, (a, b)) in di.iter().zip(dj).enumerate() {
            packed[t] = Complex64::new(*a, *b);
        }
        self.forward.process(&mut packed);
        let spectrum = |k: usize| {
            let z = packed[k];
            let zc = packed[(l - k) % l].conj();
            ((z + zc) * 0.5, (z - zc) * Complex64::new(0.0, -0.5))
        };
        let mut max_power = 0.0f64;
        for k in 0..l {
            max_power = max_power.max(spectrum(k).0.norm_sqr());
        }
        let eps = self.tikhonov * max_power;

        let big = l * self.oversampling;
        let mut padded = vec![Complex64::default(); big];
        let mut identity_gain = 0.0;
        let half = l / 2;
        for k in 0..l {
            let (dik, djk) = spectrum(k);
            let p = dik.norm_sqr();
            let gk = djk * dik.conj() / (p + eps);
            identity_gain += p / (p + eps);
            if k < half || (k == half && l % 2 == 1) {
                padded[k] = gk;
            } else if k > half {
                padded[big - (l - k)] = gk;
            } else {
                // split the Nyquist bin symmetrically
                padded[half] = gk * 0.5;
                padded[big - half] = gk * 0.5;
            }
        }
        self.inverse.process(&mut padded);
        let norm = 1.0 / identity_gain;
        let w = self.half_window;
        let values: Vec<Complex64> =
            (0..=2 * w).map(|i| padded[(big + i - w) % big] * norm).collect();
        ImpulseResponse::on_grid(self.lag_step(), values)
    }
}

/// Stand-alone impulse response of `dj` deconvolved by `di`.
pub fn impulse_response(di: &[f64], dj: &[f64], rate: f64, config: &ObjectiveConfig) -> Result<ImpulseResponse> {
    if di.len() != dj.len() {
        return Err(Error::Parameter("displacements must have equal length".into()));
    }
    Deconvolver::new(di.len(), rate, config)?.impulse_response(di, dj)
}

/// Fourth-moment concentration of one response.
pub fn concentration(g: &ImpulseResponse) -> Result<f64> {
    let dtau = g.lag_step();
    let (mut s2, mut s4) = (0.0, 0.0);
    for z in &g.values {
        let p = z.norm_sqr();
        s2 += p;
        s4 += p * p;
    }
    if !(s2 > 0.0) {
        return Err(Error::Numerical("impulse response is identically zero".into()));
    }
    Ok(s4 * dtau / (s2 * dtau).powi(2))
}

/// Product over pairs of the fourth-moment concentration.
pub fn f2(responses: &[ImpulseResponse]) -> Result<f64> {
    responses.iter().map(concentration).product()
}

/// Causality ratio of one response.
pub fn causality(g: &ImpulseResponse, guard: f64) -> f64 {
    let mut pos = 0.0f64;
    let mut neg = 0.0f64;
    let mut global = 0.0f64;
    for (tau, z) in g.lags.iter().zip(&g.values) {
        let p = z.norm_sqr();
        global = global.max(p);
        if *tau > 0.0 && *tau > guard {
            pos = pos.max(p);
        } else if *tau < 0.0 {
            neg = neg.max(p);
        }
    }
    pos / neg.max(1e-9 * global).max(f64::MIN_POSITIVE)
}

/// Product over pairs of the causality ratio.
pub fn f3(responses: &[ImpulseResponse], guard: f64) -> f64 {
    responses.iter().map(|g| causality(g, guard)).product()
}

/// |DFT(w)|^2 over `oversampling * M` bins, scaled to unit Euclidean norm.
pub fn beam_pattern(w: &[Complex64], oversampling: usize) -> Vec<f64> {
    let n = w.len() * oversampling.max(1);
    pattern_with(&*FftPlanner::new().plan_fft_forward(n), w)
}

fn pattern_with(fft: &dyn Fft<f64>, w: &[Complex64]) -> Vec<f64> {
    let mut buf = vec![Complex64::default(); fft.len()];
    buf[..w.len()].copy_from_slice(w);
    fft.process(&mut buf);
    let mut u: Vec<f64> = buf.iter().map(|z| z.norm_sqr()).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        u.iter_mut().for_each(|v| *v /= norm);
    }
    u
}

/// Product over row pairs of min{1 / (u_i . u_j), gamma}.
pub fn f4(w: &UnmixingMatrix, gamma: f64, oversampling: usize) -> Result<f64> {
    let fft = FftPlanner::new().plan_fft_forward(w.cols() * oversampling.max(1));
    f4_with(&*fft, w, gamma)
}

fn f4_with(fft: &dyn Fft<f64>, w: &UnmixingMatrix, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let patterns: Vec<Vec<f64>> = (0..w.rows()).map(|i| pattern_with(fft, &w.row(i))).collect();
    let mut total = 1.0;
    for i in 0..patterns.len() {
        for j in i + 1..patterns.len() {
            let overlap: f64 = patterns[i].iter().zip(&patterns[j]).map(|(a, b)| a * b).sum();
            total *= if overlap > 0.0 { (1.0 / overlap).min(gamma) } else { gamma };
        }
    }
    Ok(total)
}

/// Every term of F(W) for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
    pub f_total: f64,
    /// g_ij for i < j in lexicographic pair order; empty when not requested.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub responses: Vec<ImpulseResponse>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
}

impl ObjectiveBreakdown {
    fn degenerate(reason: String) -> Self {
        Self { f1: 0.0, f2: 0.0, f3: 0.0, f4: 0.0, f_total: 0.0, responses: Vec::new(), diagnostic: Some(reason) }
    }
}

/// F(W) bound to one DC-removed measurement.
#[derive(Clone)]
pub struct Objective {
    x: SlowTimeSeries,
    wavenumber: f64,
    config: ObjectiveConfig,
    deconvolver: Deconvolver,
    pattern_fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("channels", &self.x.channels())
            .field("len", &self.x.len())
            .field("wavenumber", &self.wavenumber)
            .field("config", &self.config)
            .finish()
    }
}

impl Objective {
    pub fn new(x: SlowTimeSeries, wavenumber: f64, config: ObjectiveConfig) -> Result<Self> {
        if !(wavenumber > 0.0) {
            return Err(Error::Parameter("wavenumber must be positive".into()));
        }
        let deconvolver = Deconvolver::new(x.len(), x.rate, &config)?;
        let pattern_fft = FftPlanner::new().plan_fft_forward(x.channels() * config.pattern_oversampling);
        Ok(Self { x, wavenumber, config, deconvolver, pattern_fft })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    pub fn data(&self) -> &SlowTimeSeries {
        &self.x
    }

    pub fn wavenumber(&self) -> f64 {
        self.wavenumber
    }

    pub fn deconvolver(&self) -> &Deconvolver {
        &self.deconvolver
    }

    /// Separated echoes and their principal-axis displacements.
    pub fn separate(&self, w: &UnmixingMatrix) -> Result<(SlowTimeSeries, Vec<Vec<f64>>)> {
        let s = self.x.transform(w.matrix())?;
        let d = (0..s.channels())
            .map(|i| extract_displacement(&s.channel(i), self.wavenumber, DisplacementMethod::PrincipalAxis).map(|e| e.series))
            .collect::<Result<Vec<_>>>()?;
        Ok((s, d))
    }

    /// Pairwise impulse responses g_ij, i < j.
    pub fn responses(&self, displacements: &[Vec<f64>]) -> Result<Vec<ImpulseResponse>> {
        let n = displacements.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.deconvolver.impulse_response(&displacements[i], &displacements[j])?);
            }
        }
        Ok(out)
    }

    /// Full breakdown; a degenerate candidate scores zero with a diagnostic.
    pub fn evaluate(&self, w: &UnmixingMatrix, keep_responses: bool) -> ObjectiveBreakdown {
        match self.try_evaluate(w, keep_responses) {
            Ok(b) => b,
            Err(e) => ObjectiveBreakdown::degenerate(e.to_string()),
        }
    }

    fn try_evaluate(&self, w: &UnmixingMatrix, keep_responses: bool) -> Result<ObjectiveBreakdown> {
        if w.cols() != self.x.channels() {
            return Err(Error::Parameter(format!("W has {} columns for {} channels", w.cols(), self.x.channels())));
        }
        let (s, d) = self.separate(w)?;
        let f1 = f1(&s)?;
        let responses = self.responses(&d)?;
        let f2 = f2(&responses)?;
        let f3 = f3(&responses, self.config.causal_guard);
        let f4 = f4_with(&*self.pattern_fft, w, self.config.gamma)?;
        let f_total = f1 * f2 * f3 * f4;
        if !f_total.is_finite() {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        Ok(ObjectiveBreakdown {
            f1,
            f2,
            f3,
            f4,
            f_total,
            responses: if keep_responses { responses } else { Vec::new() },
            diagnostic: None,
        })
    }

    pub fn fitness(&self, w: &UnmixingMatrix) -> f64 {
        self.evaluate(w, false).f_total
    }
}

/// F(W) on `x`; rows of `w` are normalized first.
pub fn objective(w: &DMatrix<Complex64>, x: &SlowTimeSeries, wavenumber: f64, config: &ObjectiveConfig) -> Result<ObjectiveBreakdown> {
    let objective = Objective::new(x.clone(), wavenumber, config.clone())?;
    Ok(match UnmixingMatrix::new(w.clone()) {
        Ok(w) => objective.evaluate(&w, true),
        Err(e) => ObjectiveBreakdown::degenerate(e.to_string()),
    })
}
