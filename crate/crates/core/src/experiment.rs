//! Config-driven experiments: simulate or ingest, separate with each method,
//! estimate displacements and PTT, aggregate over seeds and write reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{capon_spectrum, default_angle_grid, mvdr_separate, sample_correlation, ModeVector, DEFAULT_LOADING};
use crate::error::{Error, Result};
use crate::estimate::{estimate_ptt, extract_displacement, match_permutation, pwv, rms_error, DisplacementMethod};
use crate::ga::{self, GaConfig};
use crate::ingest::{range_gate, remove_dc, GateSpec, RangeProfileSeries};
use crate::jade::jade_separate;
use crate::modelsep::{ImpulseResponse, Objective, ObjectiveConfig, UnmixingMatrix};
use crate::scenario::{simulate, ArrayScenario};
use crate::series::SlowTimeSeries;

/// Runs with any target error above this are left out of S/N averages.
pub const DEFAULT_EXCLUDE_THRESHOLD: f64 = 15e-6;

/// Generations whose best individual is written as plot data.
pub const SNAPSHOT_GENERATIONS: [usize; 3] = [1, 3, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mvdr,
    Jade,
    Proposed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mvdr => "mvdr",
            Method::Jade => "jade",
            Method::Proposed => "proposed",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.to_ascii_lowercase().as_str() {
            "mvdr" | "capon" => Ok(Method::Mvdr),
            "jade" | "ica" => Ok(Method::Jade),
            "proposed" | "ga" => Ok(Method::Proposed),
            other => Err(Error::Configuration(format!("unknown method {other:?}"))),
        }
    }
}

/// Either a seed count (seeds 1..=n) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Count(1)
    }
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (1..=*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }

    /// Parses `N` or a comma-separated list.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |e: std::num::ParseIntError| Error::Configuration(format!("seeds {text:?}: {e}"));
        if text.contains(',') {
            text.split(',').map(|s| s.trim().parse::<u64>().map_err(bad)).collect::<Result<Vec<_>>>().map(Seeds::List)
        } else {
            text.trim().parse::<u64>().map(Seeds::Count).map_err(bad)
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Mvdr, Method::Jade, Method::Proposed]
}

fn default_plot_seeds() -> usize {
    1
}

/// Experiment description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Simulation scenario; also supplies carrier and array geometry for recordings.
    #[serde(default)]
    pub scenario: ArrayScenario,
    /// Recorded range-profile tensor; when set, nothing is simulated.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub seeds: Seeds,
    /// Range gate "R1:R2" in meters; required for recordings.
    #[serde(default)]
    pub gate: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Number of separated sources; defaults to the scenario target count.
    #[serde(default)]
    pub sources: Option<usize>,
    /// Distance between the measured body parts, meters, for PWV.
    #[serde(default)]
    pub distance: Option<f64>,
    /// MVDR steering angles in degrees; defaults to the scenario geometry for
    /// simulations and to Capon peaks for recordings.
    #[serde(default)]
    pub mvdr_angles: Option<Vec<f64>>,
    #[serde(default = "default_loading")]
    pub loading: f64,
    /// Upper end of the PTT search; defaults to the objective lag window.
    #[serde(default)]
    pub ptt_window: Option<f64>,
    #[serde(default = "default_exclude")]
    pub exclude_threshold: f64,
    /// How many seeds get plot-data files.
    #[serde(default = "default_plot_seeds")]
    pub plot_seeds: usize,
}

fn default_loading() -> f64 {
    DEFAULT_LOADING
}

fn default_exclude() -> f64 {
    DEFAULT_EXCLUDE_THRESHOLD
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ArrayScenario::default(),
            input: None,
            methods: default_methods(),
            ga: GaConfig::default(),
            objective: ObjectiveConfig::default(),
            seeds: Seeds::default(),
            gate: None,
            output_dir: None,
            sources: None,
            distance: None,
            mvdr_angles: None,
            loading: DEFAULT_LOADING,
            ptt_window: None,
            exclude_threshold: DEFAULT_EXCLUDE_THRESHOLD,
            plot_seeds: default_plot_seeds(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        // relative input paths are taken relative to the config file
        if let (Some(input), Some(dir)) = (&config.input, path.parent()) {
            if input.is_relative() {
                config.input = Some(dir.join(input));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Configuration("at least one method is required".into()));
        }
        if self.seeds.to_vec().is_empty() {
            return Err(Error::Configuration("seed list is empty".into()));
        }
        if self.input.is_some() && self.gate.is_none() {
            return Err(Error::Configuration("a recording input requires a range gate".into()));
        }
        if let Some(g) = &self.gate {
            GateSpec::parse(g).map_err(|e| Error::Configuration(e.to_string()))?;
        }
        if self.sources == Some(0) {
            return Err(Error::Configuration("source count must be positive".into()));
        }
        if let Some(d) = self.distance {
            if !(d > 0.0) {
                return Err(Error::Configuration("distance must be positive".into()));
            }
        }
        if !(self.exclude_threshold > 0.0) {
            return Err(Error::Configuration("exclude threshold must be positive".into()));
        }
        if !(self.loading >= 0.0) {
            return Err(Error::Configuration("diagonal loading must be non-negative".into()));
        }
        self.ga.validate()?;
        self.objective.validate().map_err(|e| Error::Configuration(e.to_string()))?;
        if self.input.is_none() {
            self.scenario.validate()?;
        }
        Ok(())
    }

    pub fn source_count(&self) -> usize {
        self.sources.unwrap_or(self.scenario.targets.len())
    }

    pub fn ptt_search_window(&self) -> f64 {
        self.ptt_window.unwrap_or(self.objective.lag_window)
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub prepare: f64,
    pub separate: f64,
    pub estimate: f64,
}

/// Outcome of one method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub method: Method,
    /// Scale-optimal RMS displacement error per target, meters (simulation only).
    pub errors: Option<Vec<f64>>,
    pub ptt: Option<f64>,
    pub ptt_error: Option<f64>,
    pub pwv: Option<f64>,
    /// (lag, |g|) of other strong positive-lag peaks.
    pub secondary_peaks: Vec<(f64, f64)>,
    /// Best fitness per generation (proposed method only).
    pub fitness_trace: Vec<f64>,
    pub failure: Option<String>,
    pub timing: StageTiming,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, count: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    /// Per target.
    pub error: Vec<Option<MeanSd>>,
    pub ptt: Option<MeanSd>,
    pub ptt_error: Option<MeanSd>,
    pub median_ptt_error: Option<f64>,
    pub pwv: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Configured delay of target 2 relative to target 1 (simulation only).
    pub true_ptt: Option<f64>,
    pub results: Vec<SeedResult>,
    pub summary: Vec<MethodSummary>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl RunReport {
    /// Rebuilds the summary from the per-seed rows.
    pub fn summarize(true_ptt: Option<f64>, results: Vec<SeedResult>, methods: &[Method]) -> Self {
        let summary = methods
            .iter()
            .map(|&method| {
                let rows: Vec<&SeedResult> = results.iter().filter(|r| r.method == method).collect();
                let ok: Vec<&SeedResult> = rows.iter().copied().filter(|r| r.failure.is_none()).collect();
                let targets = ok.iter().filter_map(|r| r.errors.as_ref().map(Vec::len)).max().unwrap_or(0);
                let error = (0..targets)
                    .map(|t| MeanSd::of(&ok.iter().filter_map(|r| r.errors.as_ref().map(|e| e[t])).collect::<Vec<_>>()))
                    .collect();
                let collect = |f: &dyn Fn(&SeedResult) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
                let ptt_errors = collect(&|r| r.ptt_error);
                MethodSummary {
                    method,
                    runs: rows.len(),
                    failures: rows.len() - ok.len(),
                    error,
                    ptt: MeanSd::of(&collect(&|r| r.ptt)),
                    ptt_error: MeanSd::of(&ptt_errors),
                    median_ptt_error: median(&ptt_errors),
                    pwv: MeanSd::of(&collect(&|r| r.pwv)),
                }
            })
            .collect();
        Self { true_ptt, results, summary }
    }

    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Report JSON with every timing field zeroed, for reproducibility checks.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.results.iter_mut().for_each(|r| r.timing = StageTiming::default());
        to_json(&copy)
    }

    /// One row per seed and method.
    pub fn seeds_csv(&self) -> String {
        let targets = self.results.iter().filter_map(|r| r.errors.as_ref().map(Vec::len)).max().unwrap_or(0);
        let mut out = String::from("seed,method");
        for t in 0..targets {
            let _ = write!(out, ",error{}_um", t + 1);
        }
        out.push_str(",ptt_ms,ptt_error_ms,pwv_m_s,seconds,failure\n");
        for r in &self.results {
            let _ = write!(out, "{},{}", r.seed, r.method.name());
            for t in 0..targets {
                let _ = write!(out, ",{}", opt(r.errors.as_ref().and_then(|e| e.get(t)).map(|v| v * 1e6)));
            }
            let secs = r.timing.prepare + r.timing.separate + r.timing.estimate;
            let failure = r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(
                out,
                ",{},{},{},{secs:.3},{failure}",
                opt(r.ptt.map(|v| v * 1e3)),
                opt(r.ptt_error.map(|v| v * 1e3)),
                opt(r.pwv)
            );
        }
        out
    }

    /// One row per method with mean and SD columns.
    pub fn summary_csv(&self) -> String {
        let targets = self.summary.iter().map(|s| s.error.len()).max().unwrap_or(0);
        let mut out = String::from("method,runs,failures");
        for t in 0..targets {
            let _ = write!(out, ",error{0}_mean_um,error{0}_sd_um", t + 1);
        }
        out.push_str(",ptt_mean_ms,ptt_sd_ms,ptt_error_mean_ms,ptt_error_median_ms,pwv_mean_m_s\n");
        for s in &self.summary {
            let _ = write!(out, "{},{},{}", s.method.name(), s.runs, s.failures);
            for t in 0..targets {
                let e = s.error.get(t).copied().flatten();
                let _ = write!(out, ",{},{}", opt(e.map(|m| m.mean * 1e6)), opt(e.map(|m| m.sd * 1e6)));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{}",
                opt(s.ptt.map(|m| m.mean * 1e3)),
                opt(s.ptt.map(|m| m.sd * 1e3)),
                opt(s.ptt_error.map(|m| m.mean * 1e3)),
                opt(s.median_ptt_error.map(|v| v * 1e3)),
                opt(s.pwv.map(|m| m.mean))
            );
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("serializing report: {e}")))
}

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Plot-ready columns for one method on one seed.
#[derive(Debug, Clone, Default)]
pub struct PlotData {
    /// Separated echoes, one row per source.
    pub echoes: Option<SlowTimeSeries>,
    pub displacements: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub impulse: Option<ImpulseResponse>,
    /// (generation, g_12 of that generation's best individual).
    pub snapshots: Vec<(usize, ImpulseResponse)>,
}

impl PlotData {
    fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        if let Some(s) = &self.echoes {
            let mut out = String::from("time");
            for i in 0..s.channels() {
                let _ = write!(out, ",s{0}_re,s{0}_im", i + 1);
            }
            out.push('\n');
            for t in 0..s.len() {
                let _ = write!(out, "{}", s.time(t));
                for i in 0..s.channels() {
                    let z = s.samples[(i, t)];
                    let _ = write!(out, ",{},{}", z.re, z.im);
                }
                out.push('\n');
            }
            write_atomic(&dir.join(format!("{stem}_iq.csv")), out.as_bytes())?;

            let mut out = String::from("time");
            for i in 0..self.displacements.len() {
                let _ = write!(out, ",d_hat{}_m", i + 1);
            }
            for i in 0..self.truth.len() {
                let _ = write!(out, ",d_true{}_m", i + 1);
            }
            out.push('\n');
            for t in 0..s.len() {
                let _ = write!(out, "{}", s.time(t));
                for d in self.displacements.iter().chain(&self.truth) {
                    let _ = write!(out, ",{}", d[t]);
                }
                out.push('\n');
            }
            write_atomic(&dir.join(format!("{stem}_displacement.csv")), out.as_bytes())?;
        }
        if let Some(g) = &self.impulse {
            write_atomic(&dir.join(format!("{stem}_impulse.csv")), impulse_csv(g).as_bytes())?;
        }
        for (generation, g) in &self.snapshots {
            write_atomic(&dir.join(format!("{stem}_impulse_gen{generation}.csv")), impulse_csv(g).as_bytes())?;
        }
        Ok(())
    }
}

fn impulse_csv(g: &ImpulseResponse) -> String {
    let mut out = String::from("lag_s,power\n");
    for (tau, z) in g.lags.iter().zip(&g.values) {
        let _ = writeln!(out, "{tau},{}", z.norm_sqr());
    }
    out
}

/// Separated output of one method.
struct MethodOutput {
    unmixing: DMatrix<Complex64>,
    sources: SlowTimeSeries,
    fitness_trace: Vec<f64>,
    snapshots: Vec<(usize, UnmixingMatrix)>,
}

/// Context shared by every method on one measurement.
struct Measurement<'a> {
    config: &'a ExperimentConfig,
    /// DC-removed array signal.
    x: SlowTimeSeries,
    wavenumber: f64,
    truth: Option<Vec<Vec<f64>>>,
    true_ptt: Option<f64>,
    seed: u64,
    /// Steering angles for MVDR, radians.
    angles: Vec<f64>,
}

fn mvdr_angles_from_capon(config: &ExperimentConfig, x: &SlowTimeSeries, n: usize) -> Result<Vec<f64>> {
    let r = sample_correlation(x);
    let spectrum = capon_spectrum(&r, config.scenario.element_spacing, &default_angle_grid(), config.loading)?;
    if spectrum.peaks.len() < n {
        return Err(Error::Estimation(format!("Capon spectrum has {} peaks, need {n}", spectrum.peaks.len())));
    }
    let mut angles: Vec<f64> = spectrum.peaks.iter().take(n).map(|p| p.0).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

impl Measurement<'_> {
    fn separate(&self, method: Method) -> Result<MethodOutput> {
        let n = self.config.source_count();
        match method {
            Method::Mvdr => {
                let m = self.x.channels();
                let modes: Vec<ModeVector> = self
                    .angles
                    .iter()
                    .map(|&a| ModeVector::steering(m, self.config.scenario.element_spacing, a))
                    .collect();
                let sep = mvdr_separate(&self.x, &modes, self.config.loading)?;
                Ok(MethodOutput { unmixing: sep.unmixing, sources: sep.sources, fitness_trace: Vec::new(), snapshots: Vec::new() })
            }
            Method::Jade => {
                let sep = jade_separate(&self.x, n)?;
                Ok(MethodOutput { unmixing: sep.unmixing, sources: sep.sources, fitness_trace: Vec::new(), snapshots: Vec::new() })
            }
            Method::Proposed => {
                let objective = Objective::new(self.x.clone(), self.wavenumber, self.config.objective.clone())?;
                let mut ga_config = self.config.ga.clone();
                ga_config.seed = self.seed;
                let result = ga::run(&objective, n, &ga_config)?;
                let sources = self.x.transform(result.best.w.matrix())?;
                let snapshots = SNAPSHOT_GENERATIONS
                    .iter()
                    .filter_map(|&g| result.best_per_generation.get(g - 1).map(|w| (g, w.clone())))
                    .collect();
                Ok(MethodOutput {
                    fitness_trace: result.fitness_trace(),
                    unmixing: result.best.w.into_inner(),
                    sources,
                    snapshots,
                })
            }
        }
    }

    fn run(&self, method: Method, prepare: f64, want_plot: bool) -> (SeedResult, Option<PlotData>) {
        let mut row = SeedResult {
            seed: self.seed,
            method,
            errors: None,
            ptt: None,
            ptt_error: None,
            pwv: None,
            secondary_peaks: Vec::new(),
            fitness_trace: Vec::new(),
            failure: None,
            timing: StageTiming { prepare, ..Default::default() },
        };
        let t0 = Instant::now();
        let out = match self.separate(method) {
            Ok(o) => o,
            Err(e) => {
                row.failure = Some(e.to_string());
                return (row, None);
            }
        };
        row.timing.separate = t0.elapsed().as_secs_f64();
        row.fitness_trace = out.fitness_trace.clone();
        let t1 = Instant::now();
        let plot = match self.estimate(&out, &mut row, want_plot) {
            Ok(p) => p,
            Err(e) => {
                row.failure = Some(e.to_string());
                None
            }
        };
        row.timing.estimate = t1.elapsed().as_secs_f64();
        (row, plot)
    }

    fn estimate(&self, out: &MethodOutput, row: &mut SeedResult, want_plot: bool) -> Result<Option<PlotData>> {
        let mut d: Vec<Vec<f64>> = (0..out.sources.channels())
            .map(|i| extract_displacement(&out.sources.channel(i), self.wavenumber, DisplacementMethod::PrincipalAxis).map(|e| e.series))
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..d.len()).collect();
        if let Some(truth) = &self.truth {
            if truth.len() == d.len() {
                order = match_permutation(truth, &d)?;
                d = order.iter().map(|&j| d[j].clone()).collect();
                row.errors = Some(truth.iter().zip(&d).map(|(t, e)| rms_error(t, e).map(|r| r.0)).collect::<Result<_>>()?);
            }
        }
        if d.len() < 2 {
            return Ok(None);
        }
        let deconvolver = crate::modelsep::Deconvolver::new(self.x.len(), self.x.rate, &self.config.objective)?;
        let g = deconvolver.impulse_response(&d[0], &d[1])?;
        let window = self.config.ptt_search_window();
        let result = estimate_ptt(&g, window)?;
        row.ptt = Some(result.ptt);
        row.secondary_peaks = result.secondary_peaks.clone();
        row.ptt_error = self.true_ptt.map(|t| (result.ptt - t).abs());
        if let Some(distance) = self.config.distance {
            row.pwv = Some(pwv(result.ptt, distance)?);
        }
        if !want_plot {
            return Ok(None);
        }
        let mut snapshots = Vec::new();
        for (generation, w) in &out.snapshots {
            let s = self.x.transform(w.matrix())?;
            let dd: Vec<Vec<f64>> = order
                .iter()
                .map(|&j| extract_displacement(&s.channel(j), self.wavenumber, DisplacementMethod::PrincipalAxis).map(|e| e.series))
                .collect::<Result<_>>()?;
            snapshots.push((*generation, deconvolver.impulse_response(&dd[0], &dd[1])?));
        }
        let reordered = DMatrix::from_fn(order.len(), out.unmixing.ncols(), |i, c| out.unmixing[(order[i], c)]);
        Ok(Some(PlotData {
            echoes: Some(self.x.transform(&reordered)?),
            displacements: d,
            truth: self.truth.clone().unwrap_or_default(),
            impulse: Some(g),
            snapshots,
        }))
    }
}

fn simulated_measurement(config: &ExperimentConfig, seed: u64) -> Result<Measurement<'_>> {
    let sim = simulate(&config.scenario, seed)?;
    let x = remove_dc(&sim.received)?;
    let n = config.source_count();
    let angles = match &config.mvdr_angles {
        Some(a) => a.iter().map(|d| d.to_radians()).collect(),
        None if n == config.scenario.targets.len() => (0..n).map(|j| config.scenario.target_angle(j)).collect(),
        None => mvdr_angles_from_capon(config, &x, n)?,
    };
    let true_ptt = (config.scenario.targets.len() >= 2).then(|| config.scenario.targets[1].delay - config.scenario.targets[0].delay);
    Ok(Measurement { config, x, wavenumber: sim.wavenumber, truth: Some(sim.displacements), true_ptt, seed, angles })
}

fn recorded_measurement<'a>(config: &'a ExperimentConfig, data: &RangeProfileSeries, seed: u64) -> Result<Measurement<'a>> {
    let gate_text = config.gate.as_deref().ok_or_else(|| Error::Configuration("recording input requires a gate".into()))?;
    let gate = GateSpec::parse(gate_text)?;
    if data.channels != config.scenario.element_count {
        warn!("recording has {} channels, scenario says {}", data.channels, config.scenario.element_count);
    }
    let x = remove_dc(&range_gate(data, &gate)?)?;
    let n = config.source_count();
    let angles = match &config.mvdr_angles {
        Some(a) => a.iter().map(|d| d.to_radians()).collect(),
        None if config.methods.contains(&Method::Mvdr) => mvdr_angles_from_capon(config, &x, n)?,
        None => Vec::new(),
    };
    Ok(Measurement { config, x, wavenumber: config.scenario.wavenumber(), truth: None, true_ptt: None, seed, angles })
}

type SeedPlot = (u64, Method, PlotData);

fn execute<'a>(
    config: &'a ExperimentConfig,
    measure: impl Fn(u64) -> Result<Measurement<'a>> + Sync,
) -> Result<(RunReport, Vec<SeedPlot>)> {
    let seeds = config.seeds.to_vec();
    let per_seed: Vec<(Vec<SeedResult>, Vec<SeedPlot>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            let t0 = Instant::now();
            let want_plot = index < config.plot_seeds;
            match measure(seed) {
                Ok(m) => {
                    let prepare = t0.elapsed().as_secs_f64();
                    let mut rows = Vec::new();
                    let mut plots = Vec::new();
                    for &method in &config.methods {
                        let (row, plot) = m.run(method, prepare, want_plot);
                        if let Some(f) = &row.failure {
                            warn!("seed {seed} {}: {f}", method.name());
                        }
                        rows.push(row);
                        if let Some(p) = plot {
                            plots.push((seed, method, p));
                        }
                    }
                    (rows, plots)
                }
                Err(e) => {
                    warn!("seed {seed}: {e}");
                    let rows = config
                        .methods
                        .iter()
                        .map(|&method| SeedResult {
                            seed,
                            method,
                            errors: None,
                            ptt: None,
                            ptt_error: None,
                            pwv: None,
                            secondary_peaks: Vec::new(),
                            fitness_trace: Vec::new(),
                            failure: Some(e.to_string()),
                            timing: StageTiming::default(),
                        })
                        .collect();
                    (rows, Vec::new())
                }
            }
        })
        .collect();
    let mut results = Vec::new();
    let mut plots = Vec::new();
    for (r, p) in per_seed {
        results.extend(r);
        plots.extend(p);
    }
    Ok((RunReport::summarize(None, results, &config.methods), plots))
}

fn write_outputs(dir: &Path, report: &RunReport, plots: &[(u64, Method, PlotData)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("report.json"), to_json(report)?.as_bytes())?;
    write_atomic(&dir.join("seeds.csv"), report.seeds_csv().as_bytes())?;
    write_atomic(&dir.join("summary.csv"), report.summary_csv().as_bytes())?;
    let plot_dir = dir.join("plots");
    for (seed, method, plot) in plots {
        plot.write(&plot_dir, &format!("{}_seed{seed}", method.name()))?;
    }
    info!("wrote report to {}", dir.display());
    Ok(())
}

/// Simulates every seed and runs every configured method on it. Per-seed
/// failures are recorded and the run continues. Outputs go to
/// `config.output_dir` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    if config.input.is_some() {
        return process_recording(config);
    }
    let (mut report, plots) = execute(config, |seed| simulated_measurement(config, seed))?;
    let targets = &config.scenario.targets;
    report.true_ptt = (targets.len() >= 2).then(|| targets[1].delay - targets[0].delay);
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &report, &plots)?;
    }
    Ok(report)
}

/// Runs the configured methods on an in-memory range-profile tensor.
pub fn process_series(config: &ExperimentConfig, data: &RangeProfileSeries) -> Result<RunReport> {
    config.validate_for_recording()?;
    let (report, plots) = execute(config, |seed| recorded_measurement(config, data, seed))?;
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &report, &plots)?;
    }
    Ok(report)
}

impl ExperimentConfig {
    fn validate_for_recording(&self) -> Result<()> {
        if self.gate.is_none() {
            return Err(Error::Configuration("a recording input requires a range gate".into()));
        }
        let mut copy = self.clone();
        copy.input.get_or_insert_with(PathBuf::new);
        copy.validate()
    }
}

/// Loads `config.input`, then gates, removes DC and runs every method.
pub fn process_recording(config: &ExperimentConfig) -> Result<RunReport> {
    let path = config.input.as_ref().ok_or_else(|| Error::Configuration("no input file configured".into()))?;
    config.validate_for_recording()?;
    let data = RangeProfileSeries::load(path)?;
    process_series(config, &data)
}

/// Places a slow-time series into one bin of an otherwise empty tensor, so
/// that gating that bin alone returns `x` scaled by the bin width.
pub fn embed_in_range_profile(x: &SlowTimeSeries, range_bins: usize, bin: usize, range_start: f64, range_step: f64) -> Result<RangeProfileSeries> {
    if bin >= range_bins {
        return Err(Error::Parameter(format!("bin {bin} outside {range_bins} range bins")));
    }
    let mut data = RangeProfileSeries::zeros(x.channels(), range_bins, x.len(), range_start, range_step, x.rate)?;
    for c in 0..x.channels() {
        for t in 0..x.len() {
            data.set(c, bin, t, x.samples[(c, t)]);
        }
    }
    Ok(data)
}

/// One S/N point of a sweep for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub snr_db: f64,
    pub method: Method,
    pub runs: usize,
    /// Runs with a target error above the threshold, or failed.
    pub excluded: usize,
    /// Average over targets and retained runs, meters.
    pub mean_error: Option<f64>,
    /// Per-target averages over retained runs.
    pub target_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrTable {
    pub exclude_threshold: f64,
    pub rows: Vec<SnrRow>,
}

impl SnrTable {
    pub fn row(&self, snr_db: f64, method: Method) -> Option<&SnrRow> {
        self.rows.iter().find(|r| r.method == method && (r.snr_db - snr_db).abs() < 1e-9)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,method,runs,excluded,mean_error_um\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.snr_db, r.method.name(), r.runs, r.excluded, opt(r.mean_error.map(|v| v * 1e6)));
        }
        out
    }
}

/// Error statistics of one method with runs above `threshold` left out.
pub fn excluded_average(results: &[SeedResult], method: Method, threshold: f64) -> (usize, usize, Option<f64>, Vec<f64>) {
    let rows: Vec<&SeedResult> = results.iter().filter(|r| r.method == method).collect();
    let kept: Vec<&Vec<f64>> = rows
        .iter()
        .filter_map(|r| r.errors.as_ref())
        .filter(|e| e.iter().all(|v| *v <= threshold))
        .collect();
    let excluded = rows.len() - kept.len();
    if kept.is_empty() {
        return (rows.len(), excluded, None, Vec::new());
    }
    let targets = kept[0].len();
    let per_target: Vec<f64> = (0..targets).map(|t| kept.iter().map(|e| e[t]).sum::<f64>() / kept.len() as f64).collect();
    let mean = per_target.iter().sum::<f64>() / targets as f64;
    (rows.len(), excluded, Some(mean), per_target)
}

/// Repeats the experiment with the noise level set so that the strongest
/// target sits `snr` dB above it.
pub fn sweep_snr(config: &ExperimentConfig, snr_list: &[f64]) -> Result<SnrTable> {
    config.validate()?;
    if snr_list.is_empty() || snr_list.iter().any(|s| !s.is_finite()) {
        return Err(Error::Configuration("S/N list must be non-empty and finite".into()));
    }
    if config.input.is_some() {
        return Err(Error::Configuration("an S/N sweep needs a simulated scenario".into()));
    }
    let reference = config.scenario.targets.iter().map(|t| t.power_db).fold(f64::NEG_INFINITY, f64::max);
    let mut rows = Vec::new();
    for &snr in snr_list {
        let mut point = config.clone();
        point.scenario.noise_power_db = reference - snr;
        point.output_dir = None;
        let report = run_experiment(&point)?;
        for &method in &config.methods {
            let (runs, excluded, mean_error, target_errors) = excluded_average(&report.results, method, config.exclude_threshold);
            info!("S/N {snr} dB {}: mean error {:?}, {excluded} excluded", method.name(), mean_error);
            rows.push(SnrRow { snr_db: snr, method, runs, excluded, mean_error, target_errors });
        }
    }
    let table = SnrTable { exclude_threshold: config.exclude_threshold, rows };
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("snr_sweep.json"), to_json(&table)?.as_bytes())?;
        write_atomic(&dir.join("snr_sweep.csv"), table.to_csv().as_bytes())?;
    }
    Ok(table)
}
