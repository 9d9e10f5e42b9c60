//! Recorded-data loading and preprocessing: range gating, zero-Doppler
//! clutter removal and whitening.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::series::SlowTimeSeries;

/// Magic bytes opening a binary range-profile file.
pub const TENSOR_MAGIC: [u8; 8] = *b"RPTENSR1";
const HEADER_LEN: u64 = 56;

/// Complex tensor of channels x range bins x slow-time samples.
///
/// Samples are stored channel-major, then range, with time varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfileSeries {
    pub channels: usize,
    pub range_bins: usize,
    pub time_samples: usize,
    pub samples: Vec<Complex64>,
    /// Range of bin 0, meters.
    pub range_start: f64,
    /// Bin spacing, meters.
    pub range_step: f64,
    pub rate: f64,
}

impl RangeProfileSeries {
    pub fn new(
        channels: usize,
        range_bins: usize,
        time_samples: usize,
        samples: Vec<Complex64>,
        range_start: f64,
        range_step: f64,
        rate: f64,
    ) -> Result<Self> {
        if samples.len() != channels * range_bins * time_samples {
            return Err(Error::Parameter(format!(
                "tensor holds {} samples, expected {channels}x{range_bins}x{time_samples}",
                samples.len()
            )));
        }
        if !(range_step > 0.0) || !range_start.is_finite() {
            return Err(Error::Parameter("range axis must be finite and strictly increasing".into()));
        }
        if !(rate > 0.0) {
            return Err(Error::Parameter(format!("sample rate must be positive, got {rate}")));
        }
        Ok(Self { channels, range_bins, time_samples, samples, range_start, range_step, rate })
    }

    pub fn zeros(channels: usize, range_bins: usize, time_samples: usize, range_start: f64, range_step: f64, rate: f64) -> Result<Self> {
        let n = channels * range_bins * time_samples;
        Self::new(channels, range_bins, time_samples, vec![Complex64::default(); n], range_start, range_step, rate)
    }

    fn index(&self, channel: usize, bin: usize, t: usize) -> usize {
        (channel * self.range_bins + bin) * self.time_samples + t
    }

    pub fn get(&self, channel: usize, bin: usize, t: usize) -> Complex64 {
        self.samples[self.index(channel, bin, t)]
    }

    pub fn set(&mut self, channel: usize, bin: usize, t: usize, value: Complex64) {
        let i = self.index(channel, bin, t);
        self.samples[i] = value;
    }

    pub fn range_axis(&self) -> Vec<f64> {
        (0..self.range_bins).map(|b| self.range_start + b as f64 * self.range_step).collect()
    }

    /// Writes the little-endian binary layout.
    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(&TENSOR_MAGIC)?;
        for v in [self.channels, self.range_bins, self.time_samples] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in [self.rate, self.range_start, self.range_step] {
            out.write_all(&v.to_le_bytes())?;
        }
        for z in &self.samples {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut offset = 0u64;
        let mut magic = [0u8; 8];
        read_exact_at(&mut input, &mut magic, &mut offset)?;
        if magic != TENSOR_MAGIC {
            return Err(Error::Format { offset: 0, message: "bad magic bytes".into() });
        }
        let mut word = [0u8; 8];
        let mut dims = [0u64; 3];
        for d in dims.iter_mut() {
            read_exact_at(&mut input, &mut word, &mut offset)?;
            *d = u64::from_le_bytes(word);
        }
        let mut params = [0f64; 3];
        for p in params.iter_mut() {
            read_exact_at(&mut input, &mut word, &mut offset)?;
            *p = f64::from_le_bytes(word);
        }
        let [channels, range_bins, time_samples] = dims.map(|d| d as usize);
        let count = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&v| v < (1 << 40))
            .ok_or(Error::Format { offset: 8, message: "tensor dimensions overflow".into() })?;
        if !(params[0] > 0.0) || !(params[2] > 0.0) || !params[1].is_finite() {
            return Err(Error::Format { offset: 32, message: "rate and range step must be positive".into() });
        }
        debug_assert_eq!(offset, HEADER_LEN);
        let mut samples = Vec::with_capacity(count as usize);
        for _ in 0..count {
            read_exact_at(&mut input, &mut word, &mut offset)?;
            let re = f64::from_le_bytes(word);
            read_exact_at(&mut input, &mut word, &mut offset)?;
            let im = f64::from_le_bytes(word);
            samples.push(Complex64::new(re, im));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format { offset, message: format!("{} trailing bytes", rest.len()) });
        }
        Self::new(channels, range_bins, time_samples, samples, params[1], params[2], params[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "csv") {
            self.write_csv(File::create(path)?)
        } else {
            self.write_binary(File::create(path)?)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(File::open(path)?)
        } else {
            Self::read_binary(File::open(path)?)
        }
    }

    /// CSV layout: `time,range,ch0_re,ch0_im,...`, one row per (time, bin),
    /// bins varying fastest.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        write!(out, "time,range")?;
        for c in 0..self.channels {
            write!(out, ",ch{c}_re,ch{c}_im")?;
        }
        writeln!(out)?;
        for t in 0..self.time_samples {
            for b in 0..self.range_bins {
                write!(out, "{},{}", t as f64 / self.rate, self.range_start + b as f64 * self.range_step)?;
                for c in 0..self.channels {
                    let z = self.get(c, b, t);
                    write!(out, ",{},{}", z.re, z.im)?;
                }
                writeln!(out)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_csv_rows(input)?;
        let width = rows.header_width;
        if width < 4 || (width - 2) % 2 != 0 {
            return Err(Error::Format { offset: 0, message: "expected time,range and Re/Im column pairs".into() });
        }
        let channels = (width - 2) / 2;
        let mut times: Vec<f64> = Vec::new();
        let mut ranges: Vec<f64> = Vec::new();
        for (_, row) in &rows.rows {
            if times.last() != Some(&row[0]) {
                times.push(row[0]);
            }
            if times.len() == 1 {
                ranges.push(row[1]);
            }
        }
        let (range_bins, time_samples) = (ranges.len(), times.len());
        if range_bins * time_samples != rows.rows.len() {
            return Err(Error::Format { offset: 0, message: "rows do not form a full time x range grid".into() });
        }
        let rate = uniform_rate(&times)?;
        let step = if range_bins > 1 { ranges[1] - ranges[0] } else { 1.0 };
        let mut tensor = Self::zeros(channels, range_bins, time_samples, ranges[0], step, rate)?;
        for (i, (offset, row)) in rows.rows.iter().enumerate() {
            let (t, b) = (i / range_bins, i % range_bins);
            if (row[1] - ranges[b]).abs() > 1e-9 * step.abs().max(1.0) {
                return Err(Error::Format { offset: *offset, message: "range column out of order".into() });
            }
            for c in 0..channels {
                tensor.set(c, b, t, Complex64::new(row[2 + 2 * c], row[3 + 2 * c]));
            }
        }
        Ok(tensor)
    }
}

fn read_exact_at<R: Read>(input: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format { offset: *offset, message: "unexpected end of file".into() }
        }
        _ => Error::Io(e),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

struct CsvRows {
    header_width: usize,
    /// (byte offset of the row, parsed values)
    rows: Vec<(u64, Vec<f64>)>,
}

fn read_csv_rows<R: Read>(input: R) -> Result<CsvRows> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut offset = 0u64;
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(Error::Format { offset: 0, message: "empty CSV file".into() });
    }
    let header_width = line.trim_end().split(',').count();
    offset += n as u64;
    let mut rows = Vec::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let text = line.trim_end();
        if !text.is_empty() {
            let values = text
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format { offset, message: format!("bad number: {e}") })?;
            if values.len() != header_width {
                return Err(Error::Format {
                    offset,
                    message: format!("row has {} fields, header has {header_width}", values.len()),
                });
            }
            rows.push((offset, values));
        }
        offset += n as u64;
    }
    if rows.is_empty() {
        return Err(Error::Format { offset, message: "CSV file has no data rows".into() });
    }
    Ok(CsvRows { header_width, rows })
}

fn uniform_rate(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Format { offset: 0, message: "need at least two time samples to infer the rate".into() });
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Format { offset: 0, message: "time column must increase".into() });
    }
    Ok(1.0 / dt)
}

/// Writes `time,ch0_re,ch0_im,...` with one row per slow-time sample.
pub fn write_series_csv<W: Write>(series: &SlowTimeSeries, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    write!(out, "time")?;
    for c in 0..series.channels() {
        write!(out, ",ch{c}_re,ch{c}_im")?;
    }
    writeln!(out)?;
    for t in 0..series.len() {
        write!(out, "{}", series.time(t))?;
        for c in 0..series.channels() {
            let z = series.samples[(c, t)];
            write!(out, ",{},{}", z.re, z.im)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_series_csv<R: Read>(input: R) -> Result<SlowTimeSeries> {
    let rows = read_csv_rows(input)?;
    if rows.header_width < 3 || (rows.header_width - 1) % 2 != 0 {
        return Err(Error::Format { offset: 0, message: "expected a time column and Re/Im column pairs".into() });
    }
    let channels = (rows.header_width - 1) / 2;
    let times: Vec<f64> = rows.rows.iter().map(|(_, r)| r[0]).collect();
    let rate = uniform_rate(&times)?;
    let samples = DMatrix::from_fn(channels, rows.rows.len(), |c, t| {
        let r = &rows.rows[t].1;
        Complex64::new(r[1 + 2 * c], r[2 + 2 * c])
    });
    let mut series = SlowTimeSeries::new(samples, rate)?;
    series.start_time = times[0];
    Ok(series)
}

/// Range interval `[r1, r2]` holding the subject, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSpec {
    pub r1: f64,
    pub r2: f64,
}

impl GateSpec {
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        if !(r1 >= 0.0 && r1 < r2 && r2.is_finite()) {
            return Err(Error::Parameter(format!("gate needs 0 <= r1 < r2, got [{r1}, {r2}]")));
        }
        Ok(Self { r1, r2 })
    }

    /// Parses `R1:R2`.
    pub fn parse(text: &str) -> Result<Self> {
        let (a, b) = text
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("gate must be R1:R2, got {text:?}")))?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| Error::Parameter(format!("gate bound {s:?}: {e}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// Bin-width weighted sum of the range bins inside the gate.
pub fn range_gate(data: &RangeProfileSeries, gate: &GateSpec) -> Result<SlowTimeSeries> {
    let bins: Vec<usize> = data
        .range_axis()
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= gate.r1 && r <= gate.r2)
        .map(|(b, _)| b)
        .collect();
    if bins.is_empty() {
        return Err(Error::Gate(format!(
            "[{}, {}] contains no bin of the axis starting at {} with step {}",
            gate.r1, gate.r2, data.range_start, data.range_step
        )));
    }
    let width = Complex64::new(data.range_step, 0.0);
    let samples = DMatrix::from_fn(data.channels, data.time_samples, |c, t| {
        bins.iter().map(|&b| data.get(c, b, t)).sum::<Complex64>() * width
    });
    SlowTimeSeries::new(samples, data.rate)
}

/// Subtracts the full-record mean from every channel.
pub fn remove_dc(x: &SlowTimeSeries) -> Result<SlowTimeSeries> {
    if x.len() < 2 {
        return Err(Error::Parameter("DC removal needs at least two samples".into()));
    }
    let mut out = x.clone();
    for mut row in out.samples.row_iter_mut() {
        let mean = row.iter().sum::<Complex64>() / row.len() as f64;
        for z in row.iter_mut() {
            *z -= mean;
        }
    }
    Ok(out)
}

/// Relative eigenvalue floor below which covariance directions are dropped.
pub const WHITENING_FLOOR: f64 = 1e-12;

/// Whitened data z = V x together with the whitening transform V.
#[derive(Debug, Clone)]
pub struct Whitening {
    pub z: SlowTimeSeries,
    /// r x M transform.
    pub transform: DMatrix<Complex64>,
    /// Eigenvalues of the retained subspace, descending.
    pub eigenvalues: Vec<f64>,
}

impl Whitening {
    pub fn dimension(&self) -> usize {
        self.transform.nrows()
    }
}

/// Sample covariance (1/T) sum x x^H without mean removal.
pub(crate) fn covariance(x: &SlowTimeSeries) -> DMatrix<Complex64> {
    (&x.samples * x.samples.adjoint()) / Complex64::new(x.len() as f64, 0.0)
}

/// Whitens `x` on its leading covariance subspace.
///
/// `dimension` selects how many principal directions to keep; `None` keeps
/// every direction above the eigenvalue floor.
pub fn whiten(x: &SlowTimeSeries, dimension: Option<usize>) -> Result<Whitening> {
    let m = x.channels();
    if x.len() <= m {
        return Err(Error::Parameter(format!("whitening needs more samples ({}) than channels ({m})", x.len())));
    }
    let (values, vectors) = hermitian_eigen(&covariance(x));
    let max = values.first().copied().unwrap_or(0.0);
    if !(max > 0.0) {
        return Err(Error::Numerical("covariance is zero".into()));
    }
    let rank = values.iter().take_while(|&&v| v > WHITENING_FLOOR * max).count();
    let keep = match dimension {
        Some(d) if d > rank => {
            return Err(Error::Numerical(format!(
                "covariance has numerical rank {rank}, cannot retain {d} dimensions"
            )))
        }
        Some(0) => return Err(Error::Parameter("whitening dimension must be at least 1".into())),
        Some(d) => d,
        None => rank,
    };
    let transform = DMatrix::from_fn(keep, m, |r, c| vectors[(c, r)].conj() / values[r].sqrt());
    let z = x.transform(&transform)?;
    Ok(Whitening { z, transform, eigenvalues: values[..keep].to_vec() })
}
