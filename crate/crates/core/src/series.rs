//! Uniformly sampled multichannel slow-time data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex baseband samples, one row per channel and one column per
/// slow-time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowTimeSeries {
    pub samples: DMatrix<Complex64>,
    pub rate: f64,
    pub start_time: f64,
}

impl SlowTimeSeries {
    pub fn new(samples: DMatrix<Complex64>, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Parameter(format!("sample rate must be positive, got {rate}")));
        }
        Ok(Self { samples, rate, start_time: 0.0 })
    }

    /// Builds a single-channel series from a slice of samples.
    pub fn from_channel(channel: &[Complex64], rate: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, channel.len(), channel), rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn channel(&self, index: usize) -> Vec<Complex64> {
        self.samples.row(index).iter().copied().collect()
    }

    /// Time stamp of sample `n`.
    pub fn time(&self, n: usize) -> f64 {
        self.start_time + n as f64 / self.rate
    }

    /// Snapshot vector x(t) at sample `n`.
    pub fn snapshot(&self, n: usize) -> DVector<Complex64> {
        self.samples.column(n).into_owned()
    }

    /// Applies a matrix on the channel axis: returns `W x(t)` for all t.
    pub fn transform(&self, w: &DMatrix<Complex64>) -> Result<SlowTimeSeries> {
        if w.ncols() != self.channels() {
            return Err(Error::Parameter(format!(
                "transform has {} columns but series has {} channels",
                w.ncols(),
                self.channels()
            )));
        }
        Ok(SlowTimeSeries { samples: w * &self.samples, rate: self.rate, start_time: self.start_time })
    }

    pub fn scaled(&self, factor: Complex64) -> SlowTimeSeries {
        SlowTimeSeries { samples: &self.samples * factor, rate: self.rate, start_time: self.start_time }
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}
