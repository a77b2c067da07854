//! Modulus and Gaussian time-averaging of filter-bank responses.
//!
//! `Sx(lambda, t) = (|x * psi_lambda| * phi)(t)`, sampled every
//! `round(t_frame * fs)` samples. `phi` is a unit-mass discrete Gaussian.
//! With `raw_mode` the averaging is skipped and the full-rate modulus
//! `Ux` is returned.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::audio_io::AudioBuffer;
use crate::fastconv::{self, ComplexConvolver, ConvError, RealConvolver};
use crate::filterbank::FilterBank;
use crate::kernelgen::{ceil_samples, Direction, KernelSamples};

/// `phi` is cut at this many standard deviations on each side.
pub const PHI_TRUNCATION: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatterError {
    #[error("invalid smoothing configuration: {0}")]
    InvalidConfig(String),
    #[error("smoothing width must span at least one sample, got {width_s} s at {fs} Hz")]
    InvalidWidth { width_s: f64, fs: f64 },
    #[error("no input rows or samples")]
    EmptyInput,
    #[error("all rows must have the same length")]
    RaggedRows,
    #[error("audio is sampled at {audio} Hz but the bank was built for {bank} Hz")]
    SampleRateMismatch { audio: f64, bank: f64 },
    #[error(transparent)]
    Conv(#[from] ConvError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothConfig {
    /// Output frame period in seconds.
    pub frame_period: f64,
    /// Standard deviation of `phi` in seconds.
    pub smooth_width: f64,
}

impl SmoothConfig {
    pub fn new(frame_period: f64, smooth_width: f64) -> Self {
        Self {
            frame_period,
            smooth_width,
        }
    }

    /// Checks the sample-rate independent constraints.
    pub fn validate_static(&self) -> Result<(), ScatterError> {
        let bad = |msg: String| Err(ScatterError::InvalidConfig(msg));
        if !(self.frame_period.is_finite() && self.frame_period > 0.0) {
            return bad(format!("t must be positive, got {}", self.frame_period));
        }
        if !(self.smooth_width.is_finite() && self.smooth_width > 0.0) {
            return bad(format!("s must be positive, got {}", self.smooth_width));
        }
        if self.smooth_width < self.frame_period / 2.0 {
            return bad(format!(
                "s >= t/2 required, got s={} t={}",
                self.smooth_width, self.frame_period
            ));
        }
        Ok(())
    }

    pub fn validate(&self, fs: f64) -> Result<(), ScatterError> {
        self.validate_static()?;
        if self.frame_period * fs < 1.0 - 1e-9 {
            return Err(ScatterError::InvalidConfig(format!(
                "t*fs >= 1 required, got t={} fs={fs}",
                self.frame_period
            )));
        }
        if self.smooth_width * fs < 1.0 - 1e-9 {
            return Err(ScatterError::InvalidWidth {
                width_s: self.smooth_width,
                fs,
            });
        }
        Ok(())
    }

    /// Stride between output frames in samples.
    pub fn hop_samples(&self, fs: f64) -> usize {
        ((self.frame_period * fs).round() as usize).max(1)
    }

    /// `floor(N / (t * fs))`, capped so every frame index lies inside the
    /// signal when the hop was rounded up.
    pub fn frame_count(&self, n: usize, fs: f64) -> usize {
        let exact = n as f64 / (self.frame_period * fs);
        let nearest = exact.round();
        let frames = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            exact.floor()
        } as usize;
        frames.min(n.div_ceil(self.hop_samples(fs)))
    }
}

/// Per-row axis metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandMeta {
    pub lambda: f64,
    pub f0: f64,
    pub f1: f64,
    pub direction: Direction,
}

impl BandMeta {
    pub fn contains(&self, freq: f64) -> bool {
        self.f0 <= freq && freq <= self.f1
    }
}

pub fn band_meta(bank: &FilterBank) -> Vec<BandMeta> {
    bank.filters
        .iter()
        .zip(bank.filter_lambdas())
        .map(|(f, lambda)| BandMeta {
            lambda,
            f0: f.params.f0,
            f1: f.params.f1,
            direction: f.direction,
        })
        .collect()
}

/// Bands x frames matrix of non-negative values, stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Chirpletgram {
    bands: usize,
    frames: usize,
    values: Vec<f64>,
    pub band_meta: Vec<BandMeta>,
    /// Seconds between consecutive frames.
    pub frame_period: f64,
    /// Time of frame 0 in seconds.
    pub origin_time: f64,
    pub source_sr: f64,
}

impl Chirpletgram {
    pub fn new(
        values: Vec<f64>,
        frames: usize,
        band_meta: Vec<BandMeta>,
        frame_period: f64,
        origin_time: f64,
        source_sr: f64,
    ) -> Result<Self, ScatterError> {
        let bands = band_meta.len();
        if values.len() != bands * frames {
            return Err(ScatterError::RaggedRows);
        }
        Ok(Self {
            bands,
            frames,
            values,
            band_meta,
            frame_period,
            origin_time,
            source_sr,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.bands == 0 || self.frames == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.values[band * self.frames..(band + 1) * self.frames]
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero, and a zero-frame gram has no data.
        self.values.chunks_exact(self.frames.max(1))
    }

    /// Sum of squares of each row.
    pub fn row_energies(&self) -> Vec<f64> {
        (0..self.bands)
            .map(|b| self.row(b).iter().map(|v| v * v).sum())
            .collect()
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        self.origin_time + frame as f64 * self.frame_period
    }
}

pub fn modulus(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.abs()).collect()
}

pub fn modulus_complex(values: &[Complex64]) -> Vec<f64> {
    values.iter().map(|z| z.norm()).collect()
}

/// Unit-sum Gaussian with standard deviation `width_s * fs` samples,
/// truncated at +-4 std.
pub fn build_phi(width_s: f64, fs: f64) -> Result<Vec<f64>, ScatterError> {
    let std = width_s * fs;
    if !std.is_finite() || std < 1.0 - 1e-9 {
        return Err(ScatterError::InvalidWidth { width_s, fs });
    }
    let half = ceil_samples(PHI_TRUNCATION * std);
    let mut phi: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let u = k as f64 - half as f64;
            (-0.5 * u * u / (std * std)).exp()
        })
        .collect();
    let total: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|v| *v /= total);
    Ok(phi)
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize, ScatterError> {
    let n = rows.first().map(Vec::len).ok_or(ScatterError::EmptyInput)?;
    if n == 0 {
        return Err(ScatterError::EmptyInput);
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(ScatterError::RaggedRows);
    }
    Ok(n)
}

/// Low-pass filters each row with `phi` and keeps every hop-th sample.
pub fn smooth_and_subsample(
    rows: &[Vec<f64>],
    cfg: &SmoothConfig,
    fs: f64,
    band_meta: Vec<BandMeta>,
) -> Result<Chirpletgram, ScatterError> {
    let n = check_rows(rows)?;
    if band_meta.len() != rows.len() {
        return Err(ScatterError::RaggedRows);
    }
    cfg.validate(fs)?;
    let smoother = Smoother::new(cfg, fs)?;
    let frames = cfg.frame_count(n, fs);
    let values: Vec<f64> = rows
        .par_iter()
        .map(|row| smoother.apply(row, frames))
        .flatten_iter()
        .collect();
    Chirpletgram::new(
        values,
        frames,
        band_meta,
        smoother.frame_period(fs),
        0.0,
        fs,
    )
}

struct Smoother {
    convolver: RealConvolver,
    hop: usize,
}

impl Smoother {
    fn new(cfg: &SmoothConfig, fs: f64) -> Result<Self, ScatterError> {
        let phi = build_phi(cfg.smooth_width, fs)?;
        let plan = fastconv::plan_for(phi.len(), None);
        Ok(Self {
            convolver: RealConvolver::new(&phi, plan)?,
            hop: cfg.hop_samples(fs),
        })
    }

    fn apply(&self, row: &[f64], frames: usize) -> Vec<f64> {
        let smoothed = self.convolver.apply(row);
        // Round-off can push averages of zeros a hair below zero.
        (0..frames)
            .map(|f| smoothed[f * self.hop].max(0.0))
            .collect()
    }

    fn frame_period(&self, fs: f64) -> f64 {
        self.hop as f64 / fs
    }
}

enum BandConvolver {
    Real(RealConvolver),
    Complex(ComplexConvolver),
}

impl BandConvolver {
    fn modulus(&self, signal: &[f64]) -> Vec<f64> {
        match self {
            BandConvolver::Real(c) => modulus(&c.apply(signal)),
            BandConvolver::Complex(c) => modulus_complex(&c.apply(signal)),
        }
    }
}

/// A bank with its kernel spectra precomputed, reusable across signals.
pub struct Transformer<'a> {
    bank: &'a FilterBank,
    convolvers: Vec<BandConvolver>,
    meta: Vec<BandMeta>,
}

impl<'a> Transformer<'a> {
    pub fn new(bank: &'a FilterBank) -> Result<Self, ScatterError> {
        let convolvers = bank
            .filters
            .par_iter()
            .map(|f| {
                let plan = fastconv::plan_for(f.len(), None);
                Ok(match &f.samples {
                    KernelSamples::Real(k) => BandConvolver::Real(RealConvolver::new(k, plan)?),
                    KernelSamples::Complex(k) => {
                        BandConvolver::Complex(ComplexConvolver::new(k, plan)?)
                    }
                })
            })
            .collect::<Result<Vec<_>, ConvError>>()?;
        Ok(Self {
            bank,
            convolvers,
            meta: band_meta(bank),
        })
    }

    pub fn bank(&self) -> &FilterBank {
        self.bank
    }

    /// Full-rate modulus `|x * psi|` for every filter.
    pub fn modulus_rows(&self, audio: &AudioBuffer) -> Result<Vec<Vec<f64>>, ScatterError> {
        self.check_rate(audio)?;
        Ok(self
            .convolvers
            .par_iter()
            .map(|c| c.modulus(audio.samples()))
            .collect())
    }

    pub fn transform(
        &self,
        audio: &AudioBuffer,
        cfg: &SmoothConfig,
        raw_mode: bool,
    ) -> Result<Chirpletgram, ScatterError> {
        self.check_rate(audio)?;
        let fs = self.bank.config.fs;
        let origin = audio.origin().offset_s;
        if raw_mode {
            let rows = self.modulus_rows(audio)?;
            let n = audio.len();
            let values = rows.into_iter().flatten().collect();
            return Chirpletgram::new(values, n, self.meta.clone(), 1.0 / fs, origin, fs);
        }
        cfg.validate(fs)?;
        let smoother = Smoother::new(cfg, fs)?;
        let frames = cfg.frame_count(audio.len(), fs);
        let values: Vec<f64> = self
            .convolvers
            .par_iter()
            .map(|c| smoother.apply(&c.modulus(audio.samples()), frames))
            .flatten_iter()
            .collect();
        Chirpletgram::new(
            values,
            frames,
            self.meta.clone(),
            smoother.frame_period(fs),
            origin,
            fs,
        )
    }

    fn check_rate(&self, audio: &AudioBuffer) -> Result<(), ScatterError> {
        let fs = self.bank.config.fs;
        if audio.sample_rate() as f64 != fs {
            return Err(ScatterError::SampleRateMismatch {
                audio: audio.sample_rate() as f64,
                bank: fs,
            });
        }
        Ok(())
    }
}

/// Convolve with every filter, take the modulus and (unless `raw_mode`)
/// average and subsample.
pub fn transform(
    audio: &AudioBuffer,
    bank: &FilterBank,
    cfg: &SmoothConfig,
    raw_mode: bool,
) -> Result<Chirpletgram, ScatterError> {
    Transformer::new(bank)?.transform(audio, cfg, raw_mode)
}
