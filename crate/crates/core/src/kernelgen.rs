//! Chirplet kernel generation.
//!
//! A chirplet here is a cosine whose instantaneous frequency sweeps from
//! `f0` to `f1` over a support of `sigma` seconds, under a wide Gaussian
//! envelope centred at `sigma / 2`. The sweep follows a polynomial law of
//! order `p` (linear for `p = 1`) or an exponential law for `p = 0`.
//!
//! The complex analytic atom ([`generate_analytic`]) is the Gaussian-windowed
//! quadratic-phase chirp with unit-energy amplitude. Its centre parameters are
//! reconstructed from the real kernel: `t_c = sigma / 2`, `dt = sigma`,
//! `f_c = f0` and `c = (f1 - f0) / (2 sigma)`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use thiserror::Error;

/// Highest supported chirp order.
pub const MAX_ORDER: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid chirp parameters: {0}")]
    InvalidParams(String),
    #[error("analytic chirplets require order p = 1, got p = {0}")]
    UnsupportedOrder(u32),
}

/// Generating parameters of one chirplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChirpParams {
    /// Start frequency in Hz.
    pub f0: f64,
    /// End frequency in Hz.
    pub f1: f64,
    /// Sampling rate in Hz.
    pub fs: f64,
    /// Time support in seconds.
    pub sigma: f64,
    /// Polynomial order of the sweep; 0 selects the exponential law.
    pub order: u32,
}

impl ChirpParams {
    pub fn new(f0: f64, f1: f64, fs: f64, sigma: f64, order: u32) -> Result<Self, KernelError> {
        let params = Self {
            f0,
            f1,
            fs,
            sigma,
            order,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |msg: String| Err(KernelError::InvalidParams(msg));
        if !(self.f0.is_finite()
            && self.f1.is_finite()
            && self.fs.is_finite()
            && self.sigma.is_finite())
        {
            return bad("parameters must be finite".into());
        }
        if self.fs <= 0.0 {
            return bad(format!("sampling rate must be positive, got {}", self.fs));
        }
        if self.f0 <= 0.0 {
            return bad(format!("f0 must be positive, got {}", self.f0));
        }
        if self.f0 >= self.f1 {
            return bad(format!(
                "f0 < f1 required, got f0={} f1={}",
                self.f0, self.f1
            ));
        }
        if self.f1 > self.fs / 2.0 {
            return bad(format!("f1={} exceeds Nyquist {}", self.f1, self.fs / 2.0));
        }
        if self.sigma <= 0.0 || self.sigma * self.fs < 2.0 {
            return bad(format!(
                "sigma*fs >= 2 required, got sigma={} fs={}",
                self.sigma, self.fs
            ));
        }
        if self.order > MAX_ORDER {
            return bad(format!(
                "order must be in 0..={MAX_ORDER}, got {}",
                self.order
            ));
        }
        Ok(())
    }

    /// Number of kernel samples, `ceil(sigma * fs)`.
    pub fn kernel_len(&self) -> usize {
        ceil_samples(self.sigma * self.fs)
    }
}

/// `ceil` that tolerates products such as `0.01 * 16000` landing a few ulps
/// above an integer.
pub(crate) fn ceil_samples(x: f64) -> usize {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Upward,
    Downward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum KernelVariant {
    #[default]
    RealCosine,
    ComplexAnalytic,
}

/// Kernel samples. `Complex64` is laid out as an interleaved `(re, im)` pair.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSamples {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl KernelSamples {
    pub fn len(&self) -> usize {
        match self {
            KernelSamples::Real(v) => v.len(),
            KernelSamples::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn reversed(&self) -> Self {
        match self {
            KernelSamples::Real(v) => KernelSamples::Real(v.iter().rev().copied().collect()),
            KernelSamples::Complex(v) => KernelSamples::Complex(v.iter().rev().copied().collect()),
        }
    }

    fn energy(&self) -> f64 {
        match self {
            KernelSamples::Real(v) => v.iter().map(|x| x * x).sum(),
            KernelSamples::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum(),
        }
    }
}

/// One kernel of the bank together with what generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChirpletFilter {
    pub params: ChirpParams,
    pub direction: Direction,
    pub variant: KernelVariant,
    pub samples: KernelSamples,
}

impl ChirpletFilter {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Real samples, or `None` for analytic kernels.
    pub fn real_samples(&self) -> Option<&[f64]> {
        match &self.samples {
            KernelSamples::Real(v) => Some(v),
            KernelSamples::Complex(_) => None,
        }
    }

    /// Rescales the kernel to unit L2 norm. All-zero kernels are left as is.
    pub fn l2_normalized(mut self) -> Self {
        let norm = self.samples.energy().sqrt();
        if norm > 0.0 {
            let scale = 1.0 / norm;
            match &mut self.samples {
                KernelSamples::Real(v) => v.iter_mut().for_each(|x| *x *= scale),
                KernelSamples::Complex(v) => v.iter_mut().for_each(|z| *z *= scale),
            }
        }
        self
    }
}

/// Gaussian taper `exp(-(t - sigma/2)^2 / (2 sigma^2))`.
pub fn envelope(t: f64, sigma: f64) -> f64 {
    let u = t - sigma / 2.0;
    (-(u * u) / (2.0 * sigma * sigma)).exp()
}

/// Phase in radians of the swept cosine at time `t`.
fn phase(params: &ChirpParams, t: f64) -> f64 {
    let ChirpParams {
        f0,
        f1,
        sigma,
        order,
        ..
    } = *params;
    if order == 0 {
        let ratio = f1 / f0;
        2.0 * PI * ((f0 * ratio.powf(t / sigma) - f0) * sigma / ratio.ln())
    } else {
        let p = order as i32;
        let rate = (f1 - f0) / ((order + 1) as f64 * sigma.powi(p));
        2.0 * PI * (rate * t.powi(p) + f0) * t
    }
}

/// Real cosine chirplet sweeping from `f0` up to `f1`.
pub fn generate_upward(params: &ChirpParams) -> Result<ChirpletFilter, KernelError> {
    params.validate()?;
    let len = params.kernel_len();
    let samples = (0..len)
        .map(|k| {
            let t = k as f64 / params.fs;
            phase(params, t).cos() * envelope(t, params.sigma)
        })
        .collect();
    Ok(ChirpletFilter {
        params: *params,
        direction: Direction::Upward,
        variant: KernelVariant::RealCosine,
        samples: KernelSamples::Real(samples),
    })
}

/// Time reversal of [`generate_upward`].
pub fn generate_downward(params: &ChirpParams) -> Result<ChirpletFilter, KernelError> {
    let up = generate_upward(params)?;
    Ok(reverse(up))
}

fn reverse(filter: ChirpletFilter) -> ChirpletFilter {
    let direction = match filter.direction {
        Direction::Upward => Direction::Downward,
        Direction::Downward => Direction::Upward,
    };
    ChirpletFilter {
        samples: filter.samples.reversed(),
        direction,
        ..filter
    }
}

/// Chirp rate `c` of the analytic atom, in Hz/s.
pub fn analytic_chirp_rate(params: &ChirpParams) -> f64 {
    (params.f1 - params.f0) / (2.0 * params.sigma)
}

/// Unit-energy complex linear chirplet (order 1 only).
pub fn generate_analytic(
    params: &ChirpParams,
    direction: Direction,
) -> Result<ChirpletFilter, KernelError> {
    params.validate()?;
    if params.order != 1 {
        return Err(KernelError::UnsupportedOrder(params.order));
    }
    let center = params.sigma / 2.0;
    let duration = params.sigma;
    let freq = params.f0;
    let rate = analytic_chirp_rate(params);
    let amplitude = 1.0 / (PI.sqrt() * duration).sqrt();

    let samples = (0..params.kernel_len())
        .map(|k| {
            let u = k as f64 / params.fs - center;
            let gauss = amplitude * (-0.5 * u * u / (duration * duration)).exp();
            Complex64::from_polar(gauss, 2.0 * PI * (rate * u * u + freq * u))
        })
        .collect();
    let up = ChirpletFilter {
        params: *params,
        direction: Direction::Upward,
        variant: KernelVariant::ComplexAnalytic,
        samples: KernelSamples::Complex(samples),
    };
    Ok(match direction {
        Direction::Upward => up,
        Direction::Downward => reverse(up),
    })
}
