//! Q-constant chirplet filter banks.
//!
//! Scales follow `lambda_i = 2^(1 + i/Q)` for `i = 0..J*Q`. Filter `i` sweeps
//! the octave `[fs / (2 lambda_i), fs / lambda_i]`, so index 0 is the highest
//! band. Supports are `sigma_i = 2 d / lambda_(JQ-1-i)` (reversed scales);
//! [`SigmaOrder::Direct`] selects `sigma_i = 2 d / lambda_i` instead.

use std::io::Write;

use thiserror::Error;

use crate::kernelgen::{
    self, ChirpParams, ChirpletFilter, Direction, KernelError, KernelVariant, MAX_ORDER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BankError {
    #[error("invalid bank configuration: {0}")]
    InvalidConfig(String),
    #[error("filter {index}: {source}")]
    Kernel {
        index: usize,
        #[source]
        source: KernelError,
    },
}

/// How kernel supports are assigned to scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaOrder {
    /// `2 d / lambda` taken from the reversed scale sequence.
    #[default]
    Reversed,
    /// `2 d / lambda` for the filter's own scale.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankConfig {
    /// Number of octaves `J`.
    pub octaves: u32,
    /// Filters per octave `Q`.
    pub per_octave: u32,
    pub fs: f64,
    pub order: u32,
    /// Duration multiplier `d`.
    pub duration: f64,
    pub include_downward: bool,
    pub sigma_order: SigmaOrder,
    pub variant: KernelVariant,
    /// Rescale every kernel to unit L2 norm.
    pub normalize: bool,
}

impl BankConfig {
    /// `J` octaves of `Q` linear upward chirplets with `d = 1`.
    pub fn new(octaves: u32, per_octave: u32, fs: f64) -> Self {
        Self {
            octaves,
            per_octave,
            fs,
            order: 1,
            duration: 1.0,
            include_downward: false,
            sigma_order: SigmaOrder::Reversed,
            variant: KernelVariant::RealCosine,
            normalize: false,
        }
    }

    pub fn with_order(mut self, order: u32) -> Self {
        self.order = order;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn band_count(&self) -> usize {
        self.octaves as usize * self.per_octave as usize
    }

    /// Checks everything that does not require generating kernels.
    pub fn validate(&self) -> Result<(), BankError> {
        let bad = |msg: String| Err(BankError::InvalidConfig(msg));
        if self.octaves == 0 {
            return bad("J (octave count) must be >= 1".into());
        }
        if self.per_octave == 0 {
            return bad("Q (filters per octave) must be >= 1".into());
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return bad(format!("sampling rate must be positive, got {}", self.fs));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("d must be positive, got {}", self.duration));
        }
        if self.order > MAX_ORDER {
            return bad(format!("p must be in 0..={MAX_ORDER}, got {}", self.order));
        }
        if self.variant == KernelVariant::ComplexAnalytic && self.order != 1 {
            return bad(format!(
                "analytic kernels require p = 1, got {}",
                self.order
            ));
        }
        Ok(())
    }

    pub fn lambdas(&self) -> Vec<f64> {
        let q = self.per_octave as f64;
        (0..self.band_count())
            .map(|i| 2f64.powf(1.0 + i as f64 / q))
            .collect()
    }

    /// Generating parameters of every upward kernel, validated without
    /// sampling anything.
    pub fn derived_params(&self) -> Result<Vec<ChirpParams>, BankError> {
        self.validate()?;
        let lambdas = self.lambdas();
        let sigmas = self.sigmas(&lambdas);
        lambdas
            .iter()
            .zip(&sigmas)
            .enumerate()
            .map(|(index, (&lambda, &sigma))| {
                ChirpParams::new(
                    self.fs / lambda / 2.0,
                    self.fs / lambda,
                    self.fs,
                    sigma,
                    self.order,
                )
                .map_err(|source| BankError::Kernel { index, source })
            })
            .collect()
    }

    /// Kernel supports in seconds, one per scale.
    pub fn sigmas(&self, lambdas: &[f64]) -> Vec<f64> {
        match self.sigma_order {
            SigmaOrder::Reversed => lambdas
                .iter()
                .rev()
                .map(|l| 2.0 * self.duration / l)
                .collect(),
            SigmaOrder::Direct => lambdas.iter().map(|l| 2.0 * self.duration / l).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub config: BankConfig,
    pub lambdas: Vec<f64>,
    /// Ascending scale; with downward kernels each upward filter is followed
    /// by its reversal.
    pub filters: Vec<ChirpletFilter>,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Scale of each filter, in filter order.
    pub fn filter_lambdas(&self) -> Vec<f64> {
        let per_scale = if self.config.include_downward { 2 } else { 1 };
        self.lambdas
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, per_scale))
            .collect()
    }
}

pub fn build_bank(config: &BankConfig) -> Result<FilterBank, BankError> {
    let params = config.derived_params()?;
    let lambdas = config.lambdas();

    let mut filters =
        Vec::with_capacity(params.len() * if config.include_downward { 2 } else { 1 });
    for (index, params) in params.iter().enumerate() {
        let kernel_err = |source| BankError::Kernel { index, source };
        let (up, down) = match config.variant {
            KernelVariant::RealCosine => {
                let up = kernelgen::generate_upward(params).map_err(kernel_err)?;
                let down = config
                    .include_downward
                    .then(|| kernelgen::generate_downward(params))
                    .transpose()
                    .map_err(kernel_err)?;
                (up, down)
            }
            KernelVariant::ComplexAnalytic => {
                let up =
                    kernelgen::generate_analytic(params, Direction::Upward).map_err(kernel_err)?;
                let down = config
                    .include_downward
                    .then(|| kernelgen::generate_analytic(params, Direction::Downward))
                    .transpose()
                    .map_err(kernel_err)?;
                (up, down)
            }
        };
        for filter in std::iter::once(up).chain(down) {
            filters.push(if config.normalize {
                filter.l2_normalized()
            } else {
                filter
            });
        }
    }
    Ok(FilterBank {
        config: *config,
        lambdas,
        filters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankRow {
    pub index: usize,
    pub lambda: f64,
    pub f0: f64,
    pub f1: f64,
    pub sigma: f64,
    pub kernel_len: usize,
}

pub fn bank_summary(bank: &FilterBank) -> Vec<BankRow> {
    bank.filters
        .iter()
        .zip(bank.filter_lambdas())
        .enumerate()
        .map(|(index, (filter, lambda))| BankRow {
            index,
            lambda,
            f0: filter.params.f0,
            f1: filter.params.f1,
            sigma: filter.params.sigma,
            kernel_len: filter.len(),
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "index,lambda,f0_hz,f1_hz,sigma_s,kernel_len";

/// Writes the summary as CSV. Floats use the shortest round-trip form.
pub fn write_summary_csv<W: Write>(rows: &[BankRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.index, r.lambda, r.f0, r.f1, r.sigma, r.kernel_len
        )?;
    }
    Ok(())
}
