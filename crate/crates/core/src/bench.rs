//! Timing of the naive, full-FFT and chunked convolution paths.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fastconv::{self, relative_linf, ConvError, RealConvolver, NAIVE_GUARD};

/// Relative L-infinity tolerance every grid point must meet before timing.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// Naive output positions checked when the full naive product is over the
/// guard.
const SPOT_CHECKS: usize = 512;

pub const CSV_HEADER: &str = "method,N,M,chunk_len,median_ns,speedup_vs_full";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("oracle check failed for N={n}, M={m}: {method} off by {error:.3e} (relative)")]
    OracleMismatch {
        n: usize,
        m: usize,
        method: &'static str,
        error: f64,
    },
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error("benchmark needs at least one run")]
    NoRuns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Naive,
    FullFft,
    Chunked,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::FullFft => "full_fft",
            Method::Chunked => "chunked",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    /// Block length for chunked, transform size for full FFT, 0 for naive.
    pub chunk_len: usize,
    pub median_ns: u128,
    pub speedup_vs_full: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub signal_lens: Vec<usize>,
    pub kernel_lens: Vec<usize>,
    pub runs: usize,
    pub target_chunk: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            signal_lens: vec![1 << 16, 1 << 20],
            kernel_lens: vec![128, 1024],
            runs: 5,
            target_chunk: None,
            seed: 0x00fc_7001,
        }
    }
}

/// Median wall time of `runs` calls.
pub fn median_time<F: FnMut()>(runs: usize, mut f: F) -> Duration {
    let mut times: Vec<Duration> = (0..runs.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed()
        })
        .collect();
    times.sort();
    times[times.len() / 2]
}

pub fn random_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Checks `candidate` against the direct sum at a spread of positions.
fn spot_check(signal: &[f64], kernel: &[f64], candidate: &[f64], seed: u64) -> f64 {
    let (n, m) = (signal.len(), kernel.len());
    let offset = (m - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<usize> = (0..SPOT_CHECKS)
        .map(|_| rng.gen_range(0..n))
        .chain([0, n - 1])
        .collect();
    let reference: Vec<f64> = positions
        .iter()
        .map(|&i| {
            let full = i + offset;
            let lo = full.saturating_sub(n - 1);
            (lo..=full.min(m - 1))
                .map(|k| kernel[k] * signal[full - k])
                .sum()
        })
        .collect();
    let picked: Vec<f64> = positions.iter().map(|&i| candidate[i]).collect();
    relative_linf(&reference, &picked)
}

/// Verifies and times all three paths at one grid point.
pub fn run_point(
    n: usize,
    m: usize,
    runs: usize,
    target_chunk: Option<usize>,
    seed: u64,
) -> Result<Vec<BenchRow>, BenchError> {
    if runs == 0 {
        return Err(BenchError::NoRuns);
    }
    let signal = random_signal(n, seed);
    let kernel = random_signal(m, seed.wrapping_add(1));
    let plan = fastconv::plan_for(m, target_chunk);
    let convolver = RealConvolver::new(&kernel, plan)?;

    let chunked = convolver.apply(&signal);
    let full = fastconv::convolve_full_fft(&signal, &kernel)?;
    let naive_fits = n.saturating_mul(m) <= NAIVE_GUARD;
    let check = |method: Method, out: &[f64], reference: Option<&[f64]>| {
        let error = match reference {
            Some(r) => relative_linf(r, out),
            None => spot_check(&signal, &kernel, out, seed.wrapping_add(2)),
        };
        if error <= ORACLE_TOLERANCE {
            Ok(())
        } else {
            Err(BenchError::OracleMismatch {
                n,
                m,
                method: method.name(),
                error,
            })
        }
    };
    let naive = if naive_fits {
        Some(fastconv::convolve_naive(&signal, &kernel)?)
    } else {
        None
    };
    check(Method::Chunked, &chunked, naive.as_deref())?;
    check(Method::FullFft, &full, naive.as_deref())?;

    let full_time = median_time(runs, || {
        std::hint::black_box(fastconv::convolve_full_fft(&signal, &kernel).unwrap());
    });
    let chunked_time = median_time(runs, || {
        std::hint::black_box(convolver.apply(&signal));
    });
    let ratio = |t: Duration| full_time.as_secs_f64() / t.as_secs_f64().max(1e-12);

    let mut rows = Vec::with_capacity(3);
    if naive_fits {
        let naive_time = median_time(runs, || {
            std::hint::black_box(fastconv::convolve_naive(&signal, &kernel).unwrap());
        });
        rows.push(BenchRow {
            method: Method::Naive,
            n,
            m,
            chunk_len: 0,
            median_ns: naive_time.as_nanos(),
            speedup_vs_full: ratio(naive_time),
        });
    }
    rows.push(BenchRow {
        method: Method::FullFft,
        n,
        m,
        chunk_len: (n + m - 1).next_power_of_two(),
        median_ns: full_time.as_nanos(),
        speedup_vs_full: 1.0,
    });
    rows.push(BenchRow {
        method: Method::Chunked,
        n,
        m,
        chunk_len: plan.chunk_len(),
        median_ns: chunked_time.as_nanos(),
        speedup_vs_full: ratio(chunked_time),
    });
    Ok(rows)
}

pub fn run_grid(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    for &n in &cfg.signal_lens {
        for &m in &cfg.kernel_lens {
            rows.extend(run_point(n, m, cfg.runs, cfg.target_chunk, cfg.seed)?);
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.4}",
            r.method.name(),
            r.n,
            r.m,
            r.chunk_len,
            r.median_ns,
            r.speedup_vs_full
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_point_has_all_methods() {
        let rows = run_point(4096, 64, 1, None, 7).unwrap();
        let methods: Vec<_> = rows.iter().map(|r| r.method).collect();
        assert_eq!(
            methods,
            vec![Method::Naive, Method::FullFft, Method::Chunked]
        );
        assert_eq!(rows[1].speedup_vs_full, 1.0);
        assert_eq!(rows[2].chunk_len, 1024);
        assert_eq!(rows[1].chunk_len, 8192);
    }

    #[test]
    fn large_point_skips_naive_but_spot_checks() {
        let rows = run_point(1 << 19, 1024, 1, None, 3).unwrap();
        assert!(rows.iter().all(|r| r.method != Method::Naive));
    }

    #[test]
    fn spot_check_catches_errors() {
        let signal = random_signal(5000, 1);
        let kernel = random_signal(30, 2);
        let mut out = fastconv::convolve_naive(&signal, &kernel).unwrap();
        assert!(spot_check(&signal, &kernel, &out, 9) < 1e-12);
        out.iter_mut().for_each(|v| *v *= 1.001);
        assert!(spot_check(&signal, &kernel, &out, 9) > 1e-6);
    }

    #[test]
    fn csv_columns() {
        let rows = run_point(2048, 16, 1, None, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        for line in lines {
            assert_eq!(line.split(',').count(), 6);
        }
    }

    #[test]
    fn zero_runs_rejected() {
        assert!(matches!(
            run_point(10, 2, 0, None, 0),
            Err(BenchError::NoRuns)
        ));
    }
}
