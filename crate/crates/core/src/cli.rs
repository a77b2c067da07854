//! `fct` command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid flags (checked before any I/O),
//! 2 when at least one input file failed.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::audio_io::{self, DetectionRow, Thresholds, SUPPORTED_RATES};
use crate::bench::{self, BenchConfig, Method};
use crate::export::{self, Colormap, ExportOptions, Format};
use crate::filterbank::{self, BankConfig, FilterBank, SigmaOrder};
use crate::kernelgen::KernelVariant;
use crate::scattering::{SmoothConfig, Transformer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

/// Default output directory when `-o` is not given.
pub const OUT_DIR_ENV: &str = "FCT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "fct", version, about = "Fast Chirplet Transform toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute chirpletgrams of WAV files.
    Transform(TransformArgs),
    /// Print the filter-bank table as CSV.
    Bank(BankArgs),
    /// Run the energy / spectral-flatness activity detector on WAV files.
    Detect(DetectArgs),
    /// Time naive, full-FFT and chunked convolution.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
struct BankFlags {
    /// Octave count J [default: 6 at 44.1 kHz, 4 otherwise].
    #[arg(long = "j")]
    octaves: Option<u32>,
    /// Filters per octave Q.
    #[arg(long = "q", default_value_t = 16)]
    per_octave: u32,
    /// Chirp order p (0 = exponential, 1 = linear, 2, 3).
    #[arg(long = "p", default_value_t = 1)]
    order: u32,
    /// Duration multiplier d; kernel supports are 2 d / lambda seconds.
    #[arg(long = "d", default_value_t = 1.0)]
    duration: f64,
    /// Assign sigma = 2 d / lambda per filter instead of the reversed order.
    #[arg(long)]
    eq5_sigma: bool,
    /// Use complex analytic kernels (requires p = 1).
    #[arg(long)]
    analytic: bool,
    /// Add a time-reversed (descending) kernel after every ascending one.
    #[arg(long)]
    downward: bool,
    /// Scale every kernel to unit L2 norm.
    #[arg(long)]
    normalize: bool,
}

impl BankFlags {
    fn config(&self, fs: u32) -> BankConfig {
        let octaves = self.octaves.unwrap_or(if fs == 44100 { 6 } else { 4 });
        BankConfig {
            octaves,
            per_octave: self.per_octave,
            fs: fs as f64,
            order: self.order,
            duration: self.duration,
            include_downward: self.downward,
            sigma_order: if self.eq5_sigma {
                SigmaOrder::Direct
            } else {
                SigmaOrder::Reversed
            },
            variant: if self.analytic {
                KernelVariant::ComplexAnalytic
            } else {
                KernelVariant::RealCosine
            },
            normalize: self.normalize,
        }
    }

    /// Validates the bank at every sample rate a WAV input may have.
    fn validate(&self) -> Result<(), String> {
        if self.octaves == Some(0) {
            return Err("--j must be >= 1 (J*Q >= 1 filters required)".into());
        }
        if self.per_octave == 0 {
            return Err("--q must be >= 1 (J*Q >= 1 filters required)".into());
        }
        for fs in SUPPORTED_RATES {
            self.config(fs)
                .derived_params()
                .map_err(|e| format!("bank at {fs} Hz: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ColormapArg {
    Gray,
    Heat,
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// WAV files or directories containing them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    bank: BankFlags,
    /// Output frame period in seconds.
    #[arg(long = "t", default_value_t = 0.001)]
    frame_period: f64,
    /// Standard deviation of the Gaussian smoother in seconds.
    #[arg(long = "s", default_value_t = 0.01)]
    smooth_width: f64,
    /// Comma-separated output formats: csv, bin, png.
    #[arg(long, value_delimiter = ',', default_value = "bin")]
    format: Vec<String>,
    /// Bands dropped from the high-frequency end.
    #[arg(long, default_value_t = 0)]
    crop_low: usize,
    /// Bands dropped from the low-frequency end.
    #[arg(long, default_value_t = 0)]
    crop_high: usize,
    /// Apply log(1 + x / 1e-10) before writing.
    #[arg(long)]
    log_compress: bool,
    /// Write the lowest band first.
    #[arg(long)]
    flip_rows: bool,
    /// Skip smoothing and write the full-rate modulus.
    #[arg(long)]
    raw: bool,
    #[arg(long, value_enum, default_value = "heat")]
    colormap: ColormapArg,
    /// Worker threads [default: all cores].
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory [default: $FCT_OUT_DIR or .].
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BankArgs {
    #[command(flatten)]
    bank: BankFlags,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 16000)]
    fs: u32,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Energy-ratio threshold.
    #[arg(long, default_value_t = 0.2)]
    er_thresh: f64,
    /// Spectral-flatness threshold.
    #[arg(long, default_value_t = 0.3)]
    sfw_thresh: f64,
    /// Segment length in seconds.
    #[arg(long, default_value_t = 0.5)]
    seg_len: f64,
    /// Fraction of overlap between consecutive segments.
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for detections.csv [default: $FCT_OUT_DIR or .].
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Signal lengths.
    #[arg(long = "n", value_delimiter = ',', default_value = "65536,1048576")]
    signal_lens: Vec<usize>,
    /// Kernel lengths.
    #[arg(long = "m", value_delimiter = ',', default_value = "128,1024")]
    kernel_lens: Vec<usize>,
    /// Timed runs per method; the median is reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Requested chunk length (rounded up to a power of two).
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long, default_value_t = 0x00fc_7001)]
    seed: u64,
    /// Output directory for bench.csv [default: $FCT_OUT_DIR or .].
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Transform(a) => cmd_transform(a),
        Command::Bank(a) => cmd_bank(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Fatal(msg)) => {
            eprintln!("error: {msg}");
            EXIT_PARTIAL
        }
    }
}

enum CliError {
    Usage(String),
    Fatal(String),
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Fatal(format!("cannot create {}: {e}", dir.display())))
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    if workers == Some(0) {
        return usage("--workers must be >= 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Fatal(e.to_string()))
}

/// Directories expand to the `.wav` files they contain, sorted by name.
/// Missing paths are kept so they are reported as per-file failures.
fn expand_inputs(inputs: &[PathBuf]) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .into_iter()
                .flatten()
                .flatten()
                .map(|e| e.path())
                .filter(|p| {
                    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    files
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into())
}

/// Serializes progress lines from worker threads.
struct Log(Mutex<()>);

impl Log {
    fn out(&self, line: String) {
        let _guard = self.0.lock().unwrap_or_else(|e| e.into_inner());
        println!("{line}");
    }

    fn err(&self, line: String) {
        let _guard = self.0.lock().unwrap_or_else(|e| e.into_inner());
        eprintln!("{line}");
    }
}

#[derive(Default)]
struct BankCache(Mutex<HashMap<u32, Arc<FilterBank>>>);

impl BankCache {
    fn get(&self, flags: &BankFlags, fs: u32) -> Result<Arc<FilterBank>, String> {
        if let Some(bank) = self.0.lock().unwrap().get(&fs) {
            return Ok(bank.clone());
        }
        let bank = Arc::new(filterbank::build_bank(&flags.config(fs)).map_err(|e| e.to_string())?);
        Ok(self.0.lock().unwrap().entry(fs).or_insert(bank).clone())
    }
}

fn cmd_transform(args: TransformArgs) -> Result<i32, CliError> {
    args.bank.validate().or_else(usage)?;
    let smooth = SmoothConfig::new(args.frame_period, args.smooth_width);
    if !args.raw {
        for fs in SUPPORTED_RATES {
            smooth
                .validate(fs as f64)
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    let mut formats = Vec::new();
    for f in &args.format {
        let f: Format = f.parse().or_else(usage)?;
        if !formats.contains(&f) {
            formats.push(f);
        }
    }
    let opts = ExportOptions {
        crop_low: args.crop_low,
        crop_high: args.crop_high,
        log_compress: args.log_compress,
        flip_rows: args.flip_rows,
        colormap: match args.colormap {
            ColormapArg::Gray => Colormap::Gray,
            ColormapArg::Heat => Colormap::Heat,
        },
    };
    for fs in SUPPORTED_RATES {
        let cfg = args.bank.config(fs);
        let bands = cfg.band_count() * if cfg.include_downward { 2 } else { 1 };
        if opts.crop_low + opts.crop_high >= bands {
            return usage(format!(
                "--crop-low + --crop-high must be < band count ({bands} at {fs} Hz)"
            ));
        }
    }
    let pool = thread_pool(args.workers)?;
    let out = out_dir(args.out.clone());
    ensure_dir(&out)?;

    let files = expand_inputs(&args.inputs);
    let log = Log(Mutex::new(()));
    let banks = BankCache::default();
    let started = Instant::now();

    let results: Vec<Result<f64, String>> = pool.install(|| {
        files
            .par_iter()
            .map(|path| {
                let result = transform_file(path, &args, &smooth, &opts, &formats, &out, &banks);
                match &result {
                    Ok((secs, written)) => log.out(format!(
                        "[ok] {} ({secs:.2} s) -> {}",
                        path.display(),
                        written.join(", ")
                    )),
                    Err(e) => log.err(format!("[error] {}: {e}", path.display())),
                }
                result.map(|(secs, _)| secs)
            })
            .collect()
    });

    let ok: Vec<f64> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().copied())
        .collect();
    println!(
        "transformed {}/{} files, {:.2} s of audio in {:.2} s",
        ok.len(),
        files.len(),
        ok.iter().sum::<f64>(),
        started.elapsed().as_secs_f64()
    );
    Ok(if ok.len() == files.len() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}

fn transform_file(
    path: &Path,
    args: &TransformArgs,
    smooth: &SmoothConfig,
    opts: &ExportOptions,
    formats: &[Format],
    out: &Path,
    banks: &BankCache,
) -> Result<(f64, Vec<String>), String> {
    let audio = audio_io::load_wav(path).map_err(|e| e.to_string())?;
    let bank = banks.get(&args.bank, audio.sample_rate())?;
    let gram = Transformer::new(&bank)
        .and_then(|t| t.transform(&audio, smooth, args.raw))
        .map_err(|e| e.to_string())?;
    let stem = file_stem(path);
    let mut written = Vec::new();
    for format in formats {
        let target = out.join(format!("{stem}.{}", format.extension()));
        export::write(*format, &gram, opts, &target).map_err(|e| e.to_string())?;
        written.push(target.display().to_string());
    }
    Ok((audio.duration_s(), written))
}

fn cmd_bank(args: BankArgs) -> Result<i32, CliError> {
    if !SUPPORTED_RATES.contains(&args.fs) {
        return usage(format!(
            "--fs must be one of 16000, 22050, 44100, got {}",
            args.fs
        ));
    }
    args.bank.validate().or_else(usage)?;
    let bank = filterbank::build_bank(&args.bank.config(args.fs))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let stdout = std::io::stdout();
    filterbank::write_summary_csv(&filterbank::bank_summary(&bank), stdout.lock())
        .map_err(|e| CliError::Fatal(e.to_string()))?;
    Ok(EXIT_OK)
}

fn cmd_detect(args: DetectArgs) -> Result<i32, CliError> {
    if !args.er_thresh.is_finite() || !args.sfw_thresh.is_finite() {
        return usage("thresholds must be finite");
    }
    for fs in SUPPORTED_RATES {
        audio_io::segment_layout(fs, args.seg_len, args.overlap)
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let pool = thread_pool(args.workers)?;
    let out = out_dir(args.out.clone());
    ensure_dir(&out)?;
    let thresholds = Thresholds {
        energy_ratio: args.er_thresh,
        flatness: args.sfw_thresh,
    };
    let files = expand_inputs(&args.inputs);
    let log = Log(Mutex::new(()));

    let results: Vec<Result<Vec<DetectionRow>, String>> = pool.install(|| {
        files
            .par_iter()
            .map(|path| {
                let result = detect_file(path, &args, thresholds);
                match &result {
                    Ok(rows) => log.out(format!(
                        "[ok] {}: {} segments, {} detected",
                        path.display(),
                        rows.len(),
                        rows.iter().filter(|r| r.decision.detected).count()
                    )),
                    Err(e) => log.err(format!("[error] {}: {e}", path.display())),
                }
                result
            })
            .collect()
    });

    let failures = results.iter().filter(|r| r.is_err()).count();
    let rows: Vec<DetectionRow> = results.into_iter().flatten().flatten().collect();
    let target = out.join("detections.csv");
    File::create(&target)
        .map(BufWriter::new)
        .and_then(|mut w| {
            audio_io::write_detections_csv(&rows, &mut w)?;
            w.flush()
        })
        .map_err(|e| CliError::Fatal(format!("{}: {e}", target.display())))?;
    println!(
        "{} segments, {} detected -> {}",
        rows.len(),
        rows.iter().filter(|r| r.decision.detected).count(),
        target.display()
    );
    Ok(if failures == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

fn detect_file(
    path: &Path,
    args: &DetectArgs,
    thresholds: Thresholds,
) -> Result<Vec<DetectionRow>, String> {
    let audio = audio_io::load_wav(path).map_err(|e| e.to_string())?;
    let segments =
        audio_io::segment(&audio, args.seg_len, args.overlap).map_err(|e| e.to_string())?;
    let file = path.display().to_string();
    segments
        .iter()
        .map(|seg| {
            let decision =
                audio_io::detect_activity(seg, &audio, thresholds).map_err(|e| e.to_string())?;
            let start = seg.origin().offset_s;
            Ok(DetectionRow {
                file: file.clone(),
                seg_start_s: start,
                seg_end_s: start + seg.duration_s(),
                decision,
            })
        })
        .collect()
}

fn cmd_bench(args: BenchArgs) -> Result<i32, CliError> {
    if args.runs == 0 {
        return usage("--runs must be >= 1");
    }
    if args
        .signal_lens
        .iter()
        .chain(&args.kernel_lens)
        .any(|&v| v == 0)
    {
        return usage("--n and --m values must be >= 1");
    }
    let out = out_dir(args.out.clone());
    ensure_dir(&out)?;
    let cfg = BenchConfig {
        signal_lens: args.signal_lens,
        kernel_lens: args.kernel_lens,
        runs: args.runs,
        target_chunk: args.chunk,
        seed: args.seed,
    };
    let rows = bench::run_grid(&cfg).map_err(|e| CliError::Fatal(e.to_string()))?;
    let target = out.join("bench.csv");
    File::create(&target)
        .map(BufWriter::new)
        .and_then(|mut w| {
            bench::write_csv(&rows, &mut w)?;
            w.flush()
        })
        .map_err(|e| CliError::Fatal(format!("{}: {e}", target.display())))?;
    for r in rows.iter().filter(|r| r.method == Method::Chunked) {
        println!(
            "N={} M={} chunk={}: chunked is {:.2}x the full-FFT speed",
            r.n, r.m, r.chunk_len, r.speedup_vs_full
        );
    }
    println!("wrote {}", target.display());
    Ok(EXIT_OK)
}
