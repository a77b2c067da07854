//! Fast Chirplet Transform.
//!
//! Builds Q-constant banks of chirplet kernels, convolves audio against them
//! with chunked overlap-save FFT convolution, takes the modulus and averages
//! it in time with a Gaussian low-pass filter. The resulting bands x frames
//! [`Chirpletgram`] can be exported as CSV, a compact binary matrix or PNG.
//!
//! ```
//! use fastchirplet::{build_bank, transform, AudioBuffer, BankConfig, SmoothConfig};
//!
//! let bank = build_bank(&BankConfig::new(2, 8, 16000.0)).unwrap();
//! let audio = AudioBuffer::new(vec![0.0; 8000], 16000).unwrap();
//! let gram = transform(&audio, &bank, &SmoothConfig::new(0.001, 0.01), false).unwrap();
//! assert_eq!((gram.bands(), gram.frames()), (16, 500));
//! ```

pub mod audio_io;
pub mod bench;
pub mod cli;
pub mod export;
pub mod fastconv;
pub mod filterbank;
pub mod kernelgen;
pub mod scattering;

pub use audio_io::{detect_activity, load_wav, segment, ActivityDecision, AudioBuffer, Thresholds};
pub use export::{ExportOptions, Format};
pub use fastconv::{convolve_chunked, convolve_full_fft, convolve_naive, plan_for, ConvPlan};
pub use filterbank::{bank_summary, build_bank, BankConfig, FilterBank};
pub use kernelgen::{ChirpParams, ChirpletFilter, Direction, KernelVariant};
pub use scattering::{transform, Chirpletgram, SmoothConfig, Transformer};
