//! FFT convolution of long signals against short kernels.
//!
//! [`convolve_chunked`] runs overlap-save: the signal is cut into windows of
//! `L` samples advancing by `L - (M - 1)`, each window is multiplied with the
//! kernel spectrum and the first `M - 1` samples of every inverse transform
//! are discarded. The cost is `O(N log M)` for `L` proportional to `M`.
//!
//! All entry points return the centred "same" convolution: output sample
//! `i` is full-convolution sample `i + (M - 1) / 2`, and samples outside the
//! signal are zero.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Smallest chunk length picked by [`plan_for`].
pub const MIN_CHUNK: usize = 1024;

/// Upper bound on `N * M` accepted by [`convolve_naive`].
pub const NAIVE_GUARD: usize = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConvError {
    #[error("plan was built for kernel length {plan}, got kernel of length {kernel}")]
    PlanMismatch { plan: usize, kernel: usize },
    #[error("signal and kernel must both be non-empty")]
    EmptyInput,
    #[error("naive convolution of {n} x {m} samples exceeds the 2^28 guard")]
    SizeGuard { n: usize, m: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

/// Block layout for overlap-save.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvPlan {
    kernel_len: usize,
    chunk_len: usize,
}

impl ConvPlan {
    pub fn new(kernel_len: usize, chunk_len: usize) -> Result<Self, ConvError> {
        if kernel_len == 0 {
            return Err(ConvError::InvalidPlan("kernel length must be >= 1".into()));
        }
        if !chunk_len.is_power_of_two() {
            return Err(ConvError::InvalidPlan(format!(
                "chunk length {chunk_len} is not a power of two"
            )));
        }
        if chunk_len < 2 * kernel_len {
            return Err(ConvError::InvalidPlan(format!(
                "chunk length {chunk_len} is shorter than twice the kernel ({kernel_len})"
            )));
        }
        Ok(Self {
            kernel_len,
            chunk_len,
        })
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn fft_size(&self) -> usize {
        self.chunk_len
    }

    pub fn overlap(&self) -> usize {
        self.kernel_len - 1
    }

    /// Valid output samples produced per chunk.
    pub fn hop(&self) -> usize {
        self.chunk_len - self.overlap()
    }
}

/// `max(next_pow2(2M), next_pow2(target), 1024)`.
pub fn plan_for(kernel_len: usize, target_chunk: Option<usize>) -> ConvPlan {
    let kernel_len = kernel_len.max(1);
    let chunk_len = (2 * kernel_len)
        .next_power_of_two()
        .max(target_chunk.unwrap_or(0).next_power_of_two())
        .max(MIN_CHUNK);
    ConvPlan {
        kernel_len,
        chunk_len,
    }
}

fn same_offset(kernel_len: usize) -> usize {
    (kernel_len - 1) / 2
}

fn check_inputs(n: usize, m: usize) -> Result<(), ConvError> {
    if n == 0 || m == 0 {
        Err(ConvError::EmptyInput)
    } else {
        Ok(())
    }
}

/// Overlap-save convolver for a real kernel. The kernel spectrum is computed
/// once; [`RealConvolver::apply`] can be called on any number of signals.
pub struct RealConvolver {
    plan: ConvPlan,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    spectrum: Vec<Complex64>,
}

impl RealConvolver {
    pub fn new(kernel: &[f64], plan: ConvPlan) -> Result<Self, ConvError> {
        if kernel.is_empty() {
            return Err(ConvError::EmptyInput);
        }
        if plan.kernel_len != kernel.len() {
            return Err(ConvError::PlanMismatch {
                plan: plan.kernel_len,
                kernel: kernel.len(),
            });
        }
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(plan.chunk_len);
        let inverse = planner.plan_fft_inverse(plan.chunk_len);

        let mut padded = forward.make_input_vec();
        padded[..kernel.len()].copy_from_slice(kernel);
        let mut spectrum = forward.make_output_vec();
        forward
            .process(&mut padded, &mut spectrum)
            .expect("buffer sizes come from the planner");
        // Fold the inverse-transform normalisation into the kernel.
        let scale = 1.0 / plan.chunk_len as f64;
        spectrum.iter_mut().for_each(|z| *z *= scale);

        Ok(Self {
            plan,
            forward,
            inverse,
            spectrum,
        })
    }

    pub fn plan(&self) -> &ConvPlan {
        &self.plan
    }

    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        let mut out = vec![0.0; n];
        if n == 0 {
            return out;
        }
        let len = self.plan.chunk_len;
        let overlap = self.plan.overlap();
        let hop = self.plan.hop();
        let offset = same_offset(self.plan.kernel_len);

        let mut block = self.forward.make_input_vec();
        let mut freq = self.forward.make_output_vec();
        let mut scratch_fwd = self.forward.make_scratch_vec();
        let mut scratch_inv = self.inverse.make_scratch_vec();

        let mut start_out = 0;
        while start_out < n {
            fill_block(
                &mut block,
                signal,
                start_out as isize + offset as isize - overlap as isize,
            );
            self.forward
                .process_with_scratch(&mut block, &mut freq, &mut scratch_fwd)
                .expect("buffer sizes come from the planner");
            for (x, h) in freq.iter_mut().zip(&self.spectrum) {
                *x *= h;
            }
            // The DC and Nyquist bins of a real signal's spectrum are real.
            freq[0].im = 0.0;
            freq[len / 2].im = 0.0;
            self.inverse
                .process_with_scratch(&mut freq, &mut block, &mut scratch_inv)
                .expect("buffer sizes come from the planner");
            let take = hop.min(n - start_out);
            out[start_out..start_out + take].copy_from_slice(&block[overlap..overlap + take]);
            start_out += hop;
        }
        out
    }
}

/// Copies `signal[start..start + block.len()]` into `block`, zero-filling
/// anything outside the signal.
fn fill_block<T>(block: &mut [T], signal: &[f64], start: isize)
where
    T: Copy + Default + From<f64>,
{
    block.fill(T::default());
    let lo = start.max(0);
    let hi = (start + block.len() as isize).min(signal.len() as isize);
    if lo < hi {
        let dst = &mut block[(lo - start) as usize..(hi - start) as usize];
        for (slot, &x) in dst.iter_mut().zip(&signal[lo as usize..hi as usize]) {
            *slot = T::from(x);
        }
    }
}

/// Overlap-save convolver for a complex (analytic) kernel applied to a real
/// signal.
pub struct ComplexConvolver {
    plan: ConvPlan,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex64>,
}

impl ComplexConvolver {
    pub fn new(kernel: &[Complex64], plan: ConvPlan) -> Result<Self, ConvError> {
        if kernel.is_empty() {
            return Err(ConvError::EmptyInput);
        }
        if plan.kernel_len != kernel.len() {
            return Err(ConvError::PlanMismatch {
                plan: plan.kernel_len,
                kernel: kernel.len(),
            });
        }
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(plan.chunk_len);
        let inverse = planner.plan_fft_inverse(plan.chunk_len);
        let scale = 1.0 / plan.chunk_len as f64;
        let mut spectrum = vec![Complex64::default(); plan.chunk_len];
        for (slot, &k) in spectrum.iter_mut().zip(kernel) {
            *slot = k * scale;
        }
        forward.process(&mut spectrum);
        Ok(Self {
            plan,
            forward,
            inverse,
            spectrum,
        })
    }

    pub fn plan(&self) -> &ConvPlan {
        &self.plan
    }

    pub fn apply(&self, signal: &[f64]) -> Vec<Complex64> {
        let n = signal.len();
        let mut out = vec![Complex64::default(); n];
        let overlap = self.plan.overlap();
        let hop = self.plan.hop();
        let offset = same_offset(self.plan.kernel_len);
        let mut block = vec![Complex64::default(); self.plan.chunk_len];
        let mut scratch = vec![
            Complex64::default();
            self.forward
                .get_inplace_scratch_len()
                .max(self.inverse.get_inplace_scratch_len())
        ];

        let mut start_out = 0;
        while start_out < n {
            fill_block(
                &mut block,
                signal,
                start_out as isize + offset as isize - overlap as isize,
            );
            self.forward.process_with_scratch(&mut block, &mut scratch);
            for (x, h) in block.iter_mut().zip(&self.spectrum) {
                *x *= h;
            }
            self.inverse.process_with_scratch(&mut block, &mut scratch);
            let take = hop.min(n - start_out);
            out[start_out..start_out + take].copy_from_slice(&block[overlap..overlap + take]);
            start_out += hop;
        }
        out
    }
}

/// Chunked overlap-save convolution with a real kernel.
pub fn convolve_chunked(
    signal: &[f64],
    kernel: &[f64],
    plan: &ConvPlan,
) -> Result<Vec<f64>, ConvError> {
    check_inputs(signal.len(), kernel.len())?;
    Ok(RealConvolver::new(kernel, *plan)?.apply(signal))
}

/// Chunked overlap-save convolution with a complex kernel.
pub fn convolve_chunked_complex(
    signal: &[f64],
    kernel: &[Complex64],
    plan: &ConvPlan,
) -> Result<Vec<Complex64>, ConvError> {
    check_inputs(signal.len(), kernel.len())?;
    Ok(ComplexConvolver::new(kernel, *plan)?.apply(signal))
}

/// Direct time-domain convolution. Test oracle.
pub fn convolve_naive(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>, ConvError> {
    let (n, m) = (signal.len(), kernel.len());
    check_inputs(n, m)?;
    if n.saturating_mul(m) > NAIVE_GUARD {
        return Err(ConvError::SizeGuard { n, m });
    }
    let offset = same_offset(m);
    Ok((0..n)
        .map(|i| {
            let full = i + offset;
            // full = j + k with 0 <= j < n, 0 <= k < m
            let k_lo = full.saturating_sub(n - 1);
            let k_hi = full.min(m - 1);
            (k_lo..=k_hi).map(|k| kernel[k] * signal[full - k]).sum()
        })
        .collect())
}

/// One FFT over the whole signal, padded to `next_pow2(N + M - 1)`.
pub fn convolve_full_fft(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>, ConvError> {
    let (n, m) = (signal.len(), kernel.len());
    check_inputs(n, m)?;
    let size = (n + m - 1).next_power_of_two().max(2);
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);

    let mut x = forward.make_input_vec();
    x[..n].copy_from_slice(signal);
    let mut h = forward.make_input_vec();
    h[..m].copy_from_slice(kernel);
    let mut xs = forward.make_output_vec();
    let mut hs = forward.make_output_vec();
    forward
        .process(&mut x, &mut xs)
        .expect("planner-sized buffers");
    forward
        .process(&mut h, &mut hs)
        .expect("planner-sized buffers");

    let scale = 1.0 / size as f64;
    for (a, b) in xs.iter_mut().zip(&hs) {
        *a *= b * scale;
    }
    xs[0].im = 0.0;
    xs[size / 2].im = 0.0;
    inverse
        .process(&mut xs, &mut x)
        .expect("planner-sized buffers");
    let offset = same_offset(m);
    Ok(x[offset..offset + n].to_vec())
}

/// `max |a - b| / max |reference|`, with a zero reference falling back to the
/// absolute error.
pub fn relative_linf(reference: &[f64], candidate: &[f64]) -> f64 {
    assert_eq!(reference.len(), candidate.len());
    let scale = reference.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let err = reference
        .iter()
        .zip(candidate)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn naive_small_hand_case() {
        assert_eq!(
            convolve_naive(&[1.0, 2.0, 3.0], &[1.0, 1.0]).unwrap(),
            vec![1.0, 3.0, 5.0]
        );
    }

    #[test]
    fn impulse_reproduces_centered_kernel() {
        let kernel = [0.5, -1.0, 2.0, 3.0, -0.25];
        let mut signal = vec![0.0; 32];
        signal[10] = 1.0;
        let plan = plan_for(kernel.len(), None);
        for out in [
            convolve_naive(&signal, &kernel).unwrap(),
            convolve_full_fft(&signal, &kernel).unwrap(),
            convolve_chunked(&signal, &kernel, &plan).unwrap(),
        ] {
            for (k, &h) in kernel.iter().enumerate() {
                assert!((out[10 + k - 2] - h).abs() < 1e-12);
            }
            assert!(out[..8].iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn zeros_in_zeros_out() {
        let out = convolve_naive(&[0.0; 50], &[1.0, 2.0, 3.0]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chunked_matches_naive_reference_case() {
        let signal = random(8192, 1);
        let kernel = random(160, 2);
        let plan = plan_for(160, None);
        let naive = convolve_naive(&signal, &kernel).unwrap();
        let chunked = convolve_chunked(&signal, &kernel, &plan).unwrap();
        assert!(relative_linf(&naive, &chunked) < 1e-9);
    }

    #[test]
    fn full_fft_matches_naive() {
        let signal = random(4096, 3);
        let kernel = random(101, 4);
        let naive = convolve_naive(&signal, &kernel).unwrap();
        let full = convolve_full_fft(&signal, &kernel).unwrap();
        let chunked = convolve_chunked(&signal, &kernel, &plan_for(101, None)).unwrap();
        assert!(relative_linf(&naive, &full) < 1e-9);
        assert!(relative_linf(&full, &chunked) < 1e-9);
    }

    #[test]
    fn just_above_power_of_two() {
        let signal = random((1 << 14) + 1, 5);
        let kernel = random(64, 6);
        let plan = plan_for(64, None);
        let naive = convolve_naive(&signal, &kernel).unwrap();
        let chunked = convolve_chunked(&signal, &kernel, &plan).unwrap();
        assert_eq!(chunked.len(), (1 << 14) + 1);
        assert!(relative_linf(&naive, &chunked) < 1e-9);
        // Blocks stay at the plan size regardless of the signal length.
        assert_eq!(plan.fft_size(), 1024);
    }

    #[test]
    fn complex_kernel_matches_per_component_naive() {
        let signal = random(3000, 7);
        let re = random(77, 8);
        let im = random(77, 9);
        let kernel: Vec<Complex64> = re
            .iter()
            .zip(&im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let out = convolve_chunked_complex(&signal, &kernel, &plan_for(77, None)).unwrap();
        let out_re: Vec<f64> = out.iter().map(|z| z.re).collect();
        let out_im: Vec<f64> = out.iter().map(|z| z.im).collect();
        assert!(relative_linf(&convolve_naive(&signal, &re).unwrap(), &out_re) < 1e-9);
        assert!(relative_linf(&convolve_naive(&signal, &im).unwrap(), &out_im) < 1e-9);
    }

    #[test]
    fn plan_rules() {
        assert_eq!(plan_for(160, None).chunk_len(), 1024);
        assert_eq!(plan_for(1, None).chunk_len(), 1024);
        assert_eq!(plan_for(3000, None).chunk_len(), 8192);
        assert_eq!(plan_for(160, Some(3000)).chunk_len(), 4096);
        let p = plan_for(160, None);
        assert_eq!(p.overlap(), 159);
        assert_eq!(p.hop(), 1024 - 159);
    }

    #[test]
    fn plan_validation_and_mismatch() {
        assert!(ConvPlan::new(100, 1000).is_err());
        assert!(ConvPlan::new(600, 1024).is_err());
        let plan = ConvPlan::new(8, 16).unwrap();
        assert_eq!(
            convolve_chunked(&[1.0; 10], &[1.0; 9], &plan).unwrap_err(),
            ConvError::PlanMismatch { plan: 8, kernel: 9 }
        );
        assert_eq!(
            convolve_chunked(&[], &[1.0; 8], &plan).unwrap_err(),
            ConvError::EmptyInput
        );
    }

    #[test]
    fn naive_guard() {
        let big = vec![0.0; 1 << 19];
        let kernel = vec![0.0; 1 << 10];
        assert!(matches!(
            convolve_naive(&big, &kernel),
            Err(ConvError::SizeGuard { .. })
        ));
    }

    #[test]
    fn chunk_size_independence() {
        let signal = random(5000, 10);
        let kernel = random(200, 11);
        let base = convolve_chunked(&signal, &kernel, &ConvPlan::new(200, 512).unwrap()).unwrap();
        for chunk in [1024, 4096, 8192] {
            let other =
                convolve_chunked(&signal, &kernel, &ConvPlan::new(200, chunk).unwrap()).unwrap();
            assert!(relative_linf(&base, &other) < 1e-10);
        }
    }

    #[test]
    fn shift_covariance() {
        let kernel = random(50, 12);
        let signal = random(2000, 13);
        let shift = 37;
        let mut shifted = vec![0.0; 2000];
        shifted[shift..].copy_from_slice(&signal[..2000 - shift]);
        let plan = plan_for(50, None);
        let a = convolve_chunked(&signal, &kernel, &plan).unwrap();
        let b = convolve_chunked(&shifted, &kernel, &plan).unwrap();
        for i in (shift + 50)..(2000 - 50) {
            assert!((b[i] - a[i - shift]).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn oracle_equivalence(n in 1usize..3000, m in 1usize..300, seed in any::<u64>()) {
            let signal = random(n, seed);
            let kernel = random(m, seed ^ 0x9e37);
            let naive = convolve_naive(&signal, &kernel).unwrap();
            let chunked = convolve_chunked(&signal, &kernel, &plan_for(m, None)).unwrap();
            let full = convolve_full_fft(&signal, &kernel).unwrap();
            prop_assert!(relative_linf(&naive, &chunked) < 1e-9);
            prop_assert!(relative_linf(&naive, &full) < 1e-9);
        }

        #[test]
        fn linearity(n in 1usize..2000, m in 1usize..200, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let x = random(n, seed);
            let y = random(n, seed.wrapping_add(1));
            let k = random(m, seed.wrapping_add(2));
            let plan = plan_for(m, None);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = convolve_chunked(&mix, &k, &plan).unwrap();
            let cx = convolve_chunked(&x, &k, &plan).unwrap();
            let cy = convolve_chunked(&y, &k, &plan).unwrap();
            let rhs: Vec<f64> = cx.iter().zip(&cy).map(|(p, q)| a * p + b * q).collect();
            prop_assert!(relative_linf(&rhs, &lhs) < 1e-10);
        }
    }
}
