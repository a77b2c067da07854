//! WAV decoding, segmentation and the energy / spectral-flatness activity
//! detector.

use std::io::Write;
use std::path::{Path, PathBuf};

use realfft::RealFftPlanner;
use thiserror::Error;

/// Sample rates accepted without resampling.
pub const SUPPORTED_RATES: [u32; 3] = [16000, 22050, 44100];

/// Detector frame length and hop (50% overlap).
pub const FRAME_LEN: usize = 256;
pub const FRAME_HOP: usize = 128;

const FLATNESS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("segment sampled at {segment} Hz but file context at {context} Hz")]
    ContextMismatch { segment: u32, context: u32 },
    #[error("need at least {FRAME_LEN} samples for the detector, got {0}")]
    TooShort(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Origin {
    pub path: Option<PathBuf>,
    /// Offset of the first sample within the source, in seconds.
    pub offset_s: f64,
}

/// Mono samples in `[-1, 1)` at one of [`SUPPORTED_RATES`].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
    origin: Origin,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(AudioError::UnsupportedFormat(format!(
                "sample rate {sample_rate} Hz (supported: 16000, 22050, 44100)"
            )));
        }
        if samples.is_empty() {
            return Err(AudioError::CorruptFile("no samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            origin: Origin::default(),
        })
    }

    pub fn from_pcm16(pcm: &[i16], sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(
            pcm.iter().map(|&s| s as f64 / 32768.0).collect(),
            sample_rate,
        )
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            ..self.clone()
        }
    }
}

/// Reads a 16-bit PCM WAV file. Stereo is mixed down by averaging channels.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let reader = hound::WavReader::new(file).map_err(|e| match e {
        hound::Error::Unsupported => {
            AudioError::UnsupportedFormat("unsupported WAV encoding".into())
        }
        other => AudioError::CorruptFile(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{:?} {}-bit samples (only 16-bit PCM is supported)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels (mono or stereo only)",
            spec.channels
        )));
    }
    if !SUPPORTED_RATES.contains(&spec.sample_rate) {
        return Err(AudioError::UnsupportedFormat(format!(
            "sample rate {} Hz (supported: 16000, 22050, 44100)",
            spec.sample_rate
        )));
    }
    let pcm = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| AudioError::CorruptFile(e.to_string()))?;
    let channels = spec.channels as usize;
    let samples: Vec<f64> = pcm
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64 / 32768.0)
        .collect();
    Ok(
        AudioBuffer::new(samples, spec.sample_rate)?.with_origin(Origin {
            path: Some(path.to_path_buf()),
            offset_s: 0.0,
        }),
    )
}

/// Writes a mono 16-bit PCM WAV. Samples are clipped to the PCM range.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_audio_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        other => AudioError::CorruptFile(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_audio_err)?;
    for &s in &audio.samples {
        let pcm = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(pcm).map_err(to_audio_err)?;
    }
    writer.finalize().map_err(to_audio_err)
}

/// Window and hop lengths in samples for a segmentation request.
pub fn segment_layout(
    sample_rate: u32,
    seg_len_s: f64,
    overlap_frac: f64,
) -> Result<(usize, usize), AudioError> {
    let bad = |msg: String| Err(AudioError::InvalidSegmentation(msg));
    if !(0.0..1.0).contains(&overlap_frac) {
        return bad(format!("overlap must be in [0, 1), got {overlap_frac}"));
    }
    let sr = sample_rate as f64;
    if !seg_len_s.is_finite() || seg_len_s * sr < 2.0 {
        return bad(format!(
            "segment length {seg_len_s} s is shorter than 2 samples"
        ));
    }
    let window = (seg_len_s * sr).round() as usize;
    let overlap = (seg_len_s * overlap_frac * sr).round() as usize;
    if overlap >= window {
        return bad(format!(
            "overlap {overlap_frac} leaves no hop at this segment length"
        ));
    }
    Ok((window, window - overlap))
}

/// Cuts the buffer into windows of `seg_len_s`; a trailing partial window is
/// dropped.
pub fn segment(
    buffer: &AudioBuffer,
    seg_len_s: f64,
    overlap_frac: f64,
) -> Result<Vec<AudioBuffer>, AudioError> {
    let (window, hop) = segment_layout(buffer.sample_rate, seg_len_s, overlap_frac)?;
    let sr = buffer.sample_rate as f64;
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= buffer.len() {
        out.push(AudioBuffer {
            samples: buffer.samples[start..start + window].to_vec(),
            sample_rate: buffer.sample_rate,
            origin: Origin {
                path: buffer.origin.path.clone(),
                offset_s: buffer.origin.offset_s + start as f64 / sr,
            },
        });
        start += hop;
    }
    Ok(out)
}

/// Detector thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub energy_ratio: f64,
    pub flatness: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            energy_ratio: 0.2,
            flatness: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityDecision {
    pub energy_ratio: f64,
    pub spectral_flatness_weighted_mean: f64,
    pub detected: bool,
    pub thresholds: Thresholds,
}

impl ActivityDecision {
    pub fn new(energy_ratio: f64, flatness: f64, thresholds: Thresholds) -> Self {
        Self {
            energy_ratio,
            spectral_flatness_weighted_mean: flatness,
            detected: energy_ratio > thresholds.energy_ratio && flatness < thresholds.flatness,
            thresholds,
        }
    }
}

fn frames(samples: &[f64]) -> impl Iterator<Item = &[f64]> {
    let count = if samples.len() >= FRAME_LEN {
        (samples.len() - FRAME_LEN) / FRAME_HOP + 1
    } else {
        0
    };
    (0..count).map(move |i| &samples[i * FRAME_HOP..i * FRAME_HOP + FRAME_LEN])
}

/// Sum of squares of each 256-sample frame.
pub fn frame_energies(samples: &[f64]) -> Vec<f64> {
    frames(samples)
        .map(|f| f.iter().map(|x| x * x).sum())
        .collect()
}

/// Geometric over arithmetic mean of the Hann-windowed magnitude spectrum of
/// each frame, with magnitudes floored at 1e-12.
pub fn frame_flatness(samples: &[f64]) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FRAME_LEN);
    let window: Vec<f64> = (0..FRAME_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_LEN as f64).cos())
        .collect();
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    frames(samples)
        .map(|frame| {
            for ((slot, &x), &w) in input.iter_mut().zip(frame).zip(&window) {
                *slot = x * w;
            }
            fft.process(&mut input, &mut spectrum)
                .expect("planner-sized buffers");
            let mags: Vec<f64> = spectrum
                .iter()
                .map(|z| z.norm().max(FLATNESS_FLOOR))
                .collect();
            let count = mags.len() as f64;
            let geometric = (mags.iter().map(|m| m.ln()).sum::<f64>() / count).exp();
            let arithmetic = mags.iter().sum::<f64>() / count;
            (geometric / arithmetic).clamp(0.0, 1.0)
        })
        .collect()
}

/// Nearest-rank percentile (`pct` in (0, 100]) of unsorted values.
pub fn percentile_nearest_rank(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// `er = mean(segment frame energy) / p95(file frame energy)` and the
/// energy-weighted mean spectral flatness of the segment.
pub fn activity_statistics(
    segment: &AudioBuffer,
    file_context: &AudioBuffer,
) -> Result<(f64, f64), AudioError> {
    if segment.sample_rate != file_context.sample_rate {
        return Err(AudioError::ContextMismatch {
            segment: segment.sample_rate,
            context: file_context.sample_rate,
        });
    }
    let energies = frame_energies(&segment.samples);
    if energies.is_empty() {
        return Err(AudioError::TooShort(segment.len()));
    }
    let file_energies = frame_energies(&file_context.samples);
    let reference = percentile_nearest_rank(&file_energies, 95.0)
        .ok_or(AudioError::TooShort(file_context.len()))?;
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let energy_ratio = if reference > 0.0 {
        mean / reference
    } else {
        0.0
    };

    let flatness = frame_flatness(&segment.samples);
    let total: f64 = energies.iter().sum();
    let weighted = if total > 0.0 {
        flatness
            .iter()
            .zip(&energies)
            .map(|(f, e)| f * e)
            .sum::<f64>()
            / total
    } else {
        flatness.iter().sum::<f64>() / flatness.len() as f64
    };
    Ok((energy_ratio, weighted.clamp(0.0, 1.0)))
}

pub fn detect_activity(
    segment: &AudioBuffer,
    file_context: &AudioBuffer,
    thresholds: Thresholds,
) -> Result<ActivityDecision, AudioError> {
    let (er, sfw) = activity_statistics(segment, file_context)?;
    Ok(ActivityDecision::new(er, sfw, thresholds))
}

/// One line of the detector CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub file: String,
    pub seg_start_s: f64,
    pub seg_end_s: f64,
    pub decision: ActivityDecision,
}

pub const DETECTION_HEADER: &str = "file,seg_start_s,seg_end_s,er,sfw,detected";

pub fn write_detections_csv<W: Write>(rows: &[DetectionRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DETECTION_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.9e},{:.9e},{}",
            csv_field(&r.file),
            r.seg_start_s,
            r.seg_end_s,
            r.decision.energy_ratio,
            r.decision.spectral_flatness_weighted_mean,
            r.decision.detected
        )?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn buffer(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(samples, 16000).unwrap()
    }

    #[test]
    fn rejects_unsupported_rates() {
        assert!(matches!(
            AudioBuffer::new(vec![0.0; 10], 8000),
            Err(AudioError::UnsupportedFormat(_))
        ));
        assert!(AudioBuffer::new(vec![], 16000).is_err());
    }

    #[test]
    fn wav_round_trip_and_mixdown() {
        let dir = tempfile::tempdir().unwrap();
        let mono = dir.path().join("mono.wav");
        let pcm: Vec<i16> = (0..16000).map(|i| ((i % 200) as i16 - 100) * 300).collect();
        write_wav(&mono, &AudioBuffer::from_pcm16(&pcm, 16000).unwrap()).unwrap();
        let loaded = load_wav(&mono).unwrap();
        assert_eq!(loaded.len(), 16000);
        assert_eq!(loaded.sample_rate(), 16000);
        assert_eq!(loaded.samples()[0], -30000.0 / 32768.0);

        let stereo = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(1000i16).unwrap();
            w.write_sample(-3000i16).unwrap();
        }
        w.finalize().unwrap();
        let loaded = load_wav(&stereo).unwrap();
        assert_eq!(loaded.len(), 10);
        assert!(loaded.samples().iter().all(|&s| s == -1000.0 / 32768.0));
    }

    #[test]
    fn wav_errors() {
        let dir = tempfile::tempdir().unwrap();
        let low = dir.path().join("8k.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&low, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            load_wav(&low),
            Err(AudioError::UnsupportedFormat(_))
        ));

        let float = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&float, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            load_wav(&float),
            Err(AudioError::UnsupportedFormat(_))
        ));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
        assert!(matches!(load_wav(&junk), Err(AudioError::CorruptFile(_))));

        assert!(matches!(
            load_wav(dir.path().join("missing.wav")),
            Err(AudioError::Io(_))
        ));
    }

    #[test]
    fn segmentation_counts() {
        let one_second = buffer(vec![0.0; 16000]);
        assert_eq!(segment(&one_second, 0.5, 0.0).unwrap().len(), 2);
        let dense = segment(&one_second, 0.5, 0.9).unwrap();
        assert_eq!(dense.len(), 11);
        assert!((dense[1].origin().offset_s - 0.05).abs() < 1e-12);
        let short = buffer(vec![0.0; 4000]);
        assert!(segment(&short, 0.5, 0.0).unwrap().is_empty());
        assert!(segment(&one_second, 0.5, 1.0).is_err());
        assert!(segment(&one_second, 0.5, -0.1).is_err());
        assert!(segment(&one_second, 1e-4, 0.0).is_err());
    }

    #[test]
    fn segment_overlap_is_exact() {
        for (seg, ov) in [(0.5, 0.3), (0.31, 0.9), (0.123, 0.5), (0.0403125, 0.25)] {
            let (window, hop) = segment_layout(22050, seg, ov).unwrap();
            assert_eq!(window - hop, (seg * ov * 22050.0).round() as usize);
        }
    }

    #[test]
    fn percentile_rule() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&v, 95.0), Some(19.0));
        assert_eq!(percentile_nearest_rank(&[3.0], 95.0), Some(3.0));
        assert_eq!(percentile_nearest_rank(&[], 95.0), None);
    }

    fn tone_in_quiet() -> (AudioBuffer, AudioBuffer, AudioBuffer) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut samples: Vec<f64> = (0..32000).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
        for (k, s) in samples[8000..16000].iter_mut().enumerate() {
            *s += 0.5 * (2.0 * PI * 2000.0 * k as f64 / 16000.0).sin();
        }
        let file = buffer(samples);
        let segs = segment(&file, 0.5, 0.0).unwrap();
        (file, segs[1].clone(), segs[3].clone())
    }

    #[test]
    fn tone_detected_noise_rejected() {
        let (file, tone, quiet) = tone_in_quiet();
        let hit = detect_activity(&tone, &file, Thresholds::default()).unwrap();
        assert!(hit.detected, "{hit:?}");
        let miss = detect_activity(&quiet, &file, Thresholds::default()).unwrap();
        assert!(!miss.detected, "{miss:?}");
        assert!(miss.spectral_flatness_weighted_mean > 0.5);
    }

    #[test]
    fn energy_ratio_is_scale_free() {
        let (file, tone, _) = tone_in_quiet();
        let (er, _) = activity_statistics(&tone, &file).unwrap();
        let (er_scaled, _) = activity_statistics(&tone.scaled(3.7), &file.scaled(3.7)).unwrap();
        assert!((er - er_scaled).abs() <= 1e-10 * er);
    }

    #[test]
    fn silence_is_flat_and_undetected() {
        let silent = buffer(vec![0.0; 4000]);
        let d = detect_activity(&silent, &silent, Thresholds::default()).unwrap();
        assert_eq!(d.energy_ratio, 0.0);
        assert_eq!(d.spectral_flatness_weighted_mean, 1.0);
        assert!(!d.detected);
    }

    #[test]
    fn detector_errors() {
        let a = buffer(vec![0.1; 1000]);
        let b = AudioBuffer::new(vec![0.1; 1000], 22050).unwrap();
        assert!(matches!(
            detect_activity(&a, &b, Thresholds::default()),
            Err(AudioError::ContextMismatch { .. })
        ));
        let tiny = buffer(vec![0.1; 100]);
        assert!(matches!(
            detect_activity(&tiny, &a, Thresholds::default()),
            Err(AudioError::TooShort(100))
        ));
    }

    #[test]
    fn detection_csv_layout() {
        let row = DetectionRow {
            file: "a,b.wav".into(),
            seg_start_s: 0.0,
            seg_end_s: 0.5,
            decision: ActivityDecision::new(0.5, 0.1, Thresholds::default()),
        };
        let mut buf = Vec::new();
        write_detections_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], DETECTION_HEADER);
        assert!(lines[1].starts_with("\"a,b.wav\",0,0.5,"));
        assert!(lines[1].ends_with(",true"));
    }
}
