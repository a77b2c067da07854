//! Chirpletgram serialization: CSV, the `FCT1` binary matrix and PNG.
//!
//! `FCT1` layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `FCT1` |
//! | 4 | `u32` bands |
//! | 4 | `u32` frames |
//! | 8 | `f64` frame period (s) |
//! | 8 | `f64` source sample rate (Hz) |
//! | 4 * bands * frames | `f32` values, band-major |
//! | 24 * bands | `f64` lambda, f0, f1 per band |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::kernelgen::Direction;
use crate::scattering::{BandMeta, Chirpletgram};

pub const MAGIC: &[u8; 4] = b"FCT1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;
const BAND_META_LEN: usize = 24;

/// Offset inside `log(1 + x / eps)`.
pub const LOG_EPSILON: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Csv,
    Bin,
    Png,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Bin => "fct1",
            Format::Png => "png",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "bin" | "fct1" => Ok(Format::Bin),
            "png" => Ok(Format::Png),
            other => Err(format!(
                "unknown format {other:?} (expected csv, bin or png)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Colormap {
    Gray,
    #[default]
    Heat,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExportOptions {
    /// Bands removed from the start (highest frequencies) of the bank order.
    pub crop_low: usize,
    /// Bands removed from the end (lowest frequencies).
    pub crop_high: usize,
    pub log_compress: bool,
    /// Reverse band order so that the lowest frequency comes first.
    pub flip_rows: bool,
    pub colormap: Colormap,
}

/// Crop, flip and compress a gram as requested by `opts`.
pub fn prepare(gram: &Chirpletgram, opts: &ExportOptions) -> Result<Chirpletgram, ExportError> {
    if gram.is_empty() {
        return Err(ExportError::InvalidInput("chirpletgram is empty".into()));
    }
    let bands = gram.bands();
    if opts.crop_low + opts.crop_high >= bands {
        return Err(ExportError::InvalidInput(format!(
            "crop ({}, {}) leaves no bands out of {bands}",
            opts.crop_low, opts.crop_high
        )));
    }
    let mut keep: Vec<usize> = (opts.crop_low..bands - opts.crop_high).collect();
    if opts.flip_rows {
        keep.reverse();
    }
    let compress = |v: f64| {
        if opts.log_compress {
            (v / LOG_EPSILON).ln_1p()
        } else {
            v
        }
    };
    let values = keep
        .iter()
        .flat_map(|&b| gram.row(b).iter().map(|&v| compress(v)))
        .collect();
    let meta = keep.iter().map(|&b| gram.band_meta[b]).collect();
    Chirpletgram::new(
        values,
        gram.frames(),
        meta,
        gram.frame_period,
        gram.origin_time,
        gram.source_sr,
    )
    .map_err(|e| ExportError::InvalidInput(e.to_string()))
}

fn band_label(meta: &BandMeta) -> String {
    let suffix = match meta.direction {
        Direction::Upward => "",
        Direction::Downward => "_down",
    };
    format!("f{}_{}{suffix}", trim_float(meta.f0), trim_float(meta.f1))
}

/// Two decimals without trailing zeros.
fn trim_float(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One row per frame: `time_s` followed by one column per band.
pub fn encode_csv<W: Write>(gram: &Chirpletgram, mut out: W) -> Result<(), ExportError> {
    let mut header = String::from("time_s");
    for m in &gram.band_meta {
        header.push(',');
        header.push_str(&band_label(m));
    }
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for f in 0..gram.frames() {
        line.clear();
        line.push_str(&format!("{:.8e}", gram.frame_time(f)));
        for b in 0..gram.bands() {
            line.push_str(&format!(",{:.8e}", gram.get(b, f)));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_csv(
    gram: &Chirpletgram,
    opts: &ExportOptions,
    path: impl AsRef<Path>,
) -> Result<(), ExportError> {
    let prepared = prepare(gram, opts)?;
    let mut out = BufWriter::new(File::create(path)?);
    encode_csv(&prepared, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Size in bytes of the `FCT1` encoding of a `bands x frames` gram.
pub fn bin_size(bands: usize, frames: usize) -> usize {
    HEADER_LEN + 4 * bands * frames + BAND_META_LEN * bands
}

pub fn encode_bin(gram: &Chirpletgram) -> Result<Vec<u8>, ExportError> {
    let too_big = |what: &str| ExportError::InvalidInput(format!("{what} does not fit in u32"));
    let bands = u32::try_from(gram.bands()).map_err(|_| too_big("band count"))?;
    let frames = u32::try_from(gram.frames()).map_err(|_| too_big("frame count"))?;
    let mut buf = Vec::with_capacity(bin_size(gram.bands(), gram.frames()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&bands.to_le_bytes());
    buf.extend_from_slice(&frames.to_le_bytes());
    buf.extend_from_slice(&gram.frame_period.to_le_bytes());
    buf.extend_from_slice(&gram.source_sr.to_le_bytes());
    for &v in gram.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for m in &gram.band_meta {
        buf.extend_from_slice(&m.lambda.to_le_bytes());
        buf.extend_from_slice(&m.f0.to_le_bytes());
        buf.extend_from_slice(&m.f1.to_le_bytes());
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ExportError> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| ExportError::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, ExportError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32, ExportError> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, ExportError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Decodes an `FCT1` buffer. The origin time is not stored and reads as 0;
/// all bands read back as upward.
pub fn decode_bin(bytes: &[u8]) -> Result<Chirpletgram, ExportError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if &cur.take::<4>()? != MAGIC {
        return Err(ExportError::CorruptFile("bad magic, expected FCT1".into()));
    }
    let bands = cur.u32()? as usize;
    let frames = cur.u32()? as usize;
    let expected = bands
        .checked_mul(frames)
        .and_then(|cells| cells.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN + BAND_META_LEN * bands));
    if expected != Some(bytes.len()) {
        return Err(ExportError::CorruptFile(format!(
            "{} bytes does not match a {bands} x {frames} matrix",
            bytes.len()
        )));
    }
    let frame_period = cur.f64()?;
    let source_sr = cur.f64()?;
    let values = (0..bands * frames)
        .map(|_| cur.f32().map(f64::from))
        .collect::<Result<Vec<_>, _>>()?;
    let meta = (0..bands)
        .map(|_| {
            Ok(BandMeta {
                lambda: cur.f64()?,
                f0: cur.f64()?,
                f1: cur.f64()?,
                direction: Direction::Upward,
            })
        })
        .collect::<Result<Vec<_>, ExportError>>()?;
    Chirpletgram::new(values, frames, meta, frame_period, 0.0, source_sr)
        .map_err(|e| ExportError::CorruptFile(e.to_string()))
}

pub fn write_bin(
    gram: &Chirpletgram,
    opts: &ExportOptions,
    path: impl AsRef<Path>,
) -> Result<(), ExportError> {
    let bytes = encode_bin(&prepare(gram, opts)?)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_bin(path: impl AsRef<Path>) -> Result<Chirpletgram, ExportError> {
    decode_bin(&std::fs::read(path)?)
}

/// Min-max scales every cell to `0..=255`. A constant gram maps to 0.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if !(span > 0.0 && span.is_finite()) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// 256-entry black-red-yellow-white ramp.
pub fn heat_color(level: u8) -> [u8; 3] {
    const ANCHORS: [(f64, [f64; 3]); 5] = [
        (0.0, [0.0, 0.0, 0.0]),
        (0.3, [110.0, 0.0, 110.0]),
        (0.6, [230.0, 30.0, 0.0]),
        (0.85, [255.0, 200.0, 0.0]),
        (1.0, [255.0, 255.0, 255.0]),
    ];
    let x = level as f64 / 255.0;
    let i = ANCHORS
        .windows(2)
        .position(|w| x <= w[1].0)
        .unwrap_or(ANCHORS.len() - 2);
    let ((x0, c0), (x1, c1)) = (ANCHORS[i], ANCHORS[i + 1]);
    let a = (x - x0) / (x1 - x0);
    std::array::from_fn(|k| (c0[k] + a * (c1[k] - c0[k])).round() as u8)
}

/// Gray or heat-mapped image, one pixel per cell: width = frames,
/// height = bands, band 0 on the top row.
pub fn render_image(gram: &Chirpletgram, colormap: Colormap) -> image::DynamicImage {
    let levels = normalize_to_u8(gram.values());
    let (w, h) = (gram.frames() as u32, gram.bands() as u32);
    let level = |x: u32, y: u32| levels[y as usize * gram.frames() + x as usize];
    match colormap {
        Colormap::Gray => {
            let img: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([level(x, y)]));
            img.into()
        }
        Colormap::Heat => {
            let img: RgbImage = ImageBuffer::from_fn(w, h, |x, y| Rgb(heat_color(level(x, y))));
            img.into()
        }
    }
}

pub fn write_png(
    gram: &Chirpletgram,
    opts: &ExportOptions,
    path: impl AsRef<Path>,
) -> Result<(), ExportError> {
    let prepared = prepare(gram, opts)?;
    render_image(&prepared, opts.colormap).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes `gram` in `format` to `path`.
pub fn write(
    format: Format,
    gram: &Chirpletgram,
    opts: &ExportOptions,
    path: impl AsRef<Path>,
) -> Result<(), ExportError> {
    match format {
        Format::Csv => write_csv(gram, opts, path),
        Format::Bin => write_bin(gram, opts, path),
        Format::Png => write_png(gram, opts, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gram(bands: usize, frames: usize) -> Chirpletgram {
        let meta = (0..bands)
            .map(|i| BandMeta {
                lambda: 2f64.powf(1.0 + i as f64 / 16.0),
                f0: 8000.0 / 2f64.powf(1.0 + i as f64 / 16.0),
                f1: 16000.0 / 2f64.powf(1.0 + i as f64 / 16.0),
                direction: Direction::Upward,
            })
            .collect();
        let values = (0..bands * frames)
            .map(|i| (i % 17) as f64 * 0.25)
            .collect();
        Chirpletgram::new(values, frames, meta, 0.001, 0.0, 16000.0).unwrap()
    }

    #[test]
    fn csv_layout() {
        let g = gram(3, 2);
        let mut buf = Vec::new();
        encode_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "time_s,f4000_8000,f3830.41_7660.83,f3668.02_7336.03"
        );
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
        assert_eq!(
            lines[2].split(',').nth(1).unwrap().parse::<f64>().unwrap(),
            g.get(0, 1)
        );
    }

    #[test]
    fn crop_keeps_order_and_meta() {
        let g = gram(96, 5);
        let opts = ExportOptions {
            crop_low: 16,
            crop_high: 16,
            ..Default::default()
        };
        let c = prepare(&g, &opts).unwrap();
        assert_eq!(c.bands(), 64);
        for b in 0..64 {
            assert_eq!(c.row(b), g.row(b + 16));
            assert_eq!(c.band_meta[b], g.band_meta[b + 16]);
        }
        let bad = ExportOptions {
            crop_low: 50,
            crop_high: 46,
            ..Default::default()
        };
        assert!(matches!(
            prepare(&g, &bad),
            Err(ExportError::InvalidInput(_))
        ));
    }

    #[test]
    fn flip_reverses_rows() {
        let g = gram(4, 3);
        let f = prepare(
            &g,
            &ExportOptions {
                flip_rows: true,
                ..Default::default()
            },
        )
        .unwrap();
        for b in 0..4 {
            assert_eq!(f.row(b), g.row(3 - b));
        }
    }

    #[test]
    fn empty_gram_rejected() {
        let empty = Chirpletgram::new(vec![], 0, vec![], 0.001, 0.0, 16000.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_csv(&empty, &ExportOptions::default(), dir.path().join("x.csv")),
            Err(ExportError::InvalidInput(_))
        ));
    }

    #[test]
    fn bin_size_formula() {
        assert_eq!(bin_size(64, 500), 129_564);
        let g = gram(64, 500);
        assert_eq!(encode_bin(&g).unwrap().len(), 129_564);
    }

    #[test]
    fn bin_rejects_bad_magic_and_truncation() {
        let mut bytes = encode_bin(&gram(2, 3)).unwrap();
        assert!(decode_bin(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            decode_bin(&bytes),
            Err(ExportError::CorruptFile(_))
        ));
    }

    #[test]
    fn png_dimensions_and_constant_case() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        write_png(&gram(96, 500), &ExportOptions::default(), &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (500, 96));

        let flat =
            Chirpletgram::new(vec![3.0; 20], 5, gram(4, 5).band_meta, 0.001, 0.0, 16000.0).unwrap();
        let opts = ExportOptions {
            colormap: Colormap::Gray,
            ..Default::default()
        };
        write_png(&flat, &opts, &path).unwrap();
        let img = image::open(&path).unwrap().into_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 0));
    }

    #[test]
    fn heat_map_is_monotone_in_brightness() {
        let lum = |c: [u8; 3]| c.iter().map(|&v| v as u32).sum::<u32>();
        // per-channel rounding can cost at most one step per channel
        for l in 0..255u8 {
            assert!(lum(heat_color(l)) <= lum(heat_color(l + 1)) + 3);
        }
        assert_eq!(heat_color(0), [0, 0, 0]);
        assert_eq!(heat_color(255), [255, 255, 255]);
    }

    proptest! {
        #[test]
        fn log_compression_preserves_order(values in prop::collection::vec(0.0f64..10.0, 2..40)) {
            let meta = vec![BandMeta { lambda: 2.0, f0: 1.0, f1: 2.0, direction: Direction::Upward }];
            let n = values.len();
            let g = Chirpletgram::new(values.clone(), n, meta, 0.001, 0.0, 16000.0).unwrap();
            let c = prepare(&g, &ExportOptions { log_compress: true, ..Default::default() }).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if values[i] < values[j] {
                        prop_assert!(c.values()[i] <= c.values()[j]);
                    }
                }
            }
        }

        #[test]
        fn bin_round_trip(bands in 1usize..8, frames in 1usize..30, seed in any::<u32>()) {
            let meta: Vec<BandMeta> = (0..bands).map(|i| BandMeta {
                lambda: 2.0 + i as f64 * 0.1 + seed as f64 * 1e-9,
                f0: 100.0 + i as f64,
                f1: 200.0 + 2.0 * i as f64,
                direction: Direction::Upward,
            }).collect();
            let values: Vec<f64> = (0..bands * frames)
                .map(|i| ((i as u64 * 2654435761 + seed as u64) % 10007) as f64 / 97.0)
                .collect();
            let g = Chirpletgram::new(values, frames, meta, 1.0 / 16.0, 0.0, 44100.0).unwrap();
            let bytes = encode_bin(&g).unwrap();
            prop_assert_eq!(bytes.len(), bin_size(bands, frames));
            let back = decode_bin(&bytes).unwrap();
            prop_assert_eq!(&back.band_meta, &g.band_meta);
            prop_assert_eq!(back.frame_period, g.frame_period);
            prop_assert_eq!(back.source_sr, g.source_sr);
            for (a, b) in g.values().iter().zip(back.values()) {
                prop_assert_eq!(*a as f32 as f64, *b);
            }
        }
    }
}
