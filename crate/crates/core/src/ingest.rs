//! Record ingestion: header and packed-212 signal parsing, CSV annotations,
//! R-peak-centred segment extraction and a synthetic record generator.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::preprocess::{map_symbol_to_aami, AamiClass};

/// MIT-BIH sampling rate.
pub const MITBIH_RATE_HZ: u32 = 360;
/// Samples either side of the R peak; a segment spans `2 * 120 + 1 = 241` columns.
pub const DEFAULT_HALF_WIDTH: usize = 120;
pub const SEGMENT_LEN: usize = 2 * DEFAULT_HALF_WIDTH + 1;
pub const PIPELINE_CHANNELS: usize = 2;

const FORMAT_212: u32 = 212;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported signal format {0} (only 212 is supported)")]
    UnsupportedFormat(u32),
    #[error("truncated signal data: expected {expected} bytes, got {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("malformed annotation on line {line}: {reason}")]
    MalformedAnnotation { line: usize, reason: String },
    #[error("annotation at sample {index} is outside the record (length {len})")]
    AnnotationOutOfRange { index: usize, len: usize },
    #[error("invalid synthetic record spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub file_name: String,
    pub format: u32,
    /// ADC units per millivolt.
    pub adc_gain: f64,
    pub adc_zero: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_name: String,
    pub sampling_rate_hz: u32,
    pub num_samples: usize,
    pub channels: Vec<ChannelSpec>,
}

impl RecordHeader {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// The classification pipeline only accepts two-lead records.
    pub fn check_pipeline_compatible(&self) -> Result<(), IngestError> {
        if self.num_channels() != PIPELINE_CHANNELS {
            return Err(IngestError::MalformedHeader(format!(
                "record {} has {} channels, the pipeline requires {}",
                self.record_name,
                self.num_channels(),
                PIPELINE_CHANNELS
            )));
        }
        Ok(())
    }

    /// Renders the header in the text format accepted by [`parse_header`].
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.record_name,
            self.num_channels(),
            self.sampling_rate_hz,
            self.num_samples
        );
        for ch in &self.channels {
            s.push_str(&format!(
                "{} {} {} {}\n",
                ch.file_name, ch.format, ch.adc_gain, ch.adc_zero
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_index: usize,
    pub symbol: char,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub header: RecordHeader,
    /// `num_channels × num_samples`, millivolts.
    pub samples: Matrix,
    pub annotations: Vec<Annotation>,
}

impl EcgRecord {
    /// Attaches annotations, enforcing that every index lies inside the record.
    pub fn with_annotations(mut self, mut annotations: Vec<Annotation>) -> Result<Self, IngestError> {
        let len = self.header.num_samples;
        if let Some(a) = annotations.iter().find(|a| a.sample_index >= len) {
            return Err(IngestError::AnnotationOutOfRange {
                index: a.sample_index,
                len,
            });
        }
        annotations.sort_by_key(|a| a.sample_index);
        self.annotations = annotations;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentSource {
    pub record_name: String,
    pub center_index: usize,
}

/// One labelled `2 × (2·half_width + 1)` heartbeat window.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub data: Matrix,
    pub label: AamiClass,
    pub symbol: char,
    pub source: SegmentSource,
}

pub fn parse_header(text: &str) -> Result<RecordHeader, IngestError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let first = lines
        .next()
        .ok_or_else(|| IngestError::MalformedHeader("empty header".into()))?;
    let fields: Vec<&str> = first.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(IngestError::MalformedHeader(format!(
            "record line needs 4 fields (name channels rate samples), got {}",
            fields.len()
        )));
    }
    let record_name = fields[0].to_string();
    let num_channels: usize = parse_field(fields[1], "channel count")?;
    let sampling_rate_hz: u32 = parse_field(fields[2], "sampling rate")?;
    let num_samples: usize = parse_field(fields[3], "sample count")?;
    if num_channels == 0 || sampling_rate_hz == 0 || num_samples == 0 {
        return Err(IngestError::MalformedHeader(
            "channels, rate and samples must all be positive".into(),
        ));
    }

    let mut channels = Vec::with_capacity(num_channels);
    for line in lines.by_ref().take(num_channels) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(IngestError::MalformedHeader(format!(
                "signal line needs 4 fields (file format gain zero), got {}: {line:?}",
                f.len()
            )));
        }
        let format: u32 = parse_field(f[1], "format")?;
        if format != FORMAT_212 {
            return Err(IngestError::UnsupportedFormat(format));
        }
        let adc_gain: f64 = parse_field(f[2], "adc gain")?;
        if !(adc_gain.is_finite() && adc_gain > 0.0) {
            return Err(IngestError::MalformedHeader(format!("adc gain {adc_gain} must be positive")));
        }
        channels.push(ChannelSpec {
            file_name: f[0].to_string(),
            format,
            adc_gain,
            adc_zero: parse_field(f[3], "adc zero")?,
        });
    }
    if channels.len() != num_channels {
        return Err(IngestError::MalformedHeader(format!(
            "expected {num_channels} signal lines, found {}",
            channels.len()
        )));
    }
    if let Some(extra) = lines.next() {
        return Err(IngestError::MalformedHeader(format!("unexpected trailing line {extra:?}")));
    }
    Ok(RecordHeader {
        record_name,
        sampling_rate_hz,
        num_samples,
        channels,
    })
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, IngestError> {
    s.parse()
        .map_err(|_| IngestError::MalformedHeader(format!("bad {what}: {s:?}")))
}

#[inline]
fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Number of bytes occupied by `count` packed-212 samples.
pub fn packed_212_len(count: usize) -> usize {
    (3 * count).div_ceil(2)
}

/// Decodes `count` 12-bit two's-complement samples from packed-212 bytes.
pub fn decode_212(bytes: &[u8], count: usize) -> Result<Vec<i16>, IngestError> {
    let expected = packed_212_len(count);
    if bytes.len() != expected {
        return Err(IngestError::TruncatedData {
            expected,
            actual: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(count);
    for chunk in bytes.chunks(3) {
        let b0 = chunk[0] as u16;
        let b1 = chunk[1] as u16;
        out.push(sign_extend_12(((b1 & 0x0F) << 8) | b0));
        if out.len() < count {
            let b2 = chunk[2] as u16;
            out.push(sign_extend_12(((b1 & 0xF0) << 4) | b2));
        }
    }
    Ok(out)
}

/// Packs samples into the 212 layout. Values are truncated to their low 12 bits,
/// so callers must keep them in `[-2048, 2047]`.
pub fn encode_212(samples: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(packed_212_len(samples.len()));
    for pair in samples.chunks(2) {
        let s0 = (pair[0] as u16) & 0x0FFF;
        match pair.get(1) {
            Some(&s1) => {
                let s1 = (s1 as u16) & 0x0FFF;
                out.push((s0 & 0xFF) as u8);
                out.push((((s0 >> 8) & 0x0F) | ((s1 >> 4) & 0xF0)) as u8);
                out.push((s1 & 0xFF) as u8);
            }
            None => {
                out.push((s0 & 0xFF) as u8);
                out.push(((s0 >> 8) & 0x0F) as u8);
            }
        }
    }
    out
}

/// Decodes interleaved channel samples and converts them to millivolts.
pub fn parse_signal_212(bytes: &[u8], header: &RecordHeader) -> Result<EcgRecord, IngestError> {
    let nch = header.num_channels();
    let n = header.num_samples;
    let raw = decode_212(bytes, nch * n)?;
    let mut samples = Matrix::zeros(nch, n);
    for (t, frame) in raw.chunks(nch).enumerate() {
        for (c, &s) in frame.iter().enumerate() {
            let ch = &header.channels[c];
            samples[(c, t)] = (s as f64 - ch.adc_zero as f64) / ch.adc_gain;
        }
    }
    Ok(EcgRecord {
        header: header.clone(),
        samples,
        annotations: Vec::new(),
    })
}

/// Inverse of [`parse_signal_212`]: millivolts → rounded, clamped ADC units → bytes.
pub fn encode_signal_212(record: &EcgRecord) -> Vec<u8> {
    let (nch, n) = record.samples.shape();
    let mut raw = Vec::with_capacity(nch * n);
    for t in 0..n {
        for c in 0..nch {
            let ch = &record.header.channels[c];
            let v = (record.samples[(c, t)] * ch.adc_gain + ch.adc_zero as f64).round();
            raw.push(v.clamp(-2048.0, 2047.0) as i16);
        }
    }
    encode_212(&raw)
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| IngestError::MalformedAnnotation {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (idx, sym) = line
            .split_once(',')
            .ok_or_else(|| malformed("expected \"sample_index,symbol\""))?;
        let sample_index: usize = idx
            .trim()
            .parse()
            .map_err(|_| malformed(&format!("non-integer sample index {idx:?}")))?;
        let mut chars = sym.trim().chars();
        let symbol = chars.next().ok_or_else(|| malformed("empty symbol"))?;
        if chars.next().is_some() {
            return Err(malformed(&format!("symbol {sym:?} is not a single character")));
        }
        out.push(Annotation {
            sample_index,
            symbol,
        });
    }
    // stable: duplicate indices keep input order
    out.sort_by_key(|a| a.sample_index);
    Ok(out)
}

pub fn annotations_to_csv(annotations: &[Annotation]) -> String {
    annotations
        .iter()
        .map(|a| format!("{},{}\n", a.sample_index, a.symbol))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub segments: Vec<Segment>,
    /// Annotations whose window would cross a record edge.
    pub skipped_edge: usize,
    /// Annotations whose symbol is not a beat class (rhythm marks, artefacts).
    pub skipped_symbol: usize,
}

impl Extraction {
    pub fn skipped(&self) -> usize {
        self.skipped_edge + self.skipped_symbol
    }
}

/// Cuts a window of `2·half_width + 1` columns around every annotated beat.
/// Windows that do not fit inside the record are skipped, never padded.
pub fn extract_segments(record: &EcgRecord, half_width: usize) -> Extraction {
    assert!(half_width >= 1, "half_width must be at least 1");
    let (nch, n) = record.samples.shape();
    let width = 2 * half_width + 1;
    let mut out = Extraction::default();
    for ann in &record.annotations {
        let i = ann.sample_index;
        if i < half_width || i + half_width >= n {
            out.skipped_edge += 1;
            continue;
        }
        let Ok(label) = map_symbol_to_aami(ann.symbol) else {
            out.skipped_symbol += 1;
            continue;
        };
        let mut data = Matrix::zeros(nch, width);
        for c in 0..nch {
            data.row_mut(c)
                .copy_from_slice(&record.samples.row(c)[i - half_width..=i + half_width]);
        }
        out.segments.push(Segment {
            data,
            label,
            symbol: ann.symbol,
            source: SegmentSource {
                record_name: record.header.record_name.clone(),
                center_index: i,
            },
        });
    }
    out
}

/// Parameters of a synthetic two-lead record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub record_name: String,
    pub num_samples: usize,
    pub rate_hz: u32,
    pub beat_indices: Vec<usize>,
    pub beat_symbols: Vec<char>,
    /// Standard deviation of additive white noise, millivolts.
    pub noise_std: f64,
}

/// One Gaussian wave: `amplitude · exp(−(t − offset)² / (2·width²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub offset: f64,
    pub amplitude: f64,
    pub width: f64,
}

const fn wave(offset: f64, amplitude: f64, width: f64) -> Wave {
    Wave {
        offset,
        amplitude,
        width,
    }
}

/// Class-level beat templates (lead I), in samples at 360 Hz.
fn class_template(class: AamiClass) -> &'static [Wave] {
    const N: &[Wave] = &[wave(-70.0, 0.15, 10.0), wave(0.0, 1.0, 5.0), wave(90.0, 0.30, 20.0)];
    const S: &[Wave] = &[wave(-35.0, 0.25, 6.0), wave(0.0, 0.85, 4.0), wave(75.0, 0.20, 14.0)];
    const V: &[Wave] = &[wave(0.0, -1.4, 14.0), wave(70.0, 0.50, 25.0)];
    const F: &[Wave] = &[wave(0.0, 1.15, 9.0), wave(16.0, -0.55, 8.0), wave(95.0, 0.20, 20.0)];
    const Q: &[Wave] = &[wave(-14.0, 1.8, 1.5), wave(0.0, 0.8, 10.0), wave(90.0, 0.30, 20.0)];
    match class {
        AamiClass::N => N,
        AamiClass::S => S,
        AamiClass::V => V,
        AamiClass::F => F,
        AamiClass::Q => Q,
    }
}

/// Lead II is a scaled copy of lead I with a class-specific gain.
fn lead2_gain(class: AamiClass) -> f64 {
    match class {
        AamiClass::N => 0.6,
        AamiClass::S => 0.7,
        AamiClass::V => -0.8,
        AamiClass::F => 0.5,
        AamiClass::Q => 0.9,
    }
}

/// Beat template for `symbol`: the class template with the dominant wave's
/// amplitude scaled by the symbol's rank inside its class, so every symbol
/// has a distinct peak amplitude.
pub fn beat_template(symbol: char) -> Option<(Vec<Wave>, f64)> {
    let class = map_symbol_to_aami(symbol).ok()?;
    let rank = crate::preprocess::AAMI_TABLE
        .iter()
        .filter(|(_, c)| *c == class)
        .position(|(s, _)| *s == symbol)?;
    let scale = 1.0 + 0.1 * rank as f64;
    let mut waves = class_template(class).to_vec();
    if let Some(main) = waves.iter_mut().find(|w| w.offset == 0.0) {
        main.amplitude *= scale;
    }
    Some((waves, lead2_gain(class)))
}

/// Deterministic synthetic record: parametric beats plus white noise.
pub fn synth_record(spec: &SynthSpec, seed: u64) -> Result<EcgRecord, IngestError> {
    let invalid = |m: String| Err(IngestError::InvalidSpec(m));
    if spec.num_samples == 0 || spec.rate_hz == 0 {
        return invalid("num_samples and rate must be positive".into());
    }
    if spec.beat_indices.len() != spec.beat_symbols.len() {
        return invalid(format!(
            "{} beat indices but {} symbols",
            spec.beat_indices.len(),
            spec.beat_symbols.len()
        ));
    }
    if spec.beat_indices.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("beat indices must be strictly increasing".into());
    }
    if spec.beat_indices.last().is_some_and(|&i| i >= spec.num_samples) {
        return invalid("beat index beyond record length".into());
    }
    if !(spec.noise_std.is_finite() && spec.noise_std >= 0.0) {
        return invalid(format!("noise_std {} must be finite and non-negative", spec.noise_std));
    }

    let n = spec.num_samples;
    let mut samples = Matrix::zeros(PIPELINE_CHANNELS, n);
    // waves are defined at 360 Hz; rescale time for other rates
    let time_scale = spec.rate_hz as f64 / MITBIH_RATE_HZ as f64;
    for (&center, &symbol) in spec.beat_indices.iter().zip(&spec.beat_symbols) {
        let Some((waves, gain2)) = beat_template(symbol) else {
            return invalid(format!("symbol {symbol:?} has no beat template"));
        };
        for w in &waves {
            let mu = center as f64 + w.offset * time_scale;
            let sigma = w.width * time_scale;
            let lo = (mu - 6.0 * sigma).floor().max(0.0) as usize;
            let hi = ((mu + 6.0 * sigma).ceil().max(0.0) as usize).min(n - 1);
            for t in lo..=hi {
                let z = (t as f64 - mu) / sigma;
                let v = w.amplitude * (-0.5 * z * z).exp();
                samples[(0, t)] += v;
                samples[(1, t)] += gain2 * v;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for v in samples.as_mut_slice() {
        *v += spec.noise_std * normal.sample(&mut rng);
    }

    let channels = (0..PIPELINE_CHANNELS)
        .map(|_| ChannelSpec {
            file_name: format!("{}.dat", spec.record_name),
            format: FORMAT_212,
            adc_gain: 200.0,
            adc_zero: 0,
        })
        .collect();
    Ok(EcgRecord {
        header: RecordHeader {
            record_name: spec.record_name.clone(),
            sampling_rate_hz: spec.rate_hz,
            num_samples: n,
            channels,
        },
        samples,
        annotations: spec
            .beat_indices
            .iter()
            .zip(&spec.beat_symbols)
            .map(|(&sample_index, &symbol)| Annotation {
                sample_index,
                symbol,
            })
            .collect(),
    })
}

/// Writes `<name>.hea` and `<name>.dat` into `records_dir` and `<name>.csv`
/// into `annotations_dir`.
pub fn write_record(record: &EcgRecord, records_dir: &Path, annotations_dir: &Path) -> Result<(), IngestError> {
    let name = &record.header.record_name;
    for dir in [records_dir, annotations_dir] {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let hea = records_dir.join(format!("{name}.hea"));
    fs::write(&hea, record.header.to_text()).map_err(|e| io_err(&hea, e))?;
    let dat = records_dir.join(&record.header.channels[0].file_name);
    fs::write(&dat, encode_signal_212(record)).map_err(|e| io_err(&dat, e))?;
    let csv = annotations_dir.join(format!("{name}.csv"));
    fs::write(&csv, annotations_to_csv(&record.annotations)).map_err(|e| io_err(&csv, e))?;
    Ok(())
}

/// Reads a record from `<records_dir>/<name>.hea` (plus its signal file) and
/// `<annotations_dir>/<name>.csv`.
pub fn read_record(records_dir: &Path, annotations_dir: &Path, name: &str) -> Result<EcgRecord, IngestError> {
    let hea = records_dir.join(format!("{name}.hea"));
    let text = fs::read_to_string(&hea).map_err(|e| io_err(&hea, e))?;
    let header = parse_header(&text)?;
    header.check_pipeline_compatible()?;
    let first = &header.channels[0].file_name;
    if header.channels.iter().any(|c| &c.file_name != first) {
        return Err(IngestError::MalformedHeader(
            "all channels must share one interleaved signal file".into(),
        ));
    }
    let dat = records_dir.join(first);
    let bytes = fs::read(&dat).map_err(|e| io_err(&dat, e))?;
    let record = parse_signal_212(&bytes, &header)?;
    let csv = annotations_dir.join(format!("{name}.csv"));
    let ann_text = fs::read_to_string(&csv).map_err(|e| io_err(&csv, e))?;
    record.with_annotations(parse_annotations(&ann_text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_channel_header(samples: usize) -> RecordHeader {
        parse_header(&format!(
            "rec 2 360 {samples}\nrec.dat 212 200 0\nrec.dat 212 200 0\n"
        ))
        .unwrap()
    }

    #[test]
    fn header_fields() {
        let h = parse_header("100 2 360 650000\n100.dat 212 200 1024\n100.dat 212 200 1024\n").unwrap();
        assert_eq!(h.record_name, "100");
        assert_eq!(h.num_channels(), 2);
        assert_eq!(h.sampling_rate_hz, 360);
        assert_eq!(h.num_samples, 650000);
        assert_eq!(h.channels[1].adc_zero, 1024);
        assert_eq!(parse_header(&h.to_text()).unwrap(), h);
    }

    #[test]
    fn three_channels_fail_pipeline_gate() {
        let h = parse_header("r 3 360 10\nr.dat 212 200 0\nr.dat 212 200 0\nr.dat 212 200 0\n").unwrap();
        assert!(matches!(h.check_pipeline_compatible(), Err(IngestError::MalformedHeader(_))));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            parse_header("r 2 360 10\nr.dat 16 200 0\nr.dat 16 200 0\n"),
            Err(IngestError::UnsupportedFormat(16))
        ));
        assert!(matches!(parse_header("r 2 360\n"), Err(IngestError::MalformedHeader(_))));
        assert!(matches!(
            parse_header("r 2 360 10\nr.dat 212 200 0\n"),
            Err(IngestError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_header("r 1 360 10\nr.dat 212 200\n"),
            Err(IngestError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_header("r 1 360 10\nr.dat 212 200 0\nextra line here x\n"),
            Err(IngestError::MalformedHeader(_))
        ));
        assert!(matches!(parse_header(""), Err(IngestError::MalformedHeader(_))));
    }

    #[test]
    fn decode_212_hand_cases() {
        assert_eq!(decode_212(&[0x01, 0xF0, 0xFF], 2).unwrap(), vec![1, -1]);
        assert_eq!(decode_212(&[0x00, 0x00, 0x00], 2).unwrap(), vec![0, 0]);
        assert_eq!(decode_212(&[0xFF, 0x07, 0x00], 2).unwrap(), vec![2047, 0]);
        assert_eq!(decode_212(&[0x00, 0x08, 0x00], 2).unwrap(), vec![-2048, 0]);
        // odd count: trailing half triple
        assert_eq!(decode_212(&[0x05, 0x00], 1).unwrap(), vec![5]);
        assert_eq!(encode_212(&[5]), vec![0x05, 0x00]);
    }

    #[test]
    fn truncated_signal() {
        let h = two_channel_header(2);
        assert_eq!(
            parse_signal_212(&[0; 5], &h),
            Err(IngestError::TruncatedData { expected: 6, actual: 5 })
        );
    }

    #[test]
    fn signal_gain_and_zero() {
        let h = parse_header("r 2 360 1\nr.dat 212 200 10\nr.dat 212 100 0\n").unwrap();
        let bytes = encode_212(&[210, -100]);
        let rec = parse_signal_212(&bytes, &h).unwrap();
        assert_eq!(rec.samples[(0, 0)], 1.0);
        assert_eq!(rec.samples[(1, 0)], -1.0);
    }

    #[test]
    fn annotations_parse_and_sort() {
        let a = parse_annotations("120,N\n480,V").unwrap();
        assert_eq!(
            a,
            vec![
                Annotation { sample_index: 120, symbol: 'N' },
                Annotation { sample_index: 480, symbol: 'V' }
            ]
        );
        assert_eq!(parse_annotations("480,V\n120,N").unwrap(), a);
        let dup = parse_annotations("5,V\n1,N\n5,A\n").unwrap();
        assert_eq!(dup.iter().map(|a| a.symbol).collect::<String>(), "NVA");
        assert!(matches!(
            parse_annotations("abc,N"),
            Err(IngestError::MalformedAnnotation { line: 1, .. })
        ));
        assert!(matches!(
            parse_annotations("1,N\n2,"),
            Err(IngestError::MalformedAnnotation { line: 2, .. })
        ));
    }

    fn ramp_record(n: usize, beats: &[usize]) -> EcgRecord {
        let header = two_channel_header(n);
        let mut samples = Matrix::zeros(2, n);
        for t in 0..n {
            samples[(0, t)] = t as f64;
            samples[(1, t)] = -(t as f64);
        }
        EcgRecord {
            header,
            samples,
            annotations: beats
                .iter()
                .map(|&i| Annotation { sample_index: i, symbol: 'N' })
                .collect(),
        }
    }

    #[test]
    fn segment_bounds() {
        let ex = extract_segments(&ramp_record(360, &[120]), 120);
        assert_eq!(ex.segments.len(), 1);
        assert_eq!(ex.segments[0].data.shape(), (2, 241));
        assert_eq!(ex.segments[0].data[(0, 0)], 0.0);
        assert_eq!(ex.segments[0].data[(0, 240)], 240.0);

        let ex = extract_segments(&ramp_record(360, &[50]), 120);
        assert!(ex.segments.is_empty());
        assert_eq!(ex.skipped_edge, 1);

        let ex = extract_segments(&ramp_record(1000, &[120, 500, 950]), 120);
        assert_eq!(ex.segments.len(), 2);
        assert_eq!(ex.skipped(), 1);
        let seg = &ex.segments[1];
        assert_eq!(seg.source.center_index, 500);
        assert_eq!(seg.data[(0, 120)], 500.0);
        assert_eq!(seg.data[(1, 120)], -500.0);
    }

    #[test]
    fn last_valid_center() {
        // i + half_width must be < n
        let ex = extract_segments(&ramp_record(1000, &[879, 880]), 120);
        assert_eq!(ex.segments.len(), 1);
        assert_eq!(ex.segments[0].source.center_index, 879);
    }

    #[test]
    fn non_beat_symbols_are_counted() {
        let mut rec = ramp_record(1000, &[300, 500]);
        rec.annotations[1].symbol = '+';
        let ex = extract_segments(&rec, 120);
        assert_eq!(ex.segments.len(), 1);
        assert_eq!(ex.skipped_symbol, 1);
    }

    fn spec(symbols: &[char], noise: f64) -> SynthSpec {
        SynthSpec {
            record_name: "s".into(),
            num_samples: 400 * symbols.len() + 400,
            rate_hz: 360,
            beat_indices: (0..symbols.len()).map(|i| 300 + 400 * i).collect(),
            beat_symbols: symbols.to_vec(),
            noise_std: noise,
        }
    }

    #[test]
    fn synth_determinism() {
        let s = spec(&['N'], 0.0);
        assert_eq!(synth_record(&s, 1).unwrap(), synth_record(&s, 99).unwrap());
        let s = spec(&['N', 'V', 'A'], 0.1);
        let a = synth_record(&s, 7).unwrap();
        let b = synth_record(&s, 7).unwrap();
        assert_eq!(a.samples.as_slice(), b.samples.as_slice());
        assert_ne!(a.samples.as_slice(), synth_record(&s, 8).unwrap().samples.as_slice());
    }

    #[test]
    fn synth_class_peaks_differ() {
        let symbols: Vec<char> = "NAVF".chars().cycle().take(500).collect();
        let s = spec(&symbols, 0.0);
        let rec = synth_record(&s, 3).unwrap();
        assert_eq!(rec.annotations.len(), 500);
        let mut peaks = std::collections::BTreeMap::new();
        for a in &rec.annotations {
            let v = rec.samples[(0, a.sample_index)];
            let e = peaks.entry(a.symbol).or_insert(v);
            assert!((*e - v).abs() < 1e-12, "same symbol, same peak");
        }
        let vals: Vec<f64> = peaks.values().copied().collect();
        for i in 0..vals.len() {
            for j in i + 1..vals.len() {
                assert!((vals[i] - vals[j]).abs() > 0.05, "{peaks:?}");
            }
        }
    }

    #[test]
    fn synth_invalid_specs() {
        let mut s = spec(&['N', 'N'], 0.0);
        s.beat_indices = vec![500, 300];
        assert!(matches!(synth_record(&s, 0), Err(IngestError::InvalidSpec(_))));
        let mut s = spec(&['N'], 0.0);
        s.beat_symbols = vec!['X'];
        assert!(matches!(synth_record(&s, 0), Err(IngestError::InvalidSpec(_))));
        let mut s = spec(&['N'], 0.0);
        s.beat_indices = vec![s.num_samples];
        assert!(matches!(synth_record(&s, 0), Err(IngestError::InvalidSpec(_))));
        let s = spec(&['N'], -1.0);
        assert!(matches!(synth_record(&s, 0), Err(IngestError::InvalidSpec(_))));
    }

    #[test]
    fn record_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = synth_record(&spec(&['N', 'V'], 0.02), 5).unwrap();
        write_record(&rec, dir.path(), dir.path()).unwrap();
        let back = read_record(dir.path(), dir.path(), "s").unwrap();
        assert_eq!(back.header, rec.header);
        assert_eq!(back.annotations, rec.annotations);
        // quantised to 1/200 mV
        assert!(back.samples.max_abs_diff(&rec.samples) <= 0.5 / 200.0 + 1e-12);
    }
}
