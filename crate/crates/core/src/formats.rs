//! On-disk artifacts: segment archive, dataset manifest, LDE1 embedding
//! archive and model checkpoint. All binary formats are little-endian.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::ingest::{Segment, SegmentSource};
use crate::linalg::Matrix;
use crate::preprocess::AamiClass;
use crate::transformer::{ModelConfig, ModelParams};

pub const SEGMENT_MAGIC: &[u8; 4] = b"SEG1";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"LDE1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LDTF";
pub const SEGMENT_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_HEADER: &str = "record_name,center_index,symbol,aami_class,split";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("invalid archive: {0}")]
    Invalid(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

type Reader<'a> = Cursor<&'a [u8]>;

fn truncated(what: &'static str) -> impl Fn(std::io::Error) -> FormatError {
    move |_| FormatError::Truncated(what)
}

fn read_u32(r: &mut Reader, what: &'static str) -> Result<u32, FormatError> {
    r.read_u32::<LittleEndian>().map_err(truncated(what))
}

fn read_u64(r: &mut Reader, what: &'static str) -> Result<u64, FormatError> {
    r.read_u64::<LittleEndian>().map_err(truncated(what))
}

fn read_f64s(r: &mut Reader, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if remaining / 8 < n {
        return Err(FormatError::Truncated(what));
    }
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out).map_err(truncated(what))?;
    Ok(out)
}

fn write_f64s(out: &mut Vec<u8>, data: &[f64]) {
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.write_u32::<LittleEndian>(v).expect("vec write");
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.write_u64::<LittleEndian>(v).expect("vec write");
}

fn to_u32(n: usize, what: &str) -> u32 {
    u32::try_from(n).unwrap_or_else(|_| panic!("{what} {n} does not fit the archive's u32 field"))
}

fn check_magic(r: &mut Reader, expected: &[u8; 4]) -> Result<(), FormatError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found).map_err(truncated("header"))?;
    if &found != expected {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    Ok(())
}

fn check_end(r: &Reader) -> Result<(), FormatError> {
    let rest = r.get_ref().len() - r.position() as usize;
    if rest != 0 {
        return Err(FormatError::TrailingBytes(rest));
    }
    Ok(())
}

/// The three seeds every run is reproducible from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub smote: u64,
    pub model: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Test),
            _ => None,
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedSegment {
    pub segment: Segment,
    pub split: SplitTag,
}

/// Preprocessed segments in manifest order.
///
/// Layout: `"SEG1"`, u32 version, u64 split seed, u64 SMOTE seed,
/// u32 channels, u32 length, u32 count, then per segment: u8 class index,
/// u32 symbol code point, u8 split (0 train, 1 test), u32 name length,
/// name bytes, u64 centre index, `channels × length` f64 row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentArchive {
    pub split_seed: u64,
    pub smote_seed: u64,
    pub channels: usize,
    pub len: usize,
    pub entries: Vec<ArchivedSegment>,
}

impl SegmentArchive {
    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let mut out = Vec::new();
        out.extend_from_slice(SEGMENT_MAGIC);
        put_u32(&mut out, SEGMENT_VERSION);
        put_u64(&mut out, self.split_seed);
        put_u64(&mut out, self.smote_seed);
        put_u32(&mut out, to_u32(self.channels, "channel count"));
        put_u32(&mut out, to_u32(self.len, "segment length"));
        put_u32(&mut out, to_u32(self.entries.len(), "segment count"));
        for e in &self.entries {
            let s = &e.segment;
            if s.data.shape() != (self.channels, self.len) {
                return Err(FormatError::Invalid(format!(
                    "segment {}@{} is {}×{}, archive is {}×{}",
                    s.source.record_name,
                    s.source.center_index,
                    s.data.rows(),
                    s.data.cols(),
                    self.channels,
                    self.len
                )));
            }
            out.push(s.label.index() as u8);
            put_u32(&mut out, s.symbol as u32);
            out.push(e.split.code());
            let name = s.source.record_name.as_bytes();
            put_u32(&mut out, to_u32(name.len(), "record name length"));
            out.extend_from_slice(name);
            put_u64(&mut out, s.source.center_index as u64);
            write_f64s(&mut out, s.data.as_slice());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let r = &mut Cursor::new(bytes);
        check_magic(r, SEGMENT_MAGIC)?;
        let version = read_u32(r, "header")?;
        if version != SEGMENT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let split_seed = read_u64(r, "header")?;
        let smote_seed = read_u64(r, "header")?;
        let channels = read_u32(r, "header")? as usize;
        let len = read_u32(r, "header")? as usize;
        let count = read_u32(r, "header")? as usize;
        let mut entries = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let label_code = r.read_u8().map_err(truncated("segment"))?;
            let label = AamiClass::from_index(label_code as usize)
                .ok_or_else(|| FormatError::Invalid(format!("class index {label_code}")))?;
            let code = read_u32(r, "segment")?;
            let symbol = char::from_u32(code).ok_or_else(|| FormatError::Invalid(format!("symbol code {code}")))?;
            let split_code = r.read_u8().map_err(truncated("segment"))?;
            let split = SplitTag::from_code(split_code)
                .ok_or_else(|| FormatError::Invalid(format!("split code {split_code}")))?;
            let name_len = read_u32(r, "segment")? as usize;
            let mut name = vec![0u8; name_len.min(bytes.len())];
            if name.len() != name_len {
                return Err(FormatError::Truncated("segment"));
            }
            r.read_exact(&mut name).map_err(truncated("segment"))?;
            let record_name = String::from_utf8(name).map_err(|_| FormatError::Invalid("record name is not UTF-8".into()))?;
            let center_index = read_u64(r, "segment")? as usize;
            let data = read_f64s(r, channels * len, "segment data")?;
            entries.push(ArchivedSegment {
                segment: Segment {
                    data: Matrix::from_vec(channels, len, data),
                    label,
                    symbol,
                    source: SegmentSource {
                        record_name,
                        center_index,
                    },
                },
                split,
            });
        }
        check_end(r)?;
        Ok(Self {
            split_seed,
            smote_seed,
            channels,
            len,
            entries,
        })
    }

    /// Manifest rows in archive order.
    pub fn manifest(&self) -> Vec<ManifestRow> {
        self.entries
            .iter()
            .map(|e| ManifestRow {
                record_name: e.segment.source.record_name.clone(),
                center_index: e.segment.source.center_index,
                symbol: e.segment.symbol,
                aami_class: e.segment.label,
                split: e.split,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub record_name: String,
    pub center_index: usize,
    pub symbol: char,
    pub aami_class: AamiClass,
    pub split: SplitTag,
}

pub fn manifest_to_csv(rows: &[ManifestRow]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.record_name,
            r.center_index,
            r.symbol,
            r.aami_class,
            r.split.as_str()
        ));
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => {
            return Err(FormatError::Manifest {
                line: 1,
                reason: format!("expected header {MANIFEST_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| FormatError::Manifest { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let mut symbol = f[2].chars();
        let (Some(sym), None) = (symbol.next(), symbol.next()) else {
            return Err(err(format!("symbol {:?} is not one character", f[2])));
        };
        rows.push(ManifestRow {
            record_name: f[0].to_string(),
            center_index: f[1].parse().map_err(|_| err(format!("bad centre index {:?}", f[1])))?,
            symbol: sym,
            aami_class: f[3].parse().map_err(|e: crate::preprocess::PreprocessError| err(e.to_string()))?,
            split: f[4].parse().map_err(err)?,
        });
    }
    Ok(rows)
}

/// A sequence of equally shaped f64 matrices.
///
/// Layout: 16-byte header (`"LDE1"`, u32 rows, u32 cols, u32 count) followed
/// by `count` row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    pub rows: usize,
    pub cols: usize,
    pub matrices: Vec<Matrix>,
}

impl EmbeddingArchive {
    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let mut out = Vec::with_capacity(16 + self.matrices.len() * self.rows * self.cols * 8);
        out.extend_from_slice(EMBEDDING_MAGIC);
        put_u32(&mut out, to_u32(self.rows, "row count"));
        put_u32(&mut out, to_u32(self.cols, "column count"));
        put_u32(&mut out, to_u32(self.matrices.len(), "matrix count"));
        for m in &self.matrices {
            if m.shape() != (self.rows, self.cols) {
                return Err(FormatError::Invalid(format!(
                    "matrix is {}×{}, archive is {}×{}",
                    m.rows(),
                    m.cols(),
                    self.rows,
                    self.cols
                )));
            }
            write_f64s(&mut out, m.as_slice());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let r = &mut Cursor::new(bytes);
        check_magic(r, EMBEDDING_MAGIC)?;
        let rows = read_u32(r, "header")? as usize;
        let cols = read_u32(r, "header")? as usize;
        let count = read_u32(r, "header")? as usize;
        let body = bytes.len() - 16;
        if rows * cols * 8 * count != body {
            return Err(FormatError::Invalid(format!(
                "header declares {count} matrices of {rows}×{cols} but body has {body} bytes"
            )));
        }
        let matrices = (0..count)
            .map(|_| read_f64s(r, rows * cols, "matrix").map(|d| Matrix::from_vec(rows, cols, d)))
            .collect::<Result<_, _>>()?;
        Ok(Self { rows, cols, matrices })
    }

    /// `index,row,c0,…` with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,row");
        for c in 0..self.cols {
            s.push_str(&format!(",c{c}"));
        }
        s.push('\n');
        for (i, m) in self.matrices.iter().enumerate() {
            for r in 0..self.rows {
                s.push_str(&format!("{i},{r}"));
                for v in m.row(r) {
                    s.push_str(&format!(",{v:?}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Trained parameters plus the seeds that produced them.
///
/// Layout: `"LDTF"`, u32 version, u32 d, seq_len, num_heads, num_layers,
/// ffb_hidden, num_classes, f64 dropout, u64 model seed, u64 split seed,
/// u64 SMOTE seed, u32 tensor count, then per tensor (canonical order):
/// u32 rank, `rank` u32 dimensions, row-major f64 data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub split_seed: u64,
    pub smote_seed: u64,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let c = &self.params.config;
        let mut out = Vec::with_capacity(64 + self.params.num_scalars() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for v in [c.d, c.seq_len, c.num_heads, c.num_layers, c.ffb_hidden, c.num_classes] {
            put_u32(&mut out, to_u32(v, "model dimension"));
        }
        out.extend_from_slice(&c.dropout.to_le_bytes());
        put_u64(&mut out, c.seed);
        put_u64(&mut out, self.split_seed);
        put_u64(&mut out, self.smote_seed);
        let tensors = self.params.tensors();
        put_u32(&mut out, to_u32(tensors.len(), "tensor count"));
        for t in tensors {
            put_u32(&mut out, t.shape.len() as u32);
            for &d in &t.shape {
                put_u32(&mut out, to_u32(d, "tensor dimension"));
            }
            write_f64s(&mut out, t.data);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let r = &mut Cursor::new(bytes);
        check_magic(r, CHECKPOINT_MAGIC)?;
        let version = read_u32(r, "header")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = read_u32(r, "header")? as usize;
        }
        let dropout = r.read_f64::<LittleEndian>().map_err(truncated("header"))?;
        let config = ModelConfig {
            d: dims[0],
            seq_len: dims[1],
            num_heads: dims[2],
            num_layers: dims[3],
            ffb_hidden: dims[4],
            num_classes: dims[5],
            dropout,
            seed: read_u64(r, "header")?,
        };
        config.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
        let split_seed = read_u64(r, "header")?;
        let smote_seed = read_u64(r, "header")?;
        let count = read_u32(r, "header")? as usize;

        // Bound the allocation by what the file can actually hold.
        let expected_scalars = crate::transformer::count_params(&config).total as usize;
        if expected_scalars > bytes.len() / 8 {
            return Err(FormatError::Truncated("tensor data"));
        }
        let mut params = ModelParams::zeros(&config);
        let mut tensors = params.tensors_mut();
        if count != tensors.len() {
            return Err(FormatError::Invalid(format!(
                "{count} tensors, configuration implies {}",
                tensors.len()
            )));
        }
        for t in tensors.iter_mut() {
            let rank = read_u32(r, "tensor shape")? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(r, "tensor shape").map(|v| v as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if shape != t.shape {
                return Err(FormatError::Invalid(format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    t.name, t.shape
                )));
            }
            let data = read_f64s(r, t.data.len(), "tensor data")?;
            t.data.copy_from_slice(&data);
        }
        drop(tensors);
        check_end(r)?;
        Ok(Self {
            params,
            split_seed,
            smote_seed,
        })
    }
}
