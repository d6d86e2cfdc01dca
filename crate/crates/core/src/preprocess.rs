//! AAMI class grouping, per-segment Z-score, stratified splitting and SMOTE.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Segment, SegmentSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("beat symbol {0:?} is not in the AAMI grouping table")]
    UnknownSymbol(char),
    #[error("unknown AAMI class {0:?}")]
    UnknownClass(String),
    #[error("class {class} has {size} member(s); oversampling needs at least 2")]
    ClassTooSmall { class: AamiClass, size: usize },
    #[error("train fraction {0} must lie in (0, 1)")]
    InvalidFraction(f64),
    #[error("k_neighbors must be at least 1")]
    InvalidNeighbors,
    #[error("segments have inconsistent shapes")]
    ShapeMismatch,
}

/// Heartbeat super-classes. The declaration order fixes class indices and the
/// confusion-matrix layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AamiClass {
    N,
    S,
    V,
    F,
    Q,
}

impl AamiClass {
    pub const ALL: [AamiClass; 5] = [AamiClass::N, AamiClass::S, AamiClass::V, AamiClass::F, AamiClass::Q];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AamiClass::N => "N",
            AamiClass::S => "S",
            AamiClass::V => "V",
            AamiClass::F => "F",
            AamiClass::Q => "Q",
        }
    }
}

impl fmt::Display for AamiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AamiClass {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| PreprocessError::UnknownClass(s.to_string()))
    }
}

/// The fifteen MIT-BIH beat symbols and their AAMI group.
pub const AAMI_TABLE: [(char, AamiClass); 15] = [
    ('N', AamiClass::N),
    ('L', AamiClass::N),
    ('R', AamiClass::N),
    ('e', AamiClass::N),
    ('j', AamiClass::N),
    ('A', AamiClass::S),
    ('a', AamiClass::S),
    ('J', AamiClass::S),
    ('S', AamiClass::S),
    ('V', AamiClass::V),
    ('E', AamiClass::V),
    ('F', AamiClass::F),
    ('/', AamiClass::Q),
    ('f', AamiClass::Q),
    ('Q', AamiClass::Q),
];

pub fn map_symbol_to_aami(symbol: char) -> Result<AamiClass, PreprocessError> {
    AAMI_TABLE
        .iter()
        .find(|(s, _)| *s == symbol)
        .map(|(_, c)| *c)
        .ok_or(PreprocessError::UnknownSymbol(symbol))
}

pub type ClassCounts = BTreeMap<AamiClass, usize>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub segments: Vec<Segment>,
}

impl Dataset {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Counts for every class present (absent classes are omitted).
    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::new();
        for s in &self.segments {
            *counts.entry(s.label).or_default() += 1;
        }
        counts
    }

    fn indices_by_class(&self) -> BTreeMap<AamiClass, Vec<usize>> {
        let mut map: BTreeMap<AamiClass, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.segments.iter().enumerate() {
            map.entry(s.label).or_default().push(i);
        }
        map
    }
}

/// Per-channel standardisation with the population (1/n) deviation.
/// Constant channels become all zeros.
pub fn zscore(segment: &Segment) -> Segment {
    let mut out = segment.clone();
    for c in 0..out.data.rows() {
        zscore_in_place(out.data.row_mut(c));
    }
    out
}

pub fn zscore_in_place(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() || std <= f64::EPSILON * mean.abs() {
        x.iter_mut().for_each(|v| *v = 0.0);
    } else {
        x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    /// Expected classes that had no segments at all.
    pub empty_classes: Vec<AamiClass>,
}

/// Stratified split: within each class, a seeded shuffle then
/// `floor(train_fraction · n)` segments go to train, the rest to test.
/// `expected` lists the classes the caller intends to model; any of them with
/// zero segments is reported (and logged), not treated as fatal.
pub fn split_train_test(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
    expected: &[AamiClass],
) -> Result<Split, PreprocessError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(PreprocessError::InvalidFraction(train_fraction));
    }
    let by_class = dataset.indices_by_class();
    let empty_classes: Vec<AamiClass> = expected
        .iter()
        .copied()
        .filter(|c| !by_class.contains_key(c))
        .collect();
    for c in &empty_classes {
        log::warn!("class {c} has no segments");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for idx in by_class.values() {
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).floor() as usize;
        train.extend(idx[..n_train].iter().map(|&i| dataset.segments[i].clone()));
        test.extend(idx[n_train..].iter().map(|&i| dataset.segments[i].clone()));
    }
    Ok(Split {
        train: Dataset::new(train),
        test: Dataset::new(test),
        empty_classes,
    })
}

/// Provenance of one SMOTE sample, kept for auditing the convex-combination
/// property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOrigin {
    /// Index into the input dataset of the seed sample `x`.
    pub base: usize,
    /// Index into the input dataset of the chosen neighbour `x_nn`.
    pub neighbor: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oversampled {
    /// Original segments (unchanged, in input order) followed by synthetic ones.
    pub dataset: Dataset,
    /// One entry per synthetic segment, aligned with the tail of `dataset`.
    pub origins: Vec<SyntheticOrigin>,
}

/// Oversamples every minority class up to the majority count by interpolating
/// between a random member and one of its `k` nearest same-class neighbours.
/// Each class draws from its own seeded stream, so the result does not depend
/// on class iteration order.
pub fn smote(train: &Dataset, k_neighbors: usize, seed: u64) -> Result<Oversampled, PreprocessError> {
    if k_neighbors == 0 {
        return Err(PreprocessError::InvalidNeighbors);
    }
    if let Some(first) = train.segments.first() {
        if train.segments.iter().any(|s| s.data.shape() != first.data.shape()) {
            return Err(PreprocessError::ShapeMismatch);
        }
    }
    let by_class = train.indices_by_class();
    let majority = by_class.values().map(Vec::len).max().unwrap_or(0);

    let mut segments = train.segments.clone();
    let mut origins = Vec::new();
    for (&class, members) in &by_class {
        let need = majority - members.len();
        if need == 0 {
            continue;
        }
        if members.len() < 2 {
            return Err(PreprocessError::ClassTooSmall {
                class,
                size: members.len(),
            });
        }
        let k = k_neighbors.min(members.len() - 1);
        let neighbors = nearest_neighbors(train, members, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(class.index() as u64 + 1)));
        for _ in 0..need {
            let b = rng.gen_range(0..members.len());
            let nn = neighbors[b][rng.gen_range(0..k)];
            let gap: f64 = rng.gen();
            let base = &train.segments[members[b]];
            let other = &train.segments[members[nn]];
            let data: Vec<f64> = base
                .data
                .as_slice()
                .iter()
                .zip(other.data.as_slice())
                .map(|(x, y)| x + gap * (y - x))
                .collect();
            segments.push(Segment {
                data: crate::linalg::Matrix::from_vec(base.data.rows(), base.data.cols(), data),
                label: class,
                symbol: base.symbol,
                source: SegmentSource {
                    record_name: format!("smote:{}", base.source.record_name),
                    center_index: base.source.center_index,
                },
            });
            origins.push(SyntheticOrigin {
                base: members[b],
                neighbor: members[nn],
                gap,
            });
        }
    }
    Ok(Oversampled {
        dataset: Dataset::new(segments),
        origins,
    })
}

/// For each member (by position in `members`), the positions of its `k`
/// nearest other members under squared Euclidean distance; ties broken by
/// position.
fn nearest_neighbors(data: &Dataset, members: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = members.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        let a = data.segments[members[i]].data.as_slice();
        for j in i + 1..n {
            let b = data.segments[members[j]].data.as_slice();
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&p, &q| dist[i * n + p].total_cmp(&dist[i * n + q]).then(p.cmp(&q)));
            order.truncate(k);
            order
        })
        .collect()
}
