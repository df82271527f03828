//! Per-frame item embeddings and the `.mapssemb` container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MAPS" | version u32 | frame_count u32
//! per frame:
//!   frame_index u32 | N u32 | M u32 | N_p u32 | n_sources u32
//!   N × (source_id u32, kind u8, p u16)     kind: 0 output, 1 reference, 2 distortion
//!   N·M f32, row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::{is_finite, Scalar};

pub const MAGIC: &[u8; 4] = b"MAPS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("format error: {0}")]
    Format(String),
    #[error("shape error: N = {n} but {n_sources} sources with N_p = {n_p} require {expected}")]
    Shape {
        n: usize,
        n_sources: usize,
        n_p: usize,
        expected: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: expected frame of {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ItemKind {
    Output,
    Reference,
    /// 1-based distortion index.
    Distortion(u16),
}

impl ItemKind {
    fn code(self) -> (u8, u16) {
        match self {
            ItemKind::Output => (0, 0),
            ItemKind::Reference => (1, 0),
            ItemKind::Distortion(p) => (2, p),
        }
    }

    fn from_code(kind: u8, p: u16) -> Result<Self, EmbeddingError> {
        match (kind, p) {
            (0, 0) => Ok(ItemKind::Output),
            (1, 0) => Ok(ItemKind::Reference),
            (2, p) if p >= 1 => Ok(ItemKind::Distortion(p)),
            _ => Err(EmbeddingError::Format(format!("bad label kind={kind} p={p}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ItemLabel {
    pub source_id: u32,
    pub kind: ItemKind,
}

/// Row indices of one source's items within a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterRows {
    pub source_id: u32,
    pub output: usize,
    pub reference: usize,
    /// Ordered by distortion index.
    pub distortions: Vec<usize>,
}

impl ClusterRows {
    /// Reference followed by its distortions: the PS cluster members.
    pub fn cluster_members(&self) -> Vec<usize> {
        std::iter::once(self.reference).chain(self.distortions.iter().copied()).collect()
    }
}

/// Item layout of a frame, one entry per source in order of appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayout {
    pub sources: Vec<ClusterRows>,
}

impl FrameLayout {
    /// Layout produced by [`assemble_frame_set`].
    pub fn canonical(n_sources: usize, n_p: usize) -> Self {
        let per = n_p + 2;
        FrameLayout {
            sources: (0..n_sources)
                .map(|s| ClusterRows {
                    source_id: s as u32,
                    output: s * per,
                    reference: s * per + 1,
                    distortions: (0..n_p).map(|p| s * per + 2 + p).collect(),
                })
                .collect(),
        }
    }

    pub fn n_items(&self) -> usize {
        self.sources.iter().map(|s| s.distortions.len() + 2).sum()
    }

    pub fn position(&self, source_id: u32) -> Option<usize> {
        self.sources.iter().position(|s| s.source_id == source_id)
    }
}

/// Encoded items of one time frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T: Scalar> {
    /// `N × M`, one row per item.
    pub vectors: DMatrix<T>,
    pub labels: Vec<ItemLabel>,
    pub frame_index: u32,
    pub n_distortions: usize,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn n_items(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn n_sources(&self) -> usize {
        let mut ids: Vec<u32> = self.labels.iter().map(|l| l.source_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Checks the cardinality and label invariants and derives the layout.
    pub fn layout(&self) -> Result<FrameLayout, EmbeddingError> {
        let n = self.n_items();
        if self.labels.len() != n {
            return Err(EmbeddingError::Format(format!(
                "{} labels for {} rows",
                self.labels.len(),
                n
            )));
        }
        let n_sources = self.n_sources();
        let expected = n_sources * (self.n_distortions + 2);
        if n != expected {
            return Err(EmbeddingError::Shape {
                n,
                n_sources,
                n_p: self.n_distortions,
                expected,
            });
        }
        let mut order: Vec<u32> = Vec::new();
        let mut per_source: BTreeMap<u32, (Option<usize>, Option<usize>, BTreeMap<u16, usize>)> =
            BTreeMap::new();
        for (row, label) in self.labels.iter().enumerate() {
            if !per_source.contains_key(&label.source_id) {
                order.push(label.source_id);
            }
            let entry = per_source.entry(label.source_id).or_default();
            let dup = match label.kind {
                ItemKind::Output => entry.0.replace(row).is_some(),
                ItemKind::Reference => entry.1.replace(row).is_some(),
                ItemKind::Distortion(p) => {
                    if p as usize > self.n_distortions {
                        return Err(EmbeddingError::Format(format!(
                            "distortion index {p} exceeds N_p = {}",
                            self.n_distortions
                        )));
                    }
                    entry.2.insert(p, row).is_some()
                }
            };
            if dup {
                return Err(EmbeddingError::Format(format!("duplicate label {label:?}")));
            }
        }
        let sources = order
            .into_iter()
            .map(|sid| {
                let (out, reference, dist) = &per_source[&sid];
                match (out, reference) {
                    (Some(o), Some(r)) if dist.len() == self.n_distortions => Ok(ClusterRows {
                        source_id: sid,
                        output: *o,
                        reference: *r,
                        distortions: dist.values().copied().collect(),
                    }),
                    _ => Err(EmbeddingError::Format(format!("incomplete item set for source {sid}"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FrameLayout { sources })
    }

    /// Casts to another scalar type.
    pub fn convert<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            vectors: self.vectors.map(|v| U::from_f64(v.to_f64_lossy()).expect("finite")),
            labels: self.labels.clone(),
            frame_index: self.frame_index,
            n_distortions: self.n_distortions,
        }
    }
}

/// The raw-waveform encoder: the frame itself is the feature vector.
pub fn encode_raw<T: Scalar>(frame: &[T], frame_len: usize) -> Result<DVector<T>, EmbeddingError> {
    if frame.len() != frame_len {
        return Err(EmbeddingError::LengthMismatch {
            expected: frame_len,
            got: frame.len(),
        });
    }
    Ok(DVector::from_column_slice(frame))
}

/// Encoded items of one source.
#[derive(Debug, Clone)]
pub struct SourceItems<T: Scalar> {
    pub source_id: u32,
    pub output: DVector<T>,
    pub reference: DVector<T>,
    pub distortions: Vec<DVector<T>>,
}

/// Stacks every source's output, reference and distortions into one matrix.
pub fn assemble_frame_set<T: Scalar>(
    frame_index: u32,
    sources: &[SourceItems<T>],
) -> Result<EmbeddingMatrix<T>, EmbeddingError> {
    let first = sources
        .first()
        .ok_or_else(|| EmbeddingError::Format("no sources".into()))?;
    let m = first.output.len();
    let n_p = first.distortions.len();
    let mut rows: Vec<&DVector<T>> = Vec::new();
    let mut labels = Vec::new();
    for src in sources {
        if src.distortions.len() != n_p {
            return Err(EmbeddingError::Shape {
                n: src.distortions.len(),
                n_sources: sources.len(),
                n_p,
                expected: n_p,
            });
        }
        let items = std::iter::once((&src.output, ItemKind::Output))
            .chain(std::iter::once((&src.reference, ItemKind::Reference)))
            .chain(
                src.distortions
                    .iter()
                    .enumerate()
                    .map(|(p, v)| (v, ItemKind::Distortion(p as u16 + 1))),
            );
        for (v, kind) in items {
            if v.len() != m {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: m,
                    got: v.len(),
                });
            }
            rows.push(v);
            labels.push(ItemLabel {
                source_id: src.source_id,
                kind,
            });
        }
    }
    let n = rows.len();
    let vectors = DMatrix::from_fn(n, m, |r, c| rows[r][c]);
    Ok(EmbeddingMatrix {
        vectors,
        labels,
        frame_index,
        n_distortions: n_p,
    })
}

/// Serializes frames into `.mapssemb` bytes (values stored as `f32`).
pub fn encode_embedding_file<T: Scalar>(frames: &[EmbeddingMatrix<T>]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        let n = f.n_items() as u32;
        buf.extend_from_slice(&f.frame_index.to_le_bytes());
        buf.extend_from_slice(&n.to_le_bytes());
        buf.extend_from_slice(&(f.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(f.n_distortions as u32).to_le_bytes());
        buf.extend_from_slice(&(f.n_sources() as u32).to_le_bytes());
        for label in &f.labels {
            let (kind, p) = label.kind.code();
            buf.extend_from_slice(&label.source_id.to_le_bytes());
            buf.push(kind);
            buf.extend_from_slice(&p.to_le_bytes());
        }
        for r in 0..f.n_items() {
            for c in 0..f.dim() {
                buf.extend_from_slice(&(f.vectors[(r, c)].to_f64_lossy() as f32).to_le_bytes());
            }
        }
    }
    buf
}

pub fn write_embedding_file<T: Scalar>(
    path: &Path,
    frames: &[EmbeddingMatrix<T>],
) -> Result<(), EmbeddingError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_embedding_file(frames))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingError> {
        if self.bytes.len() - self.pos < n {
            return Err(EmbeddingError::Format(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16, EmbeddingError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u8(&mut self) -> Result<u8, EmbeddingError> {
        Ok(self.take(1)?[0])
    }
}

/// Parses `.mapssemb` bytes, validating every frame.
pub fn decode_embedding_file(bytes: &[u8]) -> Result<Vec<EmbeddingMatrix<f32>>, EmbeddingError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(EmbeddingError::Format(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let frame_index = cur.u32()?;
        let n = cur.u32()? as usize;
        let m = cur.u32()? as usize;
        let n_p = cur.u32()? as usize;
        let n_sources = cur.u32()? as usize;
        let expected = n_sources * (n_p + 2);
        if n != expected {
            return Err(EmbeddingError::Shape {
                n,
                n_sources,
                n_p,
                expected,
            });
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let source_id = cur.u32()?;
            let kind = cur.u8()?;
            let p = cur.u16()?;
            labels.push(ItemLabel {
                source_id,
                kind: ItemKind::from_code(kind, p)?,
            });
        }
        let raw = cur.take(n * m * 4)?;
        let mut values = Vec::with_capacity(n * m);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !is_finite(v) {
                return Err(EmbeddingError::Format(format!(
                    "non-finite value in frame {frame_index}"
                )));
            }
            values.push(v);
        }
        let frame = EmbeddingMatrix {
            vectors: DMatrix::from_row_slice(n, m, &values),
            labels,
            frame_index,
            n_distortions: n_p,
        };
        if frame.n_sources() != n_sources {
            return Err(EmbeddingError::Format(format!(
                "header declares {n_sources} sources, labels carry {}",
                frame.n_sources()
            )));
        }
        frame.layout()?;
        frames.push(frame);
    }
    if cur.pos != bytes.len() {
        return Err(EmbeddingError::Format("trailing bytes after last frame".into()));
    }
    Ok(frames)
}

pub fn read_embedding_file(path: &Path) -> Result<Vec<EmbeddingMatrix<f32>>, EmbeddingError> {
    decode_embedding_file(&fs::read(path)?)
}
