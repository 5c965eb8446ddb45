//! Binary embedding datasets and matrices.
//!
//! Two little-endian layouts are defined here:
//!
//! * `CLIPDIS1` holds [`EmbeddingTuple`] records, five embeddings each.
//! * `CLIPMAT1` holds an [`EmbeddingMatrix`] with optional per-row labels and ids.
//!
//! Files are read fully into memory; neither layout is compressed.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const TUPLE_MAGIC: &[u8; 8] = b"CLIPDIS1";
pub const MATRIX_MAGIC: &[u8; 8] = b"CLIPMAT1";
pub const FORMAT_VERSION: u32 = 1;

/// Size of the `CLIPDIS1` header in bytes.
pub const TUPLE_HEADER_LEN: usize = 24;

pub const MIN_STRING_LEN: usize = 3;
pub const MAX_STRING_LEN: usize = 10;

/// The five embedding kinds stored per tuple, in on-disk order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Natural image.
    XI,
    /// Text class label.
    YI,
    /// Synthetic image of text.
    XT,
    /// Text string.
    YT,
    /// Natural image with text rendered on it.
    XIT,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 5] = [
        EmbeddingKind::XI,
        EmbeddingKind::YI,
        EmbeddingKind::XT,
        EmbeddingKind::YT,
        EmbeddingKind::XIT,
    ];

    pub fn index(self) -> usize {
        match self {
            EmbeddingKind::XI => 0,
            EmbeddingKind::YI => 1,
            EmbeddingKind::XT => 2,
            EmbeddingKind::YT => 3,
            EmbeddingKind::XIT => 4,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            EmbeddingKind::XI => "xi",
            EmbeddingKind::YI => "yi",
            EmbeddingKind::XT => "xt",
            EmbeddingKind::YT => "yt",
            EmbeddingKind::XIT => "xit",
        }
    }
}

/// One training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTuple {
    pub x_i: Vec<f32>,
    pub y_i: Vec<f32>,
    pub x_t: Vec<f32>,
    pub y_t: Vec<f32>,
    pub x_it: Vec<f32>,
    pub string: String,
    pub is_real_word: bool,
    pub class_id: u32,
}

impl EmbeddingTuple {
    pub fn dim(&self) -> usize {
        self.x_i.len()
    }

    pub fn get(&self, kind: EmbeddingKind) -> &[f32] {
        match kind {
            EmbeddingKind::XI => &self.x_i,
            EmbeddingKind::YI => &self.y_i,
            EmbeddingKind::XT => &self.x_t,
            EmbeddingKind::YT => &self.y_t,
            EmbeddingKind::XIT => &self.x_it,
        }
    }

    fn vectors(&self) -> [&[f32]; 5] {
        [&self.x_i, &self.y_i, &self.x_t, &self.y_t, &self.x_it]
    }

    /// Checks the record invariants against an expected dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        for (kind, v) in EmbeddingKind::ALL.iter().zip(self.vectors()) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "tuple {:?}: {} has dimension {}, expected {}",
                    self.string,
                    kind.short_name(),
                    v.len(),
                    dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tuple {:?}: {} has non-finite entries",
                    self.string,
                    kind.short_name()
                )));
            }
        }
        validate_string(&self.string)
    }
}

/// Strings are lowercase latin words of 3 to 10 letters.
pub fn validate_string(s: &str) -> Result<()> {
    let n = s.chars().count();
    if !(MIN_STRING_LEN..=MAX_STRING_LEN).contains(&n) || !s.chars().all(|c| c.is_ascii_lowercase()) {
        return Err(Error::InvalidArgument(format!(
            "string {s:?} must be {MIN_STRING_LEN}-{MAX_STRING_LEN} characters from [a-z]"
        )));
    }
    Ok(())
}

/// A gallery or query matrix with optional row labels and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Array2<f32>,
    pub labels: Option<Vec<String>>,
    pub ids: Option<Vec<u32>>,
}

impl EmbeddingMatrix {
    pub fn new(rows: Array2<f32>) -> Result<Self> {
        let m = Self {
            rows,
            labels: None,
            ids: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<u32>) -> Result<Self> {
        self.ids = Some(ids);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.rows.mapv(f64::from)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("matrix must have at least one row".into()));
        }
        if self.rows.ncols() == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
        }
        if self.rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    n
                )));
            }
            if labels.iter().any(|l| l.len() > u16::MAX as usize) {
                return Err(Error::InvalidArgument("label longer than 65535 bytes".into()));
            }
        }
        if let Some(ids) = &self.ids {
            if ids.len() != n {
                return Err(Error::DimensionMismatch(format!("{} ids for {} rows", ids.len(), n)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub magic: [u8; 8],
    pub version: u32,
    pub dim: u32,
    pub count: u64,
}

/// Little-endian cursor over an in-memory file.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{}: needed {} bytes at offset {}, {} available",
                self.what,
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let found = self.take(8)?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, out: &mut Vec<f32>) -> Result<()> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Truncated(self.what.into()))?)?;
        out.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        );
        Ok(())
    }

    pub(crate) fn utf8(&mut self, n: usize) -> Result<String> {
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::InvalidUtf8(format!("{} string at offset {}", self.what, self.pos - n)))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(Error::InvalidArgument(format!(
                "{}: {} trailing bytes after the last record",
                self.what, rest
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes tuples into the `CLIPDIS1` layout.
pub fn encode_tuples(dim: usize, tuples: &[EmbeddingTuple]) -> Result<Vec<u8>> {
    if dim == 0 || dim > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!("invalid dimension {dim}")));
    }
    for t in tuples {
        t.validate(dim)?;
    }
    let mut out = Vec::with_capacity(TUPLE_HEADER_LEN + tuples.len() * (19 + 20 * dim));
    out.extend_from_slice(TUPLE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(tuples.len() as u64).to_le_bytes());
    for t in tuples {
        out.extend_from_slice(&t.class_id.to_le_bytes());
        out.push(u8::from(t.is_real_word));
        out.extend_from_slice(&(t.string.len() as u16).to_le_bytes());
        out.extend_from_slice(t.string.as_bytes());
        for v in t.vectors() {
            put_f32s(&mut out, v.iter().copied());
        }
    }
    Ok(out)
}

pub fn read_tuple_header(bytes: &[u8]) -> Result<DatasetHeader> {
    let mut r = ByteReader::new(bytes, "CLIPDIS1 header");
    r.magic(TUPLE_MAGIC)?;
    let version = r.u32()?;
    let dim = r.u32()?;
    let count = r.u64()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("header dimension is zero".into()));
    }
    Ok(DatasetHeader {
        magic: *TUPLE_MAGIC,
        version,
        dim,
        count,
    })
}

/// Parses a `CLIPDIS1` byte buffer.
pub fn decode_tuples(bytes: &[u8]) -> Result<(DatasetHeader, Vec<EmbeddingTuple>)> {
    let header = read_tuple_header(bytes)?;
    let dim = header.dim as usize;
    let mut r = ByteReader::new(bytes, "CLIPDIS1");
    r.take(TUPLE_HEADER_LEN)?;
    let mut tuples = Vec::with_capacity(header.count.min(1 << 20) as usize);
    for _ in 0..header.count {
        let class_id = r.u32()?;
        let is_real_word = match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "is_real_word byte must be 0 or 1, found {other}"
                )))
            }
        };
        let len = r.u16()? as usize;
        let string = r.utf8(len)?;
        let mut vecs: [Vec<f32>; 5] = Default::default();
        for v in vecs.iter_mut() {
            v.reserve_exact(dim);
            r.f32s(dim, v)?;
        }
        let [x_i, y_i, x_t, y_t, x_it] = vecs;
        tuples.push(EmbeddingTuple {
            x_i,
            y_i,
            x_t,
            y_t,
            x_it,
            string,
            is_real_word,
            class_id,
        });
    }
    r.finish()?;
    Ok((header, tuples))
}

pub fn save_tuples(path: impl AsRef<Path>, dim: usize, tuples: &[EmbeddingTuple]) -> Result<()> {
    let bytes = encode_tuples(dim, tuples)?;
    write_file(path.as_ref(), &bytes)
}

pub fn load_tuples(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<EmbeddingTuple>)> {
    let bytes = fs::read(path)?;
    decode_tuples(&bytes)
}

/// Serializes a matrix into the `CLIPMAT1` layout.
pub fn encode_matrix(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    m.validate()?;
    let (n, dim) = m.rows.dim();
    let mut out = Vec::with_capacity(26 + n * (4 * dim + 8));
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.push(u8::from(m.labels.is_some()));
    out.push(u8::from(m.ids.is_some()));
    for (i, row) in m.rows.rows().into_iter().enumerate() {
        if let Some(ids) = &m.ids {
            out.extend_from_slice(&ids[i].to_le_bytes());
        }
        if let Some(labels) = &m.labels {
            out.extend_from_slice(&(labels[i].len() as u16).to_le_bytes());
            out.extend_from_slice(labels[i].as_bytes());
        }
        put_f32s(&mut out, row.iter().copied());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut r = ByteReader::new(bytes, "CLIPMAT1");
    r.magic(MATRIX_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()? as usize;
    if dim == 0 {
        return Err(Error::InvalidArgument("header dimension is zero".into()));
    }
    let has_labels = r.u8()? != 0;
    let has_ids = r.u8()? != 0;
    let mut data = Vec::with_capacity(count.min(1 << 20) * dim);
    let mut labels = has_labels.then(Vec::new);
    let mut ids = has_ids.then(Vec::new);
    for _ in 0..count {
        if let Some(ids) = ids.as_mut() {
            ids.push(r.u32()?);
        }
        if let Some(labels) = labels.as_mut() {
            let len = r.u16()? as usize;
            labels.push(r.utf8(len)?);
        }
        r.f32s(dim, &mut data)?;
    }
    r.finish()?;
    let rows = Array2::from_shape_vec((count, dim), data)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let m = EmbeddingMatrix { rows, labels, ids };
    m.validate()?;
    Ok(m)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let bytes = encode_matrix(m)?;
    write_file(path.as_ref(), &bytes)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    decode_matrix(&fs::read(path)?)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Dimension shared by all tuples, or an error when they disagree.
pub fn common_dim(tuples: &[EmbeddingTuple]) -> Result<usize> {
    let first = tuples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty tuple list".into()))?;
    let d = first.dim();
    for t in tuples {
        t.validate(d)?;
    }
    Ok(d)
}

/// Splits tuples into train and validation sets, grouping by string so no word
/// appears on both sides. The validation side receives whole groups until it
/// holds `round(val_fraction * n)` tuples.
pub fn split_dataset(
    tuples: &[EmbeddingTuple],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<EmbeddingTuple>, Vec<EmbeddingTuple>)> {
    let (train, val) = split_indices(tuples, val_fraction, seed)?;
    Ok((
        train.into_iter().map(|i| tuples[i].clone()).collect(),
        val.into_iter().map(|i| tuples[i].clone()).collect(),
    ))
}

/// Index form of [`split_dataset`]; both index lists are ascending.
pub fn split_indices(
    tuples: &[EmbeddingTuple],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if tuples.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, t) in tuples.iter().enumerate() {
        groups
            .entry(t.string.as_str())
            .or_insert_with(|| {
                order.push(t.string.as_str());
                Vec::new()
            })
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let target = (val_fraction * tuples.len() as f64).round() as usize;
    let mut in_val = vec![false; tuples.len()];
    let mut n_val = 0;
    for s in order {
        if n_val >= target {
            break;
        }
        for &i in &groups[s] {
            in_val[i] = true;
        }
        n_val += groups[s].len();
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..tuples.len()).partition(|&i| in_val[i]);
    Ok((train, val))
}

/// Row-aligned batch of the five embedding kinds, converted to f64.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Kind-indexed matrices, see [`EmbeddingKind::index`].
    pub mats: [Array2<f64>; 5],
    pub strings: Vec<String>,
    pub is_real_word: Vec<bool>,
    pub class_ids: Vec<u32>,
    /// Positions of the rows in the source tuple list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_tuples(tuples: &[EmbeddingTuple], indices: &[usize]) -> Result<Self> {
        let first = indices
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let d = tuples[*first].dim();
        let n = indices.len();
        let mut mats: [Array2<f64>; 5] = std::array::from_fn(|_| Array2::zeros((n, d)));
        for (row, &i) in indices.iter().enumerate() {
            let t = &tuples[i];
            for kind in EmbeddingKind::ALL {
                let v = t.get(kind);
                if v.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "tuple {i} has dimension {}, batch uses {d}",
                        v.len()
                    )));
                }
                let mut dst = mats[kind.index()].row_mut(row);
                for (o, &x) in dst.iter_mut().zip(v) {
                    *o = f64::from(x);
                }
            }
        }
        Ok(Self {
            mats,
            strings: indices.iter().map(|&i| tuples[i].string.clone()).collect(),
            is_real_word: indices.iter().map(|&i| tuples[i].is_real_word).collect(),
            class_ids: indices.iter().map(|&i| tuples[i].class_id).collect(),
            indices: indices.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].ncols()
    }

    pub fn get(&self, kind: EmbeddingKind) -> &Array2<f64> {
        &self.mats[kind.index()]
    }
}

/// One shuffled pass over a tuple list.
pub struct BatchIter<'a> {
    tuples: &'a [EmbeddingTuple],
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    /// Number of batches the pass will yield.
    pub fn num_batches(&self) -> usize {
        let n = self.order.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let remaining = self.order.len() - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let end = self.pos + remaining.min(self.batch_size);
        let idx = &self.order[self.pos..end];
        self.pos = end;
        // Dimensions were checked when the iterator was created.
        Some(Batch::from_tuples(self.tuples, idx).expect("validated batch"))
    }
}

pub fn batch_iter(
    tuples: &[EmbeddingTuple],
    batch_size: usize,
    seed: u64,
    drop_last: bool,
) -> Result<BatchIter<'_>> {
    if batch_size < 1 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if !tuples.is_empty() {
        let d = tuples[0].dim();
        if let Some(t) = tuples.iter().find(|t| EmbeddingKind::ALL.iter().any(|&k| t.get(k).len() != d)) {
            return Err(Error::DimensionMismatch(format!(
                "tuple {:?} does not have dimension {d}",
                t.string
            )));
        }
    }
    let mut order: Vec<usize> = (0..tuples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(BatchIter {
        tuples,
        order,
        batch_size,
        drop_last,
        pos: 0,
    })
}

/// Mean `y_i` per class id, one row per id `0..=max_id`. Classes without
/// any tuple get a zero row.
pub fn class_texts_from_tuples(tuples: &[EmbeddingTuple]) -> Result<Array2<f64>> {
    let d = common_dim(tuples)?;
    let c = tuples.iter().map(|t| t.class_id).max().unwrap_or(0) as usize + 1;
    let mut sums = Array2::<f64>::zeros((c, d));
    let mut counts = vec![0usize; c];
    for t in tuples {
        let id = t.class_id as usize;
        counts[id] += 1;
        for (o, &x) in sums.row_mut(id).iter_mut().zip(&t.y_i) {
            *o += f64::from(x);
        }
    }
    for (mut row, &n) in sums.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            row /= n as f64;
        }
    }
    Ok(sums)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn random_tuple(rng: &mut impl Rng, d: usize, string: &str) -> EmbeddingTuple {
        let mut v = || (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
        EmbeddingTuple {
            x_i: v(),
            y_i: v(),
            x_t: v(),
            y_t: v(),
            x_it: v(),
            string: string.to_string(),
            is_real_word: string.len() % 2 == 0,
            class_id: string.len() as u32,
        }
    }

    fn words(n: usize) -> Vec<String> {
        (0..n)
            .map(|i| {
                let mut s = String::from("wrd");
                let mut k = i;
                loop {
                    s.push((b'a' + (k % 26) as u8) as char);
                    k /= 26;
                    if k == 0 {
                        break;
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let bytes = encode_tuples(512, &[]).unwrap();
        assert_eq!(bytes.len(), 24);
        let (h, t) = decode_tuples(&bytes).unwrap();
        assert_eq!(h.dim, 512);
        assert_eq!(h.count, 0);
        assert!(t.is_empty());
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tuples = vec![random_tuple(&mut rng, 512, "abc")];
        for _ in 0..3 {
            tuples.push(random_tuple(&mut rng, 256, "abd"));
        }
        assert!(matches!(
            encode_tuples(512, &tuples),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(common_dim(&tuples).is_err());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tuples: Vec<_> = words(10).iter().map(|w| random_tuple(&mut rng, 8, w)).collect();
        let bytes = encode_tuples(8, &tuples).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tuples(&bad), Err(Error::BadMagic { .. })));

        // Drop the last record: header still says 10.
        let one = encode_tuples(8, &tuples[9..]).unwrap();
        let record_len = one.len() - TUPLE_HEADER_LEN;
        let short = &bytes[..bytes.len() - record_len];
        assert!(matches!(decode_tuples(short), Err(Error::Truncated(_))));
    }

    #[test]
    fn non_utf8_string_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tuple(&mut rng, 4, "abc");
        let mut bytes = encode_tuples(4, &[t]).unwrap();
        // class_id(4) + flag(1) + len(2) puts the string at offset 31.
        bytes[TUPLE_HEADER_LEN + 7] = 0xff;
        assert!(matches!(decode_tuples(&bytes), Err(Error::InvalidUtf8(_))));
    }

    #[test]
    fn string_invariants() {
        assert!(validate_string("abc").is_ok());
        assert!(validate_string("abcdefghij").is_ok());
        assert!(validate_string("ab").is_err());
        assert!(validate_string("abcdefghijk").is_err());
        assert!(validate_string("Abc").is_err());
    }

    #[test]
    fn matrix_layout() {
        let rows = Array2::from_shape_vec((2, 3), vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m = EmbeddingMatrix::new(rows)
            .unwrap()
            .with_labels(vec!["apple".into(), "ipod".into()])
            .unwrap()
            .with_ids(vec![7, 9])
            .unwrap();
        let bytes = encode_matrix(&m).unwrap();
        assert_eq!(&bytes[..8], b"CLIPMAT1");
        assert_eq!(bytes.len(), 26 + (4 + 2 + 5 + 12) + (4 + 2 + 4 + 12));
        assert_eq!(decode_matrix(&bytes).unwrap(), m);

        let mut bad = bytes.clone();
        bad[4] = b'?';
        assert!(matches!(decode_matrix(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_matrix(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tuples: Vec<_> = words(10).iter().map(|w| random_tuple(&mut rng, 4, w)).collect();
        let (tr, va) = split_indices(&tuples, 0.2, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        assert_eq!(split_indices(&tuples, 0.2, 7).unwrap(), (tr, va));
    }

    #[test]
    fn split_full_corpus_size() {
        let tuples: Vec<EmbeddingTuple> = (0..202_587)
            .map(|i| EmbeddingTuple {
                x_i: vec![0.0],
                y_i: vec![0.0],
                x_t: vec![0.0],
                y_t: vec![0.0],
                x_it: vec![0.0],
                string: format!("s{i}"),
                is_real_word: true,
                class_id: 0,
            })
            .collect();
        let (_, val) = split_indices(&tuples, 0.1, 0).unwrap();
        assert!(val.len() == 20258 || val.len() == 20259, "{}", val.len());
    }

    #[test]
    fn duplicate_strings_share_a_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tuples: Vec<_> = words(20).iter().map(|w| random_tuple(&mut rng, 4, w)).collect();
        tuples.push(random_tuple(&mut rng, 4, &tuples[3].string.clone()));
        for seed in 0..50 {
            let (tr, va) = split_indices(&tuples, 0.3, seed).unwrap();
            let in_val = |i: usize| va.contains(&i);
            assert_eq!(in_val(3), in_val(20), "seed {seed}");
            assert_eq!(tr.len() + va.len(), tuples.len());
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tuples = vec![random_tuple(&mut rng, 4, "abc")];
        assert!(split_dataset(&tuples, 0.0, 0).is_err());
        assert!(split_dataset(&tuples, 1.0, 0).is_err());
        assert!(split_dataset(&[], 0.5, 0).is_err());
    }

    #[test]
    fn batching_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tuples: Vec<_> = (0..300).map(|_| random_tuple(&mut rng, 4, "abc")).collect();
        let full: Vec<_> = batch_iter(&tuples[..256], 128, 0, true).unwrap().collect();
        assert_eq!(full.len(), 2);
        assert!(full.iter().all(|b| b.len() == 128));

        let it = batch_iter(&tuples, 128, 0, true).unwrap();
        assert_eq!(it.num_batches(), 2);
        let used: usize = it.map(|b| b.len()).sum();
        assert_eq!(300 - used, 44);

        let kept: Vec<_> = batch_iter(&tuples, 128, 0, false).unwrap().collect();
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[2].len(), 44);

        assert!(batch_iter(&tuples, 0, 0, true).is_err());
    }

    #[test]
    fn batching_is_seeded_and_row_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tuples: Vec<_> = words(64).iter().map(|w| random_tuple(&mut rng, 3, w)).collect();
        let a: Vec<_> = batch_iter(&tuples, 16, 11, true).unwrap().map(|b| b.indices).collect();
        let b: Vec<_> = batch_iter(&tuples, 16, 11, true).unwrap().map(|b| b.indices).collect();
        let c: Vec<_> = batch_iter(&tuples, 16, 12, true).unwrap().map(|b| b.indices).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);

        let mut seen: Vec<usize> = a.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());

        let batch = batch_iter(&tuples, 16, 11, true).unwrap().next().unwrap();
        for (row, &i) in batch.indices.iter().enumerate() {
            assert_eq!(batch.strings[row], tuples[i].string);
            for kind in EmbeddingKind::ALL {
                let got: Vec<f32> = batch.get(kind).row(row).iter().map(|&x| x as f32).collect();
                assert_eq!(got.as_slice(), tuples[i].get(kind));
            }
        }
    }

    #[test]
    fn class_texts_average_label_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = random_tuple(&mut rng, 2, "abc");
        let mut b = random_tuple(&mut rng, 2, "abd");
        a.class_id = 1;
        b.class_id = 1;
        a.y_i = vec![1.0, 0.0];
        b.y_i = vec![0.0, 1.0];
        let ct = class_texts_from_tuples(&[a, b]).unwrap();
        assert_eq!(ct.dim(), (2, 2));
        assert_eq!(ct.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(ct.row(1).to_vec(), vec![0.5, 0.5]);
    }
}
