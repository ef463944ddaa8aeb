//! On-disk formats: tensor files, model/streaming checkpoints, slice
//! directories and CSV metrics.
//!
//! Everything is little-endian. A tensor file is
//!
//! ```text
//! "TUCKTNSR" | u32 version = 1 | u32 ndims | u64 dims[ndims] | f64 data[..]
//! ```
//!
//! with data in mode-1-fastest order. A checkpoint is
//!
//! ```text
//! "TUCKCKPT" | u32 version = 1 | u8 kind
//!   | u32 d | u64 dims[d] | u64 ranks[d] | f64 tau | u32 mode_order[d]
//!   | f64 core[..] | f64 factor_k[N_k * R_k] for each k
//! ```
//!
//! where kind 0 ends there and kind 1 (a resumable stream) continues with
//!
//! ```text
//!   | u64 m | u64 n | u64 r | f64 left[m*r] | f64 s[r] | f64 right[n*r]
//!   | f64 squared_error | u64 inserts | u64 reorth_every (0 = off)
//!   | f64 energy | f64 nonstreaming_sq_error | f64 error_bound | u64 steps
//! ```
//!
//! Writers go through a temporary file in the target directory that is
//! renamed into place, so a failed run never leaves a partial file.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::{Result, TuckerError};
use crate::isvd::IsvdState;
use crate::sthosvd::TuckerModel;
use crate::streaming::{StreamingParts, StreamingState};
use crate::tensor::{DenseTensor, Matrix};

pub const TENSOR_MAGIC: &[u8; 8] = b"TUCKTNSR";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TUCKCKPT";
pub const FORMAT_VERSION: u32 = 1;

const KIND_MODEL: u8 = 0;
const KIND_STREAM: u8 = 1;

/// Values read per chunk, so a lying header cannot force a huge allocation.
const READ_CHUNK: usize = 1 << 16;

fn eof_as_truncated(e: io::Error) -> TuckerError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        TuckerError::TruncatedPayload
    } else {
        TuckerError::Io(e)
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(eof_as_truncated)?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| TuckerError::Corrupt("size does not fit in memory".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count.min(READ_CHUNK));
        let mut buf = vec![0u8; 8 * count.min(READ_CHUNK)];
        let mut left = count;
        while left > 0 {
            let take = left.min(READ_CHUNK);
            let bytes = &mut buf[..8 * take];
            self.inner.read_exact(bytes).map_err(eof_as_truncated)?;
            out.extend(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))));
            left -= take;
        }
        Ok(out)
    }

    fn magic(&mut self, expected: &'static [u8; 8]) -> Result<()> {
        let got: [u8; 8] = self.bytes().map_err(|e| match e {
            TuckerError::TruncatedPayload => bad_magic(expected),
            other => other,
        })?;
        if &got != expected {
            return Err(bad_magic(expected));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(TuckerError::UnsupportedVersion(version));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(TuckerError::Corrupt("trailing bytes after payload".into())),
        }
    }
}

fn bad_magic(expected: &'static [u8; 8]) -> TuckerError {
    TuckerError::BadMagic { expected: std::str::from_utf8(expected).expect("ascii magic") }
}

fn product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| TuckerError::Corrupt(format!("dims {dims:?} overflow")))
}

struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.inner.write_all(&[v])?)
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }
}

/// Writes through a sibling temp file that replaces `path` on success.
fn write_atomically(path: &Path, body: impl FnOnce(&mut Writer<BufWriter<&mut File>>) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = Writer { inner: BufWriter::new(tmp.as_file_mut()) };
        body(&mut w)?;
        w.inner.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| TuckerError::Io(e.error))?;
    Ok(())
}

fn open(path: &Path) -> Result<Reader<BufReader<File>>> {
    Ok(Reader { inner: BufReader::new(File::open(path)?) })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_atomically(path.as_ref(), |w| {
        w.inner.write_all(TENSOR_MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.u32(t.ndims() as u32)?;
        for &n in t.dims() {
            w.usize(n)?;
        }
        w.f64s(t.as_slice())
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let mut r = open(path.as_ref())?;
    r.magic(TENSOR_MAGIC)?;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(TuckerError::Corrupt("tensor with zero modes".into()));
    }
    let dims = (0..d).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let data = r.f64s(product(&dims)?)?;
    r.finish()?;
    DenseTensor::from_vec(&dims, data)
}

fn write_model_body<W: Write>(w: &mut Writer<W>, kind: u8, model: &TuckerModel) -> Result<()> {
    w.inner.write_all(CHECKPOINT_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u8(kind)?;
    w.u32(model.ndims() as u32)?;
    for n in model.dims() {
        w.usize(n)?;
    }
    for r in model.ranks() {
        w.usize(r)?;
    }
    w.f64(model.tau)?;
    for &k in &model.mode_order {
        w.u32(k as u32)?;
    }
    w.f64s(model.core.as_slice())?;
    for f in &model.factors {
        w.f64s(f.as_slice())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut Reader<R>, rows: usize, cols: usize) -> Result<Matrix> {
    let len = rows.checked_mul(cols).ok_or_else(|| TuckerError::Corrupt("matrix size overflows".into()))?;
    Matrix::from_col_major(rows, cols, r.f64s(len)?)
}

fn read_model_body<R: Read>(r: &mut Reader<R>) -> Result<(u8, TuckerModel)> {
    r.magic(CHECKPOINT_MAGIC)?;
    let kind = r.u8()?;
    if kind != KIND_MODEL && kind != KIND_STREAM {
        return Err(TuckerError::Corrupt(format!("unknown checkpoint kind {kind}")));
    }
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(TuckerError::Corrupt("model with zero modes".into()));
    }
    let dims = (0..d).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let ranks = (0..d).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let tau = r.f64()?;
    let order = (0..d).map(|_| r.u32().map(|k| k as usize)).collect::<Result<Vec<_>>>()?;
    let core = DenseTensor::from_vec(&ranks, r.f64s(product(&ranks)?)?)?;
    let factors = dims.iter().zip(&ranks).map(|(&n, &rk)| read_matrix(r, n, rk)).collect::<Result<Vec<_>>>()?;
    let model = TuckerModel::new(core, factors, tau, order).map_err(|e| TuckerError::Corrupt(e.to_string()))?;
    Ok((kind, model))
}

/// Saves a model (kind 0 checkpoint).
pub fn write_model(path: impl AsRef<Path>, model: &TuckerModel) -> Result<()> {
    write_atomically(path.as_ref(), |w| write_model_body(w, KIND_MODEL, model))
}

/// Loads the model from either checkpoint kind.
pub fn read_model(path: impl AsRef<Path>) -> Result<TuckerModel> {
    let mut r = open(path.as_ref())?;
    let (kind, model) = read_model_body(&mut r)?;
    if kind == KIND_STREAM {
        // The stream tail is not needed to reconstruct.
        return Ok(model);
    }
    r.finish()?;
    Ok(model)
}

/// Saves everything needed to resume a stream (kind 1 checkpoint).
pub fn write_checkpoint(path: impl AsRef<Path>, state: &StreamingState) -> Result<()> {
    let parts = state.to_parts();
    write_atomically(path.as_ref(), |w| {
        write_model_body(w, KIND_STREAM, &parts.model)?;
        let isvd = &parts.isvd;
        w.usize(isvd.rows())?;
        w.usize(isvd.row_len())?;
        w.usize(isvd.rank())?;
        w.f64s(isvd.left().as_slice())?;
        w.f64s(isvd.singular_values())?;
        w.f64s(isvd.right().as_slice())?;
        w.f64(isvd.squared_error())?;
        w.u64(isvd.inserts())?;
        w.usize(isvd.reorth_every().unwrap_or(0))?;
        w.f64(parts.energy)?;
        w.f64(parts.nonstreaming_sq_error)?;
        w.f64(parts.error_bound)?;
        w.u64(parts.steps)
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<StreamingState> {
    let mut r = open(path.as_ref())?;
    let (kind, model) = read_model_body(&mut r)?;
    if kind != KIND_STREAM {
        return Err(TuckerError::Corrupt("checkpoint holds a model only, not a stream".into()));
    }
    let (m, n, rank) = (r.usize()?, r.usize()?, r.usize()?);
    let left = read_matrix(&mut r, m, rank)?;
    let s = r.f64s(rank)?;
    let right = read_matrix(&mut r, n, rank)?;
    let squared_error = r.f64()?;
    let inserts = r.u64()?;
    let reorth = r.usize()?;
    let energy = r.f64()?;
    let nonstreaming_sq_error = r.f64()?;
    let error_bound = r.f64()?;
    let steps = r.u64()?;
    r.finish()?;
    let isvd = IsvdState::restore(left, s, right, squared_error, (reorth > 0).then_some(reorth), inserts)?;
    StreamingState::from_parts(StreamingParts { model, isvd, energy, nonstreaming_sq_error, error_bound, steps })
}

/// File name of slice `i` in a slice directory.
pub fn slice_file_name(i: usize) -> String {
    format!("slice_{i:06}")
}

/// Slice files `slice_000000, slice_000001, ..` in index order. Indices
/// must be contiguous from zero.
pub fn list_slices(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir.as_ref())? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(idx) = name.strip_prefix("slice_") else { continue };
        if idx.len() < 6 || !idx.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        found.push((idx.parse().expect("digits"), entry.path()));
    }
    found.sort();
    for (want, (got, path)) in found.iter().enumerate() {
        if *got != want {
            return Err(TuckerError::Corrupt(format!(
                "slice directory has a gap: expected index {want}, found {}",
                path.display()
            )));
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Renders ranks as `11x11x11`.
pub fn format_ranks(ranks: &[usize]) -> String {
    ranks.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

#[derive(Debug, Serialize)]
pub struct CompressRecord {
    pub algorithm: &'static str,
    pub tau: f64,
    pub ranks: String,
    pub peak_bytes: usize,
    pub wall_ms: f64,
    pub rel_error: f64,
}

#[derive(Debug, Serialize)]
pub struct StreamRecord {
    pub algorithm: &'static str,
    pub step: u64,
    pub n_d: usize,
    pub tau: f64,
    pub ranks: String,
    pub peak_bytes: usize,
    pub wall_ms: f64,
    pub slice_norm: f64,
    pub projected_norm: f64,
    /// Per-mode remainders joined with `;`.
    pub residual_norms: String,
    pub rel_error_estimate: f64,
}

/// CSV sink appending to a file, or writing to stdout for `-`. The header
/// is emitted only when the file starts out empty.
pub struct MetricsSink {
    writer: csv::Writer<Box<dyn Write>>,
}

impl MetricsSink {
    pub fn open(target: &str) -> Result<Self> {
        let (out, fresh): (Box<dyn Write>, bool) = if target == "-" {
            (Box::new(io::stdout()), true)
        } else {
            let file = OpenOptions::new().create(true).append(true).open(target)?;
            let fresh = file.metadata()?.len() == 0;
            (Box::new(file), fresh)
        };
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(out);
        Ok(MetricsSink { writer })
    }

    pub fn record<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
