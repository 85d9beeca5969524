//! Probability-dump files.
//!
//! Dense "PDMP": header, then `n_rows x vocab_size` 32-bit little-endian
//! floats, row-major. Sparse "PDSK": header (including K), then per row
//! K records of (u32 index, f32 probability) in descending-probability
//! order. Header: magic, u32 format version (1), u32 vocab size, u64 row
//! count, and for sparse files u32 K. Everything little-endian.
//!
//! Sparse rows are selected on f32-rounded probabilities, so a sparse
//! encoding and a dense round-trip of the same rows agree exactly on
//! every top-k list with k <= K.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rankdistill::error::{Error, Result};
use rankdistill::prob::{top_k_indices, ProbVector};

const DENSE_MAGIC: &[u8; 4] = b"PDMP";
const SPARSE_MAGIC: &[u8; 4] = b"PDSK";
const FORMAT_VERSION: u32 = 1;

/// Row sums may drift this far from 1 before a warning is recorded.
pub const ROW_SUM_WARN: f64 = 1e-4;
/// Row sums drifting this far are a format error.
pub const ROW_SUM_ERROR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Dense,
    Sparse { k: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbDumpHeader {
    pub kind: DumpKind,
    pub vocab_size: u32,
    pub n_rows: u64,
}

impl ProbDumpHeader {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Format(format!(
                "vocabulary size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.n_rows == 0 {
            return Err(Error::Format("dump must hold at least one row".into()));
        }
        if let DumpKind::Sparse { k } = self.kind {
            if k == 0 || k > self.vocab_size {
                return Err(Error::Format(format!(
                    "sparse K must lie in [1, {}], got {k}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// Streaming dump writer; call [`DumpWriter::finish`] to verify the row
/// count promised in the header was delivered.
pub struct DumpWriter {
    out: BufWriter<File>,
    header: ProbDumpHeader,
    rows_written: u64,
}

impl DumpWriter {
    pub fn create(path: &Path, header: ProbDumpHeader) -> Result<Self> {
        header.validate()?;
        let mut out = BufWriter::new(File::create(path)?);
        match header.kind {
            DumpKind::Dense => out.write_all(DENSE_MAGIC)?,
            DumpKind::Sparse { .. } => out.write_all(SPARSE_MAGIC)?,
        }
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&header.vocab_size.to_le_bytes())?;
        out.write_all(&header.n_rows.to_le_bytes())?;
        if let DumpKind::Sparse { k } = header.kind {
            out.write_all(&k.to_le_bytes())?;
        }
        Ok(Self {
            out,
            header,
            rows_written: 0,
        })
    }

    pub fn write_row(&mut self, probs: &ProbVector) -> Result<()> {
        if probs.len() != self.header.vocab_size as usize {
            return Err(Error::InvalidInput(format!(
                "row length {} does not match dump vocabulary {}",
                probs.len(),
                self.header.vocab_size
            )));
        }
        if self.rows_written == self.header.n_rows {
            return Err(Error::InvalidInput(format!(
                "dump already holds the promised {} rows",
                self.header.n_rows
            )));
        }
        match self.header.kind {
            DumpKind::Dense => {
                for &p in probs.values() {
                    self.out.write_all(&(p as f32).to_le_bytes())?;
                }
            }
            DumpKind::Sparse { k } => {
                // select on f32-rounded values so the stored order matches
                // what a dense round-trip of this row would produce
                let rounded = ProbVector::renormalized(
                    probs.values().iter().map(|&p| p as f32 as f64).collect(),
                )?;
                for i in top_k_indices(&rounded, k as usize)? {
                    self.out.write_all(&(i as u32).to_le_bytes())?;
                    self.out
                        .write_all(&(probs.values()[i] as f32).to_le_bytes())?;
                }
            }
        }
        self.rows_written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.rows_written != self.header.n_rows {
            return Err(Error::InvalidInput(format!(
                "dump promised {} rows but {} were written",
                self.header.n_rows, self.rows_written
            )));
        }
        self.out.flush()?;
        Ok(())
    }
}

/// One row as read back from a dump.
#[derive(Debug, Clone)]
pub enum DumpRow {
    Dense(ProbVector),
    /// `(index, probability)` in descending-probability order.
    Sparse(Vec<(usize, f64)>),
}

impl DumpRow {
    /// Ordered top-k indices of the row. For sparse rows k must not
    /// exceed the stored K.
    pub fn top_k(&self, k: usize) -> Result<Vec<usize>> {
        match self {
            DumpRow::Dense(probs) => top_k_indices(probs, k),
            DumpRow::Sparse(entries) => {
                if k > entries.len() {
                    return Err(Error::InvalidParameter(format!(
                        "requested top-{k} from a sparse dump holding only {} entries per row",
                        entries.len()
                    )));
                }
                Ok(entries[..k].iter().map(|&(i, _)| i).collect())
            }
        }
    }
}

/// Streaming dump reader. Dense rows are renormalized on load; rows
/// whose raw sum drifts beyond [`ROW_SUM_WARN`] are counted as warnings
/// and beyond [`ROW_SUM_ERROR`] abort with a format error.
pub struct DumpReader {
    input: BufReader<File>,
    header: ProbDumpHeader,
    rows_read: u64,
    warnings: u64,
    first_warning: Option<String>,
}

impl DumpReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        let sparse = match &magic {
            m if m == DENSE_MAGIC => false,
            m if m == SPARSE_MAGIC => true,
            _ => {
                return Err(Error::Format(format!(
                    "bad dump magic {magic:?}, expected {DENSE_MAGIC:?} or {SPARSE_MAGIC:?}"
                )))
            }
        };
        let mut buf4 = [0u8; 4];
        input.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dump format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        input.read_exact(&mut buf4)?;
        let vocab_size = u32::from_le_bytes(buf4);
        let mut buf8 = [0u8; 8];
        input.read_exact(&mut buf8)?;
        let n_rows = u64::from_le_bytes(buf8);
        let kind = if sparse {
            input.read_exact(&mut buf4)?;
            DumpKind::Sparse {
                k: u32::from_le_bytes(buf4),
            }
        } else {
            DumpKind::Dense
        };
        let header = ProbDumpHeader {
            kind,
            vocab_size,
            n_rows,
        };
        header.validate()?;
        Ok(Self {
            input,
            header,
            rows_read: 0,
            warnings: 0,
            first_warning: None,
        })
    }

    pub fn header(&self) -> ProbDumpHeader {
        self.header
    }

    /// Rows whose raw sum drifted past the warning threshold so far.
    pub fn warnings(&self) -> u64 {
        self.warnings
    }

    pub fn first_warning(&self) -> Option<&str> {
        self.first_warning.as_deref()
    }

    pub fn next_row(&mut self) -> Result<Option<DumpRow>> {
        if self.rows_read == self.header.n_rows {
            return Ok(None);
        }
        let row = match self.header.kind {
            DumpKind::Dense => {
                let v = self.header.vocab_size as usize;
                let mut raw = Vec::with_capacity(v);
                let mut buf4 = [0u8; 4];
                for _ in 0..v {
                    self.input.read_exact(&mut buf4)?;
                    raw.push(f32::from_le_bytes(buf4) as f64);
                }
                let sum: f64 = raw.iter().sum();
                let drift = (sum - 1.0).abs();
                if drift > ROW_SUM_ERROR {
                    return Err(Error::Format(format!(
                        "row {} sums to {sum}, off 1 by more than {ROW_SUM_ERROR}",
                        self.rows_read
                    )));
                }
                if drift > ROW_SUM_WARN {
                    self.warnings += 1;
                    if self.first_warning.is_none() {
                        self.first_warning = Some(format!(
                            "row {} sums to {sum}; renormalized",
                            self.rows_read
                        ));
                    }
                }
                DumpRow::Dense(ProbVector::renormalized(raw)?)
            }
            DumpKind::Sparse { k } => {
                let mut entries = Vec::with_capacity(k as usize);
                let mut buf4 = [0u8; 4];
                let mut last = f64::INFINITY;
                for _ in 0..k {
                    self.input.read_exact(&mut buf4)?;
                    let index = u32::from_le_bytes(buf4);
                    if index >= self.header.vocab_size {
                        return Err(Error::Format(format!(
                            "row {}: index {index} outside vocabulary {}",
                            self.rows_read, self.header.vocab_size
                        )));
                    }
                    self.input.read_exact(&mut buf4)?;
                    let prob = f32::from_le_bytes(buf4) as f64;
                    if !(0.0..=1.0 + 1e-6).contains(&prob) || prob > last {
                        return Err(Error::Format(format!(
                            "row {}: sparse probabilities must be descending values in [0, 1]",
                            self.rows_read
                        )));
                    }
                    last = prob;
                    entries.push((index as usize, prob));
                }
                DumpRow::Sparse(entries)
            }
        };
        self.rows_read += 1;
        Ok(Some(row))
    }
}
