//! Binary matrix blobs and small text helpers shared by the artifact writers.
//!
//! Dense blobs: magic `NDMAT001`, `u64` rows, `u64` cols, then row-major
//! little-endian `f64`. Sparse blobs: magic `NDCSR001`, `u64` rows, cols,
//! nnz, then `row_ptr` and `col_idx` as `u64` and `values` as `f64`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const DENSE_MAGIC: &[u8; 8] = b"NDMAT001";
const SPARSE_MAGIC: &[u8; 8] = b"NDCSR001";

pub fn write_dense(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * m.len());
    buf.extend_from_slice(DENSE_MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dense(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(path, &bytes);
    r.magic(DENSE_MAGIC)?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = r.f64()?;
        }
    }
    r.finish()?;
    Ok(m)
}

pub fn write_sparse(path: &Path, m: &CsrMatrix) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(SPARSE_MAGIC)?;
    for v in [m.n_rows, m.n_cols, m.nnz()] {
        put(&(v as u64).to_le_bytes())?;
    }
    for &p in &m.row_ptr {
        put(&(p as u64).to_le_bytes())?;
    }
    for &c in &m.col_idx {
        put(&(c as u64).to_le_bytes())?;
    }
    for &v in &m.values {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sparse(path: &Path) -> Result<CsrMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(path, &bytes);
    r.magic(SPARSE_MAGIC)?;
    let n_rows = r.u64()? as usize;
    let n_cols = r.u64()? as usize;
    let nnz = r.u64()? as usize;
    let row_ptr = (0..=n_rows).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let col_idx = (0..nnz).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let values = (0..nnz).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    if row_ptr.last() != Some(&nnz) || col_idx.iter().any(|c| *c >= n_cols) {
        return Err(Error::MalformedArtifact {
            path: path.into(),
            reason: "inconsistent CSR structure".into(),
        });
    }
    Ok(CsrMatrix {
        n_rows,
        n_cols,
        row_ptr,
        col_idx,
        values,
    })
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.malformed("truncated blob"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(self.malformed("bad magic"));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed("trailing bytes"));
        }
        Ok(())
    }

    fn malformed(&self, reason: &str) -> Error {
        Error::MalformedArtifact {
            path: self.path.into(),
            reason: reason.into(),
        }
    }
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T, what: &str) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Serialize {
        what: what.into(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        what: format!("{what} ({})", path.display()),
        message: e.to_string(),
    })
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
