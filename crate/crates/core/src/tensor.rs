//! Dense n-dimensional tensors and the shared on-disk tensor format.
//!
//! All in-memory computation in this crate uses `f64`; the interchange file
//! format stores `f32`, so a save/load round trip quantizes values to `f32`
//! precision.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! magic  b"TNSR"          4 bytes
//! rank   u32              number of dimensions
//! dims   rank x u32       extents, outermost first
//! data   prod(dims) x f32 row-major (last dimension contiguous)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

const MODULE: &str = "tensor";
const MAGIC: &[u8; 4] = b"TNSR";
/// Upper bound on rank accepted when decoding, to reject garbage headers.
const MAX_RANK: u32 = 8;
/// Upper bound on total element count accepted when decoding (~2 GiB of f32).
const MAX_ELEMENTS: u64 = 1 << 29;

/// Row-major dense tensor with `f64` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Creates a zero-filled tensor with the given extents.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let len = checked_len(dims)?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Wraps an existing buffer; `data.len()` must match the product of `dims`.
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = checked_len(dims)?;
        ensure!(
            data.len() == len,
            MODULE,
            "dims {:?} imply {} elements but buffer holds {}",
            dims,
            len,
            data.len()
        );
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Serializes into any writer using the shared format.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Decodes from any reader; the reader must be positioned at the magic and
    /// must not contain trailing bytes.
    pub fn read_from<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, origin)?;
        if &magic != MAGIC {
            return Err(Error::format(
                MODULE,
                origin,
                format!("bad magic {magic:?}, expected {MAGIC:?}"),
            ));
        }
        let rank = read_u32(&mut r, origin)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format(
                MODULE,
                origin,
                format!("rank {rank} outside supported range 1..={MAX_RANK}"),
            ));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut total: u64 = 1;
        for _ in 0..rank {
            let d = read_u32(&mut r, origin)?;
            if d == 0 {
                return Err(Error::format(MODULE, origin, "zero-sized dimension"));
            }
            total = total.saturating_mul(d as u64);
            dims.push(d as usize);
        }
        if total > MAX_ELEMENTS {
            return Err(Error::format(
                MODULE,
                origin,
                format!("element count {total} exceeds limit {MAX_ELEMENTS}"),
            ));
        }
        let mut data = Vec::with_capacity(total as usize);
        let mut buf = [0u8; 4];
        for _ in 0..total {
            read_exact(&mut r, &mut buf, origin)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        // Reject trailing bytes so truncated/corrupted files cannot alias a
        // smaller valid tensor.
        let mut probe = [0u8; 1];
        match r.read(&mut probe) {
            Ok(0) => {}
            Ok(_) => {
                return Err(Error::format(MODULE, origin, "trailing bytes after data"));
            }
            Err(e) => return Err(Error::io(MODULE, origin, e)),
        }
        Ok(Tensor { dims, data })
    }

    /// Writes the tensor to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(MODULE, path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(MODULE, path, e))
    }

    /// Reads a tensor from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(MODULE, path, e))?;
        Self::read_from(BufReader::new(file), path)
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    ensure!(!dims.is_empty(), MODULE, "rank-0 tensors are not supported");
    ensure!(
        dims.len() <= MAX_RANK as usize,
        MODULE,
        "rank {} exceeds supported maximum {}",
        dims.len(),
        MAX_RANK
    );
    let mut len: usize = 1;
    for &d in dims {
        ensure!(d > 0, MODULE, "zero-sized dimension in {:?}", dims);
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::validation(MODULE, format!("dims {dims:?} overflow usize")))?;
    }
    Ok(len)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], origin: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(MODULE, origin, "unexpected end of file")
        } else {
            Error::io(MODULE, origin, e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, origin: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, origin)?;
    Ok(u32::from_le_bytes(buf))
}
