//! `EMB1` embedding archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EMB1" | dim: u32 | count: u32 | count × record
//! record = id_len: u16 | id: [u8; id_len] (UTF-8) | modality: u8 | dim × f32
//! ```

use std::io::{Read, Write};

use super::StoreError;
use crate::embedding::{Embedding, Modality};

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub dim: usize,
    pub embeddings: Vec<Embedding>,
}

struct Cursor<R> {
    inner: R,
    offset: u64,
    record: Option<usize>,
}

impl<R: Read> Cursor<R> {
    fn fail(&self, message: impl Into<String>) -> StoreError {
        StoreError::Archive {
            record: self.record,
            offset: self.offset,
            message: message.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<(), StoreError> {
        self.inner
            .read_exact(buf)
            .map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32, StoreError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

impl Archive {
    pub fn new(dim: usize, embeddings: Vec<Embedding>) -> Result<Self, StoreError> {
        for e in &embeddings {
            if e.dim() != dim {
                return Err(StoreError::DimMismatch {
                    id: e.id().to_string(),
                    expected: dim,
                    found: e.dim(),
                });
            }
        }
        Ok(Self { dim, embeddings })
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, StoreError> {
        let mut cur = Cursor {
            inner: reader,
            offset: 0,
            record: None,
        };
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic, "magic")?;
        if &magic != MAGIC {
            cur.offset = 0;
            return Err(cur.fail("bad magic, expected \"EMB1\""));
        }
        let dim = cur.u32("dim")? as usize;
        if dim < 2 {
            return Err(cur.fail(format!("dimension {dim} is below the minimum of 2")));
        }
        let count = cur.u32("count")? as usize;
        let mut embeddings = Vec::with_capacity(count.min(1 << 16));
        let mut vec_buf = vec![0u8; dim * 4];
        for i in 0..count {
            cur.record = Some(i);
            let mut len = [0u8; 2];
            cur.read_exact(&mut len, "id length")?;
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            cur.read_exact(&mut id, "id")?;
            let id = String::from_utf8(id).map_err(|_| cur.fail("id is not valid UTF-8"))?;
            let mut code = [0u8; 1];
            cur.read_exact(&mut code, "modality")?;
            let modality = Modality::from_code(code[0])
                .ok_or_else(|| cur.fail(format!("unknown modality code {}", code[0])))?;
            cur.read_exact(&mut vec_buf, "vector")?;
            let vector = vec_buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let e = Embedding::new(id, modality, vector).map_err(|e| cur.fail(e.to_string()))?;
            embeddings.push(e);
        }
        cur.record = None;
        let mut probe = [0u8; 1];
        if cur.inner.read(&mut probe)? != 0 {
            return Err(cur.fail("trailing bytes after last record"));
        }
        Ok(Self { dim, embeddings })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        let dim = u32::try_from(self.dim).map_err(|_| StoreError::Io("dim exceeds u32".into()))?;
        let count = u32::try_from(self.embeddings.len())
            .map_err(|_| StoreError::Io("count exceeds u32".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        for e in &self.embeddings {
            if e.dim() != self.dim {
                return Err(StoreError::DimMismatch {
                    id: e.id().to_string(),
                    expected: self.dim,
                    found: e.dim(),
                });
            }
            let id = e.id().as_bytes();
            let len = u16::try_from(id.len())
                .map_err(|_| StoreError::Io(format!("id '{}' longer than 65535 bytes", e.id())))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(id)?;
            w.write_all(&[e.modality().code()])?;
            for x in e.vector() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }
}
