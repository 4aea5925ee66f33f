//! Flat parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes   b"MWCK"
//! version  u8        1
//! count    u32       number of records
//! record:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32, dims (u64 x rank)
//!   data     f64 x product(dims)
//! ```
//!
//! Records are written in store order. Names carry a subsystem prefix such as
//! `ssm/`, `gnn/` or `jscd/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MWCK";
pub const VERSION: u8 = 1;

pub fn write_records<'a, W: Write>(
    mut w: W,
    records: impl ExactSizeIterator<Item = (String, &'a Tensor)>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", version[0])));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

impl ParamStore {
    /// Write every parameter as `<prefix><name>`.
    pub fn save(&self, path: impl AsRef<Path>, prefix: &str) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        let records: Vec<(String, &Tensor)> = self.iter().map(|(n, t)| (format!("{prefix}{n}"), t)).collect();
        write_records(w, records.into_iter())
    }

    /// Overwrite parameters from a checkpoint. Every parameter must be present
    /// with a matching shape; extra records are ignored.
    pub fn load(&mut self, path: impl AsRef<Path>, prefix: &str) -> Result<()> {
        let records = read_records(BufReader::new(File::open(path)?))?;
        let names: Vec<String> = self.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let full = format!("{prefix}{name}");
            let (_, t) = records
                .iter()
                .find(|(n, _)| *n == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing record `{full}`")))?;
            let id = self.id(&name).expect("name from store");
            self.set(id, t.clone())?;
        }
        Ok(())
    }
}
