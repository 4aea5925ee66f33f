//! Binary channel datasets.
//!
//! ```text
//! magic   4 bytes  b"MWCH"
//! version u8       1
//! count   u64
//! record: seed u64, K u32, Nt u32, then K*Nt pairs (re f64, im f64)
//! ```
//!
//! All integers and floats little-endian; pairs are row-major over users.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ChannelRealization;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MWCH";
const VERSION: u8 = 1;

pub fn write_channels(path: impl AsRef<Path>, channels: &[ChannelRealization]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(channels.len() as u64).to_le_bytes())?;
    for h in channels {
        w.write_all(&h.seed.to_le_bytes())?;
        w.write_all(&(h.k as u32).to_le_bytes())?;
        w.write_all(&(h.nt as u32).to_le_bytes())?;
        for (re, im) in h.re.iter().zip(&h.im) {
            w.write_all(&re.to_le_bytes())?;
            w.write_all(&im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_channels(path: impl AsRef<Path>) -> Result<Vec<ChannelRealization>> {
    let mut r = BufReader::new(File::open(path)?);
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::InvalidArgument("not a channel dataset".into()));
    }
    let version = take::<1>(&mut r)?[0];
    if version != VERSION {
        return Err(Error::InvalidArgument(format!("unsupported channel dataset version {version}")));
    }
    let count = u64::from_le_bytes(take(&mut r)?);
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let seed = u64::from_le_bytes(take(&mut r)?);
        let k = u32::from_le_bytes(take(&mut r)?) as usize;
        let nt = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut re = Vec::with_capacity(k * nt);
        let mut im = Vec::with_capacity(k * nt);
        for _ in 0..k * nt {
            re.push(f64::from_le_bytes(take(&mut r)?));
            im.push(f64::from_le_bytes(take(&mut r)?));
        }
        out.push(ChannelRealization { k, nt, re, im, seed });
    }
    Ok(out)
}
