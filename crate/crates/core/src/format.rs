//! Little-endian read/write helpers for the binary dataset and model files.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

/// Read exactly `N` bytes, reporting `field` on short reads.
fn read_exact<R: Read, const N: usize>(r: &mut R, field: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated file while reading {field}")))?;
    Ok(buf)
}

pub(crate) fn read_u32<R: Read>(r: &mut R, field: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<_, 4>(r, field)?))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, field: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<_, 8>(r, field)?))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, field: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<_, 8>(r, field)?))
}

pub(crate) fn read_u8<R: Read>(r: &mut R, field: &str) -> Result<u8> {
    Ok(read_exact::<_, 1>(r, field)?[0])
}

pub(crate) fn read_magic<R: Read>(r: &mut R, expected: &[u8; 4]) -> Result<()> {
    let got = read_exact::<_, 4>(r, "magic")?;
    if &got != expected {
        return Err(Error::format(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(expected),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}
