//! Checkpoint file: magic `MBSCKPT1`, `u32` entry count, then per entry a
//! `u32`-length-prefixed UTF-8 name, `u32` rank, `u32` dims and the values
//! as `f32`, all little-endian and row-major.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;

pub const MAGIC: &[u8; 8] = b"MBSCKPT1";

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for e in store.entries() {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.value.rank() as u32).to_le_bytes())?;
        for &d in e.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(e.value.len() * 4);
        for v in e.value.data() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn truncated(e: io::Error) -> TensorError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        TensorError::Checkpoint("file is truncated".into())
    } else {
        TensorError::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Array<f32>)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic bytes".into()));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Checkpoint("entry name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push((name, Array::new(dims, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(out)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    let tmp = path.with_extension("tmp-ckpt");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads into an existing store, validating every name and shape.
pub fn load<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    let named = read_checkpoint(bytes.as_slice())?;
    store.load_named(&named)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("enc.weight", Array::from_fn([2, 3], |i| i as f32 * 0.25 - 0.3), ParamKind::Trainable).unwrap();
        s.add("enc.running_var", Array::full([3], 1.5), ParamKind::Buffer).unwrap();
        s
    }

    #[test]
    fn layout_is_little_endian_with_magic() {
        let mut buf = Vec::new();
        write_checkpoint(&store(), &mut buf).unwrap();
        assert_eq!(&buf[..8], b"MBSCKPT1");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &10u32.to_le_bytes());
        assert_eq!(&buf[16..26], b"enc.weight");
        assert_eq!(&buf[26..30], &2u32.to_le_bytes());
        assert_eq!(&buf[30..34], &2u32.to_le_bytes());
        assert_eq!(&buf[34..38], &3u32.to_le_bytes());
        assert_eq!(&buf[38..42], &(-0.3f32).to_le_bytes());
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut buf = Vec::new();
        write_checkpoint(&store(), &mut buf).unwrap();
        for cut in [4, 20, buf.len() - 1] {
            let err = read_checkpoint(&buf[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "{err}");
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let mut a = Vec::new();
        write_checkpoint(&s, &mut a).unwrap();
        let mut t = store();
        t.get_mut(t.id("enc.weight").unwrap()).data_mut().fill(9.0);
        t.load_named(&read_checkpoint(a.as_slice()).unwrap()).unwrap();
        let mut b = Vec::new();
        write_checkpoint(&t, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
