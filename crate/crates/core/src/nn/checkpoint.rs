//! Flat binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "FSPARAMS"
//! version u32      1
//! count   u32      number of entries
//! entry*  name_len u32, name (UTF-8), rank u32, dims u64 x rank,
//!         values f64 x product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NnError, ParamSet, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FSPARAMS";
pub const VERSION: u32 = 1;

pub fn write_params(w: &mut impl Write, params: &ParamSet) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn format_err(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params(r: &mut impl Read) -> Result<ParamSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| format_err("missing header"))?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = read_u32(r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| format_err("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| format_err("name is not UTF-8"))?;
        let rank = read_u32(r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let values = (0..n)
            .map(|_| read_u64(r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        params.push(name, Tensor::new(&dims, values)?)?;
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    let file = File::create(path).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        error: e,
    })?;
    let mut w = BufWriter::new(file);
    write_params(&mut w, params)
        .and_then(|_| w.flush())
        .map_err(|e| NnError::Io {
            path: path.display().to_string(),
            error: e,
        })
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let file = File::open(path).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        error: e,
    })?;
    read_params(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..4), any::<u64>()),
                0..5,
            )
        ) {
            let mut params = ParamSet::new();
            for (i, (dims, seed)) in entries.iter().enumerate() {
                let n: usize = dims.iter().product();
                // arbitrary bit patterns, NaNs and subnormals included
                let values = (0..n).map(|j| f64::from_bits(seed.rotate_left(j as u32 * 7) ^ j as u64)).collect();
                params.push(format!("p{i}.weight"), Tensor::new(dims, values).unwrap()).unwrap();
            }
            let mut bytes = Vec::new();
            write_params(&mut bytes, &params).unwrap();
            let back = read_params(&mut bytes.as_slice()).unwrap();
            prop_assert!(params.bit_eq(&back));
            let mut again = Vec::new();
            write_params(&mut again, &back).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }

    #[test]
    fn header_layout() {
        let params = ParamSet::from_entries(vec![("w".into(), Tensor::scalar(1.5))]).unwrap();
        let mut bytes = Vec::new();
        write_params(&mut bytes, &params).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes[20], b'w');
        assert_eq!(&bytes[21..25], &0u32.to_le_bytes());
        assert_eq!(&bytes[25..33], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 33);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_params(&mut &b"NOTMAGIC"[..]).is_err());
        let params = ParamSet::from_entries(vec![("w".into(), Tensor::ones(&[3]).unwrap())]).unwrap();
        let mut bytes = Vec::new();
        write_params(&mut bytes, &params).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_params(&mut bytes.as_slice()).is_err());
    }
}
