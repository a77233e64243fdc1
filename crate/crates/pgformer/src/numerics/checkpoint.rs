//! Flat parameter container: path strings mapped to shaped little-endian
//! f64 payloads, with a format-version integer. Round-trips bit-exactly.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"PGPARAMS"
//! version  u32
//! count    u32
//! entry*   u32 name_len | name utf-8 | u8 trainable | u32 ndim | u64 dim* | f64 value*
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"PGPARAMS";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_params<W: Write>(store: &ParamStore, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, param) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[param.trainable as u8])?;
        w.write_all(&(param.value.shape().len() as u32).to_le_bytes())?;
        for &d in param.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in param.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Entries as stored: name, value, trainable flag.
pub fn read_params<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor, bool)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad parameter container magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported parameter container version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Parse("parameter name is not utf-8".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, data)?, flag[0] != 0));
    }
    Ok(out)
}

/// Load a container into an existing store, validating names and shapes.
pub fn load_into(store: &mut ParamStore, entries: Vec<(String, Tensor, bool)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} parameters, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, value, _) in entries {
        store.load_value(&name, value)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
