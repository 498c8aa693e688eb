//! Parameter checkpoints.
//!
//! Layout (little endian): magic `TTECKPT\0`, `u32` version, `u64` optimizer
//! step, `u32` config length + UTF-8 config text, `u32` parameter count; then per
//! parameter: `u32` name length + UTF-8 name, `u32` rank, `u64` extents, and the
//! value, first-moment and second-moment tensors as `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{Parameter, Tensor};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"TTECKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config_text: String,
    pub step: u64,
    pub params: Vec<Parameter<T>>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::parse("checkpoint string is not UTF-8"))
}

fn put_values<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_values<T: Scalar, R: Read>(r: &mut R, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Tensor::from_vec(shape, data)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u64(&mut w, self.step)?;
        put_str(&mut w, &self.config_text)?;
        put_u32(&mut w, self.params.len() as u32)?;
        for p in &self.params {
            put_str(&mut w, &p.name)?;
            put_u32(&mut w, p.value.shape().len() as u32)?;
            for &d in p.value.shape() {
                put_u64(&mut w, d as u64)?;
            }
            put_values(&mut w, &p.value)?;
            put_values(&mut w, &p.adam_m)?;
            put_values(&mut w, &p.adam_v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::parse("not a checkpoint file"));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::parse(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let step = get_u64(&mut r)?;
        let config_text = get_str(&mut r)?;
        let count = get_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = get_str(&mut r)?;
            let rank = get_u32(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| get_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let mut p = Parameter::new(name, get_values(&mut r, &shape)?);
            p.adam_m = get_values(&mut r, &shape)?;
            p.adam_v = get_values(&mut r, &shape)?;
            params.push(p);
        }
        Ok(Self {
            config_text,
            step,
            params,
        })
    }
}
