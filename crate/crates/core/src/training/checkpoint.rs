//! Little-endian checkpoint format:
//!
//! ```text
//! b"SAKN" | u32 version | u32 tensor count
//! per tensor: u16 name length | name | u8 dtype | u8 rank | u64 dims[rank] | data
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"SAKN";
pub const VERSION: u32 = 1;

pub fn encode<T: Element>(net: &Network<T>) -> Result<Vec<u8>> {
    let params = net.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name `{name}` is too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.code());
        out.push(p.shape().len() as u8);
        for &d in p.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value().data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn checkpoint_save<T: Element>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("file truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Named tensors in file order.
pub fn decode<T: Element>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic; not a SAKN checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = r.u16(&format!("name length of tensor #{i}"))? as usize;
        let name = String::from_utf8(r.take(len, &format!("name of tensor #{i}"))?.to_vec())
            .map_err(|_| Error::Format(format!("name of tensor #{i} is not UTF-8")))?;
        let code = r.u8(&format!("dtype of tensor `{name}`"))?;
        let dtype = DType::from_code(code).ok_or_else(|| {
            Error::Format(format!("tensor `{name}` has unknown dtype code {code}"))
        })?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "tensor `{name}` is {dtype:?}, expected {:?}",
                T::DTYPE
            )));
        }
        let rank = r.u8(&format!("rank of tensor `{name}`"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64(&format!("shape of tensor `{name}`"))?;
            shape.push(
                usize::try_from(d)
                    .map_err(|_| Error::Format(format!("tensor `{name}` is too large")))?,
            );
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let raw = r.take(numel, &format!("data of tensor `{name}`"))?;
        let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

/// Overwrites every parameter of `net` from a checkpoint. Every tensor must
/// be present with a matching shape and no extra tensors are allowed.
pub fn load_into<T: Element>(net: &mut Network<T>, bytes: &[u8]) -> Result<()> {
    let mut tensors: HashMap<String, Tensor<T>> = decode(bytes)?.into_iter().collect();
    for (name, p) in net.named_params_mut() {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))?;
        if t.shape() != p.shape() {
            return Err(Error::ParamShape {
                name,
                found: t.shape().to_vec(),
                expected: p.shape().to_vec(),
            });
        }
        p.set_value(t)?;
    }
    if let Some(extra) = tensors.keys().min() {
        return Err(Error::Format(format!(
            "checkpoint tensor `{extra}` has no matching parameter"
        )));
    }
    Ok(())
}

/// Builds a network for `config` and fills it from the checkpoint at `path`.
pub fn checkpoint_load<T: Element>(config: &ModelConfig, path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut net = Network::build(config, 0)?;
    load_into(&mut net, &bytes)?;
    Ok(net)
}
