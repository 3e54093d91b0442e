//! Binary checkpoints. Layout (all integers little-endian):
//!
//! ```text
//! magic "SEMCKPT\0" | version u32 | head u8 | config_len u32 | config (TOML)
//! | tensor_count u32 | per tensor: name_len u32, name, ndim u32, dims u64..., values f64...
//! ```
//! Values are stored bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::mae::config::{HeadKind, ModelConfig};
use crate::mae::model::Mae;
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"SEMCKPT\0";
const VERSION: u32 = 1;
const CODEBOOK_NAME: &str = "codebook";

pub fn to_bytes(model: &Mae) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match model.head() {
        HeadKind::Reconstruction => 0,
        HeadKind::Classification => 1,
    });
    let cfg = toml::to_string(model.config()).map_err(|e| Error::config(e.to_string()))?;
    put_bytes(&mut out, cfg.as_bytes());
    let mut named: Vec<(&str, &Tensor)> = model.params().iter().map(|p| (p.name.as_str(), &p.tensor)).collect();
    if let Some(cb) = model.codebook() {
        named.push((CODEBOOK_NAME, cb.vectors()));
    }
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Load(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Load(format!("{what} is not UTF-8")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mae> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Load("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Load(format!("unsupported checkpoint version {version}")));
    }
    let head = match r.take(1, "head")?[0] {
        0 => HeadKind::Reconstruction,
        1 => HeadKind::Classification,
        other => return Err(Error::Load(format!("unknown head tag {other}"))),
    };
    let cfg_text = r.string("config")?;
    let config: ModelConfig = toml::from_str(&cfg_text).map_err(|e| Error::Load(format!("config: {e}")))?;
    let mut model = Mae::new(config, head, 0).map_err(|e| Error::Load(e.to_string()))?;
    let count = r.u32("tensor count")? as usize;
    let expected = model.params().len() + usize::from(model.codebook().is_some());
    if count != expected {
        return Err(Error::Load(format!(
            "{count} tensors stored, architecture has {expected}"
        )));
    }
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let ndim = r.u32("ndim")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, &name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if name == CODEBOOK_NAME {
            let beta = model.config().beta;
            let current = model
                .codebook()
                .ok_or_else(|| Error::Load("codebook stored for a model without one".into()))?;
            if current.vectors().shape() != shape.as_slice() {
                return Err(Error::Load(format!(
                    "codebook shape {shape:?}, expected {:?}",
                    current.vectors().shape()
                )));
            }
            let t = Tensor::new(shape, data).map_err(|e| Error::Load(e.to_string()))?;
            model.set_codebook(Some(Codebook::new(t, beta).map_err(|e| Error::Load(e.to_string()))?));
            continue;
        }
        let i = model
            .params()
            .position(&name)
            .ok_or_else(|| Error::Load(format!("unknown tensor '{name}'")))?;
        let t = &mut model.params_mut().get_mut(i).tensor;
        if t.shape() != shape.as_slice() {
            return Err(Error::Load(format!(
                "tensor '{name}' has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Load(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(model: &Mae, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Mae> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = Mae::new(ModelConfig::desk(), HeadKind::Classification, 17).unwrap();
        m.params_mut().get_mut(0).tensor.data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let a: Vec<u64> = m
            .params()
            .tensors()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect();
        let b: Vec<u64> = back
            .params()
            .tensors()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_load_errors() {
        let m = Mae::new(ModelConfig::desk(), HeadKind::Reconstruction, 1).unwrap();
        let bytes = to_bytes(&m).unwrap();
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Load(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Load(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(Error::Load(_))));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let m = Mae::new(ModelConfig::desk(), HeadKind::Classification, 1).unwrap();
        let mut bytes = to_bytes(&m).unwrap();
        // Rewrite the stored embed_dim so the tensors no longer fit.
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("embed_dim = 32").unwrap();
        bytes[at + 12..at + 14].copy_from_slice(b"16");
        assert!(matches!(from_bytes(&bytes), Err(Error::Load(_))));
    }
}
