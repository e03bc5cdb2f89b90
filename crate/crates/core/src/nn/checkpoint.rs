//! Binary container for named tensors.
//!
//! Layout: the ASCII magic `VTLAB1`, a `u32` tensor count, then per tensor a
//! `u32` name length, the UTF-8 name, a `u32` rank, `rank` × `u32` dims and
//! the values as `f64`. All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::mlp::Mlp;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"VTLAB1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelCheckpoint {
    entries: Vec<(String, Tensor)>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        detail: detail.into(),
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

impl ModelCheckpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert_mlp(&mut self, prefix: &str, net: &Mlp) {
        for l in 0..net.num_layers() {
            self.insert(format!("{prefix}.layer{l}.weight"), net.weight(l));
            self.insert(format!("{prefix}.layer{l}.bias"), net.bias(l));
        }
    }

    /// Load weights into a network of matching architecture.
    pub fn load_mlp(&self, prefix: &str, net: &mut Mlp) -> Result<()> {
        for l in 0..net.num_layers() {
            let w = self.get(&format!("{prefix}.layer{l}.weight"))?;
            let b = self.get(&format!("{prefix}.layer{l}.bias"))?;
            net.set_layer(l, w, b)?;
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let count = read_u32(r)?;
        let mut ck = ModelCheckpoint::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(|_| bad("truncated values"))?;
                data.push(f64::from_le_bytes(b));
            }
            ck.insert(name, Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Hidden, Output};
    use crate::rng::{stream, Domain};

    #[test]
    fn byte_layout() {
        let mut ck = ModelCheckpoint::new();
        ck.insert("ab", Tensor::vector(vec![1.5]).unwrap());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut expected = b"VTLAB1".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1.5f64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn mlp_roundtrip_and_corruption() {
        let net = Mlp::new(&[3, 4, 2], Hidden::Tanh, Output::Identity, &mut stream(1, Domain::Init, 0)).unwrap();
        let mut ck = ModelCheckpoint::new();
        ck.insert_mlp("policy", &net);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = ModelCheckpoint::read_from(&mut buf.as_slice()).unwrap();
        let mut other = Mlp::zeros(&[3, 4, 2], Hidden::Tanh, Output::Identity).unwrap();
        back.load_mlp("policy", &mut other).unwrap();
        assert_eq!(other.params(), net.params());

        assert!(ModelCheckpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(ModelCheckpoint::read_from(&mut wrong.as_slice()).is_err());
        let mut small = Mlp::zeros(&[3, 5, 2], Hidden::Tanh, Output::Identity).unwrap();
        assert!(back.load_mlp("policy", &mut small).is_err());
    }
}
