//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! file   := b"ALICKPT\x01" u32:count entry*
//! entry  := u16:name_len name u8:kind payload
//! kind 0 := MLP    u32:n_widths u32:width* str8:activation str8:output_activation
//!                  (f64:weight[in*out] f64:bias[out])*   -- per layer, row-major
//! kind 1 := tensor u32:rank u64:dim* f64:value*
//! kind 2 := f64
//! kind 3 := u64
//! kind 4 := text   u32:len utf8
//! str8   := u8:len utf8        -- empty output activation means none
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a save/load round trip is exact.

use std::path::Path;

use super::mlp::{Activation, Linear, Mlp};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ALICKPT\x01";

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Mlp(Mlp),
    Tensor(Tensor),
    F64(f64),
    U64(u64),
    Text(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = entry;
        } else {
            self.entries.push((name, entry));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    fn missing(name: &str) -> Error {
        Error::Checkpoint(format!("missing or mistyped entry `{name}`"))
    }

    pub fn mlp(&self, name: &str) -> Result<&Mlp> {
        match self.get(name) {
            Some(Entry::Mlp(m)) => Ok(m),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.get(name) {
            Some(Entry::Tensor(t)) => Ok(t),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        match self.get(name) {
            Some(Entry::F64(v)) => Ok(*v),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.get(name) {
            Some(Entry::U64(v)) => Ok(*v),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Entry::Text(v)) => Ok(v),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Mlp(m) => {
                    out.push(0);
                    write_mlp(&mut out, m);
                }
                Entry::Tensor(t) => {
                    out.push(1);
                    write_tensor(&mut out, t);
                }
                Entry::F64(v) => {
                    out.push(2);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Entry::U64(v) => {
                    out.push(3);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Entry::Text(s) => {
                    out.push(4);
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let entry = match r.u8()? {
                0 => Entry::Mlp(read_mlp(&mut r)?),
                1 => Entry::Tensor(read_tensor(&mut r)?),
                2 => Entry::F64(r.f64()?),
                3 => Entry::U64(r.u64()?),
                4 => {
                    let len = r.u32()? as usize;
                    Entry::Text(
                        String::from_utf8(r.take(len)?.to_vec())
                            .map_err(|_| Error::Checkpoint("text is not UTF-8".into()))?,
                    )
                }
                k => return Err(Error::Checkpoint(format!("unknown entry kind {k}"))),
            };
            ck.entries.push((name, entry));
        }
        if !r.buf.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(ck)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn write_str8(out: &mut Vec<u8>, s: &str) {
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
}

fn write_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_mlp(out: &mut Vec<u8>, m: &Mlp) {
    out.extend_from_slice(&(m.widths().len() as u32).to_le_bytes());
    for &w in m.widths() {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    write_str8(out, m.activation().name());
    write_str8(out, m.output_activation().map(|a| a.name()).unwrap_or(""));
    for l in m.layers() {
        write_f64s(out, l.weight.data());
        write_f64s(out, l.bias.data());
    }
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    write_f64s(out, t.data());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn str8(&mut self) -> Result<String> {
        let n = self.u8()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

fn read_activation(name: &str) -> Result<Activation> {
    Activation::from_name(name)
        .ok_or_else(|| Error::Checkpoint(format!("unknown activation `{name}`")))
}

fn read_mlp(r: &mut Reader<'_>) -> Result<Mlp> {
    let n = r.u32()? as usize;
    let widths = (0..n)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let activation = read_activation(&r.str8()?)?;
    let out_name = r.str8()?;
    let output = if out_name.is_empty() {
        None
    } else {
        Some(read_activation(&out_name)?)
    };
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        let weight = Tensor::matrix(w[0], w[1], r.f64s(w[0] * w[1])?)?;
        let bias = Tensor::matrix(1, w[1], r.f64s(w[1])?)?;
        layers.push(Linear { weight, bias });
    }
    Mlp::from_layers(layers, activation, output)
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    let rank = r.u32()? as usize;
    let shape = (0..rank)
        .map(|_| r.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = shape.iter().product();
    Tensor::new(shape, r.f64s(n)?)
}

impl Mlp {
    /// Single-network checkpoint under the entry name `net`.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut ck = Checkpoint::new();
        ck.insert("net", Entry::Mlp(self.clone()));
        ck.to_bytes()
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        Checkpoint::from_bytes(bytes)?.mlp("net").cloned()
    }
}

impl super::Adam {
    /// Store hyperparameters, step counter and moments under `prefix.*`.
    pub fn save(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.insert(format!("{prefix}.lr"), Entry::F64(self.lr));
        ck.insert(format!("{prefix}.beta1"), Entry::F64(self.beta1));
        ck.insert(format!("{prefix}.beta2"), Entry::F64(self.beta2));
        ck.insert(format!("{prefix}.eps"), Entry::F64(self.eps));
        ck.insert(format!("{prefix}.step"), Entry::U64(self.steps_taken()));
        let (m, v) = self.moments();
        ck.insert(format!("{prefix}.count"), Entry::U64(m.len() as u64));
        for (k, (mk, vk)) in m.iter().zip(v).enumerate() {
            ck.insert(format!("{prefix}.m{k}"), Entry::Tensor(mk.clone()));
            ck.insert(format!("{prefix}.v{k}"), Entry::Tensor(vk.clone()));
        }
    }

    pub fn load(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let count = ck.u64(&format!("{prefix}.count"))? as usize;
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for k in 0..count {
            m.push(ck.tensor(&format!("{prefix}.m{k}"))?.clone());
            v.push(ck.tensor(&format!("{prefix}.v{k}"))?.clone());
        }
        super::Adam::from_parts(
            ck.f64(&format!("{prefix}.lr"))?,
            ck.f64(&format!("{prefix}.beta1"))?,
            ck.f64(&format!("{prefix}.beta2"))?,
            ck.f64(&format!("{prefix}.eps"))?,
            ck.u64(&format!("{prefix}.step"))?,
            m,
            v,
        )
    }
}
