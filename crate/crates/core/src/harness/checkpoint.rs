use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};
use crate::world_model::{AdamState, WorldModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADPW";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

/// 64-bit FNV-1a.
pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Named tensors in a checksummed little-endian container: `"ADPW"`, u32
/// version, u32 count; per tensor u32 name length, name, u8 dtype tag, u32
/// rank, u32 extents, f32 payload; then the u64 checksum of everything before.
/// Values are stored at 32-bit precision.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn insert<S: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<S>) {
        self.tensors.insert(name.into(), t.cast());
    }

    pub fn get<S: Scalar>(&self, name: &str) -> Result<Tensor<S>> {
        self.tensors
            .get(name)
            .map(|t| t.cast())
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(DTYPE_F32);
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                b.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("checkpoint", d);
        if bytes.len() < 20 {
            return Err(bad(format!("{} bytes is too short", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if checksum(body) != stored {
            return Err(bad("checksum mismatch".into()));
        }
        if &body[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut r = Cursor { b: body, at: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(bad(format!("tensor {name}: unknown dtype tag {dtype}")));
            }
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad(format!("tensor {name}: rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n.checked_mul(4).ok_or_else(|| bad(format!("tensor {name} too large")))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(bad(format!("tensor {name} repeated")));
            }
        }
        if r.at != body.len() {
            return Err(bad("trailing bytes before checksum".into()));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut b = Vec::new();
        r.read_to_end(&mut b)?;
        Self::from_bytes(&b)
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

const PARAM_PREFIX: &str = "param.";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_STEP: &str = "adam.step";
const ITERATION: &str = "train.iteration";

/// Model parameters plus optional optimizer state and iteration counter.
pub fn checkpoint_model<S: Scalar>(model: &WorldModel<S>, opt: Option<&AdamState<S>>, iteration: usize) -> Checkpoint {
    let mut c = Checkpoint::default();
    for (name, p) in model.params().iter() {
        c.insert(format!("{PARAM_PREFIX}{name}"), &p.value);
    }
    if let Some(o) = opt {
        for (n, t) in &o.m {
            c.insert(format!("{ADAM_M}{n}"), t);
        }
        for (n, t) in &o.v {
            c.insert(format!("{ADAM_V}{n}"), t);
        }
        c.insert(ADAM_STEP, &Tensor::<f64>::scalar(o.step as f64));
    }
    c.insert(ITERATION, &Tensor::<f64>::scalar(iteration as f64));
    c
}

/// Loads parameters into `model` (every parameter must be present with its
/// shape). Returns the saved optimizer state, if any, and iteration.
pub fn restore_model<S: Scalar>(
    c: &Checkpoint,
    model: &mut WorldModel<S>,
    opt_config: crate::world_model::AdamConfig,
) -> Result<(Option<AdamState<S>>, usize)> {
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
    for n in &names {
        model.params_mut().set(n, c.get(&format!("{PARAM_PREFIX}{n}"))?)?;
    }
    let extra = c
        .tensors
        .keys()
        .filter(|k| k.starts_with(PARAM_PREFIX) && !model.params().contains(&k[PARAM_PREFIX.len()..]))
        .count();
    if extra > 0 {
        return Err(Error::format("checkpoint", format!("{extra} parameters unknown to this model")));
    }
    let count = |name: &str| -> Result<usize> { Ok(c.get::<f64>(name)?.item()? as usize) };
    let iteration = if c.tensors.contains_key(ITERATION) { count(ITERATION)? } else { 0 };
    if !c.tensors.contains_key(ADAM_STEP) {
        return Ok((None, iteration));
    }
    let mut opt = AdamState::new(opt_config);
    opt.step = count(ADAM_STEP)? as u64;
    for k in c.tensors.keys() {
        if let Some(n) = k.strip_prefix(ADAM_M) {
            opt.m.insert(n.to_string(), c.get(k)?);
        } else if let Some(n) = k.strip_prefix(ADAM_V) {
            opt.v.insert(n.to_string(), c.get(k)?);
        }
    }
    Ok((Some(opt), iteration))
}
