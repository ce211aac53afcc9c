//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MOMK" | version | header_len | header (UTF-8 `key=value` lines)
//!        | group_count | { name_len | name | ndim | dims... | f32 data... }*
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numeric::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MOMK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub groups: Vec<TensorRecord>,
}

impl Checkpoint {
    /// Appends every group of `store`, prefixing names with `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, shape, data) in store.groups() {
            self.groups.push(TensorRecord {
                name: format!("{prefix}{name}"),
                shape: shape.to_vec(),
                data: data.to_vec(),
            });
        }
    }

    /// Loads every group whose name starts with `prefix` into `store`.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        store.load_groups(self.groups.iter().filter_map(|g| {
            g.name
                .strip_prefix(prefix)
                .map(|n| (n, g.shape.as_slice(), g.data.as_slice()))
        }))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let header: String = self.header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        write_bytes(w, header.as_bytes())?;
        w.write_all(&(self.groups.len() as u32).to_le_bytes())?;
        for g in &self.groups {
            write_bytes(w, g.name.as_bytes())?;
            w.write_all(&(g.shape.len() as u32).to_le_bytes())?;
            for d in &g.shape {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in &g.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Compat(format!(
                "checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header_text =
            String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        let mut header = BTreeMap::new();
        for line in header_text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad checkpoint header line {line:?}")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let count = read_u32(r)? as usize;
        let mut groups = Vec::with_capacity(count);
        for _ in 0..count {
            let name =
                String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("group name is not UTF-8".into()))?;
            let ndim = read_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut raw = vec![0u8; len * 4];
            read_exact(r, &mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            groups.push(TensorRecord { name, shape, data });
        }
        Ok(Self { header, groups })
    }
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated checkpoint".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::params::Init;
    use crate::numeric::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn store_round_trip_is_bit_exact() {
        let mut rng = Rng::new(5);
        let mut store = ParamStore::new();
        store.add("a.w", &[3, 4], Init::Normal(1.0), &mut rng);
        store.add("core", &[2, 2, 2], Init::Uniform(1.0), &mut rng);
        let mut ckpt = Checkpoint::default();
        ckpt.header.insert("dim".into(), "4".into());
        ckpt.push_store("model.", &store);
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..4], b"MOMK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        let mut other = store.clone();
        other.values_mut().get_mut(crate::numeric::params::ParamId(0))[0] = 9.0;
        back.restore_store("model.", &mut other).unwrap();
        assert_eq!(other.values(), store.values());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::from_bytes(b"NOPE"), Err(Error::Format(_))));
        let mut bytes = Checkpoint::default().to_bytes();
        bytes.truncate(6);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bits_survive(bits in prop::collection::vec(any::<u32>(), 0..64)) {
            let data: Vec<f32> = bits.iter().map(|b| f32::from_bits(*b)).collect();
            let ckpt = Checkpoint {
                header: BTreeMap::new(),
                groups: vec![TensorRecord { name: "x".into(), shape: vec![data.len()], data }],
            };
            let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
            let a: Vec<u32> = back.groups[0].data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, bits);
        }
    }
}
