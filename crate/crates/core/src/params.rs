//! Named trainable tensors and their binary file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "RELATEPS" | version: u32 | entry count: u32
//! per entry: name length: u32 | UTF-8 name | rank: u8 | dims: rank × u64 | payload: f64 × Π dims
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::DenseArray;

pub const MAGIC: &[u8; 8] = b"RELATEPS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Parameter {
    value: Arc<DenseArray>,
    grad: DenseArray,
    trainable: bool,
}

impl Parameter {
    pub fn value(&self) -> &DenseArray {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<DenseArray> {
        Arc::clone(&self.value)
    }

    pub fn value_mut(&mut self) -> &mut DenseArray {
        Arc::make_mut(&mut self.value)
    }

    pub fn grad(&self) -> &DenseArray {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut DenseArray {
        &mut self.grad
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Ordered map from dotted names to parameters. Iteration order is the
/// lexicographic name order, which keeps files and optimizer sweeps stable.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter `{name}`")));
        }
        let grad = DenseArray::zeros(value.shape());
        self.entries.insert(
            name,
            Parameter {
                value: Arc::new(value),
                grad,
                trainable,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.entries.get_mut(name)
    }

    pub fn param(&self, name: &str) -> Result<&Parameter> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&DenseArray> {
        self.param(name).map(Parameter::value)
    }

    pub fn set_value(&mut self, name: &str, value: DenseArray) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::dim("set_value", p.value.shape(), value.shape()));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn total_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Trainable scalars whose names start with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, p)| p.trainable && k.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &DenseArray) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter `{name}`")))?;
        if p.grad.len() != grad.len() {
            return Err(Error::dim("accumulate_grad", p.grad.shape(), grad.shape()));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Moves every entry of `other` into `self`, failing on name clashes.
    pub fn merge(&mut self, other: ParameterStore) -> Result<()> {
        for (name, p) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(Error::Argument(format!("duplicate parameter `{name}`")));
            }
            self.entries.insert(name, p);
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, p) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            let shape = p.value.shape();
            w.write_all(&[shape.len() as u8])?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in p.value.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic, not a parameter file"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| fmt("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| fmt("name is not UTF-8"))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank).map_err(|_| fmt("truncated rank"))?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| fmt("truncated dims"))?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(|_| fmt("truncated payload"))?;
                data.push(f64::from_le_bytes(b));
            }
            let value = DenseArray::new(shape, data)?;
            store.insert(name, value, true)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}
