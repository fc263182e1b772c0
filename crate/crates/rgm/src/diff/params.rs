//! Named parameter store, SGD with momentum, and the weights file format.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::scalar::{cast, Real};
use crate::{Error, Result};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Tape variables produced by [`Params::bind`], one per parameter in store
/// order. Valid only for the tape it was created on.
pub struct TapeBinding {
    vars: Vec<Var>,
}

/// Magic bytes opening a weights file.
pub const WEIGHTS_MAGIC: &[u8; 4] = b"RGMW";

/// Current weights format version.
pub const WEIGHTS_VERSION: u32 = 1;

struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    velocity: Tensor<T>,
}

/// Ordered collection of named trainable tensors with their gradient and
/// momentum buffers. Iteration order is insertion order, which also fixes
/// the on-disk layout.
pub struct Params<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Params {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Parameter(format!("duplicate parameter `{name}`")));
        }
        let (r, c) = value.shape();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(r, c),
            velocity: Tensor::zeros(r, c),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    fn entry(&self, name: &str) -> Result<&Entry<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.entry(name)?.grad)
    }

    /// Adds `g` into the stored gradient of `name`.
    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor<T>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))?;
        let e = &mut self.entries[i];
        if e.grad.shape() != g.shape() {
            return Err(Error::Parameter(format!(
                "gradient shape mismatch for `{name}`"
            )));
        }
        for (a, b) in e.grad.data_mut().iter_mut().zip(g.data()) {
            *a = *a + *b;
        }
        Ok(())
    }

    /// Registers every parameter on a fresh tape, in store order.
    pub fn bind(&self, tape: &mut Tape<T>) -> TapeBinding {
        TapeBinding {
            vars: self
                .entries
                .iter()
                .map(|e| tape.param(e.value.clone()))
                .collect(),
        }
    }

    /// Tape variable bound to `name` by [`Params::bind`].
    pub fn var(&self, binding: &TapeBinding, name: &str) -> Result<Var> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))?;
        Ok(binding.vars[i])
    }

    /// Pulls the tape's gradients for every bound parameter into the store,
    /// accumulating. Parameters the loss never touched are left unchanged.
    pub fn absorb_grads(&mut self, tape: &Tape<T>, binding: &TapeBinding) {
        for (entry, &var) in self.entries.iter_mut().zip(&binding.vars) {
            if let Some(g) = tape.grad(var) {
                for (a, b) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
        }
    }

    /// One SGD update: `v <- momentum * v + grad; w <- w - lr * v`, then
    /// gradients are zeroed.
    pub fn sgd_step(&mut self, lr: T, momentum: T) {
        for e in &mut self.entries {
            for k in 0..e.value.len() {
                let v = momentum * e.velocity.data()[k] + e.grad.data()[k];
                e.velocity.data_mut()[k] = v;
                e.value.data_mut()[k] = e.value.data()[k] - lr * v;
            }
            for g in e.grad.data_mut() {
                *g = T::zero();
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = T::zero();
            }
        }
    }

    /// Writes the binary weights container plus a `<path>.manifest` text
    /// listing of names and shapes. Values are stored as 64-bit floats in
    /// little-endian order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(e.value.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(e.value.cols() as u32).to_le_bytes());
            for &v in e.value.data() {
                buf.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;

        let manifest_path = manifest_path(path);
        let mut manifest = String::new();
        for e in &self.entries {
            manifest.push_str(&format!(
                "{} {} {}\n",
                e.name,
                e.value.rows(),
                e.value.cols()
            ));
        }
        std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
    }

    /// Reads a weights container written by [`Params::save`]. Gradient and
    /// momentum buffers start zeroed.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
            path,
        };
        let magic = r.take(4)?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::Format(format!(
                "{}: not a weights file (bad magic)",
                path.display()
            )));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported weights version {version} (expected {WEIGHTS_VERSION})",
                path.display()
            )));
        }
        let count = r.u32()? as usize;
        let mut params = Params::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| {
                Error::Format(format!("{}: parameter name is not UTF-8", path.display()))
            })?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(cast(f64::from_le_bytes(r.take(8)?.try_into().unwrap())));
            }
            params.insert(&name, Tensor::new(rows, cols, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after last parameter",
                path.display(),
                bytes.len() - r.pos
            )));
        }
        Ok(params)
    }
}

/// Path of the text manifest that accompanies a weights file.
pub fn manifest_path(weights: &Path) -> std::path::PathBuf {
    let mut os = weights.as_os_str().to_os_string();
    os.push(".manifest");
    os.into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated weights file (wanted {n} bytes at offset {})",
                self.path.display(),
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
