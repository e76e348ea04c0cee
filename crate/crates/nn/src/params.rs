//! Named parameter storage and the flat binary checkpoint format.
//!
//! Layout (little endian): magic `YOASPRM1`, u32 count, then per parameter
//! u32 name length, UTF-8 name, u32 rank, u64 dims, f32 payload.

use std::io::{Read, Write};
use std::path::Path;

use yoas_core::Scalar;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"YOASPRM1";

#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Scalar> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let grad = vec![T::zero(); value.numel()];
        self.params.push(Parameter { name: name.into(), value, grad });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn value(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.params[i].value
    }

    pub fn grad(&self, i: usize) -> &[T] {
        &self.params[i].grad
    }

    pub fn grad_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.params[i].grad
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let shape = p.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&(v.f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let count = read_u32(r)? as usize;
        let mut ps = Self::new();
        for _ in 0..count {
            let n = read_u32(r)? as usize;
            if n > 4096 {
                return Err(NnError::Checkpoint(format!("name length {n}")));
            }
            let mut name = vec![0u8; n];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| NnError::Checkpoint(e.to_string()))?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(NnError::Checkpoint(format!("rank {rank} for {name}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                data.push(T::of(f32::from_le_bytes(b) as f64));
            }
            let t = Tensor::new(shape, data).map_err(|e| NnError::Checkpoint(e.to_string()))?;
            ps.add(name, t);
        }
        Ok(ps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Copies values from `other`, which must have the same names and shapes.
    pub fn load_values(&mut self, other: &ParamSet<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(NnError::Checkpoint(format!("{} parameters, expected {}", other.len(), self.len())));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
