//! Versioned binary container for parameters, optimizer state and buffers.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        "POSEPYR-CKPT-1" (14 bytes)
//! scalar width u8 (4 or 8)
//! metadata     u64 length + UTF-8 bytes
//! params       u32 count, then per entry:
//!                name (u32 length + UTF-8), u32 ndim, u64 dims[ndim],
//!                u64 adam step, data[numel], m[numel], v[numel]
//! buffers      u32 count, then per entry: name, ndim, dims, data[numel]
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::optim::{AdamState, Parameter};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 14] = b"POSEPYR-CKPT-1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: Vec<Parameter<T>>,
    pub buffers: Vec<(String, Tensor<T>)>,
    /// Free-form caller metadata (JSON by convention).
    pub metadata: String,
}

impl<T: Element> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(T::BYTES as u8);
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            write_header(&mut out, &p.name, p.tensor.shape());
            out.extend_from_slice(&p.adam.step.to_le_bytes());
            for buf in [p.tensor.data(), &p.adam.m, &p.adam.v] {
                buf.iter().for_each(|v| v.write_le(&mut out));
            }
        }
        out.extend_from_slice(&(self.buffers.len() as u32).to_le_bytes());
        for (name, t) in &self.buffers {
            write_header(&mut out, name, t.shape());
            t.data().iter().for_each(|v| v.write_le(&mut out));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(TensorError::Format("missing POSEPYR-CKPT-1 header".into()));
        }
        let width = r.take(1)?[0] as usize;
        if width != 4 && width != 8 {
            return Err(TensorError::Format(format!(
                "unsupported scalar width {width}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| TensorError::Format("metadata is not UTF-8".into()))?;
        let n_params = r.u32()?;
        let mut params = Vec::with_capacity(n_params as usize);
        for _ in 0..n_params {
            let (name, shape) = r.header()?;
            let numel: usize = shape.iter().product();
            let step = r.u64()?;
            let data = r.scalars::<T>(numel, width)?;
            let m = r.scalars::<T>(numel, width)?;
            let v = r.scalars::<T>(numel, width)?;
            let tensor = Tensor::from_vec(&shape, data)?.with_requires_grad(true);
            params.push(Parameter {
                name,
                tensor,
                adam: AdamState { m, v, step },
            });
        }
        let n_buffers = r.u32()?;
        let mut buffers = Vec::with_capacity(n_buffers as usize);
        for _ in 0..n_buffers {
            let (name, shape) = r.header()?;
            let numel: usize = shape.iter().product();
            let data = r.scalars::<T>(numel, width)?;
            buffers.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(TensorError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            params,
            buffers,
            metadata,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| TensorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| TensorError::Io { path: p, source }
    };
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_header(out: &mut Vec<u8>, name: &str, shape: &[usize]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn header(&mut self) -> Result<(String, Vec<usize>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| TensorError::Format("entry name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        Ok((name, shape))
    }

    fn scalars<T: Element>(&mut self, n: usize, width: usize) -> Result<Vec<T>> {
        let raw = self.take(n * width)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| {
                if width == T::BYTES {
                    T::read_le(c)
                } else if width == 4 {
                    T::lit(f32::read_le(c) as f64)
                } else {
                    T::lit(f64::read_le(c))
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let mut p = Parameter::new(
            "head.weight",
            Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, 9.0]).unwrap(),
        );
        p.adam.step = 7;
        p.adam.m[1] = 0.25;
        p.adam.v[5] = 4.0;
        Checkpoint {
            params: vec![p],
            buffers: vec![(
                "bn.running_mean".into(),
                Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap(),
            )],
            metadata: r#"{"step":3}"#.into(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn header_is_checked() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes),
            Err(TensorError::Format(_))
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn widening_load_preserves_values() {
        let ck = sample();
        let wide = Checkpoint::<f64>::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(wide.params[0].tensor.data()[2], 3.5);
        assert_eq!(wide.params[0].adam.step, 7);
    }

    #[test]
    fn save_and_load_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample().save(&path).unwrap();
        assert!(!dir.path().join("model.ckpt.tmp").exists());
        assert_eq!(Checkpoint::<f32>::load(&path).unwrap(), sample());
    }
}
