//! Dense multiway arrays in row-major order, plus the portable `CTS1`
//! binary tensor format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A dense d-way tensor of 64-bit reals, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Builds a tensor from axis sizes and a flat row-major buffer.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<DenseTensor> {
        if dims.is_empty() {
            return Err(Error::Argument("tensor needs at least one axis".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!("zero-sized axis in dims {dims:?}")));
        }
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(Error::Argument(format!(
                "dims {dims:?} imply {expect} elements, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { dims, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(dims: Vec<usize>) -> Result<DenseTensor> {
        let n: usize = dims.iter().product();
        DenseTensor::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index (row-major).
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, &ix) in idx.iter().enumerate() {
            debug_assert!(ix < self.dims[i]);
            off = off * self.dims[i] + ix;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn has_finite_entries(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the tensor as a matrix split before `split_axis`:
    /// rows run over axes `0..split_axis`, columns over the rest. Row-major
    /// layout makes this a pure reshape; values are untouched.
    pub fn unfold(&self, split_axis: usize) -> Result<DenseTensor> {
        if split_axis == 0 || split_axis >= self.rank() {
            return Err(Error::Argument(format!(
                "split_axis {split_axis} out of range for rank {}",
                self.rank()
            )));
        }
        let rows: usize = self.dims[..split_axis].iter().product();
        let cols: usize = self.dims[split_axis..].iter().product();
        DenseTensor::new(vec![rows, cols], self.data.clone())
    }

    /// Inverse of `unfold`: restores the original axis sizes.
    pub fn refold(&self, dims: Vec<usize>) -> Result<DenseTensor> {
        DenseTensor::new(dims, self.data.clone())
    }

    /// sqrt of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Writes the tensor in the `CTS1` binary format.
    ///
    /// Layout (normative): magic bytes `CTS1`, u32 little-endian axis
    /// count, each axis size as u64 little-endian, then the data as
    /// 64-bit IEEE-754 little-endian reals in row-major order.
    pub fn write_cts1<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"CTS1")?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a tensor in the `CTS1` binary format.
    pub fn read_cts1<R: Read>(r: &mut R) -> Result<DenseTensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"CTS1" {
            return Err(Error::Format(format!("bad magic {magic:?}, expected CTS1")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let axes = u32::from_le_bytes(b4) as usize;
        if axes == 0 {
            return Err(Error::Format("axis count must be positive".into()));
        }
        let mut dims = Vec::with_capacity(axes);
        let mut b8 = [0u8; 8];
        for _ in 0..axes {
            r.read_exact(&mut b8)?;
            let d = u64::from_le_bytes(b8);
            if d == 0 {
                return Err(Error::Format("zero-sized axis".into()));
            }
            dims.push(d as usize);
        }
        let total: usize = dims.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        DenseTensor::new(dims, data)
    }

    pub fn save_cts1(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_cts1(&mut f)
    }

    pub fn load_cts1(path: &Path) -> Result<DenseTensor> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        DenseTensor::read_cts1(&mut f)
    }
}

/// Iterates row-major over the full index grid of `dims`, calling `f`
/// with the running multi-index.
pub fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; dims.len()];
    loop {
        f(&idx);
        // row-major increment: last axis fastest
        let mut axis = dims.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < dims[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}
