//! Real rank-3 tensors (rows × cols × channels), the common currency between
//! the array model, the classifiers and the attacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The two perturbation norms used throughout: ℓ2 and ℓ∞ over the real
/// representation of a tensor or complex matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Linf,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::L2 => "2",
            Norm::Linf => "inf",
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "l2" | "L2" => Ok(Norm::L2),
            "inf" | "linf" | "Linf" | "∞" => Ok(Norm::Linf),
            other => Err(Error::Domain(format!("unknown norm '{other}' (expected 2 or inf)"))),
        }
    }
}

/// Row-major real tensor with the channel index varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Domain(format!("tensor dims must be positive, got {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape {
                expected: vec![len],
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("tensor contains non-finite entries".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
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

    #[inline]
    pub fn offset(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.dims[1] + col) * self.dims[2] + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.offset(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let o = self.offset(row, col, ch);
        self.data[o] = v;
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self, p: Norm) -> f64 {
        match p {
            Norm::L2 => self.l2_norm(),
            Norm::Linf => self.linf_norm(),
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn check_same_dims(&self, other: &RealTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape {
                expected: self.dims.to_vec(),
                got: other.dims.to_vec(),
            });
        }
        Ok(())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &RealTensor) -> Result<RealTensor> {
        self.check_same_dims(other)?;
        Ok(RealTensor {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &RealTensor) -> Result<RealTensor> {
        self.check_same_dims(other)?;
        Ok(RealTensor {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> RealTensor {
        RealTensor {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Round every entry through `f32`, matching what the on-disk formats hold.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}
