use std::io::{Read, Write};
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Flat vector of all trainable parameters in canonical layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self + alpha * dir`.
    pub fn axpy(&self, alpha: f64, dir: &Self) -> Self {
        Self(self.0.iter().zip(&dir.0).map(|(a, d)| a + alpha * d).collect())
    }

    /// Binary checkpoint: `u64` length, `u64` network hash, then the values,
    /// all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W, spec_hash: u64) -> std::io::Result<()> {
        w.write_all(&(self.0.len() as u64).to_le_bytes())?;
        w.write_all(&spec_hash.to_le_bytes())?;
        for v in &self.0 {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn to_bytes(&self, spec_hash: u64) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.0.len());
        self.write_to(&mut buf, spec_hash).expect("writing to a Vec");
        buf
    }

    /// Read a checkpoint written by [`Self::write_to`], checking the network
    /// hash.
    pub fn read_from<R: Read>(mut r: R, expected_hash: u64) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)
                .map_err(|e| Error::Format(format!("truncated parameter checkpoint: {e}")))?;
            Ok(word)
        };
        let len = u64::from_le_bytes(next(&mut r)?) as usize;
        let hash = u64::from_le_bytes(next(&mut r)?);
        if hash != expected_hash {
            return Err(Error::Format(format!(
                "checkpoint belongs to network {hash:016x}, expected {expected_hash:016x}"
            )));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Self(values))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}
