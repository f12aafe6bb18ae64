//! In-memory datasets and the flat binary record layout.
//!
//! File layout, all little-endian:
//!
//! ```text
//! u64 count | u64 seq_len | u64 input_dim | u64 num_classes
//! count x ( u64 label | seq_len * input_dim x f64 )
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HEADER_BYTES: usize = 32;

/// Labelled token sequences, each `seq_len x input_dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    seq_len: usize,
    input_dim: usize,
    num_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        seq_len: usize,
        input_dim: usize,
        num_classes: usize,
        inputs: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() * seq_len * input_dim {
            return Err(Error::Data(format!(
                "{} values for {} records of {seq_len}x{input_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self { seq_len, input_dim, num_classes, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn record(&self, i: usize) -> &[f64] {
        let n = self.seq_len * self.input_dim;
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Stacks the records at `indices` into a `(len * seq_len) x input_dim`
    /// token matrix plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.seq_len * self.input_dim);
        for &i in indices {
            data.extend_from_slice(self.record(i));
        }
        let x = Tensor::matrix(indices.len() * self.seq_len, self.input_dim, data)
            .expect("batch shape");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Records `start..end` as a new dataset.
    pub fn subset(&self, start: usize, end: usize) -> Dataset {
        let n = self.seq_len * self.input_dim;
        Dataset {
            inputs: self.inputs[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
            ..*self
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.seq_len * self.input_dim;
        let mut out = Vec::with_capacity(HEADER_BYTES + self.len() * (8 + per * 8));
        for v in [self.len(), self.seq_len, self.input_dim, self.num_classes] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for i in 0..self.len() {
            out.extend_from_slice(&(self.labels[i] as u64).to_le_bytes());
            for v in self.record(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Format {
                offset: bytes.len(),
                message: format!("header needs {HEADER_BYTES} bytes, file has {}", bytes.len()),
            });
        }
        let word = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let (count, seq_len, input_dim, num_classes) = (word(0), word(8), word(16), word(24));
        if seq_len == 0 || input_dim == 0 || num_classes == 0 {
            return Err(Error::Format { offset: 8, message: "zero extent in header".into() });
        }
        let record_bytes = seq_len
            .checked_mul(input_dim)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(8))
            .ok_or_else(|| Error::Format { offset: 8, message: "header extents overflow".into() })?;
        let expected = count
            .checked_mul(record_bytes)
            .and_then(|n| n.checked_add(HEADER_BYTES as u64))
            .ok_or_else(|| Error::Format { offset: 0, message: "header count overflows".into() })?;
        if expected != bytes.len() as u64 {
            let complete = (bytes.len() - HEADER_BYTES) as u64 / record_bytes;
            let offset = HEADER_BYTES as u64 + complete.min(count) * record_bytes;
            return Err(Error::Format {
                offset: offset as usize,
                message: format!(
                    "header declares {count} records ({expected} bytes), file has {} bytes",
                    bytes.len()
                ),
            });
        }
        let (count, seq_len, input_dim) = (count as usize, seq_len as usize, input_dim as usize);
        let mut labels = Vec::with_capacity(count);
        let mut inputs = Vec::with_capacity(count * seq_len * input_dim);
        let mut off = HEADER_BYTES;
        for _ in 0..count {
            let label = word(off);
            if label >= num_classes {
                return Err(Error::Data(format!(
                    "label {label} at byte {off} outside 0..{num_classes}"
                )));
            }
            labels.push(label as usize);
            off += 8;
            for _ in 0..seq_len * input_dim {
                inputs.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
                off += 8;
            }
        }
        Self::new(seq_len, input_dim, num_classes as usize, inputs, labels)
    }
}

pub fn export_dataset(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, data.to_bytes())?;
    Ok(())
}

pub fn import_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(&fs::read(path)?)
}
