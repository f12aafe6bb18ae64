use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Contiguous block of rows `start..end` of a rank-2 tensor.
    pub fn row_block(&self, start: usize, end: usize) -> Tensor {
        let c = self.shape[1];
        Tensor { shape: vec![end - start, c], data: self.data[start * c..end * c].to_vec() }
    }

    /// Copies out the leading-prefix block described by `region`.
    pub fn gather(&self, region: &Region) -> Result<Tensor> {
        region.check_fits(self)?;
        let mut out = Vec::with_capacity(region.volume());
        region.for_each_offset(&self.shape, |off| out.push(self.data[off]));
        Ok(Tensor { shape: region.extents.clone(), data: out })
    }

    /// Writes `block` into the leading-prefix block of matching extents.
    pub fn scatter(&mut self, block: &Tensor) -> Result<()> {
        let region = Region::new(block.shape.clone());
        region.check_fits(self)?;
        let mut values = block.data.iter();
        let shape = self.shape.clone();
        region.for_each_offset(&shape, |off| self.data[off] = *values.next().unwrap());
        Ok(())
    }
}

/// Leading-prefix index box `0..extents[0] x 0..extents[1] x ...`.
///
/// All subnet slices are prefix boxes: a reduced width always takes the
/// leading rows/columns of the shared tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub extents: Vec<usize>,
}

impl Region {
    pub fn new(extents: Vec<usize>) -> Self {
        Self { extents }
    }

    pub fn full(shape: &[usize]) -> Self {
        Self { extents: shape.to_vec() }
    }

    pub fn empty(rank: usize) -> Self {
        Self { extents: vec![0; rank] }
    }

    pub fn volume(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.volume() == 0
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.extents.len() && index.iter().zip(&self.extents).all(|(i, e)| i < e)
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.is_empty()
            || (self.extents.len() == other.extents.len()
                && self.extents.iter().zip(&other.extents).all(|(a, b)| a <= b))
    }

    fn check_fits(&self, t: &Tensor) -> Result<()> {
        if self.extents.len() != t.shape.len()
            || self.extents.iter().zip(&t.shape).any(|(e, s)| e > s)
        {
            return Err(dim_err(format!(
                "region {:?} does not fit tensor {:?}",
                self.extents, t.shape
            )));
        }
        Ok(())
    }

    /// Visits flat offsets (into a tensor of `shape`) of every index in the
    /// box, in row-major order.
    pub fn for_each_offset(&self, shape: &[usize], mut f: impl FnMut(usize)) {
        if self.is_empty() {
            return;
        }
        match self.extents.len() {
            0 => f(0),
            1 => (0..self.extents[0]).for_each(f),
            2 => {
                for r in 0..self.extents[0] {
                    let base = r * shape[1];
                    for c in 0..self.extents[1] {
                        f(base + c);
                    }
                }
            }
            rank => {
                let mut idx = vec![0usize; rank];
                loop {
                    let off = idx.iter().zip(shape).fold(0, |acc, (i, s)| acc * s + i);
                    f(off);
                    let mut axis = rank;
                    loop {
                        if axis == 0 {
                            return;
                        }
                        axis -= 1;
                        idx[axis] += 1;
                        if idx[axis] < self.extents[axis] {
                            break;
                        }
                        idx[axis] = 0;
                    }
                }
            }
        }
    }

    /// Row-major multi-index of a flat offset in a tensor of `shape`.
    pub fn unravel(shape: &[usize], mut offset: usize) -> Vec<usize> {
        let mut idx = vec![0; shape.len()];
        for axis in (0..shape.len()).rev() {
            idx[axis] = offset % shape[axis];
            offset /= shape[axis];
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_scatter_prefix_block() {
        let t = Tensor::matrix(3, 3, (0..9).map(f64::from).collect()).unwrap();
        let g = t.gather(&Region::new(vec![2, 2])).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 3.0, 4.0]);
        let mut z = Tensor::zeros(&[3, 3]);
        z.scatter(&g).unwrap();
        assert_eq!(z.data(), &[0.0, 1.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn region_subset() {
        let a = Region::new(vec![2, 3]);
        assert!(a.is_subset_of(&Region::new(vec![2, 4])));
        assert!(!a.is_subset_of(&Region::new(vec![1, 4])));
        assert!(Region::empty(2).is_subset_of(&Region::new(vec![0, 0])));
    }
}
