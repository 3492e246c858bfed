//! Dense rank-4 tensors in `(batch, channel, height, width)` order.

use crate::error::{Error, Result};

/// Contiguous NCHW array, width fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Copy> Tensor4<T> {
    pub fn filled(shape: [usize; 4], value: T) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Values per channel plane (`h * w`).
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Values per batch item (`c * h * w`).
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.plane_len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    /// Values of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let len = self.plane_len();
        let start = (n * self.shape[1] + c) * len;
        &self.data[start..start + len]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn same_shape<U>(&self, other: &Tensor4<U>, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

impl<T: num_traits::Float> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor4::from_vec([2, 3, 4, 5], (0..120).collect()).unwrap();
        assert_eq!(t.get(1, 2, 3, 4), 119);
        assert_eq!(t.get(0, 1, 0, 0), 20);
        assert_eq!(t.plane(1, 0)[0], 60);
        assert_eq!(t.item(1).len(), 60);
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0f32; 3]).is_err());
    }
}
