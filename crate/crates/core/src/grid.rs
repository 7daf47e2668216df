use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Grayscale image with values in `[0, 1]`.
pub type Image = Grid<f32>;

/// Binary mask with values in `{0, 1}`.
pub type Mask = Grid<u8>;

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: (height, width),
                found: (data.len(), 1),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
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

    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { height: self.height, width: self.width, data: self.data.iter().map(f).collect() }
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch { expected: self.shape(), found: other.shape() });
        }
        Ok(())
    }
}

impl Grid<u8> {
    /// Number of foreground pixels.
    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn to_f32(&self) -> Grid<f32> {
        self.map(|&v| v as f32)
    }
}

impl Grid<f32> {
    /// Binarise with `value >= threshold`.
    pub fn threshold(&self, threshold: f32) -> Mask {
        self.map(|&v| u8::from(v >= threshold))
    }

    /// Bilinear resampling to a new size (pixel-centre aligned).
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Grid<f32> {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        Grid::from_fn(height, width, |y, x| {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
            self.sample_bilinear(fy, fx)
        })
    }

    /// Bilinear lookup at a continuous position already inside the grid.
    pub fn sample_bilinear(&self, fy: f32, fx: f32) -> f32 {
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
        let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
        let bottom = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Grid::from_vec(2, 2, vec![0u8; 3]).is_err());
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let g = Grid::filled(5, 7, 0.25f32);
        let r = g.resize_bilinear(11, 3);
        assert_eq!(r.shape(), (11, 3));
        assert!(r.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn threshold_ties_are_positive() {
        let g = Grid::from_vec(1, 3, vec![0.49f32, 0.5, 0.51]).unwrap();
        assert_eq!(g.threshold(0.5).as_slice(), &[0, 1, 1]);
    }
}
