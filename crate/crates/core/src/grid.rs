//! Dense 2-D map types shared by every other module.
//!
//! All grids are row-major with the origin at the top-left pixel, so the
//! value at column `x`, row `y` lives at index `y * width + x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative saliency mass over a `width x height` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "density values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Index of the largest value (first one on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn same_shape<T: Shape2>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }
}

/// Binary fixation locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationMap {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl FixationMap {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(v) = values.iter().find(|v| **v > 1) {
            return Err(Error::InvalidValue(format!(
                "fixation values must be 0 or 1, found {v}"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    /// Builds a map with ones at the given `(x, y)` pixels.
    pub fn from_points(width: usize, height: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut map = Self::empty(width, height)?;
        for &(x, y) in points {
            map.set(x, y)?;
        }
        Ok(map)
    }

    pub fn set(&mut self, x: usize, y: usize) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        self.values[y * self.width + x] = 1;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn is_fixated(&self, index: usize) -> bool {
        self.values[index] == 1
    }

    /// Number of fixated pixels, `N`.
    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| **v == 1).count()
    }

    /// Flat indices of fixated pixels in row-major order.
    pub fn indices(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| (*v == 1).then_some(i))
            .collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| f64::from(*v)).collect()
    }
}

/// Anything with a 2-D extent.
pub trait Shape2 {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
}

impl Shape2 for DensityMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl Shape2 for FixationMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

pub(crate) fn ensure_same_shape(a: &impl Shape2, b: &impl Shape2) -> Result<()> {
    if a.width() == b.width() && a.height() == b.height() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::ShapeMismatch(format!(
            "grid dimensions must be positive, got {width}x{height}"
        )));
    }
    if width * height != len {
        return Err(Error::ShapeMismatch(format!(
            "{width}x{height} grid needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

/// Mean and population standard deviation of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub mean: f64,
    pub std: f64,
}

/// Two-pass mean / population std over a slice.
pub fn slice_stats(values: &[f64]) -> GridStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    GridStats {
        mean,
        std: var.sqrt(),
    }
}

pub fn grid_stats(map: &DensityMap) -> GridStats {
    slice_stats(map.values())
}

/// Divides every value by the total mass.
pub fn normalize_sum(map: &DensityMap) -> Result<DensityMap> {
    let values = normalized_values(map.values())?;
    Ok(DensityMap {
        width: map.width,
        height: map.height,
        values,
    })
}

pub(crate) fn normalized_values(values: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = values.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(values.iter().map(|v| v / sum).collect())
}

/// `(v - mean) / std` per pixel.
pub fn standardize(map: &DensityMap) -> Result<Vec<f64>> {
    standardize_slice(map.values())
}

pub(crate) fn standardize_slice(values: &[f64]) -> Result<Vec<f64>> {
    let GridStats { mean, std } = slice_stats(values);
    if !(std > 0.0) {
        return Err(Error::DegenerateInput(
            "standard deviation is zero (constant map)".into(),
        ));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}
