//! Scalar 3D volumes and 2D slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `H×W` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch {
                expected: vec![h, w],
                actual: vec![data.len()],
            });
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.h, self.w]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }
}

/// `D×H×W` intensity grid with voxel spacing in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("spacing", "voxel spacing must be positive"));
        }
        Ok(Self {
            shape,
            spacing,
            data,
        })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            spacing: [1.0; 3],
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_slices(slices: &[Image], spacing: [f64; 3]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::invalid("slices", "need at least one slice"))?;
        let [h, w] = first.shape();
        let mut data = Vec::with_capacity(slices.len() * h * w);
        for s in slices {
            if s.shape() != [h, w] {
                return Err(Error::ShapeMismatch {
                    expected: vec![h, w],
                    actual: s.shape().to_vec(),
                });
            }
            data.extend_from_slice(s.data());
        }
        Self::new([slices.len(), h, w], spacing, data)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn depth(&self) -> usize {
        self.shape[0]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn geometry(&self) -> VolumeGeometry {
        VolumeGeometry {
            shape: self.shape,
            spacing: self.spacing,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn slice_data(&self, d: usize) -> &[f32] {
        let n = self.shape[1] * self.shape[2];
        &self.data[d * n..(d + 1) * n]
    }

    pub fn slice(&self, d: usize) -> Image {
        Image {
            h: self.shape[1],
            w: self.shape[2],
            data: self.slice_data(d).to_vec(),
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = Image> + '_ {
        (0..self.shape[0]).map(|d| self.slice(d))
    }

    #[inline]
    pub fn index(&self, d: usize, y: usize, x: usize) -> usize {
        (d * self.shape[1] + y) * self.shape[2] + x
    }
}
