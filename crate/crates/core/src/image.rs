//! Depth and silhouette images, stored row-major (`v * width + u`).

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Camera-space depth per pixel; 0 marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Per-pixel foreground coverage in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width * height != len {
        return Err(Error::ImageSize {
            expected: (width, height),
            got: (len, 1),
        });
    }
    Ok(())
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_len(width, height, values.len())?;
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(alloc::format!(
                "depth pixel {i} is negative or non-finite"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&z| z > 0.0).count()
    }

    /// 1 where depth > 0, else 0.
    pub fn binarize(&self) -> SilhouetteMap {
        SilhouetteMap {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .map(|&z| if z > 0.0 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Depth divided by `depth_scale` and clamped to `[0, 1]`.
    pub fn normalized(&self, depth_scale: f64) -> Vec<f64> {
        self.values
            .iter()
            .map(|&z| (z / depth_scale).clamp(0.0, 1.0))
            .collect()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl SilhouetteMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_len(width, height, values.len())?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("silhouette values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn binarize(&self) -> SilhouetteMap {
        SilhouetteMap {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .map(|&s| if s > 0.0 { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Fraction of `reference` foreground pixels left uncovered by `test`.
pub fn hole_fraction(test: &SilhouetteMap, reference: &SilhouetteMap) -> Result<f64> {
    if test.dims() != reference.dims() {
        return Err(Error::ImageSize {
            expected: reference.dims(),
            got: test.dims(),
        });
    }
    let mut fg = 0usize;
    let mut holes = 0usize;
    for (&t, &r) in test.values.iter().zip(&reference.values) {
        if r > 0.0 {
            fg += 1;
            if t <= 0.0 {
                holes += 1;
            }
        }
    }
    Ok(if fg == 0 { 0.0 } else { holes as f64 / fg as f64 })
}
