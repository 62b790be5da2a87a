//! Point cloud container and unit-sphere normalization.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Squared distance, summed in x, y, z order so that every caller gets
/// bit-identical values for the same pair.
#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

pub fn normalized(a: Point3) -> Option<Point3> {
    let n = norm(a);
    (n > 0.0 && n.is_finite()).then(|| scale(a, 1.0 / n))
}

/// Ordered 3-D positions with optional unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<Point3>,
    normals: Option<Vec<Point3>>,
}

/// `normalized = (original - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub center: Point3,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: Point3) -> Point3 {
        scale(sub(p, self.center), 1.0 / self.scale)
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        add(scale(p, self.scale), self.center)
    }
}

fn check_finite(points: &[Point3]) -> Result<()> {
    match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        check_finite(&positions)?;
        Ok(Self {
            positions,
            normals: None,
        })
    }

    /// Normals are rescaled to unit length; zero normals are rejected.
    pub fn with_normals(positions: Vec<Point3>, normals: Vec<Point3>) -> Result<Self> {
        check_finite(&positions)?;
        if normals.len() != positions.len() {
            return Err(Error::ShapeMismatch {
                op: "normals",
                lhs: alloc::vec![positions.len(), 3],
                rhs: alloc::vec![normals.len(), 3],
            });
        }
        let normals = normals
            .into_iter()
            .enumerate()
            .map(|(i, n)| normalized(n).ok_or(Error::NonFinite(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            positions,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn into_positions(self) -> Vec<Point3> {
        self.positions
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn set_normals(&mut self, normals: Vec<Point3>) -> Result<()> {
        let c = Self::with_normals(core::mem::take(&mut self.positions), normals)?;
        *self = c;
        Ok(())
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.positions.len().max(1) as f64;
        let s = self.positions.iter().fold([0.0; 3], |acc, &p| add(acc, p));
        scale(s, 1.0 / n)
    }

    /// Center on the centroid and scale so the farthest point sits at
    /// distance 1.
    pub fn normalize_unit_sphere(&self) -> Result<(PointCloud, Similarity)> {
        if self.positions.len() < 2 {
            return Err(Error::DegenerateCloud);
        }
        let center = self.centroid();
        let radius = self
            .positions
            .iter()
            .map(|&p| norm(sub(p, center)))
            .fold(0.0, f64::max);
        if radius <= 0.0 || radius < 1e-12 * (1.0 + norm(center)) {
            return Err(Error::DegenerateCloud);
        }
        let sim = Similarity {
            center,
            scale: radius,
        };
        Ok((self.transformed(&sim), sim))
    }

    /// Apply `sim` to positions; normals are unchanged by a similarity.
    pub fn transformed(&self, sim: &Similarity) -> PointCloud {
        PointCloud {
            positions: self.positions.iter().map(|&p| sim.apply(p)).collect(),
            normals: self.normals.clone(),
        }
    }

    pub fn untransformed(&self, sim: &Similarity) -> PointCloud {
        PointCloud {
            positions: self.positions.iter().map(|&p| sim.invert(p)).collect(),
            normals: self.normals.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// `[N, 3]` tensor of positions.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self
            .positions
            .iter()
            .flat_map(|p| p.iter().map(|&c| T::from_f64(c)))
            .collect();
        Tensor::from_vec(&[self.positions.len(), 3], data).expect("N x 3")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != 3 {
            return Err(Error::InvalidShape {
                op: "point cloud",
                shape: t.shape().to_vec(),
                reason: "expected [N, 3]",
            });
        }
        let positions = t
            .data()
            .chunks_exact(3)
            .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
            .collect();
        Self::new(positions)
    }
}
