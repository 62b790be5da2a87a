//! Per-point position and curvature pattern encodings.
//!
//! The position encoding of a point is its mean distance to its `K` nearest
//! neighbors (the point itself excluded). The curvature encoding is the
//! population standard deviation, over the same kind of neighborhood, of
//! `1 - cos(n_i, n_j)` between PCA normals.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cloud::{dot, sub, Point3, PointCloud};
use crate::eigen::{eigen_sym3, Mat3};
use crate::knn::{KnnIndex, Neighbor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodingKind {
    Position,
    Curvature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingVector {
    pub values: Vec<f64>,
    pub k_used: usize,
    pub kind: EncodingKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub normals: Vec<Point3>,
}

/// Reference used to pick the sign of each PCA normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    /// `n . (p - centroid) >= 0`; near-zero dot products orient toward +z.
    Centroid,
    /// `n . (camera - p) >= 0`.
    Toward(Point3),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub k_pos: usize,
    pub k_cur: usize,
    pub eps: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            k_pos: 16,
            k_cur: 24,
            eps: 1e-8,
        }
    }
}

/// Neighbor lists (self excluded) for every point of a cloud.
pub struct Neighborhoods {
    lists: Vec<Vec<Neighbor>>,
    k: usize,
}

impl Neighborhoods {
    pub fn compute(cloud: &PointCloud, k: usize) -> Result<Self> {
        let n = cloud.len();
        if k + 1 > n {
            return Err(Error::TooManyNeighbors {
                k,
                available: n.saturating_sub(1),
            });
        }
        let index = KnnIndex::build(cloud.positions())?;
        Ok(Self {
            lists: index.knn_self(k)?,
            k,
        })
    }

    /// First `k` neighbors of point `i`.
    pub fn of(&self, i: usize, k: usize) -> Result<&[Neighbor]> {
        if k > self.k {
            return Err(Error::TooManyNeighbors { k, available: self.k });
        }
        Ok(&self.lists[i][..k])
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

pub fn position_encoding(cloud: &PointCloud, k: usize) -> Result<EncodingVector> {
    let nb = Neighborhoods::compute(cloud, k)?;
    position_from(&nb, k)
}

fn position_from(nb: &Neighborhoods, k: usize) -> Result<EncodingVector> {
    if k == 0 {
        return Err(Error::InvalidParameter("position encoding needs K >= 1".into()));
    }
    let values = (0..nb.len())
        .map(|i| Ok(nb.of(i, k)?.iter().map(|n| n.distance).sum::<f64>() / k as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodingVector {
        values,
        k_used: k,
        kind: EncodingKind::Position,
    })
}

fn covariance_of(points: &[Point3], neighbors: &[Neighbor]) -> Mat3 {
    let k = neighbors.len() as f64;
    let mut mean = [0.0; 3];
    for n in neighbors {
        for a in 0..3 {
            mean[a] += points[n.index][a];
        }
    }
    for m in &mut mean {
        *m /= k;
    }
    let mut c = [[0.0; 3]; 3];
    for n in neighbors {
        let d = sub(points[n.index], mean);
        for a in 0..3 {
            for b in a..3 {
                c[a][b] += d[a] * d[b];
            }
        }
    }
    for a in 0..3 {
        for b in a..3 {
            c[a][b] /= k;
            c[b][a] = c[a][b];
        }
    }
    c
}

/// Covariance of each point's `k` neighbors about their own centroid.
pub fn local_covariance(cloud: &PointCloud, k: usize) -> Result<Vec<Mat3>> {
    if k < 3 {
        return Err(Error::InvalidParameter("covariance needs K >= 3".into()));
    }
    let nb = Neighborhoods::compute(cloud, k)?;
    (0..cloud.len())
        .map(|i| Ok(covariance_of(cloud.positions(), nb.of(i, k)?)))
        .collect()
}

fn orient(n: Point3, p: Point3, centroid: Point3, orientation: Orientation) -> Point3 {
    let s = match orientation {
        Orientation::Centroid => {
            let d = dot(n, sub(p, centroid));
            if d.abs() <= 1e-12 {
                n[2]
            } else {
                d
            }
        }
        Orientation::Toward(eye) => dot(n, sub(eye, p)),
    };
    if s < 0.0 {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

pub fn estimate_normals(cloud: &PointCloud, k: usize, orientation: Orientation) -> Result<NormalField> {
    if k < 3 {
        return Err(Error::InvalidParameter("normal estimation needs K >= 3".into()));
    }
    let nb = Neighborhoods::compute(cloud, k)?;
    normals_from(cloud, &nb, k, orientation)
}

fn normals_from(
    cloud: &PointCloud,
    nb: &Neighborhoods,
    k: usize,
    orientation: Orientation,
) -> Result<NormalField> {
    let centroid = cloud.centroid();
    let pts = cloud.positions();
    let normals = (0..pts.len())
        .map(|i| {
            let c = covariance_of(pts, nb.of(i, k)?);
            let e = eigen_sym3(&c)?;
            Ok(orient(e.vectors[0], pts[i], centroid, orientation))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalField { normals })
}

/// `v(i, j) = 1 - n_i . n_j / max(|n_i| |n_j|, eps)`.
pub fn normal_variation(ni: Point3, nj: Point3, eps: f64) -> f64 {
    let denom = (libm::sqrt(dot(ni, ni)) * libm::sqrt(dot(nj, nj))).max(eps);
    1.0 - dot(ni, nj) / denom
}

pub fn curvature_encoding(cloud: &PointCloud, normals: &NormalField, k: usize, eps: f64) -> Result<EncodingVector> {
    let nb = Neighborhoods::compute(cloud, k)?;
    curvature_from(&nb, normals, k, eps)
}

fn curvature_from(nb: &Neighborhoods, normals: &NormalField, k: usize, eps: f64) -> Result<EncodingVector> {
    if normals.normals.len() != nb.len() {
        return Err(Error::MissingNormals);
    }
    if k == 0 || !(eps > 0.0) {
        return Err(Error::InvalidParameter("curvature encoding needs K >= 1 and eps > 0".into()));
    }
    let n = &normals.normals;
    let kf = k as f64;
    let values = (0..nb.len())
        .map(|i| {
            let v: Vec<f64> = nb
                .of(i, k)?
                .iter()
                .map(|m| normal_variation(n[i], n[m.index], eps))
                .collect();
            let mean = v.iter().sum::<f64>() / kf;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / kf;
            Ok(libm::sqrt(var))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodingVector {
        values,
        k_used: k,
        kind: EncodingKind::Curvature,
    })
}

/// Both encodings of one cloud, sharing a single neighbor search.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternEncodings {
    pub position: EncodingVector,
    pub curvature: EncodingVector,
    pub normals: NormalField,
}

/// Position encoding with `k_pos` neighbors; normals and curvature with
/// `k_cur` neighbors.
pub fn encode_patterns(cloud: &PointCloud, cfg: &EncodingConfig, orientation: Orientation) -> Result<PatternEncodings> {
    let k_max = cfg.k_pos.max(cfg.k_cur);
    let nb = Neighborhoods::compute(cloud, k_max)?;
    let position = position_from(&nb, cfg.k_pos)?;
    if cfg.k_cur < 3 {
        return Err(Error::InvalidParameter("normal estimation needs K >= 3".into()));
    }
    let normals = normals_from(cloud, &nb, cfg.k_cur, orientation)?;
    let curvature = curvature_from(&nb, &normals, cfg.k_cur, cfg.eps)?;
    Ok(PatternEncodings {
        position,
        curvature,
        normals,
    })
}
