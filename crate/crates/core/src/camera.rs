//! Pinhole camera with rigid world-to-camera extrinsics.
//!
//! Camera space is x right, y down, z forward. Pixel centers sit at integer
//! coordinates, so a point projecting to `(u, v)` with integer `u, v` hits
//! the center of pixel `(u, v)`.

use rand::Rng;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::cloud::{cross, dot, normalized, scale, sub, Point3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub principal: [f64; 2],
    /// Rows are the camera axes expressed in world coordinates.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

/// Ranges for random viewpoints on a sphere around the origin (z up).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ViewSampling {
    pub distance: f64,
    pub elevation_deg: (f64, f64),
    pub azimuth_deg: (f64, f64),
}

impl Default for ViewSampling {
    fn default() -> Self {
        Self {
            distance: 2.0,
            elevation_deg: (-30.0, 30.0),
            azimuth_deg: (0.0, 360.0),
        }
    }
}

/// Screen-space positions and camera depth of projected points.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedVars {
    pub x: Var,
    pub y: Var,
    pub z: Var,
}

impl Camera {
    pub fn new(
        focal: f64,
        principal: [f64; 2],
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(focal > 0.0) || width == 0 || height == 0 {
            return Err(Error::DegenerateCamera("focal length and image size must be positive"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(rotation[i], rotation[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::DegenerateCamera("rotation is not orthonormal"));
                }
            }
        }
        Ok(Self {
            focal,
            principal,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Default intrinsics: focal = image height, principal point at the
    /// image center.
    pub fn look_at_default(eye: Point3, target: Point3, up: Point3, width: usize, height: usize) -> Result<Self> {
        Self::look_at(eye, target, up, height as f64, width, height)
    }

    pub fn look_at(eye: Point3, target: Point3, up: Point3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let forward = normalized(sub(target, eye)).ok_or(Error::DegenerateCamera("eye coincides with target"))?;
        let right = normalized(cross(forward, up)).ok_or(Error::DegenerateCamera("up is parallel to the view direction"))?;
        if crate::cloud::norm(cross(forward, up)) < 1e-9 * crate::cloud::norm(up).max(1.0) {
            return Err(Error::DegenerateCamera("up is parallel to the view direction"));
        }
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = [-dot(right, eye), -dot(down, eye), -dot(forward, eye)];
        Self::new(
            focal,
            [width as f64 / 2.0, height as f64 / 2.0],
            rotation,
            translation,
            width,
            height,
        )
    }

    /// Camera center in world coordinates.
    pub fn eye(&self) -> Point3 {
        let r = &self.rotation;
        let t = self.translation;
        let mut e = [0.0; 3];
        for a in 0..3 {
            e[a] = -(r[0][a] * t[0] + r[1][a] * t[1] + r[2][a] * t[2]);
        }
        e
    }

    pub fn world_to_camera(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        [
            dot(r[0], p) + self.translation[0],
            dot(r[1], p) + self.translation[1],
            dot(r[2], p) + self.translation[2],
        ]
    }

    pub fn camera_to_world(&self, c: Point3) -> Point3 {
        let d = sub(c, self.translation);
        let r = &self.rotation;
        let mut w = [0.0; 3];
        for a in 0..3 {
            w[a] = r[0][a] * d[0] + r[1][a] * d[1] + r[2][a] * d[2];
        }
        w
    }

    /// `(x, y, z)` with pixel coordinates and camera depth; `None` when the
    /// point is not strictly in front of the camera.
    pub fn project(&self, p: Point3) -> Option<[f64; 3]> {
        let c = self.world_to_camera(p);
        if !(c[2] > 0.0) {
            return None;
        }
        Some([
            self.focal * c[0] / c[2] + self.principal[0],
            self.focal * c[1] / c[2] + self.principal[1],
            c[2],
        ])
    }

    /// Projection of every point; fails on the first point behind the camera.
    pub fn project_all(&self, points: &[Point3]) -> Result<alloc::vec::Vec<[f64; 3]>> {
        points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                self.project(p).ok_or(Error::BehindCamera {
                    index: i,
                    z: self.world_to_camera(p)[2],
                })
            })
            .collect()
    }

    /// Inverse of [`Camera::project`] for a pixel position and depth.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3 {
        let c = [
            (u - self.principal[0]) * z / self.focal,
            (v - self.principal[1]) * z / self.focal,
            z,
        ];
        self.camera_to_world(c)
    }

    /// Differentiable projection of `points: [N, 3]`.
    pub fn project_vars<T: Real>(&self, tape: &mut Tape<T>, points: Var) -> Result<ProjectedVars> {
        let shape = tape.shape(points).to_vec();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::InvalidShape {
                op: "project",
                shape,
                reason: "expected [N, 3]",
            });
        }
        let n = shape[0];
        let r = &self.rotation;
        let rt: alloc::vec::Vec<f64> = (0..3).flat_map(|a| (0..3).map(move |b| r[b][a])).collect();
        let rt = tape.constant(Tensor::from_f64(&[3, 3], &rt)?);
        let t = tape.constant(Tensor::from_f64(&[3], &self.translation)?);
        let cam = tape.matmul(points, rt)?;
        let cam = tape.add(cam, t)?;
        let column = |a: usize| -> alloc::vec::Vec<usize> { (0..n).map(|i| i * 3 + a).collect() };
        let xc = tape.take(cam, &column(0), &[n])?;
        let yc = tape.take(cam, &column(1), &[n])?;
        let z = tape.take(cam, &column(2), &[n])?;
        if let Some((i, &zv)) = tape
            .value(z)
            .data()
            .iter()
            .enumerate()
            .find(|(_, z)| !(**z > T::zero()))
        {
            return Err(Error::BehindCamera { index: i, z: zv.as_f64() });
        }
        let f = T::from_f64(self.focal);
        let xn = tape.div(xc, z)?;
        let xs = tape.mul_scalar(xn, f);
        let x = tape.add_scalar(xs, T::from_f64(self.principal[0]));
        let yn = tape.div(yc, z)?;
        let ys = tape.mul_scalar(yn, f);
        let y = tape.add_scalar(ys, T::from_f64(self.principal[1]));
        Ok(ProjectedVars { x, y, z })
    }
}

/// Random camera on a sphere around the origin looking at it, z up.
pub fn sample_viewpoint<R: Rng>(rng: &mut R, view: &ViewSampling, width: usize, height: usize) -> Result<Camera> {
    let (elo, ehi) = view.elevation_deg;
    let (alo, ahi) = view.azimuth_deg;
    if !(elo <= ehi && alo <= ahi && ehi.abs() < 90.0 && elo.abs() < 90.0 && view.distance > 0.0) {
        return Err(Error::InvalidParameter("invalid viewpoint ranges".into()));
    }
    let el = if elo == ehi { elo } else { rng.random_range(elo..ehi) }.to_radians();
    let az = if alo == ahi { alo } else { rng.random_range(alo..ahi) }.to_radians();
    let dir = [
        libm::cos(el) * libm::cos(az),
        libm::cos(el) * libm::sin(az),
        libm::sin(el),
    ];
    Camera::look_at_default(scale(dir, view.distance), [0.0; 3], [0.0, 0.0, 1.0], width, height)
}

/// Elevation of the camera center above the xy-plane, in degrees.
pub fn elevation_deg(cam: &Camera) -> f64 {
    let e = cam.eye();
    libm::atan2(e[2], libm::sqrt(e[0] * e[0] + e[1] * e[1])).to_degrees()
}
