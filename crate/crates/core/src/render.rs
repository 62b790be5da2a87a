//! Point-splat rasterization into silhouette and depth images, with the
//! density-aware radius adjustment (DARE) and back-projection.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{CustomOp, Real, Tape, Tensor, Var};
use crate::camera::Camera;
use crate::cloud::Point3;
use crate::image::{DepthMap, SilhouetteMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplatConfig {
    /// Splat radius in normalized device units (half the shorter image side is 1).
    pub radius: f64,
    pub k_blend: usize,
    pub gamma: f64,
}

impl Default for SplatConfig {
    fn default() -> Self {
        Self {
            radius: 0.03,
            k_blend: 8,
            gamma: 1.0,
        }
    }
}

impl SplatConfig {
    pub fn with_radius(self, radius: f64) -> Self {
        Self { radius, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("splat radius must be positive, got {}", self.radius)));
        }
        if self.k_blend == 0 {
            return Err(Error::InvalidParameter("k_blend must be at least 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        Ok(())
    }

    pub fn radius_px(&self, width: usize, height: usize) -> f64 {
        self.radius * width.min(height) as f64 / 2.0
    }
}

/// A point's contribution to one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub point: usize,
    pub z: f64,
    /// Squared screen distance to the pixel center over squared radius, in `[0, 1)`.
    pub d2n: f64,
}

/// Per-pixel fragment lists, each sorted by ascending z (ties by point id).
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub radius_px: f64,
    offsets: Vec<usize>,
    fragments: Vec<Fragment>,
}

impl Raster {
    pub fn pixel(&self, u: usize, v: usize) -> &[Fragment] {
        let p = v * self.width + u;
        &self.fragments[self.offsets[p]..self.offsets[p + 1]]
    }

    fn pixel_flat(&self, p: usize) -> &[Fragment] {
        &self.fragments[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Number of covered pixels.
    pub fn foreground_count(&self) -> usize {
        self.offsets.windows(2).filter(|w| w[1] > w[0]).count()
    }

    pub fn silhouette(&self, gamma: f64) -> SilhouetteMap {
        let values = (0..self.width * self.height)
            .map(|p| {
                let mut transmit = 1.0;
                for f in self.pixel_flat(p) {
                    transmit *= 1.0 - opacity(f.d2n, gamma);
                }
                1.0 - transmit
            })
            .collect();
        SilhouetteMap {
            width: self.width,
            height: self.height,
            values,
        }
    }

    pub fn depth(&self) -> DepthMap {
        let values = (0..self.width * self.height)
            .map(|p| self.pixel_flat(p).first().map_or(0.0, |f| f.z))
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

fn opacity(d2n: f64, gamma: f64) -> f64 {
    let base = (1.0 - d2n).max(0.0);
    if gamma == 1.0 {
        base
    } else {
        libm::pow(base, gamma)
    }
}

/// Rasterizes already projected points given as `(x, y, z)` in pixels/depth.
pub fn rasterize_projected(projected: &[[f64; 3]], width: usize, height: usize, radius_px: f64, k_blend: usize) -> Raster {
    let r2 = radius_px * radius_px;
    let mut hits: Vec<(usize, Fragment)> = Vec::new();
    for (id, &[x, y, z]) in projected.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let u0 = libm::ceil(x - radius_px).max(0.0);
        let u1 = libm::floor(x + radius_px).min(width as f64 - 1.0);
        let v0 = libm::ceil(y - radius_px).max(0.0);
        let v1 = libm::floor(y + radius_px).min(height as f64 - 1.0);
        if u0 > u1 || v0 > v1 {
            continue;
        }
        for v in v0 as usize..=v1 as usize {
            let dy = v as f64 - y;
            for u in u0 as usize..=u1 as usize {
                let dx = u as f64 - x;
                let d2 = dx * dx + dy * dy;
                if d2 < r2 {
                    hits.push((
                        v * width + u,
                        Fragment {
                            point: id,
                            z,
                            d2n: d2 / r2,
                        },
                    ));
                }
            }
        }
    }
    hits.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.z.total_cmp(&b.1.z))
            .then(a.1.point.cmp(&b.1.point))
    });
    let mut offsets = vec![0usize; width * height + 1];
    let mut fragments = Vec::with_capacity(hits.len());
    let mut i = 0;
    for p in 0..width * height {
        offsets[p] = fragments.len();
        let mut kept = 0;
        while i < hits.len() && hits[i].0 == p {
            if kept < k_blend {
                fragments.push(hits[i].1);
                kept += 1;
            }
            i += 1;
        }
    }
    offsets[width * height] = fragments.len();
    Raster {
        width,
        height,
        radius_px,
        offsets,
        fragments,
    }
}

pub fn rasterize(points: &[Point3], camera: &Camera, splat: &SplatConfig) -> Result<Raster> {
    splat.validate()?;
    let projected = camera.project_all(points)?;
    Ok(rasterize_projected(
        &projected,
        camera.width,
        camera.height,
        splat.radius_px(camera.width, camera.height),
        splat.k_blend,
    ))
}

pub fn render_silhouette(points: &[Point3], camera: &Camera, splat: &SplatConfig) -> Result<SilhouetteMap> {
    Ok(rasterize(points, camera, splat)?.silhouette(splat.gamma))
}

pub fn render_depth(points: &[Point3], camera: &Camera, splat: &SplatConfig) -> Result<DepthMap> {
    Ok(rasterize(points, camera, splat)?.depth())
}

/// Radius from the projected density `M / A`: `r = eta * A / M`.
pub fn dare_radius(m_points: usize, foreground: usize, eta: f64) -> Result<f64> {
    if foreground == 0 || m_points == 0 {
        return Err(Error::InvalidParameter("density radius needs points and a non-empty foreground".into()));
    }
    let r = eta * foreground as f64 / m_points as f64;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("density radius must be positive, got {r}")));
    }
    Ok(r)
}

/// `eta` such that a view with the mean foreground count reproduces `r0`.
pub fn estimate_eta(foreground_counts: &[usize], r0: f64, m_points: usize) -> Result<f64> {
    if foreground_counts.is_empty() {
        return Err(Error::EmptyBank);
    }
    let a_avg = foreground_counts.iter().sum::<usize>() as f64 / foreground_counts.len() as f64;
    if a_avg <= 0.0 {
        return Err(Error::InvalidParameter("all maps are empty".into()));
    }
    Ok(r0 * m_points as f64 / a_avg)
}

/// Radius chosen by a first pass at `splat.radius`; falls back to that radius
/// when the first pass covers nothing.
pub fn dare_radius_for_projected(projected: &[[f64; 3]], width: usize, height: usize, splat: &SplatConfig, eta: f64) -> Result<f64> {
    splat.validate()?;
    let first = rasterize_projected(projected, width, height, splat.radius_px(width, height), splat.k_blend);
    let a = first.foreground_count();
    if a == 0 {
        return Ok(splat.radius);
    }
    dare_radius(projected.len(), a, eta)
}

/// Two-pass render: measure coverage at the initial radius, then re-render at
/// the density-adjusted radius. Returns the map and the radius used.
pub fn render_depth_dare(points: &[Point3], camera: &Camera, splat: &SplatConfig, eta: f64) -> Result<(DepthMap, f64)> {
    splat.validate()?;
    let projected = camera.project_all(points)?;
    let r = dare_radius_for_projected(&projected, camera.width, camera.height, splat, eta)?;
    let adjusted = splat.with_radius(r);
    let raster = rasterize_projected(
        &projected,
        camera.width,
        camera.height,
        adjusted.radius_px(camera.width, camera.height),
        adjusted.k_blend,
    );
    Ok((raster.depth(), r))
}

/// Resamples a cloud `factor`-fold for hole references: every point keeps
/// its position and spawns `factor - 1` samples spread uniformly over a disc
/// in its estimated tangent plane. The disc radius is the mean distance to
/// the `k` nearest neighbors.
pub fn densify<R: rand::Rng>(points: &[Point3], factor: usize, k: usize, rng: &mut R) -> Result<Vec<Point3>> {
    use crate::cloud::{add, cross, normalized, scale, PointCloud};
    use crate::encodings::{estimate_normals, Orientation};
    use crate::knn::KnnIndex;
    if factor == 0 {
        return Err(Error::InvalidParameter("densify factor must be at least 1".into()));
    }
    let cloud = PointCloud::new(points.to_vec())?;
    let normals = estimate_normals(&cloud, k, Orientation::Centroid)?;
    let index = KnnIndex::build(points)?;
    let mut out = Vec::with_capacity(points.len() * factor);
    for (i, &p) in points.iter().enumerate() {
        let nb = index.knn(p, k, Some(i))?;
        let spacing = nb.iter().map(|n| n.distance).sum::<f64>() / nb.len() as f64;
        let n = normals.normals[i];
        let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let t1 = normalized(cross(n, helper)).unwrap_or([1.0, 0.0, 0.0]);
        let t2 = cross(n, t1);
        out.push(p);
        for _ in 1..factor {
            let rad = spacing * libm::sqrt(rng.random::<f64>());
            let ang = 2.0 * core::f64::consts::PI * rng.random::<f64>();
            let off = add(scale(t1, rad * libm::cos(ang)), scale(t2, rad * libm::sin(ang)));
            out.push(add(p, off));
        }
    }
    Ok(out)
}

/// World points for every foreground pixel, in row-major pixel order.
pub fn backproject(depth: &DepthMap, camera: &Camera) -> Vec<Point3> {
    let mut out = Vec::with_capacity(depth.foreground_count());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.get(u, v);
            if z > 0.0 {
                out.push(camera.unproject(u as f64, v as f64, z));
            }
        }
    }
    out
}

pub fn binarize(depth: &DepthMap) -> SilhouetteMap {
    depth.binarize()
}

struct SilhouetteOp {
    offsets: Vec<usize>,
    fragments: Vec<Fragment>,
    us: Vec<f64>,
    vs: Vec<f64>,
    r2: f64,
    gamma: f64,
}

impl<T: Real> CustomOp<T> for SilhouetteOp {
    fn name(&self) -> &'static str {
        "silhouette"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let n = inputs[0].len();
        let xs = inputs[0].data();
        let ys = inputs[1].data();
        let mut gx = vec![T::zero(); n];
        let mut gy = vec![T::zero(); n];
        let mut alphas = [0.0f64; 64];
        for p in 0..grad.len() {
            let frags = &self.fragments[self.offsets[p]..self.offsets[p + 1]];
            let g = grad[p].as_f64();
            if frags.is_empty() || g == 0.0 {
                continue;
            }
            let mut alpha_buf = Vec::new();
            let alphas: &mut [f64] = if frags.len() <= 64 {
                &mut alphas[..frags.len()]
            } else {
                alpha_buf.resize(frags.len(), 0.0);
                &mut alpha_buf
            };
            for (a, f) in alphas.iter_mut().zip(frags) {
                *a = opacity(f.d2n, self.gamma);
            }
            for (k, f) in frags.iter().enumerate() {
                // product of the other fragments' transmittance
                let mut others = 1.0;
                for (j, a) in alphas.iter().enumerate() {
                    if j != k {
                        others *= 1.0 - a;
                    }
                }
                let dalpha_dd2n = if self.gamma == 1.0 {
                    -1.0
                } else {
                    -self.gamma * libm::pow((1.0 - f.d2n).max(0.0), self.gamma - 1.0)
                };
                let x = xs[f.point].as_f64();
                let y = ys[f.point].as_f64();
                let common = g * others * dalpha_dd2n * 2.0 / self.r2;
                gx[f.point] += T::from_f64(common * (x - self.us[p]));
                gy[f.point] += T::from_f64(common * (y - self.vs[p]));
            }
        }
        vec![Some(gx), Some(gy)]
    }
}

/// Differentiable renders of a cloud held on a tape.
#[derive(Debug, Clone)]
pub struct RenderedVars {
    /// `[H, W]` silhouette.
    pub silhouette: Var,
    /// `[H, W]` depth, 0 on background.
    pub depth: Var,
    pub radius: f64,
    pub foreground: usize,
}

/// How the splat radius is chosen for a differentiable render.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusMode {
    Fixed,
    /// Density-adjusted from a first pass at the configured radius.
    Dare { eta: f64 },
}

/// Renders `points: [N, 3]` with gradients flowing to positions through the
/// silhouette opacities and the winning depth per pixel.
pub fn render_vars<T: Real>(
    tape: &mut Tape<T>,
    points: Var,
    camera: &Camera,
    splat: &SplatConfig,
    mode: RadiusMode,
) -> Result<RenderedVars> {
    splat.validate()?;
    let proj = camera.project_vars(tape, points)?;
    let (w, h) = (camera.width, camera.height);
    let projected: Vec<[f64; 3]> = {
        let x = tape.value(proj.x).data();
        let y = tape.value(proj.y).data();
        let z = tape.value(proj.z).data();
        (0..x.len())
            .map(|i| [x[i].as_f64(), y[i].as_f64(), z[i].as_f64()])
            .collect()
    };
    let n = projected.len();
    let radius = match mode {
        RadiusMode::Fixed => splat.radius,
        RadiusMode::Dare { eta } => dare_radius_for_projected(&projected, w, h, splat, eta)?,
    };
    let r_px = splat.with_radius(radius).radius_px(w, h);
    let raster = rasterize_projected(&projected, w, h, r_px, splat.k_blend);
    let foreground = raster.foreground_count();

    let sil = raster.silhouette(splat.gamma);
    let sil_value = Tensor::from_f64(&[h, w], &sil.values)?;
    let mut winners = Vec::with_capacity(w * h);
    for p in 0..w * h {
        winners.push(raster.pixel_flat(p).first().map_or(n, |f| f.point));
    }
    let us = (0..w * h).map(|p| (p % w) as f64).collect();
    let vs = (0..w * h).map(|p| (p / w) as f64).collect();
    let op = SilhouetteOp {
        offsets: raster.offsets,
        fragments: raster.fragments,
        us,
        vs,
        r2: r_px * r_px,
        gamma: splat.gamma,
    };
    let silhouette = tape.custom(Box::new(op), &[proj.x, proj.y], sil_value);
    let zero = tape.constant(Tensor::zeros(&[1]));
    let zs = tape.concat(&[proj.z, zero], 0)?;
    let depth = tape.take(zs, &winners, &[h, w])?;
    Ok(RenderedVars {
        silhouette,
        depth,
        radius,
        foreground,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_camera(size: usize) -> Camera {
        Camera::look_at_default([0.0, 0.0, 2.0], [0.0; 3], [0.0, 1.0, 0.0], size, size).unwrap()
    }

    #[test]
    fn empty_pixel_has_no_fragments() {
        let r = rasterize_projected(&[[10.0, 10.0, 1.0]], 32, 32, 1.5, 8);
        assert!(r.pixel(0, 0).is_empty());
        assert_eq!(r.silhouette(1.0).values[0], 0.0);
        assert_eq!(r.depth().values[0], 0.0);
    }

    #[test]
    fn disc_membership_matches_direct_test() {
        let (x, y, rad) = (10.3, 12.6, 3.0);
        let r = rasterize_projected(&[[x, y, 1.0]], 32, 32, rad, 8);
        for v in 0..32 {
            for u in 0..32 {
                let inside = (u as f64 - x).powi(2) + (v as f64 - y).powi(2) < rad * rad;
                assert_eq!(!r.pixel(u, v).is_empty(), inside, "pixel {u},{v}");
            }
        }
    }

    #[test]
    fn fragments_sorted_by_depth() {
        let r = rasterize_projected(&[[5.0, 5.0, 2.0], [5.0, 5.0, 1.0], [5.2, 5.0, 3.0]], 16, 16, 1.0, 2);
        let ids: Vec<usize> = r.pixel(5, 5).iter().map(|f| f.point).collect();
        assert_eq!(ids, [1, 0]);
        assert_eq!(r.depth().values[5 * 16 + 5], 1.0);
    }

    #[test]
    fn centered_point_is_opaque() {
        let r = rasterize_projected(&[[4.0, 4.0, 1.0]], 8, 8, 1.2, 8);
        let s = r.silhouette(1.0);
        assert_eq!(s.values[4 * 8 + 4], 1.0);
        assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn dare_scaling() {
        assert!((dare_radius(1024, 2048, 0.015).unwrap() - 0.03).abs() < 1e-15);
        assert!((dare_radius(1024, 4096, 0.015).unwrap() - 0.06).abs() < 1e-15);
        assert!(dare_radius(1024, 2048, 0.0).is_err());
        assert!(dare_radius(1024, 0, 0.1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let m = rng.random_range(1..5000usize);
            let a = rng.random_range(1..5000usize);
            let eta = rng.random_range(0.001..0.1);
            assert_eq!(dare_radius(m, a, eta).unwrap(), eta * a as f64 / m as f64);
        }
    }

    #[test]
    fn eta_estimation() {
        let eta = estimate_eta(&[500, 500, 500], 0.03, 1024).unwrap();
        assert!((dare_radius(1024, 500, eta).unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(estimate_eta(&[1024], 0.03, 1024).unwrap(), 0.03);
        assert!((estimate_eta(&[100, 300], 0.03, 1024).unwrap() - 0.03 * 1024.0 / 200.0).abs() < 1e-15);
        assert!(estimate_eta(&[], 0.03, 10).is_err());
    }

    fn plane_grid(n: usize, half: f64) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let s = -half + 2.0 * half * i as f64 / (n - 1) as f64;
                let t = -half + 2.0 * half * j as f64 / (n - 1) as f64;
                pts.push([s, t, 0.0]);
            }
        }
        pts
    }

    #[test]
    fn dare_matches_fixed_at_average_density() {
        let cam = front_camera(64);
        let pts = plane_grid(20, 0.5);
        let splat = SplatConfig::default();
        let a = rasterize(&pts, &cam, &splat).unwrap().foreground_count();
        let eta = estimate_eta(&[a], splat.radius, pts.len()).unwrap();
        let (dare, r) = render_depth_dare(&pts, &cam, &splat, eta).unwrap();
        assert!((r - splat.radius).abs() < 1e-15);
        assert_eq!(dare, render_depth(&pts, &cam, &splat.with_radius(r)).unwrap());
    }

    #[test]
    fn sparse_view_gets_larger_radius() {
        let cam = front_camera(64);
        let splat = SplatConfig::default();
        let dense = plane_grid(40, 0.5);
        let a = rasterize(&dense, &cam, &splat).unwrap().foreground_count();
        let eta = estimate_eta(&[a], splat.radius, dense.len()).unwrap();
        let sparse = plane_grid(12, 0.5);
        let (_, r) = render_depth_dare(&sparse, &cam, &splat, eta).unwrap();
        assert!(r > splat.radius);
    }

    #[test]
    fn densified_plane_stays_on_plane() {
        let pts = plane_grid(10, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = densify(&pts, 16, 6, &mut rng).unwrap();
        assert_eq!(dense.len(), 16 * pts.len());
        let spacing = 1.0 / 9.0;
        for q in &dense {
            assert!(q[2].abs() < 1e-9);
            assert!(q[0].abs() <= 0.5 + 2.0 * spacing && q[1].abs() <= 0.5 + 2.0 * spacing);
        }
        assert_eq!(dense[0], pts[0]);
    }

    #[test]
    fn backprojection_round_trip() {
        let cam = front_camera(32);
        let d = DepthMap::new(32, 32, {
            let mut v = vec![0.0; 1024];
            v[16 * 32 + 16] = 1.5;
            v
        })
        .unwrap();
        let pts = backproject(&d, &cam);
        assert_eq!(pts.len(), 1);
        assert!((pts[0][0]).abs() < 1e-12 && (pts[0][1]).abs() < 1e-12);
        assert!((pts[0][2] - 0.5).abs() < 1e-12);
        assert!(backproject(&DepthMap::background(8, 8), &cam).is_empty());
    }

    #[test]
    fn adding_a_point_never_deepens() {
        let cam = front_camera(32);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pts: Vec<Point3> = (0..60)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect();
        let splat = SplatConfig::default().with_radius(0.1);
        let before = render_depth(&pts, &cam, &splat).unwrap();
        pts.push([0.0, 0.0, 0.7]);
        let after = render_depth(&pts, &cam, &splat).unwrap();
        for (b, a) in before.values.iter().zip(&after.values) {
            if *b > 0.0 {
                assert!(*a <= *b);
            }
        }
    }

    fn interior_points() -> Tensor<f64> {
        // splat centers away from every pixel's coverage boundary
        Tensor::from_f64(&[3, 3], &[0.013, 0.021, 0.05, -0.041, 0.032, -0.02, 0.07, -0.053, 0.1]).unwrap()
    }

    #[test]
    fn silhouette_gradient_matches_finite_differences() {
        let cam = front_camera(24);
        let splat = SplatConfig {
            radius: 0.25,
            k_blend: 8,
            gamma: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights: Vec<f64> = (0..24 * 24).map(|_| rng.random_range(0.5..1.5)).collect();
        for gamma in [1.0, 2.0] {
            let splat = SplatConfig { gamma, ..splat };
            let err = grad_check(
                |tape, x| {
                    let r = render_vars(tape, x, &cam, &splat, RadiusMode::Fixed)?;
                    let w = tape.constant(Tensor::from_f64(&[24, 24], &weights)?);
                    let s = tape.mul(r.silhouette, w)?;
                    Ok(tape.mean_all(s))
                },
                &interior_points(),
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-3, "gamma {gamma}: {err}");
        }
    }

    #[test]
    fn depth_gradient_goes_to_winner() {
        let cam = front_camera(16);
        let splat = SplatConfig::default().with_radius(0.2);
        let mut tape = Tape::<f64>::new();
        let pts = tape.leaf(Tensor::from_f64(&[2, 3], &[0.0, 0.0, 0.5, 0.0, 0.0, -0.5]).unwrap(), true);
        let r = render_vars(&mut tape, pts, &cam, &splat, RadiusMode::Fixed).unwrap();
        let center = tape.take(r.depth, &[8 * 16 + 8], &[1]).unwrap();
        let loss = tape.sum_all(center);
        let g = tape.backward(loss).unwrap();
        let g = g.get(pts).unwrap();
        // camera looks down -z, so depth = 2 - world z
        assert!((g[2] + 1.0).abs() < 1e-12);
        assert_eq!(g[5], 0.0);
    }

    #[test]
    fn sphere_silhouette_matches_analytic_disc() {
        let cam = front_camera(64);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Point3> = (0..16384)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let t: f64 = rng.random_range(0.0..core::f64::consts::TAU);
                let s = libm::sqrt(1.0 - z * z);
                [s * libm::cos(t), s * libm::sin(t), z]
            })
            .collect();
        let splat = SplatConfig::default();
        // eta from views of comparable density
        let a = rasterize(&pts, &cam, &splat).unwrap().foreground_count();
        let eta = estimate_eta(&[a], splat.radius, pts.len()).unwrap();
        let (depth, _) = render_depth_dare(&pts, &cam, &splat, eta).unwrap();
        let sil = depth.binarize();
        // tangent cone half-angle of a unit sphere seen from distance 2
        let radius_px = cam.focal * libm::tan(libm::asin(0.5));
        let (mut inter, mut union) = (0, 0);
        for v in 0..64 {
            for u in 0..64 {
                let inside = (u as f64 - 32.0).powi(2) + (v as f64 - 32.0).powi(2) < radius_px * radius_px;
                let got = sil.values[v * 64 + u] > 0.5;
                inter += (inside && got) as usize;
                union += (inside || got) as usize;
            }
        }
        let iou = inter as f64 / union as f64;
        assert!(iou > 0.9, "{iou}");
    }
}
