//! Parametric categories with repeated parts, surface sampling, and
//! simulated single-view scans.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::seq::index;
use rand::Rng;

use crate::camera::{sample_viewpoint, Camera, ViewSampling};
use crate::cloud::{Point3, PointCloud, Similarity};
use crate::image::{DepthMap, SilhouetteMap};
use crate::render::{backproject, dare_radius, rasterize, SplatConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Table,
    Lamp,
    Hull,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Table, Category::Lamp, Category::Hull];

    pub fn name(self) -> &'static str {
        match self {
            Category::Table => "table",
            Category::Lamp => "lamp",
            Category::Hull => "hull",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown category {s:?} (expected table, lamp or hull)")))
    }
}

/// Shape parameters in model units, before normalization.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ShapeParams {
    Table {
        top_x: f64,
        top_y: f64,
        top_thickness: f64,
        leg_height: f64,
        leg_radius: f64,
        leg_inset: f64,
    },
    Lamp {
        pole_height: f64,
        pole_radius: f64,
        shade_top: f64,
        shade_bottom: f64,
        shade_height: f64,
    },
    Hull {
        length: f64,
        beam: f64,
        depth: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeSpec {
    pub category: Category,
    pub params: ShapeParams,
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::InvalidParameter(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl ShapeSpec {
    pub fn random<R: Rng>(category: Category, rng: &mut R) -> Self {
        let params = match category {
            Category::Table => ShapeParams::Table {
                top_x: rng.random_range(0.8..1.2),
                top_y: rng.random_range(0.5..0.9),
                top_thickness: rng.random_range(0.04..0.08),
                leg_height: rng.random_range(0.5..0.8),
                leg_radius: rng.random_range(0.03..0.06),
                leg_inset: rng.random_range(0.05..0.1),
            },
            Category::Lamp => ShapeParams::Lamp {
                pole_height: rng.random_range(0.8..1.2),
                pole_radius: rng.random_range(0.02..0.04),
                shade_top: rng.random_range(0.1..0.2),
                shade_bottom: rng.random_range(0.25..0.4),
                shade_height: rng.random_range(0.2..0.35),
            },
            Category::Hull => ShapeParams::Hull {
                length: rng.random_range(0.8..1.2),
                beam: rng.random_range(0.25..0.4),
                depth: rng.random_range(0.2..0.35),
            },
        };
        Self { category, params }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.category, self.params) {
            (
                Category::Table,
                ShapeParams::Table {
                    top_x,
                    top_y,
                    top_thickness,
                    leg_height,
                    leg_radius,
                    leg_inset,
                },
            ) => {
                check_range("top_x", top_x, 0.8, 1.2)?;
                check_range("top_y", top_y, 0.5, 0.9)?;
                check_range("top_thickness", top_thickness, 0.04, 0.08)?;
                check_range("leg_height", leg_height, 0.5, 0.8)?;
                check_range("leg_radius", leg_radius, 0.03, 0.06)?;
                check_range("leg_inset", leg_inset, 0.05, 0.1)
            }
            (
                Category::Lamp,
                ShapeParams::Lamp {
                    pole_height,
                    pole_radius,
                    shade_top,
                    shade_bottom,
                    shade_height,
                },
            ) => {
                check_range("pole_height", pole_height, 0.8, 1.2)?;
                check_range("pole_radius", pole_radius, 0.02, 0.04)?;
                check_range("shade_top", shade_top, 0.1, 0.2)?;
                check_range("shade_bottom", shade_bottom, 0.25, 0.4)?;
                check_range("shade_height", shade_height, 0.2, 0.35)
            }
            (Category::Hull, ShapeParams::Hull { length, beam, depth }) => {
                check_range("length", length, 0.8, 1.2)?;
                check_range("beam", beam, 0.25, 0.4)?;
                check_range("depth", depth, 0.2, 0.35)
            }
            _ => Err(Error::InvalidParameter("shape parameters do not match the category".into())),
        }
    }

    fn parts(&self) -> Vec<Part> {
        match self.params {
            ShapeParams::Table {
                top_x,
                top_y,
                top_thickness,
                leg_height,
                leg_radius,
                leg_inset,
            } => {
                let mut parts = Vec::new();
                parts.push(Part::Box {
                    min: [-top_x / 2.0, -top_y / 2.0, leg_height],
                    max: [top_x / 2.0, top_y / 2.0, leg_height + top_thickness],
                });
                let lx = top_x / 2.0 - leg_inset;
                let ly = top_y / 2.0 - leg_inset;
                for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                    parts.push(Part::Frustum {
                        base: [sx * lx, sy * ly, 0.0],
                        height: leg_height,
                        bottom: leg_radius,
                        top: leg_radius,
                        caps: true,
                    });
                }
                parts
            }
            ShapeParams::Lamp {
                pole_height,
                pole_radius,
                shade_top,
                shade_bottom,
                shade_height,
            } => alloc::vec![
                Part::Frustum {
                    base: [0.0; 3],
                    height: pole_height,
                    bottom: pole_radius,
                    top: pole_radius,
                    caps: true,
                },
                Part::Frustum {
                    base: [0.0, 0.0, pole_height - 0.6 * shade_height],
                    height: shade_height,
                    bottom: shade_bottom,
                    top: shade_top,
                    caps: false,
                },
            ],
            ShapeParams::Hull { length, beam, depth } => alloc::vec![
                Part::HalfEllipsoid {
                    axes: [length / 2.0, beam / 2.0, depth],
                },
                Part::Ellipse {
                    axes: [length / 2.0, beam / 2.0],
                },
            ],
        }
    }

    /// Area-weighted uniform surface samples with the index of the part each
    /// point came from.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Result<(Vec<Point3>, Vec<usize>)> {
        self.validate()?;
        let parts = self.parts();
        let areas: Vec<f64> = parts.iter().map(Part::area).collect();
        let total: f64 = areas.iter().sum();
        let mut pts = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mut t = rng.random_range(0.0..total);
            let mut k = 0;
            while k + 1 < parts.len() && t >= areas[k] {
                t -= areas[k];
                k += 1;
            }
            pts.push(parts[k].sample(rng));
            labels.push(k);
        }
        Ok((pts, labels))
    }
}

#[derive(Debug, Clone, Copy)]
enum Part {
    Box {
        min: Point3,
        max: Point3,
    },
    /// Lateral surface of a truncated cone along +z, optionally closed.
    Frustum {
        base: Point3,
        height: f64,
        bottom: f64,
        top: f64,
        caps: bool,
    },
    /// Lower half of an axis-aligned ellipsoid centered at the origin.
    HalfEllipsoid {
        axes: [f64; 3],
    },
    /// Filled ellipse in the z = 0 plane.
    Ellipse {
        axes: [f64; 2],
    },
}

fn half_ellipsoid_area(a: f64, b: f64, c: f64) -> f64 {
    // Thomsen's approximation, within about 1% for all axes
    let p = 1.6075;
    let (ap, bp, cp) = (libm::pow(a, p), libm::pow(b, p), libm::pow(c, p));
    2.0 * PI * libm::pow((ap * bp + ap * cp + bp * cp) / 3.0, 1.0 / p)
}

impl Part {
    fn area(&self) -> f64 {
        match *self {
            Part::Box { min, max } => {
                let d = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
                2.0 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2])
            }
            Part::Frustum {
                height,
                bottom,
                top,
                caps,
                ..
            } => {
                let slant = libm::sqrt(height * height + (bottom - top) * (bottom - top));
                let lateral = PI * (bottom + top) * slant;
                if caps {
                    lateral + PI * (bottom * bottom + top * top)
                } else {
                    lateral
                }
            }
            Part::HalfEllipsoid { axes } => half_ellipsoid_area(axes[0], axes[1], axes[2]),
            Part::Ellipse { axes } => PI * axes[0] * axes[1],
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point3 {
        match *self {
            Part::Box { min, max } => {
                let d = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
                let faces = [d[1] * d[2], d[1] * d[2], d[0] * d[2], d[0] * d[2], d[0] * d[1], d[0] * d[1]];
                let total: f64 = faces.iter().sum();
                let mut t = rng.random_range(0.0..total);
                let mut f = 0;
                while f < 5 && t >= faces[f] {
                    t -= faces[f];
                    f += 1;
                }
                let mut p = [
                    rng.random_range(min[0]..max[0]),
                    rng.random_range(min[1]..max[1]),
                    rng.random_range(min[2]..max[2]),
                ];
                let axis = f / 2;
                p[axis] = if f % 2 == 0 { min[axis] } else { max[axis] };
                p
            }
            Part::Frustum {
                base,
                height,
                bottom,
                top,
                caps,
            } => {
                let slant = libm::sqrt(height * height + (bottom - top) * (bottom - top));
                let lateral = PI * (bottom + top) * slant;
                let cap_b = if caps { PI * bottom * bottom } else { 0.0 };
                let cap_t = if caps { PI * top * top } else { 0.0 };
                let u = rng.random_range(0.0..lateral + cap_b + cap_t);
                let theta = rng.random_range(0.0..TAU);
                let (s, c) = (libm::sin(theta), libm::cos(theta));
                if u < lateral {
                    // radius varies linearly along the axis; density follows it
                    let w = rng.random_range(0.0..1.0f64);
                    let t = if (bottom - top).abs() < 1e-12 {
                        w
                    } else {
                        let (r0, r1) = (bottom, top);
                        (libm::sqrt(r0 * r0 + w * (r1 * r1 - r0 * r0)) - r0) / (r1 - r0)
                    };
                    let r = bottom + (top - bottom) * t;
                    [base[0] + r * c, base[1] + r * s, base[2] + height * t]
                } else {
                    let top_cap = u >= lateral + cap_b;
                    let rmax = if top_cap { top } else { bottom };
                    let r = rmax * libm::sqrt(rng.random_range(0.0..1.0f64));
                    let z = if top_cap { base[2] + height } else { base[2] };
                    [base[0] + r * c, base[1] + r * s, z]
                }
            }
            Part::HalfEllipsoid { axes: [a, b, c] } => {
                // sphere directions reweighted by the local area stretch
                let wmax = (b * c).max(a * c).max(a * b);
                loop {
                    let z: f64 = rng.random_range(-1.0..0.0);
                    let t = rng.random_range(0.0..TAU);
                    let r = libm::sqrt(1.0 - z * z);
                    let n = [r * libm::cos(t), r * libm::sin(t), z];
                    let w = libm::sqrt(
                        sq(b * c * n[0]) + sq(a * c * n[1]) + sq(a * b * n[2]),
                    );
                    if rng.random_range(0.0..wmax) < w {
                        return [a * n[0], b * n[1], c * n[2]];
                    }
                }
            }
            Part::Ellipse { axes: [a, b] } => {
                let r = libm::sqrt(rng.random_range(0.0..1.0f64));
                let t = rng.random_range(0.0..TAU);
                [a * r * libm::cos(t), b * r * libm::sin(t), 0.0]
            }
        }
    }
}

/// Ground-truth cloud of `m_gt` points normalized to the unit sphere, with
/// the normalizing transform.
pub fn generate_gt<R: Rng>(spec: &ShapeSpec, m_gt: usize, rng: &mut R) -> Result<(PointCloud, Similarity)> {
    if m_gt == 0 {
        return Err(Error::InvalidParameter("m_gt must be at least 1".into()));
    }
    let (pts, _) = spec.sample_surface(m_gt, rng)?;
    PointCloud::new(pts)?.normalize_unit_sphere()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScanConfig {
    pub width: usize,
    pub height: usize,
    pub view: ViewSampling,
    /// Initial splat radius of the dense render.
    pub splat: SplatConfig,
    /// Fraction of the image a typical object covers; sets the density
    /// constant of the scan's radius adjustment.
    pub nominal_coverage: f64,
    pub n_in: usize,
    pub max_attempts: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            view: ViewSampling::default(),
            splat: SplatConfig::default(),
            nominal_coverage: 0.25,
            n_in: 256,
            max_attempts: 10,
        }
    }
}

/// A simulated single-view observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub camera: Camera,
    pub depth: DepthMap,
    pub mask: SilhouetteMap,
    pub partial: PointCloud,
    /// Indices into the back-projection that formed `partial`.
    pub picked: Vec<usize>,
    pub with_replacement: bool,
    pub radius: f64,
}

/// Renders a dense cloud from a random viewpoint, back-projects the depth
/// map and subsamples it to `n_in` points.
pub fn synthesize_scan<R: Rng>(dense: &[Point3], cfg: &ScanConfig, rng: &mut R) -> Result<Scan> {
    cfg.splat.validate()?;
    if cfg.n_in == 0 || cfg.max_attempts == 0 || !(cfg.nominal_coverage > 0.0) {
        return Err(Error::InvalidParameter("invalid scan configuration".into()));
    }
    let nominal = cfg.nominal_coverage * (cfg.width * cfg.height) as f64;
    let eta = cfg.splat.radius * dense.len() as f64 / nominal;
    let mut fallback = None;
    for _ in 0..cfg.max_attempts {
        let camera = sample_viewpoint(rng, &cfg.view, cfg.width, cfg.height)?;
        let first = match rasterize(dense, &camera, &cfg.splat) {
            Ok(r) => r,
            Err(Error::BehindCamera { .. }) => continue,
            Err(e) => return Err(e),
        };
        let a = first.foreground_count();
        if a == 0 {
            continue;
        }
        let radius = dare_radius(dense.len(), a, eta)?;
        let depth = rasterize(dense, &camera, &cfg.splat.with_radius(radius))?.depth();
        let fg = depth.foreground_count();
        if fg >= cfg.n_in {
            return finish_scan(camera, depth, radius, cfg.n_in, rng);
        }
        if fg > 0 && fallback.is_none() {
            fallback = Some((camera, depth, radius));
        }
    }
    match fallback {
        Some((camera, depth, radius)) => finish_scan(camera, depth, radius, cfg.n_in, rng),
        None => Err(Error::EmptyForeground(cfg.max_attempts)),
    }
}

fn finish_scan<R: Rng>(camera: Camera, depth: DepthMap, radius: f64, n_in: usize, rng: &mut R) -> Result<Scan> {
    let all = backproject(&depth, &camera);
    let with_replacement = all.len() < n_in;
    let picked: Vec<usize> = if with_replacement {
        (0..n_in).map(|_| rng.random_range(0..all.len())).collect()
    } else {
        let mut p = index::sample(rng, all.len(), n_in).into_vec();
        p.sort_unstable();
        p
    };
    let partial = PointCloud::new(picked.iter().map(|&i| all[i]).collect())?;
    let mask = depth.binarize();
    Ok(Scan {
        camera,
        depth,
        mask,
        partial,
        picked,
        with_replacement,
        radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

/// One generated object with its scan.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub id: String,
    pub split: Split,
    pub spec: ShapeSpec,
    pub gt: PointCloud,
    pub scan: Scan,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub m_gt: usize,
    /// Dense render cloud size as a multiple of `m_gt`.
    pub dense_factor: usize,
    pub scan: ScanConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train: 64,
            val: 8,
            test: 8,
            m_gt: 2048,
            dense_factor: 4,
            scan: ScanConfig::default(),
            seed: 0,
        }
    }
}

/// Independent generator per (seed, category, sample index).
pub fn sample_rng(seed: u64, category: Category, index: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((category as u64) << 32) | index as u64);
    rng
}

/// Generates one sample: shape, GT, a fresh dense cloud mapped with the GT
/// normalization, and the scan.
pub fn generate_sample(category: Category, split: Split, index: usize, cfg: &DatasetConfig) -> Result<GeneratedSample> {
    let mut rng = sample_rng(cfg.seed, category, index);
    let spec = ShapeSpec::random(category, &mut rng);
    let (gt, sim) = generate_gt(&spec, cfg.m_gt, &mut rng)?;
    let (dense, _) = spec.sample_surface(cfg.m_gt * cfg.dense_factor.max(1), &mut rng)?;
    let dense: Vec<Point3> = dense.into_iter().map(|p| sim.apply(p)).collect();
    let scan = synthesize_scan(&dense, &cfg.scan, &mut rng)?;
    Ok(GeneratedSample {
        id: format!("{}_{index:04}", category.name()),
        split,
        spec,
        gt,
        scan,
    })
}

/// Every sample of a category, train first, then val, then test.
pub fn generate_category(category: Category, cfg: &DatasetConfig) -> Result<Vec<GeneratedSample>> {
    let mut out = Vec::with_capacity(cfg.train + cfg.val + cfg.test);
    let mut index = 0;
    for (split, count) in [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)] {
        for _ in 0..count {
            out.push(generate_sample(category, split, index, cfg)?);
            index += 1;
        }
    }
    Ok(out)
}


fn sq(x: f64) -> f64 {
    x * x
}
