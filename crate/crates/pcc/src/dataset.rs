//! On-disk dataset layout:
//!
//! ```text
//! <root>/<category>/{train,val,test}/<id>/{partial.ply,depth.pfm,mask.pgm,camera.json}
//! <root>/<category>/gt/<id>.ply      evaluation only
//! <root>/<category>/bank.json        real depth maps of the training split
//! <root>/<category>/manifest.json    sample ids per split and scan flags
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pcc_core::camera::Camera;
use pcc_core::cloud::PointCloud;
use pcc_core::image::{DepthMap, SilhouetteMap};
use pcc_core::man::ImageBank;
use pcc_core::render::estimate_eta;
use pcc_core::shapes::{generate_sample, sample_rng, synthesize_scan, Category, DatasetConfig, GeneratedSample, Split};

use crate::config::RunConfig;
use crate::error::{read_text, write_file, PccError, Result};
use crate::ply::{read_ply, write_ply};
use crate::pnm::{read_pfm, read_pgm, write_pfm, write_pgm};

/// `camera.json`: intrinsics, row-major rotation and translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub focal: f64,
    pub principal: [f64; 2],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let r = c.rotation;
        Self {
            focal: c.focal,
            principal: c.principal,
            rotation: [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]],
            translation: c.translation,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> pcc_core::Result<Camera> {
        let r = self.rotation;
        Camera::new(
            self.focal,
            self.principal,
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            self.translation,
            self.width,
            self.height,
        )
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PccError::format(path, e.to_string()))
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_json(path, &CameraFile::from(camera))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let f: CameraFile = read_json(path)?;
    f.to_camera().map_err(|e| PccError::format(path, e.to_string()))
}

/// `bank.json`: the category's real depth maps and its density constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub category: String,
    pub ids: Vec<String>,
    /// Paths relative to the category directory.
    pub maps: Vec<String>,
    /// Density constant η for `m_points`-point renders with base radius `r0`.
    pub eta: f64,
    pub r0: f64,
    pub m_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// The back-projection had fewer than `n_in` points, so the partial
    /// repeats some of them.
    pub with_replacement: bool,
    /// Splat radius of the scan render.
    pub scan_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryManifest {
    pub category: String,
    pub seed: u64,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl CategoryManifest {
    pub fn split(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn category_dir(root: &Path, category: &str) -> PathBuf {
    root.join(category)
}

pub fn sample_dir(root: &Path, category: &str, split: Split, id: &str) -> PathBuf {
    root.join(category).join(split.name()).join(id)
}

pub fn gt_path(root: &Path, category: &str, id: &str) -> PathBuf {
    root.join(category).join("gt").join(format!("{id}.ply"))
}

/// Training-visible files of one sample. Ground truth goes to the separate
/// `gt` tree.
pub fn write_sample(root: &Path, category: &str, s: &GeneratedSample) -> Result<()> {
    let dir = sample_dir(root, category, s.split, &s.id);
    write_ply(&dir.join("partial.ply"), &s.scan.partial)?;
    write_pfm(&dir.join("depth.pfm"), &s.scan.depth)?;
    write_pgm(&dir.join("mask.pgm"), &s.scan.mask)?;
    write_camera(&dir.join("camera.json"), &s.scan.camera)?;
    write_ply(&gt_path(root, category, &s.id), &s.gt)
}

/// A sample as read back from disk, without ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub id: String,
    pub partial: PointCloud,
    pub depth: DepthMap,
    pub mask: SilhouetteMap,
    pub camera: Camera,
}

pub fn read_sample(root: &Path, category: &str, split: Split, id: &str) -> Result<StoredSample> {
    let dir = sample_dir(root, category, split, id);
    Ok(StoredSample {
        id: id.to_string(),
        partial: read_ply(&dir.join("partial.ply"))?,
        depth: read_pfm(&dir.join("depth.pfm"))?,
        mask: read_pgm(&dir.join("mask.pgm"))?,
        camera: read_camera(&dir.join("camera.json"))?,
    })
}

pub fn read_manifest(root: &Path, category: &str) -> Result<CategoryManifest> {
    read_json(&category_dir(root, category).join("manifest.json"))
}

pub fn read_split(root: &Path, category: &str, split: Split) -> Result<Vec<StoredSample>> {
    read_manifest(root, category)?
        .split(split)
        .iter()
        .map(|e| read_sample(root, category, split, &e.id))
        .collect()
}

pub fn read_gt(root: &Path, category: &str, id: &str) -> Result<PointCloud> {
    read_ply(&gt_path(root, category, id))
}

pub fn read_bank_manifest(root: &Path, category: &str) -> Result<BankManifest> {
    read_json(&category_dir(root, category).join("bank.json"))
}

pub fn read_bank(root: &Path, category: &str) -> Result<ImageBank> {
    let m = read_bank_manifest(root, category)?;
    let dir = category_dir(root, category);
    if m.ids.len() != m.maps.len() {
        return Err(PccError::format(&dir.join("bank.json"), "ids and maps differ in length"));
    }
    let mut entries = Vec::with_capacity(m.ids.len());
    for (id, rel) in m.ids.iter().zip(&m.maps) {
        entries.push((id.clone(), read_pfm(&dir.join(rel))?));
    }
    Ok(ImageBank::new(&m.category, entries, m.eta)?)
}

/// Samples built from user-supplied clouds in `<dir>/<category>/*.ply`,
/// taken in file-name order and cycled when there are fewer files than
/// samples.
fn external_sample(files: &[PathBuf], category: Category, split: Split, index: usize, cfg: &DatasetConfig) -> Result<GeneratedSample> {
    let path = &files[index % files.len()];
    let cloud = read_ply(path)?.without_normals();
    let (gt, _) = cloud.normalize_unit_sphere()?;
    let mut rng = sample_rng(cfg.seed, category, index);
    let scan = synthesize_scan(gt.positions(), &cfg.scan, &mut rng)?;
    let spec = pcc_core::shapes::ShapeSpec::random(category, &mut sample_rng(cfg.seed, category, index));
    Ok(GeneratedSample {
        id: format!("{}_{index:04}", category.name()),
        split,
        spec,
        gt,
        scan,
    })
}

fn external_files(dir: &Path, category: Category) -> Result<Vec<PathBuf>> {
    let cat_dir = dir.join(category.name());
    let rd = std::fs::read_dir(&cat_dir).map_err(|e| PccError::io(&cat_dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ply"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PccError::format(&cat_dir, "no .ply files"));
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategorySummary {
    pub category: String,
    pub samples: usize,
    pub eta: f64,
    pub with_replacement: usize,
}

/// Generates and writes every configured category.
pub fn build_dataset(cfg: &RunConfig) -> Result<Vec<CategorySummary>> {
    let dcfg = cfg.dataset_config();
    let root = &cfg.data.root;
    let mut out = Vec::new();
    for category in cfg.categories()? {
        let name = category.name();
        let external = match &cfg.data.external_gt {
            Some(dir) => Some(external_files(dir, category)?),
            None => None,
        };
        let mut manifest = CategoryManifest {
            category: name.to_string(),
            seed: cfg.seed,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        let mut bank_ids = Vec::new();
        let mut bank_maps = Vec::new();
        let mut counts = Vec::new();
        let mut index = 0;
        for (split, n) in [(Split::Train, dcfg.train), (Split::Val, dcfg.val), (Split::Test, dcfg.test)] {
            for _ in 0..n {
                let s = match &external {
                    Some(files) => external_sample(files, category, split, index, &dcfg)?,
                    None => generate_sample(category, split, index, &dcfg)?,
                };
                index += 1;
                write_sample(root, name, &s)?;
                let entry = ManifestEntry {
                    id: s.id.clone(),
                    with_replacement: s.scan.with_replacement,
                    scan_radius: s.scan.radius,
                };
                match split {
                    Split::Train => {
                        counts.push(s.scan.depth.foreground_count());
                        bank_ids.push(s.id.clone());
                        bank_maps.push(format!("train/{}/depth.pfm", s.id));
                        manifest.train.push(entry);
                    }
                    Split::Val => manifest.val.push(entry),
                    Split::Test => manifest.test.push(entry),
                }
            }
        }
        let eta = if counts.is_empty() {
            0.0
        } else {
            estimate_eta(&counts, cfg.splat.radius, cfg.prn.m_out)?
        };
        let dir = category_dir(root, name);
        write_json(
            &dir.join("bank.json"),
            &BankManifest {
                category: name.to_string(),
                ids: bank_ids,
                maps: bank_maps,
                eta,
                r0: cfg.splat.radius,
                m_points: cfg.prn.m_out,
            },
        )?;
        write_json(&dir.join("manifest.json"), &manifest)?;
        out.push(CategorySummary {
            category: name.to_string(),
            samples: index,
            eta,
            with_replacement: [&manifest.train, &manifest.val, &manifest.test]
                .iter()
                .flat_map(|v| v.iter())
                .filter(|e| e.with_replacement)
                .count(),
        });
    }
    Ok(out)
}
