//! 8-bit grayscale PNG previews of depth and silhouette maps.

use std::path::Path;

use pcc_core::image::{DepthMap, SilhouetteMap};

use crate::error::{write_file, PccError, Result};

fn encode_gray(width: usize, height: usize, pixels: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| PccError::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(pixels).map_err(fail)?;
    writer.finish().map_err(fail)?;
    Ok(out)
}

/// Near surfaces bright, far surfaces dim, background black.
pub fn depth_pixels(depth: &DepthMap) -> Vec<u8> {
    let fg = depth.values.iter().copied().filter(|&z| z > 0.0);
    let (lo, hi) = fg.fold((f64::INFINITY, 0.0f64), |(lo, hi), z| (lo.min(z), hi.max(z)));
    let span = (hi - lo).max(1e-12);
    depth
        .values
        .iter()
        .map(|&z| if z > 0.0 { (255.0 - 191.0 * (z - lo) / span).round() as u8 } else { 0 })
        .collect()
}

pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let bytes = encode_gray(depth.width, depth.height, &depth_pixels(depth), path)?;
    write_file(path, &bytes)
}

pub fn write_silhouette_png(path: &Path, mask: &SilhouetteMap) -> Result<()> {
    let px: Vec<u8> = mask.values.iter().map(|v| (v * 255.0).round() as u8).collect();
    let bytes = encode_gray(mask.width, mask.height, &px, path)?;
    write_file(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_shading() {
        let d = DepthMap::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(depth_pixels(&d), vec![0, 255, 64]);
    }

    #[test]
    fn png_signature() {
        let bytes = encode_gray(2, 2, &[0, 64, 128, 255], Path::new("x.png")).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
