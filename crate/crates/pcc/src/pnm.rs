//! Single-channel PFM depth maps and binary PGM (P5) silhouettes.

use std::path::Path;

use pcc_core::image::{DepthMap, SilhouetteMap};

use crate::error::{read_file, write_file, PccError, Result};

/// Little-endian `Pf`, rows stored bottom to top as the format requires.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for v in (0..h).rev() {
        for u in 0..w {
            out.extend_from_slice(&(depth.get(u, v) as f32).to_le_bytes());
        }
    }
    out
}

/// Splits `n` whitespace-separated header tokens off the front of `bytes`,
/// skipping `#` comments. Returns the tokens and the data offset, which is
/// one byte past the last token.
fn header_tokens(bytes: &[u8], n: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(PccError::format(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(PccError::format(path, "missing pixel data"));
    }
    Ok((tokens, i + 1))
}

fn dims(tokens: &[String], path: &Path) -> Result<(usize, usize)> {
    let parse = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| PccError::format(path, format!("bad image dimension `{s}`")))
    };
    Ok((parse(&tokens[1])?, parse(&tokens[2])?))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let (t, off) = header_tokens(bytes, 4, path)?;
    if t[0] != "Pf" {
        return Err(PccError::format(path, format!("expected single-channel `Pf`, got `{}`", t[0])));
    }
    let (w, h) = dims(&t, path)?;
    let scale: f64 = t[3].parse().map_err(|_| PccError::format(path, format!("bad PFM scale `{}`", t[3])))?;
    if scale == 0.0 {
        return Err(PccError::format(path, "PFM scale must be nonzero"));
    }
    let data = &bytes[off..];
    if data.len() != w * h * 4 {
        return Err(PccError::format(path, format!("expected {} bytes of pixels, found {}", w * h * 4, data.len())));
    }
    let little = scale < 0.0;
    let mut values = vec![0.0; w * h];
    for (k, c) in data.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let x = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, u) = (k / w, k % w);
        values[(h - 1 - row) * w + u] = x as f64;
    }
    DepthMap::new(w, h, values).map_err(|e| PccError::format(path, e.to_string()))
}

/// Coverage quantized to 0..=255, so binary masks round-trip exactly.
pub fn encode_pgm(mask: &SilhouetteMap) -> Vec<u8> {
    let (w, h) = mask.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.values.iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<SilhouetteMap> {
    let (t, off) = header_tokens(bytes, 4, path)?;
    if t[0] != "P5" {
        return Err(PccError::format(path, format!("expected binary PGM `P5`, got `{}`", t[0])));
    }
    let (w, h) = dims(&t, path)?;
    let maxval: u32 = t[3].parse().map_err(|_| PccError::format(path, format!("bad maxval `{}`", t[3])))?;
    if !(1..=255).contains(&maxval) {
        return Err(PccError::format(path, format!("maxval {maxval} outside 1..=255")));
    }
    let data = &bytes[off..];
    if data.len() != w * h {
        return Err(PccError::format(path, format!("expected {} bytes of pixels, found {}", w * h, data.len())));
    }
    let values = data.iter().map(|&b| (b as f64 / maxval as f64).min(1.0)).collect();
    SilhouetteMap::new(w, h, values).map_err(|e| PccError::format(path, e.to_string()))
}

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    write_file(path, &encode_pfm(depth))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    decode_pfm(&read_file(path)?, path)
}

pub fn write_pgm(path: &Path, mask: &SilhouetteMap) -> Result<()> {
    write_file(path, &encode_pgm(mask))
}

pub fn read_pgm(path: &Path) -> Result<SilhouetteMap> {
    decode_pgm(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("x")
    }

    #[test]
    fn pfm_round_trip_and_orientation() {
        let d = DepthMap::new(3, 2, vec![1.5, 0.0, 2.25, 0.0, 3.0, 0.125]).unwrap();
        let bytes = encode_pfm(&d);
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        // first stored row is the bottom image row
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0.0);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3.0);
        assert_eq!(decode_pfm(&bytes, p()).unwrap(), d);
    }

    #[test]
    fn big_endian_pfm() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes, p()).unwrap().values, vec![2.5]);
    }

    #[test]
    fn pgm_round_trip_with_comment() {
        let m = SilhouetteMap::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&m), p()).unwrap(), m);
        let bytes = b"P5\n# mask\n2 1\n255\n\xff\x00";
        assert_eq!(decode_pgm(bytes, p()).unwrap().values, vec![1.0, 0.0]);
    }

    #[test]
    fn truncated_files_rejected() {
        let m = SilhouetteMap::new(2, 2, vec![1.0; 4]).unwrap();
        let b = encode_pgm(&m);
        assert!(decode_pgm(&b[..b.len() - 1], p()).is_err());
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0", p()).is_err());
        assert!(decode_pfm(b"Pf\n1 1\n", p()).is_err());
    }
}
