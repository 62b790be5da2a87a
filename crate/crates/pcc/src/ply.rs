//! ASCII PLY point clouds: a `vertex` element with float `x y z` and
//! optional `nx ny nz`.

use std::fmt::Write as _;
use std::path::Path;

use pcc_core::cloud::{Point3, PointCloud};

use crate::error::{read_text, write_file, PccError, Result};

struct Element {
    name: String,
    count: usize,
    props: Vec<String>,
    /// Element rows have a list property and an unknown column count.
    has_list: bool,
}

fn fmt_value(out: &mut String, v: f64) {
    // 9 significant digits
    let _ = write!(out, "{v:.8e}");
}

pub fn to_string(cloud: &PointCloud) -> String {
    let normals = cloud.normals();
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if normals.is_some() {
        s.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.positions().iter().enumerate() {
        let mut vals: Vec<f64> = p.to_vec();
        if let Some(n) = normals {
            vals.extend_from_slice(&n[i]);
        }
        for (k, v) in vals.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            fmt_value(&mut s, *v);
        }
        s.push('\n');
    }
    s
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_file(path, to_string(cloud).as_bytes())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    parse(&read_text(path)?, path)
}

/// Parses PLY text; `path` only labels errors.
pub fn parse(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, msg: String| PccError::parse(path, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing `ply` magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    let mut last = 1;
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(err(last + 1, "header ended without `end_header`".into()));
        };
        last = n;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("ascii") {
                    return Err(err(n, "only `format ascii 1.0` is supported".into()));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| err(n, "element without a name".into()))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| err(n, format!("element `{name}` needs a count")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| err(n, "property before any element".into()))?;
                let ty = words.next().ok_or_else(|| err(n, "property without a type".into()))?;
                if ty == "list" {
                    el.has_list = true;
                    continue;
                }
                let name = words.next().ok_or_else(|| err(n, "property without a name".into()))?;
                if el.name == "vertex" && !matches!(ty, "float" | "float32" | "double" | "float64") && ["x", "y", "z", "nx", "ny", "nz"].contains(&name) {
                    return Err(err(n, format!("property `{name}` must be floating point, got `{ty}`")));
                }
                el.props.push(name.to_string());
            }
            Some("end_header") => break,
            Some(other) => return Err(err(n, format!("unexpected header keyword `{other}`"))),
        }
    }
    if !format_seen {
        return Err(err(last, "header has no `format` line".into()));
    }
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(last, "no `vertex` element".into()))?;
    // rows of elements declared before the vertices come first
    for e in &elements[..vi] {
        for k in 0..e.count {
            if lines.next().is_none() {
                return Err(err(last + 1, format!("expected {} `{}` rows, found {k}", e.count, e.name)));
            }
        }
    }
    let v = &elements[vi];
    if v.has_list {
        return Err(err(last, "list properties on vertices are not supported".into()));
    }
    let col = |name: &str| v.props.iter().position(|p| p == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err(last, "vertex element needs x, y and z".into())),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        (None, None, None) => None,
        _ => return Err(err(last, "normals need all of nx, ny, nz".into())),
    };
    let mut positions = Vec::with_capacity(v.count);
    let mut normals = Vec::new();
    for k in 0..v.count {
        let Some((n, line)) = lines.next() else {
            return Err(err(last + 1, format!("expected {} vertex rows, found {k}", v.count)));
        };
        last = n;
        let vals = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| err(n, format!("`{w}` is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != v.props.len() {
            return Err(err(n, format!("expected {} values, found {}", v.props.len(), vals.len())));
        }
        positions.push([vals[x], vals[y], vals[z]]);
        if let Some([a, b, c]) = normal_cols {
            normals.push([vals[a], vals[b], vals[c]]);
        }
    }
    if elements[vi + 1..].iter().all(|e| e.count == 0) {
        if let Some((n, line)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(n, format!("unexpected data after {} vertex rows: `{line}`", v.count)));
        }
    }
    let cloud = if normal_cols.is_some() {
        PointCloud::with_normals(positions, normals)
    } else {
        PointCloud::new(positions)
    };
    cloud.map_err(|e| PccError::format(path, e.to_string()))
}

/// Shorthand for the positions of a PLY file.
pub fn read_points(path: &Path) -> Result<Vec<Point3>> {
    Ok(read_ply(path)?.into_positions())
}
