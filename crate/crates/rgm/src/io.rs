//! Text formats: ASCII PLY and XYZ point clouds, 12-number transform lines.
//!
//! All writers emit shortest-roundtrip decimal text, so write/read cycles are
//! lossless for the working scalar type and output bytes are deterministic.

use crate::geom::{PointCloud, RigidTransform, Vec3};
use crate::scalar::{cast, Real};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Renders a cloud as ASCII PLY with a single `vertex` element.
pub fn cloud_to_ply<T: Real>(cloud: &PointCloud<T>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p.x(), p.y(), p.z());
    }
    s
}

/// Parses ASCII PLY. The `vertex` element must come first; extra properties
/// are ignored, `x`, `y`, `z` must all be declared.
pub fn cloud_from_ply<T: Real>(text: &str) -> Result<PointCloud<T>> {
    let mut lines = text.lines().enumerate();
    let header_err = |msg: &str| Error::Format(format!("ply: {msg}"));

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(header_err("missing magic line")),
    }

    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for (_, line) in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(header_err("only ascii format is supported"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().unwrap_or("");
                if name == "vertex" {
                    if count.is_some() {
                        return Err(header_err("duplicate vertex element"));
                    }
                    let n: usize = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| header_err("bad vertex count"))?;
                    count = Some(n);
                    in_vertex = true;
                } else {
                    if count.is_none() {
                        return Err(header_err("vertex must be the first element"));
                    }
                    in_vertex = false;
                }
            }
            Some("property") => {
                if in_vertex {
                    let _ty = tok.next();
                    if let Some(name) = tok.next() {
                        props.push(name.to_string());
                    }
                }
            }
            Some(other) => {
                return Err(header_err(&format!("unexpected header keyword `{other}`")));
            }
        }
    }

    let count = count.ok_or_else(|| header_err("no vertex element"))?;
    let col = |name: &str| -> Result<usize> {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| header_err(&format!("vertex element lacks property `{name}`")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);

    let mut points = Vec::with_capacity(count);
    for (lineno, line) in lines {
        if points.len() == count {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < props.len() {
            return Err(Error::Format(format!(
                "ply: line {}: expected {} fields, got {}",
                lineno + 1,
                props.len(),
                fields.len()
            )));
        }
        let get = |c: usize| -> Result<T> { parse_scalar(fields[c], lineno + 1) };
        points.push(Vec3::new(get(cx)?, get(cy)?, get(cz)?));
    }
    if points.len() != count {
        return Err(Error::Format(format!(
            "ply: header promises {count} vertices, found {}",
            points.len()
        )));
    }
    PointCloud::new(points)
}

/// Renders a cloud as XYZ text, one `x y z` triple per line.
pub fn cloud_to_xyz<T: Real>(cloud: &PointCloud<T>) -> String {
    let mut s = String::new();
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p.x(), p.y(), p.z());
    }
    s
}

/// Parses XYZ text; blank lines are skipped.
pub fn cloud_from_xyz<T: Real>(text: &str) -> Result<PointCloud<T>> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "xyz: line {}: expected 3 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        points.push(Vec3::new(
            parse_scalar(fields[0], lineno + 1)?,
            parse_scalar(fields[1], lineno + 1)?,
            parse_scalar(fields[2], lineno + 1)?,
        ));
    }
    PointCloud::new(points)
}

/// Transform as one text line: 9 row-major rotation entries then 3
/// translation entries.
pub fn transform_to_line<T: Real>(t: &RigidTransform<T>) -> String {
    let v = t.to_row_major();
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s.push('\n');
    s
}

/// Parses the 12-number transform line; surrounding whitespace is ignored.
pub fn transform_from_line<T: Real>(text: &str) -> Result<RigidTransform<T>> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 12 {
        return Err(Error::Format(format!(
            "transform: expected 12 numbers, got {}",
            fields.len()
        )));
    }
    let mut v = [T::zero(); 12];
    for (i, f) in fields.iter().enumerate() {
        v[i] = parse_scalar(f, 1)?;
    }
    Ok(RigidTransform::from_row_major(&v))
}

fn parse_scalar<T: Real>(field: &str, lineno: usize) -> Result<T> {
    let x: f64 = field
        .parse()
        .map_err(|_| Error::Format(format!("line {lineno}: `{field}` is not a number")))?;
    if !x.is_finite() {
        return Err(Error::Format(format!(
            "line {lineno}: non-finite value `{field}`"
        )));
    }
    Ok(cast(x))
}

/// Writes a cloud choosing the format from the extension (`.ply` or `.xyz`).
pub fn write_cloud<T: Real>(path: &Path, cloud: &PointCloud<T>) -> Result<()> {
    let text = match extension(path)? {
        CloudFormat::Ply => cloud_to_ply(cloud),
        CloudFormat::Xyz => cloud_to_xyz(cloud),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a cloud choosing the format from the extension (`.ply` or `.xyz`).
pub fn read_cloud<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match extension(path)? {
        CloudFormat::Ply => cloud_from_ply(&text),
        CloudFormat::Xyz => cloud_from_xyz(&text),
    }
    .map_err(|e| annotate(path, e))
}

pub fn write_transform<T: Real>(path: &Path, t: &RigidTransform<T>) -> Result<()> {
    std::fs::write(path, transform_to_line(t)).map_err(|e| Error::io(path, e))
}

pub fn read_transform<T: Real>(path: &Path) -> Result<RigidTransform<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    transform_from_line(&text).map_err(|e| annotate(path, e))
}

enum CloudFormat {
    Ply,
    Xyz,
}

fn extension(path: &Path) -> Result<CloudFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => Ok(CloudFormat::Ply),
        Some("xyz") => Ok(CloudFormat::Xyz),
        other => Err(Error::Format(format!(
            "{}: unsupported cloud extension {:?} (expected ply or xyz)",
            path.display(),
            other.unwrap_or("")
        ))),
    }
}

fn annotate(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}
