//! File formats: OBJ / PLY meshes, PLY / XYZ clouds, PNG images, masks and
//! 16-bit depth with a JSON scale sidecar, and camera JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType, ScalarType};
use ply_rs::writer::Writer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraView, DepthMap, PointCloud, RgbImage, TriangleMesh, Vec3};

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn unsupported(path: &Path, what: &str) -> Error {
    Error::Parse(format!("{}: unsupported {what} format", path.display()))
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh<f64>> {
    match extension(path).as_str() {
        "obj" => read_obj(&mut BufReader::new(File::open(path)?)),
        "ply" => read_ply_mesh(&mut BufReader::new(File::open(path)?)),
        _ => Err(unsupported(path, "mesh")),
    }
}

pub fn save_mesh(path: &Path, mesh: &TriangleMesh<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match extension(path).as_str() {
        "obj" => write_obj(&mut w, mesh)?,
        "ply" => write_ply(&mut w, mesh.vertices(), None, Some(mesh.faces()))?,
        _ => return Err(unsupported(path, "mesh")),
    }
    w.flush()?;
    Ok(())
}

/// Polygons are fan-triangulated; texture and normal indices are ignored.
pub fn read_obj<R: BufRead>(reader: &mut R) -> Result<TriangleMesh<f64>> {
    let opts = tobj::LoadOptions { triangulate: true, ignore_points: true, ignore_lines: true, ..Default::default() };
    let (models, _) = tobj::load_obj_buf(reader, &opts, |_| Err(tobj::LoadError::OpenFileFailed))
        .map_err(|e| Error::Parse(format!("obj: {e}")))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for m in &models {
        let base = vertices.len();
        vertices.extend(m.mesh.positions.chunks_exact(3).map(|p| Vec3::new(p[0], p[1], p[2])));
        faces.extend(m.mesh.indices.chunks_exact(3).map(|f| [0, 1, 2].map(|k| base + f[k] as usize)));
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_obj<W: Write>(w: &mut W, mesh: &TriangleMesh<f64>) -> Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<i64>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListInt(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUInt(v) => v.iter().map(|&x| x as i64).collect(),
        _ => return None,
    })
}

fn read_ply_raw<R: BufRead>(reader: &mut R) -> Result<Ply<DefaultElement>> {
    Parser::<DefaultElement>::new().read_ply(reader).map_err(|e| Error::Parse(format!("ply: {e}")))
}

/// Positions and, when present, normals.
type PlyPoints = (Vec<Vec3<f64>>, Option<Vec<Vec3<f64>>>);

fn ply_vertices(ply: &Ply<DefaultElement>) -> Result<PlyPoints> {
    let Some(verts) = ply.payload.get("vertex") else {
        return Err(Error::Parse("ply: no vertex element".into()));
    };
    let get = |e: &DefaultElement, k: &str| e.get(k).and_then(scalar);
    let mut points = Vec::with_capacity(verts.len());
    let mut normals = Vec::with_capacity(verts.len());
    for e in verts {
        match (get(e, "x"), get(e, "y"), get(e, "z")) {
            (Some(x), Some(y), Some(z)) => points.push(Vec3::new(x, y, z)),
            _ => return Err(Error::Parse("ply: vertex without x/y/z".into())),
        }
        if let (Some(x), Some(y), Some(z)) = (get(e, "nx"), get(e, "ny"), get(e, "nz")) {
            normals.push(Vec3::new(x, y, z));
        }
    }
    let normals = (normals.len() == points.len() && !points.is_empty()).then_some(normals);
    Ok((points, normals))
}

pub fn read_ply_mesh<R: BufRead>(reader: &mut R) -> Result<TriangleMesh<f64>> {
    let ply = read_ply_raw(reader)?;
    let (vertices, _) = ply_vertices(&ply)?;
    let mut faces = Vec::new();
    for e in ply.payload.get("face").map(|v| v.as_slice()).unwrap_or(&[]) {
        let idx = e
            .get("vertex_indices")
            .or_else(|| e.get("vertex_index"))
            .and_then(index_list)
            .ok_or_else(|| Error::Parse("ply: face without vertex_indices".into()))?;
        if idx.iter().any(|&i| i < 0) {
            return Err(Error::Parse("ply: negative vertex index".into()));
        }
        for k in 1..idx.len().saturating_sub(1) {
            faces.push([idx[0] as usize, idx[k] as usize, idx[k + 1] as usize]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// PLY with `double` coordinates: binary little-endian for point sets,
/// ASCII when faces are present (the `ply-rs` binary writer emits a wrong
/// list length for face indices).
pub fn write_ply<W: Write>(
    w: &mut W,
    points: &[Vec3<f64>],
    normals: Option<&[Vec3<f64>]>,
    faces: Option<&[[usize; 3]]>,
) -> Result<()> {
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = if faces.is_some() { Encoding::Ascii } else { Encoding::BinaryLittleEndian };
    let mut vdef = ElementDef::new("vertex".into());
    let mut names = vec!["x", "y", "z"];
    if normals.is_some() {
        names.extend(["nx", "ny", "nz"]);
    }
    for n in &names {
        vdef.properties
            .insert(n.to_string(), PropertyDef::new(n.to_string(), PropertyType::Scalar(ScalarType::Double)));
    }
    ply.header.elements.insert("vertex".into(), vdef);
    let verts = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut e = DefaultElement::new();
            let mut vals = vec![p.x, p.y, p.z];
            if let Some(ns) = normals {
                vals.extend(ns[i].to_array());
            }
            for (n, v) in names.iter().zip(vals) {
                e.insert(n.to_string(), Property::Double(v));
            }
            e
        })
        .collect();
    ply.payload.insert("vertex".into(), verts);
    if let Some(faces) = faces {
        let mut fdef = ElementDef::new("face".into());
        fdef.properties.insert(
            "vertex_indices".into(),
            PropertyDef::new("vertex_indices".into(), PropertyType::List(ScalarType::UChar, ScalarType::UInt)),
        );
        ply.header.elements.insert("face".into(), fdef);
        let fs = faces
            .iter()
            .map(|f| {
                let mut e = DefaultElement::new();
                e.insert("vertex_indices".into(), Property::ListUInt(f.iter().map(|&i| i as u32).collect()));
                e
            })
            .collect();
        ply.payload.insert("face".into(), fs);
    }
    Writer::new().write_ply(w, &mut ply).map_err(Error::Io)?;
    Ok(())
}

pub fn load_cloud(path: &Path) -> Result<PointCloud<f64>> {
    match extension(path).as_str() {
        "ply" => {
            let ply = read_ply_raw(&mut BufReader::new(File::open(path)?))?;
            let (points, normals) = ply_vertices(&ply)?;
            match normals {
                Some(n) => PointCloud::with_normals(points, n),
                None => Ok(PointCloud::new(points)),
            }
        }
        "xyz" | "txt" => read_xyz(BufReader::new(File::open(path)?)),
        "obj" => Ok(PointCloud::new(load_mesh(path)?.vertices().to_vec())),
        _ => Err(unsupported(path, "point cloud")),
    }
}

pub fn save_cloud(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match extension(path).as_str() {
        "ply" => write_ply(&mut w, cloud.points(), cloud.normals(), None)?,
        "xyz" | "txt" => {
            for (i, p) in cloud.points().iter().enumerate() {
                match cloud.normals() {
                    Some(n) => writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n[i].x, n[i].y, n[i].z)?,
                    None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
                }
            }
        }
        _ => return Err(unsupported(path, "point cloud")),
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated `x y z [nx ny nz]` lines; `#` starts a comment.
pub fn read_xyz<R: BufRead>(reader: R) -> Result<PointCloud<f64>> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("xyz line {}: {e}", ln + 1))))
            .collect::<Result<_>>()?;
        match vals.len() {
            3 => points.push(Vec3::new(vals[0], vals[1], vals[2])),
            6 => {
                points.push(Vec3::new(vals[0], vals[1], vals[2]));
                normals.push(Vec3::new(vals[3], vals[4], vals[5]));
            }
            n => return Err(Error::Parse(format!("xyz line {}: expected 3 or 6 values, got {n}", ln + 1))),
        }
    }
    if !normals.is_empty() && normals.len() == points.len() {
        PointCloud::with_normals(points, normals)
    } else {
        Ok(PointCloud::new(points))
    }
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .ok_or_else(|| Error::InvalidArgument("rgb buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_png_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    RgbImage::from_vec(img.width() as usize, img.height() as usize, img.into_raw())
}

/// Masks are stored as 8-bit gray, 255 inside.
pub fn encode_png_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let raw = mask.data().iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| Error::InvalidArgument("mask buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Any PNG; a pixel is inside when its luma is at least 128.
pub fn decode_png_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::from_vec(w, h, img.into_raw().into_iter().map(|v| v >= 128).collect())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    decode_png_rgb(&std::fs::read(path)?)
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_png_rgb(img)?)?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    decode_png_mask(&std::fs::read(path)?)
}

pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    std::fs::write(path, encode_png_mask(mask)?)?;
    Ok(())
}

/// Sidecar describing how 16-bit depth values map to scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEncoding {
    /// Scene units per stored integer step.
    pub scale: f64,
    /// Stored value that marks a missing measurement.
    #[serde(default)]
    pub invalid: u16,
}

impl Default for DepthEncoding {
    fn default() -> Self {
        Self { scale: 1e-3, invalid: 0 }
    }
}

pub fn depth_sidecar_path(png: &Path) -> PathBuf {
    let mut s = png.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes a 16-bit PNG plus `<path>.json`. Non-positive, non-finite or
/// out-of-range depths are stored as `invalid`.
pub fn save_depth(path: &Path, depth: &DepthMap<f64>, enc: DepthEncoding) -> Result<()> {
    if !(enc.scale > 0.0 && enc.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("depth scale must be positive, got {}", enc.scale)));
    }
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            let q = (d / enc.scale).round();
            if d > 0.0 && q.is_finite() && q >= 1.0 && q <= u16::MAX as f64 && q as u16 != enc.invalid {
                q as u16
            } else {
                enc.invalid
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .ok_or_else(|| Error::InvalidArgument("depth buffer size".into()))?;
    buf.save_with_format(path, ImageFormat::Png)?;
    std::fs::write(depth_sidecar_path(path), serde_json::to_vec_pretty(&enc)?)?;
    Ok(())
}

/// Reads a 16-bit depth PNG; without a sidecar the default millimeter
/// encoding is assumed. Invalid pixels become 0.
pub fn load_depth(path: &Path) -> Result<DepthMap<f64>> {
    let side = depth_sidecar_path(path);
    let enc = if side.exists() {
        serde_json::from_slice(&std::fs::read(&side)?)?
    } else {
        log::warn!("{}: no depth sidecar, assuming scale {}", path.display(), DepthEncoding::default().scale);
        DepthEncoding::default()
    };
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| if v == enc.invalid { 0.0 } else { v as f64 * enc.scale }).collect();
    DepthMap::from_vec(w, h, data)
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraView<f64>>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_cameras(path: &Path, cams: &[CameraView<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, cams)?;
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of an image's raw pixels, prefixed by its dimensions.
pub fn image_digest(img: &RgbImage) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update(img.data());
    hex::encode(h.finalize())
}

/// Hex SHA-256 of a byte string.
pub fn bytes_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(bytes_digest(&std::fs::read(path)?))
}
