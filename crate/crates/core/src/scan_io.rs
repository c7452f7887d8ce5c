//! Readers and writers for lidar scans and ground-truth pose files.
//!
//! Supported scan formats:
//! - KITTI velodyne `.bin`: packed little-endian `f32` quadruples `(x, y, z, intensity)`.
//! - XYZ text: whitespace-separated `x y z [intensity]`, `#` starts a comment.
//! - PLY ascii 1.0 with a `vertex` element carrying `x`, `y`, `z` (and optionally `intensity`).
//!
//! Pose files follow the KITTI odometry layout: one world-from-sensor transform
//! per line as 12 row-major floats of the top 3×4 block. No sensor-to-body
//! calibration is applied.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{is_rotation, nearest_rotation, Point3, PointCloud, RigidTransform};

/// Pose rotation blocks within this distance of orthonormal are snapped back onto SO(3).
pub const POSE_ORTHONORMAL_TOLERANCE: f64 = 1e-6;

const KITTI_RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    KittiBin,
    XyzText,
    PlyAscii,
}

impl CloudFormat {
    /// Picks a format from the file extension: `.bin`, `.xyz`/`.txt`, `.ply`.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "bin" => Some(CloudFormat::KittiBin),
            "xyz" | "txt" => Some(CloudFormat::XyzText),
            "ply" => Some(CloudFormat::PlyAscii),
            _ => None,
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bin" | "kitti" => Ok(CloudFormat::KittiBin),
            "xyz" | "txt" | "text" => Ok(CloudFormat::XyzText),
            "ply" => Ok(CloudFormat::PlyAscii),
            other => Err(Error::InvalidArgument(format!("unknown cloud format '{other}'"))),
        }
    }
}

fn resolve_format(path: &Path, format: Option<CloudFormat>) -> Result<CloudFormat> {
    format.or_else(|| CloudFormat::from_path(path)).ok_or_else(|| {
        Error::format(
            path,
            "extension",
            "cannot infer scan format; use .bin, .xyz, .txt or .ply",
        )
    })
}

/// Loads a scan, dispatching on `format` or, when absent, on the file extension.
pub fn load_cloud(path: impl AsRef<Path>, format: Option<CloudFormat>) -> Result<PointCloud> {
    let path = path.as_ref();
    match resolve_format(path, format)? {
        CloudFormat::KittiBin => load_kitti_bin(path),
        CloudFormat::XyzText => load_xyz_text(path),
        CloudFormat::PlyAscii => load_ply_ascii(path),
    }
}

pub fn save_cloud(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    format: Option<CloudFormat>,
) -> Result<()> {
    let path = path.as_ref();
    match resolve_format(path, format)? {
        CloudFormat::KittiBin => save_kitti_bin(path, cloud),
        CloudFormat::XyzText => save_xyz_text(path, cloud),
        CloudFormat::PlyAscii => save_ply_ascii(path, cloud),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let whole = bytes.len() - bytes.len() % KITTI_RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::format(
            path,
            format!("byte offset {whole}"),
            format!(
                "trailing partial record of {} bytes (file is {} bytes, records are {KITTI_RECORD_BYTES})",
                bytes.len() - whole,
                bytes.len()
            ),
        ));
    }
    if bytes.is_empty() {
        log::warn!("{}: empty scan", path.display());
    }
    let n = bytes.len() / KITTI_RECORD_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(KITTI_RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Point3::new(f(0), f(1), f(2));
        if !p.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::format(
                path,
                format!("byte offset {}", i * KITTI_RECORD_BYTES),
                "non-finite coordinate",
            ));
        }
        points.push(p);
        intensity.push(f(3));
    }
    PointCloud::new(points, Some(intensity))
}

/// Writes `cloud` as packed `f32` quadruples; missing intensity is written as 0.
pub fn save_kitti_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD_BYTES);
    for (i, p) in cloud.points().iter().enumerate() {
        let it = cloud.intensity().map_or(0.0, |v| v[i]);
        for v in [p.x, p.y, p.z, it] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_all(path.as_ref(), &out)
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::format(path, format!("line {line}"), format!("bad number '{tok}'")))
}

pub fn load_xyz_text(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut points = Vec::new();
    let mut intensity: Vec<f64> = Vec::new();
    let mut columns: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 3 && toks.len() != 4 {
            return Err(Error::format(
                path,
                format!("line {line_no}"),
                format!("expected 3 or 4 columns, found {}", toks.len()),
            ));
        }
        match columns {
            None => columns = Some(toks.len()),
            Some(c) if c != toks.len() => {
                return Err(Error::format(
                    path,
                    format!("line {line_no}"),
                    format!("column count changed from {c} to {}", toks.len()),
                ))
            }
            _ => {}
        }
        let x = parse_f64(toks[0], path, line_no)?;
        let y = parse_f64(toks[1], path, line_no)?;
        let z = parse_f64(toks[2], path, line_no)?;
        points.push(Point3::new(x, y, z));
        if toks.len() == 4 {
            intensity.push(parse_f64(toks[3], path, line_no)?);
        }
    }
    let intensity = (columns == Some(4)).then_some(intensity);
    PointCloud::new(points, intensity)
}

pub fn save_xyz_text(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut s = String::with_capacity(cloud.len() * 32);
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.intensity() {
            Some(it) => writeln!(s, "{} {} {} {}", p.x, p.y, p.z, it[i]),
            None => writeln!(s, "{} {} {}", p.x, p.y, p.z),
        }
        .expect("write to string");
    }
    write_all(path.as_ref(), s.as_bytes())
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    // (name, is_single_precision); None marks a list property
    properties: Vec<Option<(String, bool)>>,
}

fn ply_scalar_is_f32(ty: &str) -> Option<bool> {
    match ty {
        "float" | "float32" => Some(true),
        "double" | "float64" => Some(false),
        "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8" | "int16"
        | "uint16" | "int32" | "uint32" => Some(false),
        _ => None,
    }
}

pub fn load_ply_ascii(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {line}"), msg);

    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(bad(n, "missing 'ply' magic")),
        None => return Err(bad(1, "empty file")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(bad(text.lines().count() + 1, "header not terminated by end_header"));
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", ..] => return Err(bad(n, "only 'format ascii 1.0' is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| bad(n, "element count is not an integer"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, _] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(n, "property before any element"))?;
                el.properties.push(None);
            }
            ["property", ty, name] => {
                let single =
                    ply_scalar_is_f32(ty).ok_or_else(|| bad(n, "unknown property type"))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(n, "property before any element"))?;
                el.properties.push(Some((name.to_string(), single)));
            }
            ["end_header"] => break,
            _ => return Err(bad(n, "unrecognized header line")),
        }
    }
    if !saw_format {
        return Err(bad(1, "missing format line"));
    }

    let mut cloud = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines
                    .next()
                    .ok_or_else(|| bad(text.lines().count(), "unexpected end of data"))?;
            }
            continue;
        }
        if el.properties.iter().any(Option::is_none) {
            return Err(bad(1, "list properties on vertex are not supported"));
        }
        let props: Vec<&(String, bool)> = el.properties.iter().flatten().collect();
        let find = |key: &str| props.iter().position(|(name, _)| name == key);
        let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
            return Err(bad(1, "vertex element lacks x, y, z properties"));
        };
        let ii = find("intensity");

        let mut points = Vec::with_capacity(el.count);
        let mut intensity = Vec::new();
        for _ in 0..el.count {
            let (n, line) = lines
                .next()
                .ok_or_else(|| bad(text.lines().count(), "fewer vertices than declared"))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != props.len() {
                return Err(bad(n, "vertex has wrong number of values"));
            }
            let get = |k: usize| -> Result<f64> {
                let v = if props[k].1 {
                    toks[k].parse::<f32>().map(f64::from).ok()
                } else {
                    toks[k].parse::<f64>().ok()
                };
                v.filter(|v| v.is_finite())
                    .ok_or_else(|| bad(n, "malformed vertex value"))
            };
            points.push(Point3::new(get(ix)?, get(iy)?, get(iz)?));
            if let Some(k) = ii {
                intensity.push(get(k)?);
            }
        }
        cloud = Some(PointCloud::new(points, ii.map(|_| intensity))?);
    }
    cloud.ok_or_else(|| bad(1, "no vertex element"))
}

/// Writes an ascii PLY with `float` coordinates (and `float intensity` when present).
pub fn save_ply_ascii(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).unwrap();
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.intensity().is_some() {
        s.push_str("property float intensity\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        write!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).unwrap();
        if let Some(it) = cloud.intensity() {
            write!(s, " {}", it[i] as f32).unwrap();
        }
        s.push('\n');
    }
    write_all(path.as_ref(), s.as_bytes())
}

/// World-from-sensor poses, one per scan index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseTrack {
    pub poses: Vec<RigidTransform>,
}

impl PoseTrack {
    pub fn new(poses: Vec<RigidTransform>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<&RigidTransform> {
        self.poses.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.poses.len(),
        })
    }
}

/// Parses one KITTI pose row (12 floats) into a rigid transform.
pub fn parse_kitti_pose_line(line: &str, path: &Path, line_no: usize) -> Result<RigidTransform> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 12 {
        return Err(Error::format(
            path,
            format!("line {line_no}"),
            format!("expected 12 values, found {}", toks.len()),
        ));
    }
    let mut v = [0.0; 12];
    for (slot, tok) in v.iter_mut().zip(&toks) {
        *slot = parse_f64(tok, path, line_no)?;
    }
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let t = Vector3::new(v[3], v[7], v[11]);
    let r = if is_rotation(&r, crate::geometry::ROTATION_TOLERANCE) {
        r
    } else if is_rotation(&r, POSE_ORTHONORMAL_TOLERANCE) {
        nearest_rotation(&r)
    } else {
        return Err(Error::format(
            path,
            format!("line {line_no}"),
            "rotation block is not orthonormal",
        ));
    };
    RigidTransform::from_parts(r, t)
        .map_err(|e| Error::format(path, format!("line {line_no}"), e.to_string()))
}

pub fn load_kitti_poses(path: impl AsRef<Path>) -> Result<PoseTrack> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        poses.push(parse_kitti_pose_line(line, path, idx + 1)?);
    }
    Ok(PoseTrack { poses })
}

pub fn format_kitti_pose_line(t: &RigidTransform) -> String {
    t.to_kitti_row()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn save_kitti_poses(path: impl AsRef<Path>, track: &PoseTrack) -> Result<()> {
    let mut s = String::new();
    for t in &track.poses {
        s.push_str(&format_kitti_pose_line(t));
        s.push('\n');
    }
    write_all(path.as_ref(), s.as_bytes())
}

/// Transform taking points of scan `j` into the frame of scan `i`: `inverse(P_i) · P_j`.
pub fn relative_ground_truth(track: &PoseTrack, i: usize, j: usize) -> Result<RigidTransform> {
    let pi = track.get(i)?;
    let pj = track.get(j)?;
    Ok(pi.inverse().compose(pj))
}

/// Lists `*.bin` scans in a KITTI sequence directory, sorted by file name.
pub fn list_kitti_scans(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_to_transform, EulerPose};
    use tempfile::tempdir;

    #[test]
    fn kitti_bin_two_points() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("two.bin");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, 4.0, 5.0, 6.0, 0.1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        let cloud = load_kitti_bin(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points()[0], Point3::new(1.0, 2.0, 3.0));
        assert_eq!(cloud.points()[1], Point3::new(4.0, 5.0, 6.0));
        assert_eq!(cloud.intensity().unwrap(), &[0.5, 0.1f32 as f64]);
    }

    #[test]
    fn kitti_bin_empty_and_misaligned() {
        let dir = tempdir().unwrap();
        let empty = dir.path().join("empty.bin");
        fs::write(&empty, b"").unwrap();
        assert!(load_kitti_bin(&empty).unwrap().is_empty());

        let odd = dir.path().join("odd.bin");
        fs::write(&odd, [0u8; 17]).unwrap();
        match load_kitti_bin(&odd) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "byte offset 16"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error_naming_path() {
        let err = load_kitti_bin("/nonexistent/scan.bin").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/scan.bin"));
    }

    #[test]
    fn xyz_parse_and_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        fs::write(&path, "0 0 0\n1 1 1\n").unwrap();
        let c = load_xyz_text(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.intensity().is_none());

        fs::write(&path, "# header\n1 2 3 0.5 # trailing\n\n4 5 6 0.25\n").unwrap();
        let c = load_xyz_text(&path).unwrap();
        assert_eq!(c.points()[1], Point3::new(4.0, 5.0, 6.0));
        assert_eq!(c.intensity().unwrap(), &[0.5, 0.25]);

        fs::write(&path, "a b c\n").unwrap();
        match load_xyz_text(&path) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 1"),
            other => panic!("expected format error, got {other:?}"),
        }

        fs::write(&path, "1 2 3\n1 2 3 4\n").unwrap();
        match load_xyz_text(&path) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn ply_write_then_read() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tri.ply");
        let cloud = PointCloud::new(
            vec![
                Point3::new(0.5, -1.25, 3.0),
                Point3::new(10.0, 0.125, -7.5),
                Point3::new(-2.0, 4.0, 0.0),
            ],
            None,
        )
        .unwrap();
        save_ply_ascii(&path, &cloud).unwrap();
        assert_eq!(load_ply_ascii(&path).unwrap(), cloud);
    }

    #[test]
    fn ply_with_extra_properties_and_faces() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mesh.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n\
             property double x\nproperty double y\nproperty double z\nproperty uchar red\n\
             element face 1\nproperty list uchar int vertex_indices\nend_header\n\
             1 2 3 255\n4 5 6 0\n3 0 1 1\n",
        )
        .unwrap();
        let c = load_ply_ascii(&path).unwrap();
        assert_eq!(c.points(), &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn ply_rejects_binary_and_bad_vertex() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        fs::write(&path, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
        match load_ply_ascii(&path) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("expected format error, got {other:?}"),
        }
        fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
             property float z\nend_header\n1 2\n",
        )
        .unwrap();
        match load_ply_ascii(&path) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 8"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn pose_file_parsing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        let track = load_kitti_poses(&path).unwrap();
        assert_eq!(track.poses, vec![RigidTransform::identity()]);

        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        match load_kitti_poses(&path) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 1"),
            other => panic!("expected format error, got {other:?}"),
        }

        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0\n2 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        match load_kitti_poses(&path) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn pose_file_snaps_near_orthonormal() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        // KITTI prints poses with six-digit mantissas
        let exact = euler_to_transform(&EulerPose::new(-0.04, -0.03, 0.86, 0.0005, 0.002, 0.0005))
            .unwrap();
        let line: Vec<String> = exact.to_kitti_row().iter().map(|v| format!("{v:.6e}")).collect();
        fs::write(&path, line.join(" ") + "\n").unwrap();
        let t = &load_kitti_poses(&path).unwrap().poses[0];
        let r = t.rotation();
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert!((t.matrix() - exact.matrix()).abs().max() < 1e-6);
    }

    #[test]
    fn translation_pose_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let t = RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0));
        save_kitti_poses(&path, &PoseTrack::new(vec![t])).unwrap();
        assert_eq!(load_kitti_poses(&path).unwrap().poses, vec![t]);
    }

    #[test]
    fn relative_ground_truth_basics() {
        let p1 = RigidTransform::from_translation(Vector3::new(3.0, 0.0, 0.0));
        let track = PoseTrack::new(vec![RigidTransform::identity(), p1]);
        assert_eq!(relative_ground_truth(&track, 0, 1).unwrap(), p1);
        assert_eq!(
            relative_ground_truth(&track, 1, 1).unwrap(),
            RigidTransform::identity()
        );
        assert!(matches!(
            relative_ground_truth(&track, 0, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn relative_ground_truth_chains_through_third_frame() {
        let poses: Vec<RigidTransform> = [
            EulerPose::new(1.0, 2.0, 0.1, 0.01, -0.02, 0.5),
            EulerPose::new(-4.0, 7.0, 0.3, 0.0, 0.01, -1.2),
            EulerPose::new(10.0, -3.0, -0.2, 0.02, 0.0, 2.9),
        ]
        .iter()
        .map(|p| euler_to_transform(p).unwrap())
        .collect();
        let track = PoseTrack::new(poses);
        let direct = relative_ground_truth(&track, 0, 1).unwrap();
        let via = relative_ground_truth(&track, 0, 2)
            .unwrap()
            .compose(&relative_ground_truth(&track, 2, 1).unwrap());
        assert!((direct.matrix() - via.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn format_dispatch() {
        assert_eq!(CloudFormat::from_path(Path::new("a/b.BIN")), Some(CloudFormat::KittiBin));
        assert_eq!(CloudFormat::from_path(Path::new("a.txt")), Some(CloudFormat::XyzText));
        assert_eq!(CloudFormat::from_path(Path::new("a.ply")), Some(CloudFormat::PlyAscii));
        assert_eq!(CloudFormat::from_path(Path::new("a.pcd")), None);
        assert!(load_cloud("scan.pcd", None).is_err());
    }
}
