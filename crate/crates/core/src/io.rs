//! File formats: ASCII PLY, CSV tables, binary PPM renders and JSON.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, GaussianState};
use crate::math::{Quat, Vec3};
use crate::track::PinholeCamera;

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses JSON, reporting schema violations with the offending field path.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, to_json(value)?.as_bytes())
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One PLY vertex: position, color and, for Gaussian files, orientation and
/// per-axis scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyVertex {
    pub position: Vec3,
    pub color: Option<[u8; 3]>,
    pub rotation: Option<Quat>,
    pub scale: Option<Vec3>,
}

/// ASCII PLY with `double x y z` and `uchar red green blue`.
pub fn points_ply(points: &[Vec3], colors: &[Vec3]) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", points.len()));
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (i, p) in points.iter().enumerate() {
        let c = colors.get(i).copied().unwrap_or(Vec3::new(0.5, 0.5, 0.5));
        s.push_str(&format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, to_u8(c.x), to_u8(c.y), to_u8(c.z)));
    }
    s
}

/// ASCII PLY of Gaussians: position, `rot_0..3` (w x y z), `scale_0..2`
/// and color.
pub fn gaussians_ply(set: &GaussianSet, colors: Option<&[Vec3]>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", set.len()));
    for name in ["x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2"] {
        s.push_str(&format!("property double {name}\n"));
    }
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (i, g) in set.gaussians.iter().enumerate() {
        let c = colors.and_then(|c| c.get(i).copied()).unwrap_or(g.color);
        let (p, q, sc) = (g.center, g.orientation, g.scale);
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            p.x,
            p.y,
            p.z,
            q.w,
            q.x,
            q.y,
            q.z,
            sc.x,
            sc.y,
            sc.z,
            to_u8(c.x),
            to_u8(c.y),
            to_u8(c.z)
        ));
    }
    s
}

/// Parses an ASCII PLY holding a single vertex element.
pub fn parse_ply(text: &str, path: &Path) -> Result<Vec<PlyVertex>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(parse_err(path, "missing `ply` magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or_else(|| parse_err(path, "header has no end_header"))?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(parse_err(path, format!("unsupported format `{other}`"))),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| parse_err(path, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => return Err(parse_err(path, "only a vertex element is supported")),
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(parse_err(path, format!("unexpected header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| parse_err(path, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(path, "vertex needs x, y and z")),
    };
    let rgb = [col("red"), col("green"), col("blue")];
    let rot = [col("rot_0"), col("rot_1"), col("rot_2"), col("rot_3")];
    let scl = [col("scale_0"), col("scale_1"), col("scale_2")];
    let mut out = Vec::with_capacity(count);
    for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        if k >= count {
            return Err(parse_err(path, "more vertex lines than declared"));
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, format!("vertex {k}: non-numeric value")))?;
        if vals.len() != props.len() {
            return Err(parse_err(path, format!("vertex {k}: expected {} values, got {}", props.len(), vals.len())));
        }
        let all = |idx: &[Option<usize>]| idx.iter().all(Option::is_some);
        out.push(PlyVertex {
            position: Vec3::new(vals[ix], vals[iy], vals[iz]),
            color: all(&rgb).then(|| rgb.map(|i| vals[i.unwrap()] as u8)),
            rotation: all(&rot).then(|| Quat::new(vals[rot[0].unwrap()], vals[rot[1].unwrap()], vals[rot[2].unwrap()], vals[rot[3].unwrap()])),
            scale: all(&scl).then(|| Vec3::new(vals[scl[0].unwrap()], vals[scl[1].unwrap()], vals[scl[2].unwrap()])),
        });
    }
    if out.len() != count {
        return Err(parse_err(path, format!("declared {count} vertices, found {}", out.len())));
    }
    Ok(out)
}

pub fn read_points_ply(path: &Path) -> Result<Vec<Vec3>> {
    Ok(parse_ply(&read_text(path)?, path)?.into_iter().map(|v| v.position).collect())
}

pub fn read_gaussians_ply(path: &Path, frame_index: usize) -> Result<GaussianSet> {
    let verts = parse_ply(&read_text(path)?, path)?;
    let gaussians = verts
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let (Some(q), Some(s)) = (v.rotation, v.scale) else {
                return Err(parse_err(path, format!("vertex {i} lacks rot_* or scale_* properties")));
            };
            let mut g = GaussianState::new(v.position, q, s);
            if let Some(c) = v.color {
                g.color = Vec3::new(c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0);
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = GaussianSet::new(gaussians, frame_index);
    set.validate()?;
    Ok(set)
}

/// Serializes rows as CSV with a header line.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_bytes(path, csv_string(rows)?.as_bytes())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| parse_err(path, format!("row {}: {e}", i + 1))))
        .collect()
}

/// One Gaussian in one frame of a trajectory table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub frame: usize,
    pub gaussian: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

pub fn trajectory_rows(trajectory: &[GaussianSet]) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (t, set) in trajectory.iter().enumerate() {
        for (i, g) in set.gaussians.iter().enumerate() {
            rows.push(TrajectoryRow {
                frame: t,
                gaussian: i,
                x: g.center.x,
                y: g.center.y,
                z: g.center.z,
                qw: g.orientation.w,
                qx: g.orientation.x,
                qy: g.orientation.y,
                qz: g.orientation.z,
                sx: g.scale.x,
                sy: g.scale.y,
                sz: g.scale.z,
            });
        }
    }
    rows
}

/// Rebuilds per-frame sets from a trajectory table. Rows must list frames
/// in order and, within a frame, Gaussians `0..n` in order.
pub fn trajectory_from_rows(rows: &[TrajectoryRow], path: &Path) -> Result<Vec<GaussianSet>> {
    let mut out: Vec<GaussianSet> = Vec::new();
    for r in rows {
        if r.frame == out.len() {
            out.push(GaussianSet::new(Vec::new(), r.frame));
        }
        let set = match out.last_mut() {
            Some(s) if s.frame_index == r.frame => s,
            _ => return Err(parse_err(path, format!("frame {} out of order", r.frame))),
        };
        if r.gaussian != set.len() {
            return Err(parse_err(path, format!("frame {}: gaussian {} out of order", r.frame, r.gaussian)));
        }
        set.gaussians.push(GaussianState::new(
            Vec3::new(r.x, r.y, r.z),
            Quat::new(r.qw, r.qx, r.qy, r.qz),
            Vec3::new(r.sx, r.sy, r.sz),
        ));
    }
    if out.is_empty() {
        return Err(parse_err(path, "empty trajectory"));
    }
    let n = out[0].len();
    if out.iter().any(|s| s.len() != n) {
        return Err(parse_err(path, "frames have different gaussian counts"));
    }
    Ok(out)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<GaussianSet>> {
    trajectory_from_rows(&read_csv(path)?, path)
}

/// RGB raster written as binary PPM.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32, background: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![background; width as usize * height as usize],
        }
    }

    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height {
            self.pixels[y as usize * self.width as usize + x as usize] = c;
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn disc(&mut self, u: f64, v: f64, radius: i64, c: [u8; 3]) {
        let (cx, cy) = (u.floor() as i64, v.floor() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    /// Straight segment by uniform sampling.
    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], c: [u8; 3]) {
        let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as i64).clamp(1, 4096);
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            self.put((a[0] + f * (b[0] - a[0])).floor() as i64, (a[1] + f * (b[1] - a[1])).floor() as i64, c);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_ppm())
    }

    pub fn from_ppm(bytes: &[u8], path: &Path) -> Result<Self> {
        // Header is four whitespace-separated tokens followed by one byte.
        let mut tokens = Vec::new();
        let mut pos = 0;
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(parse_err(path, "truncated PPM header"));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
        }
        pos += 1;
        if tokens[0] != "P6" || tokens[3] != "255" {
            return Err(parse_err(path, "only 8-bit P6 is supported"));
        }
        let w: u32 = tokens[1].parse().map_err(|_| parse_err(path, "bad width"))?;
        let h: u32 = tokens[2].parse().map_err(|_| parse_err(path, "bad height"))?;
        let data = bytes.get(pos..).unwrap_or(&[]);
        if data.len() != w as usize * h as usize * 3 {
            return Err(parse_err(path, "pixel data size mismatch"));
        }
        Ok(Self {
            width: w,
            height: h,
            pixels: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}

pub fn rgb(c: Vec3) -> [u8; 3] {
    [to_u8(c.x), to_u8(c.y), to_u8(c.z)]
}

/// Splat of `points` seen by `camera`, far points drawn first.
pub fn render_scatter(camera: &PinholeCamera, points: &[Vec3], colors: &[Vec3]) -> Image {
    let mut img = Image::new(camera.width, camera.height, [16, 16, 16]);
    let mut proj: Vec<(f64, f64, f64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let q = camera.project(*p);
            camera.in_image(&q).then_some((q.depth, q.u, q.v, i))
        })
        .collect();
    proj.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.3.cmp(&b.3)));
    for (_, u, v, i) in proj {
        let c = colors.get(i).copied().unwrap_or(Vec3::new(0.8, 0.8, 0.8));
        img.disc(u, v, 1, rgb(c));
    }
    img
}
