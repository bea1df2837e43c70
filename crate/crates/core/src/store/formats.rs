//! On-disk formats: binary point clouds and range images, text poses,
//! manifests, and sensor-spec configs. Binary payloads are little-endian f32;
//! parse errors carry byte offsets.

use std::fs;
use std::path::Path;

use super::{StoreError, StoreResult};
use crate::lidar::{CloudPoint, LidarSpec, PointCloud, Pose, RangeImage};
use crate::Vec3;

pub const CLOUD_MAGIC: &[u8; 4] = b"LNPC";
pub const RANGE_MAGIC: &[u8; 4] = b"LNRI";

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn read_file(path: &Path) -> StoreResult<Vec<u8>> {
    fs::read(path).map_err(|source| StoreError::Io { path: path_str(path), source })
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Reader { bytes, offset: 0, path: path_str(path) }
    }

    fn expect_magic(&mut self, magic: &'static [u8; 4]) -> StoreResult<()> {
        if self.bytes.len() < 4 || &self.bytes[..4] != magic {
            return Err(StoreError::BadMagic {
                path: self.path.clone(),
                expected: std::str::from_utf8(magic).unwrap_or("?"),
            });
        }
        self.offset = 4;
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> StoreResult<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(StoreError::Truncated {
                path: self.path.clone(),
                offset: self.offset,
                what: what.to_string(),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> StoreResult<u32> {
        let s = self.take(4, what)?;
        Ok(u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> StoreResult<f32> {
        let at = self.offset;
        let s = self.take(4, what)?;
        let v = f32::from_le_bytes(s.try_into().unwrap());
        if !v.is_finite() {
            return Err(StoreError::NonFinite { path: self.path.clone(), offset: at });
        }
        Ok(v)
    }
}

/// Lossless round trip for f32-representable records.
pub fn save_cloud(cloud: &PointCloud, path: &Path) -> StoreResult<()> {
    let mut bytes = Vec::with_capacity(8 + cloud.len() * 16);
    bytes.extend_from_slice(CLOUD_MAGIC);
    bytes.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|source| StoreError::Io { path: path_str(path), source })
}

pub fn load_cloud(path: &Path) -> StoreResult<PointCloud> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.expect_magic(CLOUD_MAGIC)?;
    let count = r.u32("point count")? as usize;
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("record {i} of {count}");
        let x = r.f32(&what)? as f64;
        let y = r.f32(&what)? as f64;
        let z = r.f32(&what)? as f64;
        let intensity = r.f32(&what)? as f64;
        points.push(CloudPoint { position: Vec3::new(x, y, z), intensity });
    }
    Ok(PointCloud::sensor(points))
}

pub fn save_range_image(img: &RangeImage, path: &Path) -> StoreResult<()> {
    let spec = &img.spec;
    let n = spec.pixel_count();
    let mut bytes = Vec::with_capacity(12 + n * 12);
    bytes.extend_from_slice(RANGE_MAGIC);
    bytes.extend_from_slice(&(spec.beams as u32).to_le_bytes());
    bytes.extend_from_slice(&(spec.columns as u32).to_le_bytes());
    for idx in 0..n {
        let d = img.distances()[idx] as f32;
        let i = img.intensities()[idx] as f32;
        let m = if img.mask()[idx] { 1.0f32 } else { 0.0f32 };
        bytes.extend_from_slice(&d.to_le_bytes());
        bytes.extend_from_slice(&i.to_le_bytes());
        bytes.extend_from_slice(&m.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|source| StoreError::Io { path: path_str(path), source })
}

/// The file stores only the grid; the caller supplies the sensor spec, which
/// must agree with the stored dimensions. Distances and intensities within
/// one part in 10^6 of their bounds (f32 rounding) are clamped back.
pub fn load_range_image(path: &Path, spec: &LidarSpec) -> StoreResult<RangeImage> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.expect_magic(RANGE_MAGIC)?;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    if h != spec.beams || w != spec.columns {
        return Err(StoreError::SpecMismatch {
            path: path_str(path),
            file: (h, w),
            spec: (spec.beams, spec.columns),
        });
    }
    let n = h * w;
    let mut distance = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        let what = format!("pixel {i} of {n}");
        let at = r.offset;
        let d = r.f32(&what)? as f64;
        let inten = r.f32(&what)? as f64;
        let m = r.f32(&what)?;
        let valid = if m == 1.0 {
            true
        } else if m == 0.0 {
            false
        } else {
            return Err(StoreError::Malformed {
                path: path_str(path),
                offset: at,
                what: format!("mask value {m} is not 0 or 1"),
            });
        };
        let tol = 1.0 + 1e-6;
        let d = if d > spec.max_range && d <= spec.max_range * tol { spec.max_range } else { d };
        let inten = if (-1e-6..=tol).contains(&inten) { inten.clamp(0.0, 1.0) } else { inten };
        distance.push(d);
        intensity.push(inten);
        mask.push(valid);
    }
    Ok(RangeImage::from_planes(*spec, distance, intensity, mask)?)
}

/// Text pose file: 16 whitespace-separated decimals, row-major lidar2world.
pub fn load_pose(path: &Path, ortho_tol: f64) -> StoreResult<Pose> {
    let text = fs::read_to_string(path)
        .map_err(|source| StoreError::Io { path: path_str(path), source })?;
    parse_pose_text(&text, ortho_tol).map_err(|what| StoreError::Malformed {
        path: path_str(path),
        offset: 0,
        what,
    })
}

pub fn parse_pose_text(text: &str, ortho_tol: f64) -> std::result::Result<Pose, String> {
    let mut vals = [0.0f64; 16];
    let mut count = 0;
    for tok in text.split_whitespace() {
        if count >= 16 {
            count += 1;
            break;
        }
        vals[count] = tok.parse::<f64>().map_err(|_| format!("bad number {tok:?}"))?;
        count += 1;
    }
    if count != 16 {
        return Err(format!("expected 16 numbers, got {count}"));
    }
    Pose::from_matrix(&vals, ortho_tol).map_err(|e| e.to_string())
}

pub fn save_pose(pose: &Pose, path: &Path) -> StoreResult<()> {
    let vals = pose.to_matrix();
    let mut out = String::new();
    for row in vals.chunks(4) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| StoreError::Io { path: path_str(path), source })
}

/// `key = value` sensor config; angles in degrees, converted on parse.
/// Keys: H, W, f_up_deg, f_down_deg, max_range, yaw_sign (optional, +1).
pub fn parse_spec_config(text: &str) -> std::result::Result<LidarSpec, String> {
    let mut beams = None;
    let mut columns = None;
    let mut f_up = None;
    let mut f_down = None;
    let mut max_range = None;
    let mut yaw_sign = 1.0f64;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value", lineno + 1));
        };
        let key = key.trim();
        let value = value.trim();
        let num: f64 =
            value.parse().map_err(|_| format!("line {}: bad number {value:?}", lineno + 1))?;
        match key {
            "H" => beams = Some(num as usize),
            "W" => columns = Some(num as usize),
            "f_up_deg" => f_up = Some(num.abs().to_radians()),
            "f_down_deg" => f_down = Some(num.abs().to_radians()),
            "max_range" => max_range = Some(num),
            "yaw_sign" => yaw_sign = num,
            other => return Err(format!("line {}: unknown key {other:?}", lineno + 1)),
        }
    }
    let spec = LidarSpec {
        beams: beams.ok_or("missing key H")?,
        columns: columns.ok_or("missing key W")?,
        fov_up: f_up.ok_or("missing key f_up_deg")?,
        fov_down: f_down.ok_or("missing key f_down_deg")?,
        max_range: max_range.ok_or("missing key max_range")?,
        yaw_sign,
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

pub fn load_spec_config(path: &Path) -> StoreResult<LidarSpec> {
    let text = fs::read_to_string(path)
        .map_err(|source| StoreError::Io { path: path_str(path), source })?;
    parse_spec_config(&text).map_err(|what| StoreError::Malformed {
        path: path_str(path),
        offset: 0,
        what,
    })
}

pub fn save_spec_config(spec: &LidarSpec, path: &Path) -> StoreResult<()> {
    let text = format!(
        "H = {}\nW = {}\nf_up_deg = {}\nf_down_deg = {}\nmax_range = {}\nyaw_sign = {}\n",
        spec.beams,
        spec.columns,
        spec.fov_up.to_degrees(),
        spec.fov_down.to_degrees(),
        spec.max_range,
        spec.yaw_sign,
    );
    fs::write(path, text).map_err(|source| StoreError::Io { path: path_str(path), source })
}
