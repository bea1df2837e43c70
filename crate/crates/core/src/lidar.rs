//! The LiDAR sensor model: beam angles, ray directions, and the
//! bidirectional mapping between 3D points and range pseudo-image pixels.
//!
//! Conventions: pitch alpha = f_up - h * f_v / H decreases with the row
//! index (row 0 is the top beam), yaw beta = -(2w - W) * pi / W decreases
//! with the column index, and a direction is (cos a cos b, cos a sin b,
//! sin a) in the sensor frame. Continuous pixel coordinates quantize by
//! flooring; reconstruction evaluates angles at cell centers (+0.5).

use thiserror::Error;

use crate::geom::{Mat3, Vec3};

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("invalid sensor spec: {0}")]
    BadSpec(String),
    #[error("pixel ({h}, {w}) outside {beams}x{columns} grid")]
    PixelOutOfBounds { h: f64, w: f64, beams: usize, columns: usize },
    #[error("invalid pose: {0}")]
    BadPose(String),
    #[error("invalid range image: {0}")]
    BadImage(String),
}

pub type Result<T> = std::result::Result<T, LidarError>;

/// Sensor geometry: beam layout, vertical field of view, and range limit.
/// `fov_up`/`fov_down` store magnitudes in radians; their sum is the full
/// vertical field of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarSpec {
    pub beams: usize,
    pub columns: usize,
    pub fov_up: f64,
    pub fov_down: f64,
    pub max_range: f64,
    /// +1.0 keeps the yaw equation as written; -1.0 flips it for datasets
    /// with the opposite spin convention.
    pub yaw_sign: f64,
}

impl LidarSpec {
    pub fn new(beams: usize, columns: usize, fov_up: f64, fov_down: f64, max_range: f64) -> Result<Self> {
        let spec = LidarSpec { beams, columns, fov_up, fov_down, max_range, yaw_sign: 1.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beams < 1 {
            return Err(LidarError::BadSpec("need at least 1 beam".into()));
        }
        if self.columns < 2 {
            return Err(LidarError::BadSpec("need at least 2 columns".into()));
        }
        if !(self.fov_up + self.fov_down > 0.0) {
            return Err(LidarError::BadSpec("vertical field of view must be positive".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(LidarError::BadSpec("max range must be positive".into()));
        }
        if self.yaw_sign != 1.0 && self.yaw_sign != -1.0 {
            return Err(LidarError::BadSpec("yaw_sign must be +1 or -1".into()));
        }
        Ok(())
    }

    /// Full vertical field of view f_v = |f_up| + |f_down|.
    pub fn fov_vertical(&self) -> f64 {
        self.fov_up + self.fov_down
    }

    pub fn pixel_count(&self) -> usize {
        self.beams * self.columns
    }
}

/// Which coordinate frame a point cloud lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordFrame {
    Sensor,
    World,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    pub intensity: f64,
}

/// Unordered set of (x, y, z, intensity) records in a named frame.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub frame: CoordFrame,
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn sensor(points: Vec<CloudPoint>) -> Self {
        PointCloud { frame: CoordFrame::Sensor, points }
    }

    pub fn world(points: Vec<CloudPoint>) -> Self {
        PointCloud { frame: CoordFrame::World, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rigid lidar-to-world transform (4x4 homogeneous, stored as R, t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    /// Build from 16 row-major entries, validating the homogeneous bottom row
    /// and the orthonormality of the rotation block.
    pub fn from_matrix(vals: &[f64; 16], ortho_tol: f64) -> Result<Pose> {
        let bottom = &vals[12..16];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(LidarError::BadPose(format!(
                "bottom row must be (0, 0, 0, 1), got ({}, {}, {}, {})",
                bottom[0], bottom[1], bottom[2], bottom[3]
            )));
        }
        let rotation = Mat3 {
            m: [
                [vals[0], vals[1], vals[2]],
                [vals[4], vals[5], vals[6]],
                [vals[8], vals[9], vals[10]],
            ],
        };
        let err = rotation.orthonormality_error();
        if err > ortho_tol {
            return Err(LidarError::BadPose(format!(
                "rotation block not orthonormal (deviation {err:.2e} > {ortho_tol:.0e})"
            )));
        }
        Ok(Pose { rotation, translation: Vec3::new(vals[3], vals[7], vals[11]) })
    }

    pub fn to_matrix(&self) -> [f64; 16] {
        let r = &self.rotation.m;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x,
            r[1][0], r[1][1], r[1][2], t.y,
            r[2][0], r[2][1], r[2][2], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn rotate_direction(&self, d: Vec3) -> Vec3 {
        self.rotation.apply(d)
    }

    /// Inverse rigid transform.
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -rt.apply(self.translation) }
    }

    /// self then other: other * self as matrices.
    pub fn then(&self, other: &Pose) -> Pose {
        Pose {
            rotation: other.rotation.mul(&self.rotation),
            translation: other.rotation.apply(self.translation) + other.translation,
        }
    }
}

/// World-frame ray with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Ray {
        debug_assert!((direction.norm() - 1.0).abs() < 1e-9);
        Ray { origin, direction }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// H x W grid of (distance, intensity, mask) pseudo-pixels for one pose.
/// Distance 0 marks a dropped beam; intensity is zeroed there.
#[derive(Debug, Clone)]
pub struct RangeImage {
    pub spec: LidarSpec,
    distance: Vec<f64>,
    intensity: Vec<f64>,
    mask: Vec<bool>,
}

impl RangeImage {
    pub fn empty(spec: LidarSpec) -> RangeImage {
        let n = spec.pixel_count();
        RangeImage { spec, distance: vec![0.0; n], intensity: vec![0.0; n], mask: vec![false; n] }
    }

    /// Build from raw planes, checking the cross-channel invariants.
    pub fn from_planes(
        spec: LidarSpec,
        distance: Vec<f64>,
        intensity: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<RangeImage> {
        let n = spec.pixel_count();
        if distance.len() != n || intensity.len() != n || mask.len() != n {
            return Err(LidarError::BadImage(format!(
                "plane length mismatch: expected {n}, got {}/{}/{}",
                distance.len(),
                intensity.len(),
                mask.len()
            )));
        }
        let img = RangeImage { spec, distance, intensity, mask };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        for idx in 0..self.distance.len() {
            let (d, i, m) = (self.distance[idx], self.intensity[idx], self.mask[idx]);
            if m {
                if !(d > 0.0) || d > self.spec.max_range {
                    return Err(LidarError::BadImage(format!(
                        "pixel {idx}: masked-in distance {d} outside (0, {}]",
                        self.spec.max_range
                    )));
                }
                if !(0.0..=1.0).contains(&i) {
                    return Err(LidarError::BadImage(format!(
                        "pixel {idx}: intensity {i} outside [0, 1]"
                    )));
                }
            } else if d != 0.0 || i != 0.0 {
                return Err(LidarError::BadImage(format!(
                    "pixel {idx}: dropped pixel must store zeros, got d={d} i={i}"
                )));
            }
        }
        Ok(())
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.spec.beams && col < self.spec.columns);
        row * self.spec.columns + col
    }

    pub fn set_return(&mut self, row: usize, col: usize, distance: f64, intensity: f64) {
        let idx = self.index(row, col);
        self.distance[idx] = distance;
        self.intensity[idx] = intensity;
        self.mask[idx] = true;
    }

    pub fn clear_return(&mut self, row: usize, col: usize) {
        let idx = self.index(row, col);
        self.distance[idx] = 0.0;
        self.intensity[idx] = 0.0;
        self.mask[idx] = false;
    }

    pub fn distance_at(&self, row: usize, col: usize) -> f64 {
        self.distance[self.index(row, col)]
    }

    pub fn intensity_at(&self, row: usize, col: usize) -> f64 {
        self.intensity[self.index(row, col)]
    }

    pub fn mask_at(&self, row: usize, col: usize) -> bool {
        self.mask[self.index(row, col)]
    }

    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensity
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Result of projecting a sensor-frame point onto the pixel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Real-valued pixel coordinates and range. Quantize with
    /// `quantize_pixel` to address the grid.
    Hit { h: f64, w: f64, distance: f64 },
    OutOfView(OutOfView),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutOfView {
    BeyondRange,
    AbovePitch,
    BelowPitch,
    AtOrigin,
}

/// Direction of the beam through real-valued pixel coordinates (h, w) in the
/// sensor frame. Integer coordinates address cell corners; pass +0.5 offsets
/// for cell centers.
pub fn pixel_to_direction(spec: &LidarSpec, h: f64, w: f64) -> Result<Vec3> {
    if !(0.0..spec.beams as f64).contains(&h) || !(0.0..spec.columns as f64).contains(&w) {
        return Err(LidarError::PixelOutOfBounds { h, w, beams: spec.beams, columns: spec.columns });
    }
    let alpha = spec.fov_up - h * spec.fov_vertical() / spec.beams as f64;
    let beta = spec.yaw_sign * -((2.0 * w - spec.columns as f64) * std::f64::consts::PI
        / spec.columns as f64);
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    Ok(Vec3::new(ca * cb, ca * sb, sa))
}

/// Project a sensor-frame point to real-valued pixel coordinates and range.
/// Points outside the vertical field of view or beyond the range limit are
/// reported as out of view rather than as errors.
pub fn point_to_pixel(spec: &LidarSpec, p: Vec3) -> Projection {
    let d = p.norm();
    if d == 0.0 {
        return Projection::OutOfView(OutOfView::AtOrigin);
    }
    if d > spec.max_range {
        return Projection::OutOfView(OutOfView::BeyondRange);
    }
    let pitch = (p.z / d).clamp(-1.0, 1.0).asin();
    if pitch > spec.fov_up + 1e-12 {
        return Projection::OutOfView(OutOfView::AbovePitch);
    }
    if pitch < -spec.fov_down - 1e-12 {
        return Projection::OutOfView(OutOfView::BelowPitch);
    }
    let fv = spec.fov_vertical();
    let h = (1.0 - (pitch + spec.fov_down) / fv) * spec.beams as f64;
    let beta = spec.yaw_sign * p.y.atan2(p.x);
    let w = 0.5 * (1.0 - beta / std::f64::consts::PI) * spec.columns as f64;
    let w = w.rem_euclid(spec.columns as f64);
    Projection::Hit { h: h.clamp(0.0, spec.beams as f64), w, distance: d }
}

/// Floor real-valued pixel coordinates to grid cells, clamping the pitch edge
/// and wrapping the yaw seam.
pub fn quantize_pixel(spec: &LidarSpec, h: f64, w: f64) -> (usize, usize) {
    let row = (h.floor() as isize).clamp(0, spec.beams as isize - 1) as usize;
    let col = (w.floor() as isize).rem_euclid(spec.columns as isize) as usize;
    (row, col)
}

/// Render a sensor-frame cloud into a range image keeping, per pixel, the
/// closest projecting point (ties broken by lower point index). Returns the
/// image and the number of skipped out-of-view points.
pub fn cloud_to_range_image(spec: &LidarSpec, cloud: &PointCloud) -> (RangeImage, usize) {
    let mut img = RangeImage::empty(*spec);
    let mut skipped = 0usize;
    for point in &cloud.points {
        match point_to_pixel(spec, point.position) {
            Projection::Hit { h, w, distance } => {
                let (row, col) = quantize_pixel(spec, h, w);
                let idx = img.index(row, col);
                if !img.mask[idx] || distance < img.distance[idx] {
                    img.distance[idx] = distance;
                    img.intensity[idx] = point.intensity;
                    img.mask[idx] = true;
                }
            }
            Projection::OutOfView(_) => skipped += 1,
        }
    }
    (img, skipped)
}

/// One sensor-frame point per valid pixel, reconstructed at cell centers.
pub fn range_image_to_cloud(spec: &LidarSpec, img: &RangeImage) -> PointCloud {
    let mut points = Vec::with_capacity(img.valid_count());
    for row in 0..spec.beams {
        for col in 0..spec.columns {
            if !img.mask_at(row, col) {
                continue;
            }
            let dir = pixel_to_direction(spec, row as f64 + 0.5, col as f64 + 0.5)
                .expect("cell centers are in bounds");
            points.push(CloudPoint {
                position: dir * img.distance_at(row, col),
                intensity: img.intensity_at(row, col),
            });
        }
    }
    PointCloud::sensor(points)
}

/// World-frame ray through real-valued pixel coordinates under a pose.
pub fn ray_for_pixel(spec: &LidarSpec, pose: &Pose, h: f64, w: f64) -> Result<Ray> {
    let dir = pixel_to_direction(spec, h, w)?;
    Ok(Ray { origin: pose.translation, direction: pose.rotate_direction(dir) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    pub(crate) fn symmetric_spec() -> LidarSpec {
        LidarSpec::new(4, 8, 10f64.to_radians(), 10f64.to_radians(), 100.0).unwrap()
    }

    #[test]
    fn direction_at_grid_midpoint_is_forward() {
        let spec = symmetric_spec();
        let d = pixel_to_direction(&spec, 2.0, 4.0).unwrap();
        assert!((d - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn direction_quarter_turn_left() {
        let spec = symmetric_spec();
        let d = pixel_to_direction(&spec, 2.0, 2.0).unwrap();
        assert!((d - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn direction_top_row_pitches_up() {
        let spec = symmetric_spec();
        let d = pixel_to_direction(&spec, 0.0, 4.0).unwrap();
        let a = 10f64.to_radians();
        assert!((d - Vec3::new(a.cos(), 0.0, a.sin())).norm() < 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_is_an_error() {
        let spec = symmetric_spec();
        assert!(pixel_to_direction(&spec, 4.0, 0.0).is_err());
        assert!(pixel_to_direction(&spec, -0.1, 0.0).is_err());
        assert!(pixel_to_direction(&spec, 0.0, 8.0).is_err());
    }

    #[test]
    fn project_axis_points() {
        let spec = symmetric_spec();
        match point_to_pixel(&spec, Vec3::new(1.0, 0.0, 0.0)) {
            Projection::Hit { h, w, distance } => {
                assert!((h - 2.0).abs() < 1e-12);
                assert!((w - 4.0).abs() < 1e-12);
                assert!((distance - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        match point_to_pixel(&spec, Vec3::new(0.0, 1.0, 0.0)) {
            Projection::Hit { h, w, .. } => {
                assert!((h - 2.0).abs() < 1e-12);
                assert!((w - 2.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn project_rejects_out_of_view() {
        let spec = symmetric_spec();
        assert_eq!(
            point_to_pixel(&spec, Vec3::new(0.0, 0.0, 1.0)),
            Projection::OutOfView(OutOfView::AbovePitch)
        );
        assert_eq!(
            point_to_pixel(&spec, Vec3::new(200.0, 0.0, 0.0)),
            Projection::OutOfView(OutOfView::BeyondRange)
        );
    }

    fn random_in_fov_point(rng: &mut impl Rng, spec: &LidarSpec) -> Vec3 {
        let pitch = rng.gen_range(-spec.fov_down * 0.999..spec.fov_up * 0.999);
        let yaw = rng.gen_range(-std::f64::consts::PI * 0.999..std::f64::consts::PI);
        let d = rng.gen_range(0.5..spec.max_range * 0.99);
        Vec3::new(
            d * pitch.cos() * yaw.cos(),
            d * pitch.cos() * yaw.sin(),
            d * pitch.sin(),
        )
    }

    #[test]
    fn real_valued_round_trip_is_tight() {
        let spec = symmetric_spec();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let p = random_in_fov_point(&mut rng, &spec);
            let Projection::Hit { h, w, distance } = point_to_pixel(&spec, p) else {
                panic!("in-FOV point projected out of view: {p:?}");
            };
            let dir = pixel_to_direction(&spec, h.min(spec.beams as f64 - 1e-12), w).unwrap();
            let unit = p * (1.0 / p.norm());
            assert!(dir.dot(unit) > 1.0 - 1e-9, "misaligned: {}", dir.dot(unit));
            assert!((distance - p.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn quantized_round_trip_within_half_pixel_pitch() {
        let spec = symmetric_spec();
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let half_alpha = 0.5 * spec.fov_vertical() / spec.beams as f64;
        let half_beta = std::f64::consts::PI / spec.columns as f64;
        for _ in 0..2000 {
            let p = random_in_fov_point(&mut rng, &spec);
            let Projection::Hit { h, w, .. } = point_to_pixel(&spec, p) else { unreachable!() };
            let (row, col) = quantize_pixel(&spec, h, w);
            let dir = pixel_to_direction(&spec, row as f64 + 0.5, col as f64 + 0.5).unwrap();
            let true_pitch = (p.z / p.norm()).asin();
            let rec_pitch = dir.z.asin();
            assert!((true_pitch - rec_pitch).abs() <= half_alpha + 1e-12);
            let true_yaw = p.y.atan2(p.x);
            let rec_yaw = dir.y.atan2(dir.x);
            let mut dyaw = (true_yaw - rec_yaw).abs();
            if dyaw > std::f64::consts::PI {
                dyaw = 2.0 * std::f64::consts::PI - dyaw;
            }
            assert!(dyaw <= half_beta + 1e-12);
        }
    }

    #[test]
    fn angles_decrease_with_pixel_index() {
        let spec = symmetric_spec();
        let mut prev_pitch = f64::INFINITY;
        for h in 0..spec.beams {
            let d = pixel_to_direction(&spec, h as f64 + 0.5, 0.5).unwrap();
            let pitch = d.z.asin();
            assert!(pitch < prev_pitch);
            prev_pitch = pitch;
        }
        // beta is monotone decreasing in w away from the wrap seam
        let mut prev_yaw = f64::INFINITY;
        for w in 0..spec.columns {
            let d = pixel_to_direction(&spec, 2.0, w as f64 + 0.5).unwrap();
            let yaw = d.y.atan2(d.x);
            assert!(yaw < prev_yaw, "w={w}: {yaw} !< {prev_yaw}");
            prev_yaw = yaw;
        }
    }

    #[test]
    fn zbuffer_keeps_closest_point() {
        let spec = symmetric_spec();
        let dir = pixel_to_direction(&spec, 2.5, 4.5).unwrap();
        let cloud = PointCloud::sensor(vec![
            CloudPoint { position: dir * 7.0, intensity: 0.7 },
            CloudPoint { position: dir * 5.0, intensity: 0.5 },
        ]);
        let (img, skipped) = cloud_to_range_image(&spec, &cloud);
        assert_eq!(skipped, 0);
        assert_eq!(img.valid_count(), 1);
        assert!((img.distance_at(2, 4) - 5.0).abs() < 1e-12);
        assert!((img.intensity_at(2, 4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_cloud_projects_to_empty_image() {
        let spec = symmetric_spec();
        let (img, skipped) = cloud_to_range_image(&spec, &PointCloud::sensor(vec![]));
        assert_eq!(skipped, 0);
        assert_eq!(img.valid_count(), 0);
        assert!(img.distances().iter().all(|d| *d == 0.0));
    }

    #[test]
    fn distance_ties_break_by_point_index() {
        let spec = symmetric_spec();
        let dir = pixel_to_direction(&spec, 2.5, 4.5).unwrap();
        let cloud = PointCloud::sensor(vec![
            CloudPoint { position: dir * 5.0, intensity: 0.1 },
            CloudPoint { position: dir * 5.0, intensity: 0.9 },
        ]);
        let (img, _) = cloud_to_range_image(&spec, &cloud);
        assert!((img.intensity_at(2, 4) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_uses_cell_centers() {
        let spec = symmetric_spec();
        let mut img = RangeImage::empty(spec);
        img.set_return(2, 4, 1.0, 0.5);
        let cloud = range_image_to_cloud(&spec, &img);
        assert_eq!(cloud.len(), 1);
        let want = pixel_to_direction(&spec, 2.5, 4.5).unwrap();
        assert!((cloud.points[0].position - want).norm() < 1e-12);
        assert!((cloud.points[0].intensity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_masked_false_yields_empty_cloud() {
        let spec = symmetric_spec();
        let cloud = range_image_to_cloud(&spec, &RangeImage::empty(spec));
        assert!(cloud.is_empty());
    }

    #[test]
    fn projection_round_trip_lands_near_original() {
        let spec = LidarSpec::new(16, 64, 15f64.to_radians(), 15f64.to_radians(), 100.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let points: Vec<CloudPoint> = (0..1000)
            .map(|_| CloudPoint { position: random_in_fov_point(&mut rng, &spec), intensity: 0.5 })
            .collect();
        let cloud = PointCloud::sensor(points.clone());
        let (img, skipped) = cloud_to_range_image(&spec, &cloud);
        assert_eq!(skipped, 0);
        let rec = range_image_to_cloud(&spec, &img);
        // every reconstructed point must be near some original (brute force)
        for rp in &rec.points {
            let quant = rp.position.norm()
                * (spec.fov_vertical() / spec.beams as f64
                    + 2.0 * std::f64::consts::PI / spec.columns as f64);
            let best = points
                .iter()
                .map(|p| (p.position - rp.position).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= quant, "reconstructed point {best} away, allowed {quant}");
        }
    }

    #[test]
    fn ray_for_pixel_respects_pose() {
        let spec = symmetric_spec();
        let ray = ray_for_pixel(&spec, &Pose::IDENTITY, 2.0, 4.0).unwrap();
        assert!((ray.origin - Vec3::ZERO).norm() < 1e-12);
        assert!((ray.direction - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);

        let shifted = Pose { rotation: Mat3::IDENTITY, translation: Vec3::new(5.0, 0.0, 0.0) };
        let ray = ray_for_pixel(&spec, &shifted, 2.0, 4.0).unwrap();
        assert!((ray.origin - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);

        let turned = Pose {
            rotation: Mat3::rotation_z(std::f64::consts::FRAC_PI_2),
            translation: Vec3::ZERO,
        };
        let ray = ray_for_pixel(&spec, &turned, 2.0, 4.0).unwrap();
        assert!((ray.direction - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pose_from_matrix_validates() {
        let mut vals = Pose::IDENTITY.to_matrix();
        vals[15] = 2.0;
        assert!(Pose::from_matrix(&vals, 1e-6).is_err());
        let mut vals = Pose::IDENTITY.to_matrix();
        vals[0] = 1.5;
        assert!(Pose::from_matrix(&vals, 1e-6).is_err());
    }

    #[test]
    fn projection_is_permutation_invariant_without_ties() {
        let spec = symmetric_spec();
        let mut rng = ChaCha20Rng::seed_from_u64(45);
        let mut points: Vec<CloudPoint> = (0..200)
            .map(|_| CloudPoint { position: random_in_fov_point(&mut rng, &spec), intensity: 0.4 })
            .collect();
        let (a, _) = cloud_to_range_image(&spec, &PointCloud::sensor(points.clone()));
        points.reverse();
        let (b, _) = cloud_to_range_image(&spec, &PointCloud::sensor(points));
        assert_eq!(a.distances(), b.distances());
        assert_eq!(a.mask(), b.mask());
    }
}
