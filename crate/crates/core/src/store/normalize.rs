//! Scene normalization: either uniform scaling of the world frame into the
//! unit cube, or a radial contraction that maps unbounded coordinates into a
//! bounded ball. Both record an exact inverse for rendering back to meters.

use super::{Scene, Split, StoreError, StoreResult};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    Scale,
    Contract,
}

/// World-to-normalized mapping fitted on the train split.
///
/// Scale mode: x -> s * (x - center), with s chosen so train points land in
/// the unit cube with a 5% margin; distances scale by s.
///
/// Contract mode: x -> contract(x - center, r, b); positions are mapped
/// pointwise and ray parameters stay in metric units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub mode: NormalizeMode,
    pub center: Vec3,
    pub scale: f64,
    pub radius: f64,
    pub blend: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            mode: NormalizeMode::Scale,
            center: Vec3::ZERO,
            scale: 1.0,
            radius: 10.0,
            blend: 1.0,
        }
    }

    /// Map a world point into normalized coordinates.
    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        let centered = p - self.center;
        match self.mode {
            NormalizeMode::Scale => centered * self.scale,
            NormalizeMode::Contract => contract_point(centered, self.radius, self.blend),
        }
    }

    /// Exact inverse of `apply_point` (contract branch: for norms < 1 + b).
    pub fn invert_point(&self, q: Vec3) -> Vec3 {
        let centered = match self.mode {
            NormalizeMode::Scale => q * (1.0 / self.scale),
            NormalizeMode::Contract => contract_point_inverse(q, self.radius, self.blend),
        };
        centered + self.center
    }

    /// Multiplier from metric ray length to normalized ray length.
    pub fn distance_scale(&self) -> f64 {
        match self.mode {
            NormalizeMode::Scale => self.scale,
            NormalizeMode::Contract => 1.0,
        }
    }

    /// Ray origin in the space rays are parameterized in (normalized units
    /// for scale mode, centered metric units for contract mode).
    pub fn ray_origin(&self, world_origin: Vec3) -> Vec3 {
        match self.mode {
            NormalizeMode::Scale => (world_origin - self.center) * self.scale,
            NormalizeMode::Contract => world_origin - self.center,
        }
    }

    /// Sample position for field evaluation given a ray origin from
    /// `ray_origin`, a unit direction, and a ray parameter.
    pub fn sample_position(&self, origin: Vec3, direction: Vec3, t: f64) -> Vec3 {
        let p = origin + direction * t;
        match self.mode {
            NormalizeMode::Scale => p,
            NormalizeMode::Contract => contract_point(p, self.radius, self.blend),
        }
    }
}

/// Radial contraction: x/r inside radius r, and a blend that approaches
/// norm 1 + b as ||x|| grows.
pub fn contract_point(x: Vec3, r: f64, b: f64) -> Vec3 {
    let n = x.norm();
    if n <= r {
        x * (1.0 / r)
    } else {
        x * ((1.0 + b - b * r / n) / n)
    }
}

/// Inverse of `contract_point` for outputs with norm < 1 + b.
pub fn contract_point_inverse(y: Vec3, r: f64, b: f64) -> Vec3 {
    let m = y.norm();
    if m <= 1.0 {
        y * r
    } else {
        debug_assert!(m < 1.0 + b, "contract inverse undefined at norm {m}");
        let n = b * r / (1.0 + b - m);
        y * (n / m)
    }
}

/// Parameters for `normalize_scene`.
#[derive(Debug, Clone, Copy)]
pub struct NormalizeParams {
    pub radius: f64,
    pub blend: f64,
}

impl Default for NormalizeParams {
    fn default() -> Self {
        NormalizeParams { radius: 10.0, blend: 1.0 }
    }
}

/// Margin applied to the scale fit so train points sit strictly inside the
/// unit cube.
const SCALE_MARGIN: f64 = 1.05;

/// Fit a normalization on the train split and return the transformed scene.
///
/// The scene center is the pose translation of the middle frame (manifest
/// order). Scale mode rescales sensor clouds, pose translations and the range
/// limit; contract mode re-centers poses and leaves metric units in place.
pub fn normalize_scene(
    scene: &Scene,
    mode: NormalizeMode,
    params: NormalizeParams,
) -> StoreResult<(Scene, NormalizationTransform)> {
    if scene.frames.is_empty() {
        return Err(StoreError::BadScene("cannot normalize an empty scene".into()));
    }
    let center = scene.frames[scene.frames.len() / 2].pose.translation;

    let transform = match mode {
        NormalizeMode::Scale => {
            let mut max_abs = 0.0f64;
            for frame in scene.frames.iter().filter(|f| f.split == Split::Train) {
                for p in &frame.cloud.points {
                    let w = frame.pose.transform_point(p.position) - center;
                    max_abs = max_abs.max(w.x.abs()).max(w.y.abs()).max(w.z.abs());
                }
            }
            if max_abs == 0.0 {
                return Err(StoreError::BadScene(
                    "degenerate scene: train points coincide with the center".into(),
                ));
            }
            NormalizationTransform {
                mode,
                center,
                scale: 1.0 / (SCALE_MARGIN * max_abs),
                radius: params.radius,
                blend: params.blend,
            }
        }
        NormalizeMode::Contract => {
            if !(params.radius > 0.0 && params.blend > 0.0) {
                return Err(StoreError::BadScene("contract requires r > 0 and b > 0".into()));
            }
            NormalizationTransform {
                mode,
                center,
                scale: 1.0,
                radius: params.radius,
                blend: params.blend,
            }
        }
    };

    let mut out = scene.clone();
    match mode {
        NormalizeMode::Scale => {
            let s = transform.scale;
            out.spec.max_range *= s;
            for frame in &mut out.frames {
                frame.pose.translation = (frame.pose.translation - center) * s;
                for p in &mut frame.cloud.points {
                    p.position = p.position * s;
                }
            }
        }
        NormalizeMode::Contract => {
            for frame in &mut out.frames {
                frame.pose.translation = frame.pose.translation - center;
            }
        }
    }
    Ok((out, transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::{CloudPoint, LidarSpec, PointCloud, Pose};
    use crate::store::Frame;

    fn frame_at(x: f64, pts: Vec<Vec3>, split: Split) -> Frame {
        Frame {
            cloud: PointCloud::sensor(
                pts.into_iter().map(|p| CloudPoint { position: p, intensity: 0.5 }).collect(),
            ),
            pose: Pose {
                rotation: crate::Mat3::IDENTITY,
                translation: Vec3::new(x, 0.0, 0.0),
            },
            split,
        }
    }

    fn spec() -> LidarSpec {
        LidarSpec::new(4, 8, 0.2, 0.2, 100.0).unwrap()
    }

    #[test]
    fn scale_fits_train_points_into_unit_cube() {
        let scene = Scene::new(
            spec(),
            vec![frame_at(
                0.0,
                vec![Vec3::new(50.0, -50.0, 10.0), Vec3::new(-50.0, 20.0, -50.0)],
                Split::Train,
            )],
        )
        .unwrap();
        let (norm, tf) = normalize_scene(&scene, NormalizeMode::Scale, Default::default()).unwrap();
        assert!((tf.scale - 1.0 / 52.5).abs() < 1e-12);
        for frame in &norm.frames {
            for p in &frame.cloud.points {
                let w = frame.pose.transform_point(p.position);
                assert!(w.x.abs() <= 1.0 && w.y.abs() <= 1.0 && w.z.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn scale_round_trip_is_tight() {
        let scene = Scene::new(
            spec(),
            vec![frame_at(3.0, vec![Vec3::new(12.0, 5.0, -2.0)], Split::Train)],
        )
        .unwrap();
        let (_, tf) = normalize_scene(&scene, NormalizeMode::Scale, Default::default()).unwrap();
        for p in [Vec3::new(1.0, 2.0, 3.0), Vec3::new(-14.5, 0.2, 9.9)] {
            let back = tf.invert_point(tf.apply_point(p));
            assert!((back - p).norm() < 1e-9 * p.norm().max(1.0));
        }
    }

    #[test]
    fn eval_frames_do_not_leak_into_the_fit() {
        let scene = Scene::new(
            spec(),
            vec![
                frame_at(0.0, vec![Vec3::new(10.0, 0.0, 0.0)], Split::Train),
                frame_at(0.0, vec![Vec3::new(1000.0, 0.0, 0.0)], Split::Eval),
            ],
        )
        .unwrap();
        let (_, tf) = normalize_scene(&scene, NormalizeMode::Scale, Default::default()).unwrap();
        assert!((tf.scale - 1.0 / 10.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_scene_is_an_error() {
        let scene =
            Scene::new(spec(), vec![frame_at(0.0, vec![Vec3::ZERO, Vec3::ZERO], Split::Train)])
                .unwrap();
        assert!(normalize_scene(&scene, NormalizeMode::Scale, Default::default()).is_err());
    }

    #[test]
    fn contract_branch_values() {
        // outside the radius: (1 + b - b r / ||x||) * x / ||x||
        let y = contract_point(Vec3::new(20.0, 0.0, 0.0), 10.0, 1.0);
        assert!((y - Vec3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
        // inside: x / r
        let y = contract_point(Vec3::new(5.0, 0.0, 0.0), 10.0, 1.0);
        assert!((y - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        // continuity at the radius
        let y = contract_point(Vec3::new(10.0, 0.0, 0.0), 10.0, 1.0);
        assert!((y - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let just_out = contract_point(Vec3::new(10.0 + 1e-9, 0.0, 0.0), 10.0, 1.0);
        assert!((just_out - y).norm() < 1e-9);
    }

    #[test]
    fn contract_is_norm_bounded_and_invertible() {
        let (r, b) = (10.0, 1.0);
        for p in [
            Vec3::new(0.1, -0.2, 0.05),
            Vec3::new(9.0, 3.0, -1.0),
            Vec3::new(50.0, -80.0, 120.0),
            Vec3::new(1e6, 0.0, 0.0),
        ] {
            let y = contract_point(p, r, b);
            assert!(y.norm() <= 1.0 + b + 1e-12);
            if y.norm() < 1.0 + b - 1e-9 {
                let back = contract_point_inverse(y, r, b);
                assert!((back - p).norm() < 1e-6 * p.norm().max(1.0), "{p:?} -> {back:?}");
            }
        }
    }
}
