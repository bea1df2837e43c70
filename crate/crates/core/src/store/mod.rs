//! Data ingestion and persistence: file formats, scene manifests, world-frame
//! aggregation, and scene normalization.

mod formats;
mod normalize;

pub use formats::{
    load_cloud, load_pose, load_range_image, load_spec_config, parse_pose_text,
    parse_spec_config, save_cloud, save_pose, save_range_image, save_spec_config, CLOUD_MAGIC,
    RANGE_MAGIC,
};
pub use normalize::{contract_point, contract_point_inverse, NormalizationTransform, NormalizeMode};

use std::path::Path;

use thiserror::Error;

use crate::lidar::{CloudPoint, LidarError, LidarSpec, PointCloud, Pose};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: truncated at byte {offset} ({what})")]
    Truncated { path: String, offset: usize, what: String },
    #[error("{path}: non-finite value at byte {offset}")]
    NonFinite { path: String, offset: usize },
    #[error("{path}: malformed at byte {offset}: {what}")]
    Malformed { path: String, offset: usize, what: String },
    #[error("{path}: grid is {}x{} but sensor spec says {}x{}", file.0, file.1, spec.0, spec.1)]
    SpecMismatch { path: String, file: (usize, usize), spec: (usize, usize) },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest line {line}: {what}")]
    BadManifest { line: usize, what: String },
    #[error("scene: {0}")]
    BadScene(String),
    #[error(transparent)]
    Lidar(#[from] LidarError),
}

pub type StoreResult<T> = std::result::Result<T, StoreError>;

/// Train/eval split tag per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Frame {
    /// Sensor-frame observation for this pose.
    pub cloud: PointCloud,
    /// lidar2world.
    pub pose: Pose,
    pub split: Split,
}

/// Ordered collection of observations sharing one sensor spec.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: LidarSpec,
    pub frames: Vec<Frame>,
}

impl Scene {
    pub fn new(spec: LidarSpec, frames: Vec<Frame>) -> StoreResult<Scene> {
        if !frames.iter().any(|f| f.split == Split::Train) {
            return Err(StoreError::BadScene("need at least one train frame".into()));
        }
        Ok(Scene { spec, frames })
    }

    pub fn train_frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| f.split == Split::Train)
    }

    pub fn eval_frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| f.split == Split::Eval)
    }
}

/// Pose orthonormality tolerance applied to manifest-referenced pose files.
pub const MANIFEST_POSE_TOL: f64 = 1e-4;

/// Manifest: one `<cloud-path> <pose-path> <train|eval>` line per frame,
/// `#` comments. Paths resolve relative to the manifest's directory.
pub fn load_manifest(path: &Path, spec: &LidarSpec) -> StoreResult<Scene> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(StoreError::BadManifest {
                line: lineno,
                what: format!("expected `<cloud> <pose> <train|eval>`, got {} fields", parts.len()),
            });
        }
        let split = match parts[2] {
            "train" => Split::Train,
            "eval" => Split::Eval,
            other => {
                return Err(StoreError::BadManifest {
                    line: lineno,
                    what: format!("unknown split tag {other:?}"),
                })
            }
        };
        let cloud = load_cloud(&base.join(parts[0])).map_err(|e| StoreError::BadManifest {
            line: lineno,
            what: e.to_string(),
        })?;
        let pose = load_pose(&base.join(parts[1]), MANIFEST_POSE_TOL).map_err(|e| {
            StoreError::BadManifest { line: lineno, what: e.to_string() }
        })?;
        frames.push(Frame { cloud, pose, split });
    }
    Scene::new(*spec, frames)
}

/// Concatenate all frames mapped through their poses into one world-frame
/// cloud. The second return value holds each point's source frame index.
pub fn aggregate_frames(scene: &Scene) -> (PointCloud, Vec<u32>) {
    let total: usize = scene.frames.iter().map(|f| f.cloud.len()).sum();
    let mut points = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    for (fi, frame) in scene.frames.iter().enumerate() {
        for p in &frame.cloud.points {
            points.push(CloudPoint {
                position: frame.pose.transform_point(p.position),
                intensity: p.intensity,
            });
            provenance.push(fi as u32);
        }
    }
    (PointCloud::world(points), provenance)
}

/// Aggregate only the train frames (the novel-view rendering source).
pub fn aggregate_train_frames(scene: &Scene) -> (PointCloud, Vec<u32>) {
    let train = Scene {
        spec: scene.spec,
        frames: scene.train_frames().cloned().collect(),
    };
    aggregate_frames(&train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;
    use tempfile::tempdir;

    fn spec() -> LidarSpec {
        LidarSpec::new(4, 8, 0.2, 0.2, 100.0).unwrap()
    }

    fn point(x: f64, y: f64, z: f64) -> CloudPoint {
        CloudPoint { position: Vec3::new(x, y, z), intensity: 0.5 }
    }

    #[test]
    fn manifest_loads_frames_in_order() {
        let dir = tempdir().unwrap();
        let c1 = PointCloud::sensor(vec![point(1.0, 0.0, 0.0)]);
        let c2 = PointCloud::sensor(vec![point(2.0, 0.0, 0.0), point(3.0, 0.0, 0.0)]);
        save_cloud(&c1, &dir.path().join("a.lnpc")).unwrap();
        save_cloud(&c2, &dir.path().join("b.lnpc")).unwrap();
        save_pose(&Pose::IDENTITY, &dir.path().join("p.txt")).unwrap();
        std::fs::write(
            dir.path().join("scene.txt"),
            "# two frames\na.lnpc p.txt train\nb.lnpc p.txt eval\n",
        )
        .unwrap();
        let scene = load_manifest(&dir.path().join("scene.txt"), &spec()).unwrap();
        assert_eq!(scene.frames.len(), 2);
        assert_eq!(scene.frames[0].cloud.len(), 1);
        assert_eq!(scene.frames[1].cloud.len(), 2);
        assert_eq!(scene.frames[1].split, Split::Eval);
        assert_eq!(scene.train_frames().count(), 1);
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let dir = tempdir().unwrap();
        save_cloud(&PointCloud::sensor(vec![point(1.0, 0.0, 0.0)]), &dir.path().join("a.lnpc"))
            .unwrap();
        std::fs::write(dir.path().join("p.txt"), vec!["0.0"; 15].join(" ")).unwrap();
        std::fs::write(dir.path().join("m.txt"), "a.lnpc p.txt train\n").unwrap();
        match load_manifest(&dir.path().join("m.txt"), &spec()) {
            Err(StoreError::BadManifest { line: 1, what }) => {
                assert!(what.contains("15"), "{what}")
            }
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(dir.path().join("m2.txt"), "missing.lnpc p.txt train\n").unwrap();
        assert!(matches!(
            load_manifest(&dir.path().join("m2.txt"), &spec()),
            Err(StoreError::BadManifest { line: 1, .. })
        ));
    }

    #[test]
    fn manifest_rejects_non_orthonormal_pose() {
        let dir = tempdir().unwrap();
        save_cloud(&PointCloud::sensor(vec![point(1.0, 0.0, 0.0)]), &dir.path().join("a.lnpc"))
            .unwrap();
        // rotation block scaled by 1.001: off by 2e-3 > 1e-4
        std::fs::write(
            dir.path().join("p.txt"),
            "1.001 0 0 0\n0 1.001 0 0\n0 0 1.001 0\n0 0 0 1\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("m.txt"), "a.lnpc p.txt train\n").unwrap();
        match load_manifest(&dir.path().join("m.txt"), &spec()) {
            Err(StoreError::BadManifest { line: 1, what }) => {
                assert!(what.contains("orthonormal"), "{what}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scene_requires_a_train_frame() {
        let frames = vec![Frame {
            cloud: PointCloud::sensor(vec![]),
            pose: Pose::IDENTITY,
            split: Split::Eval,
        }];
        assert!(Scene::new(spec(), frames).is_err());
    }

    #[test]
    fn aggregate_identity_pose_is_identity() {
        let cloud = PointCloud::sensor(vec![point(1.0, 2.0, 0.1), point(-3.0, 0.5, -0.2)]);
        let scene = Scene::new(
            spec(),
            vec![Frame { cloud: cloud.clone(), pose: Pose::IDENTITY, split: Split::Train }],
        )
        .unwrap();
        let (world, prov) = aggregate_frames(&scene);
        assert_eq!(world.len(), 2);
        assert_eq!(prov, vec![0, 0]);
        for (a, b) in world.points.iter().zip(&cloud.points) {
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn aggregate_applies_per_frame_offsets() {
        let cloud = PointCloud::sensor(vec![point(1.0, 0.0, 0.0)]);
        let shifted = Pose {
            rotation: crate::Mat3::IDENTITY,
            translation: Vec3::new(1.0, 0.0, 0.0),
        };
        let scene = Scene::new(
            spec(),
            vec![
                Frame { cloud: cloud.clone(), pose: Pose::IDENTITY, split: Split::Train },
                Frame { cloud, pose: shifted, split: Split::Train },
            ],
        )
        .unwrap();
        let (world, prov) = aggregate_frames(&scene);
        assert_eq!(world.len(), 2);
        assert_eq!(prov, vec![0, 1]);
        assert!((world.points[0].position - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((world.points[1].position - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
    }
}
