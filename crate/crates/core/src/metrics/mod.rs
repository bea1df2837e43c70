//! Evaluation metrics for synthesized views: point-cloud distances
//! (Chamfer, F-score, earth mover's distance, point-count ratio), range-image
//! depth accuracy, and intensity image quality.

mod assignment;
mod image;
mod kdtree;

pub use assignment::solve_assignment;
pub use image::{intensity_metrics, range_metrics, ssim, DEPTH_EPS};
pub use kdtree::KdTree;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::lidar::{range_image_to_cloud, PointCloud, RangeImage};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point-cloud metric over an empty cloud")]
    EmptyCloud,
    #[error("range images have different sensor specs")]
    SpecMismatch,
    #[error("no mutually valid pixels to compare")]
    NoOverlap,
    #[error("earth mover's distance: no group has points on both sides")]
    NoComparableGroups,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// All scalar metrics for one (predicted, ground-truth) view pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub chamfer: f64,
    pub fscore: f64,
    pub emd: f64,
    pub np_ratio: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n_pred_points: usize,
    pub n_gt_points: usize,
}

impl MetricsReport {
    /// Fixed-key `key = value` text format, six decimal places.
    pub fn to_text(&self) -> String {
        format!(
            "chamfer = {:.6}\nfscore = {:.6}\nemd = {:.6}\nnp_ratio = {:.6}\nrmse = {:.6}\n\
             delta1 = {:.6}\ndelta2 = {:.6}\ndelta3 = {:.6}\npsnr = {:.6}\nssim = {:.6}\n\
             n_pred_points = {:.6}\nn_gt_points = {:.6}\n",
            self.chamfer,
            self.fscore,
            self.emd,
            self.np_ratio,
            self.rmse,
            self.delta1,
            self.delta2,
            self.delta3,
            self.psnr,
            self.ssim,
            self.n_pred_points as f64,
            self.n_gt_points as f64,
        )
    }
}

/// Knobs for `evaluate`; defaults follow the reported protocol (5 cm F-score
/// threshold, 80 m depth cap).
#[derive(Debug, Clone, Copy)]
pub struct MetricsConfig {
    pub fscore_tau: f64,
    pub depth_cap: f64,
    /// Exact-assignment size cap; larger EMD groups are subsampled to this.
    pub emd_cap: usize,
    pub emd_seed: u64,
    pub psnr_valid_only: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            fscore_tau: 0.05,
            depth_cap: 80.0,
            emd_cap: 2048,
            emd_seed: 0,
            psnr_valid_only: false,
        }
    }
}

fn positions(cloud: &PointCloud) -> Vec<Vec3> {
    cloud.points.iter().map(|p| p.position).collect()
}

/// Symmetric mean squared nearest-neighbor distance.
pub fn chamfer(g1: &PointCloud, g2: &PointCloud) -> Result<f64> {
    if g1.is_empty() || g2.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    Ok(directed_mean_sq(g1, g2) + directed_mean_sq(g2, g1))
}

fn directed_mean_sq(from: &PointCloud, to: &PointCloud) -> f64 {
    let tree = KdTree::build(&positions(to));
    let sum: f64 = from.points.iter().map(|p| tree.nearest(p.position).1).sum();
    sum / from.len() as f64
}

/// Harmonic mean of precision/recall at nearest-distance <= tau, as a
/// percentage.
pub fn fscore(g1: &PointCloud, g2: &PointCloud, tau: f64) -> Result<f64> {
    if g1.is_empty() || g2.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let within = |from: &PointCloud, to: &PointCloud| -> f64 {
        let tree = KdTree::build(&positions(to));
        let hits = from
            .points
            .iter()
            .filter(|p| tree.nearest(p.position).1.sqrt() <= tau)
            .count();
        100.0 * hits as f64 / from.len() as f64
    };
    let precision = within(g1, g2);
    let recall = within(g2, g1);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-group outcome of the split EMD protocol.
#[derive(Debug, Clone, Copy)]
pub struct EmdReport {
    /// Mean over the groups that could be compared.
    pub mean: f64,
    /// (x > 0, x <= 0) group values; None marks a skipped group.
    pub groups: [Option<f64>; 2],
}

/// Optimal-assignment mean transport distance, computed per x-sign group and
/// averaged. Unequal group sizes are equalized by seeded subsampling of the
/// larger side; groups above `cap` are subsampled to `cap`.
pub fn emd(g1: &PointCloud, g2: &PointCloud, cap: usize, seed: u64) -> Result<EmdReport> {
    if g1.is_empty() || g2.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let split = |c: &PointCloud| -> (Vec<Vec3>, Vec<Vec3>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for p in &c.points {
            if p.position.x > 0.0 {
                pos.push(p.position);
            } else {
                neg.push(p.position);
            }
        }
        (pos, neg)
    };
    let (p1, n1) = split(g1);
    let (p2, n2) = split(g2);
    let mut groups = [None, None];
    for (gi, (a, b)) in [(p1, p2), (n1, n2)].into_iter().enumerate() {
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let size = a.len().min(b.len()).min(cap);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (gi as u64 + 1));
        let a = subsample(a, size, &mut rng);
        let b = subsample(b, size, &mut rng);
        let mut cost = vec![0.0f64; size * size];
        for (i, pa) in a.iter().enumerate() {
            for (j, pb) in b.iter().enumerate() {
                cost[i * size + j] = (*pa - *pb).norm();
            }
        }
        let (_, total) = solve_assignment(&cost, size);
        groups[gi] = Some(total / size as f64);
    }
    let used: Vec<f64> = groups.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(MetricsError::NoComparableGroups);
    }
    Ok(EmdReport { mean: used.iter().sum::<f64>() / used.len() as f64, groups })
}

fn subsample(mut points: Vec<Vec3>, size: usize, rng: &mut ChaCha20Rng) -> Vec<Vec3> {
    if points.len() == size {
        return points;
    }
    points.shuffle(rng);
    points.truncate(size);
    points
}

/// |1 - n_novel / n_real|.
pub fn np_ratio(novel: &PointCloud, real: &PointCloud) -> Result<f64> {
    if real.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    Ok((1.0 - novel.len() as f64 / real.len() as f64).abs())
}

/// Full metric suite over one view pair. Point-cloud metrics run on the
/// clouds reconstructed from the two range images.
pub fn evaluate(pred: &RangeImage, gt: &RangeImage, cfg: &MetricsConfig) -> Result<MetricsReport> {
    if pred.spec != gt.spec {
        return Err(MetricsError::SpecMismatch);
    }
    let pred_cloud = range_image_to_cloud(&pred.spec, pred);
    let gt_cloud = range_image_to_cloud(&gt.spec, gt);
    let chamfer = chamfer(&pred_cloud, &gt_cloud)?;
    let fscore = fscore(&pred_cloud, &gt_cloud, cfg.fscore_tau)?;
    let emd = emd(&pred_cloud, &gt_cloud, cfg.emd_cap, cfg.emd_seed)?.mean;
    let np = np_ratio(&pred_cloud, &gt_cloud)?;
    let (rmse, delta1, delta2, delta3) = range_metrics(pred, gt, cfg.depth_cap)?;
    let (psnr, ssim) = intensity_metrics(pred, gt, cfg.psnr_valid_only)?;
    Ok(MetricsReport {
        chamfer,
        fscore,
        emd,
        np_ratio: np,
        rmse,
        delta1,
        delta2,
        delta3,
        psnr,
        ssim,
        n_pred_points: pred_cloud.len(),
        n_gt_points: gt_cloud.len(),
    })
}
