//! Ripe-strawberry localization: merge both camera clouds into the base
//! frame, crop to the reachable window, keep red points, split them into
//! Euclidean clusters and report one axis-aligned box per cluster.

mod cluster;

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use cluster::connected_components;

use crate::error::{Error, Result};
use crate::geometry::{
    cloud_extent, merge_clouds, transform_cloud, Aabb, ColoredPointCloud, Frame, RigidTransform, Vec3,
};

/// Crop window, color thresholds and clustering limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationParams {
    pub x_plus: f64,
    pub x_minus: f64,
    pub y_plus: f64,
    pub y_minus: f64,
    pub z_plus: f64,
    pub z_minus: f64,
    pub r_th: u8,
    pub g_th: u8,
    pub b_th: u8,
    /// Cluster tolerance (meters).
    pub tol: f64,
    pub s_min: usize,
    pub s_max: usize,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        LocalizationParams {
            x_plus: 0.55,
            x_minus: 0.25,
            y_plus: 0.30,
            y_minus: -0.30,
            z_plus: 0.50,
            z_minus: 0.30,
            r_th: 100,
            g_th: 70,
            b_th: 70,
            tol: 0.02,
            s_min: 20,
            s_max: 1000,
        }
    }
}

impl LocalizationParams {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("x_minus", self.x_minus, self.x_plus),
            ("y_minus", self.y_minus, self.y_plus),
            ("z_minus", self.z_minus, self.z_plus),
        ];
        for (key, lo, hi) in axes {
            if !(lo < hi) {
                return Err(Error::config(key, format!("must be below its upper limit ({lo} >= {hi})")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be > 0"));
        }
        if self.s_min == 0 {
            return Err(Error::config("s_min", "must be >= 1"));
        }
        if self.s_min > self.s_max {
            return Err(Error::config("s_min", "must not exceed s_max"));
        }
        Ok(())
    }

    pub fn window(&self) -> Aabb {
        Aabb {
            min: Vec3::new(self.x_minus, self.y_minus, self.z_minus),
            max: Vec3::new(self.x_plus, self.y_plus, self.z_plus),
        }
    }

    pub fn to_meters(&mut self, per_meter: f64) {
        for v in [
            &mut self.x_plus,
            &mut self.x_minus,
            &mut self.y_plus,
            &mut self.y_minus,
            &mut self.z_plus,
            &mut self.z_minus,
            &mut self.tol,
        ] {
            *v /= per_meter;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrawberryBox {
    /// Position in ascending-y order.
    pub index: usize,
    pub bounds: Aabb,
    pub point_count: usize,
}

/// Keeps points strictly inside the crop window.
pub fn crop_window(cloud: &ColoredPointCloud, p: &LocalizationParams) -> Result<ColoredPointCloud> {
    if cloud.frame != Frame::Base {
        return Err(Error::RejectedInput(format!(
            "crop expects a base-frame cloud, got {}",
            cloud.frame
        )));
    }
    let points = cloud
        .points
        .iter()
        .filter(|c| {
            let q = &c.position;
            q.x < p.x_plus
                && q.x > p.x_minus
                && q.y < p.y_plus
                && q.y > p.y_minus
                && q.z < p.z_plus
                && q.z > p.z_minus
        })
        .copied()
        .collect();
    Ok(ColoredPointCloud {
        frame: cloud.frame,
        points,
    })
}

pub fn threshold_red(cloud: &ColoredPointCloud, p: &LocalizationParams) -> ColoredPointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|c| c.color.r > p.r_th && c.color.g < p.g_th && c.color.b < p.b_th)
        .copied()
        .collect();
    ColoredPointCloud {
        frame: cloud.frame,
        points,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub kept: usize,
    pub rejected_small: usize,
    pub rejected_large: usize,
}

pub fn euclidean_cluster(cloud: &ColoredPointCloud, p: &LocalizationParams) -> Vec<ColoredPointCloud> {
    euclidean_cluster_with_stats(cloud, p).0
}

/// Clusters with size in `[s_min, s_max]`, sorted by centroid y (then x,
/// then z). Points inside a cluster keep their input order.
pub fn euclidean_cluster_with_stats(
    cloud: &ColoredPointCloud,
    p: &LocalizationParams,
) -> (Vec<ColoredPointCloud>, ClusterStats) {
    let positions: Vec<Vec3> = cloud.points.iter().map(|c| c.position).collect();
    let comps = connected_components(&positions, p.tol);
    let mut stats = ClusterStats::default();
    let mut kept: Vec<(Vec3, Vec<usize>)> = Vec::new();
    for comp in comps {
        if comp.len() < p.s_min {
            stats.rejected_small += 1;
        } else if comp.len() > p.s_max {
            stats.rejected_large += 1;
        } else {
            let sum: Vec3 = comp.iter().map(|&i| positions[i]).sum();
            kept.push((sum / comp.len() as f64, comp));
        }
    }
    kept.sort_by(|a, b| centroid_order(&a.0, &b.0).then(a.1[0].cmp(&b.1[0])));
    stats.kept = kept.len();
    let clusters = kept
        .into_iter()
        .map(|(_, idx)| ColoredPointCloud {
            frame: cloud.frame,
            points: idx.into_iter().map(|i| cloud.points[i]).collect(),
        })
        .collect();
    (clusters, stats)
}

fn centroid_order(a: &Vec3, b: &Vec3) -> Ordering {
    a.y.total_cmp(&b.y)
        .then(a.x.total_cmp(&b.x))
        .then(a.z.total_cmp(&b.z))
}

pub fn boxes_of(clusters: &[ColoredPointCloud]) -> Result<Vec<StrawberryBox>> {
    clusters
        .iter()
        .enumerate()
        .map(|(index, c)| {
            if c.is_empty() {
                return Err(Error::Internal(format!("cluster {index} is empty")));
            }
            let (x0, x1) = cloud_extent(c, 0)?;
            let (y0, y1) = cloud_extent(c, 1)?;
            let (z0, z1) = cloud_extent(c, 2)?;
            Ok(StrawberryBox {
                index,
                bounds: Aabb {
                    min: Vec3::new(x0, y0, z0),
                    max: Vec3::new(x1, y1, z1),
                },
                point_count: c.len(),
            })
        })
        .collect()
}

/// Point counts after each stage plus cluster-size rejections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationStats {
    pub merged: usize,
    pub cropped: usize,
    pub red: usize,
    #[serde(flatten)]
    pub clusters: ClusterStats,
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub boxes: Vec<StrawberryBox>,
    pub stats: LocalizationStats,
    /// Wall-clock time spent in the pipeline.
    pub elapsed: Duration,
}

pub fn localize(
    c1: &ColoredPointCloud,
    c2: &ColoredPointCloud,
    t1: &RigidTransform,
    t2: &RigidTransform,
    p: &LocalizationParams,
) -> Result<Localization> {
    let start = Instant::now();
    if c1.frame != Frame::Cam1 || c2.frame != Frame::Cam2 {
        return Err(Error::RejectedInput(format!(
            "expected clouds in cam1/cam2, got {}/{}",
            c1.frame, c2.frame
        )));
    }
    if t1.target != Frame::Base || t2.target != Frame::Base {
        return Err(Error::RejectedInput("camera transforms must map into the base frame".into()));
    }
    let merged = merge_clouds(&transform_cloud(t1, c1)?, &transform_cloud(t2, c2)?)?;
    let reduced = crop_window(&merged, p)?;
    let red = threshold_red(&reduced, p);
    let (clusters, cluster_stats) = euclidean_cluster_with_stats(&red, p);
    let boxes = boxes_of(&clusters)?;
    Ok(Localization {
        boxes,
        stats: LocalizationStats {
            merged: merged.len(),
            cropped: reduced.len(),
            red: red.len(),
            clusters: cluster_stats,
        },
        elapsed: start.elapsed(),
    })
}
