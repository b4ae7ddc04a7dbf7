//! Virtual RGB-D cameras.
//!
//! A capture projects sampled scene surfaces into an angular grid (one bin
//! per `angular_resolution` in each direction), keeps the nearest
//! front-facing sample per bin, perturbs its depth along the viewing ray and
//! randomly drops points. Colors are returned unperturbed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ColoredPoint, ColoredPointCloud, Frame, RigidTransform, Vec3};
use crate::rng;
use crate::scene::{sample_surfaces, Owner, Scene, SurfaceSample};

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    /// Camera frame → base frame.
    pub pose: RigidTransform,
    pub h_fov: f64,
    pub v_fov: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub depth_noise_sigma: f64,
    pub dropout_rate: f64,
    /// Angular size of one depth bin (radians).
    pub angular_resolution: f64,
    /// Surface sampling density used when rendering (points per m²).
    pub surface_density: f64,
}

impl CameraModel {
    pub fn frame(&self) -> Frame {
        self.pose.source
    }

    pub fn validate(&self) -> Result<()> {
        let pi = std::f64::consts::PI;
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg))
            }
        };
        check(self.pose.target == Frame::Base, "pose", "camera pose must map into the base frame")?;
        check(0.0 < self.h_fov && self.h_fov < pi, "h_fov", "must be in (0, π)")?;
        check(0.0 < self.v_fov && self.v_fov < pi, "v_fov", "must be in (0, π)")?;
        check(
            0.0 < self.min_range && self.min_range < self.max_range,
            "min_range",
            "must satisfy 0 < min_range < max_range",
        )?;
        check(self.depth_noise_sigma >= 0.0, "depth_noise_sigma", "must be >= 0")?;
        check((0.0..=1.0).contains(&self.dropout_rate), "dropout_rate", "must be in [0, 1]")?;
        check(self.angular_resolution > 0.0, "angular_resolution", "must be > 0")?;
        check(self.surface_density > 0.0, "surface_density", "must be > 0")?;
        Ok(())
    }

    /// Whether a base-frame point lies inside the view frustum and range band.
    pub fn sees(&self, p_base: &Vec3) -> bool {
        let p = crate::geometry::transform_point(&self.pose.inverse(), p_base);
        self.in_view(&p)
    }

    fn in_view(&self, p: &Vec3) -> bool {
        p.z >= self.min_range
            && p.z <= self.max_range
            && p.x.atan2(p.z).abs() <= self.h_fov / 2.0
            && p.y.atan2(p.z).abs() <= self.v_fov / 2.0
    }

    /// Stable stream id for this camera's noise, independent of rig slot.
    fn noise_stream(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 * 20);
        for v in self
            .pose
            .rotation()
            .iter()
            .chain(self.pose.translation().iter())
            .chain([self.h_fov, self.v_fov, self.min_range, self.max_range].iter())
        {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        rng::stream_id_of(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub cam1: CameraModel,
    pub cam2: CameraModel,
}

/// Plain description of a camera used by configs: eye/target placement
/// instead of a raw matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraParams {
    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Degrees.
    pub h_fov_deg: f64,
    /// Degrees.
    pub v_fov_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub depth_noise_sigma: f64,
    pub dropout_rate: f64,
    /// Degrees.
    pub angular_resolution_deg: f64,
    pub surface_density: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        CameraParams {
            eye: [-0.10, 0.0, 0.45],
            look_at: [0.40, 0.0, 0.40],
            up: [0.0, 0.0, 1.0],
            h_fov_deg: 87.0,
            v_fov_deg: 58.0,
            min_range: 0.10,
            max_range: 2.0,
            depth_noise_sigma: 0.002,
            dropout_rate: 0.02,
            angular_resolution_deg: 0.25,
            surface_density: 2.0e6,
        }
    }
}

impl CameraParams {
    pub fn default_cam1() -> Self {
        CameraParams::default()
    }

    pub fn default_cam2() -> Self {
        CameraParams {
            eye: [0.22, 0.0, 0.08],
            ..CameraParams::default()
        }
    }

    pub fn build(&self, frame: Frame) -> Result<CameraModel> {
        let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
        let pose = RigidTransform::look_at(v(self.eye), v(self.look_at), v(self.up), frame, Frame::Base)
            .map_err(|e| Error::config("eye", e.to_string()))?;
        let cam = CameraModel {
            pose,
            h_fov: self.h_fov_deg.to_radians(),
            v_fov: self.v_fov_deg.to_radians(),
            min_range: self.min_range,
            max_range: self.max_range,
            depth_noise_sigma: self.depth_noise_sigma,
            dropout_rate: self.dropout_rate,
            angular_resolution: self.angular_resolution_deg.to_radians(),
            surface_density: self.surface_density,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn to_meters(&mut self, per_meter: f64) {
        for a in [&mut self.eye, &mut self.look_at] {
            for v in a.iter_mut() {
                *v /= per_meter;
            }
        }
        self.min_range /= per_meter;
        self.max_range /= per_meter;
        self.depth_noise_sigma /= per_meter;
        self.surface_density *= per_meter * per_meter;
    }
}

/// A captured point together with the surface it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub point: ColoredPoint,
    pub owner: Owner,
}

pub fn capture(scene: &Scene, cam: &CameraModel, seed: u64) -> ColoredPointCloud {
    let samples = sample_surfaces(scene, cam.surface_density);
    to_cloud(cam, render(&samples, cam, seed))
}

/// Like [`capture`] but keeps the owner of every returned point.
pub fn capture_labeled(scene: &Scene, cam: &CameraModel, seed: u64) -> Vec<LabeledPoint> {
    let samples = sample_surfaces(scene, cam.surface_density);
    render(&samples, cam, seed)
}

pub fn capture_rig(scene: &Scene, rig: &CameraRig, seed: u64) -> (ColoredPointCloud, ColoredPointCloud) {
    let samples1 = sample_surfaces(scene, rig.cam1.surface_density);
    let c1 = to_cloud(&rig.cam1, render(&samples1, &rig.cam1, seed));
    let c2 = if rig.cam2.surface_density == rig.cam1.surface_density {
        to_cloud(&rig.cam2, render(&samples1, &rig.cam2, seed))
    } else {
        let samples2 = sample_surfaces(scene, rig.cam2.surface_density);
        to_cloud(&rig.cam2, render(&samples2, &rig.cam2, seed))
    };
    (c1, c2)
}

fn to_cloud(cam: &CameraModel, pts: Vec<LabeledPoint>) -> ColoredPointCloud {
    ColoredPointCloud {
        frame: cam.frame(),
        points: pts.into_iter().map(|p| p.point).collect(),
    }
}

fn render(samples: &[SurfaceSample], cam: &CameraModel, seed: u64) -> Vec<LabeledPoint> {
    let to_cam = cam.pose.inverse();
    let rot = *to_cam.rotation();
    let trans = *to_cam.translation();
    let res = cam.angular_resolution;
    let cols = (cam.h_fov / res).ceil() as usize;
    let rows = (cam.v_fov / res).ceil() as usize;
    let mut bins: Vec<(f64, u32)> = vec![(f64::INFINITY, u32::MAX); cols * rows];
    let mut cam_pts: Vec<Vec3> = Vec::with_capacity(samples.len());

    for (i, s) in samples.iter().enumerate() {
        let p = rot * s.position + trans;
        cam_pts.push(p);
        if !cam.in_view(&p) {
            continue;
        }
        let n = rot * s.normal;
        if n.dot(&p) >= 0.0 {
            continue;
        }
        let ax = p.x.atan2(p.z) + cam.h_fov / 2.0;
        let ay = p.y.atan2(p.z) + cam.v_fov / 2.0;
        let c = ((ax / res) as usize).min(cols - 1);
        let r = ((ay / res) as usize).min(rows - 1);
        let range = p.norm();
        let slot = &mut bins[r * cols + c];
        if range < slot.0 {
            *slot = (range, i as u32);
        }
    }

    let mut rng = rng::stream(seed, cam.noise_stream());
    let noise = Normal::new(0.0, cam.depth_noise_sigma).expect("sigma validated non-negative");
    let mut out = Vec::new();
    for &(range, idx) in &bins {
        if idx == u32::MAX {
            continue;
        }
        let dn: f64 = noise.sample(&mut rng);
        let u: f64 = rng.random();
        if u < cam.dropout_rate {
            continue;
        }
        let p = cam_pts[idx as usize];
        let position = if cam.depth_noise_sigma > 0.0 {
            p * ((range + dn) / range)
        } else {
            p
        };
        let s = &samples[idx as usize];
        out.push(LabeledPoint {
            point: ColoredPoint::new(position, s.color),
            owner: s.owner,
        });
    }
    out
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        self.cam1.validate()?;
        self.cam2.validate()?;
        if self.cam1.frame() != Frame::Cam1 || self.cam2.frame() != Frame::Cam2 {
            return Err(Error::config("cameras", "rig cameras must be cam1 and cam2"));
        }
        Ok(())
    }

    pub fn from_params(cam1: &CameraParams, cam2: &CameraParams) -> Result<Self> {
        let rig = CameraRig {
            cam1: cam1.build(Frame::Cam1).map_err(|e| e.within("cameras.cam1"))?,
            cam2: cam2.build(Frame::Cam2).map_err(|e| e.within("cameras.cam2"))?,
        };
        rig.validate()?;
        Ok(rig)
    }
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig::from_params(&CameraParams::default_cam1(), &CameraParams::default_cam2())
            .expect("default rig is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform_point;
    use crate::scene::generate_scene;

    fn quiet(mut cam: CameraModel) -> CameraModel {
        cam.depth_noise_sigma = 0.0;
        cam.dropout_rate = 0.0;
        cam
    }

    #[test]
    fn zero_noise_points_on_surfaces() {
        let scene = generate_scene(3, 1, 1.0, 0.0).unwrap();
        let rig = CameraRig::default();
        let cam = quiet(rig.cam1.clone());
        let pts = capture_labeled(&scene, &cam, 1);
        let fruit = &scene.strawberries[0];
        let mut n_fruit = 0;
        for lp in &pts {
            let p = transform_point(&cam.pose, &lp.point.position);
            if lp.owner == Owner::Fruit(0) {
                n_fruit += 1;
                assert!(((p - fruit.center).norm() - fruit.radius).abs() <= 1e-9);
            }
        }
        assert!(n_fruit >= 20);
    }

    #[test]
    fn capture_is_deterministic() {
        let scene = generate_scene(3, 4, 1.0, 0.0).unwrap();
        let rig = CameraRig::default();
        assert_eq!(capture(&scene, &rig.cam1, 9), capture(&scene, &rig.cam1, 9));
        assert_ne!(capture(&scene, &rig.cam1, 9), capture(&scene, &rig.cam1, 10));
    }

    #[test]
    fn empty_scene_gives_empty_clouds() {
        let mut scene = generate_scene(3, 0, 1.0, 0.0).unwrap();
        scene.trough.half_length = 0.0;
        scene.trough.depth = 0.0;
        scene.trough.height = 0.0;
        let (a, b) = capture_rig(&scene, &CameraRig::default(), 1);
        assert!(a.is_empty() && b.is_empty());
        assert_eq!((a.frame, b.frame), (Frame::Cam1, Frame::Cam2));
    }

    #[test]
    fn rig_order_does_not_matter() {
        let scene = generate_scene(8, 5, 1.0, 0.0).unwrap();
        let rig = CameraRig::default();
        let (a, b) = capture_rig(&scene, &rig, 4);
        assert_eq!(a, capture(&scene, &rig.cam1, 4));
        assert_eq!(b, capture(&scene, &rig.cam2, 4));
    }

    #[test]
    fn dropout_monotone() {
        let scene = generate_scene(8, 5, 1.0, 0.0).unwrap();
        let mut cam = CameraRig::default().cam1;
        let mut last = usize::MAX;
        for rate in [0.0, 0.1, 0.3, 0.7, 1.0] {
            cam.dropout_rate = rate;
            let n = capture(&scene, &cam, 2).len();
            assert!(n <= last);
            last = n;
        }
        assert_eq!(last, 0);
    }

    #[test]
    fn range_band_respected() {
        let scene = generate_scene(8, 9, 1.0, 0.0).unwrap();
        let mut cam = quiet(CameraRig::default().cam1);
        cam.min_range = 0.45;
        cam.max_range = 0.52;
        let c = capture(&scene, &cam, 1);
        assert!(!c.is_empty());
        assert!(c.points.iter().all(|p| p.position.z >= 0.45 && p.position.z <= 0.52));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = CameraParams {
            h_fov_deg: 190.0,
            ..CameraParams::default()
        };
        assert!(matches!(p.build(Frame::Cam1), Err(Error::Config { ref key, .. }) if key == "h_fov"));
        let p = CameraParams {
            min_range: 3.0,
            ..CameraParams::default()
        };
        assert!(p.build(Frame::Cam1).is_err());
    }
}
