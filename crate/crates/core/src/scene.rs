//! Ground-truth world: a table-top trough with strawberries hanging on
//! straight stems, optional box occluders, and surface sampling for the
//! virtual cameras.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Rgb, Vec3};
use crate::rng::{self, STREAM_SCENE_COLORS, STREAM_SCENE_LAYOUT};

pub const MIN_FRUIT_RADIUS: f64 = 0.005;
pub const MAX_FRUIT_RADIUS: f64 = 0.0175;
pub const MIN_STEM_DIAMETER: f64 = 0.001;
pub const MAX_STEM_DIAMETER: f64 = 0.005;
/// Stem bend never exceeds the trapper's lateral tolerance.
pub const MAX_STEM_BEND: f64 = 0.015;

/// Clearance kept between fruit surfaces and the workspace walls.
const WORKSPACE_MARGIN: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrawberryTruth {
    pub id: u32,
    pub center: Vec3,
    pub radius: f64,
    pub ripe: bool,
    /// Stem attachment on the trough lip.
    pub stem_top: Vec3,
    /// Lateral (y) offset of the fruit end relative to the attachment.
    pub stem_bend: f64,
    pub stem_diameter: f64,
    pub detached: bool,
}

impl StrawberryTruth {
    /// Where the stem meets the top of the fruit.
    pub fn stem_bottom(&self) -> Vec3 {
        self.center + Vec3::new(0.0, 0.0, self.radius)
    }

    /// Point on the stem axis at height `z`, if the stem spans that height.
    pub fn stem_point_at(&self, z: f64) -> Option<Vec3> {
        let a = self.stem_bottom();
        let b = self.stem_top;
        if z < a.z || z > b.z || b.z <= a.z {
            return None;
        }
        let s = (z - a.z) / (b.z - a.z);
        Some(a + (b - a) * s)
    }

    pub fn bounding_box(&self) -> Aabb {
        let r = Vec3::repeat(self.radius);
        Aabb {
            min: self.center - r,
            max: self.center + r,
        }
    }

    pub fn cross_section(&self) -> f64 {
        std::f64::consts::PI * (self.stem_diameter / 2.0).powi(2)
    }
}

/// Trough body in the base frame. Stems hang from the front lip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trough {
    /// Height of the trough's underside (stem attachment level).
    pub lip_z: f64,
    pub front_x: f64,
    pub depth: f64,
    pub height: f64,
    pub half_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub strawberries: Vec<StrawberryTruth>,
    /// Table-top height above ground (meters).
    pub trough_height: f64,
    pub rng_seed: u64,
    /// Region in which ripe fruit are placed; equals the localization crop window.
    pub workspace: Aabb,
    pub trough: Trough,
    #[serde(default)]
    pub occluders: Vec<Aabb>,
}

/// Layout parameters for [`generate_scene_with`]. Lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub n_straw: usize,
    pub ripe_fraction: f64,
    pub bend_sigma: f64,
    pub spacing: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub stem_length_min: f64,
    pub stem_length_max: f64,
    pub stem_diameter: f64,
    pub fruit_x: f64,
    pub fruit_x_jitter: f64,
    pub trough_height: f64,
    /// Height of the arm base above ground; converts trough height to base frame.
    pub arm_base_height: f64,
    pub trough_front_x: f64,
    /// When set, every fruit must lie fully inside the workspace.
    pub reachable: bool,
    pub workspace: Aabb,
    pub occluders: Vec<Aabb>,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            n_straw: 9,
            ripe_fraction: 1.0,
            bend_sigma: 0.0,
            spacing: 0.060,
            radius_min: 0.0125,
            radius_max: 0.0175,
            stem_length_min: 0.09,
            stem_length_max: 0.16,
            stem_diameter: 0.003,
            fruit_x: 0.40,
            fruit_x_jitter: 0.015,
            trough_height: 1.03,
            arm_base_height: 0.48,
            trough_front_x: 0.45,
            reachable: true,
            workspace: Aabb {
                min: Vec3::new(0.25, -0.30, 0.30),
                max: Vec3::new(0.55, 0.30, 0.50),
            },
            occluders: Vec::new(),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg))
            }
        };
        check((0.0..=1.0).contains(&self.ripe_fraction), "ripe_fraction", "must be in [0, 1]")?;
        check(self.bend_sigma >= 0.0, "bend_sigma", "must be >= 0")?;
        check(self.spacing > 0.0, "spacing", "must be > 0")?;
        check(
            MIN_FRUIT_RADIUS <= self.radius_min
                && self.radius_min <= self.radius_max
                && self.radius_max <= MAX_FRUIT_RADIUS,
            "radius_min",
            "radii must satisfy 0.005 <= radius_min <= radius_max <= 0.0175",
        )?;
        check(
            0.0 < self.stem_length_min && self.stem_length_min <= self.stem_length_max,
            "stem_length_min",
            "must satisfy 0 < stem_length_min <= stem_length_max",
        )?;
        check(
            (MIN_STEM_DIAMETER..=MAX_STEM_DIAMETER).contains(&self.stem_diameter),
            "stem_diameter",
            "must be in [0.001, 0.005]",
        )?;
        check(self.fruit_x_jitter >= 0.0, "fruit_x_jitter", "must be >= 0")?;
        check(
            self.trough_height > self.arm_base_height,
            "trough_height",
            "must exceed arm_base_height",
        )?;
        Ok(())
    }

    pub fn to_meters(&mut self, per_meter: f64) {
        for v in [
            &mut self.bend_sigma,
            &mut self.spacing,
            &mut self.radius_min,
            &mut self.radius_max,
            &mut self.stem_length_min,
            &mut self.stem_length_max,
            &mut self.stem_diameter,
            &mut self.fruit_x,
            &mut self.fruit_x_jitter,
            &mut self.trough_height,
            &mut self.arm_base_height,
            &mut self.trough_front_x,
        ] {
            *v /= per_meter;
        }
        self.workspace = box_to_meters(&self.workspace, per_meter);
        for o in &mut self.occluders {
            *o = box_to_meters(o, per_meter);
        }
    }

    fn lip_z(&self) -> f64 {
        self.trough_height - self.arm_base_height
    }

    /// Largest fruit count that fits along y at the configured spacing.
    pub fn capacity(&self) -> usize {
        let usable = (self.workspace.max.y - self.workspace.min.y)
            - 2.0 * (self.radius_max + WORKSPACE_MARGIN);
        if usable < 0.0 {
            0
        } else {
            (usable / self.spacing).floor() as usize + 1
        }
    }
}

/// Scene with default layout parameters.
pub fn generate_scene(seed: u64, n_straw: usize, ripe_fraction: f64, bend_sigma: f64) -> Result<Scene> {
    let params = SceneParams {
        n_straw,
        ripe_fraction,
        bend_sigma,
        ..SceneParams::default()
    };
    generate_scene_with(&params, seed)
}

pub fn generate_scene_with(params: &SceneParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    let n = params.n_straw;
    if n > params.capacity() {
        return Err(Error::config(
            "n_straw",
            format!(
                "{n} fruits do not fit the workspace at {} m spacing (capacity {})",
                params.spacing,
                params.capacity()
            ),
        ));
    }

    let mut rng = rng::stream(seed, STREAM_SCENE_LAYOUT);
    let lip_z = params.lip_z();
    let bend = Normal::new(0.0, params.bend_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config("bend_sigma", e.to_string()))?;

    let n_ripe = (params.ripe_fraction * n as f64).round() as usize;
    let mut ripe_flags: Vec<bool> = (0..n).map(|i| i < n_ripe).collect();
    ripe_flags.shuffle(&mut rng);

    let mid_y = 0.5 * (params.workspace.min.y + params.workspace.max.y);
    let mut strawberries = Vec::with_capacity(n);
    for (i, ripe) in ripe_flags.into_iter().enumerate() {
        let radius = rng.random_range(params.radius_min..=params.radius_max);
        let stem_length = rng.random_range(params.stem_length_min..=params.stem_length_max);
        let dx = if params.fruit_x_jitter > 0.0 {
            rng.random_range(-params.fruit_x_jitter..=params.fruit_x_jitter)
        } else {
            0.0
        };
        let raw_bend: f64 = bend.sample(&mut rng);
        let stem_bend = if params.bend_sigma > 0.0 {
            raw_bend.clamp(-MAX_STEM_BEND, MAX_STEM_BEND)
        } else {
            0.0
        };

        let y = mid_y + (i as f64 - (n as f64 - 1.0) / 2.0) * params.spacing;
        let center = Vec3::new(params.fruit_x + dx, y, lip_z - stem_length - radius);
        strawberries.push(StrawberryTruth {
            id: i as u32,
            center,
            radius,
            ripe,
            stem_top: Vec3::new(params.trough_front_x, y - stem_bend, lip_z),
            stem_bend,
            stem_diameter: params.stem_diameter,
            detached: false,
        });
    }

    let scene = Scene {
        strawberries,
        trough_height: params.trough_height,
        rng_seed: seed,
        workspace: params.workspace,
        trough: Trough {
            lip_z,
            front_x: params.trough_front_x,
            depth: 0.25,
            height: 0.20,
            half_length: (params.workspace.max.y - params.workspace.min.y) / 2.0 + 0.05,
        },
        occluders: params.occluders.clone(),
    };
    if params.reachable {
        for s in &scene.strawberries {
            let b = s.bounding_box();
            if !(scene.workspace.contains(&b.min) && scene.workspace.contains(&b.max)) {
                return Err(Error::config(
                    "workspace",
                    format!("fruit {} does not fit inside the workspace", s.id),
                ));
            }
        }
    }
    scene.validate()?;
    Ok(scene)
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.strawberries.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::RejectedInput("duplicate strawberry id".into()));
        }
        for s in &self.strawberries {
            let bad = |msg: &str| Err(Error::RejectedInput(format!("strawberry {}: {msg}", s.id)));
            if !(MIN_FRUIT_RADIUS..=MAX_FRUIT_RADIUS).contains(&s.radius) {
                return bad("radius out of [0.005, 0.0175]");
            }
            if !(MIN_STEM_DIAMETER..=MAX_STEM_DIAMETER).contains(&s.stem_diameter) {
                return bad("stem diameter out of [0.001, 0.005]");
            }
            if s.stem_top.z <= s.center.z {
                return bad("stem attachment must be above the fruit");
            }
            if s.stem_bend.abs() > MAX_STEM_BEND {
                return bad("stem bend exceeds 15 mm");
            }
            if s.ripe && !self.workspace.contains(&s.center) {
                return bad("ripe fruit center outside workspace");
            }
        }
        Ok(())
    }

    pub fn fruit(&self, id: u32) -> Option<&StrawberryTruth> {
        self.strawberries.iter().find(|s| s.id == id)
    }

    pub fn ripe_in_workspace(&self) -> usize {
        self.strawberries
            .iter()
            .filter(|s| s.ripe && self.workspace.contains(&s.center))
            .count()
    }

    pub fn to_json(&self) -> String {
        let doc = SceneDoc {
            units: "m".into(),
            scene: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Scene> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: SceneDoc = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        if doc.units != "m" {
            return Err(Error::config("units", "scene files are stored in meters (\"m\")"));
        }
        doc.scene.validate()?;
        Ok(doc.scene)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    units: String,
    #[serde(flatten)]
    scene: Scene,
}

/// Marks a fruit as fallen; later captures no longer see it.
pub fn detach_fruit(scene: &Scene, id: u32) -> Result<Scene> {
    let mut next = scene.clone();
    let fruit = next
        .strawberries
        .iter_mut()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::State(format!("no strawberry with id {id}")))?;
    if fruit.detached {
        return Err(Error::State(format!("strawberry {id} already detached")));
    }
    fruit.detached = true;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Owner {
    Fruit(u32),
    Stem(u32),
    Trough,
    Occluder(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    /// Outward unit normal.
    pub normal: Vec3,
    pub color: Rgb,
    pub owner: Owner,
}

pub fn ripe_color<R: Rng>(rng: &mut R) -> Rgb {
    Rgb::new(rng.random_range(150..=255), rng.random_range(0..=69), rng.random_range(0..=69))
}

pub fn green_color<R: Rng>(rng: &mut R) -> Rgb {
    Rgb::new(rng.random_range(0..=99), rng.random_range(100..=255), rng.random_range(0..=99))
}

pub fn neutral_color<R: Rng>(rng: &mut R) -> Rgb {
    let v = rng.random_range(80..=140);
    Rgb::new(v, v, v)
}

/// Samples every visible-candidate surface at roughly `density` points per
/// square meter. Fruit use a Fibonacci lattice, stems and planar faces a
/// regular grid; the trough is sampled at a quarter of the density.
/// Detached fruit are skipped.
pub fn sample_surfaces(scene: &Scene, density: f64) -> Vec<SurfaceSample> {
    let mut out = Vec::new();
    if !(density > 0.0) {
        return out;
    }
    let mut rng = rng::stream(scene.rng_seed, STREAM_SCENE_COLORS);
    let spacing = 1.0 / density.sqrt();

    for s in &scene.strawberries {
        if s.detached {
            continue;
        }
        let area = 4.0 * std::f64::consts::PI * s.radius * s.radius;
        let n = (area * density).round() as usize;
        for normal in fibonacci_sphere(n) {
            let color = if s.ripe {
                ripe_color(&mut rng)
            } else {
                green_color(&mut rng)
            };
            out.push(SurfaceSample {
                position: s.center + normal * s.radius,
                normal,
                color,
                owner: Owner::Fruit(s.id),
            });
        }
    }

    for s in &scene.strawberries {
        let a = s.stem_bottom();
        let b = s.stem_top;
        sample_cylinder(&a, &b, s.stem_diameter / 2.0, spacing, |position, normal| {
            out.push(SurfaceSample {
                position,
                normal,
                color: green_color(&mut rng),
                owner: Owner::Stem(s.id),
            });
        });
    }

    let t = &scene.trough;
    let trough_spacing = spacing * 2.0;
    // front face
    sample_rect(
        Vec3::new(t.front_x, -t.half_length, t.lip_z),
        Vec3::new(0.0, 2.0 * t.half_length, 0.0),
        Vec3::new(0.0, 0.0, t.height),
        -Vec3::x(),
        trough_spacing,
        |position, normal| {
            out.push(SurfaceSample {
                position,
                normal,
                color: neutral_color(&mut rng),
                owner: Owner::Trough,
            })
        },
    );
    // underside
    sample_rect(
        Vec3::new(t.front_x, -t.half_length, t.lip_z),
        Vec3::new(t.depth, 0.0, 0.0),
        Vec3::new(0.0, 2.0 * t.half_length, 0.0),
        -Vec3::z(),
        trough_spacing,
        |position, normal| {
            out.push(SurfaceSample {
                position,
                normal,
                color: neutral_color(&mut rng),
                owner: Owner::Trough,
            })
        },
    );

    for (k, b) in scene.occluders.iter().enumerate() {
        let size = b.size();
        let faces = [
            (b.min, Vec3::new(0.0, size.y, 0.0), Vec3::new(0.0, 0.0, size.z), -Vec3::x()),
            (Vec3::new(b.max.x, b.min.y, b.min.z), Vec3::new(0.0, size.y, 0.0), Vec3::new(0.0, 0.0, size.z), Vec3::x()),
            (b.min, Vec3::new(size.x, 0.0, 0.0), Vec3::new(0.0, 0.0, size.z), -Vec3::y()),
            (Vec3::new(b.min.x, b.max.y, b.min.z), Vec3::new(size.x, 0.0, 0.0), Vec3::new(0.0, 0.0, size.z), Vec3::y()),
            (b.min, Vec3::new(size.x, 0.0, 0.0), Vec3::new(0.0, size.y, 0.0), -Vec3::z()),
            (Vec3::new(b.min.x, b.min.y, b.max.z), Vec3::new(size.x, 0.0, 0.0), Vec3::new(0.0, size.y, 0.0), Vec3::z()),
        ];
        for (origin, u, v, normal) in faces {
            sample_rect(origin, u, v, normal, spacing, |position, normal| {
                out.push(SurfaceSample {
                    position,
                    normal,
                    color: green_color(&mut rng),
                    owner: Owner::Occluder(k),
                })
            });
        }
    }
    out
}

/// `n` near-uniform unit vectors (golden-angle spiral).
fn fibonacci_sphere(n: usize) -> impl Iterator<Item = Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        let rho = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden * i as f64;
        Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
    })
}

fn sample_rect(origin: Vec3, u: Vec3, v: Vec3, normal: Vec3, spacing: f64, mut emit: impl FnMut(Vec3, Vec3)) {
    if u.norm() <= 0.0 || v.norm() <= 0.0 {
        return;
    }
    let nu = (u.norm() / spacing).ceil().max(1.0) as usize;
    let nv = (v.norm() / spacing).ceil().max(1.0) as usize;
    for i in 0..nu {
        for j in 0..nv {
            let a = (i as f64 + 0.5) / nu as f64;
            let b = (j as f64 + 0.5) / nv as f64;
            emit(origin + u * a + v * b, normal);
        }
    }
}

fn sample_cylinder(a: &Vec3, b: &Vec3, radius: f64, spacing: f64, mut emit: impl FnMut(Vec3, Vec3)) {
    let axis = b - a;
    let len = axis.norm();
    if len <= 0.0 {
        return;
    }
    let dir = axis / len;
    let helper = if dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = dir.cross(&helper).normalize();
    let e2 = dir.cross(&e1);
    let n_len = (len / spacing).ceil().max(1.0) as usize;
    let n_around = ((2.0 * std::f64::consts::PI * radius / spacing).ceil() as usize).max(6);
    for i in 0..n_len {
        let along = a + axis * ((i as f64 + 0.5) / n_len as f64);
        for j in 0..n_around {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_around as f64;
            let normal = e1 * theta.cos() + e2 * theta.sin();
            emit(along + normal * radius, normal);
        }
    }
}

fn box_to_meters(b: &Aabb, per_meter: f64) -> Aabb {
    Aabb {
        min: b.min / per_meter,
        max: b.max / per_meter,
    }
}
