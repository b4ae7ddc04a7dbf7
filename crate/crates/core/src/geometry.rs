//! Frames, rigid transforms, colored point clouds and axis-aligned boxes.
//!
//! All lengths are meters. Colors are 8-bit RGB.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance for the orthonormality and determinant checks on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Tool orientation as roll, pitch, yaw. The tool frame is kept parallel to
/// the base frame, so this is always zero and no operation reads it.
pub const TOOL_ORIENTATION_RPY: [f64; 3] = [0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Base,
    Cam1,
    Cam2,
    Tool,
}

impl Frame {
    pub fn as_str(self) -> &'static str {
        match self {
            Frame::Base => "base",
            Frame::Cam1 => "cam1",
            Frame::Cam2 => "cam2",
            Frame::Tool => "tool",
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Frame::Base),
            "cam1" => Ok(Frame::Cam1),
            "cam2" => Ok(Frame::Cam2),
            "tool" => Ok(Frame::Tool),
            other => Err(Error::RejectedInput(format!("unknown frame id `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb { r, g, b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Vec3,
    pub color: Rgb,
}

impl ColoredPoint {
    pub fn new(position: Vec3, color: Rgb) -> Self {
        ColoredPoint { position, color }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColoredPointCloud {
    pub frame: Frame,
    pub points: Vec<ColoredPoint>,
}

impl ColoredPointCloud {
    pub fn new(frame: Frame) -> Self {
        ColoredPointCloud {
            frame,
            points: Vec::new(),
        }
    }

    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn from_points(frame: Frame, points: Vec<ColoredPoint>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !p.position.iter().all(|v| v.is_finite()))
        {
            return Err(Error::RejectedInput(format!(
                "point {i} has non-finite coordinates"
            )));
        }
        Ok(ColoredPointCloud { frame, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes the cloud in the plain-text dump format: a `frame=<id> count=<n>`
    /// header followed by one `x y z r g b` line per point.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "frame={} count={}", self.frame, self.points.len())?;
        for p in &self.points {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                p.position.x, p.position.y, p.position.z, p.color.r, p.color.g, p.color.b
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("cloud text is ascii")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            what: "point cloud",
            line,
            message,
        };
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| parse_err(1, e.to_string()))?,
            None => return Err(parse_err(1, "missing header".into())),
        };
        let mut frame = None;
        let mut count = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("frame", v)) => frame = Some(v.parse::<Frame>().map_err(|e| parse_err(1, e.to_string()))?),
                Some(("count", v)) => {
                    count = Some(
                        v.parse::<usize>()
                            .map_err(|e| parse_err(1, format!("bad count: {e}")))?,
                    )
                }
                _ => return Err(parse_err(1, format!("unexpected header field `{field}`"))),
            }
        }
        let frame = frame.ok_or_else(|| parse_err(1, "header lacks frame=".into()))?;
        let count = count.ok_or_else(|| parse_err(1, "header lacks count=".into()))?;

        let mut points = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(parse_err(
                    lineno,
                    format!("expected 6 fields, found {}", fields.len()),
                ));
            }
            let mut xyz = [0.0; 3];
            for (k, slot) in xyz.iter_mut().enumerate() {
                *slot = fields[k]
                    .parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("bad coordinate: {e}")))?;
                if !slot.is_finite() {
                    return Err(parse_err(lineno, "non-finite coordinate".into()));
                }
            }
            let mut rgb = [0u8; 3];
            for (k, slot) in rgb.iter_mut().enumerate() {
                *slot = fields[3 + k]
                    .parse::<u8>()
                    .map_err(|e| parse_err(lineno, format!("bad color channel: {e}")))?;
            }
            points.push(ColoredPoint::new(
                Vec3::new(xyz[0], xyz[1], xyz[2]),
                Rgb::new(rgb[0], rgb[1], rgb[2]),
            ));
        }
        if points.len() != count {
            return Err(parse_err(
                count + 1,
                format!("header declares {count} points, found {}", points.len()),
            ));
        }
        Ok(ColoredPointCloud { frame, points })
    }
}

/// Rotation plus translation mapping coordinates in `source` to `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
    pub source: Frame,
    pub target: Frame,
}

impl RigidTransform {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vec3,
        source: Frame,
        target: Frame,
    ) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::RejectedInput("transform has non-finite entries".into()));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ROTATION_TOLERANCE {
            return Err(Error::RejectedInput(format!(
                "rotation not orthonormal (max |RᵀR − I| = {ortho_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::RejectedInput(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(RigidTransform {
            rotation,
            translation,
            source,
            target,
        })
    }

    pub fn identity(source: Frame, target: Frame) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            source,
            target,
        }
    }

    pub fn from_translation(t: Vec3, source: Frame, target: Frame) -> Self {
        RigidTransform {
            translation: t,
            ..Self::identity(source, target)
        }
    }

    /// Camera pose from an eye position looking at `look_at`, with `up` as a
    /// hint for the image "up" direction. The resulting camera frame has
    /// +z along the optical axis, +x to the right and +y down the image.
    pub fn look_at(eye: Vec3, look_at: Vec3, up: Vec3, source: Frame, target: Frame) -> Result<Self> {
        let forward = look_at - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::RejectedInput("look_at target coincides with eye".into()));
        }
        let z = forward.normalize();
        let right = z.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::RejectedInput("up hint is parallel to the optical axis".into()));
        }
        let x = right.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye, source, target)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            source: self.target,
            target: self.source,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Result<Self> {
        if other.target != self.source {
            return Err(Error::RejectedInput(format!(
                "cannot compose {}→{} after {}→{}",
                self.source, self.target, other.source, other.target
            )));
        }
        Ok(RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            source: other.source,
            target: self.target,
        })
    }
}

pub fn transform_point(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.rotation * p + t.translation
}

pub fn transform_cloud(t: &RigidTransform, cloud: &ColoredPointCloud) -> Result<ColoredPointCloud> {
    if cloud.frame != t.source {
        return Err(Error::RejectedInput(format!(
            "cloud is in frame {} but transform maps from {}",
            cloud.frame, t.source
        )));
    }
    let points = cloud
        .points
        .iter()
        .map(|p| ColoredPoint::new(transform_point(t, &p.position), p.color))
        .collect();
    Ok(ColoredPointCloud {
        frame: t.target,
        points,
    })
}

pub fn merge_clouds(a: &ColoredPointCloud, b: &ColoredPointCloud) -> Result<ColoredPointCloud> {
    if a.frame != b.frame {
        return Err(Error::RejectedInput(format!(
            "cannot merge clouds in frames {} and {}",
            a.frame, b.frame
        )));
    }
    let mut points = Vec::with_capacity(a.len() + b.len());
    points.extend_from_slice(&a.points);
    points.extend_from_slice(&b.points);
    Ok(ColoredPointCloud {
        frame: a.frame,
        points,
    })
}

/// Exact minimum and maximum of coordinate `axis` (0 = x, 1 = y, 2 = z).
pub fn cloud_extent(cloud: &ColoredPointCloud, axis: usize) -> Result<(f64, f64)> {
    if axis > 2 {
        return Err(Error::RejectedInput(format!("axis index {axis} not in 0..=2")));
    }
    extent_of(cloud.points.iter().map(|p| p.position[axis]))
        .ok_or(Error::EmptyInput("cloud_extent on empty cloud"))
}

fn extent_of(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Smallest value of a scalar list.
pub fn min_of(values: &[f64]) -> Result<f64> {
    extent_of(values.iter().copied())
        .map(|(lo, _)| lo)
        .ok_or(Error::EmptyInput("minimum of empty list"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|k| !(min[k] <= max[k])) {
            return Err(Error::RejectedInput(format!(
                "box min ({}, {}, {}) exceeds max ({}, {}, {})",
                min.x, min.y, min.z, max.x, max.y, max.z
            )));
        }
        Ok(Aabb { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        let m = Vec3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn translate(&self, offset: &Vec3) -> Aabb {
        Aabb {
            min: self.min + offset,
            max: self.max + offset,
        }
    }

    /// Ray/box slab test; returns the entry distance along `dir` if the ray
    /// hits the box for some `t` in `[0, t_max]`.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            if dir[k].abs() < 1e-300 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let mut ta = (self.min[k] - origin[k]) * inv;
            let mut tb = (self.max[k] - origin[k]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}
