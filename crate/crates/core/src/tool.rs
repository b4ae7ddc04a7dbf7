//! Harvesting tool physics: stem trapping, laser energy deposition, the
//! falling fruit passing the photo interrupters, and the trapper/laser
//! interlock.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::StrawberryTruth;

pub const GRAVITY: f64 = 9.81;

/// Absorbs floating-point noise when comparing a lateral error against the
/// trapper half-width.
pub const TRAP_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolGeometry {
    pub groove_width: f64,
    pub trapper_width: f64,
    pub focal_length: f64,
    pub lens_stroke: f64,
    /// Fall distance below the groove plane at which the IR beams cross.
    pub interrupter_drop: f64,
    /// Length of fall path inside the tool; a fruit that falls further
    /// without crossing the beams has left the detection region.
    pub passage_depth: f64,
}

impl Default for ToolGeometry {
    fn default() -> Self {
        ToolGeometry {
            groove_width: 0.035,
            trapper_width: 0.030,
            focal_length: 0.25,
            lens_stroke: 0.006,
            interrupter_drop: 0.05,
            passage_depth: 0.15,
        }
    }
}

impl ToolGeometry {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("groove_width", self.groove_width),
            ("trapper_width", self.trapper_width),
            ("focal_length", self.focal_length),
            ("lens_stroke", self.lens_stroke),
            ("passage_depth", self.passage_depth),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(key, "must be > 0"));
            }
        }
        if !(self.interrupter_drop >= 0.0) {
            return Err(Error::config("interrupter_drop", "must be >= 0"));
        }
        if self.trapper_width > self.groove_width {
            return Err(Error::config("trapper_width", "must not exceed groove_width"));
        }
        Ok(())
    }

    pub fn half_tolerance(&self) -> f64 {
        self.trapper_width / 2.0
    }

    pub fn to_meters(&mut self, per_meter: f64) {
        for v in [
            &mut self.groove_width,
            &mut self.trapper_width,
            &mut self.focal_length,
            &mut self.lens_stroke,
            &mut self.interrupter_drop,
            &mut self.passage_depth,
        ] {
            *v /= per_meter;
        }
    }
}

/// Linear energy-threshold cut: the stem parts once deposited energy
/// reaches `cut_energy_per_area` times its cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutModel {
    /// Watts.
    pub laser_power: f64,
    /// J/m².
    pub cut_energy_per_area: f64,
    /// Fraction of each lens stroke spent on the stem. When absent it is
    /// stem diameter over lens stroke, clamped to (0, 1].
    pub duty: Option<f64>,
}

/// Calibration anchor: a 3 mm stem cut at 50 W takes 2.3 s.
pub const ANCHOR_POWER: f64 = 50.0;
pub const ANCHOR_CUT_TIME: f64 = 2.3;
pub const ANCHOR_STEM_DIAMETER: f64 = 0.003;

impl Default for CutModel {
    fn default() -> Self {
        CutModel::calibrated(
            ANCHOR_POWER,
            ANCHOR_CUT_TIME,
            ANCHOR_STEM_DIAMETER,
            ToolGeometry::default().lens_stroke,
        )
    }
}

impl CutModel {
    /// Model whose `power` laser cuts a `stem_diameter` stem in exactly
    /// `cut_time` seconds with the stem-over-stroke duty.
    pub fn calibrated(power: f64, cut_time: f64, stem_diameter: f64, lens_stroke: f64) -> Self {
        let duty = stroke_duty(stem_diameter, lens_stroke);
        let area = std::f64::consts::PI * (stem_diameter / 2.0).powi(2);
        CutModel {
            laser_power: power,
            cut_energy_per_area: power * duty * cut_time / area,
            duty: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.laser_power > 0.0) {
            return Err(Error::config("laser_power", "must be > 0"));
        }
        if !(self.cut_energy_per_area > 0.0) {
            return Err(Error::config("cut_energy_per_area", "must be > 0"));
        }
        if let Some(d) = self.duty {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::config("duty", "must be in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn duty_for(&self, stem_diameter: f64, lens_stroke: f64) -> f64 {
        self.duty.unwrap_or_else(|| stroke_duty(stem_diameter, lens_stroke))
    }

    pub fn required_energy(&self, stem: &StrawberryTruth) -> f64 {
        self.cut_energy_per_area * stem.cross_section()
    }

    /// Continuous-time cut duration.
    pub fn cut_time(&self, stem: &StrawberryTruth, geom: &ToolGeometry) -> f64 {
        self.required_energy(stem) / (self.laser_power * self.duty_for(stem.stem_diameter, geom.lens_stroke))
    }
}

fn stroke_duty(stem_diameter: f64, lens_stroke: f64) -> f64 {
    (stem_diameter / lens_stroke).clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapOutcome {
    Trapped,
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapResult {
    pub outcome: TrapOutcome,
    /// Stem y at groove height minus tool y.
    pub lateral_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterrupterPair {
    /// `true` while the beam is unbroken.
    pub ir1: bool,
    pub ir2: bool,
}

impl InterrupterPair {
    pub const CLEAR: InterrupterPair = InterrupterPair { ir1: true, ir2: true };

    pub fn clear(&self) -> bool {
        self.ir1 && self.ir2
    }
}

/// Slides the trapper at the tool's current position. The stem is caught
/// when its lateral offset at groove height is within half the trapper
/// width; a caught stem is pushed to the groove center.
pub fn trap_stem(tool_pos: &Vec3, fruit: &StrawberryTruth, geom: &ToolGeometry) -> Result<TrapResult> {
    if fruit.detached {
        return Err(Error::State(format!("strawberry {} already detached", fruit.id)));
    }
    let bottom = fruit.stem_bottom();
    let z = tool_pos.z.clamp(bottom.z, fruit.stem_top.z.max(bottom.z));
    let stem = fruit.stem_point_at(z).unwrap_or(bottom);
    let lateral_error = stem.y - tool_pos.y;
    let outcome = if lateral_error.abs() <= geom.half_tolerance() + TRAP_EPSILON {
        TrapOutcome::Trapped
    } else {
        TrapOutcome::Missed
    };
    Ok(TrapResult { outcome, lateral_error })
}

/// One laser time step. Returns the new accumulated energy and whether the
/// stem has been severed.
pub fn laser_step(
    cut: &CutModel,
    geom: &ToolGeometry,
    stem: &StrawberryTruth,
    dt: f64,
    accumulated: f64,
) -> Result<(f64, bool)> {
    if !(dt > 0.0) {
        return Err(Error::RejectedInput("laser time step must be > 0".into()));
    }
    let duty = cut.duty_for(stem.stem_diameter, geom.lens_stroke);
    let next = accumulated + cut.laser_power * duty * dt;
    Ok((next, next >= cut.required_energy(stem)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallTrace {
    /// Beam states sampled every `dt` from the moment of release.
    pub trace: Vec<(f64, InterrupterPair)>,
    /// Time after release at which a beam broke, if it did.
    pub detect_time: Option<f64>,
}

/// Free fall from rest past the photo interrupters, sampled every `dt`.
pub fn free_fall_detect(_fruit: &StrawberryTruth, geom: &ToolGeometry, dt: f64) -> Result<FallTrace> {
    if !(dt > 0.0) {
        return Err(Error::RejectedInput("fall time step must be > 0".into()));
    }
    let reachable = geom.interrupter_drop <= geom.passage_depth;
    let mut trace = Vec::new();
    let mut k: u64 = 0;
    loop {
        let t = k as f64 * dt;
        let fallen = 0.5 * GRAVITY * t * t;
        if reachable && fallen >= geom.interrupter_drop {
            let broken = InterrupterPair { ir1: false, ir2: false };
            trace.push((t, broken));
            return Ok(FallTrace {
                trace,
                detect_time: Some(t),
            });
        }
        trace.push((t, InterrupterPair::CLEAR));
        if fallen > geom.passage_depth {
            return Ok(FallTrace {
                trace,
                detect_time: None,
            });
        }
        k += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolPhase {
    /// Trapper retracted, laser off.
    Ready,
    /// Trapper forward; `stem` holds the trapped fruit id if any.
    Extended { stem: Option<u32> },
    /// Trapper forward on a stem with the laser firing.
    Cutting { stem: u32 },
}

/// Trapper and laser state with the interlock rules enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct Tool {
    pub phase: ToolPhase,
    pub energy: f64,
}

impl Default for Tool {
    fn default() -> Self {
        Tool {
            phase: ToolPhase::Ready,
            energy: 0.0,
        }
    }
}

impl Tool {
    pub fn trap(&mut self, tool_pos: &Vec3, fruit: &StrawberryTruth, geom: &ToolGeometry) -> Result<TrapResult> {
        if self.phase != ToolPhase::Ready {
            return Err(Error::State(format!("trap requested in phase {:?}", self.phase)));
        }
        let result = trap_stem(tool_pos, fruit, geom)?;
        let stem = (result.outcome == TrapOutcome::Trapped).then_some(fruit.id);
        self.phase = ToolPhase::Extended { stem };
        self.energy = 0.0;
        Ok(result)
    }

    /// Extends the trapper without a stem (no fruit to engage).
    pub fn trap_empty(&mut self) -> Result<()> {
        if self.phase != ToolPhase::Ready {
            return Err(Error::State(format!("trap requested in phase {:?}", self.phase)));
        }
        self.phase = ToolPhase::Extended { stem: None };
        Ok(())
    }

    pub fn laser_on(&mut self) -> Result<()> {
        match self.phase {
            ToolPhase::Extended { stem: Some(id) } => {
                self.phase = ToolPhase::Cutting { stem: id };
                Ok(())
            }
            other => Err(Error::State(format!("laser on refused in phase {other:?}"))),
        }
    }

    pub fn step(&mut self, cut: &CutModel, geom: &ToolGeometry, stem: &StrawberryTruth, dt: f64) -> Result<bool> {
        match self.phase {
            ToolPhase::Cutting { stem: id } if id == stem.id => {
                let (e, done) = laser_step(cut, geom, stem, dt, self.energy)?;
                self.energy = e;
                Ok(done)
            }
            other => Err(Error::State(format!("laser step on stem {} in phase {other:?}", stem.id))),
        }
    }

    pub fn laser_off(&mut self) -> Result<()> {
        match self.phase {
            ToolPhase::Cutting { stem } => {
                self.phase = ToolPhase::Extended { stem: Some(stem) };
                Ok(())
            }
            other => Err(Error::State(format!("laser off in phase {other:?}"))),
        }
    }

    pub fn laser_active(&self) -> bool {
        matches!(self.phase, ToolPhase::Cutting { .. })
    }

    /// Retracts the trapper.
    pub fn release_stem(&mut self) -> Result<()> {
        match self.phase {
            ToolPhase::Extended { .. } => {
                self.phase = ToolPhase::Ready;
                Ok(())
            }
            ToolPhase::Cutting { .. } => Err(Error::State("release with laser on".into())),
            ToolPhase::Ready => Err(Error::State("release with trapper already retracted".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_scene;

    fn fruit() -> StrawberryTruth {
        generate_scene(1, 1, 1.0, 0.0).unwrap().strawberries[0].clone()
    }

    fn tool_at_offset(f: &StrawberryTruth, lateral_error: f64) -> Vec3 {
        let z = f.stem_bottom().z + 0.015;
        let stem = f.stem_point_at(z).unwrap();
        Vec3::new(stem.x, stem.y - lateral_error, z)
    }

    #[test]
    fn trap_tolerance_points() {
        let f = fruit();
        let g = ToolGeometry::default();
        let r = trap_stem(&tool_at_offset(&f, 0.014), &f, &g).unwrap();
        assert_eq!(r.outcome, TrapOutcome::Trapped);
        let r = trap_stem(&tool_at_offset(&f, -0.016), &f, &g).unwrap();
        assert_eq!(r.outcome, TrapOutcome::Missed);
        let r = trap_stem(&tool_at_offset(&f, 0.0), &f, &g).unwrap();
        assert_eq!(r.outcome, TrapOutcome::Trapped);
        assert_eq!(r.lateral_error, 0.0);
    }

    #[test]
    fn trap_step_function_sweep() {
        let f = fruit();
        let g = ToolGeometry::default();
        for mm in 0..=30 {
            for sign in [1.0, -1.0] {
                let e = sign * mm as f64 / 1000.0;
                let r = trap_stem(&tool_at_offset(&f, e), &f, &g).unwrap();
                let expect = if mm <= 15 { TrapOutcome::Trapped } else { TrapOutcome::Missed };
                assert_eq!(r.outcome, expect, "error {mm} mm");
            }
        }
    }

    #[test]
    fn trap_detached_is_state_error() {
        let mut f = fruit();
        f.detached = true;
        assert!(matches!(
            trap_stem(&Vec3::zeros(), &f, &ToolGeometry::default()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn calibrated_cut_time() {
        let f = fruit();
        let g = ToolGeometry::default();
        let cut = CutModel::default();
        assert!((cut.cut_time(&f, &g) - 2.3).abs() < 1e-12);
        let double = CutModel {
            laser_power: 100.0,
            ..cut.clone()
        };
        assert!((double.cut_time(&f, &g) - 1.15).abs() < 1e-12);
    }

    #[test]
    fn stepped_cut_within_one_dt() {
        let f = fruit();
        let g = ToolGeometry::default();
        let cut = CutModel::default();
        let dt = 0.01;
        let (mut e, mut k) = (0.0, 0u32);
        loop {
            k += 1;
            let (next, done) = laser_step(&cut, &g, &f, dt, e).unwrap();
            assert!(next > e);
            e = next;
            if done {
                break;
            }
        }
        let t = k as f64 * dt;
        assert!((t - cut.cut_time(&f, &g)).abs() <= dt, "t = {t}");
    }

    #[test]
    fn fall_detection_time() {
        let f = fruit();
        let g = ToolGeometry::default();
        let dt = 1e-4;
        let fall = free_fall_detect(&f, &g, dt).unwrap();
        let expect = (2.0 * 0.05 / GRAVITY).sqrt();
        assert!((expect - 0.10096).abs() < 1e-4);
        let t = fall.detect_time.unwrap();
        assert!(t >= expect && t - expect <= dt);
        let last = fall.trace.last().unwrap().1;
        assert!(!last.ir1 || !last.ir2);
        assert!(fall.trace[..fall.trace.len() - 1].iter().all(|(_, p)| p.clear()));

        let zero = ToolGeometry {
            interrupter_drop: 0.0,
            ..g.clone()
        };
        assert_eq!(free_fall_detect(&f, &zero, dt).unwrap().detect_time, Some(0.0));

        let unreachable = ToolGeometry {
            interrupter_drop: 0.5,
            ..g
        };
        assert_eq!(free_fall_detect(&f, &unreachable, dt).unwrap().detect_time, None);
    }

    #[test]
    fn interlock_rules() {
        let f = fruit();
        let g = ToolGeometry::default();
        let cut = CutModel::default();
        let mut tool = Tool::default();
        assert!(tool.release_stem().is_err(), "release before trap");
        assert!(tool.laser_on().is_err(), "laser before trap");

        tool.trap(&tool_at_offset(&f, 0.0), &f, &g).unwrap();
        tool.laser_on().unwrap();
        assert!(tool.release_stem().is_err(), "release with laser on");
        tool.step(&cut, &g, &f, 0.01).unwrap();
        tool.laser_off().unwrap();
        tool.release_stem().unwrap();
        assert!(tool.release_stem().is_err(), "double release");

        let mut missed = Tool::default();
        missed.trap(&tool_at_offset(&f, 0.02), &f, &g).unwrap();
        assert!(missed.laser_on().is_err(), "laser after missed trap");
        missed.release_stem().unwrap();
    }

    #[test]
    fn geometry_validation() {
        assert!(ToolGeometry::default().validate().is_ok());
        let bad = ToolGeometry {
            trapper_width: 0.04,
            ..ToolGeometry::default()
        };
        assert!(bad.validate().is_err());
    }
}
