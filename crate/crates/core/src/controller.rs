//! The harvesting state machine: localize once from HOME, then for every
//! box in ascending-y order descend, align, ascend, trap, cut until a beam
//! breaks, release; finally return HOME.
//!
//! A cycle runs from the previous cycle's end (the first HOME arrival for
//! the first cycle) to the fruit's detachment detection, or to the release
//! when nothing was detached.

use serde::{Deserialize, Serialize};

use crate::camera::{capture_rig, CameraRig};
use crate::error::{Error, Result};
use crate::geometry::{merge_clouds, transform_cloud, ColoredPointCloud, Vec3};
use crate::localization::{localize, LocalizationParams, LocalizationStats, StrawberryBox};
use crate::log::{
    BoxRecord, BoxSource, ControllerPhase, CycleOutcome, CycleReport, Event, HarvestEventLog, LOG_SCHEMA_VERSION,
};
use crate::motion::{compute_z_min, plan_cycle_waypoints, robot_move, RobotState};
use crate::rng::RNG_ALGORITHM;
use crate::scene::{detach_fruit, Scene, StrawberryTruth};
use crate::tool::{free_fall_detect, CutModel, Tool, ToolGeometry, TrapOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarvestOptions {
    /// Laser and fall integration step (seconds).
    pub dt: f64,
    /// Longest the laser may stay on for one fruit (seconds).
    pub laser_cap: f64,
    pub box_source: BoxSource,
    /// Added to every localized box before planning.
    pub offset: [f64; 3],
}

impl Default for HarvestOptions {
    fn default() -> Self {
        HarvestOptions {
            dt: 0.001,
            laser_cap: 10.0,
            box_source: BoxSource::Pipeline,
            offset: [0.0; 3],
        }
    }
}

impl HarvestOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be > 0"));
        }
        if !(self.laser_cap > 0.0) {
            return Err(Error::config("laser_cap", "must be > 0"));
        }
        Ok(())
    }

    pub fn offset(&self) -> Vec3 {
        Vec3::new(self.offset[0], self.offset[1], self.offset[2])
    }
}

/// Everything one harvest pass needs besides the seed.
#[derive(Debug, Clone)]
pub struct HarvestSetup {
    pub scene: Scene,
    pub rig: CameraRig,
    pub params: LocalizationParams,
    pub robot: RobotState,
    pub home: Vec3,
    pub geom: ToolGeometry,
    pub cut: CutModel,
    pub options: HarvestOptions,
    /// Recorded in the log header.
    pub config_hash: String,
}

/// The three clouds seen by one localization pass.
#[derive(Debug, Clone)]
pub struct CapturedClouds {
    pub cam1: ColoredPointCloud,
    pub cam2: ColoredPointCloud,
    pub base: ColoredPointCloud,
}

#[derive(Debug, Clone)]
pub struct HarvestRun {
    pub log: HarvestEventLog,
    pub reports: Vec<CycleReport>,
    pub scene: Scene,
    pub clouds: Option<CapturedClouds>,
}

pub fn inject_localization_error(boxes: &[StrawberryBox], offset: &Vec3) -> Vec<StrawberryBox> {
    boxes
        .iter()
        .map(|b| StrawberryBox {
            bounds: b.bounds.translate(offset),
            ..*b
        })
        .collect()
}

/// Exact boxes of the ripe, attached fruit inside the crop window.
pub fn truth_boxes(scene: &Scene, params: &LocalizationParams) -> Vec<StrawberryBox> {
    let window = params.window();
    let mut fruit: Vec<&StrawberryTruth> = scene
        .strawberries
        .iter()
        .filter(|s| s.ripe && !s.detached && window.contains(&s.center))
        .collect();
    fruit.sort_by(|a, b| {
        a.center
            .y
            .total_cmp(&b.center.y)
            .then(a.center.x.total_cmp(&b.center.x))
            .then(a.center.z.total_cmp(&b.center.z))
    });
    fruit
        .into_iter()
        .enumerate()
        .map(|(index, s)| StrawberryBox {
            index,
            bounds: s.bounding_box(),
            point_count: 0,
        })
        .collect()
}

/// Attached fruit whose center is nearest to the box center.
fn fruit_for_box<'a>(scene: &'a Scene, b: &StrawberryBox) -> Option<&'a StrawberryTruth> {
    let c = b.bounds.center();
    scene
        .strawberries
        .iter()
        .filter(|s| !s.detached)
        .min_by(|a, b| (a.center - c).norm_squared().total_cmp(&(b.center - c).norm_squared()))
}

struct Runner<'a> {
    setup: &'a HarvestSetup,
    log: HarvestEventLog,
    robot: RobotState,
    scene: Scene,
    tool: Tool,
    clock: f64,
}

impl Runner<'_> {
    fn phase(&mut self, phase: ControllerPhase) {
        self.log.push(self.clock, Event::Phase { phase });
    }

    fn move_to(&mut self, target: Vec3) -> Result<()> {
        let (next, rec) = robot_move(&self.robot, target, self.clock)?;
        self.robot = next;
        self.log.push(
            rec.t_start,
            Event::Move {
                from: rec.from.into(),
                to: rec.to.into(),
                dur: rec.duration,
            },
        );
        self.clock = rec.t_end;
        Ok(())
    }
}

pub fn run_harvest(setup: &HarvestSetup, seed: u64) -> Result<HarvestRun> {
    setup.options.validate()?;
    setup.geom.validate()?;
    setup.cut.validate()?;
    setup.params.validate()?;
    for (name, cam) in [("cam1", &setup.rig.cam1), ("cam2", &setup.rig.cam2)] {
        if cam.sees(&setup.home) {
            return Err(Error::config(
                "robot.home",
                format!("HOME position is inside the {name} field of view"),
            ));
        }
    }

    let mut run = Runner {
        setup,
        log: HarvestEventLog::default(),
        robot: setup.robot.clone(),
        scene: setup.scene.clone(),
        tool: Tool::default(),
        clock: 0.0,
    };
    run.log.push(
        0.0,
        Event::Header {
            schema: LOG_SCHEMA_VERSION,
            seed,
            config_hash: setup.config_hash.clone(),
            rng: RNG_ALGORITHM.into(),
        },
    );
    run.log.push(
        0.0,
        Event::Scene {
            fruits: run.scene.strawberries.len(),
            ripe_in_workspace: run.scene.ripe_in_workspace(),
        },
    );

    run.phase(ControllerPhase::Home);
    run.move_to(setup.home)?;

    let (boxes, stats, clouds) = match setup.options.box_source {
        BoxSource::Pipeline => {
            let (c1, c2) = capture_rig(&run.scene, &setup.rig, seed);
            let loc = localize(&c1, &c2, &setup.rig.cam1.pose, &setup.rig.cam2.pose, &setup.params)?;
            run.log.wall.localization_ms = Some(loc.elapsed.as_secs_f64() * 1e3);
            let base = merge_clouds(
                &transform_cloud(&setup.rig.cam1.pose, &c1)?,
                &transform_cloud(&setup.rig.cam2.pose, &c2)?,
            )?;
            (loc.boxes, loc.stats, Some(CapturedClouds { cam1: c1, cam2: c2, base }))
        }
        BoxSource::Truth => (truth_boxes(&run.scene, &setup.params), LocalizationStats::default(), None),
    };
    let offset = setup.options.offset();
    let boxes = inject_localization_error(&boxes, &offset);
    run.log.push(
        run.clock,
        Event::Localize {
            source: setup.options.box_source,
            boxes: boxes.iter().map(BoxRecord::from).collect(),
            stats,
            offset: offset.into(),
        },
    );

    let mut reports = Vec::new();
    if boxes.is_empty() {
        run.log.push(run.clock, Event::NoFruit);
    } else {
        let z_min = compute_z_min(&boxes)?;
        let mut cycle_start = run.clock;
        for b in &boxes {
            let report = harvest_one(&mut run, b, z_min, cycle_start)?;
            cycle_start = run.clock;
            reports.push(report);
        }
    }

    run.phase(ControllerPhase::Home);
    run.move_to(setup.home)?;
    run.phase(ControllerPhase::Done);

    Ok(HarvestRun {
        log: run.log,
        reports,
        scene: run.scene,
        clouds,
    })
}

fn harvest_one(run: &mut Runner<'_>, b: &StrawberryBox, z_min: f64, cycle_start: f64) -> Result<CycleReport> {
    let setup = run.setup;
    let [w1, w2, w3] = plan_cycle_waypoints(run.robot.tool_pos, b, z_min);
    run.phase(ControllerPhase::DescendZmin);
    run.move_to(w1)?;
    run.phase(ControllerPhase::AlignXy);
    run.move_to(w2)?;
    run.phase(ControllerPhase::Ascend);
    run.move_to(w3)?;

    run.phase(ControllerPhase::Trap);
    let fruit = fruit_for_box(&run.scene, b).cloned();
    let trap = match &fruit {
        Some(f) => Some(run.tool.trap(&run.robot.tool_pos, f, &setup.geom)?),
        None => {
            run.tool.trap_empty()?;
            None
        }
    };
    let fruit_id = fruit.as_ref().map(|f| f.id);
    let trapped = trap.is_some_and(|t| t.outcome == TrapOutcome::Trapped);
    run.log.push(
        run.clock,
        Event::Trap {
            box_index: b.index,
            fruit: fruit_id,
            lateral_error: trap.map(|t| t.lateral_error),
            outcome: if trapped { TrapOutcome::Trapped } else { TrapOutcome::Missed },
        },
    );

    let (outcome, cut_time, cycle_end) = match (&fruit, trapped) {
        (Some(f), true) => cut_until_detached(run, f)?,
        _ => (CycleOutcome::MissedTrap, 0.0, None),
    };

    run.phase(ControllerPhase::Release);
    run.tool.release_stem()?;
    run.log.push(run.clock, Event::Release { fruit: fruit_id });

    let end = cycle_end.unwrap_or(run.clock);
    let cycle_time = end - cycle_start;
    run.log.push(
        run.clock,
        Event::Cycle {
            box_index: b.index,
            fruit: fruit_id,
            outcome,
            start: cycle_start,
            cycle_time,
            cut_time,
        },
    );
    Ok(CycleReport {
        fruit_id,
        cycle_time,
        cut_time,
        outcome,
    })
}

/// Fires the laser on a trapped stem until a beam breaks or the cap
/// expires. Returns the outcome, the laser-on-to-severance time and the
/// detection time if any.
fn cut_until_detached(run: &mut Runner<'_>, fruit: &StrawberryTruth) -> Result<(CycleOutcome, f64, Option<f64>)> {
    let setup = run.setup;
    let dt = setup.options.dt;
    run.phase(ControllerPhase::Cut);
    run.tool.laser_on()?;
    let t_on = run.clock;
    run.log.push(t_on, Event::LaserOn { fruit: fruit.id });

    let fall = free_fall_detect(fruit, &setup.geom, dt)?;
    let fall_steps = fall.detect_time.map(|_| fall.trace.len() as u64 - 1);
    let max_steps = (setup.options.laser_cap / dt).floor() as u64;

    let mut step: u64 = 0;
    let mut cut_step: Option<u64> = None;
    let detected = loop {
        if let (Some(c), Some(f)) = (cut_step, fall_steps) {
            if step >= c + f {
                break true;
            }
        }
        if step >= max_steps {
            break false;
        }
        step += 1;
        let done = run.tool.step(&setup.cut, &setup.geom, fruit, dt)?;
        if done && cut_step.is_none() {
            cut_step = Some(step);
            run.scene = detach_fruit(&run.scene, fruit.id)?;
        }
    };

    run.clock = t_on + step as f64 * dt;
    let cut_at = cut_step.map(|c| t_on + c as f64 * dt);
    let cut_time = cut_step.map_or(0.0, |c| c as f64 * dt);
    let energy = run.tool.energy;
    let outcome = if detected {
        run.log.push(
            run.clock,
            Event::DetachDetect {
                fruit: fruit.id,
                cut_at: cut_at.expect("detection implies a cut"),
                energy,
            },
        );
        CycleOutcome::Harvested
    } else {
        run.log.push(
            run.clock,
            Event::LaserTimeout {
                fruit: fruit.id,
                cut_at,
                energy,
            },
        );
        CycleOutcome::NotDetected
    };
    run.tool.laser_off()?;
    run.log.push(run.clock, Event::LaserOff { fruit: fruit.id, energy });
    let detect_time = detected.then_some(run.clock);
    Ok((outcome, cut_time, detect_time))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cycles: usize,
    pub harvested: usize,
    pub ripe_in_workspace: usize,
    pub mean_cycle_time: Option<f64>,
    pub mean_cut_time: Option<f64>,
    pub success_rate: Option<f64>,
    /// Duration of the first HOME-to-z_min descent (seconds).
    pub first_descent_time: Option<f64>,
    /// Wall-clock localization time; only known for in-memory logs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub localization_ms: Option<f64>,
}

/// Aggregates over harvested cycles.
pub fn cycle_metrics(log: &HarvestEventLog) -> Result<Metrics> {
    if log.records.is_empty() {
        return Err(Error::EmptyInput("cycle_metrics on empty log"));
    }
    let mut ripe = 0;
    let mut cycles = 0;
    let mut cycle_times = Vec::new();
    let mut cut_times = Vec::new();
    let mut first_descent = None;
    let mut last_phase = None;
    for r in &log.records {
        match &r.event {
            Event::Scene { ripe_in_workspace, .. } => ripe = *ripe_in_workspace,
            Event::Phase { phase } => last_phase = Some(*phase),
            Event::Move { dur, .. } => {
                if last_phase == Some(ControllerPhase::DescendZmin) && first_descent.is_none() {
                    first_descent = Some(*dur);
                }
            }
            Event::Cycle {
                outcome,
                cycle_time,
                cut_time,
                ..
            } => {
                cycles += 1;
                if *outcome == CycleOutcome::Harvested {
                    cycle_times.push(*cycle_time);
                    cut_times.push(*cut_time);
                }
            }
            _ => {}
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(Metrics {
        cycles,
        harvested: cycle_times.len(),
        ripe_in_workspace: ripe,
        mean_cycle_time: mean(&cycle_times),
        mean_cut_time: mean(&cut_times),
        success_rate: (ripe > 0).then(|| cycle_times.len() as f64 / ripe as f64),
        first_descent_time: first_descent,
        localization_ms: log.wall.localization_ms,
    })
}

/// Checks the safety and bookkeeping rules a log must satisfy. Returns one
/// message per violation.
pub fn audit_log(log: &HarvestEventLog) -> Vec<String> {
    let mut bad = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    let mut phase: Option<ControllerPhase> = None;
    let mut trapped: Option<u32> = None;
    let mut extended = false;
    let mut laser: Option<(u32, f64)> = None;
    let mut detected: Option<(u32, f64, f64)> = None;

    for (i, r) in log.records.iter().enumerate() {
        if r.t < last_t {
            bad.push(format!("record {i}: time goes backwards ({} < {last_t})", r.t));
        }
        last_t = r.t;
        match &r.event {
            Event::Phase { phase: p } => {
                if !p.can_follow(phase) {
                    bad.push(format!("record {i}: phase {p:?} cannot follow {phase:?}"));
                }
                phase = Some(*p);
            }
            Event::Move { .. } => {
                if extended || laser.is_some() {
                    bad.push(format!("record {i}: move with trapper extended or laser on"));
                }
            }
            Event::Trap { fruit, outcome, .. } => {
                if extended {
                    bad.push(format!("record {i}: trap while trapper already extended"));
                }
                extended = true;
                trapped = match outcome {
                    TrapOutcome::Trapped => *fruit,
                    TrapOutcome::Missed => None,
                };
            }
            Event::LaserOn { fruit } => {
                if trapped != Some(*fruit) {
                    bad.push(format!("record {i}: laser_on for fruit {fruit} without a successful trap"));
                }
                if laser.is_some() {
                    bad.push(format!("record {i}: laser_on while already on"));
                }
                laser = Some((*fruit, r.t));
            }
            Event::DetachDetect { fruit, energy, .. } => {
                if laser.map(|l| l.0) != Some(*fruit) {
                    bad.push(format!("record {i}: detach_detect without laser on fruit {fruit}"));
                }
                detected = Some((*fruit, r.t, *energy));
            }
            Event::LaserOff { fruit, energy } => {
                if laser.map(|l| l.0) != Some(*fruit) {
                    bad.push(format!("record {i}: laser_off without laser on"));
                }
                if let Some((f, t, e)) = detected.take() {
                    if f != *fruit || r.t != t || *energy != e {
                        bad.push(format!("record {i}: energy or time accrued after detach_detect"));
                    }
                }
                laser = None;
            }
            Event::Release { .. } => {
                if laser.is_some() {
                    bad.push(format!("record {i}: release with laser on"));
                }
                if !extended {
                    bad.push(format!("record {i}: release with trapper retracted"));
                }
                extended = false;
                trapped = None;
            }
            _ => {}
        }
    }
    if laser.is_some() {
        bad.push("log ends with laser on".into());
    }
    bad
}

/// Sum of cycle times plus HOME legs; equals the final clock when no time
/// is unaccounted for.
pub fn accounted_time(log: &HarvestEventLog) -> f64 {
    let mut total = 0.0;
    let mut last_phase = None;
    for r in &log.records {
        match &r.event {
            Event::Phase { phase } => last_phase = Some(*phase),
            Event::Move { dur, .. } if last_phase == Some(ControllerPhase::Home) => total += dur,
            Event::Cycle { cycle_time, .. } => total += cycle_time,
            _ => {}
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::RobotParams;
    use crate::scene::generate_scene;

    fn setup(n: usize, source: BoxSource) -> HarvestSetup {
        let params = LocalizationParams::default();
        let robot = RobotParams::default();
        HarvestSetup {
            scene: generate_scene(5, n, 1.0, 0.0).unwrap(),
            rig: CameraRig::default(),
            robot: robot.state(&params.window()).unwrap(),
            params,
            home: robot.home(),
            geom: ToolGeometry::default(),
            cut: CutModel::default(),
            options: HarvestOptions {
                box_source: source,
                ..HarvestOptions::default()
            },
            config_hash: "test".into(),
        }
    }

    #[test]
    fn inject_translates_boxes() {
        let s = setup(3, BoxSource::Truth);
        let boxes = truth_boxes(&s.scene, &s.params);
        let moved = inject_localization_error(&boxes, &Vec3::new(0.0, 0.015, 0.0));
        for (a, b) in boxes.iter().zip(&moved) {
            assert_eq!(b.bounds.min.y, a.bounds.min.y + 0.015);
            assert_eq!(b.bounds.max.x, a.bounds.max.x);
        }
        assert_eq!(inject_localization_error(&boxes, &Vec3::zeros()), boxes);
    }

    #[test]
    fn truth_run_harvests_everything() {
        let s = setup(4, BoxSource::Truth);
        let run = run_harvest(&s, 1).unwrap();
        assert_eq!(run.reports.len(), 4);
        assert!(run.reports.iter().all(|r| r.outcome == CycleOutcome::Harvested));
        assert!(run.scene.strawberries.iter().all(|f| f.detached));
        assert!(audit_log(&run.log).is_empty(), "{:?}", audit_log(&run.log));
        assert!((accounted_time(&run.log) - run.log.last_time()).abs() < 1e-6);
    }

    #[test]
    fn no_fruit_run() {
        let s = setup(0, BoxSource::Truth);
        let run = run_harvest(&s, 1).unwrap();
        assert!(run.reports.is_empty());
        assert!(run.log.records.iter().any(|r| r.event == Event::NoFruit));
    }

    #[test]
    fn home_inside_view_rejected() {
        let mut s = setup(1, BoxSource::Truth);
        s.home = Vec3::new(0.40, 0.0, 0.40);
        assert!(matches!(run_harvest(&s, 1), Err(Error::Config { ref key, .. }) if key == "robot.home"));
    }

    #[test]
    fn laser_cap_gives_not_detected() {
        let mut s = setup(1, BoxSource::Truth);
        s.geom.interrupter_drop = 0.5;
        s.options.laser_cap = 3.0;
        let run = run_harvest(&s, 1).unwrap();
        assert_eq!(run.reports[0].outcome, CycleOutcome::NotDetected);
        assert!(run.log.records.iter().any(|r| r.event.kind() == "laser_timeout"));
        assert!(audit_log(&run.log).is_empty());
    }

    #[test]
    fn metrics_on_empty_log() {
        assert!(matches!(cycle_metrics(&HarvestEventLog::default()), Err(Error::EmptyInput(_))));
    }
}
