//! Acceptance gate. Runs every criterion in order and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use berrypick_core::camera::capture_rig;
use berrypick_core::config::{ScenarioConfig, SweepAxis, SweepSpec};
use berrypick_core::controller::run_harvest;
use berrypick_core::geometry::Vec3;
use berrypick_core::harness::{cmd_bench, cmd_run, cmd_sweep, SweepReport};
use berrypick_core::localization::{connected_components, localize};
use berrypick_core::log::{ControllerPhase, Event};
use berrypick_core::rng;
use berrypick_core::scene::StrawberryTruth;
use berrypick_core::tool::{CutModel, Tool, ToolGeometry};
use rand::Rng;

const PAPER9: &str = include_str!("../../../scenarios/paper9.json");
const ROBUSTNESS: &str = include_str!("../../../scenarios/robustness.json");
const BENCH: &str = include_str!("../../../scenarios/bench.json");

// Pinned tolerances.
const TRAP_LIMIT_M: f64 = 0.015;
const MISS_FROM_M: f64 = 0.016;
const STEP_RUNTIME_S: f64 = 60.0;
const LOC_SEEDS: u64 = 50;
const LOC_RATE: f64 = 0.95;
const LOC_CENTER_ERR_M: f64 = 0.005;
const ORACLE_CLOUDS: u64 = 100;
const ORACLE_MAX_POINTS: usize = 2000;
const LATENCY_POINTS: usize = 100_000;
const LATENCY_BUDGET_MS: f64 = 100.0;
const BENCH_RUNTIME_S: f64 = 120.0;
const CUT_DT: f64 = 0.001;
const CUT_50W_S: f64 = 2.3;
const CUT_100W_S: f64 = 1.15;
const CYCLE_S: f64 = 8.02;
const ZMIN_LEG_S: f64 = 1.77;
const TIMING_BAND: f64 = 0.25;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn paper9() -> ScenarioConfig {
    ScenarioConfig::from_json(PAPER9).expect("paper9 scenario loads")
}

fn within(value: f64, target: f64, band: f64) -> bool {
    (value - target).abs() <= band * target
}

fn trap_step(sweep: &SweepReport, elapsed: f64) -> Outcome {
    let mut bad = Vec::new();
    for (v, rate) in sweep.success_by_value() {
        let expected = if v.abs() <= TRAP_LIMIT_M {
            1.0
        } else if v.abs() >= MISS_FROM_M {
            0.0
        } else {
            continue;
        };
        if rate != Some(expected) {
            bad.push(format!("offset {v}: {rate:?}"));
        }
    }
    let seeds = sweep.by_value().first().map_or(0, |g| g.1.len());
    outcome(
        bad.is_empty() && elapsed < STEP_RUNTIME_S,
        format!(
            "{} offsets x {seeds} seeds, {} mismatches {:?}, {elapsed:.1}s",
            sweep.by_value().len(),
            bad.len(),
            bad
        ),
    )
}

fn localization_correctness() -> Outcome {
    let mut cfg = paper9();
    for c in [&mut cfg.cameras.cam1, &mut cfg.cameras.cam2] {
        c.depth_noise_sigma = 0.0;
        c.dropout_rate = 0.0;
    }
    let mut clean_fail = Vec::new();
    for &seed in &cfg.seeds {
        let s = cfg.setup(seed).unwrap();
        let (c1, c2) = capture_rig(&s.scene, &s.rig, seed);
        let loc = localize(&c1, &c2, &s.rig.cam1.pose, &s.rig.cam2.pose, &s.params).unwrap();
        let mut fruit: Vec<&StrawberryTruth> = s.scene.strawberries.iter().collect();
        fruit.sort_by(|a, b| a.center.y.total_cmp(&b.center.y));
        let ok = loc.boxes.len() == 9
            && loc.boxes.iter().zip(&fruit).all(|(b, f)| {
                b.bounds.contains(&f.center)
                    && fruit.iter().filter(|g| b.bounds.contains(&g.center)).count() == 1
            });
        if !ok {
            clean_fail.push(seed);
        }
    }

    let cfg = paper9();
    let (mut hit, mut total) = (0usize, 0usize);
    for seed in 0..LOC_SEEDS {
        let s = cfg.setup(seed).unwrap();
        let (c1, c2) = capture_rig(&s.scene, &s.rig, seed);
        let loc = localize(&c1, &c2, &s.rig.cam1.pose, &s.rig.cam2.pose, &s.params).unwrap();
        for f in &s.scene.strawberries {
            total += 1;
            if loc
                .boxes
                .iter()
                .any(|b| (b.bounds.center() - f.center).norm() <= LOC_CENTER_ERR_M)
            {
                hit += 1;
            }
        }
    }
    let rate = hit as f64 / total as f64;
    outcome(
        clean_fail.is_empty() && rate >= LOC_RATE,
        format!(
            "zero-noise seeds failing {clean_fail:?}; noisy {hit}/{total} = {:.3} within {} mm",
            rate,
            LOC_CENTER_ERR_M * 1e3
        ),
    )
}

fn oracle_components(points: &[Vec3], tol: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (points[i] - points[j]).norm_squared() <= tol * tol {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

fn random_cloud(seed: u64) -> (Vec<Vec3>, f64) {
    let mut r = rng::stream(seed, 0xACCE_0003);
    let n = r.random_range(1..=ORACLE_MAX_POINTS);
    let tol = r.random_range(0.005..0.03);
    let extent = r.random_range(0.02..0.4);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        match r.random_range(0..4) {
            // lattice at exactly the tolerance spacing
            0 => {
                let base = Vec3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), 0.3);
                for k in 0..r.random_range(2..10) {
                    pts.push(base + Vec3::new(k as f64 * tol, 0.0, 0.0));
                }
            }
            // duplicate of an earlier point
            1 if !pts.is_empty() => {
                let i = r.random_range(0..pts.len());
                pts.push(pts[i]);
            }
            _ => pts.push(Vec3::new(
                r.random_range(-extent..extent),
                r.random_range(-extent..extent),
                r.random_range(-extent..extent),
            )),
        }
    }
    pts.truncate(n);
    (pts, tol)
}

fn clustering_oracle() -> Outcome {
    let mut mismatches = Vec::new();
    for seed in 0..ORACLE_CLOUDS {
        let (pts, tol) = random_cloud(seed);
        let mut got = connected_components(&pts, tol);
        got.sort_by_key(|c| c[0]);
        if got != oracle_components(&pts, tol) {
            mismatches.push(seed);
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("seeds 0..{ORACLE_CLOUDS}, mismatching seeds {mismatches:?}"),
    )
}

fn machine() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}, {cores} core(s)")
}

fn latency() -> Outcome {
    let mut cfg = ScenarioConfig::from_json(BENCH).unwrap();
    let start = Instant::now();
    if let Some(b) = &mut cfg.bench {
        b.sizes = vec![LATENCY_POINTS];
    }
    let report = cmd_bench(&cfg, 0, None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let row = &report.rows[0];
    outcome(
        row.points == LATENCY_POINTS && row.max_ms <= LATENCY_BUDGET_MS && elapsed < BENCH_RUNTIME_S,
        format!(
            "{} points: p50 {:.2} ms, p95 {:.2} ms, max {:.2} ms (budget {LATENCY_BUDGET_MS} ms) on {}",
            row.points,
            row.p50_ms,
            row.p95_ms,
            row.max_ms,
            machine()
        ),
    )
}

fn nominal_stem() -> StrawberryTruth {
    StrawberryTruth {
        id: 0,
        center: Vec3::new(0.40, 0.0, 0.40),
        radius: 0.015,
        ripe: true,
        stem_top: Vec3::new(0.45, 0.0, 0.55),
        stem_bend: 0.0,
        stem_diameter: 0.003,
        detached: false,
    }
}

fn stepped_cut_time(cut: &CutModel) -> f64 {
    let geom = ToolGeometry::default();
    let stem = nominal_stem();
    let mut tool = Tool::default();
    tool.trap(&Vec3::new(0.45, 0.0, 0.43), &stem, &geom).unwrap();
    tool.laser_on().unwrap();
    let mut k = 0u64;
    while !tool.step(cut, &geom, &stem, CUT_DT).unwrap() {
        k += 1;
    }
    (k + 1) as f64 * CUT_DT
}

fn cut_anchor() -> Outcome {
    let cut50 = CutModel::default();
    let cut100 = CutModel {
        laser_power: 100.0,
        ..cut50.clone()
    };
    let (t50, t100) = (stepped_cut_time(&cut50), stepped_cut_time(&cut100));
    let pass = (t50 - CUT_50W_S).abs() <= CUT_DT + 1e-12 && (t100 - CUT_100W_S).abs() <= CUT_DT + 1e-12;
    outcome(pass, format!("50 W: {t50:.3} s, 100 W: {t100:.3} s, dt {CUT_DT} s"))
}

fn descent_legs(events: &[Event]) -> Vec<f64> {
    let mut phase = None;
    let mut legs = Vec::new();
    for e in events {
        match e {
            Event::Phase { phase: p } => phase = Some(*p),
            Event::Move { dur, .. } if phase == Some(ControllerPhase::DescendZmin) => legs.push(*dur),
            _ => {}
        }
    }
    legs
}

fn move_durations(events: &[Event]) -> Vec<f64> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Move { dur, .. } => Some(*dur),
            _ => None,
        })
        .collect()
}

fn cycle_time() -> Outcome {
    let cfg = paper9();
    let (mut cycles, mut home_legs, mut later_legs) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let run = run_harvest(&cfg.setup(seed).unwrap(), seed).unwrap();
        let events: Vec<Event> = run.log.records.iter().map(|r| r.event.clone()).collect();
        cycles.extend(run.reports.iter().map(|r| r.cycle_time));
        let legs = descent_legs(&events);
        home_legs.push(legs[0]);
        later_legs.extend_from_slice(&legs[1..]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (c, h, l) = (mean(&cycles), mean(&home_legs), mean(&later_legs));

    let mut fast = cfg.clone();
    fast.robot.velocity_scale = 2.0 * cfg.robot.velocity_scale;
    let seed = cfg.seeds[0];
    let slow_run = run_harvest(&cfg.setup(seed).unwrap(), seed).unwrap();
    let fast_run = run_harvest(&fast.setup(seed).unwrap(), seed).unwrap();
    let slow: Vec<Event> = slow_run.log.records.into_iter().map(|r| r.event).collect();
    let fastv: Vec<Event> = fast_run.log.records.into_iter().map(|r| r.event).collect();
    let (ds, df) = (move_durations(&slow), move_durations(&fastv));
    let halved = ds.len() == df.len() && ds.iter().zip(&df).all(|(s, f)| *f == s / 2.0);

    let pass = within(c, CYCLE_S, TIMING_BAND)
        && within(h, ZMIN_LEG_S, TIMING_BAND)
        && within(l, ZMIN_LEG_S, TIMING_BAND)
        && halved;
    outcome(
        pass,
        format!(
            "velocity_scale {}: mean cycle {c:.2} s (target {CYCLE_S}), HOME->z_min {h:.2} s, \
             post-cut ->z_min {l:.2} s (target {ZMIN_LEG_S}), band +/-{:.0}%; {} moves halved exactly: {halved}",
            cfg.robot.velocity_scale,
            TIMING_BAND * 100.0,
            ds.len()
        ),
    )
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type().unwrap().is_dir() {
            for (k, v) in dir_contents(&entry.path()) {
                out.insert(format!("{name}/{k}"), v);
            }
        } else if !name.starts_with("timing_") {
            out.insert(name, fs::read(entry.path()).unwrap());
        }
    }
    out
}

fn determinism() -> Outcome {
    let cfg = paper9();
    let robust = ScenarioConfig::from_json(ROBUSTNESS).unwrap();
    let seeds = [0, 1];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        let clouds = tmp.path().join("clouds");
        cmd_run(&cfg, &seeds, tmp.path(), Some(&clouds)).unwrap();
        cmd_sweep(&robust, Some(&tmp.path().join("sweep"))).unwrap();
        snapshots.push(dir_contents(tmp.path()));
    }
    let differing: Vec<&String> = snapshots[0]
        .iter()
        .filter(|(k, v)| snapshots[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let same_keys = snapshots[0].keys().eq(snapshots[1].keys());
    outcome(
        differing.is_empty() && same_keys && !snapshots[0].is_empty(),
        format!(
            "{} artifacts compared across two runs, {} differ {:?}",
            snapshots[0].len(),
            differing.len(),
            differing
        ),
    )
}

fn safety(robustness: &SweepReport) -> Outcome {
    let base = paper9();
    let mut cfg = base.clone();
    cfg.seeds = vec![0, 1, 2];
    let sweeps = [
        (SweepAxis::Velocity, vec![0.25, 0.5, 1.0]),
        (SweepAxis::Power, vec![25.0, 50.0, 100.0]),
        (SweepAxis::Noise, vec![0.0, 0.002, 0.004]),
        (SweepAxis::Offset, vec![-0.02, 0.0, 0.02]),
    ];
    let mut runs = robustness.points.len();
    let mut violations: Vec<String> = robustness
        .points
        .iter()
        .flat_map(|p| p.summary.safety_violations.clone())
        .collect();
    for (axis, values) in sweeps {
        cfg.sweep = Some(SweepSpec { axis, values });
        let report = cmd_sweep(&cfg, None).unwrap();
        runs += report.points.len();
        violations.extend(report.points.iter().flat_map(|p| p.summary.safety_violations.clone()));
    }
    outcome(
        violations.is_empty(),
        format!("{runs} audited runs over 5 sweeps, {} violations {:?}", violations.len(), violations),
    )
}

fn main() -> ExitCode {
    let robust = ScenarioConfig::from_json(ROBUSTNESS).unwrap();
    let start = Instant::now();
    let sweep = cmd_sweep(&robust, None).unwrap();
    let sweep_secs = start.elapsed().as_secs_f64();

    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("trap-tolerance step function", Box::new(|| trap_step(&sweep, sweep_secs))),
        ("localization correctness", Box::new(localization_correctness)),
        ("clustering oracle equivalence", Box::new(clustering_oracle)),
        ("latency budget", Box::new(latency)),
        ("cut-time anchor and scaling", Box::new(cut_anchor)),
        ("cycle-time reproduction", Box::new(cycle_time)),
        ("determinism", Box::new(determinism)),
        ("state-machine safety", Box::new(|| safety(&sweep))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
