//! Batch drivers behind the command line: single runs, parameter sweeps and
//! the localization latency benchmark, plus their on-disk artifacts.
//!
//! Event logs, cycle tables, metrics and sweep tables are deterministic for
//! a given config and seed. Wall-clock measurements go to separate
//! `timing_*` files.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::config::{ScenarioConfig, SweepAxis};
use crate::controller::{audit_log, cycle_metrics, run_harvest, HarvestRun, Metrics};
use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, ColoredPoint, ColoredPointCloud, Frame, Vec3};
use crate::localization::{localize, LocalizationParams};
use crate::log::CycleTable;
use crate::rng::{self, STREAM_BENCH};
use crate::scene::{green_color, neutral_color, ripe_color};
use crate::tool::CutModel;

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "BERRYPICK_THREADS";

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Deterministic per-seed summary written as `metrics_seed<N>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub safety_violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    config_hash: String,
    seed: u64,
    localization_ms: Option<f64>,
    run_ms: f64,
}

/// One harvest pass for `seed`, audited.
pub fn run_seed(cfg: &ScenarioConfig, seed: u64) -> Result<(HarvestRun, RunSummary)> {
    let setup = cfg.setup(seed)?;
    let run = run_harvest(&setup, seed)?;
    let mut metrics = cycle_metrics(&run.log)?;
    metrics.localization_ms = None;
    let summary = RunSummary {
        config_hash: setup.config_hash,
        seed,
        metrics,
        safety_violations: audit_log(&run.log),
    };
    Ok((run, summary))
}

/// Runs every seed and writes its event log, cycle table, metrics and
/// timing sidecar under `out`.
pub fn cmd_run(cfg: &ScenarioConfig, seeds: &[u64], out: &Path, dump_clouds: Option<&Path>) -> Result<Vec<RunSummary>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = cfg.hash();
    let mut summaries = Vec::new();
    for &seed in seeds {
        let start = Instant::now();
        let (run, summary) = run_seed(cfg, seed)?;
        let run_ms = start.elapsed().as_secs_f64() * 1e3;

        write_atomic(&out.join(format!("events_seed{seed}.jsonl")), run.log.to_jsonl().as_bytes())?;
        let table = CycleTable {
            config_hash: hash.clone(),
            seed,
            rows: run.reports.clone(),
        };
        write_atomic(&out.join(format!("cycles_seed{seed}.csv")), table.to_csv().as_bytes())?;
        write_atomic(&out.join(format!("metrics_seed{seed}.json")), to_json(&summary).as_bytes())?;
        let timing = Timing {
            config_hash: hash.clone(),
            seed,
            localization_ms: run.log.wall.localization_ms,
            run_ms,
        };
        write_atomic(&out.join(format!("timing_seed{seed}.json")), to_json(&timing).as_bytes())?;

        if let (Some(dir), Some(clouds)) = (dump_clouds, &run.clouds) {
            for (name, cloud) in [("cam1", &clouds.cam1), ("cam2", &clouds.cam2), ("base", &clouds.base)] {
                let path = dir.join(format!("{name}_seed{seed}.txt"));
                write_atomic(&path, cloud.to_text().as_bytes())?;
            }
        }
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Config for one sweep point.
pub fn apply_axis(cfg: &ScenarioConfig, axis: SweepAxis, value: f64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.sweep = None;
    match axis {
        SweepAxis::Offset => c.harvest.offset = [0.0, value, 0.0],
        SweepAxis::Velocity => c.robot.velocity_scale = value,
        SweepAxis::Power => {
            c.cut = CutModel {
                laser_power: value,
                ..c.cut
            }
        }
        SweepAxis::Noise => {
            c.cameras.cam1.depth_noise_sigma = value;
            c.cameras.cam2.depth_noise_sigma = value;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn violations(&self) -> usize {
        self.points.iter().map(|p| p.summary.safety_violations.len()).sum()
    }

    /// Point rows followed by one aggregate row per value.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# config_hash={} axis={}\n", self.config_hash, self.axis.as_str());
        s.push_str("kind,value,seed,cycles,harvested,ripe,success_rate,mean_cycle_time,mean_cut_time,violations\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            let m = &p.summary.metrics;
            s.push_str(&format!(
                "point,{},{},{},{},{},{},{},{},{}\n",
                p.value,
                p.seed,
                m.cycles,
                m.harvested,
                m.ripe_in_workspace,
                opt(m.success_rate),
                opt(m.mean_cycle_time),
                opt(m.mean_cut_time),
                p.summary.safety_violations.len()
            ));
        }
        for (value, rows) in self.by_value() {
            let ripe: usize = rows.iter().map(|p| p.summary.metrics.ripe_in_workspace).sum();
            let harvested: usize = rows.iter().map(|p| p.summary.metrics.harvested).sum();
            let cycles: usize = rows.iter().map(|p| p.summary.metrics.cycles).sum();
            let violations: usize = rows.iter().map(|p| p.summary.safety_violations.len()).sum();
            let mean_of = |f: fn(&Metrics) -> Option<f64>| {
                let v: Vec<f64> = rows.iter().filter_map(|p| f(&p.summary.metrics)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            s.push_str(&format!(
                "aggregate,{},,{},{},{},{},{},{},{}\n",
                value,
                cycles,
                harvested,
                ripe,
                opt((ripe > 0).then(|| harvested as f64 / ripe as f64)),
                opt(mean_of(|m| m.mean_cycle_time)),
                opt(mean_of(|m| m.mean_cut_time)),
                violations
            ));
        }
        s
    }

    /// Points grouped by sweep value, in first-seen order.
    pub fn by_value(&self) -> Vec<(f64, Vec<&SweepPoint>)> {
        let mut groups: Vec<(f64, Vec<&SweepPoint>)> = Vec::new();
        for p in &self.points {
            match groups.iter_mut().find(|g| g.0 == p.value) {
                Some(g) => g.1.push(p),
                None => groups.push((p.value, vec![p])),
            }
        }
        groups
    }

    /// Harvested fraction of ripe fruit per sweep value.
    pub fn success_by_value(&self) -> Vec<(f64, Option<f64>)> {
        self.by_value()
            .into_iter()
            .map(|(v, rows)| {
                let ripe: usize = rows.iter().map(|p| p.summary.metrics.ripe_in_workspace).sum();
                let harvested: usize = rows.iter().map(|p| p.summary.metrics.harvested).sum();
                (v, (ripe > 0).then(|| harvested as f64 / ripe as f64))
            })
            .collect()
    }
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every (value, seed) point of the config's sweep. When `out` is
/// given, per-point logs and the sweep tables are written there.
pub fn cmd_sweep(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<SweepReport> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "scenario has no sweep block"))?;
    let jobs: Vec<(usize, f64, u64)> = spec
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| cfg.seeds.iter().map(move |&s| (i, v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let axis = spec.axis;
    let results: Vec<Result<(SweepPoint, Option<f64>)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, value, seed)| {
                let point_cfg = apply_axis(cfg, axis, value);
                let (run, summary) = run_seed(&point_cfg, seed)?;
                if let Some(dir) = out {
                    let stem = format!("point_{}_{i:03}_seed{seed}", axis.as_str());
                    write_atomic(&dir.join(format!("{stem}.jsonl")), run.log.to_jsonl().as_bytes())?;
                    write_atomic(&dir.join(format!("{stem}.json")), to_json(&summary).as_bytes())?;
                }
                Ok((SweepPoint { value, seed, summary }, run.log.wall.localization_ms))
            })
            .collect()
    });
    let mut points = Vec::with_capacity(results.len());
    let mut timing = format!("# config_hash={}\nvalue,seed,localization_ms\n", cfg.hash());
    for r in results {
        let (p, ms) = r?;
        timing.push_str(&format!(
            "{},{},{}\n",
            p.value,
            p.seed,
            ms.map(|m| m.to_string()).unwrap_or_default()
        ));
        points.push(p);
    }
    let report = SweepReport {
        axis,
        config_hash: cfg.hash(),
        points,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join(format!("sweep_{}.csv", axis.as_str())), report.to_csv().as_bytes())?;
        write_atomic(&dir.join(format!("timing_sweep_{}.csv", axis.as_str())), timing.as_bytes())?;
    }
    Ok(report)
}

/// Points per fruit blob in benchmark clouds, about what the default
/// cameras return for one fruit.
pub const BENCH_FRUIT_POINTS: usize = 450;

/// Camera clouds of exactly `n` points in total resembling a harvesting
/// scene: nine fruit-sized red blobs in the crop window, one outside it,
/// and green or gray clutter filling the rest.
pub fn bench_clouds(rig: &CameraRig, params: &LocalizationParams, n: usize, seed: u64) -> Result<(ColoredPointCloud, ColoredPointCloud)> {
    let mut rng = rng::stream(seed, STREAM_BENCH);
    let window = params.window();
    let mid_x = (window.min.x + window.max.x) / 2.0;
    let mid_y = (window.min.y + window.max.y) / 2.0;
    let mid_z = (window.min.z + window.max.z) / 2.0;
    let mut centers: Vec<Vec3> = (0..9)
        .map(|i| Vec3::new(mid_x, mid_y + (i as f64 - 4.0) * 0.06, mid_z))
        .collect();
    centers.push(Vec3::new(window.max.x + 0.08, mid_y, mid_z));

    let per_fruit = BENCH_FRUIT_POINTS.clamp(params.s_min, params.s_max);
    let mut points = Vec::with_capacity(n);
    for c in &centers {
        for _ in 0..per_fruit.min(n.saturating_sub(points.len())) {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let r = 0.015 + rng.random_range(-0.001..0.001);
            let p = c + Vec3::new(s * phi.cos(), s * phi.sin(), z) * r;
            points.push(ColoredPoint::new(p, ripe_color(&mut rng)));
        }
    }
    let lo = window.min - Vec3::repeat(0.15);
    let hi = window.max + Vec3::repeat(0.15);
    while points.len() < n {
        let p = Vec3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        );
        let color = if rng.random_bool(0.5) {
            green_color(&mut rng)
        } else {
            neutral_color(&mut rng)
        };
        points.push(ColoredPoint::new(p, color));
    }
    let half = points.len() / 2;
    let second = points.split_off(half);
    let c1 = transform_cloud(&rig.cam1.pose.inverse(), &ColoredPointCloud::from_points(Frame::Base, points)?)?;
    let c2 = transform_cloud(&rig.cam2.pose.inverse(), &ColoredPointCloud::from_points(Frame::Base, second)?)?;
    Ok((c1, c2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub points: usize,
    pub boxes: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub seed: u64,
    pub budget_ms: f64,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn within_budget(&self) -> bool {
        self.rows.iter().all(|r| r.max_ms <= self.budget_ms)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Times the localization pipeline on synthetic clouds of each configured
/// size. Each call is timed end to end, transforms included.
pub fn cmd_bench(cfg: &ScenarioConfig, seed: u64, out: Option<&Path>) -> Result<BenchReport> {
    let spec = cfg.bench.clone().unwrap_or_default();
    let rig = cfg.rig()?;
    let mut rows = Vec::new();
    for &n in &spec.sizes {
        let (c1, c2) = bench_clouds(&rig, &cfg.localization, n, seed)?;
        // One untimed call to fault in allocations.
        localize(&c1, &c2, &rig.cam1.pose, &rig.cam2.pose, &cfg.localization)?;
        let mut times = Vec::with_capacity(spec.repeats);
        let mut boxes = 0;
        for _ in 0..spec.repeats {
            let start = Instant::now();
            let loc = localize(&c1, &c2, &rig.cam1.pose, &rig.cam2.pose, &cfg.localization)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            boxes = loc.boxes.len();
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            points: c1.len() + c2.len(),
            boxes,
            p50_ms: percentile(&times, 0.50),
            p95_ms: percentile(&times, 0.95),
            max_ms: *times.last().expect("repeats > 0"),
        });
    }
    let report = BenchReport {
        config_hash: cfg.hash(),
        seed,
        budget_ms: spec.budget_ms,
        threads: 1,
        rows,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("timing_bench.json"), to_json(&report).as_bytes())?;
    }
    Ok(report)
}
