//! Harvest event log (JSONL) and cycle report table (CSV).
//!
//! Every record carries the simulated time `t` in seconds and an `event`
//! tag. The first record is always a `header` naming the schema version,
//! seed, config hash and RNG algorithm. Wall-clock measurements are kept
//! out of the JSONL stream so that identical runs produce identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localization::{LocalizationStats, StrawberryBox};
use crate::tool::TrapOutcome;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControllerPhase {
    Home,
    DescendZmin,
    AlignXy,
    Ascend,
    Trap,
    Cut,
    Release,
    Done,
}

impl ControllerPhase {
    /// Allowed successor phases.
    pub fn can_follow(self, prev: Option<ControllerPhase>) -> bool {
        use ControllerPhase::*;
        matches!(
            (prev, self),
            (None, Home)
                | (Some(Home), DescendZmin | Home | Done)
                | (Some(DescendZmin), AlignXy)
                | (Some(AlignXy), Ascend)
                | (Some(Ascend), Trap)
                | (Some(Trap), Cut | Release)
                | (Some(Cut), Release)
                | (Some(Release), DescendZmin | Home)
        )
    }
}

/// Where the boxes driving the harvest came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxSource {
    /// Camera capture plus the localization pipeline.
    Pipeline,
    /// Exact fruit extents from the ground-truth scene.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleOutcome {
    Harvested,
    MissedTrap,
    NotDetected,
}

impl CycleOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleOutcome::Harvested => "harvested",
            CycleOutcome::MissedTrap => "missed_trap",
            CycleOutcome::NotDetected => "not_detected",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "harvested" => Some(CycleOutcome::Harvested),
            "missed_trap" => Some(CycleOutcome::MissedTrap),
            "not_detected" => Some(CycleOutcome::NotDetected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub index: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub points: usize,
}

impl From<&StrawberryBox> for BoxRecord {
    fn from(b: &StrawberryBox) -> Self {
        BoxRecord {
            index: b.index,
            min: b.bounds.min.into(),
            max: b.bounds.max.into(),
            points: b.point_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Header {
        schema: u32,
        seed: u64,
        config_hash: String,
        rng: String,
    },
    Scene {
        fruits: usize,
        ripe_in_workspace: usize,
    },
    Phase {
        phase: ControllerPhase,
    },
    Move {
        from: [f64; 3],
        to: [f64; 3],
        dur: f64,
    },
    Localize {
        source: BoxSource,
        boxes: Vec<BoxRecord>,
        stats: LocalizationStats,
        offset: [f64; 3],
    },
    NoFruit,
    Trap {
        box_index: usize,
        fruit: Option<u32>,
        lateral_error: Option<f64>,
        outcome: TrapOutcome,
    },
    LaserOn {
        fruit: u32,
    },
    DetachDetect {
        fruit: u32,
        /// Time at which the stem parted.
        cut_at: f64,
        energy: f64,
    },
    LaserTimeout {
        fruit: u32,
        cut_at: Option<f64>,
        energy: f64,
    },
    LaserOff {
        fruit: u32,
        energy: f64,
    },
    Release {
        fruit: Option<u32>,
    },
    Cycle {
        box_index: usize,
        fruit: Option<u32>,
        outcome: CycleOutcome,
        start: f64,
        cycle_time: f64,
        cut_time: f64,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Header { .. } => "header",
            Event::Scene { .. } => "scene",
            Event::Phase { .. } => "phase",
            Event::Move { .. } => "move",
            Event::Localize { .. } => "localize",
            Event::NoFruit => "no_fruit",
            Event::Trap { .. } => "trap",
            Event::LaserOn { .. } => "laser_on",
            Event::DetachDetect { .. } => "detach_detect",
            Event::LaserTimeout { .. } => "laser_timeout",
            Event::LaserOff { .. } => "laser_off",
            Event::Release { .. } => "release",
            Event::Cycle { .. } => "cycle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

/// Measurements that depend on the host machine.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub localization_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HarvestEventLog {
    pub records: Vec<Record>,
    pub wall: WallClock,
}

impl HarvestEventLog {
    pub fn push(&mut self, t: f64, event: Event) {
        self.records.push(Record { t, event });
    }

    pub fn last_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
                what: "event log",
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(HarvestEventLog {
            records,
            wall: WallClock::default(),
        })
    }

    pub fn header(&self) -> Option<(u64, &str)> {
        self.records.iter().find_map(|r| match &r.event {
            Event::Header { seed, config_hash, .. } => Some((*seed, config_hash.as_str())),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub fruit_id: Option<u32>,
    pub cycle_time: f64,
    pub cut_time: f64,
    pub outcome: CycleOutcome,
}

pub const CYCLE_CSV_HEADER: &str = "fruit_id,cycle_time,cut_time,outcome";

/// Cycle reports plus the provenance line written above the CSV header.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTable {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<CycleReport>,
}

impl CycleTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# config_hash={} seed={}", self.config_hash, self.seed).unwrap();
        writeln!(out, "{CYCLE_CSV_HEADER}").unwrap();
        for r in &self.rows {
            let id = r.fruit_id.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{id},{},{},{}", r.cycle_time, r.cut_time, r.outcome.as_str()).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            what: "cycle csv",
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, prov) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let prov = prov
            .strip_prefix("# ")
            .ok_or_else(|| err(1, "missing provenance comment".into()))?;
        let mut config_hash = None;
        let mut seed = None;
        for field in prov.split_whitespace() {
            match field.split_once('=') {
                Some(("config_hash", v)) => config_hash = Some(v.to_string()),
                Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|e| err(1, e.to_string()))?),
                _ => return Err(err(1, format!("unexpected field `{field}`"))),
            }
        }
        match lines.next() {
            Some((_, h)) if h == CYCLE_CSV_HEADER => {}
            _ => return Err(err(2, format!("expected header `{CYCLE_CSV_HEADER}`"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(i + 1, e.to_string()));
            rows.push(CycleReport {
                fruit_id: if f[0].is_empty() {
                    None
                } else {
                    Some(f[0].parse().map_err(|e: std::num::ParseIntError| err(i + 1, e.to_string()))?)
                },
                cycle_time: num(f[1])?,
                cut_time: num(f[2])?,
                outcome: CycleOutcome::parse(f[3]).ok_or_else(|| err(i + 1, format!("unknown outcome `{}`", f[3])))?,
            });
        }
        Ok(CycleTable {
            config_hash: config_hash.ok_or_else(|| err(1, "missing config_hash".into()))?,
            seed: seed.ok_or_else(|| err(1, "missing seed".into()))?,
            rows,
        })
    }
}
