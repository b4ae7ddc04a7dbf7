use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use berrypick_core::camera::CameraRig;
use berrypick_core::config::ScenarioConfig;
use berrypick_core::geometry::ColoredPointCloud;
use berrypick_core::harness::{cmd_bench, cmd_run, cmd_sweep};
use berrypick_core::localization::localize;
use berrypick_core::log::BoxRecord;
use berrypick_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "berrypick", version, about = "Strawberry harvesting simulator and localization harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run full harvest passes and write logs, cycle tables and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the camera and merged clouds to this directory.
        #[arg(long)]
        dump_clouds: Option<PathBuf>,
    },
    /// Run the config's parameter sweep over all seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time the localization pipeline on synthetic clouds.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Localize fruit in two camera cloud files and print the boxes as JSON.
    Localize {
        #[arg(long)]
        cloud1: PathBuf,
        #[arg(long)]
        cloud2: PathBuf,
        /// Scenario config supplying camera poses and localization parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Io { .. } | Error::Parse { .. } => 3,
        _ => 1,
    }
}

fn read_cloud(path: &Path) -> Result<ColoredPointCloud, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ColoredPointCloud::read_text(BufReader::new(f))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            dump_clouds,
        } => {
            let cfg = ScenarioConfig::load(&config)?;
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            for s in cmd_run(&cfg, &seeds, &out, dump_clouds.as_deref())? {
                let m = &s.metrics;
                println!(
                    "seed {}: harvested {}/{} mean_cycle={} mean_cut={} violations={}",
                    s.seed,
                    m.harvested,
                    m.ripe_in_workspace,
                    fmt_opt(m.mean_cycle_time),
                    fmt_opt(m.mean_cut_time),
                    s.safety_violations.len()
                );
            }
        }
        Command::Sweep { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let report = cmd_sweep(&cfg, Some(&out))?;
            for (value, rate) in report.success_by_value() {
                println!("{} {value}: success {}", report.axis.as_str(), fmt_opt(rate));
            }
            println!("safety violations: {}", report.violations());
        }
        Command::Bench { config, seed, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let report = cmd_bench(&cfg, seed, out.as_deref())?;
            for r in &report.rows {
                println!(
                    "{} points: p50 {:.2} ms  p95 {:.2} ms  max {:.2} ms  ({} boxes)",
                    r.points, r.p50_ms, r.p95_ms, r.max_ms, r.boxes
                );
            }
        }
        Command::Localize { cloud1, cloud2, params } => {
            let cfg = match params {
                Some(p) => ScenarioConfig::load(&p)?,
                None => ScenarioConfig::default(),
            };
            let rig: CameraRig = cfg.rig()?;
            let c1 = read_cloud(&cloud1)?;
            let c2 = read_cloud(&cloud2)?;
            let loc = localize(&c1, &c2, &rig.cam1.pose, &rig.cam2.pose, &cfg.localization)?;
            let boxes: Vec<BoxRecord> = loc.boxes.iter().map(BoxRecord::from).collect();
            println!("{}", serde_json::to_string_pretty(&boxes).expect("boxes serialize"));
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
