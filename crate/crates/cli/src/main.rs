use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sonarloc::geomap::SemanticMap;
use sonarloc::harness::{
    evaluate, preprocess_sonar, read_json, run_localization, write_json, RunConfig, RunResult,
    ScorerKind,
};
use sonarloc::log::MessageLog;
use sonarloc::simulator::{
    generate_world, scenario, simulate_run, NoiseSpec, SensorSetup, Trajectory, WorldSpec,
};
use sonarloc::Result;

#[derive(Parser)]
#[command(name = "sonarloc", version, about = "Sonar-to-aerial-map localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Baseline,
    Oracle,
}

impl From<ScorerArg> for ScorerKind {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::Baseline => ScorerKind::Baseline,
            ScorerArg::Oracle => ScorerKind::Oracle,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic marina map, plus a sample tour through it.
    GenWorld {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Duration of the sample tour written to OUT/traj.json, seconds.
        #[arg(long, default_value_t = 600.0)]
        tour_seconds: f64,
        #[arg(long, default_value_t = 0.5)]
        speed: f64,
    },
    /// Drive a simulated vehicle through a map and record its sensor log.
    Simulate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Sonar geometry, intensity model and sensor rates.
        #[arg(long)]
        sensor: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the particle filter over a log and write the estimated track.
    Localize {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScorerArg::Baseline)]
        scorer: ScorerArg,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's init_delay, seconds.
        #[arg(long)]
        init_delay: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step and summary position errors of a localization result.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the enhanced version of every sonar frame in a log.
    PreprocessSonar {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn json_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// The log's own sonar geometry wins over the configured one.
fn with_log_footprint(mut cfg: RunConfig, log_dir: &Path) -> Result<RunConfig> {
    if let Some(fp) = MessageLog::load_footprint(log_dir)? {
        fp.validate()?;
        cfg.filter.footprint = fp;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld { spec, out, tour_seconds, speed } => {
            let spec: WorldSpec = json_or_default(spec.as_deref())?;
            let world = generate_world(&spec)?;
            let map_path = world.map.save_dir(&out)?;
            let tour = scenario::marina_tour(&world, tour_seconds, speed)?;
            write_json(&out.join("traj.json"), &tour)?;
            println!(
                "wrote {} ({}x{} px, {} piers, {} boats) and a {:.0} m tour",
                map_path.display(),
                world.map.width(),
                world.map.height(),
                world.piers.len(),
                world.boats.len(),
                tour.length()
            );
        }
        Command::Simulate { world, traj, noise, sensor, seed, out } => {
            let map = SemanticMap::load_dir(&world)?;
            let traj: Trajectory = read_json(&traj)?;
            let noise: NoiseSpec = json_or_default(noise.as_deref())?;
            let setup: SensorSetup = json_or_default(sensor.as_deref())?;
            let log = simulate_run(&map, &traj, &noise, &setup, seed)?;
            log.save(&out, &setup.footprint)?;
            println!("wrote {} records to {}", log.records().len(), out.display());
        }
        Command::Localize { log, map, config, scorer, seed, init_delay, out } => {
            let mut cfg = with_log_footprint(run_config(config.as_deref())?, &log)?;
            if let Some(s) = seed {
                cfg.filter.seed = s;
            }
            if let Some(d) = init_delay {
                cfg.init_delay = d;
            }
            let map = SemanticMap::load_dir(&map)?;
            let messages = MessageLog::load(&log)?;
            let result = run_localization(&messages, &map, &cfg, ScorerKind::from(scorer).scorer())?;
            result.save(&out)?;
            let applied = result.steps.iter().filter(|s| s.applied).count();
            println!("{} steps, {applied} updates applied, wrote {}", result.steps.len(), out.display());
        }
        Command::Evaluate { result, out } => {
            let result = RunResult::load(&result)?;
            let metrics = evaluate(&result, &result.dead_reckoning())?;
            metrics.save(&out)?;
            let (pf_tail, dr_tail) = metrics.tail_means(0.5);
            println!("              mean    rmse     max  final-half");
            println!(
                "filter    {:8.3} {:7.3} {:7.3} {:11.3}",
                metrics.pf.mean, metrics.pf.rmse, metrics.pf.max, pf_tail
            );
            println!(
                "dead-reck {:8.3} {:7.3} {:7.3} {:11.3}",
                metrics.baseline.mean, metrics.baseline.rmse, metrics.baseline.max, dr_tail
            );
            println!("filter better on {:.1}% of steps", 100.0 * metrics.pf_better_fraction);
        }
        Command::PreprocessSonar { log, config, out } => {
            let cfg = with_log_footprint(run_config(config.as_deref())?, &log)?;
            let messages = MessageLog::load(&log)?;
            let n = preprocess_sonar(&messages, &cfg.filter.footprint, &cfg.enhance, &out)?;
            println!("enhanced {n} frames into {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
