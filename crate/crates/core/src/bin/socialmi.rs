use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use socialmi::env::render::{render_ansi, save_png};
use socialmi::metrics::{aggregate_sweep, write_sweep, IterationRecord};
use socialmi::sensors::dataset::sample_pretrain_dataset;
use socialmi::sensors::Sensors;
use socialmi::trainer::{collect_trajectories, evaluate_run, run_sweep, run_training, ExperimentConfig, Mode, Run, RunOptions};
use socialmi::{Error, Result};

#[derive(Parser)]
#[command(name = "socialmi", version, about = "Commons harvesting with decentralized PPO agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cms,
    Baseline,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Cms => vec![Mode::Cms],
            ModeArg::Baseline => vec![Mode::Baseline],
            ModeArg::Both => vec![Mode::Cms, Mode::Baseline],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ansi,
    Png,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory of pretrained sensors shared between runs.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        /// Also write every environment event to events.jsonl.
        #[arg(long)]
        events: bool,
    },
    /// Collect random-play frames and pretrain the sensors.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Play a checkpoint without learning and report the indices.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// Play a checkpoint and draw the grid.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, value_enum, default_value_t = Format::Ansi)]
        format: Format,
        /// Where PNG frames go; defaults to `<checkpoint>/frames`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        cell_px: u32,
    },
    /// Several seeds of one or both modes, aggregated with confidence bands.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range such as `1..5`.
        #[arg(long, default_value = "1..5")]
        seeds: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("seed range {text:?} is not of the form a..b"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn print_record(r: &IterationRecord) {
    let psi = r.psi.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "iter {:>5}  U {:8.3}  E {:.3}  P {:.3}  S {:8.2}  psi {}  H {:.3}  I {:.4}",
        r.iteration, r.u, r.e, r.p, r.s, psi, r.h_bar, r.i_shifted
    );
}

fn train(config: &ExperimentConfig, out: &Path, cache: Option<PathBuf>, resume: bool, events: bool) -> Result<()> {
    let options = RunOptions {
        out_dir: Some(out.to_path_buf()),
        cache_dir: cache,
        resume,
        write_events: events,
    };
    let artifacts = run_training(config, &options, print_record)?;
    if let Some(csv) = artifacts.metrics_csv {
        println!("metrics written to {}", csv.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, mode, seed, out, cache, resume, events } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            train(&cfg, &out, cache, resume, events)
        }
        Command::Pretrain { config, steps, agents, seed, out } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            cfg.pretrain_steps = steps.unwrap_or(cfg.pretrain_steps);
            cfg.pretrain_agents = agents.unwrap_or(cfg.pretrain_agents);
            cfg.pretrain_seed = seed.unwrap_or(cfg.pretrain_seed);
            let dataset = sample_pretrain_dataset(
                &cfg.map_spec()?,
                cfg.pretrain_steps,
                cfg.pretrain_agents,
                cfg.pretrain_seed,
                cfg.validation_fraction,
            )?;
            std::fs::create_dir_all(&out)?;
            dataset.save(&out.join("frames.smds"))?;
            let sensors = Sensors::pretrain(&dataset, &cfg.sensor_config(), cfg.pretrain_seed)?;
            sensors.save(&out.join("sensors"))?;
            let report = &sensors.report;
            println!(
                "validation accuracy: x {:.4}  y {:.4}",
                report.x.final_accuracy(),
                report.y.final_accuracy()
            );
            Ok(())
        }
        Command::Evaluate { checkpoint, steps } => {
            let mut run = Run::load_checkpoint(&checkpoint)?;
            let record = evaluate_run(&mut run, steps)?;
            print_record(&record);
            Ok(())
        }
        Command::Render { checkpoint, frames, format, out, cell_px } => {
            let mut run = Run::load_checkpoint(&checkpoint)?;
            let out = out.unwrap_or_else(|| checkpoint.join("frames"));
            if matches!(format, Format::Png) {
                std::fs::create_dir_all(&out)?;
            }
            for k in 0..frames {
                match format {
                    Format::Ansi => println!("t = {}\n{}", run.env.t(), render_ansi(&run.env)),
                    Format::Png => save_png(&run.env, &out.join(format!("frame_{k:04}.png")), cell_px)?,
                }
                collect_trajectories(&mut run.env, &run.sensors, &run.controller_net, &mut run.learners, 1)?;
            }
            Ok(())
        }
        Command::Sweep { config, seeds, mode, out, cache } => {
            let base = ExperimentConfig::load(&config)?;
            let seeds = parse_seeds(&seeds)?;
            if seeds.len() < 2 {
                return Err(Error::InvalidArgument("a sweep needs at least two seeds".into()));
            }
            let cache = cache.unwrap_or_else(|| out.join("sensor_cache"));
            let results = run_sweep(&base, &seeds, &mode.modes(), &out, Some(&cache))?;
            let mut summaries = Vec::new();
            for (m, runs) in &results {
                summaries.push((m.label(), aggregate_sweep(runs)?));
            }
            let refs: Vec<(&str, &_)> = summaries.iter().map(|(l, s)| (*l, s)).collect();
            write_sweep(&out, &refs)?;
            println!("sweep written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
