//! `imutube`: generate synthetic clips, run the virtual IMU pipeline, fit
//! and apply distribution maps, and evaluate activity classifiers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imutube_core::distmap::{apply_to_stream, DistributionMap};
use imutube_core::harlab::Protocol;
use imutube_core::imusynth::io::write_stream;
use imutube_core::pipeline::{
    exit, fit_stream_map, generate_synthetic, load_streams, report, run_pipeline, CameraMotion,
    GeneratorConfig, ManifestSet, PipelineConfig, PipelineError, Scenario,
};

#[derive(Debug, Parser)]
#[command(name = "imutube", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores); overrides the configuration.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Random seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset: manifest, keypoints, poses, intrinsics,
    /// optional depth/color frames, ground truth and "real" IMU streams.
    SynthGen {
        #[arg(long, default_value_t = 3)]
        subjects: usize,
        /// Comma-separated scenarios (still, walk, run, jump, arm_wave).
        #[arg(long, value_delimiter = ',', default_value = "still,walk,arm_wave")]
        scenarios: Vec<Scenario>,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// static, pan or follow.
        #[arg(long, default_value = "static")]
        camera: CameraMotion,
        /// Render depth and color frames for static cameras too.
        #[arg(long)]
        render_frames: bool,
    },
    /// Process every clip of a manifest into virtual IMU streams.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fit a virtual-to-real distribution map.
    DistmapFit {
        #[arg(long = "virtual")]
        virtual_dir: PathBuf,
        #[arg(long)]
        real: PathBuf,
        /// Seconds of real data per class to fit on (default: all).
        #[arg(long)]
        budget_s: Option<f64>,
    },
    /// Map every stream in a directory through a fitted map.
    DistmapApply {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate one protocol and write its report JSON.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long = "virtual")]
        virtual_dir: PathBuf,
        /// R2R, V2R or Mix2R.
        #[arg(long, default_value = "V2R")]
        protocol: Protocol,
    },
    /// Evaluate every protocol and write JSON, text tables and confusion
    /// matrices.
    Report {
        #[arg(long)]
        real: PathBuf,
        #[arg(long = "virtual")]
        virtual_dir: PathBuf,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.eval.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32, PipelineError> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    match &cli.command {
        Command::SynthGen {
            subjects,
            scenarios,
            duration,
            camera,
            render_frames,
        } => {
            let gen = GeneratorConfig {
                subjects: *subjects,
                scenarios: scenarios.clone(),
                duration_s: *duration,
                camera: *camera,
                render_frames: *render_frames,
                seed: cfg.seed,
                ..GeneratorConfig::default()
            };
            let set = imutube_core::par::with_workers(cfg.workers, || {
                generate_synthetic(&gen, &cfg.synth, &g.out)
            })?;
            log::info!("wrote {} clips to {}", set.clips.len(), g.out.display());
            Ok(exit::OK)
        }
        Command::Run { manifest } => {
            let clips = ManifestSet::load(manifest)?;
            let summary = run_pipeline(&clips, &cfg, &g.out)?;
            log::info!(
                "{} clips, {} failed, {} streams written, {} warnings",
                summary.clips.len(),
                summary.failed_clips,
                summary.streams_written,
                summary.warnings
            );
            Ok(summary.exit_code())
        }
        Command::DistmapFit {
            virtual_dir,
            real,
            budget_s,
        } => {
            if let Some(b) = budget_s {
                if b.is_nan() || *b <= 0.0 {
                    return Err(PipelineError::Config(format!(
                        "distribution mapping requires real data: budget {b} s per class"
                    )));
                }
            }
            let map = fit_stream_map(
                &load_streams(virtual_dir)?,
                &load_streams(real)?,
                &cfg.synth.placements,
                *budget_s,
            )?;
            let path = g.out.join("map.json");
            std::fs::create_dir_all(&g.out).map_err(|e| PipelineError::io(&g.out, e))?;
            map.save(&path)?;
            log::info!(
                "wrote {} channel maps to {}",
                map.channels.len(),
                path.display()
            );
            Ok(exit::OK)
        }
        Command::DistmapApply { map, input } => {
            let map =
                DistributionMap::load(map).map_err(|e| PipelineError::Config(e.to_string()))?;
            apply_dir(&map, input, &g.out)
        }
        Command::Evaluate {
            real,
            virtual_dir,
            protocol,
        } => {
            let reps = report(real, virtual_dir, &[*protocol], &cfg, &g.out)?;
            for r in &reps {
                print!("{}", r.to_table());
            }
            Ok(exit::OK)
        }
        Command::Report { real, virtual_dir } => {
            let reps = report(real, virtual_dir, &Protocol::ALL, &cfg, &g.out)?;
            for r in &reps {
                print!("{}", r.to_table());
            }
            Ok(exit::OK)
        }
    }
}

fn apply_dir(map: &DistributionMap, input: &Path, out: &Path) -> Result<i32, PipelineError> {
    let streams = load_streams(input)?;
    for s in &streams {
        let mapped = apply_to_stream(map, &s.stream)?;
        let name = s.path.file_name().expect("listed files have names");
        write_stream(&out.join(name), &mapped, &s.meta)?;
    }
    log::info!("mapped {} streams into {}", streams.len(), out.display());
    Ok(exit::OK)
}

fn main() -> ExitCode {
    // Usage errors are configuration errors, not clap's default code 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::CONFIG as u8
            } else {
                0
            });
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .format_timestamp(None)
        .init();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
