use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmbm_core::io::{
    emit_class_reports, format_class_reports, read_ground_truth, read_tracks, PipelineConfig,
};
use pmbm_core::pipeline::{evaluate_records, run_pipeline, write_scenario, PipelineOptions};
use pmbm_core::sim::{generate, ScenarioConfig};

#[derive(Parser)]
#[command(name = "pmbm", version, about = "PMBM multi-object tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a detection file and write one track record per object and frame.
    Track {
        detections: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ground truth to evaluate against.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Report path (text); a `.json` sidecar is written next to it.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-frame ego poses mapping detections into the global frame.
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Generate a synthetic scenario.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out-dets")]
        out_dets: PathBuf,
        #[arg(long = "out-gt")]
        out_gt: PathBuf,
    },
    /// Compute CLEAR-MOT metrics for a track file.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long = "radius-vehicle", default_value_t = 2.0)]
        radius_vehicle: f64,
        #[arg(long = "radius-pedestrian", default_value_t = 1.0)]
        radius_pedestrian: f64,
        /// Radius for any other class.
        #[arg(long = "radius-default", default_value_t = 2.0)]
        radius_default: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Track {
            detections,
            config,
            out,
            gt,
            report,
            poses,
        } => {
            let outcome = run_pipeline(&PipelineOptions {
                detections,
                config,
                output: out,
                ground_truth: gt,
                report,
                poses,
            })
            .map_err(|e| e.to_string())?;
            eprintln!(
                "tracked {} frames, {} track records, {:.1} frames/s",
                outcome.frames, outcome.tracks_written, outcome.frames_per_second
            );
            if let Some(s) = outcome.summaries {
                print!("{}", format_class_reports(&s));
            }
        }
        Command::Simulate {
            config,
            out_dets,
            out_gt,
        } => {
            let cfg = match config {
                Some(p) => {
                    let text =
                        std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                    toml::from_str::<ScenarioConfig>(&text)
                        .map_err(|e| format!("{}: {e}", p.display()))?
                }
                None => ScenarioConfig::default(),
            };
            let scenario = generate::<f64>(&cfg).map_err(|e| e.to_string())?;
            write_scenario(&scenario, &cfg, &out_dets, &out_gt).map_err(|e| e.to_string())?;
            eprintln!(
                "simulated {} frames, {} clutter detections",
                scenario.gt.len(),
                scenario.clutter_count()
            );
        }
        Command::Evaluate {
            gt,
            tracks,
            radius_vehicle,
            radius_pedestrian,
            radius_default,
            report,
        } => {
            let config = PipelineConfig {
                radius_vehicle,
                radius_pedestrian,
                radius_default,
                ..PipelineConfig::default()
            };
            let gt: Vec<_> = read_ground_truth(&gt)
                .map_err(|e| e.to_string())?
                .into_iter()
                .flat_map(|g| g.records)
                .collect();
            let tracks: Vec<_> = read_tracks(&tracks)
                .map_err(|e| e.to_string())?
                .into_iter()
                .flat_map(|g| g.records)
                .collect();
            let summaries = evaluate_records(&gt, &tracks, &config).map_err(|e| e.to_string())?;
            if let Some(p) = report {
                emit_class_reports(&summaries, &p).map_err(|e| e.to_string())?;
            }
            print!("{}", format_class_reports(&summaries));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
