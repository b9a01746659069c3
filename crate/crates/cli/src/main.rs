use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use speech_portrait::config::{config_schema, load_config, PipelineConfig};
use speech_portrait::eval::{image_metrics, load_pose_track, pose_metrics, Image};
use speech_portrait::manifold::{load_database, DEFAULT_K};
use speech_portrait::pipeline::{random_weights, run_offline, run_stream, TimingReport};
use speech_portrait::raster::{rasterize, PointSet};
use speech_portrait::scene::{select_candidates, CandidateRecord, FaceRig};
use speech_portrait::weights::save_weights;
use speech_portrait::Error;

#[derive(Parser)]
#[command(
    name = "speech-portrait",
    version,
    about = "Audio-driven talking-head motion and feature-map engine"
)]
struct Cli {
    /// Print the config JSON schema and exit.
    #[arg(long)]
    print_schema: bool,

    /// Override the pose sampler seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Process a WAV file into feature maps, frames.jsonl and timings.json.
    Infer {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read raw s16le mono 16 kHz PCM from stdin and write frames as they
    /// become available.
    Stream {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Bytes per read from stdin.
        #[arg(long, default_value_t = 2048)]
        chunk_bytes: usize,
    },
    /// Project one representation (JSON array) onto a database and print
    /// neighbours, weights and the reconstruction.
    Project {
        #[arg(long)]
        repr: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(short = 'k', default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Rasterize `{"points": [[u, v], ..], "topology": [[i, ..], ..]}` to a
    /// 512×512 PGM.
    Rasterize {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two pose tracks (JSON lines).
    EvalPose {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
    },
    /// Compare two images (PGM, PPM or PNG).
    EvalImage {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Pick four reference frames from per-frame records (JSON lines of
    /// `{"mouth_area", "rot_x", "rot_y"}`).
    Candidates {
        #[arg(long)]
        records: PathBuf,
    },
    /// Write randomly initialized encoder, mouth and pose weights.
    InitWeights {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(Error),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e)
        } else {
            Failure::Data(e)
        }
    }
}

fn config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    let mut cfg = match path {
        Some(p) => load_config(p).map_err(Failure::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.into(),
            source: e,
        })
    })
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn summary(report: &TimingReport) {
    eprintln!(
        "{} frames, {:.1} fps, stage-sum p99 {:.2} ms, latency {} ms",
        report.frames,
        report.frames_per_second,
        report.stage_sum.p99_us / 1000.0,
        report.algorithmic_latency_ms
    );
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.print_schema {
        print!("{}", config_schema());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::Config(Error::Config {
            field: "command".into(),
            constraint: "a subcommand is required (see --help)".into(),
        }));
    };
    match command {
        Command::Infer { wav, config: c, out } => {
            let cfg = config(c.as_deref(), cli.seed)?;
            summary(&run_offline(&wav, cfg, &out)?);
        }
        Command::Stream {
            config: c,
            out,
            chunk_bytes,
        } => {
            let cfg = config(c.as_deref(), cli.seed)?;
            summary(&run_stream(std::io::stdin().lock(), cfg, &out, chunk_bytes)?);
        }
        Command::Project { repr, db, k } => {
            let h: Vec<f32> = serde_json::from_str(&read_text(&repr)?)
                .map_err(|e| Failure::Data(Error::Data(format!("{}: {e}", repr.display()))))?;
            print_json(&load_database(&db)?.lle_project(&h, k)?);
        }
        Command::Rasterize { points, out } => {
            let set: PointSet = serde_json::from_str(&read_text(&points)?)
                .map_err(|e| Failure::Data(Error::Data(format!("{}: {e}", points.display()))))?;
            rasterize(&set.points, &set.topology)?.image.write_pgm(&out)?;
        }
        Command::EvalPose { pred, gt, rig } => {
            let rig = match rig {
                Some(p) => FaceRig::load(&p)?,
                None => FaceRig::synthetic(),
            };
            print_json(&pose_metrics(&load_pose_track(&pred)?, &load_pose_track(&gt)?, &rig)?);
        }
        Command::EvalImage { a, b } => {
            print_json(&image_metrics(&Image::load(&a)?, &Image::load(&b)?)?);
        }
        Command::Candidates { records } => {
            let recs = read_text(&records)?
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str::<CandidateRecord>(l)
                        .map_err(|e| Failure::Data(Error::Data(format!("{}:{}: {e}", records.display(), i + 1))))
                })
                .collect::<Result<Vec<_>, _>>()?;
            print_json(&select_candidates(&recs)?);
        }
        Command::InitWeights { config: c, out } => {
            let cfg = config(c.as_deref(), cli.seed)?;
            save_weights(&random_weights(&cfg)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
