use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uwstereo::error::{Error, Result};
use uwstereo::pipeline::{self, MatcherKind, PipelineConfig, TrainTask};

#[derive(Parser)]
#[command(name = "uwstereo", version, about = "Underwater active stereo reconstruction")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `paths.output`.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Seed override for synthesis and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the effective configuration to the output directory.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the error of the flat-port approximation over depth.
    SimulateRefraction,
    /// Write the rig file, from gray-code correspondences when configured.
    Calibrate {
        #[arg(long)]
        correspondences: Option<PathBuf>,
    },
    /// Generate stereo scenes, patch sites and restoration pairs.
    MakeDataset {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one network from the dataset.
    Train {
        /// stereo, segmentation or removal
        #[arg(long)]
        task: String,
        /// Degradation the removal network learns: bubbles or pattern.
        #[arg(long)]
        removal: Option<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Segment the target in one image.
    Segment {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Remove bubbles or the projected pattern from one image.
    Denoise {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Match a rectified pair.
    Match {
        #[arg(long)]
        left: Option<PathBuf>,
        #[arg(long)]
        right: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// learned or baseline
        #[arg(long)]
        matcher: Option<String>,
    },
    /// Full chain from a stereo pair (or the built-in scene) to a point cloud.
    Reconstruct {
        #[arg(long)]
        no_segmentation: bool,
        #[arg(long)]
        matcher: Option<String>,
    },
    /// Compare a disparity map with ground truth.
    Evaluate {
        #[arg(long)]
        disparity: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
}

fn matcher(name: &str) -> Result<MatcherKind> {
    match name {
        "learned" => Ok(MatcherKind::Learned),
        "baseline" => Ok(MatcherKind::Baseline),
        other => Err(Error::InvalidArgument(format!("unknown matcher `{other}` (learned or baseline)"))),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(&pipeline::require(Some(p), "configuration")?)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.paths.output, cli.output);
    if let Some(seed) = cli.seed {
        cfg.synthesis.seed = seed;
        cfg.train.stereo.seed = seed;
        cfg.train.segmentation.seed = seed;
        cfg.train.removal.seed = seed;
        cfg.reconstruct.scene.seed = seed;
    }
    if cli.dump_config {
        std::fs::create_dir_all(&cfg.paths.output).map_err(|e| Error::io(&cfg.paths.output, e))?;
        let path = cfg.paths.output.join("config.toml");
        std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    }
    match cli.command {
        Command::SimulateRefraction => {
            let curve = pipeline::cmd_simulate_refraction(&cfg)?;
            println!("{} depths, calibration residual {:.4} px", curve.depth.len(), curve.fit_residual);
        }
        Command::Calibrate { correspondences } => {
            cfg.paths.correspondences = correspondences.or(cfg.paths.correspondences);
            pipeline::cmd_calibrate(&cfg)?;
            println!("rig written to {}", cfg.paths.output.join("rig.txt").display());
        }
        Command::MakeDataset { dataset } => {
            cfg.paths.dataset = dataset.or(cfg.paths.dataset);
            let s = pipeline::cmd_make_dataset(&cfg)?;
            println!("{} scenes, {} patch sites, {} restoration pairs", s.scenes, s.patch_sites, s.restoration_pairs);
        }
        Command::Train { task, removal, dataset, resume, epochs } => {
            let task = TrainTask::parse(&task, removal.as_deref())?;
            cfg.paths.dataset = dataset.or(cfg.paths.dataset);
            if let Some(e) = epochs {
                cfg.train.stereo.epochs = e;
                cfg.train.segmentation.epochs = e;
                cfg.train.removal.epochs = e;
            }
            let out = pipeline::cmd_train(&cfg, task, resume.as_deref())?;
            let last = out.epoch_loss.last().copied().unwrap_or(f64::NAN);
            println!("checkpoint {}, final loss {last:.5}", out.checkpoint.display());
        }
        Command::Segment { input, weights } => {
            cfg.paths.segmentation_weights = weights.or(cfg.paths.segmentation_weights);
            let mask = pipeline::cmd_segment(&cfg, input.as_deref())?;
            println!("{} of {} pixels on target", mask.count(), mask.width() * mask.height());
        }
        Command::Denoise { input, weights } => {
            cfg.paths.removal_weights = weights.or(cfg.paths.removal_weights);
            pipeline::cmd_denoise(&cfg, input.as_deref())?;
            println!("restored image written to {}", cfg.paths.output.join("restored.png").display());
        }
        Command::Match { left, right, mask, weights, matcher: m } => {
            cfg.paths.left = left.or(cfg.paths.left);
            cfg.paths.right = right.or(cfg.paths.right);
            cfg.paths.stereo_weights = weights.or(cfg.paths.stereo_weights);
            set(&mut cfg.stereo.matcher, m.as_deref().map(matcher).transpose()?);
            let out = pipeline::cmd_match(&cfg, mask.as_deref())?;
            match out.bad_pixel_rate {
                Some(r) => println!("bad-pixel rate (1 px): {r:.4}"),
                None => println!("disparity written to {}", cfg.paths.output.join("disparity.pfm").display()),
            }
        }
        Command::Reconstruct { no_segmentation, matcher: m } => {
            set(&mut cfg.stereo.matcher, m.as_deref().map(matcher).transpose()?);
            let out = pipeline::cmd_reconstruct(&cfg, no_segmentation)?;
            print!("{} points ({} before filtering), {} triangles", out.cloud.len(), out.raw_points, out.triangles);
            match out.report {
                Some(r) => println!(", RMSE {:.3} mm", r.rmse * 1e3),
                None => println!(),
            }
        }
        Command::Evaluate { disparity, ground_truth } => {
            cfg.paths.ground_truth = ground_truth.or(cfg.paths.ground_truth);
            let out = pipeline::cmd_evaluate(&cfg, disparity.as_deref())?;
            if let Some(r) = out.bad_pixel_rate {
                println!("bad-pixel rate (1 px): {r:.4}");
            }
            if let Some(r) = out.report {
                println!("{} points, RMSE {:.3} mm", r.point_count, r.rmse * 1e3);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
