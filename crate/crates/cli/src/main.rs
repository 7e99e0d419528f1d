//! `nivkit` command-line front end.

mod augment_cmd;
mod bench_cmd;
mod config;
mod eval_cmd;
mod inputs;
mod pipeline;
mod rectify_cmd;
mod simulate_cmd;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use nivkit::IouMode;

use config::{set, FileConfig, NivSection, DEFAULT_SEED};

#[derive(Parser, Debug)]
#[command(name = "nivkit", version, about = "Neighbor IoU-voting rectification, evaluation and augmentation for 3D box detections")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rescore detections by neighbor voting, optionally followed by NMS.
    Rectify(rectify_cmd::RectifyArgs),
    /// Greedy non-maximum suppression per category.
    Nms(rectify_cmd::NmsArgs),
    /// Average precision and score/IoU correlation against ground truth.
    Eval(eval_cmd::EvalArgs),
    /// Object-level resampling and global augmentation of point clouds.
    Augment(augment_cmd::AugmentArgs),
    /// Generate a synthetic detection ensemble and run the calibration study.
    Simulate(simulate_cmd::SimulateArgs),
    /// Time rectification and NMS over growing box counts.
    Bench(bench_cmd::BenchArgs),
}

/// What every subcommand receives besides its own flags.
pub struct Ctx {
    pub file: FileConfig,
    pub seed: u64,
}

/// Voting flags shared by several subcommands.
#[derive(Args, Debug, Default, Clone)]
pub struct NivArgs {
    /// IoU above which two boxes are neighbors.
    #[arg(long)]
    pub niv_iou_thres: Option<f64>,
    /// Rectified scores at or below this are dropped.
    #[arg(long)]
    pub score_thres: Option<f64>,
    /// Overlap measure used for voting: 3d or bev.
    #[arg(long, value_name = "MODE")]
    pub niv_mode: Option<IouMode>,
    /// Do not count a box among its own neighbors.
    #[arg(long)]
    pub exclude_self: bool,
    /// Anchor footprint in m^2, as CATEGORY=AREA or a bare fallback AREA. Repeatable.
    #[arg(long, value_name = "[CATEGORY=]AREA")]
    pub area_bev: Vec<String>,
    /// Multiply confidence by predicted IoU to this power before voting.
    #[arg(long)]
    pub fusion_beta: Option<f64>,
}

impl NivArgs {
    pub fn apply(&self, s: &mut NivSection) -> Result<()> {
        set(&mut s.iou_thres, self.niv_iou_thres);
        set(&mut s.score_thres, self.score_thres);
        set(&mut s.iou_mode, self.niv_mode);
        set(&mut s.fusion_beta, self.fusion_beta);
        if self.exclude_self {
            s.include_self = false;
        }
        for a in &self.area_bev {
            s.set_area(a)?;
        }
        if !(s.fusion_beta.is_finite() && s.fusion_beta >= 0.0) {
            bail!("fusion beta must be finite and non-negative, got {}", s.fusion_beta);
        }
        s.merge_builtin_areas();
        Ok(())
    }
}

/// Parses `lo,hi`.
pub fn parse_pair<T: FromStr>(s: &str) -> Result<(T, T), String>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `LO,HI`, got `{s}`"))?;
    let p = |t: &str| t.trim().parse::<T>().map_err(|e| format!("`{t}`: {e}"));
    Ok((p(a)?, p(b)?))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let ctx = Ctx { file, seed };
    match cli.command {
        Command::Rectify(a) => rectify_cmd::rectify(ctx, a),
        Command::Nms(a) => rectify_cmd::nms_cmd(ctx, a),
        Command::Eval(a) => eval_cmd::eval(ctx, a),
        Command::Augment(a) => augment_cmd::augment(ctx, a),
        Command::Simulate(a) => simulate_cmd::simulate(ctx, a),
        Command::Bench(a) => bench_cmd::bench(ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
