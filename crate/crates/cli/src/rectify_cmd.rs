use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use nivkit::datio::{csv_to_bytes, write_bytes, write_detections_json, write_kitti_results, DetectionFrame};
use nivkit::suppression::{nms, NmsConfig};
use nivkit::IouMode;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{set, write_resolved, NmsSection};
use crate::inputs::load_detections;
use crate::pipeline::{by_category, rectify_frame, RectifiedFrame, StatsRow};
use crate::{Ctx, NivArgs};

const STATS_HEADER: &str =
    "frame_id,det_index,category,confidence,n_neighbor_raw,n_neighbor_scaled,iou_mean,s_niv,rectified_score,kept";

#[derive(Args, Debug)]
pub struct RectifyArgs {
    /// Interchange JSON file or directory of KITTI result files.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub niv: NivArgs,
    /// Run NMS on the rectified scores with this IoU threshold.
    #[arg(long)]
    pub nms_iou_thres: Option<f64>,
    /// Keep at most this many boxes per category and frame after NMS.
    #[arg(long)]
    pub max_keep: Option<usize>,
}

#[derive(Args, Debug)]
pub struct NmsArgs {
    /// Interchange JSON file or directory of KITTI result files.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Suppress boxes overlapping a kept one above this IoU. Required, here or in the config file.
    #[arg(long)]
    pub iou_thres: Option<f64>,
    /// Keep at most this many boxes per category and frame.
    #[arg(long)]
    pub max_keep: Option<usize>,
    /// Overlap measure: 3d or bev.
    #[arg(long, value_name = "MODE")]
    pub iou_mode: Option<IouMode>,
}

fn nms_config(s: &NmsSection) -> Option<NmsConfig> {
    s.iou_thres.map(|t| NmsConfig { iou_thres: t, max_keep: s.max_keep, iou_mode: s.iou_mode })
}

fn stats_csv(rows: &[StatsRow]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Ok(format!("{STATS_HEADER}\n").into_bytes());
    }
    Ok(csv_to_bytes(rows)?)
}

fn write_outputs(out: &std::path::Path, frames: &[DetectionFrame]) -> Result<()> {
    write_detections_json(&out.join("detections.json"), frames)?;
    write_kitti_results(&out.join("results"), frames)?;
    Ok(())
}

pub fn rectify(ctx: Ctx, args: RectifyArgs) -> Result<()> {
    let mut niv = ctx.file.niv.clone();
    args.niv.apply(&mut niv)?;
    let mut nms_section = ctx.file.nms.clone();
    set(&mut nms_section.iou_thres, args.nms_iou_thres.map(Some));
    set(&mut nms_section.max_keep, args.max_keep.map(Some));
    let nms_cfg = nms_config(&nms_section);
    if let Some(c) = &nms_cfg {
        c.validate()?;
    }

    let frames = load_detections(&args.input)?;
    let done: Vec<RectifiedFrame> =
        frames.par_iter().map(|f| rectify_frame(f, &niv, nms_cfg.as_ref())).collect::<Result<_>>()?;

    let n_in: usize = frames.iter().map(|f| f.detections.len()).sum();
    let n_out: usize = done.iter().map(|r| r.frame.detections.len()).sum();
    if n_in > 0 && n_out == 0 {
        eprintln!("warning: all {n_in} detections were dropped (score_thres {}); the output is empty", niv.score_thres);
    }
    eprintln!("rectify: {} frames, {n_in} detections in, {n_out} kept", frames.len());

    let out_frames: Vec<DetectionFrame> = done.iter().map(|r| r.frame.clone()).collect();
    let rows: Vec<StatsRow> = done.into_iter().flat_map(|r| r.rows).collect();
    write_outputs(&args.output, &out_frames)?;
    write_bytes(&args.output.join("niv_stats.csv"), &stats_csv(&rows)?)?;
    write_resolved(
        &args.output,
        &json!({
            "command": "rectify",
            "seed": ctx.seed,
            "input": args.input,
            "niv": niv,
            "nms": nms_cfg,
        }),
    )
}

fn nms_cmd_config(ctx: &Ctx, args: &NmsArgs) -> Result<NmsConfig> {
    let mut s = ctx.file.nms.clone();
    set(&mut s.iou_thres, args.iou_thres.map(Some));
    set(&mut s.max_keep, args.max_keep.map(Some));
    set(&mut s.iou_mode, args.iou_mode);
    let Some(cfg) = nms_config(&s) else {
        bail!("nms needs an IoU threshold: pass --iou-thres or set nms.iou_thres in the config file");
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn nms_cmd(ctx: Ctx, args: NmsArgs) -> Result<()> {
    let cfg = nms_cmd_config(&ctx, &args)?;
    let frames = load_detections(&args.input)?;
    let out: Vec<DetectionFrame> = frames
        .par_iter()
        .map(|f| {
            let mut kept = Vec::new();
            for idx in by_category(&f.detections).into_values() {
                let group: Vec<_> = idx.iter().map(|&i| f.detections[i].clone()).collect();
                kept.extend(nms(&group, &cfg)?);
            }
            Ok(DetectionFrame { frame_id: f.frame_id.clone(), detections: kept, stats: None, annotations: f.annotations.clone() })
        })
        .collect::<Result<_>>()?;
    let n_in: usize = frames.iter().map(|f| f.detections.len()).sum();
    let n_out: usize = out.iter().map(|f| f.detections.len()).sum();
    eprintln!("nms: {} frames, {n_in} detections in, {n_out} kept", frames.len());
    write_outputs(&args.output, &out)?;
    write_resolved(&args.output, &json!({ "command": "nms", "seed": ctx.seed, "input": args.input, "nms": cfg }))
}
