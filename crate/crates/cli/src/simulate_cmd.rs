use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use nivkit::datio::{write_detections_json, write_scatter_csv, write_text, DetectionFrame};
use nivkit::simulate::{generate_ensemble, run_on_frames, scatter_rows, CalibrationReport, ExperimentConfig};
use nivkit::suppression::NmsConfig;
use serde_json::json;

use crate::config::set;
use crate::{parse_pair, Ctx, NivArgs};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Output directory; receives ensemble.json, scatter.csv and report.json.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Number of frames to generate.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Range of ground-truth objects per frame.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<usize>)]
    pub gts_per_frame: Option<(usize, usize)>,
    /// Range of predictions per object before the difficulty division.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<usize>)]
    pub preds_per_gt: Option<(usize, usize)>,
    /// Center noise in meters at difficulty 1.
    #[arg(long)]
    pub center_noise: Option<f64>,
    /// Relative extent noise at difficulty 1.
    #[arg(long)]
    pub extent_noise: Option<f64>,
    /// Yaw noise in radians at difficulty 1.
    #[arg(long)]
    pub yaw_noise: Option<f64>,
    /// Noise added to real IoU to form the confidence.
    #[arg(long)]
    pub conf_noise: Option<f64>,
    /// Noise added to real IoU to form the predicted IoU.
    #[arg(long)]
    pub piou_noise: Option<f64>,
    /// Expected false positives per frame.
    #[arg(long)]
    pub fp_rate: Option<f64>,
    /// Interval of the per-object difficulty multiplier.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>)]
    pub difficulty: Option<(f64, f64)>,
    #[command(flatten)]
    pub niv: NivArgs,
    /// NMS threshold used for the AP comparison.
    #[arg(long)]
    pub nms_iou_thres: Option<f64>,
    /// Minimum IoU for a true positive in the AP comparison.
    #[arg(long)]
    pub eval_iou_thres: Option<f64>,
}

pub fn render(r: &CalibrationReport) -> String {
    format!(
        "frames {}  ground truth {}  predictions {}  (sampled around objects {})\n\
         pcc_raw       {:.4}\npcc_niv       {:.4}\npcc_niv_fused {:.4}\n\
         AP_R40 raw+nms {:.2}  niv+nms {:.2}\nAP_R11 raw+nms {:.2}  niv+nms {:.2}\n",
        r.n_frames,
        r.n_ground_truth,
        r.n_predictions,
        r.n_true_predictions,
        r.pcc_raw,
        r.pcc_niv,
        r.pcc_niv_fused,
        r.ap_raw,
        r.ap_niv,
        r.ap_raw_r11,
        r.ap_niv_r11
    )
}

pub fn simulate(ctx: Ctx, args: SimulateArgs) -> Result<()> {
    let mut sim = ctx.file.simulate.clone();
    sim.seed = ctx.seed;
    set(&mut sim.n_frames, args.frames);
    set(&mut sim.gts_per_frame, args.gts_per_frame);
    set(&mut sim.preds_per_gt, args.preds_per_gt);
    set(&mut sim.center_noise_sigma, args.center_noise);
    set(&mut sim.extent_noise_sigma, args.extent_noise);
    set(&mut sim.yaw_noise_sigma, args.yaw_noise);
    set(&mut sim.conf_noise_sigma, args.conf_noise);
    set(&mut sim.piou_noise_sigma, args.piou_noise);
    set(&mut sim.fp_rate, args.fp_rate);
    set(&mut sim.difficulty, args.difficulty);
    sim.validate()?;

    let mut exp_section = ctx.file.experiment.clone();
    set(&mut exp_section.nms_iou_thres, args.nms_iou_thres);
    set(&mut exp_section.eval_iou_thres, args.eval_iou_thres);
    set(&mut exp_section.fusion_beta, args.niv.fusion_beta);
    let mut niv = ctx.file.niv.clone();
    args.niv.apply(&mut niv)?;
    let nms = NmsConfig::new(exp_section.nms_iou_thres);
    nms.validate()?;
    let exp = ExperimentConfig {
        niv: niv.config_for(&sim.category)?,
        nms,
        fusion_beta: exp_section.fusion_beta,
        eval_iou_thres: exp_section.eval_iou_thres,
        eval_mode: exp_section.eval_mode,
    };

    let frames = generate_ensemble(&sim)?;
    let report = run_on_frames(&frames, &exp)?;
    let rows = scatter_rows(&frames, &exp)?;
    let text = render(&report);
    print!("{text}");

    let out = &args.output;
    let ensemble: Vec<DetectionFrame> = frames.into_iter().map(|f| f.frame).collect();
    write_detections_json(&out.join("ensemble.json"), &ensemble)?;
    write_scatter_csv(&out.join("scatter.csv"), &rows)?;
    write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&out.join("report.txt"), &text)?;
    crate::config::write_resolved(out, &json!({ "command": "simulate", "seed": ctx.seed, "simulate": sim, "experiment": exp }))
}
