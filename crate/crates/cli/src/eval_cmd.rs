use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use nivkit::datio::{write_scatter_csv, write_text, DetectionFrame};
use nivkit::evalkit::{evaluate, real_iou, FrameAnnotations, ScatterRow};
use nivkit::{Detection, IouMode};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{set, write_resolved};
use crate::inputs::{check_paired, load_detections, load_labels};
use crate::pipeline::{rectify_frame, RectifiedFrame};
use crate::{Ctx, NivArgs};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Interchange JSON file or directory of KITTI result files.
    #[arg(long)]
    pub dets: PathBuf,
    /// Directory of KITTI label files. Optional when the JSON embeds annotations.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Write report.json, report.txt and scatter.csv here.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Minimum IoU for a true positive.
    #[arg(long)]
    pub iou_thres: Option<f64>,
    /// Overlap measure for matching: 3d or bev.
    #[arg(long, value_name = "MODE")]
    pub iou_mode: Option<IouMode>,
    /// Restrict the report to this category. Repeatable.
    #[arg(long)]
    pub category: Vec<String>,
    #[command(flatten)]
    pub niv: NivArgs,
}

#[derive(Debug, Serialize)]
pub struct CategoryReport {
    pub category: String,
    pub n_ground_truth: usize,
    pub n_detections: usize,
    pub ap_r11: f64,
    pub ap_r40: f64,
    /// Correlation of the input scores with real IoU.
    pub pcc_raw: Option<f64>,
    /// Same, after rectification of the input scores.
    pub pcc_niv: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub iou_thres: f64,
    pub iou_mode: IouMode,
    pub n_frames: usize,
    pub categories: Vec<CategoryReport>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

pub fn render(s: &EvalSummary) -> String {
    let mut out = format!("iou_thres {} ({}), {} frames\n", s.iou_thres, s.iou_mode, s.n_frames);
    out += &format!("{:<12} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}\n", "category", "n_gt", "n_det", "AP_R11", "AP_R40", "pcc_raw", "pcc_niv");
    for c in &s.categories {
        out += &format!(
            "{:<12} {:>6} {:>6} {:>8.2} {:>8.2} {:>8} {:>8}\n",
            c.category,
            c.n_ground_truth,
            c.n_detections,
            c.ap_r11,
            c.ap_r40,
            opt(c.pcc_raw),
            opt(c.pcc_niv)
        );
    }
    out
}

/// Pairs every detection frame with its annotations.
fn attach_annotations(frames: Vec<DetectionFrame>, gt: Option<&PathBuf>) -> Result<Vec<(DetectionFrame, FrameAnnotations)>> {
    let Some(dir) = gt else {
        return frames
            .into_iter()
            .map(|f| match f.annotations.clone() {
                Some(a) => Ok((f, a)),
                None => bail!("frame `{}` has no embedded annotations; pass --gt", f.frame_id),
            })
            .collect();
    };
    let mut labels = load_labels(dir)?;
    let dets: BTreeMap<String, DetectionFrame> = frames.into_iter().map(|f| (f.frame_id.clone(), f)).collect();
    check_paired(("detections", &dets), ("labels", &labels))?;
    Ok(dets.into_iter().map(|(id, f)| (f, labels.remove(&id).expect("paired"))).collect())
}

pub fn eval(ctx: Ctx, args: EvalArgs) -> Result<()> {
    let mut section = ctx.file.eval.clone();
    set(&mut section.iou_thres, args.iou_thres);
    set(&mut section.iou_mode, args.iou_mode);
    if !args.category.is_empty() {
        section.categories = args.category.clone();
    }
    if !(section.iou_thres > 0.0 && section.iou_thres <= 1.0) {
        bail!("evaluation IoU threshold must lie in (0, 1], got {}", section.iou_thres);
    }
    let mut niv = ctx.file.niv.clone();
    args.niv.apply(&mut niv)?;

    let frames = load_detections(&args.dets)?;
    let paired = attach_annotations(frames, args.gt.as_ref())?;
    if paired.is_empty() {
        bail!("no frames to evaluate in {}", args.dets.display());
    }

    let categories: Vec<String> = if section.categories.is_empty() {
        let set: BTreeSet<&str> =
            paired.iter().flat_map(|(_, a)| a.objects.iter().filter(|g| !g.ignore).map(|g| g.category.as_str())).collect();
        set.into_iter().map(String::from).collect()
    } else {
        section.categories.clone()
    };
    if categories.is_empty() {
        bail!("the annotations contain no evaluable objects");
    }

    let rectified: Vec<RectifiedFrame> =
        paired.par_iter().map(|(f, _)| rectify_frame(f, &niv, None)).collect::<Result<_>>()?;
    let raw: Vec<(FrameAnnotations, Vec<Detection>)> = paired.iter().map(|(f, a)| (a.clone(), f.detections.clone())).collect();
    let rescored: Vec<(FrameAnnotations, Vec<Detection>)> = paired
        .iter()
        .zip(&rectified)
        .map(|((f, a), r)| {
            let dets = f
                .detections
                .iter()
                .zip(&r.all_stats)
                .filter_map(|(d, st)| st.map(|st| Detection { confidence: st.s, ..d.clone() }))
                .collect();
            (a.clone(), dets)
        })
        .collect();

    let mut reports = Vec::new();
    for cat in &categories {
        let r = evaluate(cat, &raw, section.iou_thres, section.iou_mode).with_context(|| format!("category `{cat}`"))?;
        let r_niv = evaluate(cat, &rescored, section.iou_thres, section.iou_mode)?;
        reports.push(CategoryReport {
            category: cat.clone(),
            n_ground_truth: r.matches.iter().map(|m| m.n_gt).sum(),
            n_detections: raw.iter().map(|(_, d)| d.iter().filter(|d| &d.category == cat).count()).sum(),
            ap_r11: r.ap_r11,
            ap_r40: r.ap_r40,
            pcc_raw: r.pcc,
            pcc_niv: r_niv.pcc,
        });
    }
    let summary = EvalSummary { iou_thres: section.iou_thres, iou_mode: section.iou_mode, n_frames: paired.len(), categories: reports };
    let text = render(&summary);
    print!("{text}");

    if let Some(out) = &args.output {
        let mut rows = Vec::new();
        for ((f, ann), r) in paired.iter().zip(&rectified) {
            for (i, d) in f.detections.iter().enumerate() {
                let st = r.all_stats[i];
                rows.push(ScatterRow {
                    frame_id: f.frame_id.clone(),
                    det_index: i,
                    real_iou: real_iou(&d.bbox, &ann.for_category(&d.category), section.iou_mode),
                    confidence: d.confidence,
                    s_niv: st.map(|s| s.s_niv),
                    rectified_score: st.map(|s| s.s),
                });
            }
        }
        write_scatter_csv(&out.join("scatter.csv"), &rows)?;
        write_text(&out.join("report.txt"), &text)?;
        write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
        write_resolved(
            out,
            &json!({
                "command": "eval",
                "seed": ctx.seed,
                "dets": args.dets,
                "gt": args.gt,
                "eval": section,
                "niv": niv,
            }),
        )?;
    }
    Ok(())
}
