use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use nivkit::datio::write_csv;
use nivkit::niv::{niv_rectify, NivConfig};
use nivkit::simulate::benchmark_detections;
use nivkit::suppression::{nms, NmsConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::{set, write_resolved};
use crate::{Ctx, NivArgs};

/// Fewer runs than this make the median too noisy to report.
pub const MIN_RUNS: usize = 30;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Box counts to time.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Timed repetitions per size (at least 30).
    #[arg(long)]
    pub runs: Option<usize>,
    /// NMS threshold applied to the rectified boxes.
    #[arg(long)]
    pub nms_iou_thres: Option<f64>,
    /// Write bench.csv here as well.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub niv: NivArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n_boxes: usize,
    pub niv_ms: f64,
    pub nms_ms: f64,
    pub total_ms: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Median wall time of rectification, of NMS on its output, and of the two
/// together, over `runs` repetitions.
pub fn time_pipeline(n: usize, runs: usize, seed: u64, niv: &NivConfig, nms_cfg: &NmsConfig) -> Result<BenchRow> {
    let dets = benchmark_detections(n, seed);
    let (mut t_niv, mut t_nms, mut t_all) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..runs {
        let t0 = Instant::now();
        let out = niv_rectify(&dets, niv)?;
        let t1 = Instant::now();
        let kept = nms(&out.kept, nms_cfg)?;
        let t2 = Instant::now();
        std::hint::black_box(kept);
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        t_niv.push(ms(t0, t1));
        t_nms.push(ms(t1, t2));
        t_all.push(ms(t0, t2));
    }
    Ok(BenchRow { n_boxes: n, niv_ms: median(&mut t_niv), nms_ms: median(&mut t_nms), total_ms: median(&mut t_all) })
}

pub fn bench(ctx: Ctx, args: BenchArgs) -> Result<()> {
    let mut section = ctx.file.bench.clone();
    set(&mut section.sizes, args.sizes.clone());
    set(&mut section.runs, args.runs);
    if section.runs < MIN_RUNS {
        bail!("--runs must be at least {MIN_RUNS}, got {}", section.runs);
    }
    section.sizes.sort_unstable();
    section.sizes.dedup();
    if section.sizes.is_empty() || section.sizes[0] == 0 {
        bail!("bench sizes must be positive");
    }
    let mut niv_section = ctx.file.niv.clone();
    args.niv.apply(&mut niv_section)?;
    let niv = niv_section.config_for("Car")?;
    let nms_cfg = NmsConfig::new(args.nms_iou_thres.unwrap_or(ctx.file.experiment.nms_iou_thres));
    nms_cfg.validate()?;

    println!("{:>8} {:>10} {:>10} {:>10}", "n_boxes", "niv_ms", "nms_ms", "total_ms");
    let mut rows = Vec::new();
    for &n in &section.sizes {
        let r = time_pipeline(n, section.runs, ctx.seed, &niv, &nms_cfg)?;
        println!("{:>8} {:>10.3} {:>10.3} {:>10.3}", r.n_boxes, r.niv_ms, r.nms_ms, r.total_ms);
        rows.push(r);
    }
    if let Some(out) = &args.output {
        write_csv(&out.join("bench.csv"), &rows)?;
        write_resolved(out, &json!({ "command": "bench", "seed": ctx.seed, "bench": section, "niv": niv, "nms": nms_cfg }))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
