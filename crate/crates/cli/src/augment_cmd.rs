use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use nivkit::augment::{global_transform, object_resample_detailed, GlobalAugConfig, GlobalDraw, ResampleConfig, ResampleReport};
use nivkit::datio::{read_kitti_objects, read_point_cloud, write_kitti_objects, write_point_cloud, write_text, KittiGeometry};
use nivkit::seeding::derive_seed;
use nivkit::Box3D;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{set, write_resolved};
use crate::inputs::{check_paired, files_by_stem};
use crate::{parse_pair, Ctx};

type Pair = (f64, f64);

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Directory of `<id>.bin` point clouds.
    #[arg(long)]
    pub clouds: PathBuf,
    /// Directory of `<id>.txt` KITTI labels.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory; receives velodyne/, label_2/ and manifest.json.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Planar distances separating the near, mid and far bands.
    #[arg(long, value_name = "NEAR,FAR", value_parser = parse_pair::<f64>)]
    pub range_bounds: Option<Pair>,
    /// Keep-rate interval of the near band.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>)]
    pub near_rate: Option<Pair>,
    /// Keep-rate interval of the mid band.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>)]
    pub mid_rate: Option<Pair>,
    /// Keep-rate interval of the far band.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>)]
    pub far_rate: Option<Pair>,
    /// Probabilities of dropping 0, 1 and 2 faces of an easy object.
    #[arg(long, value_name = "P0,P1,P2", value_parser = parse_triple)]
    pub surface_probs: Option<[f64; 3]>,
    /// Interior points needed for an object to count as easy.
    #[arg(long)]
    pub easy_min_points: Option<usize>,
    /// Probability that an easy object is occluded at all.
    #[arg(long)]
    pub occlusion_prob: Option<f64>,
    /// Apply global mirror, rotation and scaling after resampling.
    #[arg(long)]
    pub global: bool,
    /// Mirror probability; implies --global.
    #[arg(long)]
    pub flip_prob: Option<f64>,
    /// Rotation interval about X in radians; implies --global.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub rot_x: Option<Pair>,
    /// Rotation interval about Y in radians; implies --global.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub rot_y: Option<Pair>,
    /// Rotation interval about Z in radians; implies --global.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub rot_z: Option<Pair>,
    /// Scale interval; implies --global.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair::<f64>)]
    pub scale: Option<Pair>,
}

impl AugmentArgs {
    fn resample(&self, mut c: ResampleConfig) -> Result<ResampleConfig> {
        set(&mut c.range_bounds, self.range_bounds);
        set(&mut c.rate_intervals[0], self.near_rate);
        set(&mut c.rate_intervals[1], self.mid_rate);
        set(&mut c.rate_intervals[2], self.far_rate);
        set(&mut c.surface_drop_probs, self.surface_probs);
        set(&mut c.easy_min_points, self.easy_min_points);
        set(&mut c.occlusion_prob, self.occlusion_prob);
        c.validate()?;
        Ok(c)
    }

    fn global(&self, file: Option<GlobalAugConfig>) -> Result<Option<GlobalAugConfig>> {
        let touched = self.global
            || self.flip_prob.is_some()
            || self.rot_x.is_some()
            || self.rot_y.is_some()
            || self.rot_z.is_some()
            || self.scale.is_some();
        let Some(mut c) = file.or_else(|| touched.then(GlobalAugConfig::default)) else { return Ok(None) };
        set(&mut c.flip_prob, self.flip_prob);
        set(&mut c.rot_x, self.rot_x);
        set(&mut c.rot_y, self.rot_y);
        set(&mut c.rot_z, self.rot_z);
        set(&mut c.scale_interval, self.scale);
        c.validate()?;
        Ok(Some(c))
    }
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    frame_id: String,
    seed: u64,
    input_points: usize,
    output_points: usize,
    resample: ResampleReport,
    global: Option<GlobalDraw>,
}

/// Seed of one frame, a function of the master seed and the frame id only.
pub fn frame_seed(master: u64, frame_id: &str) -> u64 {
    derive_seed(master, &format!("augment-frame:{frame_id}"), 0)
}

fn augment_frame(
    id: &str,
    cloud_path: &Path,
    label_path: &Path,
    out: &Path,
    master: u64,
    resample: &ResampleConfig,
    global: Option<&GlobalAugConfig>,
) -> Result<ManifestEntry> {
    let seed = frame_seed(master, id);
    let cloud = read_point_cloud(cloud_path)?;
    let mut objects = read_kitti_objects(label_path)?;
    let occluders: Vec<Box3D> = objects.iter().filter(|o| !o.is_dont_care()).filter_map(|o| o.box3d()).collect();

    let rcfg = ResampleConfig { seed, ..resample.clone() };
    let (cloud, report) = object_resample_detailed(&cloud, &occluders, &rcfg).with_context(|| format!("frame `{id}`"))?;

    let label_out = out.join("label_2").join(format!("{id}.txt"));
    let (cloud, draw) = match global {
        Some(g) => {
            let gcfg = GlobalAugConfig { seed, ..g.clone() };
            let boxes: Vec<Box3D> = objects.iter().filter_map(|o| o.box3d()).collect();
            let (cloud, moved, draw) = global_transform(&cloud, &boxes, &gcfg)?;
            let mut moved = moved.into_iter();
            for o in objects.iter_mut().filter(|o| o.box3d().is_some()) {
                o.geometry = KittiGeometry::Box(moved.next().expect("one box per object"));
            }
            write_kitti_objects(&label_out, &objects)?;
            (cloud, Some(draw))
        }
        None => {
            // Labels are untouched, so copy them byte for byte.
            fs::create_dir_all(label_out.parent().expect("has parent"))?;
            fs::copy(label_path, &label_out).with_context(|| format!("copying {}", label_path.display()))?;
            (cloud, None)
        }
    };
    write_point_cloud(&out.join("velodyne").join(format!("{id}.bin")), &cloud)?;
    Ok(ManifestEntry {
        frame_id: id.to_string(),
        seed,
        input_points: report.sparsify.input,
        output_points: cloud.len(),
        resample: report,
        global: draw,
    })
}

pub fn augment(ctx: Ctx, args: AugmentArgs) -> Result<()> {
    let resample = args.resample(ctx.file.resample.clone())?;
    let global = args.global(ctx.file.global.clone())?;
    for (dir, what) in [(&args.clouds, "point cloud"), (&args.labels, "label")] {
        if !dir.is_dir() {
            bail!("{what} directory {} does not exist", dir.display());
        }
    }
    let clouds = files_by_stem(&args.clouds, "bin")?;
    let labels = files_by_stem(&args.labels, "txt")?;
    check_paired(("clouds", &clouds), ("labels", &labels))?;

    let entries: Vec<ManifestEntry> = clouds
        .par_iter()
        .map(|(id, cp)| augment_frame(id, cp, &labels[id], &args.output, ctx.seed, &resample, global.as_ref()))
        .collect::<Result<_>>()?;
    let n_in: usize = entries.iter().map(|e| e.input_points).sum();
    let n_out: usize = entries.iter().map(|e| e.output_points).sum();
    eprintln!("augment: {} frames, {n_in} points in, {n_out} out", entries.len());

    write_text(&args.output.join("manifest.json"), &(serde_json::to_string_pretty(&json!({ "frames": entries }))? + "\n"))?;
    write_resolved(
        &args.output,
        &json!({
            "command": "augment",
            "seed": ctx.seed,
            "clouds": args.clouds,
            "labels": args.labels,
            "resample": resample,
            "global": global,
            "note": "per-frame seeds derive from the master seed and the frame id; see manifest.json",
        }),
    )
}
