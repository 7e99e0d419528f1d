//! Object-resampling and global point-cloud augmentation.
//!
//! Object resampling turns part of the easy (densely sampled) objects into
//! difficult ones in two steps:
//!
//! * random occlusion: for each easy ground-truth object, draw how many of
//!   its six faces to drop (0, 1 or 2) and delete every interior point
//!   whose center-to-point ray exits through a dropped face;
//! * sparsification: split the scene into near/mid/far range bands, draw one
//!   keep-rate per band for the frame and keep each point independently with
//!   its band's rate.
//!
//! Occlusion runs first, on the original point density. All randomness comes
//! from named sub-streams of the configured seed (see [`crate::seeding`]).

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box3D;
use crate::seeding::substream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("point {index} has intensity {value} outside [0, 1]")]
    BadIntensity { index: usize, value: f32 },
    #[error("invalid augmentation config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub const fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    fn planar_range(&self) -> f64 {
        (self.x as f64).hypot(self.y as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self, AugmentError> {
        for (index, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.intensity.is_finite()) {
                return Err(AugmentError::NonFinitePoint { index });
            }
            if !(0.0..=1.0).contains(&p.intensity) {
                return Err(AugmentError::BadIntensity { index, value: p.intensity });
            }
        }
        Ok(PointCloud { points })
    }

    pub fn empty() -> Self {
        PointCloud::default()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Keeps the points whose index is not flagged in `drop`.
    fn retain_unflagged(&self, drop: &[bool]) -> PointCloud {
        PointCloud {
            points: self.points.iter().zip(drop).filter(|(_, &d)| !d).map(|(p, _)| *p).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    /// Planar distances splitting near / mid / far.
    pub range_bounds: (f64, f64),
    /// Keep-rate interval of each band.
    pub rate_intervals: [(f64, f64); 3],
    /// Probability of dropping 0, 1 or 2 faces of an easy object.
    pub surface_drop_probs: [f64; 3],
    pub easy_min_points: usize,
    /// Probability that an easy object is considered for occlusion at all.
    pub occlusion_prob: f64,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            range_bounds: (20.0, 35.0),
            rate_intervals: [(0.4, 0.6), (0.6, 0.8), (0.8, 1.0)],
            surface_drop_probs: [0.25, 0.5, 0.25],
            easy_min_points: 50,
            occlusion_prob: 1.0,
            seed: 0,
        }
    }
}

impl ResampleConfig {
    /// A configuration under which object resampling changes nothing.
    pub fn identity(seed: u64) -> Self {
        ResampleConfig {
            rate_intervals: [(1.0, 1.0); 3],
            surface_drop_probs: [1.0, 0.0, 0.0],
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let (near, far) = self.range_bounds;
        if !(near >= 0.0 && near < far && far.is_finite()) {
            return Err(AugmentError::BadConfig(format!("range bounds must be increasing, got ({near}, {far})")));
        }
        for (lo, hi) in self.rate_intervals {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(AugmentError::BadConfig(format!("rate interval [{lo}, {hi}] not within [0, 1]")));
            }
        }
        if self.surface_drop_probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.surface_drop_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(AugmentError::BadConfig(format!(
                "surface drop probabilities must be non-negative and sum to 1, got {:?}",
                self.surface_drop_probs
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(AugmentError::BadConfig(format!("occlusion_prob {} outside [0, 1]", self.occlusion_prob)));
        }
        Ok(())
    }

    fn band(&self, range: f64) -> usize {
        if range < self.range_bounds.0 {
            0
        } else if range < self.range_bounds.1 {
            1
        } else {
            2
        }
    }
}

fn uniform_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Keep-rates drawn for one frame, near / mid / far.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifyReport {
    pub rates: [f64; 3],
    pub kept: usize,
    pub input: usize,
}

pub fn sparsify(cloud: &PointCloud, cfg: &ResampleConfig) -> Result<PointCloud, AugmentError> {
    sparsify_detailed(cloud, cfg).map(|(c, _)| c)
}

pub fn sparsify_detailed(cloud: &PointCloud, cfg: &ResampleConfig) -> Result<(PointCloud, SparsifyReport), AugmentError> {
    cfg.validate()?;
    let mut rate_rng = substream(cfg.seed, "band-rates", 0);
    let rates = cfg.rate_intervals.map(|iv| uniform_in(&mut rate_rng, iv));
    let mut keep_rng = substream(cfg.seed, "point-keeps", 0);
    let points: Vec<Point> = cloud
        .points
        .iter()
        .filter(|p| keep_rng.gen::<f64>() < rates[cfg.band(p.planar_range())])
        .copied()
        .collect();
    let report = SparsifyReport { rates, kept: points.len(), input: cloud.len() };
    Ok((PointCloud { points }, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Difficult,
}

pub fn count_interior(cloud: &PointCloud, b: &Box3D) -> usize {
    cloud.points.iter().filter(|p| b.strictly_contains(p.x as f64, p.y as f64, p.z as f64)).count()
}

/// Easy iff at least `easy_min_points` points lie strictly inside the box.
pub fn classify_difficulty(cloud: &PointCloud, b: &Box3D, easy_min_points: usize) -> Difficulty {
    if count_interior(cloud, b) >= easy_min_points {
        Difficulty::Easy
    } else {
        Difficulty::Difficult
    }
}

/// Box face, in the box frame (`x` along the heading).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Splits the interior points of `b` into the six pyramids apexed at the box
/// center, one per face. Groups are indexed by [`Face::index`] and hold
/// point indices into `cloud`.
pub fn pyramid_partition(b: &Box3D, cloud: &PointCloud) -> [Vec<usize>; 6] {
    let mut groups: [Vec<usize>; 6] = Default::default();
    let (hl, hw, hh) = (0.5 * b.l(), 0.5 * b.w(), 0.5 * b.h());
    for (i, p) in cloud.points.iter().enumerate() {
        let (lx, ly, lz) = b.to_local(p.x as f64, p.y as f64, p.z as f64);
        let (nx, ny, nz) = (lx / hl, ly / hw, lz / hh);
        let (ax, ay, az) = (nx.abs(), ny.abs(), nz.abs());
        if lx.abs() >= hl || ly.abs() >= hw || lz.abs() >= hh {
            continue;
        }
        let face = if ax >= ay && ax >= az {
            if nx >= 0.0 { Face::PosX } else { Face::NegX }
        } else if ay >= az {
            if ny >= 0.0 { Face::PosY } else { Face::NegY }
        } else if nz >= 0.0 {
            Face::PosZ
        } else {
            Face::NegZ
        };
        groups[face.index()].push(i);
    }
    groups
}

/// Draws 0, 1 or 2 according to `probs`.
pub fn draw_surface_count<R: Rng>(rng: &mut R, probs: &[f64; 3]) -> usize {
    let u: f64 = rng.gen();
    if u < probs[0] {
        0
    } else if u < probs[0] + probs[1] {
        1
    } else {
        2
    }
}

/// What random occlusion did to one ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectOcclusion {
    pub object: usize,
    pub difficulty: Difficulty,
    pub interior_points: usize,
    pub selected: bool,
    pub faces: Vec<Face>,
    pub removed: usize,
}

pub fn random_occlusion(cloud: &PointCloud, gt_boxes: &[Box3D], cfg: &ResampleConfig) -> Result<PointCloud, AugmentError> {
    random_occlusion_detailed(cloud, gt_boxes, cfg).map(|(c, _)| c)
}

pub fn random_occlusion_detailed(
    cloud: &PointCloud,
    gt_boxes: &[Box3D],
    cfg: &ResampleConfig,
) -> Result<(PointCloud, Vec<ObjectOcclusion>), AugmentError> {
    cfg.validate()?;
    let mut drop = vec![false; cloud.len()];
    let mut report = Vec::with_capacity(gt_boxes.len());
    for (o, b) in gt_boxes.iter().enumerate() {
        let groups = pyramid_partition(b, cloud);
        let interior: usize = groups.iter().map(Vec::len).sum();
        let difficulty = if interior >= cfg.easy_min_points { Difficulty::Easy } else { Difficulty::Difficult };
        let mut entry = ObjectOcclusion { object: o, difficulty, interior_points: interior, selected: false, faces: Vec::new(), removed: 0 };
        if difficulty == Difficulty::Easy {
            let idx = o as u64;
            entry.selected = substream(cfg.seed, "occlusion-select", idx).gen::<f64>() < cfg.occlusion_prob;
            if entry.selected {
                let k = draw_surface_count(&mut substream(cfg.seed, "surface-count", idx), &cfg.surface_drop_probs);
                let mut faces: Vec<usize> = sample(&mut substream(cfg.seed, "pyramid-choice", idx), 6, k).into_vec();
                faces.sort_unstable();
                for &f in &faces {
                    for &i in &groups[f] {
                        if !drop[i] {
                            drop[i] = true;
                            entry.removed += 1;
                        }
                    }
                }
                entry.faces = faces.into_iter().map(|f| Face::ALL[f]).collect();
            }
        }
        report.push(entry);
    }
    Ok((cloud.retain_unflagged(&drop), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub occlusion: Vec<ObjectOcclusion>,
    pub sparsify: SparsifyReport,
}

/// Random occlusion followed by sparsification.
pub fn object_resample(cloud: &PointCloud, gt_boxes: &[Box3D], cfg: &ResampleConfig) -> Result<PointCloud, AugmentError> {
    object_resample_detailed(cloud, gt_boxes, cfg).map(|(c, _)| c)
}

pub fn object_resample_detailed(
    cloud: &PointCloud,
    gt_boxes: &[Box3D],
    cfg: &ResampleConfig,
) -> Result<(PointCloud, ResampleReport), AugmentError> {
    let (occluded, occlusion) = random_occlusion_detailed(cloud, gt_boxes, cfg)?;
    let (out, sparsify) = sparsify_detailed(&occluded, cfg)?;
    Ok((out, ResampleReport { occlusion, sparsify }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalAugConfig {
    /// Probability of mirroring across the x-z plane (y -> -y).
    pub flip_prob: f64,
    pub rot_x: (f64, f64),
    pub rot_y: (f64, f64),
    pub rot_z: (f64, f64),
    pub scale_interval: (f64, f64),
    pub seed: u64,
}

impl Default for GlobalAugConfig {
    fn default() -> Self {
        GlobalAugConfig {
            flip_prob: 0.5,
            rot_x: (-0.035, 0.035),
            rot_y: (-0.025, 0.025),
            rot_z: (-0.785, 0.785),
            scale_interval: (0.95, 1.05),
            seed: 0,
        }
    }
}

impl GlobalAugConfig {
    pub fn identity(seed: u64) -> Self {
        GlobalAugConfig {
            flip_prob: 0.0,
            rot_x: (0.0, 0.0),
            rot_y: (0.0, 0.0),
            rot_z: (0.0, 0.0),
            scale_interval: (1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(AugmentError::BadConfig(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        for (name, (lo, hi)) in [("rot_x", self.rot_x), ("rot_y", self.rot_y), ("rot_z", self.rot_z), ("scale", self.scale_interval)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(AugmentError::BadConfig(format!("{name} interval [{lo}, {hi}] is not ordered")));
            }
        }
        if self.scale_interval.0 <= 0.0 {
            return Err(AugmentError::BadConfig("scale interval must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters drawn for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalDraw {
    pub flip: bool,
    pub rot_x: f64,
    pub rot_y: f64,
    pub rot_z: f64,
    pub scale: f64,
}

impl GlobalDraw {
    pub fn sample(cfg: &GlobalAugConfig) -> Self {
        let mut rng = substream(cfg.seed, "global", 0);
        let flip = rng.gen::<f64>() < cfg.flip_prob;
        let rot_x = uniform_in(&mut rng, cfg.rot_x);
        let rot_y = uniform_in(&mut rng, cfg.rot_y);
        let rot_z = uniform_in(&mut rng, cfg.rot_z);
        let scale = uniform_in(&mut rng, cfg.scale_interval);
        GlobalDraw { flip, rot_x, rot_y, rot_z, scale }
    }

    /// Applies mirror, X, Y and Z rotations, then scale, to one point.
    pub fn apply(&self, mut p: [f64; 3]) -> [f64; 3] {
        if self.flip {
            p[1] = -p[1];
        }
        if self.rot_x != 0.0 {
            let (s, c) = self.rot_x.sin_cos();
            p = [p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]];
        }
        if self.rot_y != 0.0 {
            let (s, c) = self.rot_y.sin_cos();
            p = [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]];
        }
        if self.rot_z != 0.0 {
            let (s, c) = self.rot_z.sin_cos();
            p = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
        }
        if self.scale != 1.0 {
            p = p.map(|v| v * self.scale);
        }
        p
    }

    /// Boxes stay upright: tilt moves the center only, yaw follows the
    /// mirror and the Z rotation.
    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        let [x, y, z] = self.apply([b.x(), b.y(), b.z()]);
        let mut yaw = b.yaw();
        if self.flip {
            yaw = -yaw;
        }
        yaw += self.rot_z;
        let moved = b.with_pose(x, y, z, yaw).expect("finite pose of a valid box");
        if self.scale != 1.0 {
            moved.scaled(self.scale).expect("positive scale keeps extents positive")
        } else {
            moved
        }
    }
}

pub fn global_transform(
    cloud: &PointCloud,
    gt_boxes: &[Box3D],
    cfg: &GlobalAugConfig,
) -> Result<(PointCloud, Vec<Box3D>, GlobalDraw), AugmentError> {
    cfg.validate()?;
    let draw = GlobalDraw::sample(cfg);
    Ok(apply_global(cloud, gt_boxes, &draw))
}

pub fn apply_global(cloud: &PointCloud, gt_boxes: &[Box3D], draw: &GlobalDraw) -> (PointCloud, Vec<Box3D>, GlobalDraw) {
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let [x, y, z] = draw.apply([p.x as f64, p.y as f64, p.z as f64]);
            Point::new(x as f32, y as f32, z as f32, p.intensity)
        })
        .collect();
    let boxes = gt_boxes.iter().map(|b| draw.apply_box(b)).collect();
    (PointCloud { points }, boxes, *draw)
}
