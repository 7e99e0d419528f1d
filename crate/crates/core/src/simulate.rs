//! Synthetic detection ensembles for calibration experiments.
//!
//! Each frame holds non-overlapping ground-truth cars. Every car gets a
//! difficulty draw `d`; it emits a cluster of about `n / d` perturbed
//! predictions whose noise scales with `d`, so hard objects yield fewer and
//! worse-localized boxes. A prediction's confidence is its real IoU plus
//! Gaussian noise, clipped to `[0, 1]`. Low-confidence false positives are
//! scattered independently of the cars.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datio::DetectionFrame;
use crate::evalkit::{evaluate, pearson, EvalError, FrameAnnotations, ScatterRow};
use crate::geometry::{iou_3d, Box3D, IouMode};
use crate::niv::{apply_fusion, niv_rectify, niv_scores, Detection, NivConfig, NivError, NivStats};
use crate::seeding::substream;
use crate::suppression::{nms, NmsConfig, NmsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    BadConfig(String),
    #[error("no frames to simulate")]
    NoFrames,
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Niv(#[from] NivError),
    #[error(transparent)]
    Nms(#[from] NmsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_frames: usize,
    pub gts_per_frame: (usize, usize),
    pub preds_per_gt: (usize, usize),
    /// Meters, per planar axis; half of it vertically.
    pub center_noise_sigma: f64,
    /// Relative, per extent.
    pub extent_noise_sigma: f64,
    pub yaw_noise_sigma: f64,
    pub conf_noise_sigma: f64,
    /// Noise of the externally predicted IoU.
    pub piou_noise_sigma: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// Interval of the per-object difficulty multiplier.
    pub difficulty: (f64, f64),
    /// Confidence interval of false positives.
    pub fp_confidence: (f64, f64),
    pub category: String,
    /// Mean `(w, l, h)` of a ground-truth object.
    pub object_size: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_frames: 40,
            gts_per_frame: (4, 10),
            preds_per_gt: (4, 12),
            center_noise_sigma: 0.15,
            extent_noise_sigma: 0.06,
            yaw_noise_sigma: 0.08,
            conf_noise_sigma: 0.15,
            piou_noise_sigma: 0.12,
            fp_rate: 4.0,
            difficulty: (0.5, 2.0),
            fp_confidence: (0.05, 0.4),
            category: "Car".into(),
            object_size: (1.6, 3.9, 1.56),
            seed: 7,
        }
    }
}

impl SimConfig {
    /// Every prediction equals its ground truth with confidence 1.
    pub fn noiseless(seed: u64) -> Self {
        SimConfig {
            preds_per_gt: (1, 1),
            center_noise_sigma: 0.0,
            extent_noise_sigma: 0.0,
            yaw_noise_sigma: 0.0,
            conf_noise_sigma: 0.0,
            piou_noise_sigma: 0.0,
            fp_rate: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_frames == 0 {
            return Err(SimError::NoFrames);
        }
        let bad = |m: String| Err(SimError::BadConfig(m));
        for (name, v) in [
            ("center_noise_sigma", self.center_noise_sigma),
            ("extent_noise_sigma", self.extent_noise_sigma),
            ("yaw_noise_sigma", self.yaw_noise_sigma),
            ("conf_noise_sigma", self.conf_noise_sigma),
            ("piou_noise_sigma", self.piou_noise_sigma),
            ("fp_rate", self.fp_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.gts_per_frame.0 > self.gts_per_frame.1 || self.preds_per_gt.0 > self.preds_per_gt.1 {
            return bad("count ranges must be ordered".into());
        }
        if self.preds_per_gt.1 == 0 {
            return bad("preds_per_gt must allow at least one prediction".into());
        }
        let (dlo, dhi) = self.difficulty;
        if !(dlo > 0.0 && dlo <= dhi && dhi.is_finite()) {
            return bad(format!("difficulty interval ({dlo}, {dhi}) must be positive and ordered"));
        }
        let (flo, fhi) = self.fp_confidence;
        if !(0.0 <= flo && flo <= fhi && fhi <= 1.0) {
            return bad(format!("fp_confidence ({flo}, {fhi}) must lie within [0, 1]"));
        }
        let (w, l, h) = self.object_size;
        if !(w > 0.0 && l > 0.0 && h > 0.0) {
            return bad("object size must be positive".into());
        }
        Ok(())
    }
}

/// A generated frame plus, for each detection, the index of the ground
/// truth it was sampled around (`None` for false positives).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    pub frame: DetectionFrame,
    pub sources: Vec<Option<usize>>,
}

impl SimulatedFrame {
    pub fn annotations(&self) -> &FrameAnnotations {
        self.frame.annotations.as_ref().expect("simulated frames are annotated")
    }
}

const SCENE_X: (f64, f64) = (2.0, 70.0);
const SCENE_Y: (f64, f64) = (-35.0, 35.0);
const GROUND_Z: f64 = -1.0;
const PLACEMENT_TRIES: usize = 200;
const PLACEMENT_MARGIN: f64 = 0.5;

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
}

fn range_draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi { lo } else { rng.gen_range(lo..hi) }
}

fn count_draw(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &SimConfig) -> Box3D {
    let (w, l, h) = cfg.object_size;
    let jitter = |rng: &mut ChaCha8Rng| (1.0 + gauss(rng, 0.05)).clamp(0.8, 1.2);
    let (w, l, h) = (w * jitter(rng), l * jitter(rng), h * jitter(rng));
    let x = range_draw(rng, SCENE_X);
    let y = range_draw(rng, SCENE_Y);
    let r = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    Box3D::new(x, y, GROUND_Z + 0.5 * h, w, l, h, r).expect("positive jittered extents")
}

/// Rejection placement with circumscribed circles kept apart, so footprints
/// never touch.
fn place_ground_truth(rng: &mut ChaCha8Rng, cfg: &SimConfig) -> Vec<Box3D> {
    let target = count_draw(rng, cfg.gts_per_frame);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(target);
    for _ in 0..target {
        for _ in 0..PLACEMENT_TRIES {
            let cand = random_box(rng, cfg);
            let clear = boxes.iter().all(|b| {
                (b.x() - cand.x()).hypot(b.y() - cand.y()) > b.bev_radius() + cand.bev_radius() + PLACEMENT_MARGIN
            });
            if clear {
                boxes.push(cand);
                break;
            }
        }
    }
    boxes
}

fn perturb(rng: &mut ChaCha8Rng, gt: &Box3D, cfg: &SimConfig, d: f64) -> Box3D {
    let sc = cfg.center_noise_sigma * d;
    let se = cfg.extent_noise_sigma * d;
    let x = gt.x() + gauss(rng, sc);
    let y = gt.y() + gauss(rng, sc);
    let z = gt.z() + gauss(rng, 0.5 * sc);
    let mut ext = |v: f64| v * (1.0 + gauss(rng, se)).max(0.5);
    let (w, l, h) = (ext(gt.w()), ext(gt.l()), ext(gt.h()));
    let r = gt.yaw() + gauss(rng, cfg.yaw_noise_sigma * d);
    Box3D::new(x, y, z, w, l, h, r).expect("extents bounded below by half the ground truth")
}

fn generate_frame(cfg: &SimConfig, index: usize) -> SimulatedFrame {
    let mut rng = substream(cfg.seed, "sim-frame", index as u64);
    let gts = place_ground_truth(&mut rng, cfg);
    let mut dets = Vec::new();
    let mut sources = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        let d = range_draw(&mut rng, cfg.difficulty);
        let base = count_draw(&mut rng, cfg.preds_per_gt) as f64;
        let n = ((base / d).round() as usize).clamp(1, cfg.preds_per_gt.1);
        for _ in 0..n {
            let pred = perturb(&mut rng, gt, cfg, d);
            let real = iou_3d(&pred, gt);
            let conf = (real + gauss(&mut rng, cfg.conf_noise_sigma * d)).clamp(0.0, 1.0);
            let piou = (real + gauss(&mut rng, cfg.piou_noise_sigma * d)).clamp(0.0, 1.0);
            dets.push(Detection { bbox: pred, confidence: conf, predicted_iou: Some(piou), category: cfg.category.clone() });
            sources.push(Some(g));
        }
    }
    let n_fp = if cfg.fp_rate > 0.0 {
        Poisson::new(cfg.fp_rate).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..n_fp {
        let bbox = random_box(&mut rng, cfg);
        let conf = range_draw(&mut rng, cfg.fp_confidence);
        let piou = range_draw(&mut rng, (0.0, 0.3));
        dets.push(Detection { bbox, confidence: conf, predicted_iou: Some(piou), category: cfg.category.clone() });
        sources.push(None);
    }
    let mut frame = DetectionFrame::new(format!("{index:06}"), dets);
    frame.annotations = Some(FrameAnnotations::from_boxes(&gts, &cfg.category));
    SimulatedFrame { frame, sources }
}

/// Generates `n_frames` frames; frame `i` depends only on `(seed, i)`.
pub fn generate_ensemble(cfg: &SimConfig) -> Result<Vec<SimulatedFrame>, SimError> {
    cfg.validate()?;
    Ok((0..cfg.n_frames).into_par_iter().map(|i| generate_frame(cfg, i)).collect())
}

/// Predictions per object in [`benchmark_detections`].
pub const BENCH_CLUSTER: usize = 8;

/// `n` car detections in clusters of [`BENCH_CLUSTER`] around objects spread
/// over the default scene, the workload used for timing.
pub fn benchmark_detections(n: usize, seed: u64) -> Vec<Detection> {
    let cfg = SimConfig::default();
    let mut rng = substream(seed, "bench", n as u64);
    let mut dets = Vec::with_capacity(n);
    while dets.len() < n {
        let gt = random_box(&mut rng, &cfg);
        for _ in 0..BENCH_CLUSTER.min(n - dets.len()) {
            let bbox = perturb(&mut rng, &gt, &cfg, 1.0);
            let confidence = rng.gen_range(0.05..1.0);
            dets.push(Detection { bbox, confidence, predicted_iou: None, category: cfg.category.clone() });
        }
    }
    dets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub niv: NivConfig,
    pub nms: NmsConfig,
    /// Exponent applied to the predicted IoU when fusing.
    pub fusion_beta: f64,
    pub eval_iou_thres: f64,
    pub eval_mode: IouMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            niv: NivConfig::default(),
            nms: NmsConfig::new(0.1),
            fusion_beta: 1.0,
            eval_iou_thres: 0.7,
            eval_mode: IouMode::ThreeD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_frames: usize,
    pub n_ground_truth: usize,
    pub n_predictions: usize,
    /// Predictions sampled around a ground truth; the PCC population.
    pub n_true_predictions: usize,
    pub pcc_raw: f64,
    pub pcc_niv: f64,
    pub pcc_niv_fused: f64,
    /// AP (R40) after NMS on the raw confidences.
    pub ap_raw: f64,
    /// AP (R40) after NIV rectification and NMS.
    pub ap_niv: f64,
    pub ap_raw_r11: f64,
    pub ap_niv_r11: f64,
}

/// Per-prediction scores of one frame, raw and rectified.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores {
    pub stats: Vec<Option<NivStats>>,
    pub fused_stats: Vec<Option<NivStats>>,
    pub real_iou: Vec<Option<f64>>,
}

pub fn score_frame(sim: &SimulatedFrame, exp: &ExperimentConfig) -> Result<FrameScores, SimError> {
    let dets = &sim.frame.detections;
    let stats = niv_scores(dets, &exp.niv)?;
    let fused_stats = niv_scores(&apply_fusion(dets, exp.fusion_beta), &exp.niv)?;
    let gts = &sim.annotations().objects;
    let real_iou = dets
        .iter()
        .zip(&sim.sources)
        .map(|(d, src)| src.and_then(|g| gts[g].bbox).map(|gt| iou_3d(&d.bbox, &gt)))
        .collect();
    Ok(FrameScores { stats, fused_stats, real_iou })
}

/// Scatter rows for every prediction sampled around a ground truth.
pub fn scatter_rows(frames: &[SimulatedFrame], exp: &ExperimentConfig) -> Result<Vec<ScatterRow>, SimError> {
    let scored: Vec<FrameScores> = frames.par_iter().map(|f| score_frame(f, exp)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (sim, sc) in frames.iter().zip(&scored) {
        for (i, det) in sim.frame.detections.iter().enumerate() {
            if let Some(real) = sc.real_iou[i] {
                rows.push(ScatterRow {
                    frame_id: sim.frame.frame_id.clone(),
                    det_index: i,
                    real_iou: real,
                    confidence: det.confidence,
                    s_niv: sc.stats[i].map(|s| s.s_niv),
                    rectified_score: sc.stats[i].map(|s| s.s),
                });
            }
        }
    }
    Ok(rows)
}

fn nms_frames(frames: &[(FrameAnnotations, Vec<Detection>)], cfg: &NmsConfig) -> Result<Vec<(FrameAnnotations, Vec<Detection>)>, SimError> {
    frames
        .iter()
        .map(|(a, d)| Ok((a.clone(), nms(d, cfg)?)))
        .collect()
}

/// Correlation of raw, rectified and fused-then-rectified scores with real
/// IoU, and AP with and without rectification ahead of NMS.
pub fn run_calibration_experiment(cfg: &SimConfig, exp: &ExperimentConfig) -> Result<CalibrationReport, SimError> {
    let frames = generate_ensemble(cfg)?;
    run_on_frames(&frames, exp)
}

pub fn run_on_frames(frames: &[SimulatedFrame], exp: &ExperimentConfig) -> Result<CalibrationReport, SimError> {
    let scored: Vec<FrameScores> = frames.par_iter().map(|f| score_frame(f, exp)).collect::<Result<_, _>>()?;
    let (mut real, mut raw, mut niv, mut fused) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (sim, sc) in frames.iter().zip(&scored) {
        for (i, det) in sim.frame.detections.iter().enumerate() {
            let (Some(r), Some(st), Some(fst)) = (sc.real_iou[i], sc.stats[i], sc.fused_stats[i]) else { continue };
            real.push(r);
            raw.push(det.confidence);
            niv.push(st.s);
            fused.push(fst.s);
        }
    }
    let pcc_raw = pearson(&raw, &real)?;
    let pcc_niv = pearson(&niv, &real)?;
    let pcc_niv_fused = pearson(&fused, &real)?;

    let plain: Vec<(FrameAnnotations, Vec<Detection>)> =
        frames.iter().map(|f| (f.annotations().clone(), f.frame.detections.clone())).collect();
    let rectified: Vec<(FrameAnnotations, Vec<Detection>)> = frames
        .iter()
        .map(|f| Ok((f.annotations().clone(), niv_rectify(&f.frame.detections, &exp.niv)?.kept)))
        .collect::<Result<_, SimError>>()?;
    let category = frames.first().and_then(|f| f.frame.detections.first()).map(|d| d.category.clone()).unwrap_or_default();
    let rep_raw = evaluate(&category, &nms_frames(&plain, &exp.nms)?, exp.eval_iou_thres, exp.eval_mode)?;
    let rep_niv = evaluate(&category, &nms_frames(&rectified, &exp.nms)?, exp.eval_iou_thres, exp.eval_mode)?;

    Ok(CalibrationReport {
        n_frames: frames.len(),
        n_ground_truth: frames.iter().map(|f| f.annotations().n_relevant()).sum(),
        n_predictions: frames.iter().map(|f| f.frame.detections.len()).sum(),
        n_true_predictions: real.len(),
        pcc_raw,
        pcc_niv,
        pcc_niv_fused,
        ap_raw: rep_raw.ap_r40,
        ap_niv: rep_niv.ap_r40,
        ap_raw_r11: rep_raw.ap_r11,
        ap_niv_r11: rep_niv.ap_r11,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou_bev;

    fn small(seed: u64) -> SimConfig {
        SimConfig { n_frames: 6, seed, ..Default::default() }
    }

    #[test]
    fn noiseless_limit() {
        let frames = generate_ensemble(&SimConfig { n_frames: 5, ..SimConfig::noiseless(3) }).unwrap();
        for f in &frames {
            let gts: Vec<Box3D> = f.annotations().boxes().collect();
            assert_eq!(f.frame.detections.len(), gts.len());
            for (d, src) in f.frame.detections.iter().zip(&f.sources) {
                assert_eq!(d.bbox, gts[src.unwrap()]);
                assert_eq!(d.confidence, 1.0);
            }
        }
        let err = run_calibration_experiment(&SimConfig { n_frames: 5, ..SimConfig::noiseless(3) }, &ExperimentConfig::default());
        assert_eq!(err, Err(SimError::Eval(EvalError::DegenerateVariance)));
    }

    #[test]
    fn ground_truth_never_overlaps() {
        for f in generate_ensemble(&small(11)).unwrap() {
            let gts: Vec<Box3D> = f.annotations().boxes().collect();
            for i in 0..gts.len() {
                for j in (i + 1)..gts.len() {
                    assert_eq!(iou_bev(&gts[i], &gts[j]), 0.0);
                }
            }
        }
    }

    #[test]
    fn noisy_confidence_is_imperfect() {
        let cfg = SimConfig { conf_noise_sigma: 0.2, ..small(2) };
        let rows = scatter_rows(&generate_ensemble(&cfg).unwrap(), &ExperimentConfig::default()).unwrap();
        let xs: Vec<f64> = rows.iter().map(|r| r.confidence).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.real_iou).collect();
        let r = pearson(&xs, &ys).unwrap();
        assert!(r < 1.0 && r > 0.0, "{r}");
    }

    #[test]
    fn deterministic_per_seed_and_frame() {
        let a = generate_ensemble(&small(5)).unwrap();
        let b = generate_ensemble(&small(5)).unwrap();
        assert_eq!(a, b);
        // frame i does not depend on how many frames follow
        let longer = generate_ensemble(&SimConfig { n_frames: 9, ..small(5) }).unwrap();
        assert_eq!(a[..], longer[..6]);
    }

    #[test]
    fn rejects_bad_config() {
        assert_eq!(generate_ensemble(&SimConfig { n_frames: 0, ..Default::default() }), Err(SimError::NoFrames));
        assert!(SimConfig { conf_noise_sigma: -1.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { difficulty: (0.0, 1.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn more_center_noise_lowers_mean_iou() {
        let mean_iou = |sigma: f64| {
            let mut acc = 0.0;
            let mut n = 0usize;
            for seed in 0..10 {
                let cfg = SimConfig { center_noise_sigma: sigma, n_frames: 4, seed, ..Default::default() };
                for r in scatter_rows(&generate_ensemble(&cfg).unwrap(), &ExperimentConfig::default()).unwrap() {
                    acc += r.real_iou;
                    n += 1;
                }
            }
            acc / n as f64
        };
        let levels = [0.1, 0.25, 0.5];
        let means: Vec<f64> = levels.iter().map(|&s| mean_iou(s)).collect();
        assert!(means.windows(2).all(|w| w[0] >= w[1]), "{means:?}");
    }
}
