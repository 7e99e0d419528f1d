//! KITTI-style matching, precision/recall, interpolated AP and Pearson
//! correlation between scores and real IoU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{prepared_iou, Box3D, IouMode, PreparedBox};
use crate::niv::Detection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("recall is undefined without ground truth")]
    NoGroundTruth,
    #[error("pearson needs equal-length inputs, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("pearson needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("pearson is undefined for a constant input")]
    DegenerateVariance,
    #[error("unsupported recall sampling: {0} points (expected 11 or 40)")]
    BadRecallPoints(usize),
}

/// One annotated object. `bbox` is `None` for don't-care regions that carry
/// no 3D extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: Option<Box3D>,
    pub category: String,
    #[serde(default)]
    pub ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameAnnotations {
    pub objects: Vec<GroundTruth>,
}

impl FrameAnnotations {
    pub fn new(objects: Vec<GroundTruth>) -> Self {
        FrameAnnotations { objects }
    }

    pub fn from_boxes(boxes: &[Box3D], category: &str) -> Self {
        FrameAnnotations {
            objects: boxes
                .iter()
                .map(|b| GroundTruth { bbox: Some(*b), category: category.to_string(), ignore: false })
                .collect(),
        }
    }

    /// Objects of `category` plus every ignore-flagged region, which applies
    /// to all categories.
    pub fn for_category(&self, category: &str) -> FrameAnnotations {
        FrameAnnotations {
            objects: self.objects.iter().filter(|g| g.ignore || g.category == category).cloned().collect(),
        }
    }

    pub fn boxes(&self) -> impl Iterator<Item = Box3D> + '_ {
        self.objects.iter().filter(|g| !g.ignore).filter_map(|g| g.bbox)
    }

    pub fn n_relevant(&self) -> usize {
        self.objects.iter().filter(|g| !g.ignore).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatchOutcome {
    Tp { gt: usize, iou: f64 },
    Fp { best_iou: f64 },
    /// Overlaps a don't-care region; counts as neither TP nor FP.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub det_index: usize,
    pub score: f64,
    pub outcome: MatchOutcome,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchTable {
    /// Entries in descending score order.
    pub entries: Vec<MatchEntry>,
    /// Non-ignored ground-truth count.
    pub n_gt: usize,
}

/// Descending by score, ties by index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy matching of one category's detections against one frame.
pub fn match_detections(gts: &FrameAnnotations, dets: &[Detection], iou_thres: f64, mode: IouMode) -> MatchTable {
    let gt_boxes: Vec<Option<PreparedBox>> = gts.objects.iter().map(|g| g.bbox.map(PreparedBox::new)).collect();
    let mut taken = vec![false; gts.objects.len()];
    let mut entries = Vec::with_capacity(dets.len());
    for i in score_order(dets) {
        let det = PreparedBox::new(dets[i].bbox);
        let mut best: Option<(usize, f64)> = None;
        let mut best_any = 0.0f64;
        let mut hits_ignored = false;
        for (g, gt) in gts.objects.iter().enumerate() {
            let Some(pb) = &gt_boxes[g] else { continue };
            let v = prepared_iou(&det, pb, mode);
            if gt.ignore {
                hits_ignored |= v >= iou_thres;
                continue;
            }
            best_any = best_any.max(v);
            if !taken[g] && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        let outcome = match best {
            Some((g, v)) if v >= iou_thres => {
                taken[g] = true;
                MatchOutcome::Tp { gt: g, iou: v }
            }
            _ if hits_ignored => MatchOutcome::Ignored,
            _ => MatchOutcome::Fp { best_iou: best_any },
        };
        entries.push(MatchEntry { det_index: i, score: dets[i].confidence, outcome });
    }
    MatchTable { entries, n_gt: gts.n_relevant() }
}

/// Largest IoU between `det` and any non-ignored ground truth.
pub fn real_iou(det: &Box3D, gts: &FrameAnnotations, mode: IouMode) -> f64 {
    let d = PreparedBox::new(*det);
    gts.boxes().map(|g| prepared_iou(&d, &PreparedBox::new(g), mode)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per counted detection, pooled over frames and cut at
/// successively lower scores.
pub fn pr_curve(tables: &[MatchTable]) -> Result<Vec<PrPoint>, EvalError> {
    let n_gt: usize = tables.iter().map(|t| t.n_gt).sum();
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut pooled: Vec<(f64, bool)> = tables
        .iter()
        .flat_map(|t| t.entries.iter())
        .filter_map(|e| match e.outcome {
            MatchOutcome::Tp { .. } => Some((e.score, true)),
            MatchOutcome::Fp { .. } => Some((e.score, false)),
            MatchOutcome::Ignored => None,
        })
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(pooled.len());
    for (k, (score, is_tp)) in pooled.into_iter().enumerate() {
        tp += is_tp as usize;
        curve.push(PrPoint { score, recall: tp as f64 / n_gt as f64, precision: tp as f64 / (k + 1) as f64 });
    }
    Ok(curve)
}

/// Recall sample positions: `{0, 0.1, ..., 1}` for 11 points and
/// `{1/40, ..., 1}` for 40.
pub fn recall_samples(n_points: usize) -> Result<Vec<f64>, EvalError> {
    match n_points {
        11 => Ok((0..=10).map(|i| i as f64 / 10.0).collect()),
        40 => Ok((1..=40).map(|i| i as f64 / 40.0).collect()),
        n => Err(EvalError::BadRecallPoints(n)),
    }
}

/// Interpolated AP in percent.
pub fn average_precision(curve: &[PrPoint], n_points: usize) -> Result<f64, EvalError> {
    let samples = recall_samples(n_points)?;
    // suffix max of precision over recall >= r
    let mut best_from = vec![0.0f64; curve.len() + 1];
    for k in (0..curve.len()).rev() {
        best_from[k] = best_from[k + 1].max(curve[k].precision);
    }
    let total: f64 = samples
        .iter()
        .map(|&r| match curve.iter().position(|p| p.recall >= r) {
            Some(k) => best_from[k],
            None => 0.0,
        })
        .sum();
    Ok(total / samples.len() as f64 * 100.0)
}

/// Product-moment correlation, two-pass.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-detection record for the score / IoU scatter export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub frame_id: String,
    pub det_index: usize,
    pub real_iou: f64,
    pub confidence: f64,
    pub s_niv: Option<f64>,
    pub rectified_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub iou_thres: f64,
    pub iou_mode: IouMode,
    pub curve: Vec<PrPoint>,
    pub ap_r11: f64,
    pub ap_r40: f64,
    pub pcc: Option<f64>,
    pub matches: Vec<MatchTable>,
}

/// Matches every frame, pools the curve and reports AP at both sampling
/// protocols. `pcc` correlates score with real IoU over detections that
/// overlap some ground truth, when that is defined.
pub fn evaluate(
    category: &str,
    frames: &[(FrameAnnotations, Vec<Detection>)],
    iou_thres: f64,
    mode: IouMode,
) -> Result<EvalReport, EvalError> {
    let mut matches = Vec::with_capacity(frames.len());
    let (mut scores, mut ious) = (Vec::new(), Vec::new());
    for (ann, dets) in frames {
        let ann = ann.for_category(category);
        let dets: Vec<Detection> = dets.iter().filter(|d| d.category == category).cloned().collect();
        for d in &dets {
            let v = real_iou(&d.bbox, &ann, mode);
            if v > 0.0 {
                scores.push(d.confidence);
                ious.push(v);
            }
        }
        matches.push(match_detections(&ann, &dets, iou_thres, mode));
    }
    let curve = pr_curve(&matches)?;
    Ok(EvalReport {
        category: category.to_string(),
        iou_thres,
        iou_mode: mode,
        ap_r11: average_precision(&curve, 11)?,
        ap_r40: average_precision(&curve, 40)?,
        pcc: pearson(&scores, &ious).ok(),
        curve,
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(x: f64) -> Box3D {
        Box3D::new(x, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0).unwrap()
    }

    fn det(x: f64, c: f64) -> Detection {
        Detection::new(cube(x), c, "Car").unwrap()
    }

    fn table(outcomes: &[(f64, bool)], n_gt: usize) -> MatchTable {
        MatchTable {
            entries: outcomes
                .iter()
                .enumerate()
                .map(|(i, &(score, tp))| MatchEntry {
                    det_index: i,
                    score,
                    outcome: if tp { MatchOutcome::Tp { gt: i, iou: 1.0 } } else { MatchOutcome::Fp { best_iou: 0.0 } },
                })
                .collect(),
            n_gt,
        }
    }

    #[test]
    fn exact_match_is_tp() {
        let gts = FrameAnnotations::from_boxes(&[cube(0.0)], "Car");
        let t = match_detections(&gts, &[det(0.0, 0.9)], 0.7, IouMode::ThreeD);
        assert_eq!(t.entries[0].outcome, MatchOutcome::Tp { gt: 0, iou: 1.0 });
    }

    #[test]
    fn disjoint_is_fp() {
        let gts = FrameAnnotations::from_boxes(&[cube(0.0)], "Car");
        let t = match_detections(&gts, &[det(10.0, 0.9)], 0.7, IouMode::ThreeD);
        assert!(matches!(t.entries[0].outcome, MatchOutcome::Fp { .. }));
    }

    #[test]
    fn second_detection_on_same_gt_is_fp() {
        let gts = FrameAnnotations::from_boxes(&[cube(0.0)], "Car");
        let t = match_detections(&gts, &[det(0.1, 0.8), det(0.0, 0.9)], 0.5, IouMode::ThreeD);
        assert_eq!(t.entries[0].det_index, 1);
        assert!(matches!(t.entries[0].outcome, MatchOutcome::Tp { gt: 0, .. }));
        assert!(matches!(t.entries[1].outcome, MatchOutcome::Fp { .. }));
    }

    #[test]
    fn ignored_regions_neither_tp_nor_fp() {
        let gts = FrameAnnotations::new(vec![GroundTruth { bbox: Some(cube(0.0)), category: "DontCare".into(), ignore: true }]);
        let t = match_detections(&gts, &[det(0.0, 0.9), det(0.0, 0.8)], 0.5, IouMode::ThreeD);
        assert!(t.entries.iter().all(|e| e.outcome == MatchOutcome::Ignored));
        assert_eq!(t.n_gt, 0);
    }

    #[test]
    fn curve_examples() {
        let c = pr_curve(&[table(&[(0.9, true), (0.8, true)], 2)]).unwrap();
        assert_eq!(c.last().map(|p| (p.recall, p.precision)), Some((1.0, 1.0)));
        assert!(pr_curve(&[table(&[], 3)]).unwrap().is_empty());
        let c = pr_curve(&[table(&[(0.9, true), (0.8, false)], 2)]).unwrap();
        assert_eq!(c.iter().map(|p| (p.recall, p.precision)).collect::<Vec<_>>(), vec![(0.5, 1.0), (0.5, 0.5)]);
        assert_eq!(pr_curve(&[table(&[(0.5, false)], 0)]), Err(EvalError::NoGroundTruth));
    }

    #[test]
    fn ap_examples() {
        let perfect = pr_curve(&[table(&[(0.9, true), (0.8, true), (0.7, true)], 3)]).unwrap();
        assert_eq!(average_precision(&perfect, 11).unwrap(), 100.0);
        assert_eq!(average_precision(&perfect, 40).unwrap(), 100.0);
        assert_eq!(average_precision(&[], 40).unwrap(), 0.0);
        assert_eq!(average_precision(&[], 11).unwrap(), 0.0);
        let half = pr_curve(&[table(&[(0.9, true), (0.8, true)], 4)]).unwrap();
        assert!((average_precision(&half, 40).unwrap() - 50.0).abs() < 1e-9);
        // R11 includes r = 0: six of eleven samples at or below 0.5
        assert!((average_precision(&half, 11).unwrap() - 600.0 / 11.0).abs() < 1e-9);
        assert_eq!(average_precision(&half, 12), Err(EvalError::BadRecallPoints(12)));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        let double: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &double).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::DegenerateVariance));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(EvalError::TooFewSamples(1)));
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1)));
    }

    #[test]
    fn evaluate_perfect_detector() {
        let boxes = [cube(0.0), cube(10.0)];
        let ann = FrameAnnotations::from_boxes(&boxes, "Car");
        let dets = vec![det(0.0, 0.9), det(10.0, 0.8)];
        let rep = evaluate("Car", &[(ann, dets)], 0.7, IouMode::ThreeD).unwrap();
        assert_eq!(rep.ap_r11, 100.0);
        assert_eq!(rep.ap_r40, 100.0);
    }
}
