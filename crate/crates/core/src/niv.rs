//! Neighbor IoU-voting confidence rectification.
//!
//! For every predicted box of one category the rectifier counts the boxes
//! overlapping it above `iou_thres` (its neighbors, itself included by
//! default) and the mean IoU with those neighbors. The count is rescaled by
//! the ratio of the anchor footprint to the box footprint, turned into a
//! saturating weight `n / (n + 1)`, multiplied by the mean IoU and finally by
//! the input confidence. Boxes whose rectified score does not exceed
//! `score_thres` are dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{prepared_iou, Box3D, IouMode, PreparedBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NivError {
    #[error("pairwise IoU matrix requested for an empty box list")]
    EmptyInput,
    #[error("detections must share one category, found `{first}` and `{other}`")]
    MixedCategories { first: String, other: String },
    #[error("confidence {value} of detection {index} is outside [0, 1]")]
    BadConfidence { index: usize, value: f64 },
    #[error("predicted IoU {value} of detection {index} is outside [0, 1]")]
    BadPredictedIou { index: usize, value: f64 },
    #[error("invalid NIV config: {0}")]
    BadConfig(String),
}

/// One predicted box with its classification confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_iou: Option<f64>,
    pub category: String,
}

impl Detection {
    pub fn new(bbox: Box3D, confidence: f64, category: impl Into<String>) -> Result<Self, NivError> {
        let det = Detection { bbox, confidence, predicted_iou: None, category: category.into() };
        det.validate(0)?;
        Ok(det)
    }

    pub fn with_predicted_iou(mut self, predicted_iou: f64) -> Result<Self, NivError> {
        self.predicted_iou = Some(predicted_iou);
        self.validate(0)?;
        Ok(self)
    }

    /// Checks the range invariants; `index` is only used for error reporting.
    pub fn validate(&self, index: usize) -> Result<(), NivError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(NivError::BadConfidence { index, value: self.confidence });
        }
        if let Some(p) = self.predicted_iou {
            if !(0.0..=1.0).contains(&p) {
                return Err(NivError::BadPredictedIou { index, value: p });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NivConfig {
    /// Anchor footprint in square meters.
    pub area_bev: f64,
    pub iou_thres: f64,
    pub score_thres: f64,
    pub iou_mode: IouMode,
    pub include_self: bool,
}

impl NivConfig {
    pub const DEFAULT_IOU_THRES: f64 = 0.2;
    pub const DEFAULT_SCORE_THRES: f64 = 0.1;
    /// Conventional car anchor footprint, 1.6 m x 3.9 m.
    pub const CAR_AREA_BEV: f64 = 1.6 * 3.9;

    pub fn with_area(area_bev: f64) -> Self {
        NivConfig { area_bev, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), NivError> {
        if !(self.area_bev.is_finite() && self.area_bev > 0.0) {
            return Err(NivError::BadConfig(format!("area_bev must be positive, got {}", self.area_bev)));
        }
        if !(self.iou_thres > 0.0 && self.iou_thres < 1.0) {
            return Err(NivError::BadConfig(format!("iou_thres must lie in (0, 1), got {}", self.iou_thres)));
        }
        // 1.0 is accepted so that "drop everything" can be requested explicitly.
        if !(self.score_thres >= 0.0 && self.score_thres <= 1.0) {
            return Err(NivError::BadConfig(format!("score_thres must lie in [0, 1], got {}", self.score_thres)));
        }
        Ok(())
    }
}

impl Default for NivConfig {
    fn default() -> Self {
        NivConfig {
            area_bev: Self::CAR_AREA_BEV,
            iou_thres: Self::DEFAULT_IOU_THRES,
            score_thres: Self::DEFAULT_SCORE_THRES,
            iou_mode: IouMode::ThreeD,
            include_self: true,
        }
    }
}

/// Per-detection voting statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NivStats {
    pub n_neighbor_raw: usize,
    pub n_neighbor_scaled: f64,
    pub iou_mean: f64,
    pub s_niv: f64,
    /// Rectified score, `s_niv * confidence`.
    pub s: f64,
}

/// Why a detection produced no statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NivDiagnostic {
    /// No box overlapped this one above the threshold (only possible when
    /// self-inclusion is disabled).
    NoNeighbors { index: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NivOutcome {
    /// Surviving detections, in input order, with `confidence` replaced by
    /// the rectified score.
    pub kept: Vec<Detection>,
    /// Input index of each kept detection.
    pub kept_index: Vec<usize>,
    /// Statistics for each kept detection, parallel to `kept`.
    pub stats: Vec<NivStats>,
    /// Statistics for every input detection.
    pub all_stats: Vec<Option<NivStats>>,
    pub diagnostics: Vec<NivDiagnostic>,
}

/// `M[i][j] = IoU(b_i, b_j)`; unit diagonal and exactly symmetric.
pub fn pairwise_iou_matrix(boxes: &[Box3D], mode: IouMode) -> Result<Vec<Vec<f64>>, NivError> {
    if boxes.is_empty() {
        return Err(NivError::EmptyInput);
    }
    let prepared: Vec<PreparedBox> = boxes.iter().copied().map(PreparedBox::new).collect();
    Ok(prepared_matrix(&prepared, mode))
}

fn prepared_matrix(prepared: &[PreparedBox], mode: IouMode) -> Vec<Vec<f64>> {
    let n = prepared.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
        for j in (i + 1)..n {
            let v = prepared_iou(&prepared[i], &prepared[j], mode);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// `c * predicted_iou^beta`; `beta = 0` leaves `c` unchanged.
pub fn fuse_confidence(c: f64, predicted_iou: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return c;
    }
    (c * predicted_iou.powf(beta)).clamp(0.0, 1.0)
}

/// Replaces each confidence by its fusion with the predicted IoU, where one
/// is present.
pub fn apply_fusion(dets: &[Detection], beta: f64) -> Vec<Detection> {
    dets.iter()
        .map(|d| {
            let mut out = d.clone();
            if let Some(p) = d.predicted_iou {
                out.confidence = fuse_confidence(d.confidence, p, beta);
            }
            out
        })
        .collect()
}

fn check_inputs(dets: &[Detection]) -> Result<(), NivError> {
    if let Some(first) = dets.first() {
        if let Some(other) = dets.iter().find(|d| d.category != first.category) {
            return Err(NivError::MixedCategories { first: first.category.clone(), other: other.category.clone() });
        }
    }
    dets.iter().enumerate().try_for_each(|(i, d)| d.validate(i))
}

/// Voting statistics for every detection; `None` where a detection has no
/// neighbors.
pub fn niv_scores(dets: &[Detection], cfg: &NivConfig) -> Result<Vec<Option<NivStats>>, NivError> {
    cfg.validate()?;
    check_inputs(dets)?;
    if dets.is_empty() {
        return Ok(Vec::new());
    }
    let prepared: Vec<PreparedBox> = dets.iter().map(|d| PreparedBox::new(d.bbox)).collect();
    let m = prepared_matrix(&prepared, cfg.iou_mode);
    Ok(dets
        .iter()
        .enumerate()
        .map(|(i, det)| {
            let mut neighbors: Vec<f64> = m[i]
                .iter()
                .enumerate()
                .filter(|&(j, &v)| (j != i || cfg.include_self) && v > cfg.iou_thres)
                .map(|(_, &v)| v)
                .collect();
            // Ascending summation makes the mean independent of input order.
            neighbors.sort_by(f64::total_cmp);
            vote(det, neighbors.iter().sum(), neighbors.len(), cfg)
        })
        .collect())
}

fn vote(det: &Detection, iou_all: f64, count: usize, cfg: &NivConfig) -> Option<NivStats> {
    if count == 0 {
        return None;
    }
    let iou_mean = iou_all / count as f64;
    let scaled = count as f64 * cfg.area_bev / (det.bbox.w() * det.bbox.l());
    let s_niv = scaled / (scaled + 1.0) * iou_mean;
    Some(NivStats { n_neighbor_raw: count, n_neighbor_scaled: scaled, iou_mean, s_niv, s: s_niv * det.confidence })
}

/// Rectifies the confidences of one category's detections and drops those
/// whose rectified score does not exceed `score_thres`.
pub fn niv_rectify(dets: &[Detection], cfg: &NivConfig) -> Result<NivOutcome, NivError> {
    let all_stats = niv_scores(dets, cfg)?;
    let mut out = NivOutcome::default();
    for (i, (det, st)) in dets.iter().zip(&all_stats).enumerate() {
        match st {
            None => out.diagnostics.push(NivDiagnostic::NoNeighbors { index: i }),
            Some(st) if st.s > cfg.score_thres => {
                let mut kept = det.clone();
                kept.confidence = st.s;
                out.kept.push(kept);
                out.kept_index.push(i);
                out.stats.push(*st);
            }
            Some(_) => {}
        }
    }
    out.all_stats = all_stats;
    Ok(out)
}
