//! Greedy rotated non-maximum suppression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{prepared_iou, IouMode, PreparedBox};
use crate::niv::Detection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NmsError {
    #[error("NMS iou_thres must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("NMS max_keep must be at least 1")]
    ZeroKeep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub iou_thres: f64,
    #[serde(default)]
    pub max_keep: Option<usize>,
    #[serde(default)]
    pub iou_mode: IouMode,
}

impl NmsConfig {
    pub fn new(iou_thres: f64) -> Self {
        NmsConfig { iou_thres, max_keep: None, iou_mode: IouMode::ThreeD }
    }

    pub fn validate(&self) -> Result<(), NmsError> {
        if !(self.iou_thres > 0.0 && self.iou_thres < 1.0) {
            return Err(NmsError::BadThreshold(self.iou_thres));
        }
        if self.max_keep == Some(0) {
            return Err(NmsError::ZeroKeep);
        }
        Ok(())
    }
}

/// Indices into `dets` of the survivors, highest score first. Equal scores
/// are visited in input order.
pub fn nms_indices(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<usize>, NmsError> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable sort keeps lower indices first among ties
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let prepared: Vec<PreparedBox> = dets.iter().map(|d| PreparedBox::new(d.bbox)).collect();
    let cap = cfg.max_keep.unwrap_or(usize::MAX);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        if keep.len() >= cap {
            break;
        }
        for &j in &order[pos + 1..] {
            if !suppressed[j] && prepared_iou(&prepared[i], &prepared[j], cfg.iou_mode) > cfg.iou_thres {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

pub fn nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>, NmsError> {
    Ok(nms_indices(dets, cfg)?.into_iter().map(|i| dets[i].clone()).collect())
}
