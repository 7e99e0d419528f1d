//! Per-frame rectification shared by `rectify` and `eval`.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use nivkit::datio::DetectionFrame;
use nivkit::niv::{apply_fusion, niv_rectify, NivStats};
use nivkit::suppression::{nms_indices, NmsConfig};
use nivkit::Detection;
use serde::Serialize;

use crate::config::NivSection;

/// One row of `niv_stats.csv`, for every input detection.
#[derive(Debug, Clone, Serialize)]
pub struct StatsRow {
    pub frame_id: String,
    pub det_index: usize,
    pub category: String,
    /// Input confidence, after fusion when enabled.
    pub confidence: f64,
    pub n_neighbor_raw: Option<usize>,
    pub n_neighbor_scaled: Option<f64>,
    pub iou_mean: Option<f64>,
    pub s_niv: Option<f64>,
    pub rectified_score: Option<f64>,
    pub kept: bool,
}

pub struct RectifiedFrame {
    pub frame: DetectionFrame,
    pub rows: Vec<StatsRow>,
    /// Statistics of every input detection, in input order.
    pub all_stats: Vec<Option<NivStats>>,
}

/// Detection indices grouped by category, categories in name order.
pub fn by_category(dets: &[Detection]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups.entry(d.category.as_str()).or_default().push(i);
    }
    groups
}

/// Fusion (optional), rectification and NMS (optional), each per category.
/// Output detections are grouped by category; within a category they keep
/// input order, or descending score after NMS.
pub fn rectify_frame(frame: &DetectionFrame, niv: &NivSection, nms: Option<&NmsConfig>) -> Result<RectifiedFrame> {
    let dets = &frame.detections;
    let mut all_stats = vec![None; dets.len()];
    let mut confidences: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    let mut kept_flags = vec![false; dets.len()];
    let mut kept: Vec<Detection> = Vec::new();
    let mut kept_stats: Vec<NivStats> = Vec::new();

    for (category, idx) in by_category(dets) {
        let group: Vec<Detection> = idx.iter().map(|&i| dets[i].clone()).collect();
        let group = if niv.fusion_beta != 0.0 { apply_fusion(&group, niv.fusion_beta) } else { group };
        for (k, d) in group.iter().enumerate() {
            confidences[idx[k]] = d.confidence;
        }
        let cfg = niv.config_for(category)?;
        let out = niv_rectify(&group, &cfg).with_context(|| format!("frame `{}`, category `{category}`", frame.frame_id))?;
        for (k, st) in out.all_stats.iter().enumerate() {
            all_stats[idx[k]] = *st;
        }
        let order: Vec<usize> = match nms {
            Some(n) => nms_indices(&out.kept, n)?,
            None => (0..out.kept.len()).collect(),
        };
        for j in order {
            kept_flags[idx[out.kept_index[j]]] = true;
            kept.push(out.kept[j].clone());
            kept_stats.push(out.stats[j]);
        }
    }

    let rows = dets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let st = all_stats[i];
            StatsRow {
                frame_id: frame.frame_id.clone(),
                det_index: i,
                category: d.category.clone(),
                confidence: confidences[i],
                n_neighbor_raw: st.map(|s| s.n_neighbor_raw),
                n_neighbor_scaled: st.map(|s| s.n_neighbor_scaled),
                iou_mean: st.map(|s| s.iou_mean),
                s_niv: st.map(|s| s.s_niv),
                rectified_score: st.map(|s| s.s),
                kept: kept_flags[i],
            }
        })
        .collect();
    let out = DetectionFrame {
        frame_id: frame.frame_id.clone(),
        detections: kept,
        stats: Some(kept_stats),
        annotations: frame.annotations.clone(),
    };
    Ok(RectifiedFrame { frame: out, rows, all_stats })
}
