//! Layered run configuration: built-in defaults, then an optional JSON file,
//! then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use nivkit::augment::{GlobalAugConfig, ResampleConfig};
use nivkit::simulate::SimConfig;
use nivkit::{IouMode, NivConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 7;
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Anchor footprints (w x l) of the usual KITTI classes.
pub const BUILTIN_AREAS: [(&str, f64); 3] = [("Car", 1.6 * 3.9), ("Pedestrian", 0.6 * 0.8), ("Cyclist", 0.6 * 1.76)];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub niv: NivSection,
    pub nms: NmsSection,
    pub eval: EvalSection,
    pub resample: ResampleConfig,
    /// Global augmentation runs only when this section is present.
    pub global: Option<GlobalAugConfig>,
    pub simulate: SimConfig,
    pub experiment: ExperimentSection,
    pub bench: BenchSection,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NivSection {
    /// Per-category anchor footprints; merged over the built-in table.
    pub area_bev: BTreeMap<String, f64>,
    /// Used for categories absent from both tables.
    pub default_area_bev: Option<f64>,
    pub iou_thres: f64,
    pub score_thres: f64,
    pub iou_mode: IouMode,
    pub include_self: bool,
    /// Exponent of the predicted IoU in confidence fusion; 0 disables it.
    pub fusion_beta: f64,
}

impl Default for NivSection {
    fn default() -> Self {
        let d = NivConfig::default();
        NivSection {
            area_bev: BTreeMap::new(),
            default_area_bev: None,
            iou_thres: d.iou_thres,
            score_thres: d.score_thres,
            iou_mode: d.iou_mode,
            include_self: d.include_self,
            fusion_beta: 0.0,
        }
    }
}

impl NivSection {
    /// Folds the built-in table under the user entries so the resolved config
    /// lists every area in effect.
    pub fn merge_builtin_areas(&mut self) {
        for (cat, area) in BUILTIN_AREAS {
            self.area_bev.entry(cat.to_string()).or_insert(area);
        }
    }

    pub fn config_for(&self, category: &str) -> Result<NivConfig> {
        let area_bev = self
            .area_bev
            .get(category)
            .copied()
            .or_else(|| BUILTIN_AREAS.iter().find(|(c, _)| *c == category).map(|(_, a)| *a))
            .or(self.default_area_bev)
            .ok_or_else(|| anyhow!("no anchor area for category `{category}`; pass --area-bev {category}=<m2>"))?;
        let cfg = NivConfig {
            area_bev,
            iou_thres: self.iou_thres,
            score_thres: self.score_thres,
            iou_mode: self.iou_mode,
            include_self: self.include_self,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `--area-bev` value: `CATEGORY=AREA`, or a bare `AREA`
    /// that sets the fallback.
    pub fn set_area(&mut self, spec: &str) -> Result<()> {
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().with_context(|| format!("bad area `{s}`"))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(anyhow!("area must be positive, got {v}"));
            }
            Ok(v)
        };
        match spec.split_once('=') {
            Some((cat, v)) => {
                self.area_bev.insert(cat.trim().to_string(), parse(v)?);
            }
            None => self.default_area_bev = Some(parse(spec)?),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsSection {
    pub iou_thres: Option<f64>,
    pub max_keep: Option<usize>,
    pub iou_mode: IouMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub iou_thres: f64,
    pub iou_mode: IouMode,
    /// Categories to report; empty means every category with ground truth.
    pub categories: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { iou_thres: 0.7, iou_mode: IouMode::ThreeD, categories: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub nms_iou_thres: f64,
    pub fusion_beta: f64,
    pub eval_iou_thres: f64,
    pub eval_mode: IouMode,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = nivkit::simulate::ExperimentConfig::default();
        ExperimentSection {
            nms_iou_thres: d.nms.iou_thres,
            fusion_beta: d.fusion_beta,
            eval_iou_thres: d.eval_iou_thres,
            eval_mode: d.eval_mode,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    pub runs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { sizes: vec![64, 128, 256, 512], runs: 30 }
    }
}

/// Writes the effective configuration next to the outputs. The thread count
/// is deliberately absent: it never changes results.
pub fn write_resolved(out_dir: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    nivkit::datio::write_text(&out_dir.join(RESOLVED_CONFIG), &text)?;
    Ok(())
}

pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_lookup_order() {
        let mut s = NivSection::default();
        assert!((s.config_for("Car").unwrap().area_bev - 6.24).abs() < 1e-12);
        assert!((s.config_for("Cyclist").unwrap().area_bev - 1.056).abs() < 1e-12);
        assert!(s.config_for("Van").is_err());
        s.set_area("5.5").unwrap();
        assert_eq!(s.config_for("Van").unwrap().area_bev, 5.5);
        s.set_area("Car=7").unwrap();
        assert_eq!(s.config_for("Car").unwrap().area_bev, 7.0);
        assert!(s.set_area("Car=-1").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: FileConfig = serde_json::from_str(r#"{"niv": {"score_thres": 0.3}, "simulate": {"n_frames": 3}}"#).unwrap();
        assert_eq!(cfg.niv.score_thres, 0.3);
        assert_eq!(cfg.niv.iou_thres, 0.2);
        assert_eq!(cfg.simulate.n_frames, 3);
        assert_eq!(cfg.simulate.preds_per_gt, SimConfig::default().preds_per_gt);
        assert!(cfg.global.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"nvi": {}}"#).is_err());
    }
}
