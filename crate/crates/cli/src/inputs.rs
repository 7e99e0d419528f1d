//! Locating and loading the on-disk inputs of the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nivkit::datio::{read_detections_json, read_kitti_labels, read_kitti_results, DetectionFrame};
use nivkit::evalkit::FrameAnnotations;

/// Files in `dir` with extension `ext`, keyed by stem, in name order.
pub fn files_by_stem(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in entries {
        let path = entry.with_context(|| format!("listing {}", dir.display()))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Detections from an interchange JSON file or a directory of KITTI result
/// files. A file holding only whitespace is an empty ensemble.
pub fn load_detections(path: &Path) -> Result<Vec<DetectionFrame>> {
    if path.is_dir() {
        return files_by_stem(path, "txt")?
            .into_iter()
            .map(|(id, p)| Ok(DetectionFrame::new(id, read_kitti_results(&p)?)))
            .collect();
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(read_detections_json(path)?)
}

pub fn load_labels(dir: &Path) -> Result<BTreeMap<String, FrameAnnotations>> {
    if !dir.is_dir() {
        bail!("label directory {} does not exist", dir.display());
    }
    files_by_stem(dir, "txt")?
        .into_iter()
        .map(|(id, p)| Ok((id, read_kitti_labels(&p)?)))
        .collect()
}

/// Fails with the full list of ids present on only one side.
pub fn check_paired<A, B>(left: (&str, &BTreeMap<String, A>), right: (&str, &BTreeMap<String, B>)) -> Result<()> {
    let only_left: Vec<&str> = left.1.keys().filter(|k| !right.1.contains_key(*k)).map(String::as_str).collect();
    let only_right: Vec<&str> = right.1.keys().filter(|k| !left.1.contains_key(*k)).map(String::as_str).collect();
    if only_left.is_empty() && only_right.is_empty() {
        return Ok(());
    }
    let mut msg = String::from("frame ids do not match");
    if !only_left.is_empty() {
        msg += &format!("\n  only in {}: {}", left.0, only_left.join(", "));
    }
    if !only_right.is_empty() {
        msg += &format!("\n  only in {}: {}", right.0, only_right.join(", "));
    }
    bail!(msg)
}
