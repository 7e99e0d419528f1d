//! Reading and writing point clouds, KITTI label/result text files, the
//! JSON detection interchange format and CSV exports.
//!
//! KITTI boxes live in the camera frame (x right, y down, z forward, with
//! `y` at the bottom face). They are mapped to the LiDAR-style frame used
//! everywhere else through the nominal axis permutation
//!
//! ```text
//! x = z_cam,  y = -x_cam,  z = -y_cam + h/2,  r = -ry - pi/2
//! ```
//!
//! without per-frame calibration.

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{Point, PointCloud};
use crate::evalkit::{FrameAnnotations, GroundTruth};
use crate::geometry::{normalize_yaw, Box3D};
use crate::niv::{Detection, NivStats};

/// Schema tag of the JSON interchange format.
pub const DETECTIONS_SCHEMA: &str = "nivkit.detections/v1";

const POINT_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("point cloud length {len} is not a multiple of 16 bytes; trailing record starts at byte {offset}")]
    Truncated { len: usize, offset: usize },
    #[error("point {index} has a non-finite value")]
    NonFinite { index: usize },
    #[error("point {index} has intensity {value} outside [0, 1]")]
    BadIntensity { index: usize, value: f32 },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: usize, expected: &'static str, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported interchange schema `{0}` (expected `{DETECTIONS_SCHEMA}`)")]
    SchemaVersion(String),
    #[error("invalid interchange content: {0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl DataError {
    /// Attaches the file path to errors that do not carry one.
    pub fn at(self, path: &Path) -> DataError {
        match self {
            e @ DataError::Io { .. } => e,
            other => DataError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// point clouds

pub fn parse_point_cloud(bytes: &[u8]) -> Result<PointCloud, DataError> {
    if !bytes.len().is_multiple_of(POINT_BYTES) {
        return Err(DataError::Truncated { len: bytes.len(), offset: bytes.len() - bytes.len() % POINT_BYTES });
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_BYTES);
    for (index, rec) in bytes.chunks_exact(POINT_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4-byte slice"));
        let p = Point::new(f(0), f(1), f(2), f(3));
        if ![p.x, p.y, p.z, p.intensity].iter().all(|v| v.is_finite()) {
            return Err(DataError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&p.intensity) {
            return Err(DataError::BadIntensity { index, value: p.intensity });
        }
        points.push(p);
    }
    Ok(PointCloud::new(points).expect("points validated above"))
}

pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a KITTI velodyne `.bin` file (little-endian `f32` quadruples).
pub fn read_point_cloud(path: &Path) -> Result<PointCloud, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_point_cloud(&bytes).map_err(|e| e.at(path))
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<(), DataError> {
    write_file(path, &encode_point_cloud(cloud))
}

// ---------------------------------------------------------------------------
// KITTI text

/// Camera-frame 3D fields of a KITTI row, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraBox {
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub ry: f64,
}

impl CameraBox {
    pub fn to_box3d(&self) -> Result<Box3D, crate::geometry::GeometryError> {
        Box3D::new(self.z, -self.x, -self.y + 0.5 * self.h, self.w, self.l, self.h, -self.ry - FRAC_PI_2)
    }

    pub fn from_box3d(b: &Box3D) -> Self {
        CameraBox {
            h: b.h(),
            w: b.w(),
            l: b.l(),
            x: -b.y(),
            y: 0.5 * b.h() - b.z(),
            z: b.x(),
            ry: normalize_yaw(-b.yaw() - FRAC_PI_2),
        }
    }
}

/// 3D content of a KITTI row: a real box, or the placeholder values KITTI
/// uses for don't-care regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KittiGeometry {
    Box(Box3D),
    Placeholder(CameraBox),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiObject {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    pub geometry: KittiGeometry,
    pub score: Option<f64>,
}

pub const DONT_CARE: &str = "DontCare";

impl KittiObject {
    /// A result row for a detection without image-plane information.
    pub fn from_detection(det: &Detection) -> Self {
        KittiObject {
            kind: det.category.clone(),
            truncated: -1.0,
            occluded: -1,
            alpha: -10.0,
            bbox2d: [0.0; 4],
            geometry: KittiGeometry::Box(det.bbox),
            score: Some(det.confidence),
        }
    }

    pub fn is_dont_care(&self) -> bool {
        self.kind == DONT_CARE
    }

    pub fn box3d(&self) -> Option<Box3D> {
        match self.geometry {
            KittiGeometry::Box(b) => Some(b),
            KittiGeometry::Placeholder(_) => None,
        }
    }
}

fn parse_f64(tok: &str, line: usize, field: &str) -> Result<f64, DataError> {
    let v: f64 = tok.parse().map_err(|_| DataError::Parse { line, message: format!("field `{field}`: cannot parse `{tok}` as a number") })?;
    if !v.is_finite() {
        return Err(DataError::Parse { line, message: format!("field `{field}` is not finite") });
    }
    Ok(v)
}

/// Parses one label (15 fields) or result (16 fields) row. `line` is
/// 1-based and only used in errors.
pub fn parse_kitti_line(text: &str, line: usize) -> Result<KittiObject, DataError> {
    let tok: Vec<&str> = text.split_whitespace().collect();
    if tok.len() != 15 && tok.len() != 16 {
        return Err(DataError::FieldCount { line, expected: "15 or 16", found: tok.len() });
    }
    let num = |i: usize, name: &str| parse_f64(tok[i], line, name);
    let occluded: i32 = tok[2].parse().map_err(|_| DataError::Parse { line, message: format!("field `occluded`: cannot parse `{}` as an integer", tok[2]) })?;
    let cam = CameraBox {
        h: num(8, "h")?,
        w: num(9, "w")?,
        l: num(10, "l")?,
        x: num(11, "x")?,
        y: num(12, "y")?,
        z: num(13, "z")?,
        ry: num(14, "rotation_y")?,
    };
    let kind = tok[0].to_string();
    let geometry = match cam.to_box3d() {
        Ok(b) => KittiGeometry::Box(b),
        Err(_) if kind == DONT_CARE => KittiGeometry::Placeholder(cam),
        Err(e) => return Err(DataError::Parse { line, message: e.to_string() }),
    };
    let score = if tok.len() == 16 { Some(num(15, "score")?) } else { None };
    Ok(KittiObject {
        kind,
        truncated: num(1, "truncated")?,
        occluded,
        alpha: num(3, "alpha")?,
        bbox2d: [num(4, "left")?, num(5, "top")?, num(6, "right")?, num(7, "bottom")?],
        geometry,
        score,
    })
}

pub fn parse_kitti(text: &str) -> Result<Vec<KittiObject>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_kitti_line(l, i + 1))
        .collect()
}

pub fn read_kitti_objects(path: &Path) -> Result<Vec<KittiObject>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_kitti(&text).map_err(|e| e.at(path))
}

pub fn objects_to_annotations(objects: &[KittiObject]) -> FrameAnnotations {
    FrameAnnotations::new(
        objects
            .iter()
            .map(|o| GroundTruth { bbox: o.box3d(), category: o.kind.clone(), ignore: o.is_dont_care() })
            .collect(),
    )
}

pub fn read_kitti_labels(path: &Path) -> Result<FrameAnnotations, DataError> {
    Ok(objects_to_annotations(&read_kitti_objects(path)?))
}

/// Reads a KITTI result file; every row must carry a score in `[0, 1]`.
pub fn read_kitti_results(path: &Path) -> Result<Vec<Detection>, DataError> {
    let objects = read_kitti_objects(path)?;
    objects
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.is_dont_care())
        .map(|(i, o)| {
            let line = i + 1;
            let score = o.score.ok_or(DataError::FieldCount { line, expected: "16", found: 15 })?;
            let bbox = o.box3d().ok_or_else(|| DataError::Parse { line, message: "result row without a 3D box".into() })?;
            Detection::new(bbox, score, o.kind.clone()).map_err(|e| DataError::Parse { line, message: e.to_string() })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.at(path))
}

/// Fixed-point with two decimals, never printing a negative zero.
fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

pub fn format_kitti_line(o: &KittiObject) -> String {
    let cam = match o.geometry {
        KittiGeometry::Box(b) => CameraBox::from_box3d(&b),
        KittiGeometry::Placeholder(c) => c,
    };
    let mut fields = vec![o.kind.clone(), fmt2(o.truncated), o.occluded.to_string(), fmt2(o.alpha)];
    fields.extend(o.bbox2d.iter().map(|&v| fmt2(v)));
    fields.extend([cam.h, cam.w, cam.l, cam.x, cam.y, cam.z, cam.ry].iter().map(|&v| fmt2(v)));
    if let Some(s) = o.score {
        fields.push(format!("{s:.4}"));
    }
    fields.join(" ")
}

pub fn format_kitti(objects: &[KittiObject]) -> String {
    objects.iter().map(|o| format_kitti_line(o) + "\n").collect()
}

pub fn write_kitti_objects(path: &Path, objects: &[KittiObject]) -> Result<(), DataError> {
    write_file(path, format_kitti(objects).as_bytes())
}

/// Writes `<dir>/<frame_id>.txt` result files, one row per detection.
pub fn write_kitti_results(dir: &Path, frames: &[DetectionFrame]) -> Result<Vec<PathBuf>, DataError> {
    check_frame_ids(frames)?;
    frames
        .iter()
        .map(|f| {
            let path = dir.join(format!("{}.txt", f.frame_id));
            let objects: Vec<KittiObject> = f.detections.iter().map(KittiObject::from_detection).collect();
            write_kitti_objects(&path, &objects).map(|_| path)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// JSON interchange

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame_id: String,
    pub detections: Vec<Detection>,
    /// Voting statistics parallel to `detections`, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<Vec<NivStats>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<FrameAnnotations>,
}

impl DetectionFrame {
    pub fn new(frame_id: impl Into<String>, detections: Vec<Detection>) -> Self {
        DetectionFrame { frame_id: frame_id.into(), detections, stats: None, annotations: None }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.frame_id.is_empty() {
            return Err(DataError::Invalid("empty frame id".into()));
        }
        if let Some(st) = &self.stats {
            if st.len() != self.detections.len() {
                return Err(DataError::Invalid(format!(
                    "frame `{}`: {} stats for {} detections",
                    self.frame_id,
                    st.len(),
                    self.detections.len()
                )));
            }
        }
        for (i, d) in self.detections.iter().enumerate() {
            d.validate(i).map_err(|e| DataError::Invalid(format!("frame `{}`: {e}", self.frame_id)))?;
        }
        Ok(())
    }
}

fn check_frame_ids(frames: &[DetectionFrame]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for f in frames {
        f.validate()?;
        if !seen.insert(f.frame_id.as_str()) {
            return Err(DataError::Invalid(format!("duplicate frame id `{}`", f.frame_id)));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema: &'a str,
    frames: &'a [DetectionFrame],
}

#[derive(Deserialize)]
struct DocumentIn {
    schema: String,
    #[serde(default)]
    frames: serde_json::Value,
}

pub fn detections_to_json(frames: &[DetectionFrame]) -> Result<String, DataError> {
    check_frame_ids(frames)?;
    let mut s = serde_json::to_string_pretty(&DocumentOut { schema: DETECTIONS_SCHEMA, frames })?;
    s.push('\n');
    Ok(s)
}

pub fn detections_from_json(text: &str) -> Result<Vec<DetectionFrame>, DataError> {
    let doc: DocumentIn = serde_json::from_str(text)?;
    if doc.schema != DETECTIONS_SCHEMA {
        return Err(DataError::SchemaVersion(doc.schema));
    }
    let frames: Vec<DetectionFrame> = serde_json::from_value(doc.frames)?;
    check_frame_ids(&frames)?;
    Ok(frames)
}

pub fn write_detections_json(path: &Path, frames: &[DetectionFrame]) -> Result<(), DataError> {
    write_file(path, detections_to_json(frames)?.as_bytes())
}

pub fn read_detections_json(path: &Path) -> Result<Vec<DetectionFrame>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    detections_from_json(&text).map_err(|e| e.at(path))
}

// ---------------------------------------------------------------------------
// CSV

pub fn csv_to_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.into()))?;
    w.into_inner().map_err(|e| DataError::Invalid(e.to_string()))
}

/// Writes rows with a header derived from the field names. An empty slice
/// produces an empty file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    write_file(path, &csv_to_bytes(rows)?)
}

/// Header of the score / IoU scatter export.
pub const SCATTER_HEADER: &str = "frame_id,det_index,real_iou,confidence,s_niv,rectified_score";

/// Writes the scatter export; the header is present even with no rows.
pub fn write_scatter_csv(path: &Path, rows: &[crate::evalkit::ScatterRow]) -> Result<(), DataError> {
    let bytes = if rows.is_empty() { format!("{SCATTER_HEADER}\n").into_bytes() } else { csv_to_bytes(rows)? };
    write_file(path, &bytes)
}

/// Writes a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    write_file(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    write_file(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::ScatterRow;

    const LABEL: &str = "\
Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Pedestrian 0.00 0 0.21 423.17 173.67 433.17 224.03 1.60 0.38 0.30 -5.81 1.70 24.52 -0.02
DontCare -1 -1 -10.00 503.89 169.71 590.61 190.13 -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00
";

    #[test]
    fn cloud_roundtrip_and_errors() {
        let cloud = PointCloud::new(vec![Point::new(1.0, -2.0, 0.5, 0.25), Point::new(3.0, 4.0, -1.0, 1.0)]).unwrap();
        let bytes = encode_point_cloud(&cloud);
        assert_eq!(bytes.len(), 32);
        assert_eq!(parse_point_cloud(&bytes).unwrap(), cloud);
        assert!(matches!(parse_point_cloud(&bytes[..17]), Err(DataError::Truncated { len: 17, offset: 16 })));
        let mut bad = bytes.clone();
        bad[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(parse_point_cloud(&bad), Err(DataError::NonFinite { index: 1 })));
    }

    #[test]
    fn camera_mapping_inverts() {
        let cam = CameraBox { h: 1.5, w: 1.6, l: 3.9, x: 2.0, y: 1.7, z: 20.0, ry: 0.3 };
        let b = cam.to_box3d().unwrap();
        assert_eq!((b.x(), b.y()), (20.0, -2.0));
        assert!((b.z() - (-1.7 + 0.75)).abs() < 1e-12);
        assert!((b.yaw() - (-0.3 - FRAC_PI_2)).abs() < 1e-12);
        let back = CameraBox::from_box3d(&b);
        for (a, e) in [(back.x, cam.x), (back.y, cam.y), (back.z, cam.z), (back.ry, cam.ry)] {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn labels_parse_with_dont_care() {
        let objs = parse_kitti(LABEL).unwrap();
        assert_eq!(objs.len(), 3);
        let ann = objects_to_annotations(&objs);
        assert!(ann.objects[2].ignore && ann.objects[2].bbox.is_none());
        assert_eq!(ann.objects[0].category, "Car");
        assert_eq!(ann.n_relevant(), 2);
    }

    #[test]
    fn labels_roundtrip_text() {
        let objs = parse_kitti(LABEL).unwrap();
        let expected = LABEL.replace("DontCare -1 -1", "DontCare -1.00 -1");
        assert_eq!(format_kitti(&objs), expected);
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\nCar 0 0 0 0 0 0 0 1 1 1 0 0 0\n";
        match parse_kitti(text) {
            Err(DataError::FieldCount { line: 2, found: 14, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_kitti("Car 0 0 0 0 0 0 0 x 1 1 0 0 0 0"), Err(DataError::Parse { line: 1, .. })));
        // a real object with placeholder dimensions is malformed
        assert!(parse_kitti("Car -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10").is_err());
    }

    #[test]
    fn result_rows_carry_four_decimal_scores() {
        let det = Detection::new(Box3D::new(10.0, 1.0, -0.8, 1.6, 3.9, 1.5, 0.1).unwrap(), 0.612345, "Car").unwrap();
        let line = format_kitti_line(&KittiObject::from_detection(&det));
        assert!(line.starts_with("Car -1.00 -1 -10.00 0.00 0.00 0.00 0.00 1.50 1.60 3.90 "));
        assert!(line.ends_with(" 0.6123"));
        let back = parse_kitti_line(&line, 1).unwrap();
        assert_eq!(back.score, Some(0.6123));
    }

    #[test]
    fn json_roundtrip_with_stats() {
        let b = Box3D::new(1.0 / 3.0, 2.0, 0.1, 1.6, 3.9, 1.5, 0.7).unwrap();
        let dets = vec![
            Detection::new(b, 0.9, "Car").unwrap().with_predicted_iou(0.77).unwrap(),
            Detection::new(b, 0.1 + 0.2, "Car").unwrap(),
            Detection::new(b, 0.5, "Car").unwrap(),
        ];
        let st = NivStats { n_neighbor_raw: 3, n_neighbor_scaled: 3.0, iou_mean: 0.9, s_niv: 0.675, s: 0.6075 };
        let mut frame = DetectionFrame::new("000001", dets);
        frame.stats = Some(vec![st; 3]);
        frame.annotations = Some(FrameAnnotations::from_boxes(&[b], "Car"));
        let frames = vec![frame, DetectionFrame::new("000002", vec![])];
        let text = detections_to_json(&frames).unwrap();
        assert_eq!(detections_from_json(&text).unwrap(), frames);
    }

    #[test]
    fn json_rejects_unknown_schema_and_duplicates() {
        let text = r#"{"schema":"nivkit.detections/v999","frames":[]}"#;
        assert!(matches!(detections_from_json(text), Err(DataError::SchemaVersion(s)) if s.ends_with("v999")));
        let dup = vec![DetectionFrame::new("a", vec![]), DetectionFrame::new("a", vec![])];
        assert!(detections_to_json(&dup).is_err());
    }

    #[test]
    fn scatter_header_even_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_scatter_csv(&p, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{SCATTER_HEADER}\n"));
        let rows = vec![ScatterRow { frame_id: "f".into(), det_index: 0, real_iou: 0.5, confidence: 0.7, s_niv: None, rectified_score: Some(0.2) }];
        write_scatter_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), SCATTER_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "f,0,0.5,0.7,,0.2");
    }

    #[test]
    fn file_errors_carry_path() {
        let err = read_point_cloud(Path::new("/definitely/missing.bin")).unwrap_err();
        assert!(err.to_string().contains("/definitely/missing.bin"));
    }
}
