use std::f64::consts::PI;
use std::fs;

use nivkit::augment::{Point, PointCloud};
use nivkit::datio::{
    detections_from_json, detections_to_json, encode_point_cloud, parse_kitti, parse_point_cloud, read_detections_json, read_kitti_labels,
    read_kitti_results, read_point_cloud, write_detections_json, write_kitti_results, write_point_cloud, write_scatter_csv, DataError,
    DetectionFrame, SCATTER_HEADER,
};
use nivkit::evalkit::FrameAnnotations;
use nivkit::niv::{Detection, NivStats};
use nivkit::Box3D;
use proptest::prelude::*;
use tempfile::TempDir;

fn arb_det() -> impl Strategy<Value = Detection> {
    (-50.0f64..50.0, -50.0f64..50.0, -3.0f64..3.0, 0.3f64..4.0, 0.3f64..8.0, 0.3f64..4.0, -PI..PI, 0.0f64..=1.0, prop::option::of(0.0f64..=1.0))
        .prop_map(|(x, y, z, w, l, h, r, c, p)| Detection {
            bbox: Box3D::new(x, y, z, w, l, h, r).unwrap(),
            confidence: c,
            predicted_iou: p,
            category: "Car".into(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip_is_exact(dets in prop::collection::vec(arb_det(), 0..12)) {
        let boxes: Vec<Box3D> = dets.iter().map(|d| d.bbox).collect();
        let stats: Vec<NivStats> = dets
            .iter()
            .map(|d| NivStats { n_neighbor_raw: 1, n_neighbor_scaled: 1.0 / 3.0, iou_mean: 1.0, s_niv: 0.25, s: d.confidence * 0.25 })
            .collect();
        let mut frame = DetectionFrame::new("000042", dets);
        frame.stats = Some(stats);
        frame.annotations = Some(FrameAnnotations::from_boxes(&boxes, "Car"));
        let frames = vec![frame, DetectionFrame::new("000043", Vec::new())];
        let text = detections_to_json(&frames).unwrap();
        prop_assert_eq!(detections_from_json(&text).unwrap(), frames);
    }

    #[test]
    fn kitti_round_trip_at_two_decimals(dets in prop::collection::vec(arb_det(), 1..12)) {
        let tmp = TempDir::new().unwrap();
        write_kitti_results(tmp.path(), &[DetectionFrame::new("7", dets.clone())]).unwrap();
        let back = read_kitti_results(&tmp.path().join("7.txt")).unwrap();
        prop_assert_eq!(back.len(), dets.len());
        for (a, b) in dets.iter().zip(&back) {
            for (u, v) in a.bbox.params()[..6].iter().zip(&b.bbox.params()[..6]) {
                // z mixes two rounded fields (y and h/2)
                prop_assert!((u - v).abs() <= 0.0075 + 1e-9, "{} vs {}", u, v);
            }
            let dr = (a.bbox.yaw() - b.bbox.yaw()).rem_euclid(2.0 * PI);
            prop_assert!(dr.min(2.0 * PI - dr) <= 0.005 + 1e-9);
            prop_assert!((a.confidence - b.confidence).abs() <= 5e-5 + 1e-12);
        }
    }

    #[test]
    fn point_cloud_bytes_round_trip(pts in prop::collection::vec((-80.0f32..80.0, -80.0f32..80.0, -5.0f32..5.0, 0.0f32..=1.0), 0..200)) {
        let cloud = PointCloud::new(pts.into_iter().map(|(x, y, z, i)| Point::new(x, y, z, i)).collect()).unwrap();
        let bytes = encode_point_cloud(&cloud);
        prop_assert_eq!(bytes.len(), 16 * cloud.len());
        prop_assert_eq!(parse_point_cloud(&bytes).unwrap(), cloud);
    }
}

#[test]
fn files_round_trip_on_disk() {
    let tmp = TempDir::new().unwrap();
    let cloud = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.5), Point::new(-1.5, 0.25, -2.0, 1.0)]).unwrap();
    let path = tmp.path().join("nested/dir/000001.bin");
    write_point_cloud(&path, &cloud).unwrap();
    assert_eq!(read_point_cloud(&path).unwrap(), cloud);

    let det = Detection::new(Box3D::new(10.0, 1.0, -0.5, 1.6, 3.9, 1.5, 0.3).unwrap(), 0.8, "Car").unwrap();
    let json = tmp.path().join("dets.json");
    write_detections_json(&json, &[DetectionFrame::new("a", vec![det])]).unwrap();
    assert_eq!(read_detections_json(&json).unwrap()[0].detections[0].bbox, Box3D::new(10.0, 1.0, -0.5, 1.6, 3.9, 1.5, 0.3).unwrap());

    let csv = tmp.path().join("scatter.csv");
    write_scatter_csv(&csv, &[]).unwrap();
    assert_eq!(fs::read_to_string(&csv).unwrap().trim_end(), SCATTER_HEADER);
}

#[test]
fn malformed_inputs_report_their_position() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("000003.txt");
    fs::write(&path, "Car 0 0 0 0 0 0 0 1.5 1.6 3.9 0 1 10 0\nCar 0 0 0 0 0 0 0 1.5 1.6 3.9 0 1\n").unwrap();
    let err = read_kitti_labels(&path).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 2") && msg.contains("found 13") && msg.contains("000003.txt"), "{msg}");

    let err = parse_kitti("Car 0 0 0 0 0 0 0 1.5 abc 3.9 0 1 10 0").unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");

    let err = parse_point_cloud(&[0u8; 20]).unwrap_err();
    assert!(matches!(err, DataError::Truncated { len: 20, offset: 16 }), "{err}");

    let err = detections_from_json(r#"{"schema": "nivkit.detections/v0", "frames": []}"#).unwrap_err();
    assert!(matches!(err, DataError::SchemaVersion(_)));

    let dup = r#"{"schema": "nivkit.detections/v1", "frames": [{"frame_id": "1", "detections": []}, {"frame_id": "1", "detections": []}]}"#;
    assert!(detections_from_json(dup).is_err());
}
