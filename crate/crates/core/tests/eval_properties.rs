use nivkit::evalkit::{evaluate, match_detections, pearson, FrameAnnotations, GroundTruth, MatchOutcome};
use nivkit::niv::Detection;
use nivkit::{Box3D, IouMode};
use proptest::prelude::*;

fn gt_boxes(n: usize) -> Vec<Box3D> {
    (0..n).map(|i| Box3D::new(10.0 * i as f64, 0.0, 0.0, 1.6, 3.9, 1.5, 0.0).unwrap()).collect()
}

/// Detections near the ground truth: `(object, x offset, confidence step)`.
fn arb_frame() -> impl Strategy<Value = (usize, Vec<(usize, f64, u32)>)> {
    (1usize..6).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, -1.5f64..1.5, 1u32..1000), 0..20)))
}

fn build(n: usize, raw: &[(usize, f64, u32)], f: impl Fn(f64) -> f64) -> (FrameAnnotations, Vec<Detection>) {
    let gts = gt_boxes(n);
    let dets = raw
        .iter()
        .map(|&(g, dx, c)| {
            let b = gts[g];
            Detection::new(Box3D::new(b.x() + dx, 0.0, 0.0, 1.6, 3.9, 1.5, 0.0).unwrap(), f(c as f64 / 1000.0), "Car").unwrap()
        })
        .collect();
    (FrameAnnotations::from_boxes(&gts, "Car"), dets)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ap_depends_only_on_score_order((n, raw) in arb_frame()) {
        let a = vec![build(n, &raw, |c| c)];
        let b = vec![build(n, &raw, |c| c * c)];
        let c = vec![build(n, &raw, |c| 0.5 * c + 0.25)];
        let ra = evaluate("Car", &a, 0.5, IouMode::ThreeD).unwrap();
        let rb = evaluate("Car", &b, 0.5, IouMode::ThreeD).unwrap();
        let rc = evaluate("Car", &c, 0.5, IouMode::ThreeD).unwrap();
        prop_assert_eq!(ra.ap_r40, rb.ap_r40);
        prop_assert_eq!(ra.ap_r11, rb.ap_r11);
        prop_assert_eq!(ra.ap_r40, rc.ap_r40);
        prop_assert!((0.0..=100.0).contains(&ra.ap_r11) && (0.0..=100.0).contains(&ra.ap_r40));
    }

    #[test]
    fn a_ground_truth_is_matched_once((n, raw) in arb_frame(), thres in 0.1f64..0.9) {
        let (ann, dets) = build(n, &raw, |c| c);
        let table = match_detections(&ann, &dets, thres, IouMode::Bev);
        let mut used = vec![false; n];
        for e in &table.entries {
            if let MatchOutcome::Tp { gt, iou } = e.outcome {
                prop_assert!(!used[gt]);
                prop_assert!(iou >= thres);
                used[gt] = true;
            }
        }
        prop_assert_eq!(table.entries.len(), dets.len());
    }

    #[test]
    fn pearson_matches_exact_integer_reference(xy in prop::collection::vec((-1000i64..1000, -1000i64..1000), 3..60)) {
        let xs: Vec<f64> = xy.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = xy.iter().map(|p| p.1 as f64).collect();
        let n = xy.len() as i128;
        let (sx, sy) = (xy.iter().map(|p| p.0 as i128).sum::<i128>(), xy.iter().map(|p| p.1 as i128).sum::<i128>());
        let sxy: i128 = xy.iter().map(|p| p.0 as i128 * p.1 as i128).sum();
        let sxx: i128 = xy.iter().map(|p| p.0 as i128 * p.0 as i128).sum();
        let syy: i128 = xy.iter().map(|p| p.1 as i128 * p.1 as i128).sum();
        let (cov, vx, vy) = (n * sxy - sx * sy, n * sxx - sx * sx, n * syy - sy * sy);
        prop_assume!(vx > 0 && vy > 0);
        let reference = cov as f64 / ((vx as f64).sqrt() * (vy as f64).sqrt());
        let r = pearson(&xs, &ys).unwrap();
        prop_assert!((r - reference).abs() < 1e-12, "{} vs {}", r, reference);
        prop_assert_eq!(r, pearson(&ys, &xs).unwrap());
    }

    #[test]
    fn pearson_is_affine_invariant(xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40), a in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0], b in -5.0f64..5.0) {
        let xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
        let Ok(r) = pearson(&xs, &ys) else { return Ok(()) };
        let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let r2 = pearson(&moved, &ys).unwrap();
        prop_assert!((r2 - a.signum() * r).abs() < 1e-10);
    }
}

#[test]
fn ignored_regions_neither_help_nor_hurt() {
    let gts = gt_boxes(2);
    let mut ann = FrameAnnotations::from_boxes(&gts[..1], "Car");
    ann.objects.push(GroundTruth { bbox: Some(gts[1]), category: "DontCare".into(), ignore: true });
    let dets = vec![Detection::new(gts[0], 0.9, "Car").unwrap(), Detection::new(gts[1], 0.95, "Car").unwrap()];
    let rep = evaluate("Car", &[(ann, dets)], 0.7, IouMode::ThreeD).unwrap();
    assert_eq!(rep.ap_r40, 100.0);
    assert_eq!(rep.matches[0].n_gt, 1);
}
