use proptest::prelude::*;

use flowprop::detect::{
    decode, detections_from_csv, detections_to_csv, encode, evaluate_frame_map, iou, nms, Anchor, AnchorGrid, BBox,
    Detection, Detector, HeadConfig, LabeledBox,
};
use flowprop::{FeatureMap, FeaturePyramid, Shape};

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0f32..0.8, 0.0f32..0.8, 0.01f32..0.2, 0.01f32..0.2).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

fn detections() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec(
        (bbox(), 0u32..3, 0u8..10).prop_map(|(bbox, class_id, s)| Detection {
            bbox,
            class_id,
            score: f32::from(s) / 10.0,
        }),
        0..40,
    )
}

proptest! {
    #[test]
    fn nms_keeps_a_separated_subset(dets in detections(), thr in 0.1f32..0.9) {
        let kept = nms(&dets, thr);
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class_id != b.class_id || iou(&a.bbox, &b.bbox) <= thr);
            }
        }
        prop_assert_eq!(nms(&kept, thr), kept);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let o = iou(&a, &b);
        prop_assert_eq!(o, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn offsets_round_trip(cx in 0.1f32..0.9, cy in 0.1f32..0.9, w in 0.05f32..0.5, h in 0.05f32..0.5, s in 0.5f32..2.0) {
        let anchor = Anchor { cx: 0.5, cy: 0.5, w: 0.2, h: 0.3 };
        let target = Anchor { cx, cy, w: w * s, h };
        let back = decode(&anchor, &encode(&anchor, &target));
        prop_assert!((back.cx - cx).abs() < 1e-5 && (back.w - w * s).abs() < 1e-5 && (back.h - h).abs() < 1e-5);
    }

    #[test]
    fn csv_round_trips_to_six_decimals(dets in detections()) {
        let frames = vec![(0usize, dets.clone()), (3, dets.clone())];
        let parsed = detections_from_csv(&detections_to_csv(&frames)).unwrap();
        prop_assert_eq!(parsed.len(), 2 * dets.len());
        for ((f, p), d) in parsed.iter().zip(dets.iter().chain(&dets)) {
            prop_assert!(*f == 0 || *f == 3);
            prop_assert_eq!(p.class_id, d.class_id);
            prop_assert!((p.score - d.score).abs() <= 6e-7 && (p.bbox.x2 - d.bbox.x2).abs() <= 6e-7);
        }
    }

    #[test]
    fn map_is_bounded(dets in detections(), gt in prop::collection::vec((bbox(), 0u32..3), 1..6)) {
        let gt: Vec<LabeledBox> = gt.into_iter().map(|(bbox, class_id)| LabeledBox { bbox, class_id }).collect();
        let r = evaluate_frame_map(&[dets], &[gt], 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.map));
    }
}

#[test]
fn anchors_cover_every_cell() {
    let shapes = [Shape::new(4, 4, 8), Shape::new(2, 2, 8)];
    let grid = AnchorGrid::new(&shapes, 4).unwrap();
    assert_eq!(grid.total(), (16 + 4) * 4);
}

#[test]
fn predictions_pass_threshold_and_are_deterministic() {
    let shapes = [Shape::new(4, 4, 8), Shape::new(2, 2, 8)];
    let pyr = FeaturePyramid::new(
        shapes
            .iter()
            .map(|s| FeatureMap::from_fn(*s, |y, x, c| ((y + x * 3 + c * 5) % 7) as f32 / 7.0).unwrap())
            .collect(),
    )
    .unwrap();
    let head = HeadConfig { score_threshold: 0.5, ..HeadConfig::default() };
    let det = Detector::new(head, &shapes).unwrap();
    let a = det.predict(&pyr).unwrap();
    assert_eq!(a, Detector::new(head, &shapes).unwrap().predict(&pyr).unwrap());
    for d in &a {
        assert!(d.score >= 0.5);
        assert!(d.bbox.x1 >= 0.0 && d.bbox.x2 <= 1.0 && d.bbox.x1 <= d.bbox.x2);
    }
}

#[test]
fn map_counts_duplicates_as_false_positives() {
    let g = LabeledBox { bbox: BBox::new(0.1, 0.1, 0.3, 0.3), class_id: 0 };
    let d = Detection { bbox: g.bbox, class_id: 0, score: 0.9 };
    let r = evaluate_frame_map(&[vec![d, Detection { score: 0.8, ..d }]], &[vec![g]], 0.5).unwrap();
    assert_eq!(r.map, 1.0);
    let late = Detection { bbox: BBox::new(0.6, 0.6, 0.8, 0.8), score: 0.95, ..d };
    let r = evaluate_frame_map(&[vec![late, d]], &[vec![g]], 0.5).unwrap();
    assert_eq!(r.map, 0.5);
    assert!(evaluate_frame_map(&[vec![]], &[], 0.5).is_err());
}
