//! Non-maximum suppression, frame-level mAP and the detections CSV.

use flowprop::detect::{detections_from_csv, detections_to_csv, evaluate_frame_map, nms, BBox, Detection, LabeledBox};

fn det(x: f32, score: f32, class_id: u32) -> Detection {
    Detection {
        bbox: BBox::new(x, 0.1, x + 0.3, 0.4),
        class_id,
        score,
    }
}

fn main() -> flowprop::Result<()> {
    let raw = vec![det(0.10, 0.9, 0), det(0.12, 0.8, 0), det(0.60, 0.7, 0), det(0.11, 0.6, 1)];
    let kept = nms(&raw, 0.45);
    println!("{} raw -> {} after suppression", raw.len(), kept.len());

    let truth = vec![vec![
        LabeledBox { bbox: BBox::new(0.1, 0.1, 0.4, 0.4), class_id: 0 },
        LabeledBox { bbox: BBox::new(0.1, 0.1, 0.4, 0.4), class_id: 1 },
    ]];
    let report = evaluate_frame_map(std::slice::from_ref(&kept), &truth, 0.5)?;
    println!("per-class AP {:?}, mAP {:.4}", report.per_class, report.map);

    let csv = detections_to_csv(&[(0, kept)]);
    print!("{csv}");
    assert_eq!(detections_from_csv(&csv)?.len(), 3);
    Ok(())
}
