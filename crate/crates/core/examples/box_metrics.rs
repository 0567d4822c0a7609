//! Box overlap, focal loss, suppression and AP50 on hand-made detections.

use dsod::detection::{ap50, focal_loss, giou, iou, nms, BBox, Detection, Label};

fn main() {
    let a = BBox::from_xyxy(0.0, 0.0, 0.5, 0.5);
    let b = BBox::from_xyxy(0.25, 0.25, 0.75, 0.75);
    println!("iou {:.4}  giou {:.4}", iou(&a, &b), giou(&a, &b));
    for p in [0.1, 0.5, 0.9] {
        println!("focal p={p}: positive {:.5}  negative {:.5}", focal_loss(p, true, 0.25, 2.0), focal_loss(p, false, 0.25, 2.0));
    }

    let det = |cx, cy, class_id, score| Detection { bbox: BBox::new(cx, cy, 0.2, 0.2), class_id, score };
    let raw = vec![det(0.3, 0.3, 0, 0.9), det(0.31, 0.3, 0, 0.8), det(0.7, 0.6, 1, 0.7), det(0.5, 0.8, 0, 0.3)];
    let kept = nms(&raw, 0.5);
    println!("nms keeps {} of {}", kept.len(), raw.len());

    let gts = vec![vec![
        Label { class_id: 0, bbox: BBox::new(0.3, 0.3, 0.2, 0.2) },
        Label { class_id: 1, bbox: BBox::new(0.7, 0.6, 0.2, 0.2) },
    ]];
    let report = ap50(&[kept], &gts, 2);
    println!("AP50 per class {:?}, mean {:.3}", report.per_class, report.map);
}
