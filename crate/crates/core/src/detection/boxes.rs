use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized `(cx, cy, w, h)` image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Checks `w, h > 0` and a center inside the unit square.
    pub fn validated(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let ok = w > 0.0
            && h > 0.0
            && (0.0..=1.0).contains(&cx)
            && (0.0..=1.0).contains(&cy)
            && [cx, cy, w, h].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid box cx={cx} cy={cy} w={w} h={h}"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_xyxy(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn to_xyxy(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Area from corner coordinates, so it agrees bitwise with intersections.
    pub fn area(&self) -> f64 {
        let [x1, y1, x2, y2] = self.to_xyxy();
        (x2 - x1) * (y2 - y1)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            cx: 1.0 - self.cx,
            ..*self
        }
    }

    pub fn l1(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).abs()
            + (self.cy - other.cy).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }
}

fn inter_union(a: &BBox, b: &BBox) -> (f64, f64) {
    let [ax1, ay1, ax2, ay2] = a.to_xyxy();
    let [bx1, by1, bx2, by2] = b.to_xyxy();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    (inter, a.area() + b.area() - inter)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let (inter, union) = inter_union(a, b);
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let (inter, union) = inter_union(a, b);
    let [ax1, ay1, ax2, ay2] = a.to_xyxy();
    let [bx1, by1, bx2, by2] = b.to_xyxy();
    let enclosing = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    if union <= 0.0 || enclosing <= 0.0 {
        return 0.0;
    }
    inter / union - (enclosing - union) / enclosing
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// A ground-truth or pseudo label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub class_id: usize,
    pub bbox: BBox,
}

impl From<&Detection> for Label {
    fn from(d: &Detection) -> Self {
        Self {
            class_id: d.class_id,
            bbox: d.bbox,
        }
    }
}

/// One dense prediction with the full per-class probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bbox: BBox,
    pub class_probs: Vec<f64>,
}

impl Prediction {
    /// Highest-probability class; lowest index on ties.
    pub fn top_class(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (c, &p) in self.class_probs.iter().enumerate() {
            if p > best.1 {
                best = (c, p);
            }
        }
        best
    }

    pub fn to_detection(&self) -> Detection {
        let (class_id, score) = self.top_class();
        Detection {
            bbox: self.bbox,
            class_id,
            score,
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn iou_closed_forms() {
        let a = BBox::new(0.3, 0.4, 0.2, 0.1);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::from_xyxy(0.0, 0.0, 0.1, 0.1);
        let c = BBox::from_xyxy(0.5, 0.5, 0.6, 0.6);
        assert_eq!(iou(&b, &c), 0.0);
        let d = BBox::from_xyxy(0.0, 0.0, 2.0, 2.0);
        let e = BBox::from_xyxy(1.0, 1.0, 3.0, 3.0);
        assert!(close(iou(&d, &e), 1.0 / 7.0, 1e-12));
    }

    #[test]
    fn giou_closed_forms() {
        let a = BBox::from_xyxy(0.0, 0.0, 1.0, 1.0);
        let b = BBox::from_xyxy(1.0, 1.0, 2.0, 2.0);
        assert!(close(giou(&a, &b), -0.5, 1e-12));
        let d = BBox::from_xyxy(0.0, 0.0, 2.0, 2.0);
        let e = BBox::from_xyxy(1.0, 1.0, 3.0, 3.0);
        assert!(close(giou(&d, &e), 1.0 / 7.0 - 2.0 / 9.0, 1e-12));
        assert!(close(giou(&d, &e), -0.0794, 1e-4));
        assert_eq!(giou(&a, &a), 1.0);
    }

    #[test]
    fn flip_geometry() {
        let b = BBox::new(0.25, 0.7, 0.1, 0.3);
        let f = b.flip_horizontal();
        assert_eq!(f.cx, 0.75);
        assert_eq!(f.w, b.w);
        assert_eq!(f.flip_horizontal(), b);
    }

    #[test]
    fn validated_rejects_degenerate() {
        assert!(BBox::validated(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(BBox::validated(1.5, 0.5, 0.1, 0.1).is_err());
        assert!(BBox::validated(0.5, 0.5, 0.1, 0.1).is_ok());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.01..0.6f64, 0.01..0.6f64)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
    }

    proptest! {
        #[test]
        fn iou_giou_symmetric_and_ordered(a in arb_box(), b in arb_box()) {
            let (i1, i2) = (iou(&a, &b), iou(&b, &a));
            prop_assert!((i1 - i2).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&i1));
            let (g1, g2) = (giou(&a, &b), giou(&b, &a));
            prop_assert!((g1 - g2).abs() < 1e-15);
            prop_assert!(g1 <= i1 + 1e-15);
            prop_assert!(g1 > -1.0 && g1 <= 1.0);
            if a != b {
                prop_assert!(i1 < 1.0 || a.l1(&b) < 1e-12);
            }
        }
    }
}
