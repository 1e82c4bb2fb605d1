//! Greedy class-wise non-maximum suppression.

use std::cmp::Ordering;

use crate::Scalar;

/// Axis-aligned box in pixel coordinates, `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn area(&self) -> T {
        (self.x2 - self.x1).max(T::zero()) * (self.y2 - self.y1).max(T::zero())
    }

    pub fn is_well_ordered(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub bbox: BoundingBox<T>,
    pub class_id: u32,
    pub confidence: T,
}

impl<T: Scalar> Detection<T> {
    /// Confidence in `[0, 1]` and a well-ordered box.
    pub fn is_valid(&self) -> bool {
        self.bbox.is_well_ordered() && self.confidence >= T::zero() && self.confidence <= T::one()
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(T::zero());
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(T::zero());
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// Ranking used by [`nms`]: confidence descending, then class id ascending,
/// then `x1` ascending. Remaining ties keep input order (the sort is stable).
pub fn rank_order<T: Scalar>(a: &Detection<T>, b: &Detection<T>) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap_or(Ordering::Equal))
}

/// Keeps the highest-ranked detection and discards every same-class detection
/// whose IoU with it exceeds `iou_threshold`, repeatedly. Output is in rank
/// order and is a subset of the input.
pub fn nms<T: Scalar>(detections: &[Detection<T>], iou_threshold: T) -> Vec<Detection<T>> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| rank_order(&detections[i], &detections[j]));

    let mut suppressed = vec![false; detections.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[pos] {
            continue;
        }
        let head = &detections[i];
        kept.push(*head);
        for (later, &j) in order.iter().enumerate().skip(pos + 1) {
            let other = &detections[j];
            if !suppressed[later] && other.class_id == head.class_id && iou(&head.bbox, &other.bbox) > iou_threshold {
                suppressed[later] = true;
            }
        }
    }
    kept
}
