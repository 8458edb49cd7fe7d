use serde::{Deserialize, Serialize};

/// Axis-aligned box in page units. Origin is the top-left page corner and
/// `y` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox::new(x0.min(x1), y0.min(y1), (x1 - x0).abs(), (y1 - y0).abs())
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite() && self.w >= 0.0 && self.h >= 0.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Uniform scaling about the page origin.
    pub fn scale(&self, s: f64) -> BBox {
        BBox::new(self.x * s, self.y * s, self.w * s, self.h * s)
    }

    pub fn expand(&self, margin: f64) -> BBox {
        BBox::new(self.x - margin, self.y - margin, self.w + 2.0 * margin, self.h + 2.0 * margin)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox::from_corners(self.x.min(other.x), self.y.min(other.y), self.right().max(other.right()), self.bottom().max(other.bottom()))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Length of the overlap of the vertical extents.
    pub fn vertical_overlap(&self, other: &BBox) -> f64 {
        (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0)
    }

    /// Length of the overlap of the horizontal extents.
    pub fn horizontal_overlap(&self, other: &BBox) -> f64 {
        (self.right().min(other.right()) - self.x.max(other.x)).max(0.0)
    }
}

/// Intersection over union. Two zero-area boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Spatial arrangement of a key and its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairRelation {
    Horizontal,
    Vertical,
}

/// Minimum vertical-interval overlap (relative to the smaller height) for a
/// pair to count as sharing a row.
pub const RELATION_OVERLAP_THRESHOLD: f64 = 0.5;

pub fn pair_relation(key: &BBox, value: &BBox) -> PairRelation {
    let min_h = key.h.min(value.h);
    if min_h <= 0.0 {
        return PairRelation::Vertical;
    }
    if key.vertical_overlap(value) / min_h > RELATION_OVERLAP_THRESHOLD {
        PairRelation::Horizontal
    } else {
        PairRelation::Vertical
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iou_hand_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&BBox::new(0.0, 0.0, 5.0, 5.0), &BBox::new(10.0, 10.0, 5.0, 5.0)), 0.0);
        // intersection 50, union 100
        assert_eq!(iou(&a, &BBox::new(0.0, 0.0, 10.0, 5.0)), 0.5);
    }

    #[test]
    fn iou_of_degenerate_boxes_is_zero() {
        let p = BBox::new(3.0, 3.0, 0.0, 0.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = BBox::new(0.0, 0.0, 10.0, 0.0);
        assert_eq!(iou(&line, &line), 0.0);
    }

    #[test]
    fn touching_boxes_do_not_intersect() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(10.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn pair_relation_hand_cases() {
        let key = BBox::new(0.0, 0.0, 50.0, 10.0);
        assert_eq!(pair_relation(&key, &BBox::new(60.0, 0.0, 50.0, 10.0)), PairRelation::Horizontal);
        assert_eq!(pair_relation(&key, &BBox::new(0.0, 20.0, 50.0, 10.0)), PairRelation::Vertical);
        // overlap 2 / 10 = 0.2
        assert_eq!(pair_relation(&key, &BBox::new(60.0, 8.0, 50.0, 10.0)), PairRelation::Vertical);
    }

    #[test]
    fn bbox_serializes_as_array() {
        let b = BBox::new(1.0, 2.5, 3.0, 4.0);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[1.0,2.5,3.0,4.0]");
        let back: BBox = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 0.0..300.0f64, 0.0..300.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_translation_invariant(a in arb_box(), b in arb_box(),
                                                   dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, iou(&b, &a));
            let moved = iou(&a.translate(dx, dy), &b.translate(dx, dy));
            prop_assert!((ab - moved).abs() < 1e-9);
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assume!(a.w * a.h > 1e-6);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pair_relation_scale_invariant(a in arb_box(), b in arb_box(), s in 0.1..10.0f64) {
            // power-of-two scaling is exact; the general case may flip at the threshold
            let s2 = 2f64.powi((s.log2()).round() as i32);
            prop_assert_eq!(pair_relation(&a, &b), pair_relation(&a.scale(s2), &b.scale(s2)));
        }
    }
}
