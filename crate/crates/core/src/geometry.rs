//! Axis-aligned bounding-box arithmetic in continuous pixel units.
//!
//! Boxes are stored as `(left, top, width, height)` with `y` growing downward.
//! Everything is `f64`; these values feed gradient computations downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

/// Axis-aligned pixel rectangle. Construct through [`BoundingBox::new`] to
/// enforce finite fields and non-negative extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite field in ({x}, {y}, {w}, {h})"
            )));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox(format!(
                "negative extent w={w} h={h}"
            )));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    /// Builds a box from its two corners (detector `xyxy` format).
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    /// Builds a box of the given size centered on `c`.
    pub fn centered(c: Point2, w: f64, h: f64) -> Result<Self> {
        Self::new(c.x - w / 2.0, c.y - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point2 {
        center(self)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Scales about the image origin. `s` must be positive.
    pub fn scale(&self, s: f64) -> Self {
        debug_assert!(s > 0.0);
        BoundingBox {
            x: self.x * s,
            y: self.y * s,
            w: self.w * s,
            h: self.h * s,
        }
    }

    /// True when `p` lies in the half-open box `[x, x+w) × [y, y+h)`.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x && p.x < self.right() && p.y >= self.y && p.y < self.bottom()
    }
}

pub fn center(b: &BoundingBox) -> Point2 {
    Point2::new(b.x + b.w / 2.0, b.y + b.h / 2.0)
}

pub fn distance(p: Point2, q: Point2) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

/// Area of the intersection of two boxes, zero when they only touch.
pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        0.0
    } else {
        iw * ih
    }
}

/// Intersection over union. Two zero-area boxes yield 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    /// Counts lattice cell centers on a `1/res` grid covered by each box.
    fn lattice_iou(a: &BoundingBox, b: &BoundingBox, res: usize) -> f64 {
        let lo_x = a.x().min(b.x());
        let lo_y = a.y().min(b.y());
        let hi_x = a.right().max(b.right());
        let hi_y = a.bottom().max(b.bottom());
        let step = 1.0 / res as f64;
        let nx = ((hi_x - lo_x) / step).ceil() as usize;
        let ny = ((hi_y - lo_y) / step).ceil() as usize;
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..nx {
            for j in 0..ny {
                let p = Point2::new(lo_x + (i as f64 + 0.5) * step, lo_y + (j as f64 + 0.5) * step);
                let (ia, ib) = (a.contains(p), b.contains(p));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn centers() {
        assert_eq!(center(&bb(0.0, 0.0, 2.0, 2.0)), Point2::new(1.0, 1.0));
        assert_eq!(center(&bb(10.0, 20.0, 0.0, 0.0)), Point2::new(10.0, 20.0));
        assert_eq!(center(&bb(3.0, 4.0, 5.0, 7.0)), Point2::new(5.5, 7.5));
    }

    #[test]
    fn distances() {
        assert_eq!(distance(Point2::new(0.0, 0.0), Point2::new(3.0, 4.0)), 5.0);
        assert_eq!(distance(Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)), 0.0);
        assert_eq!(distance(Point2::new(-2.0, 0.0), Point2::new(2.0, 3.0)), 5.0);
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(5.0, 5.0, 1.0, 1.0)), 0.0);

        let b = bb(1.0, 1.0, 2.0, 2.0);
        let oracle = lattice_iou(&a, &b, 64);
        assert!((oracle - 1.0 / 7.0).abs() < 1e-12);
        assert!((iou(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn zero_area_boxes() {
        let p = bb(3.0, 3.0, 0.0, 0.0);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(iou(&p, &bb(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        assert_eq!(iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn rejects_invalid_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, f64::INFINITY, 1.0, 1.0).is_err());
    }

    #[test]
    fn corners_round_trip() {
        let b = BoundingBox::from_corners(10.0, 20.0, 42.0, 52.0).unwrap();
        assert_eq!((b.x(), b.y(), b.w(), b.h()), (10.0, 20.0, 32.0, 32.0));
        assert!(BoundingBox::from_corners(10.0, 0.0, 5.0, 1.0).is_err());
    }
}
