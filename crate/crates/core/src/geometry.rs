//! Axis-aligned rectangles in page pixel coordinates.
//!
//! The origin is the top-left corner of the page and `y` grows downward.
//! Boxes are closed: two boxes that only share an edge intersect in a
//! zero-area rectangle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("inverted box: ({x0}, {y0}, {x1}, {y1})")]
    Inverted { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("non-finite box coordinate")]
    NonFinite,
    #[error("degenerate pair: both boxes have zero area")]
    DegeneratePair,
    #[error("zero-area object box")]
    ZeroAreaObject,
    #[error("union of an empty box list")]
    EmptyUnion,
}

/// Rectangle `[x0, x1] x [y0, y1]`, serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if x0 > x1 || y0 > y1 {
            return Err(GeometryError::Inverted { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Builds a box from two arbitrary corners.
    pub fn from_corners(ax: f64, ay: f64, bx: f64, by: f64) -> Result<Self, GeometryError> {
        Self::new(ax.min(bx), ay.min(by), ax.max(bx), ay.max(by))
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> f64 {
        self.y0
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn centroid(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Same box with the horizontal extent replaced.
    pub fn with_x(&self, x0: f64, x1: f64) -> Self {
        Self {
            x0: x0.min(x1),
            x1: x0.max(x1),
            ..*self
        }
    }

    /// Same box with the vertical extent replaced.
    pub fn with_y(&self, y0: f64, y1: f64) -> Self {
        Self {
            y0: y0.min(y1),
            y1: y0.max(y1),
            ..*self
        }
    }

    /// Smallest box enclosing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        intersection(self, other)
    }

    pub fn contains(&self, inner: &BBox) -> bool {
        contains(self, inner)
    }

    /// Length of the overlap of the two horizontal extents (0 when disjoint).
    pub fn horizontal_overlap(&self, other: &BBox) -> f64 {
        (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0)
    }

    /// Length of the overlap of the two vertical extents (0 when disjoint).
    pub fn vertical_overlap(&self, other: &BBox) -> f64 {
        (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0)
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Overlap rectangle, or `None` when the boxes are apart along either axis.
pub fn intersection(a: &BBox, b: &BBox) -> Option<BBox> {
    let x0 = a.x0.max(b.x0);
    let y0 = a.y0.max(b.y0);
    let x1 = a.x1.min(b.x1);
    let y1 = a.y1.min(b.y1);
    (x0 <= x1 && y0 <= y1).then_some(BBox { x0, y0, x1, y1 })
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    intersection(a, b).map_or(0.0, |r| r.area())
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 && area_b <= 0.0 {
        return Err(GeometryError::DegeneratePair);
    }
    let inter = intersection_area(a, b);
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Fraction of `obj` covered by `subj`.
pub fn overlap_fraction(subj: &BBox, obj: &BBox) -> Result<f64, GeometryError> {
    let area_obj = obj.area();
    if area_obj <= 0.0 {
        return Err(GeometryError::ZeroAreaObject);
    }
    Ok((intersection_area(subj, obj) / area_obj).clamp(0.0, 1.0))
}

pub fn union_bbox<'a, I>(boxes: I) -> Result<BBox, GeometryError>
where
    I: IntoIterator<Item = &'a BBox>,
{
    boxes
        .into_iter()
        .copied()
        .reduce(|acc, b| acc.union(&b))
        .ok_or(GeometryError::EmptyUnion)
}

/// Closed-rectangle containment: `inner` lies within `outer`.
pub fn contains(outer: &BBox, inner: &BBox) -> bool {
    outer.x0 <= inner.x0 && outer.y0 <= inner.y0 && inner.x1 <= outer.x1 && inner.y1 <= outer.y1
}
