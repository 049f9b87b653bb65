//! Axis-aligned boxes, IoU and greedy non-maximum suppression.
//!
//! Two suppression entry points are provided: [`nms`] for a single class and
//! [`batched_nms`], which handles any mix of frames and classes in one fused
//! pass by translating every `(frame, class)` group into its own disjoint
//! region of the plane before suppressing.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("nms expects a single class, found {expected} and {found}")]
    MixedClasses { expected: u32, found: u32 },
    #[error("iou threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

/// A scored, labelled box in pixel coordinates, `(x1, y1)` top-left and
/// `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BBoxRepr", into = "BBoxRepr")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
    class_id: u32,
}

#[derive(Serialize, Deserialize)]
struct BBoxRepr {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
    class_id: u32,
}

impl TryFrom<BBoxRepr> for BBox {
    type Error = GeometryError;

    fn try_from(r: BBoxRepr) -> Result<Self, Self::Error> {
        BBox::new(r.x1, r.y1, r.x2, r.y2, r.score, r.class_id)
    }
}

impl From<BBox> for BBoxRepr {
    fn from(b: BBox) -> Self {
        BBoxRepr {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            score: b.score,
            class_id: b.class_id,
        }
    }
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates, zero or negative
    /// extents and scores outside `[0, 1]`.
    pub fn new(
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        score: f64,
        class_id: u32,
    ) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidBox(format!(
                "non-finite coordinate in ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(GeometryError::InvalidBox(format!(
                "empty extent ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::InvalidBox(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            x1,
            y1,
            x2,
            y2,
            score,
            class_id,
        })
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn score(&self) -> f64 {
        self.score
    }

    #[inline]
    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    /// Same geometry and label, new score.
    pub fn with_score(self, score: f64) -> Result<Self, GeometryError> {
        Self::new(self.x1, self.y1, self.x2, self.y2, score, self.class_id)
    }

    /// Same geometry and score, new label.
    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = class_id;
        self
    }

    /// Shifted by `(dx, dy)`.
    pub fn translated(self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(
            self.x1 + dx,
            self.y1 + dy,
            self.x2 + dx,
            self.y2 + dy,
            self.score,
            self.class_id,
        )
    }
}

/// Intersection over union. Touching edges intersect with zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

fn check_threshold(iou_threshold: f64) -> Result<(), GeometryError> {
    if iou_threshold > 0.0 && iou_threshold <= 1.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidThreshold(iou_threshold))
    }
}

/// Suppression order: score descending, then lower x1, lower y1, and
/// finally input position.
pub(crate) fn rank_order(a: (usize, &BBox), b: (usize, &BBox)) -> Ordering {
    b.1.score
        .total_cmp(&a.1.score)
        .then(a.1.x1.total_cmp(&b.1.x1))
        .then(a.1.y1.total_cmp(&b.1.y1))
        .then(a.0.cmp(&b.0))
}

/// Greedy suppression over `boxes`, returning the kept indices in rank order.
/// `overlap(i, j)` is the IoU used for the suppression test.
fn suppress<F>(boxes: &[BBox], iou_threshold: f64, overlap: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> f64,
{
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| rank_order((a, &boxes[a]), (b, &boxes[b])));

    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && overlap(i, j) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Single-class greedy NMS. A box survives iff its IoU with every
/// higher-ranked survivor is below `iou_threshold`. Output is in rank order.
pub fn nms(dets: &[BBox], iou_threshold: f64) -> Result<Vec<BBox>, GeometryError> {
    check_threshold(iou_threshold)?;
    if let Some(first) = dets.first() {
        if let Some(other) = dets.iter().find(|d| d.class_id != first.class_id) {
            return Err(GeometryError::MixedClasses {
                expected: first.class_id,
                found: other.class_id,
            });
        }
    }
    Ok(
        suppress(dets, iou_threshold, |i, j| iou(&dets[i], &dets[j]))
            .into_iter()
            .map(|i| dets[i])
            .collect(),
    )
}

/// [`nms`] applied to each class separately, survivors merged in rank order.
pub fn nms_per_class(dets: &[BBox], iou_threshold: f64) -> Result<Vec<BBox>, GeometryError> {
    let tagged: Vec<FrameBox> = dets
        .iter()
        .map(|&bbox| FrameBox { frame: 0, bbox })
        .collect();
    Ok(batched_nms(&tagged, iou_threshold)?
        .into_iter()
        .map(|fb| fb.bbox)
        .collect())
}

/// A detection tagged with the frame it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBox {
    pub frame: usize,
    pub bbox: BBox,
}

/// Fused NMS over many frames and classes.
///
/// Each `(frame, class)` group is translated by `group_index * stride`, with
/// `stride` one pixel more than the global coordinate span, so boxes from
/// different groups can never overlap and a single greedy pass gives the same
/// survivors as running [`nms`] on every group separately, bit for bit. Returned boxes carry
/// their original coordinates.
pub fn batched_nms(dets: &[FrameBox], iou_threshold: f64) -> Result<Vec<FrameBox>, GeometryError> {
    Ok(batched_nms_indices(dets, iou_threshold)?
        .into_iter()
        .map(|i| dets[i])
        .collect())
}

/// Like [`batched_nms`] but returns positions into `dets`.
pub fn batched_nms_indices(
    dets: &[FrameBox],
    iou_threshold: f64,
) -> Result<Vec<usize>, GeometryError> {
    check_threshold(iou_threshold)?;
    if dets.is_empty() {
        return Ok(Vec::new());
    }

    let mut groups: HashMap<(usize, u32), usize> = HashMap::new();
    let group_of: Vec<usize> = dets
        .iter()
        .map(|d| {
            let next = groups.len();
            *groups.entry((d.frame, d.bbox.class_id)).or_insert(next)
        })
        .collect();

    let (lo, hi) = dets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (
                lo.min(d.bbox.x1).min(d.bbox.y1),
                hi.max(d.bbox.x2).max(d.bbox.y2),
            )
        });
    let stride = (hi - lo) + 1.0;

    let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let shifted: Vec<BBox> = boxes
        .iter()
        .zip(&group_of)
        .map(|(b, &g)| {
            let off = g as f64 * stride - lo;
            BBox {
                x1: b.x1 + off,
                y1: b.y1 + off,
                x2: b.x2 + off,
                y2: b.y2 + off,
                ..*b
            }
        })
        .collect();
    // The shifted layout alone decides which pairs can interact: groups sit a
    // full pixel apart. The ratio itself is taken on the original coordinates
    // because the shift can round away low bits of fractional boxes.
    let keep = suppress(&boxes, iou_threshold, |i, j| {
        if overlaps(&shifted[i], &shifted[j]) {
            iou(&boxes[i], &boxes[j])
        } else {
            0.0
        }
    });
    Ok(keep)
}

fn overlaps(a: &BBox, b: &BBox) -> bool {
    a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2
}
