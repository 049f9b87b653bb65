//! Reading order for recognized characters.
//!
//! A plate is single-line when the vertical spread of the characters'
//! top-left corners is below 30% of the crop width. Double-line plates are
//! split on the same `0.3 * width` line (a character belongs to the first line
//! iff its top-left `y` is strictly below it) and each line is read left to
//! right.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_decode::CharDetection;

/// Fraction of the crop width used by both line tests.
pub const LINE_RATIO: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArrangementError {
    #[error("no characters to arrange")]
    Empty,
    #[error("crop width must be positive and finite, got {0}")]
    CropWidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineCategory {
    SingleLine,
    DoubleLine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrangedPlate {
    pub category: LineCategory,
    pub ordered: Vec<CharDetection>,
    pub raw_string: String,
}

impl ArrangedPlate {
    pub fn ordered_chars(&self) -> impl Iterator<Item = (char, &CharDetection)> {
        self.ordered.iter().map(|c| (c.symbol(), c))
    }
}

fn check_width(crop_width: f64) -> Result<f64, ArrangementError> {
    if crop_width.is_finite() && crop_width > 0.0 {
        Ok(crop_width * LINE_RATIO)
    } else {
        Err(ArrangementError::CropWidth(crop_width))
    }
}

pub fn categorize(
    chars: &[CharDetection],
    crop_width: f64,
) -> Result<LineCategory, ArrangementError> {
    let limit = check_width(crop_width)?;
    if chars.is_empty() {
        return Err(ArrangementError::Empty);
    }
    let (lo, hi) = chars
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.bbox.y1()), hi.max(c.bbox.y1()))
        });
    Ok(if hi - lo < limit {
        LineCategory::SingleLine
    } else {
        LineCategory::DoubleLine
    })
}

/// Partitions characters into `(first_line, second_line)`, keeping input
/// order within each line.
pub fn split_lines(
    chars: &[CharDetection],
    crop_width: f64,
) -> Result<(Vec<CharDetection>, Vec<CharDetection>), ArrangementError> {
    let limit = check_width(crop_width)?;
    Ok(chars.iter().partition(|c| c.bbox.y1() < limit))
}

/// Left to right; equal `x` falls back to `y`, then higher confidence, then
/// class and the remaining coordinates so the order is total.
fn reading_order(a: &CharDetection, b: &CharDetection) -> Ordering {
    a.bbox
        .x1()
        .total_cmp(&b.bbox.x1())
        .then(a.bbox.y1().total_cmp(&b.bbox.y1()))
        .then(b.confidence.total_cmp(&a.confidence))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x2().total_cmp(&b.bbox.x2()))
        .then(a.bbox.y2().total_cmp(&b.bbox.y2()))
}

pub fn arrange(
    chars: &[CharDetection],
    crop_width: f64,
) -> Result<ArrangedPlate, ArrangementError> {
    let category = categorize(chars, crop_width)?;
    let ordered = match category {
        LineCategory::SingleLine => {
            let mut all = chars.to_vec();
            all.sort_by(reading_order);
            all
        }
        LineCategory::DoubleLine => {
            let (mut first, mut second) = split_lines(chars, crop_width)?;
            first.sort_by(reading_order);
            second.sort_by(reading_order);
            first.extend(second);
            first
        }
    };
    let raw_string = ordered.iter().map(CharDetection::symbol).collect();
    Ok(ArrangedPlate {
        category,
        ordered,
        raw_string,
    })
}
