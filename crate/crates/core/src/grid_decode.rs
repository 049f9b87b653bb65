//! Decoding of the character recognizer's grid output.
//!
//! The recognizer sees a 288×200 plate crop and emits a 36×25 grid with a
//! stride of 8 pixels in both axes. Each cell carries one anchor-free
//! predictor laid out channel-contiguously as
//! `[objectness, tx, ty, tw, th, class_0 .. class_34]`, and cells are stored
//! row-major (`row * 36 + col`).

use thiserror::Error;

use crate::geometry::{self, BBox, FrameBox, GeometryError};

pub const GRID_WIDTH: usize = 36;
pub const GRID_HEIGHT: usize = 25;
pub const NUM_CLASSES: usize = 35;
/// Objectness + 4 box offsets + class logits.
pub const CHANNELS: usize = 5 + NUM_CLASSES;
pub const STRIDE: f64 = 8.0;
pub const INPUT_WIDTH: f64 = 288.0;
pub const INPUT_HEIGHT: f64 = 200.0;

/// Recognizer classes in id order. `0` doubles as the letter `O`.
pub const ALPHABET: [char; NUM_CLASSES] = [
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', 'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I',
    'J', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z',
];

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("grid must be {GRID_WIDTH}x{GRID_HEIGHT}x{CHANNELS}, got {width}x{height}x{channels} ({len} values)")]
    Dimensions {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error("class id {0} outside 0..{NUM_CLASSES}")]
    ClassId(u32),
    #[error("symbol {0:?} is not a recognizer class")]
    Symbol(char),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Raw recognizer output for one plate crop.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    values: Vec<f32>,
}

impl GridTensor {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self, DecodeError> {
        if width != GRID_WIDTH
            || height != GRID_HEIGHT
            || channels != CHANNELS
            || values.len() != GRID_WIDTH * GRID_HEIGHT * CHANNELS
        {
            return Err(DecodeError::Dimensions {
                width,
                height,
                channels,
                len: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DecodeError::NonFinite { index, value });
        }
        Ok(Self { values })
    }

    /// Every cell silent: objectness logit `background`, all else zero.
    pub fn filled(background: f32) -> Self {
        let mut values = vec![0.0; GRID_WIDTH * GRID_HEIGHT * CHANNELS];
        for cell in values.chunks_exact_mut(CHANNELS) {
            cell[0] = background;
        }
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn cell(&self, col: usize, row: usize) -> &[f32] {
        let start = (row * GRID_WIDTH + col) * CHANNELS;
        &self.values[start..start + CHANNELS]
    }

    pub fn cell_mut(&mut self, col: usize, row: usize) -> &mut [f32] {
        let start = (row * GRID_WIDTH + col) * CHANNELS;
        &mut self.values[start..start + CHANNELS]
    }
}

/// One recognized character in plate-crop pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharDetection {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
    /// Grid cell `(col, row)` that predicted this character, when decoded
    /// from a tensor.
    pub cell: Option<(usize, usize)>,
    /// Predicted centre before the box was clamped to the crop.
    pub center: (f64, f64),
}

impl CharDetection {
    /// Uses the box's label and score as class and confidence.
    pub fn from_bbox(bbox: BBox) -> Result<Self, DecodeError> {
        if bbox.class_id() as usize >= NUM_CLASSES {
            return Err(DecodeError::ClassId(bbox.class_id()));
        }
        Ok(Self {
            bbox,
            class_id: bbox.class_id(),
            confidence: bbox.score(),
            cell: None,
            center: bbox.center(),
        })
    }

    pub fn symbol(&self) -> char {
        ALPHABET[self.class_id as usize]
    }
}

pub fn class_to_symbol(class_id: u32) -> Result<char, DecodeError> {
    ALPHABET
        .get(class_id as usize)
        .copied()
        .ok_or(DecodeError::ClassId(class_id))
}

/// Inverse of [`class_to_symbol`]; `O` maps onto the shared `0` class.
pub fn symbol_to_class(symbol: char) -> Result<u32, DecodeError> {
    let symbol = if symbol == 'O' { '0' } else { symbol };
    ALPHABET
        .iter()
        .position(|&c| c == symbol)
        .map(|i| i as u32)
        .ok_or(DecodeError::Symbol(symbol))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Index and probability of the most likely class under a softmax.
fn best_class(logits: &[f32]) -> (usize, f64) {
    let (best, max) = logits
        .iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
    let max = max as f64;
    let denom: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    (best, 1.0 / denom)
}

fn check_ratio(t: f64) -> Result<(), DecodeError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(DecodeError::Threshold(t))
    }
}

/// Decodes every cell, keeps those with `objectness * class_probability >=
/// conf_threshold`, then runs per-class NMS. Output is sorted by confidence,
/// highest first.
pub fn decode_grid(
    tensor: &GridTensor,
    conf_threshold: f64,
    iou_threshold: f64,
) -> Result<Vec<CharDetection>, DecodeError> {
    check_ratio(conf_threshold)?;
    check_ratio(iou_threshold)?;

    let mut candidates = Vec::new();
    for row in 0..GRID_HEIGHT {
        for col in 0..GRID_WIDTH {
            let cell = tensor.cell(col, row);
            let objectness = sigmoid(cell[0] as f64);
            if objectness < conf_threshold {
                continue;
            }
            let (class_id, prob) = best_class(&cell[5..]);
            let confidence = objectness * prob;
            if confidence < conf_threshold {
                continue;
            }
            let cx = (col as f64 + sigmoid(cell[1] as f64)) * STRIDE;
            let cy = (row as f64 + sigmoid(cell[2] as f64)) * STRIDE;
            let w = (cell[3] as f64).exp() * STRIDE;
            let h = (cell[4] as f64).exp() * STRIDE;
            let x1 = (cx - w / 2.0).clamp(0.0, INPUT_WIDTH);
            let y1 = (cy - h / 2.0).clamp(0.0, INPUT_HEIGHT);
            let x2 = (cx + w / 2.0).clamp(0.0, INPUT_WIDTH);
            let y2 = (cy + h / 2.0).clamp(0.0, INPUT_HEIGHT);
            // a box collapsed by underflow or clamping carries no character
            let Ok(bbox) = BBox::new(x1, y1, x2, y2, confidence, class_id as u32) else {
                continue;
            };
            candidates.push(CharDetection {
                bbox,
                class_id: class_id as u32,
                confidence,
                cell: Some((col, row)),
                center: (cx, cy),
            });
        }
    }

    let boxes: Vec<FrameBox> = candidates
        .iter()
        .map(|c| FrameBox {
            frame: 0,
            bbox: c.bbox,
        })
        .collect();
    Ok(geometry::batched_nms_indices(&boxes, iou_threshold)?
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}
