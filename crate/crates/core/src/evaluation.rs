//! Detection precision and recognition accuracy.
//!
//! Predictions are matched to ground truth greedily in descending score at an
//! IoU threshold. Recognition is scored only on ground-truth plates marked
//! recognizable: a plate counts as exact, within one or within two character
//! errors, where errors are the Levenshtein distance between the read string
//! and the annotated one. A recognizable plate that was missed, rejected or
//! failed to read counts against every accuracy.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arrangement::LineCategory;
use crate::dataset_io::{AnnotationDoc, ResultsDoc};
use crate::geometry::{self, BBox};

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("results reference frame {0:?} which has no annotation")]
    UnknownFrame(String),
    #[error("frame {0:?} appears more than once in the results")]
    DuplicateFrame(String),
    #[error("annotation for frame {0:?} has an invalid box")]
    InvalidAnnotation(String),
}

/// One-to-one assignment of predictions to ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// `(prediction, ground truth, iou)`
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

impl Matching {
    pub fn true_positives(&self) -> usize {
        self.pairs.len()
    }

    pub fn false_positives(&self) -> usize {
        self.unmatched_preds.len()
    }

    pub fn false_negatives(&self) -> usize {
        self.unmatched_gts.len()
    }

    pub fn gt_match(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == gt).map(|p| p.0)
    }
}

/// Each prediction, highest score first, takes the unclaimed ground truth it
/// overlaps most, provided the IoU reaches `iou_threshold`.
pub fn match_detections(preds: &[BBox], gts: &[BBox], iou_threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| geometry::rank_order((a, &preds[a]), (b, &preds[b])));

    let mut claimed = vec![false; gts.len()];
    let mut m = Matching::default();
    for p in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !claimed[*g])
            .map(|(g, gt)| (g, geometry::iou(&preds[p], gt)))
            .filter(|&(_, v)| v >= iou_threshold)
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        match best {
            Some((g, v)) => {
                claimed[g] = true;
                m.pairs.push((p, g, v));
            }
            None => m.unmatched_preds.push(p),
        }
    }
    m.unmatched_preds.sort_unstable();
    m.unmatched_gts = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    m
}

/// Levenshtein distance over characters.
pub fn char_errors(pred: &str, gt: &str) -> usize {
    let a: Vec<char> = pred.chars().collect();
    let b: Vec<char> = gt.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecognitionStats {
    pub total: usize,
    pub exact_correct: usize,
    pub within_1: usize,
    pub within_2: usize,
    pub accuracy: f64,
    pub accuracy_1: f64,
    pub accuracy_2: f64,
}

impl RecognitionStats {
    /// `errors` is `None` for a plate that produced no reading.
    fn record(&mut self, errors: Option<usize>) {
        self.total += 1;
        if let Some(e) = errors {
            self.exact_correct += usize::from(e == 0);
            self.within_1 += usize::from(e <= 1);
            self.within_2 += usize::from(e <= 2);
        }
    }

    fn finish(&mut self) {
        self.accuracy = ratio(self.exact_correct, self.total);
        self.accuracy_1 = ratio(self.within_1, self.total);
        self.accuracy_2 = ratio(self.within_2, self.total);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByLines {
    pub single: RecognitionStats,
    pub double: RecognitionStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: DetectionStats,
    pub recognition: RecognitionStats,
    pub by_lines: ByLines,
}

pub fn evaluate(
    results: &ResultsDoc,
    annotations: &AnnotationDoc,
) -> Result<EvalReport, EvalError> {
    let mut by_id = HashMap::with_capacity(results.frames.len());
    for frame in &results.frames {
        if !annotations
            .frames
            .iter()
            .any(|a| a.frame_id == frame.frame_id)
        {
            return Err(EvalError::UnknownFrame(frame.frame_id.clone()));
        }
        if by_id.insert(frame.frame_id.as_str(), frame).is_some() {
            return Err(EvalError::DuplicateFrame(frame.frame_id.clone()));
        }
    }

    let mut report = EvalReport::default();
    for ann in &annotations.frames {
        let gts = ann
            .plates
            .iter()
            .map(|p| {
                p.to_bbox()
                    .ok_or_else(|| EvalError::InvalidAnnotation(ann.frame_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        // every surviving plate detection is a prediction; only readings carry text
        let (preds, texts): (Vec<BBox>, Vec<Option<&str>>) = match by_id.get(ann.frame_id.as_str())
        {
            Some(frame) => frame
                .readings
                .iter()
                .map(|r| (r.bbox, Some(r.final_string.as_str())))
                .chain(frame.rejected.iter().map(|c| (c.bbox, None)))
                .chain(frame.errors.iter().map(|e| (e.crop.bbox, None)))
                .unzip(),
            None => (Vec::new(), Vec::new()),
        };

        let m = match_detections(&preds, &gts, MATCH_IOU);
        report.detection.true_positives += m.true_positives();
        report.detection.false_positives += m.false_positives();
        report.detection.false_negatives += m.false_negatives();

        for (g, plate) in ann.plates.iter().enumerate() {
            if !plate.recognizable {
                continue;
            }
            let truth = plate.plate_string.as_deref().unwrap_or_default();
            let errors = m
                .gt_match(g)
                .and_then(|p| texts[p])
                .map(|read| char_errors(read, truth));
            report.recognition.record(errors);
            match plate.category() {
                LineCategory::SingleLine => report.by_lines.single.record(errors),
                LineCategory::DoubleLine => report.by_lines.double.record(errors),
            }
        }
    }

    let d = &mut report.detection;
    d.precision = ratio(d.true_positives, d.true_positives + d.false_positives);
    report.recognition.finish();
    report.by_lines.single.finish();
    report.by_lines.double.finish();
    Ok(report)
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.detection;
        writeln!(
            f,
            "Plate detection: precision {} (TP {}, FP {}, FN {})",
            pct(d.precision),
            d.true_positives,
            d.false_positives,
            d.false_negatives
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<8} {:>7} {:>9} {:>9} {:>9} {:>8} {:>10}",
            "Lines", "Plates", "Accuracy", "<=1 err", "<=2 err", "Correct", "Incorrect"
        )?;
        for (name, r) in [
            ("Single", &self.by_lines.single),
            ("Double", &self.by_lines.double),
            ("Total", &self.recognition),
        ] {
            writeln!(
                f,
                "{name:<8} {:>7} {:>9} {:>9} {:>9} {:>8} {:>10}",
                r.total,
                pct(r.accuracy),
                pct(r.accuracy_1),
                pct(r.accuracy_2),
                r.exact_correct,
                r.total - r.exact_correct
            )?;
        }
        Ok(())
    }
}
