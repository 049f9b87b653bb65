//! Frame → plates → characters → string.
//!
//! Plate detections are suppressed, size-filtered and, for every crop large
//! enough to read, the recognizer output is decoded, arranged into reading
//! order and corrected against the plate layout. Each frame is independent;
//! a batch only shares the fused NMS pass.

use std::borrow::Cow;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arrangement::{self, ArrangedPlate};
use crate::config::{ConfigError, PipelineConfig};
use crate::format_rules::{self, CorrectionResult};
use crate::geometry::{self, BBox, FrameBox, GeometryError};
use crate::grid_decode::{self, CharDetection, GridTensor};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {frame_id:?}: {source}")]
    Source {
        frame_id: String,
        #[source]
        source: SourceError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("no detections recorded for {0:?}")]
    Missing(String),
    #[error("{key:?}: {message}")]
    Payload { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub source_uri: String,
}

impl Frame {
    pub fn new(frame_id: impl Into<String>, width: u32, height: u32) -> Option<Self> {
        (width > 0 && height > 0).then(|| Self {
            frame_id: frame_id.into(),
            width,
            height,
            source_uri: String::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordSpace {
    Crop,
    Frame,
}

/// What a detection source hands back for one key.
#[derive(Debug, Clone)]
pub enum RawDetections<'a> {
    Boxes {
        boxes: Cow<'a, [BBox]>,
        space: CoordSpace,
    },
    Grid(Cow<'a, GridTensor>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceRole {
    PlateDetector,
    CharRecognizer,
}

/// Stand-in for a detector network. Plate detectors are queried by frame id,
/// character recognizers by crop id (see [`crop_id`]).
pub trait DetectionSource: Sync {
    fn role(&self) -> SourceRole;
    fn detect(&self, key: &str) -> Result<RawDetections<'_>, SourceError>;
}

/// Key under which a plate's character detections are looked up: the frame id
/// and the plate's position in the detector output for that frame.
pub fn crop_id(frame_id: &str, index: usize) -> String {
    format!("{frame_id}#{index}")
}

/// A plate detection and its position in the detector's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateDetection {
    pub index: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateCrop {
    pub frame_id: String,
    pub crop_id: String,
    pub bbox: BBox,
    pub w: f64,
    pub h: f64,
    pub recognizable: bool,
}

impl PlateCrop {
    pub fn new(frame_id: &str, det: &PlateDetection, min_plate_px: f64) -> Self {
        let w = det.bbox.width();
        let h = det.bbox.height();
        Self {
            frame_id: frame_id.to_owned(),
            crop_id: crop_id(frame_id, det.index),
            bbox: det.bbox,
            w,
            h,
            recognizable: w >= min_plate_px && h >= min_plate_px,
        }
    }
}

/// Splits plates into `(recognizable, rejected)`; a side shorter than
/// `min_plate_px` rejects the plate, a side of exactly `min_plate_px` does not.
pub fn filter_plates(
    frame_id: &str,
    dets: &[PlateDetection],
    min_plate_px: f64,
) -> (Vec<PlateCrop>, Vec<PlateCrop>) {
    dets.iter()
        .map(|d| PlateCrop::new(frame_id, d, min_plate_px))
        .partition(|c| c.recognizable)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateReading {
    pub crop: PlateCrop,
    pub arranged: ArrangedPlate,
    pub correction: CorrectionResult,
    pub final_string: String,
    pub valid: bool,
}

/// A plate that could not be read; the rest of the frame is unaffected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateFailure {
    pub crop: PlateCrop,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_id: String,
    /// In descending plate score.
    pub readings: Vec<PlateReading>,
    pub rejected: Vec<PlateCrop>,
    pub errors: Vec<PlateFailure>,
    /// Plate detections removed by NMS.
    pub suppressed: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimes {
    pub ingest: Duration,
    pub nms: Duration,
    pub filter: Duration,
    pub decode: Duration,
    pub arrange: Duration,
    pub correct: Duration,
}

impl StageTimes {
    pub const NAMES: [&'static str; 6] =
        ["ingest", "nms", "filter", "decode", "arrange", "correct"];

    pub fn as_array(&self) -> [Duration; 6] {
        [
            self.ingest,
            self.nms,
            self.filter,
            self.decode,
            self.arrange,
            self.correct,
        ]
    }

    pub fn total(&self) -> Duration {
        self.as_array().iter().sum()
    }
}

impl std::ops::AddAssign for StageTimes {
    fn add_assign(&mut self, o: Self) {
        self.ingest += o.ingest;
        self.nms += o.nms;
        self.filter += o.filter;
        self.decode += o.decode;
        self.arrange += o.arrange;
        self.correct += o.correct;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSample {
    pub frames: usize,
    pub stages: StageTimes,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTimings {
    pub batch_size: usize,
    pub frames: usize,
    pub wall: Duration,
    pub stages: StageTimes,
    pub samples: Vec<BatchSample>,
}

impl BatchTimings {
    pub fn fps(&self) -> f64 {
        let secs = self.wall.as_secs_f64();
        if self.frames == 0 || secs == 0.0 {
            0.0
        } else {
            self.frames as f64 / secs
        }
    }

    /// Nearest-rank percentile of per-frame latency across batches, `q` in
    /// `[0, 1]`.
    pub fn per_frame_percentile(&self, q: f64) -> Duration {
        percentile(self.samples.iter().map(|s| (s.frames, s.elapsed)), q)
    }

    /// Like [`per_frame_percentile`](Self::per_frame_percentile) for one
    /// stage, indexed as in [`StageTimes::NAMES`].
    pub fn stage_percentile(&self, stage: usize, q: f64) -> Duration {
        percentile(
            self.samples
                .iter()
                .map(|s| (s.frames, s.stages.as_array()[stage])),
            q,
        )
    }
}

fn percentile(samples: impl Iterator<Item = (usize, Duration)>, q: f64) -> Duration {
    let mut per_frame: Vec<Duration> = samples
        .filter(|&(n, _)| n > 0)
        .map(|(n, d)| d / n as u32)
        .collect();
    if per_frame.is_empty() {
        return Duration::ZERO;
    }
    per_frame.sort();
    let rank = ((q.clamp(0.0, 1.0) * per_frame.len() as f64).ceil() as usize).max(1);
    per_frame[rank - 1]
}

#[derive(Debug, Clone)]
pub struct BatchRun {
    pub results: Vec<FrameResult>,
    pub timings: BatchTimings,
}

struct Clock(Instant);

impl Clock {
    fn start() -> Self {
        Clock(Instant::now())
    }

    /// Adds the time since the last lap to `slot`.
    fn lap(&mut self, slot: &mut Duration) {
        let now = Instant::now();
        *slot += now - self.0;
        self.0 = now;
    }
}

fn read_plate(
    crop: &PlateCrop,
    char_src: &dyn DetectionSource,
    cfg: &PipelineConfig,
    times: &mut StageTimes,
    clock: &mut Clock,
) -> Result<PlateReading, String> {
    let raw = char_src.detect(&crop.crop_id).map_err(|e| e.to_string())?;
    let (chars, crop_width) = match raw {
        RawDetections::Grid(tensor) => (
            grid_decode::decode_grid(&tensor, cfg.char_conf, cfg.char_iou)
                .map_err(|e| e.to_string())?,
            grid_decode::INPUT_WIDTH,
        ),
        RawDetections::Boxes { boxes, space } => {
            let (dx, dy) = match space {
                CoordSpace::Crop => (0.0, 0.0),
                CoordSpace::Frame => (-crop.bbox.x1(), -crop.bbox.y1()),
            };
            let chars = boxes
                .iter()
                .map(|b| {
                    let b = if space == CoordSpace::Frame {
                        b.translated(dx, dy)?
                    } else {
                        *b
                    };
                    CharDetection::from_bbox(b)
                })
                .collect::<Result<Vec<_>, grid_decode::DecodeError>>()
                .map_err(|e| e.to_string())?;
            (chars, crop.w)
        }
    };
    clock.lap(&mut times.decode);

    let arranged = arrangement::arrange(&chars, crop_width).map_err(|e| e.to_string())?;
    clock.lap(&mut times.arrange);

    let correction = if cfg.heuristics_enabled {
        format_rules::correct(&arranged.raw_string)
    } else {
        format_rules::check(&arranged.raw_string)
    };
    clock.lap(&mut times.correct);

    Ok(PlateReading {
        crop: crop.clone(),
        final_string: correction.corrected.clone(),
        valid: correction.valid,
        arranged,
        correction,
    })
}

/// One batch with a single fused NMS pass over all its frames.
fn run_batch(
    frames: &[Frame],
    plate_src: &dyn DetectionSource,
    char_src: &dyn DetectionSource,
    cfg: &PipelineConfig,
) -> Result<(Vec<FrameResult>, StageTimes), PipelineError> {
    let mut times = StageTimes::default();
    let mut clock = Clock::start();

    let mut tagged = Vec::new();
    let mut counts = Vec::with_capacity(frames.len());
    for (fi, frame) in frames.iter().enumerate() {
        let source_err = |source| PipelineError::Source {
            frame_id: frame.frame_id.clone(),
            source,
        };
        let raw = plate_src.detect(&frame.frame_id).map_err(source_err)?;
        let RawDetections::Boxes { boxes, .. } = raw else {
            return Err(source_err(SourceError::Payload {
                key: frame.frame_id.clone(),
                message: "plate detector returned a grid tensor".into(),
            }));
        };
        counts.push(boxes.len());
        tagged.extend(boxes.iter().map(|&bbox| FrameBox { frame: fi, bbox }));
    }
    clock.lap(&mut times.ingest);

    // global index -> (frame, local index), kept in rank order
    let mut starts = Vec::with_capacity(frames.len());
    let mut acc = 0;
    for &n in &counts {
        starts.push(acc);
        acc += n;
    }
    let mut kept: Vec<Vec<PlateDetection>> = vec![Vec::new(); frames.len()];
    for g in geometry::batched_nms_indices(&tagged, cfg.det_iou)? {
        let fb = tagged[g];
        kept[fb.frame].push(PlateDetection {
            index: g - starts[fb.frame],
            bbox: fb.bbox,
        });
    }
    clock.lap(&mut times.nms);

    let split: Vec<_> = frames
        .iter()
        .zip(&kept)
        .map(|(f, dets)| filter_plates(&f.frame_id, dets, cfg.min_plate_px))
        .collect();
    clock.lap(&mut times.filter);

    let mut results = Vec::with_capacity(frames.len());
    for (fi, (frame, (recognizable, rejected))) in frames.iter().zip(split).enumerate() {
        let mut readings = Vec::new();
        let mut errors = Vec::new();
        for crop in recognizable {
            match read_plate(&crop, char_src, cfg, &mut times, &mut clock) {
                Ok(r) => readings.push(r),
                Err(message) => {
                    log::debug!("{}: {message}", crop.crop_id);
                    errors.push(PlateFailure { crop, message });
                }
            }
        }
        results.push(FrameResult {
            frame_id: frame.frame_id.clone(),
            readings,
            rejected,
            errors,
            suppressed: counts[fi] - kept[fi].len(),
        });
    }
    Ok((results, times))
}

/// Runs a single frame through every stage.
pub fn process_frame(
    frame: &Frame,
    plate_src: &dyn DetectionSource,
    char_src: &dyn DetectionSource,
    cfg: &PipelineConfig,
) -> Result<FrameResult, PipelineError> {
    cfg.validate()?;
    let (mut results, _) = run_batch(std::slice::from_ref(frame), plate_src, char_src, cfg)?;
    Ok(results.pop().expect("one frame in, one result out"))
}

/// Processes `frames` in consecutive batches of `batch_size`, on up to
/// `cfg.jobs` threads. Results come back in input order and are identical to
/// calling [`process_frame`] on each frame.
pub fn process_batch(
    frames: &[Frame],
    plate_src: &dyn DetectionSource,
    char_src: &dyn DetectionSource,
    cfg: &PipelineConfig,
    batch_size: usize,
) -> Result<BatchRun, PipelineError> {
    cfg.validate()?;
    if batch_size == 0 {
        return Err(PipelineError::BatchSize);
    }
    let timed = |chunk: &[Frame]| {
        let start = Instant::now();
        let (results, stages) = run_batch(chunk, plate_src, char_src, cfg)?;
        let sample = BatchSample {
            frames: chunk.len(),
            stages,
            elapsed: start.elapsed(),
        };
        Ok::<_, PipelineError>((results, sample))
    };

    let start = Instant::now();
    let outcomes: Vec<_> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        pool.install(|| {
            frames
                .par_chunks(batch_size)
                .map(timed)
                .collect::<Result<_, _>>()
        })?
    } else {
        frames
            .chunks(batch_size)
            .map(timed)
            .collect::<Result<_, _>>()?
    };
    let wall = start.elapsed();

    let mut timings = BatchTimings {
        batch_size,
        frames: frames.len(),
        wall,
        ..Default::default()
    };
    let mut results = Vec::with_capacity(frames.len());
    for (batch, sample) in outcomes {
        results.extend(batch);
        timings.stages += sample.stages;
        timings.samples.push(sample);
    }
    Ok(BatchRun { results, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    use crate::grid_decode::symbol_to_class;

    struct MapSource {
        role: SourceRole,
        boxes: HashMap<String, (Vec<BBox>, CoordSpace)>,
    }

    impl DetectionSource for MapSource {
        fn role(&self) -> SourceRole {
            self.role
        }

        fn detect(&self, key: &str) -> Result<RawDetections<'_>, SourceError> {
            let (boxes, space) = self
                .boxes
                .get(key)
                .ok_or_else(|| SourceError::Missing(key.to_owned()))?;
            Ok(RawDetections::Boxes {
                boxes: Cow::Borrowed(boxes),
                space: *space,
            })
        }
    }

    fn plate(x: f64, y: f64, w: f64, h: f64, score: f64) -> BBox {
        BBox::new(x, y, x + w, y + h, score, 0).unwrap()
    }

    fn spelled(text: &str, xs: &[f64]) -> Vec<BBox> {
        text.chars()
            .zip(xs)
            .map(|(c, &x)| {
                BBox::new(x, 10.0, x + 10.0, 40.0, 0.9, symbol_to_class(c).unwrap()).unwrap()
            })
            .collect()
    }

    fn sources(
        plates: Vec<(&str, Vec<BBox>)>,
        chars: Vec<(String, Vec<BBox>, CoordSpace)>,
    ) -> (MapSource, MapSource) {
        let p = MapSource {
            role: SourceRole::PlateDetector,
            boxes: plates
                .into_iter()
                .map(|(k, v)| (k.to_owned(), (v, CoordSpace::Frame)))
                .collect(),
        };
        let c = MapSource {
            role: SourceRole::CharRecognizer,
            boxes: chars.into_iter().map(|(k, v, s)| (k, (v, s))).collect(),
        };
        (p, c)
    }

    #[test]
    fn filter_examples() {
        let d = |w, h| PlateDetection {
            index: 0,
            bbox: plate(0.0, 0.0, w, h, 0.9),
        };
        let (ok, rej) = filter_plates("f", &[d(49.0, 120.0)], 50.0);
        assert!(ok.is_empty() && rej.len() == 1);
        let (ok, rej) = filter_plates("f", &[d(50.0, 50.0)], 50.0);
        assert!(ok.len() == 1 && rej.is_empty());
        let (ok, rej) = filter_plates("f", &[], 50.0);
        assert!(ok.is_empty() && rej.is_empty());
    }

    #[test]
    fn reads_and_corrects_one_plate() {
        let frame = Frame::new("f0", 1920, 1080).unwrap();
        // shuffled x order still spells 5BA1234E left to right
        let xs = [10.0, 22.0, 34.0, 46.0, 58.0, 70.0, 82.0, 94.0];
        let mut chars = spelled("5BA1234E", &xs);
        chars.reverse();
        let (p, c) = sources(
            vec![("f0", vec![plate(100.0, 100.0, 120.0, 60.0, 0.9)])],
            vec![(crop_id("f0", 0), chars, CoordSpace::Crop)],
        );
        let r = process_frame(&frame, &p, &c, &PipelineConfig::default()).unwrap();
        assert_eq!(r.readings.len(), 1);
        assert_eq!(r.readings[0].arranged.raw_string, "5BA1234E");
        assert_eq!(r.readings[0].final_string, "SBA1234E");
        assert!(r.readings[0].valid);

        let cfg = PipelineConfig {
            heuristics_enabled: false,
            ..Default::default()
        };
        let r = process_frame(&frame, &p, &c, &cfg).unwrap();
        assert_eq!(r.readings[0].final_string, "5BA1234E");
        assert!(r.readings[0].correction.changes.is_empty());
    }

    #[test]
    fn frame_space_chars_are_translated() {
        let frame = Frame::new("f0", 1920, 1080).unwrap();
        let xs = [110.0, 122.0, 134.0];
        let chars: Vec<BBox> = spelled("S1A", &xs)
            .into_iter()
            .map(|b| b.translated(0.0, 100.0).unwrap())
            .collect();
        let (p, c) = sources(
            vec![("f0", vec![plate(100.0, 100.0, 60.0, 60.0, 0.9)])],
            vec![(crop_id("f0", 0), chars, CoordSpace::Frame)],
        );
        let r = process_frame(&frame, &p, &c, &PipelineConfig::default()).unwrap();
        assert_eq!(r.readings[0].final_string, "S1A");
        assert_eq!(r.readings[0].arranged.ordered[0].bbox.x1(), 10.0);
    }

    #[test]
    fn small_plates_are_rejected_and_bad_plates_isolated() {
        let frame = Frame::new("f0", 1920, 1080).unwrap();
        let (p, c) = sources(
            vec![(
                "f0",
                vec![
                    plate(0.0, 0.0, 120.0, 60.0, 0.8),
                    plate(500.0, 0.0, 40.0, 30.0, 0.95),
                    plate(900.0, 0.0, 100.0, 60.0, 0.7),
                ],
            )],
            vec![(
                crop_id("f0", 0),
                spelled("SBA1234E", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
                CoordSpace::Crop,
            )],
        );
        let r = process_frame(&frame, &p, &c, &PipelineConfig::default()).unwrap();
        assert_eq!(r.readings.len(), 1);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].crop_id, "f0#1");
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].crop.crop_id, "f0#2");
        assert_eq!(r.suppressed, 0);
    }

    #[test]
    fn empty_frames_and_missing_plate_fixtures() {
        let frame = Frame::new("f0", 1920, 1080).unwrap();
        let (p, c) = sources(vec![("f0", vec![])], vec![]);
        let r = process_frame(&frame, &p, &c, &PipelineConfig::default()).unwrap();
        assert!(r.readings.is_empty() && r.rejected.is_empty());

        let other = Frame::new("nope", 10, 10).unwrap();
        assert!(matches!(
            process_frame(&other, &p, &c, &PipelineConfig::default()),
            Err(PipelineError::Source { .. })
        ));

        let run = process_batch(&[], &p, &c, &PipelineConfig::default(), 4).unwrap();
        assert!(run.results.is_empty());
        assert_eq!(run.timings.fps(), 0.0);
        assert_eq!(run.timings.stages, StageTimes::default());
        assert!(process_batch(&[], &p, &c, &PipelineConfig::default(), 0).is_err());
    }

    #[test]
    fn duplicates_are_suppressed_and_readings_follow_score() {
        let frame = Frame::new("f0", 1920, 1080).unwrap();
        let xs = [1.0, 2.0, 3.0];
        let (p, c) = sources(
            vec![(
                "f0",
                vec![
                    plate(0.0, 0.0, 100.0, 60.0, 0.6),
                    plate(300.0, 0.0, 100.0, 60.0, 0.9),
                    plate(302.0, 0.0, 100.0, 60.0, 0.5),
                ],
            )],
            vec![
                (crop_id("f0", 0), spelled("S1A", &xs), CoordSpace::Crop),
                (crop_id("f0", 1), spelled("S2B", &xs), CoordSpace::Crop),
            ],
        );
        let r = process_frame(&frame, &p, &c, &PipelineConfig::default()).unwrap();
        let strings: Vec<_> = r.readings.iter().map(|r| r.final_string.as_str()).collect();
        assert_eq!(strings, ["S2B", "S1A"]);
        assert_eq!(r.suppressed, 1);
    }

    #[test]
    fn percentile_uses_nearest_rank() {
        let sample = |ms| BatchSample {
            frames: 1,
            stages: StageTimes::default(),
            elapsed: Duration::from_millis(ms),
        };
        let t = BatchTimings {
            samples: (1..=100).map(sample).collect(),
            ..Default::default()
        };
        assert_eq!(t.per_frame_percentile(0.5), Duration::from_millis(50));
        assert_eq!(t.per_frame_percentile(0.99), Duration::from_millis(99));
        assert_eq!(t.per_frame_percentile(1.0), Duration::from_millis(100));
    }
}
