//! JSON documents exchanged with the outside world.
//!
//! * [`FramesDoc`]: the frames to process.
//! * [`FixtureDoc`]: recorded detector outputs. Plate boxes are keyed by frame
//!   id, character payloads by crop id (`<frame_id>#<plate index>`), either as
//!   boxes or as a raw 36×25×40 recognizer grid.
//! * [`AnnotationDoc`]: ground truth plates.
//! * [`ResultsDoc`]: what the pipeline read.
//!
//! Every document carries a `schema` name and `version`. Unknown top-level and
//! per-frame fields are kept and written back, with a warning on load.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::arrangement::LineCategory;
use crate::config::PipelineConfig;
use crate::format_rules::{Change, Violation};
use crate::geometry::BBox;
use crate::grid_decode::{DecodeError, GridTensor, CHANNELS, GRID_HEIGHT, GRID_WIDTH};
use crate::pipeline::{
    BatchTimings, CoordSpace, DetectionSource, Frame, FrameResult, PlateCrop, PlateFailure,
    RawDetections, SourceError, SourceRole, StageTimes,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const GRID_LAYOUT: &str = "row_major_cells_channel_last";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: parse error at line {line}, column {column} (byte {offset}): {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("{origin}: {}", .problems.join("; "))]
    Schema {
        origin: String,
        problems: Vec<String>,
    },
}

type Extra = BTreeMap<String, Value>;

/// Shared behaviour of the four document types.
pub trait Document: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;

    fn header(&self) -> (&str, u32);

    /// Semantic problems, each prefixed with the field path.
    fn problems(&self) -> Vec<String>;

    /// Unknown fields, as dotted paths.
    fn unknown_fields(&self) -> Vec<String>;
}

fn header_problems(schema: &str, version: u32, expected: &str) -> Vec<String> {
    let mut out = Vec::new();
    if schema != expected {
        out.push(format!("schema: expected {expected:?}, found {schema:?}"));
    }
    if version == 0 || version > SCHEMA_VERSION {
        out.push(format!(
            "version: unsupported version {version} (this build reads {SCHEMA_VERSION})"
        ));
    }
    out
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)).min(text.len())
}

/// Parses and validates a document from text. `origin` names the source in
/// error messages.
pub fn parse_document<D: Document>(text: &str, origin: &str) -> Result<D, DatasetError> {
    let doc: D = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        origin: origin.to_owned(),
        line: e.line(),
        column: e.column(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let (schema, version) = doc.header();
    let mut problems = header_problems(schema, version, D::SCHEMA);
    problems.extend(doc.problems());
    if !problems.is_empty() {
        return Err(DatasetError::Schema {
            origin: origin.to_owned(),
            problems,
        });
    }
    let unknown = doc.unknown_fields();
    if !unknown.is_empty() {
        log::warn!("{origin}: keeping unknown fields {}", unknown.join(", "));
    }
    Ok(doc)
}

pub fn load_document<D: Document>(path: &Path) -> Result<D, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_document(&text, &path.display().to_string())
}

/// Pretty JSON with a trailing newline. Map keys are sorted, so equal
/// documents serialize to equal bytes.
pub fn to_json<D: Serialize>(doc: &D) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize to JSON");
    s.push('\n');
    s
}

pub fn write_document<D: Serialize>(doc: &D, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, to_json(doc)).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

fn extra_keys<'a>(prefix: &str, extra: &'a Extra) -> impl Iterator<Item = String> + 'a {
    let prefix = prefix.to_owned();
    extra.keys().map(move |k| format!("{prefix}{k}"))
}

fn duplicate_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.filter(|id| !seen.insert(*id))
        .map(|id| format!("frames: duplicate frame_id {id:?}"))
        .collect()
}

// ---------------------------------------------------------------------------
// frames

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesDoc {
    pub schema: String,
    pub version: u32,
    pub frames: Vec<Frame>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl FramesDoc {
    pub fn new(frames: Vec<Frame>) -> Self {
        Self {
            schema: Self::SCHEMA.into(),
            version: SCHEMA_VERSION,
            frames,
            extra: Extra::new(),
        }
    }
}

impl Document for FramesDoc {
    const SCHEMA: &'static str = "alpr.frames";

    fn header(&self) -> (&str, u32) {
        (&self.schema, self.version)
    }

    fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.width == 0 || f.height == 0)
            .map(|(i, f)| {
                format!(
                    "frames[{i}] ({:?}): width and height must be positive",
                    f.frame_id
                )
            })
            .collect();
        out.extend(duplicate_ids(
            self.frames.iter().map(|f| f.frame_id.as_str()),
        ));
        out
    }

    fn unknown_fields(&self) -> Vec<String> {
        extra_keys("", &self.extra).collect()
    }
}

// ---------------------------------------------------------------------------
// fixtures

#[derive(Deserialize)]
struct GridPayload {
    width: usize,
    height: usize,
    channels: usize,
    layout: String,
    values: Vec<f32>,
}

impl TryFrom<GridPayload> for GridTensor {
    type Error = String;

    fn try_from(p: GridPayload) -> Result<Self, Self::Error> {
        if p.layout != GRID_LAYOUT {
            return Err(format!(
                "grid layout must be {GRID_LAYOUT:?}, got {:?}",
                p.layout
            ));
        }
        GridTensor::new(p.width, p.height, p.channels, p.values)
            .map_err(|e: DecodeError| e.to_string())
    }
}

#[derive(Serialize)]
struct GridPayloadRef<'a> {
    width: usize,
    height: usize,
    channels: usize,
    layout: &'a str,
    values: &'a [f32],
}

mod grid_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &GridTensor, s: S) -> Result<S::Ok, S::Error> {
        GridPayloadRef {
            width: GRID_WIDTH,
            height: GRID_HEIGHT,
            channels: CHANNELS,
            layout: GRID_LAYOUT,
            values: t.values(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<GridTensor, D::Error> {
        GridTensor::try_from(GridPayload::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Recorded recognizer output for one crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CharFixture {
    Boxes {
        space: CoordSpace,
        detections: Vec<BBox>,
    },
    Grid {
        #[serde(with = "grid_serde")]
        tensor: GridTensor,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureDoc {
    pub schema: String,
    pub version: u32,
    /// Plate detections in frame coordinates, by frame id.
    #[serde(default)]
    pub plates: BTreeMap<String, Vec<BBox>>,
    /// Character payloads by crop id.
    #[serde(default)]
    pub chars: BTreeMap<String, CharFixture>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Default for FixtureDoc {
    fn default() -> Self {
        Self {
            schema: Self::SCHEMA.into(),
            version: SCHEMA_VERSION,
            plates: BTreeMap::new(),
            chars: BTreeMap::new(),
            extra: Extra::new(),
        }
    }
}

impl Document for FixtureDoc {
    const SCHEMA: &'static str = "alpr.fixture";

    fn header(&self) -> (&str, u32) {
        (&self.schema, self.version)
    }

    fn problems(&self) -> Vec<String> {
        self.chars
            .keys()
            .filter(|k| !k.contains('#'))
            .map(|k| format!("chars.{k}: crop ids look like <frame_id>#<plate index>"))
            .collect()
    }

    fn unknown_fields(&self) -> Vec<String> {
        extra_keys("", &self.extra).collect()
    }
}

impl FixtureDoc {
    pub fn plate_source(&self) -> FixtureSource<'_> {
        FixtureSource {
            doc: self,
            role: SourceRole::PlateDetector,
        }
    }

    pub fn char_source(&self) -> FixtureSource<'_> {
        FixtureSource {
            doc: self,
            role: SourceRole::CharRecognizer,
        }
    }
}

/// A [`DetectionSource`] replaying a [`FixtureDoc`].
#[derive(Debug, Clone, Copy)]
pub struct FixtureSource<'a> {
    doc: &'a FixtureDoc,
    role: SourceRole,
}

impl DetectionSource for FixtureSource<'_> {
    fn role(&self) -> SourceRole {
        self.role
    }

    fn detect(&self, key: &str) -> Result<RawDetections<'_>, SourceError> {
        let missing = || SourceError::Missing(key.to_owned());
        match self.role {
            SourceRole::PlateDetector => {
                let boxes = self.doc.plates.get(key).ok_or_else(missing)?;
                Ok(RawDetections::Boxes {
                    boxes: Cow::Borrowed(boxes),
                    space: CoordSpace::Frame,
                })
            }
            SourceRole::CharRecognizer => match self.doc.chars.get(key).ok_or_else(missing)? {
                CharFixture::Boxes { space, detections } => Ok(RawDetections::Boxes {
                    boxes: Cow::Borrowed(detections),
                    space: *space,
                }),
                CharFixture::Grid { tensor } => Ok(RawDetections::Grid(Cow::Borrowed(tensor))),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// annotations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateAnnotation {
    /// `[x1, y1, x2, y2]` in frame pixels.
    pub bbox: [f64; 4],
    pub lines: u8,
    pub recognizable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plate_string: Option<String>,
}

impl PlateAnnotation {
    pub fn to_bbox(&self) -> Option<BBox> {
        let [x1, y1, x2, y2] = self.bbox;
        BBox::new(x1, y1, x2, y2, 1.0, 0).ok()
    }

    pub fn category(&self) -> LineCategory {
        if self.lines == 2 {
            LineCategory::DoubleLine
        } else {
            LineCategory::SingleLine
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    /// Opaque split tag, e.g. `"train"` or `"test"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default)]
    pub plates: Vec<PlateAnnotation>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub schema: String,
    pub version: u32,
    pub frames: Vec<FrameAnnotation>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl AnnotationDoc {
    pub fn new(frames: Vec<FrameAnnotation>) -> Self {
        Self {
            schema: Self::SCHEMA.into(),
            version: SCHEMA_VERSION,
            frames,
            extra: Extra::new(),
        }
    }
}

impl Document for AnnotationDoc {
    const SCHEMA: &'static str = "alpr.annotations";

    fn header(&self) -> (&str, u32) {
        (&self.schema, self.version)
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (fi, frame) in self.frames.iter().enumerate() {
            for (pi, plate) in frame.plates.iter().enumerate() {
                let at = format!("frames[{fi}].plates[{pi}] (frame {:?})", frame.frame_id);
                if plate.to_bbox().is_none() {
                    out.push(format!("{at}.bbox: invalid box {:?}", plate.bbox));
                }
                if plate.lines != 1 && plate.lines != 2 {
                    out.push(format!("{at}.lines: must be 1 or 2, got {}", plate.lines));
                }
                if plate.recognizable && plate.plate_string.is_none() {
                    out.push(format!(
                        "{at}.plate_string: required for a recognizable plate"
                    ));
                }
            }
        }
        out.extend(duplicate_ids(
            self.frames.iter().map(|f| f.frame_id.as_str()),
        ));
        out
    }

    fn unknown_fields(&self) -> Vec<String> {
        let mut out: Vec<String> = extra_keys("", &self.extra).collect();
        for (i, f) in self.frames.iter().enumerate() {
            out.extend(extra_keys(&format!("frames[{i}]."), &f.extra));
        }
        out
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationDoc, DatasetError> {
    load_document(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineCounts {
    pub recognizable: usize,
    pub unrecognizable: usize,
}

impl LineCounts {
    pub fn total(&self) -> usize {
        self.recognizable + self.unrecognizable
    }
}

/// Plate counts by line count and readability, and frame counts by split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub single: LineCounts,
    pub double: LineCounts,
    pub frames: usize,
    pub frames_by_split: BTreeMap<String, usize>,
}

impl DatasetSummary {
    pub fn totals(&self) -> LineCounts {
        LineCounts {
            recognizable: self.single.recognizable + self.double.recognizable,
            unrecognizable: self.single.unrecognizable + self.double.unrecognizable,
        }
    }

    pub fn plates(&self) -> usize {
        self.single.total() + self.double.total()
    }
}

pub const UNTAGGED_SPLIT: &str = "untagged";

pub fn summarize(doc: &AnnotationDoc) -> DatasetSummary {
    let mut s = DatasetSummary {
        frames: doc.frames.len(),
        ..Default::default()
    };
    for frame in &doc.frames {
        let split = frame.split.as_deref().unwrap_or(UNTAGGED_SPLIT);
        *s.frames_by_split.entry(split.to_owned()).or_default() += 1;
        for plate in &frame.plates {
            let row = match plate.category() {
                LineCategory::SingleLine => &mut s.single,
                LineCategory::DoubleLine => &mut s.double,
            };
            if plate.recognizable {
                row.recognizable += 1;
            } else {
                row.unrecognizable += 1;
            }
        }
    }
    s
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "Split", "Frames")?;
        for (split, n) in &self.frames_by_split {
            writeln!(f, "{split:<10} {n:>8}")?;
        }
        writeln!(f, "{:<10} {:>8}", "Total", self.frames)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<8} {:>13} {:>15} {:>8}",
            "Lines", "Recognizable", "Unrecognizable", "Total"
        )?;
        let t = self.totals();
        for (name, row) in [
            ("Single", self.single),
            ("Double", self.double),
            ("Total", t),
        ] {
            writeln!(
                f,
                "{name:<8} {:>13} {:>15} {:>8}",
                row.recognizable,
                row.unrecognizable,
                row.total()
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// results

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub crop_id: String,
    pub bbox: BBox,
    pub category: LineCategory,
    pub raw_string: String,
    pub final_string: String,
    pub valid: bool,
    #[serde(default)]
    pub changes: Vec<Change>,
    #[serde(default)]
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    #[serde(default)]
    pub readings: Vec<ReadingRecord>,
    #[serde(default)]
    pub rejected: Vec<PlateCrop>,
    #[serde(default)]
    pub errors: Vec<PlateFailure>,
    #[serde(default)]
    pub suppressed: usize,
    #[serde(flatten)]
    pub extra: Extra,
}

impl From<&FrameResult> for FrameRecord {
    fn from(r: &FrameResult) -> Self {
        Self {
            frame_id: r.frame_id.clone(),
            readings: r
                .readings
                .iter()
                .map(|p| ReadingRecord {
                    crop_id: p.crop.crop_id.clone(),
                    bbox: p.crop.bbox,
                    category: p.arranged.category,
                    raw_string: p.arranged.raw_string.clone(),
                    final_string: p.final_string.clone(),
                    valid: p.valid,
                    changes: p.correction.changes.clone(),
                    violations: p.correction.violations.clone(),
                })
                .collect(),
            rejected: r.rejected.clone(),
            errors: r.errors.clone(),
            suppressed: r.suppressed,
            extra: Extra::new(),
        }
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn stage_map(f: impl Fn(usize) -> f64) -> BTreeMap<String, f64> {
    StageTimes::NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), f(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub batch_size: usize,
    pub frames: usize,
    pub wall_ms: f64,
    pub fps: f64,
    pub frame_ms_median: f64,
    pub frame_ms_p99: f64,
    /// Total time per stage.
    pub stage_ms: BTreeMap<String, f64>,
    /// Per-frame stage latency across batches.
    pub stage_ms_median: BTreeMap<String, f64>,
    pub stage_ms_p99: BTreeMap<String, f64>,
}

impl From<&BatchTimings> for TimingSummary {
    fn from(t: &BatchTimings) -> Self {
        Self {
            batch_size: t.batch_size,
            frames: t.frames,
            wall_ms: ms(t.wall),
            fps: t.fps(),
            frame_ms_median: ms(t.per_frame_percentile(0.5)),
            frame_ms_p99: ms(t.per_frame_percentile(0.99)),
            stage_ms: StageTimes::NAMES
                .iter()
                .zip(t.stages.as_array())
                .map(|(n, d)| (n.to_string(), ms(d)))
                .collect(),
            stage_ms_median: stage_map(|i| ms(t.stage_percentile(i, 0.5))),
            stage_ms_p99: stage_map(|i| ms(t.stage_percentile(i, 0.99))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub schema: String,
    pub version: u32,
    /// Effective configuration of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PipelineConfig>,
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSummary>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ResultsDoc {
    pub fn new(config: Option<PipelineConfig>, frames: Vec<FrameRecord>) -> Self {
        Self {
            schema: Self::SCHEMA.into(),
            version: SCHEMA_VERSION,
            config,
            frames,
            timing: None,
            extra: Extra::new(),
        }
    }

    pub fn from_results(results: &[FrameResult], config: &PipelineConfig) -> Self {
        Self::new(
            Some(config.clone()),
            results.iter().map(FrameRecord::from).collect(),
        )
    }
}

impl Document for ResultsDoc {
    const SCHEMA: &'static str = "alpr.results";

    fn header(&self) -> (&str, u32) {
        (&self.schema, self.version)
    }

    fn problems(&self) -> Vec<String> {
        duplicate_ids(self.frames.iter().map(|f| f.frame_id.as_str()))
    }

    fn unknown_fields(&self) -> Vec<String> {
        let mut out: Vec<String> = extra_keys("", &self.extra).collect();
        for (i, f) in self.frames.iter().enumerate() {
            out.extend(extra_keys(&format!("frames[{i}]."), &f.extra));
        }
        out
    }
}

pub fn write_results(doc: &ResultsDoc, path: &Path) -> Result<(), DatasetError> {
    write_document(doc, path)
}

pub fn load_results(path: &Path) -> Result<ResultsDoc, DatasetError> {
    load_document(path)
}
