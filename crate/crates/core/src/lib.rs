//! Post-inference license plate recognition.
//!
//! The crate takes the raw outputs of a two-stage detector (plate boxes per
//! frame, then a character grid or character boxes per plate crop) and turns
//! them into validated Singapore plate strings. It also carries the document
//! formats used to feed fixtures in and results out, the evaluation metrics
//! and a synthetic corpus generator for testing and benchmarking.

pub mod arrangement;
pub mod config;
pub mod dataset_io;
pub mod evaluation;
pub mod format_rules;
pub mod geometry;
pub mod grid_decode;
pub mod pipeline;
pub mod synth;

pub use arrangement::{arrange, categorize, split_lines, ArrangedPlate, LineCategory};
pub use config::{ConfigError, PipelineConfig};
pub use evaluation::{char_errors, evaluate, EvalReport};
pub use format_rules::{correct, partition, validate, CorrectionResult, PlateLayout};
pub use geometry::{batched_nms, iou, nms, BBox, FrameBox, GeometryError};
pub use grid_decode::{class_to_symbol, decode_grid, symbol_to_class, CharDetection, GridTensor};
pub use pipeline::{
    filter_plates, process_batch, process_frame, DetectionSource, Frame, FrameResult, PlateCrop,
    PlateReading,
};
