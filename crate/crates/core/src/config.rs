use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{name} must be in (0, 1], got {value}")]
    Ratio { name: &'static str, value: f64 },
    #[error("min_plate_px must be >= 1, got {0}")]
    MinPlate(f64),
    #[error("batch_sizes must be non-empty, >= 1 and strictly increasing, got {0:?}")]
    BatchSizes(Vec<usize>),
    #[error("jobs must be >= 1")]
    Jobs,
}

/// Thresholds and run settings shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// IoU for plate-detection NMS.
    pub det_iou: f64,
    /// Minimum character confidence when decoding recognizer grids.
    pub char_conf: f64,
    /// IoU for character NMS.
    pub char_iou: f64,
    /// Plates narrower or shorter than this are not read.
    pub min_plate_px: f64,
    pub batch_sizes: Vec<usize>,
    pub heuristics_enabled: bool,
    /// Worker threads for frame-parallel processing.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            det_iou: 0.5,
            char_conf: 0.25,
            char_iou: 0.5,
            min_plate_px: 50.0,
            batch_sizes: vec![1, 2, 4, 8, 16, 32],
            heuristics_enabled: true,
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("det_iou", self.det_iou),
            ("char_conf", self.char_conf),
            ("char_iou", self.char_iou),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ConfigError::Ratio { name, value });
            }
        }
        if self.min_plate_px.is_nan() || self.min_plate_px < 1.0 {
            return Err(ConfigError::MinPlate(self.min_plate_px));
        }
        let sizes = &self.batch_sizes;
        if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::BatchSizes(sizes.clone()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Jobs);
        }
        Ok(())
    }
}
