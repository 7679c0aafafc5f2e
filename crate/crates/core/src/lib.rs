//! Builders for structure-aware parse targets and multi-grained text
//! localization samples over OCR-annotated text-rich images, together with a
//! shape-adaptive crop planner, a reference H-Reducer, and the grounding and
//! recognition evaluation metrics.

pub mod chart;
pub mod crop;
pub mod error;
pub mod geometry;
pub mod hreducer;
pub mod layout;
pub mod localization;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seeding;
pub mod synthetic;
pub mod table;

pub use error::{Error, Result};
pub use geometry::{bbox_to_token_string, dequantize, parse_token_string, quantize, BBox};
pub use model::{Granularity, OcrPage, Task, TrainingSample, Word};
