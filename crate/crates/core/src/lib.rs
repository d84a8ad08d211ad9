//! Post-backbone event detection for long multi-label videos: ensemble
//! fusion and calibration, anatomy-aware temporal decoding, threshold and
//! parameter tuning, temporal mAP evaluation, a small head trainer and a
//! seeded synthetic corpus generator.

pub mod decode;
pub mod dhe;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod streams;
pub mod synth;
pub mod taxonomy;
pub mod tuning;

pub use error::{Error, Result};
pub use streams::{EventRecord, GroundTruth, ProbStream, Source, StreamSet};
pub use taxonomy::{ClassId, ClassKind, LabelSpace};
