//! Sparse-to-dense EEG channel synthesis.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common concrete instantiations.

pub mod biasing;
pub mod error;
pub mod evaluation;
pub mod montage;
pub mod paths;
pub mod preprocess;
pub mod recording;
pub mod scalar;
pub mod synthesis;

pub use error::{Error, Result};
pub use montage::{initial_division, DivisionRules, Electrode, Hemisphere, Montage, RegionalDivision};
pub use recording::{segment, window_starts, CorpusSpec, Recording, SegmentSet};
pub use scalar::Scalar;

pub type RecordingF32 = Recording<f32>;
pub type RecordingF64 = Recording<f64>;
pub type SegmentSetF32 = SegmentSet<f32>;
pub type SegmentSetF64 = SegmentSet<f64>;
