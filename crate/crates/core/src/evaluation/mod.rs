//! Spectra, differential-entropy features and lightweight classifiers.

mod classify;
mod de;
mod psd;

pub use classify::{classify, metrics, ClassifierKind, ClassifyReport, Metrics, Split};
pub use de::{de_features, default_bands, gaussian_entropy, Band, MIN_BAND_VARIANCE};
pub use psd::{psd, Spectrum, WELCH_SEGMENT};
