//! Bias-signal cleaning: NaN/INF repair, per-segment outlier removal with
//! linear interpolation, then multiscale PCA across a division's channels.

mod mspca;
mod outliers;
pub mod wavelet;

pub use mspca::{mspca_denoise, mspca_denoise_vec};
pub use outliers::{clip_outliers, interpolate_gaps, remove_outliers, repair_nonfinite};
pub use wavelet::Wavelet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::biasing::BiasSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which principal components survive at each wavelet scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcRule {
    KeepAll,
    /// Eigenvalue above the mean eigenvalue.
    Kaiser,
    /// Smallest leading set explaining this fraction of the variance.
    VarianceFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanConfig {
    /// Deviation multiple for outlier removal: 1 or 2.
    pub k_sigma: f64,
    pub wavelet: Wavelet,
    pub levels: usize,
    pub pc_rule: PcRule,
    /// Samples per statistics segment for outlier removal.
    pub segment: usize,
    /// Removal rounds per segment; each round recomputes mean and std on the
    /// surviving samples.
    pub clip_rounds: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self { k_sigma: 2.0, wavelet: Wavelet::Db4, levels: 4, pc_rule: PcRule::Kaiser, segment: 256, clip_rounds: 3 }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_sigma != 1.0 && self.k_sigma != 2.0 {
            return Err(Error::Config(format!("k_sigma must be 1 or 2, got {}", self.k_sigma)));
        }
        if self.levels == 0 {
            return Err(Error::Config("wavelet levels must be at least 1".into()));
        }
        if self.segment < 2 || self.clip_rounds == 0 {
            return Err(Error::Config("segment must be >= 2 and clip_rounds >= 1".into()));
        }
        if let PcRule::VarianceFraction(f) = self.pc_rule {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("variance fraction {f} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Segment boundaries of `len` samples; a short tail joins the previous segment.
fn segment_bounds(len: usize, seg: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let mut end = (start + seg).min(len);
        if len - end < seg / 2 {
            end = len;
        }
        out.push((start, end));
        start = end;
    }
    out
}

/// Repair, outlier removal and interpolation for one signal. Returns the
/// cleaned signal and the number of finite samples removed as outliers.
pub fn clean_signal<T: Scalar>(x: &[T], cfg: &CleanConfig) -> Result<(Vec<f64>, usize)> {
    cfg.validate()?;
    let repaired: Vec<f64> = repair_nonfinite(x).iter().map(|v| v.f64()).collect();
    let mut holes = Vec::with_capacity(repaired.len());
    let mut removed = 0;
    for (a, b) in segment_bounds(repaired.len(), cfg.segment) {
        let (h, r) = clip_outliers(&repaired[a..b], cfg.k_sigma, cfg.clip_rounds)?;
        holes.extend(h);
        removed += r;
    }
    Ok((interpolate_gaps(&holes)?, removed))
}

/// Full cleaning pass over a channel group: per-signal cleaning, then
/// multiscale PCA across the group (wavelet thresholding only for a single
/// signal).
pub fn clean_group(rows: &[Vec<f64>], cfg: &CleanConfig) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut cleaned = Vec::with_capacity(rows.len());
    let mut removed = 0;
    for r in rows {
        let (c, n) = clean_signal(r, cfg)?;
        cleaned.push(c);
        removed += n;
    }
    let out = match cleaned.len() {
        0 => cleaned,
        1 => vec![mspca_denoise_vec(&cleaned[0], cfg)?],
        n => {
            let t = cleaned[0].len();
            let m = Array2::from_shape_vec((n, t), cleaned.into_iter().flatten().collect())
                .map_err(|e| Error::Shape(e.to_string()))?;
            mspca_denoise(&m, cfg)?.rows().into_iter().map(|r| r.to_vec()).collect()
        }
    };
    Ok((out, removed))
}

/// Cleans every bias of a division as one group.
pub fn clean_bias_set(b: &BiasSet, cfg: &CleanConfig) -> Result<(BiasSet, usize)> {
    let rows: Vec<Vec<f64>> = b.entries().iter().map(|(_, v)| v.clone()).collect();
    let (out, removed) = clean_group(&rows, cfg)?;
    let entries = b.entries().iter().map(|(n, _)| n.clone()).zip(out).collect();
    Ok((BiasSet::new(b.division_id, b.reference_name.clone(), b.rate, entries)?, removed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(CleanConfig::default().validate().is_ok());
        assert!(CleanConfig { k_sigma: 1.5, ..Default::default() }.validate().is_err());
        assert!(CleanConfig { levels: 0, ..Default::default() }.validate().is_err());
        assert!(CleanConfig { pc_rule: PcRule::VarianceFraction(1.5), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn segments_cover_everything() {
        assert_eq!(segment_bounds(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(segment_bounds(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(segment_bounds(12, 4), vec![(0, 4), (4, 8), (8, 12)]);
        assert_eq!(segment_bounds(3, 256), vec![(0, 3)]);
    }

    #[test]
    fn cleaned_output_is_finite() {
        let mut x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.2).sin()).collect();
        x[5] = f64::NAN;
        x[50] = f64::INFINITY;
        x[120] = 1e6;
        let (y, removed) = clean_signal(&x, &CleanConfig::default()).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(removed >= 1);
        assert!(y[120].abs() < 2.0);
    }

    #[test]
    fn pc_rule_toml_forms() {
        #[derive(Deserialize)]
        struct W {
            r: PcRule,
        }
        let a: W = serde_json::from_str(r#"{"r":"kaiser"}"#).unwrap();
        let b: W = serde_json::from_str(r#"{"r":{"variance_fraction":0.9}}"#).unwrap();
        assert_eq!(a.r, PcRule::Kaiser);
        assert_eq!(b.r, PcRule::VarianceFraction(0.9));
    }
}
