//! Differential-entropy band features.

use serde::{Deserialize, Serialize};

use super::psd::psd;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.to_string(), lo, hi }
    }
}

/// Delta, theta, alpha, beta and gamma.
pub fn default_bands() -> Vec<Band> {
    vec![
        Band::new("delta", 1.0, 4.0),
        Band::new("theta", 4.0, 8.0),
        Band::new("alpha", 8.0, 14.0),
        Band::new("beta", 14.0, 31.0),
        Band::new("gamma", 31.0, 49.0),
    ]
}

/// Variances below this are treated as this, keeping features finite.
pub const MIN_BAND_VARIANCE: f64 = 1e-12;

/// `0.5 * ln(2 pi e var)`: entropy of a Gaussian with variance `var`.
pub fn gaussian_entropy(var: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var.max(MIN_BAND_VARIANCE)).ln()
}

/// Per-band DE, with each band's variance taken from the integrated Welch
/// density over `[lo, hi)`.
pub fn de_features<T: Scalar>(x: &[T], rate: f64, bands: &[Band]) -> Result<Vec<f64>> {
    let s = psd(x, rate)?;
    let nyquist = rate / 2.0;
    bands
        .iter()
        .map(|b| {
            if !(b.lo >= 0.0 && b.hi > b.lo && b.hi <= nyquist) {
                return Err(Error::InvalidBand(format!("{} [{}, {}) outside [0, {nyquist}]", b.name, b.lo, b.hi)));
            }
            if !s.freqs.iter().any(|f| *f >= b.lo && *f < b.hi) {
                return Err(Error::InvalidBand(format!("{} [{}, {}) contains no frequency bin", b.name, b.lo, b.hi)));
            }
            Ok(gaussian_entropy(s.band_power(b.lo, b.hi)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn entropy_zero_point() {
        let v = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        assert!(gaussian_entropy(v).abs() < 1e-12);
        assert!(gaussian_entropy(2.0) > gaussian_entropy(1.0));
    }

    #[test]
    fn doubling_adds_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let bands = default_bands();
        let a = de_features(&x, 250.0, &bands).unwrap();
        let b = de_features(&y, 250.0, &bands).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((q - p - std::f64::consts::LN_2).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_noise_peaks_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..5000)
            .map(|i| {
                let t = i as f64 / 250.0;
                let e: f64 = StandardNormal.sample(&mut rng);
                3.0 * (2.0 * std::f64::consts::PI * 10.0 * t).sin() + 2.0 * (2.0 * std::f64::consts::PI * 11.5 * t + 1.0).sin() + 0.2 * e
            })
            .collect();
        let f = de_features(&x, 250.0, &default_bands()).unwrap();
        for (i, v) in f.iter().enumerate() {
            if i != 2 {
                assert!(f[2] > *v);
            }
        }
    }

    #[test]
    fn bad_bands() {
        let x = vec![0.5; 256];
        assert!(matches!(de_features(&x, 250.0, &[Band::new("hi", 100.0, 130.0)]), Err(Error::InvalidBand(_))));
        assert!(matches!(de_features(&x, 250.0, &[Band::new("thin", 10.1, 10.2)]), Err(Error::InvalidBand(_))));
        assert!(matches!(de_features(&x, 250.0, &[Band::new("rev", 8.0, 4.0)]), Err(Error::InvalidBand(_))));
    }
}
