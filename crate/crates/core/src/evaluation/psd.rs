//! Welch power spectral density.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const WELCH_SEGMENT: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    /// One-sided density (units^2 / Hz).
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Integral of the density over `[lo, hi)`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let df = self.df();
        self.freqs.iter().zip(&self.power).filter(|(f, _)| **f >= lo && **f < hi).map(|(_, p)| p * df).sum()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.df()
    }
}

fn hann(n: usize) -> Vec<f64> {
    // periodic form, the usual choice for spectral analysis
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Welch estimate with 256-sample Hann segments (shorter inputs use one
/// segment of their own length), 50% overlap and per-segment mean removal.
/// Integrating the density recovers the signal variance.
pub fn psd<T: Scalar>(x: &[T], rate: f64) -> Result<Spectrum> {
    if x.len() < 64 {
        return Err(Error::InvalidInput(format!("spectrum needs at least 64 samples, got {}", x.len())));
    }
    if !(rate > 0.0) {
        return Err(Error::InvalidInput(format!("rate must be positive, got {rate}")));
    }
    let n = WELCH_SEGMENT.min(x.len());
    let step = n / 2;
    let w = hann(n);
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= x.len() {
        let seg = &x[start..start + n];
        let mean = seg.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
        for (b, (v, wi)) in buf.iter_mut().zip(seg.iter().zip(&w)) {
            *b = Complex::new((v.f64() - mean) * wi, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (rate * wss * count as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * rate / n as f64).collect();
    Ok(Spectrum { freqs, power })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn parseval_on_white_noise() {
        let x = white(1, 50_000);
        let s = psd(&x, 250.0).unwrap();
        let var = crate::scalar::variance_f64(&x);
        assert!((s.total_power() - var).abs() < 0.01 * var, "{} vs {var}", s.total_power());
        assert!(s.power.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn sinusoid_concentrates_at_peak() {
        let x: Vec<f64> = (0..7500).map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 250.0).sin()).collect();
        let s = psd(&x, 250.0).unwrap();
        let k = (0..s.power.len()).max_by(|&a, &b| s.power[a].total_cmp(&s.power[b])).unwrap();
        assert!((s.freqs[k] - 10.0).abs() < s.df());
        let peak: f64 = s.power[k - 1..=k + 1].iter().sum();
        let total: f64 = s.power.iter().sum();
        assert!(peak / total >= 0.9, "{}", peak / total);
    }

    #[test]
    fn zero_signal_zero_power() {
        assert!(psd(&[0.0; 300], 100.0).unwrap().power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn white_noise_is_flat() {
        let s = psd(&white(2, 100_000), 250.0).unwrap();
        let inner = &s.power[1..s.power.len() - 1];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        for p in inner {
            assert!((10.0 * (p / mean).log10()).abs() <= 3.0);
        }
    }

    #[test]
    fn short_input_rejected() {
        assert!(matches!(psd(&[1.0; 63], 250.0), Err(Error::InvalidInput(_))));
        assert_eq!(psd(&[1.0f32; 64], 250.0).unwrap().freqs.len(), 33);
    }
}
