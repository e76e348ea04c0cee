//! Periodized orthogonal discrete wavelet transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    Db4,
}

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

// Daubechies with four vanishing moments (eight taps).
const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

impl Wavelet {
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &HAAR,
            Wavelet::Db4 => &DB4,
        }
    }

    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n).map(|i| if i % 2 == 0 { h[n - 1 - i] } else { -h[n - 1 - i] }).collect()
    }
}

/// Coefficients of a `levels`-deep decomposition: `details[0]` is the finest
/// scale, `approx` the coarsest smooth part.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub details: Vec<Vec<f64>>,
    pub approx: Vec<f64>,
    /// Length of the signal before padding.
    pub len: usize,
}

impl Decomposition {
    /// All bands, finest detail first and the approximation last.
    pub fn bands(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.details.iter().chain(std::iter::once(&self.approx))
    }

    pub fn bands_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.details.iter_mut().chain(std::iter::once(&mut self.approx))
    }
}

/// Largest usable depth for `len` samples.
pub fn max_levels(len: usize) -> usize {
    if len < 2 {
        0
    } else {
        (usize::BITS - 1 - len.leading_zeros()) as usize
    }
}

fn analysis_step(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        let (mut sa, mut sd) = (0.0, 0.0);
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            let v = x[(2 * k + i) % n];
            sa += l * v;
            sd += h * v;
        }
        a[k] = sa;
        d[k] = sd;
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for k in 0..a.len() {
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            x[(2 * k + i) % n] += l * a[k] + h * d[k];
        }
    }
    x
}

/// Decomposes `x` after mirror-padding it to a multiple of `2^levels`.
pub fn dwt(x: &[f64], wavelet: Wavelet, levels: usize) -> Result<Decomposition> {
    if levels == 0 || levels > max_levels(x.len()) {
        return Err(Error::Config(format!(
            "wavelet depth {levels} invalid for {} samples (max {})",
            x.len(),
            max_levels(x.len())
        )));
    }
    let block = 1usize << levels;
    let padded_len = x.len().div_ceil(block) * block;
    let mut cur: Vec<f64> = x.to_vec();
    let n = x.len();
    for i in n..padded_len {
        // reflect about the last sample
        let off = i - n + 1;
        cur.push(x[n.saturating_sub(1 + off % n.max(1))]);
    }
    let lo = wavelet.lowpass();
    let hi = wavelet.highpass();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = analysis_step(&cur, lo, &hi);
        details.push(d);
        cur = a;
    }
    Ok(Decomposition { details, approx: cur, len: x.len() })
}

/// Inverse of [`dwt`], cropped back to the original length.
pub fn idwt(dec: &Decomposition, wavelet: Wavelet) -> Vec<f64> {
    let lo = wavelet.lowpass();
    let hi = wavelet.highpass();
    let mut cur = dec.approx.clone();
    for d in dec.details.iter().rev() {
        cur = synthesis_step(&cur, d, lo, &hi);
    }
    cur.truncate(dec.len);
    cur
}
