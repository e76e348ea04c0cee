//! Multiscale PCA: wavelet-decompose every channel, run PCA across channels
//! at each scale, keep the dominant components and hard-threshold their
//! detail-scale scores.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use super::wavelet::{dwt, idwt, Decomposition};
use super::{CleanConfig, PcRule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Robust noise scale: median absolute deviation / 0.6745.
fn mad_sigma(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut v: Vec<f64> = x.to_vec();
    v.sort_by(f64::total_cmp);
    let med = v[v.len() / 2];
    let mut dev: Vec<f64> = v.iter().map(|a| (a - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    dev[dev.len() / 2] / 0.6745
}

/// Number of leading components kept; `eig` is sorted descending.
fn retained(eig: &[f64], rule: PcRule) -> usize {
    let total: f64 = eig.iter().sum();
    match rule {
        PcRule::KeepAll => eig.len(),
        PcRule::Kaiser => {
            let mean = total / eig.len() as f64;
            eig.iter().filter(|&&e| e > mean).count()
        }
        PcRule::VarianceFraction(f) => {
            if total <= 0.0 {
                return 0;
            }
            let mut acc = 0.0;
            for (i, e) in eig.iter().enumerate() {
                acc += e;
                if acc >= f * total {
                    return i + 1;
                }
            }
            eig.len()
        }
    }
}

/// Projects one scale (`channels x len` coefficients) onto its retained
/// principal components. Detail scales also get their scores hard
/// thresholded at `sigma_score * sqrt(2 ln len)`, where the noise of each
/// score follows from the per-channel noise levels `noise`.
fn process_scale(coef: &mut [Vec<f64>], cfg: &CleanConfig, noise: Option<&[f64]>) {
    let c = coef.len();
    let len = coef[0].len();
    if len == 0 {
        return;
    }
    let means: Vec<f64> = coef.iter().map(|r| r.iter().sum::<f64>() / len as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(c, c);
    for i in 0..c {
        for j in 0..=i {
            let s: f64 = coef[i].iter().zip(&coef[j]).map(|(a, b)| (a - means[i]) * (b - means[j])).sum();
            cov[(i, j)] = s / len as f64;
            cov[(j, i)] = s / len as f64;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    // a lone channel has nothing to compare against; keep its component
    let keep = if c == 1 { 1 } else { retained(&sorted, cfg.pc_rule) };
    let lambda_scale = (2.0 * (len as f64).ln()).sqrt();
    let mut out: Vec<Vec<f64>> = means.iter().map(|&m| vec![m; len]).collect();
    for &k in order.iter().take(keep) {
        let v = eig.eigenvectors.column(k);
        let mut score: Vec<f64> = (0..len).map(|t| (0..c).map(|i| v[i] * (coef[i][t] - means[i])).sum()).collect();
        if let Some(sig) = noise {
            let s = (0..c).map(|i| v[i] * v[i] * sig[i] * sig[i]).sum::<f64>().sqrt();
            let lambda = s * lambda_scale;
            for x in score.iter_mut() {
                if x.abs() <= lambda {
                    *x = 0.0;
                }
            }
        }
        for i in 0..c {
            for t in 0..len {
                out[i][t] += v[i] * score[t];
            }
        }
    }
    for (dst, src) in coef.iter_mut().zip(out) {
        *dst = src;
    }
}

/// Denoises a channel group (`channels x samples`). Output shape equals the
/// input shape. `PcRule::KeepAll` keeps every component and coefficient,
/// giving a perfect-reconstruction round trip.
pub fn mspca_denoise<T: Scalar>(x: &Array2<T>, cfg: &CleanConfig) -> Result<Array2<T>> {
    cfg.validate()?;
    if x.nrows() < 2 {
        return Err(Error::InvalidInput(format!(
            "channel-group denoising needs at least 2 channels, got {}",
            x.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("denoising input must be finite".into()));
    }
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.iter().map(|v| v.f64()).collect()).collect();
    let out = denoise_rows(&rows, cfg)?;
    let flat: Vec<T> = out.into_iter().flatten().map(T::of).collect();
    Ok(Array2::from_shape_vec(x.raw_dim(), flat).expect("shape preserved"))
}

/// Single-channel variant: only the wavelet thresholding applies.
pub fn mspca_denoise_vec<T: Scalar>(x: &[T], cfg: &CleanConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("denoising input must be finite".into()));
    }
    let rows = vec![x.iter().map(|v| v.f64()).collect::<Vec<f64>>()];
    Ok(denoise_rows(&rows, cfg)?.remove(0).into_iter().map(T::of).collect())
}

fn denoise_rows(rows: &[Vec<f64>], cfg: &CleanConfig) -> Result<Vec<Vec<f64>>> {
    let mut decs: Vec<Decomposition> =
        rows.iter().map(|r| dwt(r, cfg.wavelet, cfg.levels)).collect::<Result<_>>()?;
    if cfg.pc_rule == PcRule::KeepAll {
        return Ok(decs.iter().map(|d| idwt(d, cfg.wavelet)).collect());
    }
    let noise: Vec<f64> = decs.iter().map(|d| mad_sigma(&d.details[0])).collect();
    let bands = cfg.levels + 1;
    for b in 0..bands {
        let mut coef: Vec<Vec<f64>> =
            decs.iter_mut().map(|d| std::mem::take(d.bands_mut().nth(b).unwrap())).collect();
        let is_detail = b < cfg.levels;
        process_scale(&mut coef, cfg, is_detail.then_some(noise.as_slice()));
        for (d, c) in decs.iter_mut().zip(coef) {
            *d.bands_mut().nth(b).unwrap() = c;
        }
    }
    Ok(decs.iter().map(|d| idwt(d, cfg.wavelet)).collect())
}
